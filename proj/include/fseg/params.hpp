#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fseg/tensor.hpp"

namespace fseg {

// Flat registry of named trainable tensors. Names are dotted paths
// ("fam.q_linear.weight"), unique per model, stable across save/load.
template <typename T>
struct ParamMap {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, const Tensor<T>& t) {
        for (const auto& [n, _] : items)
            if (n == name) op_error("ParamMap", "duplicate parameter name " + name);
        items.push_back({name, t});
    }

    Tensor<T>* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    size_t count_values() const {
        size_t n = 0;
        for (const auto& [_, t] : items) n += t.size();
        return n;
    }

    // Trainable values only (running statistics excluded).
    size_t count_trainable() const {
        size_t n = 0;
        for (const auto& [_, t] : items)
            if (t.requires_grad()) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : items) t.zero_grad();
    }
};

}  // namespace fseg
