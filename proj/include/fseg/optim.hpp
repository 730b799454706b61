#pragma once

// Bias-corrected Adam over a parameter map. Non-trainable entries (running
// statistics) are skipped.

#include <cmath>
#include <vector>

#include "fseg/params.hpp"

namespace fseg {

template <typename T>
struct Adam {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    size_t step_count = 0;
    std::vector<std::vector<T>> m, v;  // first/second moments, indexed like the ParamMap

    void init(const ParamMap<T>& pm) {
        m.clear();
        v.clear();
        for (const auto& [_, t] : pm.items) {
            m.emplace_back(t.size(), T(0));
            v.emplace_back(t.size(), T(0));
        }
        step_count = 0;
    }

    void step(ParamMap<T>& pm, T lr) {
        if (m.size() != pm.items.size()) op_error("adam", "state not initialized for this model");
        ++step_count;
        const T bc1 = T(1) - std::pow(beta1, (T)step_count);
        const T bc2 = T(1) - std::pow(beta2, (T)step_count);
        for (size_t i = 0; i < pm.items.size(); ++i) {
            auto& [name, t] = pm.items[i];
            if (!t.requires_grad()) continue;
            if (!t.has_grad()) op_error("adam", "missing gradient for parameter " + name);
            const auto& g = t.grad();
            auto& data = t.raw_data();
            for (size_t j = 0; j < data.size(); ++j) {
                m[i][j] = beta1 * m[i][j] + (T(1) - beta1) * g[j];
                v[i][j] = beta2 * v[i][j] + (T(1) - beta2) * g[j] * g[j];
                const T mhat = m[i][j] / bc1;
                const T vhat = v[i][j] / bc2;
                data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

}  // namespace fseg
