#pragma once

// Checkpoint container: magic "FSEG", little-endian, parameters stored as
// 32-bit IEEE-754. See docs/formats.md for the byte-exact layout.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fseg/params.hpp"

namespace fseg {

struct CheckpointError : std::runtime_error {
    enum class Kind { BadMagic, BadVersion, Truncated, UnknownParam, MissingParam, ShapeMismatch, Io };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

namespace detail {

constexpr uint32_t kCheckpointVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

template <typename V>
inline void write_le(std::ostream& os, V v) {
    // Host is little-endian on every supported target; memcpy keeps it UB-free.
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    os.write(buf, sizeof(V));
}

template <typename V>
inline V read_le(std::istream& is) {
    char buf[sizeof(V)];
    is.read(buf, sizeof(V));
    if (!is)
        throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint: truncated file");
    V v;
    std::memcpy(&v, buf, sizeof(V));
    return v;
}

}  // namespace detail

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::string config_echo;
    std::vector<CheckpointTensor> tensors;
};

template <typename T>
inline Checkpoint checkpoint_from_params(const ParamMap<T>& pm, const std::string& config_echo) {
    Checkpoint ck;
    ck.config_echo = config_echo;
    for (const auto& [name, t] : pm.items) {
        CheckpointTensor ct;
        ct.name = name;
        ct.shape = t.shape();
        ct.values.reserve(t.size());
        for (T v : t.data()) ct.values.push_back((float)v);
        ck.tensors.push_back(std::move(ct));
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot open " + path);
    os.write("FSEG", 4);
    detail::write_le<uint32_t>(os, detail::kCheckpointVersion);
    detail::write_le<uint32_t>(os, (uint32_t)ck.config_echo.size());
    os.write(ck.config_echo.data(), (std::streamsize)ck.config_echo.size());
    detail::write_le<uint32_t>(os, (uint32_t)ck.tensors.size());
    for (const auto& t : ck.tensors) {
        detail::write_le<uint32_t>(os, (uint32_t)t.name.size());
        os.write(t.name.data(), (std::streamsize)t.name.size());
        detail::write_le<uint32_t>(os, (uint32_t)t.shape.size());
        for (size_t d : t.shape) detail::write_le<uint64_t>(os, (uint64_t)d);
        detail::write_le<uint8_t>(os, detail::kDtypeF32);
        for (float v : t.values) detail::write_le<float>(os, v);
    }
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FSEG", 4) != 0)
        throw CheckpointError(CheckpointError::Kind::BadMagic, "checkpoint: bad magic");
    const uint32_t version = detail::read_le<uint32_t>(is);
    if (version != detail::kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::BadVersion,
                              "checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    const uint32_t cfg_len = detail::read_le<uint32_t>(is);
    ck.config_echo.resize(cfg_len);
    is.read(ck.config_echo.data(), cfg_len);
    if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint: truncated file");
    const uint32_t n = detail::read_le<uint32_t>(is);
    for (uint32_t i = 0; i < n; ++i) {
        CheckpointTensor t;
        const uint32_t name_len = detail::read_le<uint32_t>(is);
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        if (!is)
            throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint: truncated file");
        const uint32_t rank = detail::read_le<uint32_t>(is);
        t.shape.resize(rank);
        size_t count = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            t.shape[d] = (size_t)detail::read_le<uint64_t>(is);
            count *= t.shape[d];
        }
        const uint8_t dtype = detail::read_le<uint8_t>(is);
        if (dtype != detail::kDtypeF32)
            throw CheckpointError(CheckpointError::Kind::BadVersion,
                                  "checkpoint: unknown dtype tag " + std::to_string(dtype));
        t.values.resize(count);
        for (size_t v = 0; v < count; ++v) t.values[v] = detail::read_le<float>(is);
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

// Copies checkpoint values into a model's parameter map, validating the full
// name/shape manifest in both directions.
template <typename T>
inline void apply_checkpoint(const Checkpoint& ck, ParamMap<T>& pm) {
    if (ck.tensors.size() != pm.items.size())
        throw CheckpointError(
            CheckpointError::Kind::MissingParam,
            "checkpoint: parameter count mismatch (file " + std::to_string(ck.tensors.size()) +
                ", model " + std::to_string(pm.items.size()) + ")");
    for (const auto& t : ck.tensors) {
        Tensor<T>* p = pm.find(t.name);
        if (!p)
            throw CheckpointError(CheckpointError::Kind::UnknownParam,
                                  "checkpoint: unknown parameter " + t.name);
        if (p->shape() != t.shape)
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                  "checkpoint: shape mismatch for " + t.name + ": file " +
                                      shape_str(t.shape) + " vs model " + shape_str(p->shape()));
        for (size_t i = 0; i < t.values.size(); ++i) p->raw_data()[i] = (T)t.values[i];
    }
}

}  // namespace fseg
