#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "facediff/rng.hpp"
#include "facediff/tensor.hpp"

namespace facediff {

enum class Init {
    kZeros,    // zero weight and bias; inserted layers start as exact no-ops
    kFanIn,    // N(0, 1/sqrt(fan_in)), fan_in = rows
    kEmbed,    // N(0, 0.05) for lookup tables
};

template <typename Real>
struct Parameter {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    bool trainable = true;

    void zero_grad() { grad.fill(Real(0)); }
};

// Owns every parameter of a model. Creation order is fixed by the caller and
// initialization draws from a dedicated stream, so two stores built with the
// same seed are bit-identical.
template <typename Real>
struct ParamStore {
    std::vector<std::unique_ptr<Parameter<Real>>> items;
    std::unordered_map<std::string, size_t> by_name;
    Rng init_rng;

    explicit ParamStore(uint64_t seed = 0) : init_rng(substream(seed, "param-init")) {}

    Parameter<Real>* create(const std::string& name, int64_t r, int64_t c, Init kind) {
        if (by_name.count(name))
            throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
        auto p = std::make_unique<Parameter<Real>>();
        p->name = name;
        p->value = Tensor<Real>(r, c);
        p->grad = Tensor<Real>(r, c);
        switch (kind) {
            case Init::kZeros:
                break;
            case Init::kFanIn: {
                double s = 1.0 / std::sqrt(double(r));
                for (auto& x : p->value.v) x = Real(init_rng.normal(0.0, s));
                break;
            }
            case Init::kEmbed:
                for (auto& x : p->value.v) x = Real(init_rng.normal(0.0, 0.05));
                break;
        }
        by_name[name] = items.size();
        items.push_back(std::move(p));
        return items.back().get();
    }

    Parameter<Real>* find(const std::string& name) {
        auto it = by_name.find(name);
        return it == by_name.end() ? nullptr : items[it->second].get();
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& p : items) n += p->value.size();
        return n;
    }

    int64_t trainable_scalars() const {
        int64_t n = 0;
        for (const auto& p : items)
            if (p->trainable) n += p->value.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : items) p->zero_grad();
    }
};

// ---------------------------------------------------------------------------
// Checkpoint file, little-endian throughout (see docs/formats.md):
//   magic "FDCK", u32 version, u64 record count,
//   then per record: u32 name_len, name bytes, i64 rows, i64 cols,
//   rows*cols f64 values row-major.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(char((x >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(char((x >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double x) {
    uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(out, bits);
}

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    explicit ByteReader(const std::string& b) : buf(b) {}

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw std::runtime_error(std::string("checkpoint: truncated file reading ") + what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
        pos += 4;
        return x;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= uint64_t(uint8_t(buf[pos + i])) << (8 * i);
        pos += 8;
        return x;
    }
    int64_t i64(const char* what) { return int64_t(u64(what)); }
    double f64(const char* what) {
        uint64_t bits = u64(what);
        double x;
        std::memcpy(&x, &bits, 8);
        return x;
    }
    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open file: " + path);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("short write: " + path);
}

}  // namespace detail

inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    DTensor value;
};

inline std::string serialize_records(const std::vector<NamedTensor>& records) {
    std::string out;
    out += "FDCK";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, records.size());
    for (const auto& r : records) {
        detail::put_u32(out, uint32_t(r.name.size()));
        out += r.name;
        detail::put_u64(out, uint64_t(r.value.rows()));
        detail::put_u64(out, uint64_t(r.value.cols()));
        for (double x : r.value.v) detail::put_f64(out, x);
    }
    return out;
}

inline std::vector<NamedTensor> deserialize_records(const std::string& bytes) {
    detail::ByteReader rd(bytes);
    if (rd.str(4, "magic") != "FDCK") throw std::runtime_error("checkpoint: bad magic");
    uint32_t version = rd.u32("version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint64_t count = rd.u64("record count");
    std::vector<NamedTensor> records;
    records.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t name_len = rd.u32("name length");
        NamedTensor r;
        r.name = rd.str(name_len, "name");
        int64_t rows = rd.i64("rows");
        int64_t cols = rd.i64("cols");
        if (rows < 0 || cols < 0 || rows * cols > (1ll << 32))
            throw std::runtime_error("checkpoint: implausible shape for " + r.name);
        r.value = DTensor(rows, cols);
        for (auto& x : r.value.v) x = rd.f64("values");
        records.push_back(std::move(r));
    }
    return records;
}

inline void save_checkpoint(const ParamStore<double>& store, const std::string& path) {
    std::vector<NamedTensor> records;
    records.reserve(store.items.size());
    for (const auto& p : store.items) records.push_back({p->name, p->value});
    detail::write_file_bytes(path, serialize_records(records));
}

// Strict load: the file must contain exactly the parameters of the store,
// with matching shapes.
inline void load_checkpoint(ParamStore<double>& store, const std::string& path) {
    auto records = deserialize_records(detail::read_file_bytes(path));
    if (records.size() != store.items.size())
        throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    for (auto& p : store.items) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: missing parameter " + p->name);
        if (!it->second->value.same_shape(p->value))
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
        p->value = it->second->value;
    }
}

}  // namespace facediff
