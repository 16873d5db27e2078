#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "psyn/data.hpp"
#include "psyn/model.hpp"

namespace psyn {

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
    uint64_t v = std::bit_cast<uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, const std::string& what)
        : bytes_(bytes), what_(what) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    void magic(const char* m, size_t len) {
        need(len);
        if (std::memcmp(bytes_.data() + pos_, m, len) != 0)
            throw IoError(what_ + ": bad magic");
        pos_ += len;
    }
    void done() const {
        if (pos_ != bytes_.size()) throw IoError(what_ + ": trailing bytes");
    }

private:
    void need(size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError(what_ + ": truncated file");
    }
    const std::string& bytes_;
    std::string what_;
    size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

// Checkpoint layout: "PSYN1", kind, layer count, layer dims, dim (all u32 LE),
// then dim f64 LE parameter values. Round-trips bit-exactly.
inline std::string encode_checkpoint(const Model& m) {
    std::string out("PSYN1");
    detail::put_u32(out, static_cast<uint32_t>(m.kind));
    detail::put_u32(out, static_cast<uint32_t>(m.layer_dims.size()));
    for (int d : m.layer_dims) detail::put_u32(out, static_cast<uint32_t>(d));
    detail::put_u32(out, static_cast<uint32_t>(m.params.size()));
    for (double v : m.params) detail::put_f64(out, v);
    return out;
}

inline Model decode_checkpoint(const std::string& bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    r.magic("PSYN1", 5);
    uint32_t kind = r.u32();
    if (kind > 2) throw IoError("checkpoint: unknown model kind " + std::to_string(kind));
    uint32_t n_dims = r.u32();
    std::vector<int> dims(n_dims);
    for (auto& d : dims) d = static_cast<int>(r.u32());
    uint32_t dim = r.u32();
    Model m = make_model(static_cast<ModelKind>(kind), dims);
    if (m.params.size() != dim)
        throw IoError("checkpoint: dim " + std::to_string(dim) + " does not match layer dims");
    for (auto& v : m.params) v = r.f64();
    r.done();
    return m;
}

inline void save_checkpoint(const std::string& path, const Model& m) {
    detail::write_file_bytes(path, encode_checkpoint(m));
}

inline Model load_checkpoint(const std::string& path) {
    return decode_checkpoint(detail::read_file_bytes(path));
}

// Dataset cache: "PSYD1", task kind, n, d, target_dim (u32 LE), then row-major
// features and targets as f64 LE. Bitwise round-trip.
inline void save_dataset_cache(const std::string& path, const Dataset& ds) {
    std::string out("PSYD1");
    detail::put_u32(out, static_cast<uint32_t>(ds.generator_spec.task));
    detail::put_u32(out, static_cast<uint32_t>(ds.n));
    detail::put_u32(out, static_cast<uint32_t>(ds.d));
    detail::put_u32(out, static_cast<uint32_t>(ds.target_dim));
    for (double v : ds.features) detail::put_f64(out, v);
    for (double v : ds.targets) detail::put_f64(out, v);
    detail::write_file_bytes(path, out);
}

inline Dataset load_dataset_cache(const std::string& path) {
    auto bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes, "dataset cache");
    r.magic("PSYD1", 5);
    Dataset ds;
    uint32_t task = r.u32();
    if (task > 2) throw IoError("dataset cache: unknown task kind " + std::to_string(task));
    ds.generator_spec.task = static_cast<TaskKind>(task);
    ds.n = r.u32();
    ds.d = r.u32();
    ds.target_dim = r.u32();
    ds.generator_spec.n = ds.n;
    ds.generator_spec.d = ds.d;
    ds.generator_spec.derived = true;
    ds.features.resize(ds.n * ds.d);
    for (auto& v : ds.features) v = r.f64();
    ds.targets.resize(ds.n * ds.target_dim);
    for (auto& v : ds.targets) v = r.f64();
    r.done();
    return ds;
}

}  // namespace psyn
