#pragma once
// Binary checkpoint: magic "ELEC", format version, embedded config text,
// named float32 tensor records, trailing FNV-1a 64 checksum over everything
// before it. Round trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "elecrec/config.hpp"
#include "elecrec/model.hpp"

namespace elec {

inline constexpr char kCheckpointMagic[4] = {'E', 'L', 'E', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a64(const unsigned char* data, size_t n) {
    std::uint64_t h = 14695981039346656037ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

struct ByteWriter {
    std::vector<unsigned char> bytes;
    void raw(const void* p, size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
    void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
    void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct ByteReader {
    const unsigned char* p;
    size_t n, off = 0;
    ByteReader(const unsigned char* data, size_t size) : p(data), n(size) {}
    void raw(void* out, size_t k) {
        if (off + k > n) throw CheckpointError("corrupt checkpoint: truncated record");
        std::memcpy(out, p + off, k);
        off += k;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof(v));
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    std::string str() {
        const std::uint32_t k = u32();
        if (off + k > n) throw CheckpointError("corrupt checkpoint: truncated string");
        std::string s(reinterpret_cast<const char*>(p + off), k);
        off += k;
        return s;
    }
};

}  // namespace detail

inline void save_checkpoint(Model<float>& m, const std::string& path) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(serialize_config(m.cfg));
    w.u32(static_cast<std::uint32_t>(m.num_items));
    const auto params = m.all_params();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const Param<float>* p : params) {
        w.str(p->name);
        w.u32(static_cast<std::uint32_t>(p->value.shape.size()));
        for (int d : p->value.shape) w.u32(static_cast<std::uint32_t>(d));
        w.raw(p->value.data.data(), p->value.data.size() * sizeof(float));
    }
    w.u64(detail::fnv1a64(w.bytes.data(), w.bytes.size()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw CheckpointError("write failure: " + path);
}

inline Model<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 4 + 4 + 8) throw CheckpointError("corrupt checkpoint: file too small");
    const std::uint64_t stored =
        [&] {
            std::uint64_t v;
            std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
            return v;
        }();
    if (detail::fnv1a64(bytes.data(), bytes.size() - 8) != stored)
        throw CheckpointError("corrupt checkpoint: checksum mismatch in " + path);
    detail::ByteReader r(bytes.data(), bytes.size() - 8);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const TrainConfig cfg = parse_config_text(r.str());
    const auto num_items = static_cast<int>(r.u32());
    Model<float> m = build_model<float>(cfg, num_items);
    const std::uint32_t n_tensors = r.u32();
    const auto params = m.all_params();
    if (n_tensors != params.size())
        throw CheckpointError("checkpoint tensor count " + std::to_string(n_tensors) + " does not match model (" +
                              std::to_string(params.size()) + ")");
    for (Param<float>* p : params) {
        const std::string name = r.str();
        if (name != p->name) throw CheckpointError("unexpected tensor '" + name + "', wanted '" + p->name + "'");
        const std::uint32_t rank = r.u32();
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        if (shape != p->value.shape)
            throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + ", wanted " +
                                  shape_str(p->value.shape));
        r.raw(p->value.data.data(), p->value.data.size() * sizeof(float));
    }
    return m;
}

}  // namespace elec
