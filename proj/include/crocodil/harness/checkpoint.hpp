#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "crocodil/harness/config.hpp"
#include "crocodil/models/transformer.hpp"
#include "crocodil/numerics/adamw.hpp"

namespace crocodil {

// Self-describing binary container: a header that fully lays out the payload
// (names, shapes, byte offsets) followed by raw little-endian float32 data.
// The effective config text and its hash ride along; load refuses version or
// hash mismatches and truncated payloads.
struct Checkpoint {
    static constexpr char kMagic[8] = {'C', 'R', 'O', 'C', 'K', 'P', 'T', '1'};
    static constexpr uint32_t kVersion = 1;

    std::string config_text;
    uint64_t parent_hash = 0; // config hash of the stage this one depends on
    uint64_t rng_seed = 0, rng_stream = 0, rng_counter = 0;
    int64_t step_count = 0;
    std::map<std::string, double> extras;      // small named scalars (sigma, ...)
    std::map<std::string, uint64_t> extras_u64; // exact integers (hashes, counters)
    std::vector<std::pair<std::string, std::vector<float>>> tensors;
    std::vector<std::vector<int>> shapes;

    uint64_t config_hash() const { return Config::fnv1a(config_text); }

    void add_tensor(const std::string& name, const std::vector<int>& shape,
                    const std::vector<float>& data) {
        size_t expect = 1;
        for (int e : shape) expect *= size_t(e);
        CROC_CHECK(expect == data.size(), "checkpoint: tensor data does not match shape");
        tensors.push_back({name, data});
        shapes.push_back(shape);
    }

    const std::vector<float>* find(const std::string& name) const {
        for (const auto& [n, d] : tensors)
            if (n == name) return &d;
        return nullptr;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        CROC_CHECK(out.good(), "checkpoint: cannot open '" + path + "' for writing");
        out.write(kMagic, 8);
        put_u32(out, kVersion);
        put_u64(out, config_hash());
        put_u64(out, parent_hash);
        put_u32(out, uint32_t(config_text.size()));
        out.write(config_text.data(), long(config_text.size()));
        put_u64(out, rng_seed);
        put_u64(out, rng_stream);
        put_u64(out, rng_counter);
        put_u64(out, uint64_t(step_count));
        put_u32(out, uint32_t(extras.size()));
        for (const auto& [k, v2] : extras) {
            put_str(out, k);
            put_f64(out, v2);
        }
        put_u32(out, uint32_t(extras_u64.size()));
        for (const auto& [k, v2] : extras_u64) {
            put_str(out, k);
            put_u64(out, v2);
        }
        put_u32(out, uint32_t(tensors.size()));
        uint64_t offset = 0;
        for (size_t i = 0; i < tensors.size(); ++i) {
            put_str(out, tensors[i].first);
            put_u32(out, uint32_t(shapes[i].size()));
            for (int e : shapes[i]) put_u64(out, uint64_t(e));
            put_u64(out, offset);
            offset += tensors[i].second.size() * 4;
        }
        for (const auto& [n, data] : tensors)
            for (float x : data) put_f32(out, x);
        CROC_CHECK(out.good(), "checkpoint: write failed for '" + path + "'");
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        CROC_CHECK(in.good(), "checkpoint: cannot open '" + path + "'");
        char magic[8];
        in.read(magic, 8);
        CROC_CHECK(in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0,
                   "checkpoint: bad magic in '" + path + "'");
        const uint32_t version = get_u32(in);
        CROC_CHECK(version == kVersion,
                   "checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kVersion) + ")");
        Checkpoint c;
        const uint64_t stored_hash = get_u64(in);
        c.parent_hash = get_u64(in);
        const uint32_t cfg_len = get_u32(in);
        c.config_text.resize(cfg_len);
        in.read(c.config_text.data(), long(cfg_len));
        CROC_CHECK(in.gcount() == long(cfg_len), "checkpoint: truncated config block");
        CROC_CHECK(c.config_hash() == stored_hash,
                   "checkpoint: config hash mismatch (corrupted header?)");
        c.rng_seed = get_u64(in);
        c.rng_stream = get_u64(in);
        c.rng_counter = get_u64(in);
        c.step_count = int64_t(get_u64(in));
        const uint32_t n_extras = get_u32(in);
        for (uint32_t i = 0; i < n_extras; ++i) {
            std::string k = get_str(in);
            c.extras[k] = get_f64(in);
        }
        const uint32_t n_extras_u64 = get_u32(in);
        for (uint32_t i = 0; i < n_extras_u64; ++i) {
            std::string k = get_str(in);
            c.extras_u64[k] = get_u64(in);
        }
        const uint32_t n_tensors = get_u32(in);
        std::vector<uint64_t> offsets;
        std::vector<size_t> counts;
        for (uint32_t i = 0; i < n_tensors; ++i) {
            std::string name = get_str(in);
            const uint32_t ndim = get_u32(in);
            std::vector<int> shape;
            size_t count = 1;
            for (uint32_t d2 = 0; d2 < ndim; ++d2) {
                shape.push_back(int(get_u64(in)));
                count *= size_t(shape.back());
            }
            offsets.push_back(get_u64(in));
            counts.push_back(count);
            c.tensors.push_back({name, {}});
            c.shapes.push_back(shape);
        }
        uint64_t expect = 0;
        for (uint32_t i = 0; i < n_tensors; ++i) {
            CROC_CHECK(offsets[i] == expect, "checkpoint: inconsistent payload offsets");
            expect += counts[i] * 4;
        }
        for (uint32_t i = 0; i < n_tensors; ++i) {
            c.tensors[i].second.resize(counts[i]);
            for (size_t j = 0; j < counts[i]; ++j) {
                CROC_CHECK(in.good() && !in.eof(), "checkpoint: truncated payload");
                c.tensors[i].second[j] = get_f32(in);
            }
        }
        CROC_CHECK(in.good(), "checkpoint: truncated payload");
        return c;
    }

  private:
    static void put_u32(std::ostream& o, uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xFF);
        o.write(b, 4);
    }
    static void put_u64(std::ostream& o, uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xFF);
        o.write(b, 8);
    }
    static void put_f32(std::ostream& o, float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(o, bits);
    }
    static void put_f64(std::ostream& o, double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(o, bits);
    }
    static void put_str(std::ostream& o, const std::string& s) {
        put_u32(o, uint32_t(s.size()));
        o.write(s.data(), long(s.size()));
    }
    static uint32_t get_u32(std::istream& in) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        CROC_CHECK(in.gcount() == 4, "checkpoint: truncated header");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
        return v;
    }
    static uint64_t get_u64(std::istream& in) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        CROC_CHECK(in.gcount() == 8, "checkpoint: truncated header");
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
        return v;
    }
    static float get_f32(std::istream& in) {
        const uint32_t bits = get_u32(in);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    static double get_f64(std::istream& in) {
        const uint64_t bits = get_u64(in);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    static std::string get_str(std::istream& in) {
        const uint32_t len = get_u32(in);
        std::string s(len, '\0');
        in.read(s.data(), long(len));
        CROC_CHECK(in.gcount() == long(len), "checkpoint: truncated header");
        return s;
    }
};

// ------------------------------------------------ registry <-> checkpoint

inline void pack_params(Checkpoint& c, const ParamRegistry<float>& reg) {
    for (const auto& t : reg.items()) c.add_tensor(t.name(), t.shape(), t.values());
}

inline void pack_adam(Checkpoint& c, const std::string& prefix, const AdamWState<float>& st,
                      const std::vector<Tensor<float>>& params) {
    for (size_t i = 0; i < params.size(); ++i) {
        c.add_tensor(prefix + ".m." + params[i].name(), params[i].shape(), st.first_moment[i]);
        c.add_tensor(prefix + ".v." + params[i].name(), params[i].shape(), st.second_moment[i]);
    }
    c.extras[prefix + ".step"] = double(st.step_count);
}

inline void unpack_params(const Checkpoint& c, ParamRegistry<float>& reg) {
    for (auto& t : reg.items()) {
        const auto* data = c.find(t.name());
        CROC_CHECK(data != nullptr, "checkpoint: missing tensor '" + t.name() + "'");
        CROC_CHECK(data->size() == t.numel(), "checkpoint: shape mismatch for '" + t.name() + "'");
        t.values() = *data;
    }
}

inline void unpack_adam(const Checkpoint& c, const std::string& prefix, AdamWState<float>& st,
                        const std::vector<Tensor<float>>& params) {
    for (size_t i = 0; i < params.size(); ++i) {
        const auto* m = c.find(prefix + ".m." + params[i].name());
        const auto* v = c.find(prefix + ".v." + params[i].name());
        CROC_CHECK(m && v, "checkpoint: missing optimizer state for '" + params[i].name() + "'");
        st.first_moment[i] = *m;
        st.second_moment[i] = *v;
    }
    auto it = c.extras.find(prefix + ".step");
    CROC_CHECK(it != c.extras.end(), "checkpoint: missing optimizer step counter");
    st.step_count = int64_t(it->second);
}

} // namespace crocodil
