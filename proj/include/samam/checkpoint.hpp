#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "samam/io.hpp"
#include "samam/network.hpp"

namespace samam {

inline constexpr std::string_view checkpoint_magic = "SAMAM001";

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
    void raw(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view b) : b_(b) {}

    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
    std::uint64_t u64(const char* what) { return le(8, what); }
    float f32(const char* what) { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4, what))); }
    std::string_view raw(std::size_t n, const std::string& what) {
        need(n, what);
        auto s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return b_.size() - pos_; }
    void need(std::size_t n, const std::string& what) const {
        if (b_.size() - pos_ < n) fail("checkpoint truncated while reading ", what);
    }

private:
    std::uint64_t le(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string_view b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Parsed checkpoint contents, before being bound to a model.
struct CheckpointData {
    std::vector<CheckpointEntry> tensors;
    std::string config_text;

    std::size_t parameter_total() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.values.size();
        return n;
    }
};

inline std::string encode_checkpoint(const SaMamModel& model) {
    detail::ByteWriter w;
    w.raw(checkpoint_magic);
    const auto& named = model.named_parameters();
    w.u32(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u64(d);
        for (double v : t.values()) w.f32(static_cast<float>(v));
    }
    const std::string cfg = model.config().serialize();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.raw(cfg);
    return w.take();
}

/// Structural parse with integrity checks; does not build a model.
inline CheckpointData decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < checkpoint_magic.size() || bytes.substr(0, checkpoint_magic.size()) != checkpoint_magic)
        fail("checkpoint: bad magic (expected ", checkpoint_magic, ")");
    detail::ByteReader r(bytes.substr(checkpoint_magic.size()));
    CheckpointData data;
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::string idx = "tensor #" + std::to_string(i);
        const std::uint32_t len = r.u32("name length");
        e.name = std::string(r.raw(len, idx + " name"));
        const std::uint32_t rank = r.u32("rank");
        if (rank > 8) fail("checkpoint: tensor ", e.name, " has implausible rank ", rank);
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const std::uint64_t d = r.u64("dims");
            if (d == 0 || d > (std::uint64_t{1} << 32)) fail("checkpoint: tensor ", e.name, " has bad dimension ", d);
            e.shape.push_back(static_cast<std::size_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        r.need(4 * n, "values of " + e.name);
        e.values.resize(n);
        for (auto& v : e.values) v = r.f32("values");
        data.tensors.push_back(std::move(e));
    }
    const std::uint32_t cfg_len = r.u32("config length");
    data.config_text = std::string(r.raw(cfg_len, "config text"));
    if (r.remaining() != 0) fail("checkpoint: ", r.remaining(), " trailing bytes after config");
    return data;
}

/// Rebuilds the model from the stored config and binds every tensor by name.
/// Missing, unexpected or mis-shaped tensors are errors naming the tensor.
inline SaMamModel model_from_checkpoint(const CheckpointData& data) {
    SaMamModel model(ModelConfig::parse(data.config_text));
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : data.tensors)
        if (!by_name.emplace(e.name, &e).second) fail("checkpoint: duplicate tensor ", e.name);
    for (const auto& [name, t] : model.named_parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) fail("checkpoint: missing tensor ", name);
        if (it->second->shape != t.shape())
            fail("checkpoint: tensor ", name, " has shape ", shape_str(it->second->shape), ", model expects ",
                 shape_str(t.shape()));
        Tensor dst = t;
        auto out = dst.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = it->second->values[i];
        by_name.erase(it);
    }
    if (!by_name.empty()) fail("checkpoint: unexpected tensor ", by_name.begin()->first);
    return model;
}

inline SaMamModel load_checkpoint(const std::filesystem::path& path) {
    try {
        return model_from_checkpoint(decode_checkpoint(read_file(path)));
    } catch (const Error& e) {
        fail(path.string(), ": ", e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const SaMamModel& model) {
    write_file_atomic(path, encode_checkpoint(model));
}

}  // namespace samam
