#pragma once

// Checkpoint wire format, little-endian:
//   magic "EBUS3D\0" | version u32 | variant u8 | entry count u32
//   per entry: name len u16, name bytes, rank u8, extents u32..., f32 data
//   footer: training step u64, schedule total steps u64, seed u64
// Entries cover trainable parameters and BN running statistics, in model
// order, so save -> load -> save is byte-identical and a loaded model
// reproduces the saved model's forward pass exactly.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ebus3d/nets.hpp"

namespace ebus3d {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::uint8_t variant_tag = 0;
    std::vector<CheckpointEntry> entries;
    std::uint64_t step = 0;
    std::uint64_t schedule_total = 0;
    std::uint64_t seed = 0;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

constexpr char kCheckpointMagic[7] = {'E', 'B', 'U', 'S', '3', 'D', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint8_t variant_tag(Variant v) {
    switch (v) {
        case Variant::U: return 0;
        case Variant::UD: return 1;
        case Variant::UDE: return 2;
    }
    return 0xff;
}

inline Variant variant_from_tag(std::uint8_t t) {
    switch (t) {
        case 0: return Variant::U;
        case 1: return Variant::UD;
        case 2: return Variant::UDE;
    }
    throw CheckpointError("checkpoint: unknown variant tag " + std::to_string(t));
}

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError(std::string("checkpoint: truncated file reading ") + what);
    return v;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod(os, kCheckpointVersion);
    detail::write_pod(os, ckpt.variant_tag);
    detail::write_pod(os, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& e : ckpt.entries) {
        detail::write_pod(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_pod(os, static_cast<std::uint8_t>(e.shape.size()));
        for (auto ext : e.shape) detail::write_pod(os, static_cast<std::uint32_t>(ext));
        os.write(reinterpret_cast<const char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    detail::write_pod(os, ckpt.step);
    detail::write_pod(os, ckpt.schedule_total);
    detail::write_pod(os, ckpt.seed);
    if (!os) throw std::runtime_error("write failed for checkpoint: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

    char magic[sizeof(kCheckpointMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw CheckpointError("not a checkpoint file: " + path);

    Checkpoint ckpt;
    ckpt.version = detail::read_pod<std::uint32_t>(is, "version");
    if (ckpt.version != kCheckpointVersion)
        throw CheckpointError("checkpoint format version mismatch: file has " +
                              std::to_string(ckpt.version) + ", supported version is " +
                              std::to_string(kCheckpointVersion));
    ckpt.variant_tag = detail::read_pod<std::uint8_t>(is, "variant");
    const auto count = detail::read_pod<std::uint32_t>(is, "entry count");
    ckpt.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const auto name_len = detail::read_pod<std::uint16_t>(is, "name length");
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        if (!is) throw CheckpointError("checkpoint: truncated file reading name");
        const auto rank = detail::read_pod<std::uint8_t>(is, "rank");
        std::size_t n = 1;
        for (std::uint8_t r = 0; r < rank; ++r) {
            const auto ext = detail::read_pod<std::uint32_t>(is, "extent");
            e.shape.push_back(static_cast<std::int64_t>(ext));
            n *= ext;
        }
        e.data.resize(n);
        is.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw CheckpointError("checkpoint: truncated file reading data of " + e.name);
        ckpt.entries.push_back(std::move(e));
    }
    ckpt.step = detail::read_pod<std::uint64_t>(is, "step");
    ckpt.schedule_total = detail::read_pod<std::uint64_t>(is, "schedule total");
    ckpt.seed = detail::read_pod<std::uint64_t>(is, "seed");
    return ckpt;
}

template <typename S>
Checkpoint snapshot(EbusNet<S>& model, std::uint64_t step, std::uint64_t schedule_total,
                    std::uint64_t seed) {
    Checkpoint ckpt;
    ckpt.variant_tag = variant_tag(model.variant);
    ckpt.step = step;
    ckpt.schedule_total = schedule_total;
    ckpt.seed = seed;
    for (auto& [name, t] : model.named_params()) {
        CheckpointEntry e;
        e.name = name;
        e.shape = t.shape();
        e.data.reserve(static_cast<std::size_t>(t.size()));
        for (std::int64_t i = 0; i < t.size(); ++i) e.data.push_back(static_cast<float>(t[i]));
        ckpt.entries.push_back(std::move(e));
    }
    for (auto& [name, buf] : model.named_buffers()) {
        CheckpointEntry e;
        e.name = name;
        e.shape = {static_cast<std::int64_t>(buf->size())};
        e.data.assign(buf->begin(), buf->end());
        ckpt.entries.push_back(std::move(e));
    }
    return ckpt;
}

template <typename S>
void save_checkpoint(EbusNet<S>& model, const std::string& path, std::uint64_t step = 0,
                     std::uint64_t schedule_total = 0, std::uint64_t seed = 0) {
    write_checkpoint(snapshot(model, step, schedule_total, seed), path);
}

// Loads values into an already-built model. Every model tensor must be
// present with a matching shape; the first missing or mismatched name is
// reported, as is the first checkpoint entry the model has no use for.
template <typename S>
void load_state(EbusNet<S>& model, const Checkpoint& ckpt) {
    std::size_t used = 0;
    auto fill = [&](const std::string& name, auto get_shape, auto assign) {
        const CheckpointEntry* e = ckpt.find(name);
        if (!e)
            throw CheckpointError("checkpoint shape mismatch vs model: missing parameter `" + name +
                                  "` (checkpoint variant " +
                                  variant_name(variant_from_tag(ckpt.variant_tag)) + ")");
        if (e->shape != get_shape())
            throw CheckpointError("checkpoint shape mismatch for `" + name + "`: file has " +
                                  shape_str(e->shape) + ", model expects " +
                                  shape_str(get_shape()));
        assign(*e);
        ++used;
    };
    for (auto& [name, t] : model.named_params()) {
        Tensor<S>& tensor = t;
        fill(
            name, [&] { return tensor.shape(); },
            [&](const CheckpointEntry& e) {
                for (std::int64_t i = 0; i < tensor.size(); ++i)
                    tensor[i] = static_cast<S>(e.data[static_cast<std::size_t>(i)]);
            });
    }
    for (auto& [name, buf] : model.named_buffers()) {
        std::vector<S>* vec = buf;
        fill(
            name, [&] { return Shape{static_cast<std::int64_t>(vec->size())}; },
            [&](const CheckpointEntry& e) {
                for (std::size_t i = 0; i < vec->size(); ++i)
                    (*vec)[i] = static_cast<S>(e.data[i]);
            });
    }
    if (used != ckpt.entries.size()) {
        for (const auto& e : ckpt.entries) {
            bool known = false;
            for (auto& [name, t] : model.named_params())
                if (name == e.name) known = true;
            for (auto& [name, b] : model.named_buffers())
                if (name == e.name) known = true;
            if (!known)
                throw CheckpointError("checkpoint shape mismatch vs model: unexpected parameter `" +
                                      e.name + "`");
        }
    }
}

template <typename S>
Checkpoint load_checkpoint(EbusNet<S>& model, const std::string& path) {
    Checkpoint ckpt = read_checkpoint(path);
    load_state(model, ckpt);
    return ckpt;
}

}  // namespace ebus3d
