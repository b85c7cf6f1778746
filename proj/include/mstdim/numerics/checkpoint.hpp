#pragma once

// Checkpoint layout:
//
//   MSTDIM1\n
//   meta <key> <value>\n                        (zero or more)
//   tensor <name> <dtype> <offset> <bytes> <d0,d1,...>\n   (one per tensor)
//   payload <total-bytes>\n
//   <raw little-endian payload>
//
// Offsets are relative to the first payload byte. dtype is f32 or f64.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mstdim/numerics/tensor.hpp"

namespace mstdim {

inline constexpr const char* kCheckpointMagic = "MSTDIM1";

template <class T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) {
        return "f32";
    } else {
        static_assert(std::is_same_v<T, double>, "checkpoints hold f32 or f64 tensors");
        return "f64";
    }
}

namespace detail {

template <class T>
void to_little_endian(std::vector<unsigned char>& out, const T* values, std::size_t n) {
    const std::size_t start = out.size();
    out.resize(start + n * sizeof(T));
    std::memcpy(out.data() + start, values, n * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < n; ++i) {
            auto* p = out.data() + start + i * sizeof(T);
            std::reverse(p, p + sizeof(T));
        }
    }
}

template <class T>
void from_little_endian(const unsigned char* bytes, T* values, std::size_t n) {
    std::memcpy(values, bytes, n * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<unsigned char*>(values);
        for (std::size_t i = 0; i < n; ++i) std::reverse(p + i * sizeof(T), p + (i + 1) * sizeof(T));
    }
}

}  // namespace detail

struct CheckpointEntry {
    std::string name;
    std::string dtype;
    Shape shape;
    std::size_t offset = 0;
    std::size_t bytes = 0;
};

struct CheckpointFile {
    std::map<std::string, std::string> meta;
    std::vector<CheckpointEntry> entries;
    std::vector<unsigned char> payload;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& params,
                     const std::map<std::string, std::string>& meta = {}) {
    std::vector<unsigned char> payload;
    std::ostringstream header;
    header << kCheckpointMagic << '\n';
    for (const auto& [k, v] : meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ConfigError("checkpoint meta entries may not contain whitespace in keys or newlines");
        }
        header << "meta " << k << ' ' << v << '\n';
    }
    for (const auto& [name, t] : params) {
        if (name.find_first_of(" \n") != std::string::npos) throw ConfigError("checkpoint tensor name '" + name + "'");
        const std::size_t offset = payload.size();
        detail::to_little_endian(payload, t->data(), t->size());
        header << "tensor " << name << ' ' << dtype_name<T>() << ' ' << offset << ' ' << t->size() * sizeof(T) << ' ';
        for (std::size_t d = 0; d < t->rank(); ++d) header << (d ? "," : "") << t->dim(d);
        header << '\n';
    }
    header << "payload " << payload.size() << '\n';

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open checkpoint for writing: " + tmp.string());
        const std::string h = header.str();
        os.write(h.data(), static_cast<std::streamsize>(h.size()));
        os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
        if (!os) throw Error("failed writing checkpoint: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    const std::string file = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError(file, "file", "cannot open checkpoint");
    std::string line;
    if (!std::getline(is, line) || line != kCheckpointMagic) throw IngestionError(file, "magic", "not an MSTDIM1 checkpoint");

    CheckpointFile ck;
    std::size_t payload_bytes = 0;
    bool have_payload = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls >> std::ws, value);
            ck.meta[key] = value;
        } else if (kind == "tensor") {
            CheckpointEntry e;
            std::string dims;
            if (!(ls >> e.name >> e.dtype >> e.offset >> e.bytes >> dims)) {
                throw IngestionError(file, "tensor", "malformed manifest line: " + line);
            }
            std::istringstream ds(dims);
            std::string d;
            while (std::getline(ds, d, ',')) e.shape.push_back(std::stoull(d));
            ck.entries.push_back(std::move(e));
        } else if (kind == "payload") {
            ls >> payload_bytes;
            have_payload = true;
            break;
        } else {
            throw IngestionError(file, "header", "unknown header line: " + line);
        }
    }
    if (!have_payload) throw IngestionError(file, "payload", "missing payload marker");
    ck.payload.resize(payload_bytes);
    is.read(reinterpret_cast<char*>(ck.payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (static_cast<std::size_t>(is.gcount()) != payload_bytes) {
        throw IngestionError(file, "payload", "truncated payload");
    }
    for (const auto& e : ck.entries) {
        if (e.offset + e.bytes > payload_bytes) throw IngestionError(file, e.name, "tensor extends past payload");
    }
    return ck;
}

/// Loads every tensor of `params` by name; shapes and dtypes must match exactly.
template <class T>
std::map<std::string, std::string> load_checkpoint(const std::filesystem::path& path, const ParamList<T>& params) {
    const CheckpointFile ck = read_checkpoint(path);
    const std::string file = path.string();
    for (const auto& [name, t] : params) {
        const CheckpointEntry* e = ck.find(name);
        if (!e) throw IngestionError(file, name, "tensor missing from checkpoint");
        if (e->dtype != dtype_name<T>()) throw IngestionError(file, name, "dtype " + e->dtype + " != " + dtype_name<T>());
        if (e->shape != t->shape()) {
            throw IngestionError(file, name, "shape " + shape_str(e->shape) + " != " + shape_str(t->shape()));
        }
        if (e->bytes != t->size() * sizeof(T)) throw IngestionError(file, name, "byte count mismatch");
        detail::from_little_endian(ck.payload.data() + e->offset, t->data(), t->size());
    }
    return ck.meta;
}

}  // namespace mstdim
