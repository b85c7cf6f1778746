#pragma once

// Dataset directory layout:
//
//   manifest.json  env descriptor, seed, split, channels/height/width, frame
//                  count, variable names + categories, byte order
//   frames.bin     u8 pixels, frame-major (C*H*W bytes per frame)
//   labels.bin     u8 labels, one run of V bytes per frame in variable order
//   episodes.json  episode boundaries as {start, length} records

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstdim/envsim/env.hpp"
#include "mstdim/envsim/variables.hpp"
#include "mstdim/numerics/tensor.hpp"

namespace mstdim {

enum class Split : std::uint8_t { pretrain, probe_train, probe_test };

inline std::string split_name(Split s) {
    switch (s) {
        case Split::pretrain: return "pretrain";
        case Split::probe_train: return "probe_train";
        case Split::probe_test: return "probe_test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "pretrain") return Split::pretrain;
    if (s == "probe_train") return Split::probe_train;
    if (s == "probe_test") return Split::probe_test;
    throw ConfigError("unknown split '" + s + "'");
}

struct Episode {
    std::size_t start = 0;
    std::size_t length = 0;

    friend bool operator==(const Episode&, const Episode&) = default;
};

/// Immutable-after-collection store of annotated frames.
struct TrajectoryDataset {
    std::string env_descriptor;
    std::uint64_t seed = 0;
    Split split = Split::pretrain;
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<VariableInfo> variables;
    std::vector<std::uint8_t> frames;  // size() * frame_bytes()
    std::vector<std::uint8_t> labels;  // size() * variables.size()
    std::vector<Episode> episodes;

    friend bool operator==(const TrajectoryDataset&, const TrajectoryDataset&) = default;

    std::size_t frame_bytes() const { return channels * height * width; }
    std::size_t size() const { return frame_bytes() == 0 ? 0 : frames.size() / frame_bytes(); }

    std::span<const std::uint8_t> frame(std::size_t i) const {
        return std::span<const std::uint8_t>(frames).subspan(i * frame_bytes(), frame_bytes());
    }

    std::uint8_t label(std::size_t i, std::size_t var) const { return labels[i * variables.size() + var]; }

    StateVariables state_variables(std::size_t i) const {
        const auto* p = labels.data() + i * variables.size();
        return {{p, p + variables.size()}};
    }

    std::size_t variable_index(const std::string& name) const {
        for (std::size_t v = 0; v < variables.size(); ++v)
            if (variables[v].name == name) return v;
        throw ConfigError("unknown state variable '" + name + "'");
    }

    /// Frame `i` as [C, H, W] in [0, 1].
    template <class T>
    Tensor<T> image(std::size_t i) const {
        Tensor<T> out({channels, height, width});
        write_image(i, out.data());
        return out;
    }

    template <class T>
    void write_image(std::size_t i, T* dst) const {
        const auto f = frame(i);
        for (std::size_t k = 0; k < f.size(); ++k) dst[k] = static_cast<T>(f[k]) / T{255};
    }

    /// (episode index, step within episode) for frame i.
    std::pair<std::size_t, std::size_t> locate(std::size_t i) const {
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            if (i >= episodes[e].start && i < episodes[e].start + episodes[e].length) return {e, i - episodes[e].start};
        }
        throw ConfigError("frame index " + std::to_string(i) + " outside every episode");
    }

    /// Checks every structural invariant; throws ConfigError describing the first violation.
    void validate() const {
        if (channels == 0 || height == 0 || width == 0) throw ConfigError("dataset: empty frame shape");
        if (frames.size() % frame_bytes() != 0) throw ConfigError("dataset: frame payload not a multiple of C*H*W");
        if (labels.size() != size() * variables.size()) throw ConfigError("dataset: label count mismatch");
        std::size_t next = 0;
        for (const auto& e : episodes) {
            if (e.start != next || e.length == 0) throw ConfigError("dataset: episodes must be contiguous and non-empty");
            next += e.length;
        }
        if (next != size()) throw ConfigError("dataset: episodes do not cover every frame");
    }
};

/// Random-agent rollout; reproducible from (config, seed, split).
inline TrajectoryDataset collect_trajectories(const EnvConfig& config, std::uint64_t seed, std::size_t n_steps,
                                              Split split) {
    if (n_steps == 0) throw ConfigError("collect_trajectories: n_steps must be positive");
    const MiniAtari env(config);
    TrajectoryDataset ds;
    ds.env_descriptor = config.descriptor();
    ds.seed = seed;
    ds.split = split;
    ds.height = config.height;
    ds.width = config.width;
    ds.variables = env.variables();
    ds.frames.reserve(n_steps * ds.frame_bytes());
    ds.labels.reserve(n_steps * ds.variables.size());

    Rng policy(derive_seed(seed, "policy/" + split_name(split)));
    Rng dynamics(derive_seed(seed, "dynamics/" + split_name(split)));
    EnvState state;
    std::size_t in_episode = config.episode_cap;
    for (std::size_t i = 0; i < n_steps; ++i) {
        if (in_episode == config.episode_cap) {
            state = env.reset(dynamics);
            ds.episodes.push_back({i, 0});
            in_episode = 0;
        } else {
            state = env.step(state, policy.below(kNumActions), dynamics);
        }
        const auto img = env.render(state);
        ds.frames.insert(ds.frames.end(), img.begin(), img.end());
        const auto lab = env.labels(state);
        ds.labels.insert(ds.labels.end(), lab.values.begin(), lab.values.end());
        ++ds.episodes.back().length;
        ++in_episode;
    }
    return ds;
}

/// Shannon entropy (nats) of the empirical distribution of one variable.
inline double label_entropy(const TrajectoryDataset& ds, const std::string& variable) {
    const std::size_t v = ds.variable_index(variable);
    if (ds.size() == 0) throw ConfigError("label_entropy: empty dataset");
    std::size_t counts[256] = {};
    for (std::size_t i = 0; i < ds.size(); ++i) ++counts[ds.label(i, v)];
    const double n = static_cast<double>(ds.size());
    double h = 0.0;
    for (std::size_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

namespace detail {

inline void write_bytes(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + p.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("failed writing " + p.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IngestionError(p.string(), "file", "cannot open");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw IngestionError(p.string(), "file", "cannot open");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(p.string(), "json", e.what());
    }
}

}  // namespace detail

inline void persist_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json m;
    m["format"] = "mstdim-dataset-1";
    m["env"] = ds.env_descriptor;
    m["seed"] = ds.seed;
    m["split"] = split_name(ds.split);
    m["channels"] = ds.channels;
    m["height"] = ds.height;
    m["width"] = ds.width;
    m["frames"] = ds.size();
    m["episodes"] = ds.episodes.size();
    m["byte_order"] = "little";
    m["variables"] = nlohmann::ordered_json::array();
    for (const auto& v : ds.variables) {
        m["variables"].push_back({{"name", v.name}, {"category", std::string(category_name(v.category))}});
    }
    {
        std::ofstream os(dir / "manifest.json");
        os << m.dump(2) << '\n';
    }
    nlohmann::ordered_json ep = nlohmann::ordered_json::array();
    for (const auto& e : ds.episodes) ep.push_back({{"start", e.start}, {"length", e.length}});
    {
        std::ofstream os(dir / "episodes.json");
        os << nlohmann::ordered_json{{"episodes", ep}}.dump(2) << '\n';
    }
    detail::write_bytes(dir / "frames.bin", ds.frames);
    detail::write_bytes(dir / "labels.bin", ds.labels);
}

/// Loads a dataset directory written by persist_dataset or by an external tool
/// following the same layout. Errors name the offending file and field.
inline TrajectoryDataset ingest_external(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const std::string mf = manifest_path.string();
    const nlohmann::json m = detail::read_json(manifest_path);

    auto field = [&](const char* key) -> const nlohmann::json& {
        if (!m.contains(key)) throw IngestionError(mf, key, "missing field");
        return m.at(key);
    };
    auto uint_field = [&](const char* key) -> std::size_t {
        const auto& f = field(key);
        if (!f.is_number_unsigned()) throw IngestionError(mf, key, "expected a non-negative integer");
        return f.get<std::size_t>();
    };

    TrajectoryDataset ds;
    try {
        ds.env_descriptor = field("env").get<std::string>();
        ds.split = parse_split(field("split").get<std::string>());
    } catch (const ConfigError& e) {
        throw IngestionError(mf, "split", e.what());
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(mf, "env", e.what());
    }
    ds.seed = m.contains("seed") ? m.at("seed").get<std::uint64_t>() : 0;
    ds.channels = m.contains("channels") ? uint_field("channels") : 1;
    ds.height = uint_field("height");
    ds.width = uint_field("width");
    const std::size_t n = uint_field("frames");
    if (m.contains("byte_order") && m.at("byte_order") != "little") {
        throw IngestionError(mf, "byte_order", "only little-endian datasets are supported");
    }
    if (ds.channels == 0 || ds.height == 0 || ds.width == 0) throw IngestionError(mf, "height", "empty frame shape");

    const auto& vars = field("variables");
    if (!vars.is_array() || vars.empty()) throw IngestionError(mf, "variables", "expected a non-empty array");
    for (const auto& v : vars) {
        if (!v.contains("name") || !v.contains("category")) {
            throw IngestionError(mf, "variables", "each variable needs name and category");
        }
        try {
            ds.variables.push_back({v.at("name").get<std::string>(), parse_category(v.at("category").get<std::string>())});
        } catch (const ConfigError& e) {
            throw IngestionError(mf, "variables.category", e.what());
        }
    }

    const auto frames_path = dir / "frames.bin";
    ds.frames = detail::read_bytes(frames_path);
    if (ds.frames.size() != n * ds.frame_bytes()) {
        throw IngestionError(frames_path.string(), "frames",
                             "shape mismatch: manifest declares " + std::to_string(n) + " frames of " +
                                 std::to_string(ds.channels) + "x" + std::to_string(ds.height) + "x" +
                                 std::to_string(ds.width) + " (" + std::to_string(n * ds.frame_bytes()) +
                                 " bytes), payload has " + std::to_string(ds.frames.size()) + " bytes");
    }
    const auto labels_path = dir / "labels.bin";
    ds.labels = detail::read_bytes(labels_path);
    if (ds.labels.size() != n * ds.variables.size()) {
        throw IngestionError(labels_path.string(), "labels",
                             "label/variable mismatch: expected " + std::to_string(n * ds.variables.size()) +
                                 " bytes, found " + std::to_string(ds.labels.size()));
    }

    const auto episodes_path = dir / "episodes.json";
    const nlohmann::json ej = detail::read_json(episodes_path);
    if (!ej.contains("episodes") || !ej.at("episodes").is_array()) {
        throw IngestionError(episodes_path.string(), "episodes", "expected an 'episodes' array");
    }
    for (const auto& e : ej.at("episodes")) {
        if (!e.contains("start") || !e.contains("length")) {
            throw IngestionError(episodes_path.string(), "episodes", "each episode needs start and length");
        }
        ds.episodes.push_back({e.at("start").get<std::size_t>(), e.at("length").get<std::size_t>()});
    }
    try {
        ds.validate();
    } catch (const ConfigError& e) {
        throw IngestionError(episodes_path.string(), "episodes", e.what());
    }
    return ds;
}

}  // namespace mstdim
