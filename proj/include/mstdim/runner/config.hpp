#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mstdim/contrastive/pretrain.hpp"
#include "mstdim/encoder/encoder.hpp"
#include "mstdim/envsim/env.hpp"
#include "mstdim/masking/mask.hpp"
#include "mstdim/probe/probe.hpp"

namespace mstdim {

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

/// 17 significant digits; used wherever a fixed-width round-trip format is wanted.
inline std::string format_g17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

enum class ConditionKind { observable, non_observable, supervised, random_cnn, pretrain_masked };

struct Condition {
    ConditionKind kind = ConditionKind::observable;
    double pretrain_ratio = 0.0;  // only for pretrain_masked

    friend bool operator==(const Condition&, const Condition&) = default;

    std::string name() const {
        switch (kind) {
            case ConditionKind::observable: return "observable";
            case ConditionKind::non_observable: return "non_observable";
            case ConditionKind::supervised: return "supervised";
            case ConditionKind::random_cnn: return "random_cnn";
            case ConditionKind::pretrain_masked: return "pretrain_masked(" + format_double(pretrain_ratio) + ")";
        }
        return "?";
    }

    bool pretrains() const {
        return kind == ConditionKind::observable || kind == ConditionKind::non_observable ||
               kind == ConditionKind::pretrain_masked;
    }
    bool frozen() const { return kind != ConditionKind::supervised; }
    /// Masking ratio used while pretraining (0 for unmasked objectives).
    double pretrain_mask_ratio() const { return kind == ConditionKind::pretrain_masked ? pretrain_ratio : 0.0; }
    /// Masking ratio used for probing; observable is the only fully visible condition.
    double probe_mask_ratio(double configured) const { return kind == ConditionKind::observable ? 0.0 : configured; }

    static Condition parse(const std::string& text) {
        if (text == "observable") return {ConditionKind::observable, 0.0};
        if (text == "non_observable") return {ConditionKind::non_observable, 0.0};
        if (text == "supervised") return {ConditionKind::supervised, 0.0};
        if (text == "random_cnn") return {ConditionKind::random_cnn, 0.0};
        const std::string prefix = "pretrain_masked(";
        if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size() + 1 && text.back() == ')') {
            const std::string num = text.substr(prefix.size(), text.size() - prefix.size() - 1);
            double p = 0.0;
            const auto res = std::from_chars(num.data(), num.data() + num.size(), p);
            if (res.ec != std::errc{} || res.ptr != num.data() + num.size()) {
                throw ConfigError("condition: bad ratio in '" + text + "'");
            }
            if (!(p > 0.0 && p < 1.0)) throw ConfigError("condition: pretrain_masked ratio must be in (0, 1)");
            return {ConditionKind::pretrain_masked, p};
        }
        throw ConfigError("condition: unknown condition '" + text +
                          "' (expected observable, non_observable, supervised, random_cnn, pretrain_masked(p))");
    }
};

inline std::vector<Condition> default_conditions() {
    return {Condition::parse("observable"),           Condition::parse("non_observable"),
            Condition::parse("supervised"),           Condition::parse("pretrain_masked(0.2)"),
            Condition::parse("pretrain_masked(0.4)"), Condition::parse("pretrain_masked(0.6)"),
            Condition::parse("pretrain_masked(0.8)")};
}

struct DataSteps {
    std::size_t pretrain = 8000;
    std::size_t probe_train = 3500;
    std::size_t probe_test = 1000;
};

struct ExperimentConfig {
    EnvConfig env;
    EncoderConfig encoder;
    /// Mask template: granularity, patch side, fill and policy apply to every
    /// condition; `ratio` is only used by the standalone pretrain command.
    MaskSpec mask;
    bool mask_positives = false;
    double probe_mask_ratio = 0.4;
    double entropy_threshold = 0.6;
    std::size_t pretrain_steps = 5000;
    std::size_t pretrain_batch = 64;
    double pretrain_lr = 3e-4;
    std::size_t pretrain_log_every = 100;
    ProbeConfig probe;
    DataSteps data;
    std::vector<Condition> conditions = default_conditions();
    std::size_t seeds = 3;
    std::uint64_t master_seed = 1;
    std::string out = "results";

    static ExperimentConfig paper_scale() {
        ExperimentConfig c;
        c.env.height = 210;
        c.env.width = 160;
        c.env.hud_height = 16;
        c.encoder.in_height = 210;
        c.encoder.in_width = 160;
        c.pretrain_steps = 80000;
        c.probe.steps = 35000;
        c.data = {80000, 35000, 10000};
        return c;
    }

    void validate() const {
        env.validate();
        encoder.validate();
        if (encoder.in_height != env.height || encoder.in_width != env.width || encoder.in_channels != 1) {
            throw ConfigError("config: encoder input must match the 1-channel environment frame size");
        }
        mask.validate(env.height, env.width);
        if (!(probe_mask_ratio >= 0.0 && probe_mask_ratio < 1.0)) throw ConfigError("config: probe.mask_ratio must be in [0, 1)");
        if (!(entropy_threshold >= 0.0)) throw ConfigError("config: probe.entropy_threshold must be >= 0");
        if (pretrain_batch < 2 || probe.batch_size == 0) throw ConfigError("config: batch sizes too small");
        if (!(pretrain_lr > 0.0) || !(probe.lr > 0.0)) throw ConfigError("config: learning rates must be > 0");
        if (pretrain_log_every == 0) throw ConfigError("config: pretrain.log_every must be > 0");
        if (data.pretrain < 2 || data.probe_train == 0 || data.probe_test == 0) throw ConfigError("config: data step counts too small");
        if (conditions.empty()) throw ConfigError("config: run.conditions is empty");
        if (seeds == 0) throw ConfigError("config: run.seeds must be >= 1");
    }

    PretrainConfig pretrain_config(double ratio) const {
        PretrainConfig pc;
        pc.steps = pretrain_steps;
        pc.batch_size = pretrain_batch;
        pc.lr = pretrain_lr;
        pc.log_every = pretrain_log_every;
        pc.mask = mask;
        pc.mask.ratio = ratio;
        pc.mask.policy = MaskPolicy::fresh_per_visit;
        pc.mask_positives = mask_positives;
        return pc;
    }

    MaskSpec probe_mask(const Condition& c) const {
        MaskSpec m = mask;
        m.ratio = c.probe_mask_ratio(probe_mask_ratio);
        return m;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

inline int to_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
        throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
    }
    return out;
}

inline double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
        throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    }
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char ch : v) {
        if (ch == '(') ++depth;
        if (ch == ')') --depth;
        if ((ch == ',' || ch == ' ') && depth == 0) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct KeyHandler {
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::map<std::string, KeyHandler>& key_table() {
    using C = ExperimentConfig;
    static const std::map<std::string, KeyHandler> table = [] {
        std::map<std::string, KeyHandler> t;
        auto size_key = [&t](const std::string& k, std::size_t C::*f) {
            t[k] = {[k, f](C& c, const std::string& v) { c.*f = to_size(k, v); },
                    [f](const C& c) { return std::to_string(c.*f); }};
        };
        auto env_size = [&t](const std::string& k, std::size_t EnvConfig::*f) {
            t[k] = {[k, f](C& c, const std::string& v) { c.env.*f = to_size(k, v); },
                    [f](const C& c) { return std::to_string(c.env.*f); }};
        };
        auto env_int = [&t](const std::string& k, int EnvConfig::*f) {
            t[k] = {[k, f](C& c, const std::string& v) { c.env.*f = to_int(k, v); },
                    [f](const C& c) { return std::to_string(c.env.*f); }};
        };
        // Frame size drives both the environment and the encoder input.
        t["env.height"] = {[](C& c, const std::string& v) { c.env.height = c.encoder.in_height = to_size("env.height", v); },
                           [](const C& c) { return std::to_string(c.env.height); }};
        t["env.width"] = {[](C& c, const std::string& v) { c.env.width = c.encoder.in_width = to_size("env.width", v); },
                          [](const C& c) { return std::to_string(c.env.width); }};
        env_size("env.hud_height", &EnvConfig::hud_height);
        env_size("env.agent_size", &EnvConfig::agent_size);
        env_size("env.agent_step", &EnvConfig::agent_step);
        env_size("env.ball_size", &EnvConfig::ball_size);
        env_size("env.ball_lattice", &EnvConfig::ball_lattice);
        env_int("env.ball_speed_min", &EnvConfig::ball_speed_min);
        env_int("env.ball_speed_max", &EnvConfig::ball_speed_max);
        env_size("env.enemy_width", &EnvConfig::enemy_width);
        env_size("env.enemy_height", &EnvConfig::enemy_height);
        env_int("env.enemy_speed", &EnvConfig::enemy_speed);
        env_size("env.enemy_row_spacing", &EnvConfig::enemy_row_spacing);
        env_size("env.clock_period", &EnvConfig::clock_period);
        t["env.lives"] = {[](C& c, const std::string& v) {
                              const std::size_t n = to_size("env.lives", v);
                              if (n > 255) throw ConfigError("config: env.lives must fit in a byte");
                              c.env.lives = static_cast<std::uint8_t>(n);
                          },
                          [](const C& c) { return std::to_string(int(c.env.lives)); }};
        env_size("env.episode_cap", &EnvConfig::episode_cap);

        t["encoder.layers"] = {[](C& c, const std::string& v) { c.encoder.convs = EncoderConfig::parse_layers(v); },
                               [](const C& c) { return c.encoder.layers_string(); }};
        t["encoder.local_layer"] = {[](C& c, const std::string& v) { c.encoder.local_layer = to_size("encoder.local_layer", v); },
                                    [](const C& c) { return std::to_string(c.encoder.local_layer); }};
        t["encoder.global_width"] = {
            [](C& c, const std::string& v) { c.encoder.global_width = to_size("encoder.global_width", v); },
            [](const C& c) { return std::to_string(c.encoder.global_width); }};

        t["mask.ratio"] = {[](C& c, const std::string& v) { c.mask.ratio = to_double("mask.ratio", v); },
                           [](const C& c) { return format_double(c.mask.ratio); }};
        t["mask.granularity"] = {[](C& c, const std::string& v) { c.mask.granularity = parse_granularity(v); },
                                 [](const C& c) { return to_string(c.mask.granularity); }};
        t["mask.patch_side"] = {[](C& c, const std::string& v) { c.mask.patch_side = to_size("mask.patch_side", v); },
                                [](const C& c) { return std::to_string(c.mask.patch_side); }};
        t["mask.fill"] = {[](C& c, const std::string& v) { c.mask.fill = parse_fill(v); },
                          [](const C& c) { return to_string(c.mask.fill); }};
        t["mask.policy"] = {[](C& c, const std::string& v) { c.mask.policy = parse_policy(v); },
                            [](const C& c) { return to_string(c.mask.policy); }};
        t["mask.positives"] = {[](C& c, const std::string& v) { c.mask_positives = to_bool("mask.positives", v); },
                               [](const C& c) { return std::string(c.mask_positives ? "true" : "false"); }};

        t["probe.mask_ratio"] = {[](C& c, const std::string& v) { c.probe_mask_ratio = to_double("probe.mask_ratio", v); },
                                 [](const C& c) { return format_double(c.probe_mask_ratio); }};
        t["probe.entropy_threshold"] = {
            [](C& c, const std::string& v) { c.entropy_threshold = to_double("probe.entropy_threshold", v); },
            [](const C& c) { return format_double(c.entropy_threshold); }};
        t["probe.steps"] = {[](C& c, const std::string& v) { c.probe.steps = to_size("probe.steps", v); },
                            [](const C& c) { return std::to_string(c.probe.steps); }};
        t["probe.batch_size"] = {[](C& c, const std::string& v) { c.probe.batch_size = to_size("probe.batch_size", v); },
                                 [](const C& c) { return std::to_string(c.probe.batch_size); }};
        t["probe.lr"] = {[](C& c, const std::string& v) { c.probe.lr = to_double("probe.lr", v); },
                         [](const C& c) { return format_double(c.probe.lr); }};

        size_key("pretrain.steps", &C::pretrain_steps);
        size_key("pretrain.batch_size", &C::pretrain_batch);
        size_key("pretrain.log_every", &C::pretrain_log_every);
        t["pretrain.lr"] = {[](C& c, const std::string& v) { c.pretrain_lr = to_double("pretrain.lr", v); },
                            [](const C& c) { return format_double(c.pretrain_lr); }};

        t["data.pretrain_steps"] = {[](C& c, const std::string& v) { c.data.pretrain = to_size("data.pretrain_steps", v); },
                                    [](const C& c) { return std::to_string(c.data.pretrain); }};
        t["data.probe_train_steps"] = {
            [](C& c, const std::string& v) { c.data.probe_train = to_size("data.probe_train_steps", v); },
            [](const C& c) { return std::to_string(c.data.probe_train); }};
        t["data.probe_test_steps"] = {
            [](C& c, const std::string& v) { c.data.probe_test = to_size("data.probe_test_steps", v); },
            [](const C& c) { return std::to_string(c.data.probe_test); }};

        t["run.conditions"] = {[](C& c, const std::string& v) {
                                   c.conditions.clear();
                                   for (const auto& s : split_list(v)) c.conditions.push_back(Condition::parse(s));
                               },
                               [](const C& c) {
                                   std::string s;
                                   for (const auto& cond : c.conditions) s += (s.empty() ? "" : ",") + cond.name();
                                   return s;
                               }};
        size_key("run.seeds", &C::seeds);
        t["run.master_seed"] = {[](C& c, const std::string& v) { c.master_seed = to_u64("run.master_seed", v); },
                                [](const C& c) { return std::to_string(c.master_seed); }};
        t["run.out"] = {[](C& c, const std::string& v) { c.out = v; }, [](const C& c) { return c.out; }};
        return t;
    }();
    return table;
}

}  // namespace detail

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
    const auto& table = detail::key_table();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second.set(c, value);
}

/// Parses `key = value` lines into `base`. '#' starts a comment.
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        try {
            set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

/// Every key in sorted order, one `key = value` line each. Keys under
/// `run.` are included only when `with_run` is set.
inline std::string canonical_config(const ExperimentConfig& c, bool with_run = true) {
    std::string out;
    for (const auto& [key, h] : detail::key_table()) {
        if (!with_run && key.rfind("run.", 0) == 0) continue;
        out += key + " = " + h.get(c) + "\n";
    }
    return out;
}

/// Hash of the canonical config without orchestration keys (`run.*`): two
/// configs that produce the same cells share a fingerprint.
inline std::string config_fingerprint(const ExperimentConfig& c) {
    return hex64(fnv1a(canonical_config(c, false)));
}

/// Cache key of a pretraining run: only keys that influence the pretrained
/// weights, plus the pretraining mask ratio and the cell seed.
inline std::string pretrain_key(const ExperimentConfig& c, double ratio, std::uint64_t cell_seed) {
    std::string text;
    for (const auto& [key, h] : detail::key_table()) {
        const bool relevant = key.rfind("env.", 0) == 0 || key.rfind("encoder.", 0) == 0 ||
                              key.rfind("pretrain.", 0) == 0 || key == "data.pretrain_steps" ||
                              key == "mask.granularity" || key == "mask.patch_side" || key == "mask.fill" ||
                              key == "mask.positives";
        if (relevant && key != "pretrain.log_every") text += key + " = " + h.get(c) + "\n";
    }
    text += "ratio = " + format_double(ratio) + "\nseed = " + std::to_string(cell_seed) + "\n";
    return hex64(fnv1a(text));
}

}  // namespace mstdim
