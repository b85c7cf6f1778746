#pragma once

// A small annotated arcade environment. Sprites are painted in a fixed order
// (enemy, agent, ball) with distinct intensities, so the ball is never hidden:
//
//   ball     255   small_loc
//   agent    170   agent_loc
//   enemy    110   other_loc
//   HUD      255   score digits, clock bar, lives pips, direction flag
//
// Rows [0, hud_height) are the HUD; the rest is the play field.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mstdim/envsim/variables.hpp"
#include "mstdim/rng.hpp"

namespace mstdim {

namespace shade {
inline constexpr std::uint8_t ball = 255;
inline constexpr std::uint8_t agent = 170;
inline constexpr std::uint8_t enemy = 110;
inline constexpr std::uint8_t hud = 255;
}  // namespace shade

enum class Action : std::uint8_t { noop = 0, up = 1, down = 2, left = 3, right = 4 };
inline constexpr std::size_t kNumActions = 5;

struct EnvConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t hud_height = 8;
    std::size_t agent_size = 4;
    std::size_t agent_step = 2;
    std::size_t ball_size = 2;
    std::size_t ball_lattice = 4;  // ball coordinates and speeds are multiples of this
    int ball_speed_min = 4;
    int ball_speed_max = 8;
    std::size_t enemy_width = 6;
    std::size_t enemy_height = 3;
    int enemy_speed = 1;
    std::size_t enemy_row_spacing = 6;
    std::size_t clock_period = 4;
    std::uint8_t lives = 3;
    std::size_t episode_cap = 512;

    friend bool operator==(const EnvConfig&, const EnvConfig&) = default;

    std::size_t play_top() const { return hud_height; }
    std::size_t enemy_rows() const { return (height - hud_height - enemy_height) / enemy_row_spacing + 1; }

    void validate() const {
        if (hud_height < 8 || height < hud_height + 16 || width < 50) throw ConfigError("env: frame too small (need >= 50 px wide for the HUD)");
        if (agent_size == 0 || ball_size == 0 || ball_size > 2) throw ConfigError("env: ball must be 1-2 px");
        if (ball_speed_min < 2 || ball_speed_max < ball_speed_min) throw ConfigError("env: ball speed must be >= 2");
        if (ball_lattice == 0 || ball_speed_min % ball_lattice != 0 || ball_speed_max % ball_lattice != 0 ||
            hud_height % ball_lattice != 0 || width < ball_lattice + ball_size || height < hud_height + ball_lattice + ball_size) {
            throw ConfigError("env: ball speeds and HUD height must be multiples of ball_lattice");
        }
        if (agent_step == 0 || hud_height % agent_step != 0) throw ConfigError("env: HUD height must be a multiple of agent_step");
        if (enemy_width == 0 || enemy_height == 0 || enemy_row_spacing == 0) throw ConfigError("env: enemy size");
        if (clock_period == 0 || episode_cap == 0) throw ConfigError("env: clock period and episode cap must be > 0");
        if (height > 256 || width > 256) throw ConfigError("env: coordinates must fit in a byte");
    }

    /// Stable textual descriptor; part of dataset manifests and cache keys.
    std::string descriptor() const {
        std::ostringstream os;
        os << "mini-atari-v2:" << height << 'x' << width << ":hud" << hud_height << ":agent" << agent_size << '/'
           << agent_step << ":ball" << ball_size << '/' << ball_lattice << '/' << ball_speed_min << '-' << ball_speed_max << ":enemy"
           << enemy_width << 'x' << enemy_height << '/' << enemy_speed << '/' << enemy_row_spacing << ":clock"
           << clock_period << ":lives" << int(lives) << ":cap" << episode_cap;
        return os.str();
    }
};

struct EnvState {
    int agent_x = 0, agent_y = 0;
    int ball_x = 0, ball_y = 0, ball_vx = 2, ball_vy = 2;
    int enemy_x = 0, enemy_dir = 1;
    std::size_t enemy_row = 0;
    std::uint8_t score = 0;
    std::size_t t = 0;

    friend bool operator==(const EnvState&, const EnvState&) = default;
};

/// Variable table, in label order.
inline std::vector<VariableInfo> env_variables() {
    return {
        {"agent_x", Category::agent_loc},
        {"agent_y", Category::agent_loc},
        {"ball_x", Category::small_loc},
        {"ball_y", Category::small_loc},
        {"enemy_x", Category::other_loc},
        {"enemy_y", Category::other_loc},
        {"score", Category::score_clock_lives_display},
        {"clock", Category::score_clock_lives_display},
        {"lives", Category::score_clock_lives_display},
        {"ball_dir", Category::misc},
    };
}

/// 3x5 digit glyphs, one row per 3-bit nibble (MSB = leftmost pixel).
inline constexpr std::array<std::array<std::uint8_t, 5>, 10> kDigitFont = {{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
}};

class MiniAtari {
public:
    explicit MiniAtari(EnvConfig config = {}) : config_(config) { config_.validate(); }

    const EnvConfig& config() const { return config_; }
    std::vector<VariableInfo> variables() const { return env_variables(); }

    EnvState reset(Rng& rng) const {
        EnvState s;
        s.enemy_row = rng.below(config_.enemy_rows());
        s.enemy_x = static_cast<int>(rng.below(enemy_x_max() + 1));
        s.enemy_dir = rng.bernoulli(0.5) ? 1 : -1;
        respawn_agent(s, rng);
        respawn_ball(s, rng);
        return s;
    }

    /// Advances one frame. `rng` is consumed only when the ball or the agent respawns.
    EnvState step(const EnvState& s, std::size_t action, Rng& rng) const {
        if (action >= kNumActions) {
            throw ConfigError("env_step: action " + std::to_string(action) + " outside [0, " +
                              std::to_string(kNumActions) + ")");
        }
        EnvState n = s;
        const int step = static_cast<int>(config_.agent_step);
        switch (static_cast<Action>(action)) {
            case Action::noop: break;
            case Action::up: n.agent_y -= step; break;
            case Action::down: n.agent_y += step; break;
            case Action::left: n.agent_x -= step; break;
            case Action::right: n.agent_x += step; break;
        }
        n.agent_x = std::clamp(n.agent_x, 0, static_cast<int>(agent_x_max()));
        n.agent_y = std::clamp(n.agent_y, static_cast<int>(config_.play_top()), static_cast<int>(agent_y_max()));

        if (config_.enemy_speed != 0) {
            int ex = n.enemy_x + n.enemy_dir * config_.enemy_speed;
            const int lim = static_cast<int>(enemy_x_max());
            if (ex < 0 || ex > lim) {
                ex = std::clamp(ex, 0, lim);
                n.enemy_dir = -n.enemy_dir;
                n.enemy_row = (n.enemy_row + 1) % config_.enemy_rows();
            }
            n.enemy_x = ex;
        }

        bounce(n.ball_x, n.ball_vx, 0, static_cast<int>(ball_x_max()));
        bounce(n.ball_y, n.ball_vy, static_cast<int>(config_.play_top()), static_cast<int>(ball_y_max()));

        if (agent_hits_enemy(n)) respawn_agent(n, rng);
        if (agent_hits_ball(n)) {
            n.score = static_cast<std::uint8_t>(n.score + 1);
            respawn_ball(n, rng);
        }
        n.t = s.t + 1;
        return n;
    }

    StateVariables labels(const EnvState& s) const {
        return {{static_cast<std::uint8_t>(s.agent_x), static_cast<std::uint8_t>(s.agent_y),
                 static_cast<std::uint8_t>(s.ball_x), static_cast<std::uint8_t>(s.ball_y),
                 static_cast<std::uint8_t>(s.enemy_x), static_cast<std::uint8_t>(enemy_y(s)), s.score,
                 clock_value(s), config_.lives, static_cast<std::uint8_t>(s.ball_vx > 0 ? 1 : 0)}};
    }

    /// Grayscale frame, one byte per pixel, row-major.
    std::vector<std::uint8_t> render(const EnvState& s) const {
        std::vector<std::uint8_t> img(config_.height * config_.width, 0);
        auto fill = [&](int x, int y, std::size_t w, std::size_t h, std::uint8_t v) {
            for (std::size_t dy = 0; dy < h; ++dy)
                for (std::size_t dx = 0; dx < w; ++dx) img[(y + dy) * config_.width + (x + dx)] = v;
        };
        fill(s.enemy_x, enemy_y(s), config_.enemy_width, config_.enemy_height, shade::enemy);
        fill(s.agent_x, s.agent_y, config_.agent_size, config_.agent_size, shade::agent);
        fill(s.ball_x, s.ball_y, config_.ball_size, config_.ball_size, shade::ball);

        // Score: three decimal digits at the top-left.
        const unsigned score = s.score;
        const unsigned digits[3] = {score / 100, (score / 10) % 10, score % 10};
        for (int d = 0; d < 3; ++d) {
            for (int row = 0; row < 5; ++row) {
                const std::uint8_t bits = kDigitFont[digits[d]][row];
                for (int col = 0; col < 3; ++col)
                    if (bits & (4 >> col)) img[(1 + row) * config_.width + (1 + d * 4 + col)] = shade::hud;
            }
        }
        // Clock: bar whose length is the clock value.
        const std::size_t clock_x = clock_origin();
        for (std::size_t i = 0; i < clock_value(s); ++i) {
            img[2 * config_.width + clock_x + i] = shade::hud;
            img[3 * config_.width + clock_x + i] = shade::hud;
        }
        // Lives: 2x2 pips.
        for (std::size_t i = 0; i < config_.lives; ++i) fill(static_cast<int>(clock_x + 17 + 3 * i), 2, 2, 2, shade::hud);
        // Direction flag: a bar across the half of the bottom HUD rows the ball is heading to.
        fill(static_cast<int>(direction_x(s.ball_vx > 0)), 6, config_.width / 2, 2, shade::hud);
        return img;
    }

    int enemy_y(const EnvState& s) const {
        return static_cast<int>(config_.play_top() + s.enemy_row * config_.enemy_row_spacing);
    }
    std::uint8_t clock_value(const EnvState& s) const {
        return static_cast<std::uint8_t>((s.t / config_.clock_period) % 16);
    }
    std::size_t clock_origin() const { return 14; }
    std::size_t direction_x(bool right) const { return right ? config_.width - config_.width / 2 : 0; }

private:
    std::size_t agent_x_max() const { return config_.width - config_.agent_size; }
    std::size_t agent_y_max() const { return config_.height - config_.agent_size; }
    std::size_t enemy_x_max() const { return config_.width - config_.enemy_width; }
    // Largest lattice coordinates that keep the ball inside the play field.
    std::size_t ball_x_max() const {
        return (config_.width - config_.ball_size) / config_.ball_lattice * config_.ball_lattice;
    }
    std::size_t ball_y_max() const {
        const std::size_t span = config_.height - config_.ball_size - config_.play_top();
        return config_.play_top() + span / config_.ball_lattice * config_.ball_lattice;
    }

    static void bounce(int& pos, int& vel, int lo, int hi) {
        int p = pos + vel;
        if (p < lo) {
            p = 2 * lo - p;
            vel = -vel;
        } else if (p > hi) {
            p = 2 * hi - p;
            vel = -vel;
        }
        pos = std::clamp(p, lo, hi);
    }

    bool agent_hits_ball(const EnvState& s) const {
        const int a = static_cast<int>(config_.agent_size), b = static_cast<int>(config_.ball_size);
        return s.ball_x < s.agent_x + a && s.agent_x < s.ball_x + b && s.ball_y < s.agent_y + a &&
               s.agent_y < s.ball_y + b;
    }

    bool agent_hits_enemy(const EnvState& s) const {
        const int a = static_cast<int>(config_.agent_size);
        const int ew = static_cast<int>(config_.enemy_width), eh = static_cast<int>(config_.enemy_height);
        const int ey = enemy_y(s);
        return s.enemy_x < s.agent_x + a && s.agent_x < s.enemy_x + ew && ey < s.agent_y + a && s.agent_y < ey + eh;
    }

    // Touching the enemy sends the agent back to a random free spot.
    void respawn_agent(EnvState& s, Rng& rng) const {
        const std::size_t step = config_.agent_step;
        do {
            s.agent_x = static_cast<int>(step * rng.below(agent_x_max() / step + 1));
            s.agent_y = static_cast<int>(config_.play_top() + step * rng.below((agent_y_max() - config_.play_top()) / step + 1));
        } while (agent_hits_enemy(s));
    }

    void respawn_ball(EnvState& s, Rng& rng) const {
        const std::size_t lat = config_.ball_lattice;
        do {
            s.ball_x = static_cast<int>(lat * rng.below(ball_x_max() / lat + 1));
            s.ball_y = static_cast<int>(config_.play_top() + lat * rng.below((ball_y_max() - config_.play_top()) / lat + 1));
        } while (agent_hits_ball(s));
        const int l = static_cast<int>(lat);
        const auto speeds = static_cast<std::uint64_t>((config_.ball_speed_max - config_.ball_speed_min) / l + 1);
        s.ball_vx = (config_.ball_speed_min + l * static_cast<int>(rng.below(speeds))) * (rng.bernoulli(0.5) ? 1 : -1);
        s.ball_vy = (config_.ball_speed_min + l * static_cast<int>(rng.below(speeds))) * (rng.bernoulli(0.5) ? 1 : -1);
    }

    EnvConfig config_;
};

}  // namespace mstdim
