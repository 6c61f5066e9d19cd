#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "common.hpp"
#include "semantic_grid.hpp"

namespace mainvla {

enum class Entity : std::uint8_t { empty = 0, agent, enemy, wall, item, vehicle, safezone };
inline constexpr int n_entity_types = 7;

inline constexpr int act_north = 0;
inline constexpr int act_east = 1;
inline constexpr int act_south = 2;
inline constexpr int act_west = 3;
inline constexpr int act_attack = 4;
inline constexpr int act_noop = 5;
inline constexpr int n_actions = 6;

inline const char* action_name(int a) {
    static const char* names[] = {"north", "east", "south", "west", "attack", "noop"};
    if (a < 0 || a >= n_actions) throw DataError("action_name: bad action id");
    return names[a];
}

enum class Task : std::uint8_t { reach_item = 0, reach_vehicle, reach_safezone, engage_enemy };
inline constexpr int n_tasks = 4;

inline const char* task_name(Task t) {
    static const char* names[] = {"reach_item", "reach_vehicle", "reach_safezone", "engage_enemy"};
    return names[static_cast<int>(t)];
}

// broad semantic class each board entity renders as
inline std::uint8_t entity_class(Entity e) {
    switch (e) {
        case Entity::empty: return cls::other;
        case Entity::agent: return cls::person;
        case Entity::enemy: return cls::person;
        case Entity::wall: return cls::cover;
        case Entity::item: return cls::item;
        case Entity::vehicle: return cls::vehicle;
        case Entity::safezone: return cls::item;
    }
    throw DataError("entity_class: bad entity");
}

struct ScenarioConfig {
    int board_size = 16;
    int min_walls = 3, max_walls = 6;      // wall segments
    int min_wall_len = 2, max_wall_len = 6;
    int min_items = 1, max_items = 2;
    int min_vehicles = 1, max_vehicles = 2;
    int min_safezones = 1, max_safezones = 1;
    int min_enemies = 1, max_enemies = 2;
    int fire_range = 3;      // max Manhattan distance for an attack to connect
    int min_start_dist = 2;  // agent never spawns closer than this to any goal
    int budget_slack = 10;
    int max_generation_tries = 500;

    void validate() const {
        if (board_size < 8) throw ConfigError("scenario: board too small");
        if (min_walls < 0 || max_walls < min_walls) throw ConfigError("scenario: bad wall counts");
        if (min_wall_len < 1 || max_wall_len < min_wall_len) throw ConfigError("scenario: bad wall lengths");
        if (min_items < 1 || min_vehicles < 1 || min_safezones < 1 || min_enemies < 1)
            throw ConfigError("scenario: every entity type needs at least one instance");
        if (fire_range < 1) throw ConfigError("scenario: fire range must be positive");
        if (budget_slack < 0) throw ConfigError("scenario: negative budget slack");
    }
};

// Static world plus task. The agent is tracked separately so the cell grid
// never mutates.
struct Scenario {
    int size = 0;
    std::vector<std::uint8_t> cells;  // Entity values, row major, agent excluded
    int agent_r0 = 0, agent_c0 = 0;
    Task task = Task::reach_item;
    int instruction_variant = 0;
    std::vector<std::string> instruction;

    Entity at(int r, int c) const {
        if (r < 0 || r >= size || c < 0 || c >= size) throw DataError("scenario: index out of range");
        return static_cast<Entity>(cells[static_cast<std::size_t>(r) * size + c]);
    }
    void set(int r, int c, Entity e) {
        if (r < 0 || r >= size || c < 0 || c >= size) throw DataError("scenario: index out of range");
        cells[static_cast<std::size_t>(r) * size + c] = static_cast<std::uint8_t>(e);
    }
    bool inside(int r, int c) const { return r >= 0 && r < size && c >= 0 && c < size; }
    bool walkable(int r, int c) const {
        if (!inside(r, c)) return false;
        const Entity e = at(r, c);
        return e != Entity::wall && e != Entity::enemy;
    }
};

inline Entity task_target(Task t) {
    switch (t) {
        case Task::reach_item: return Entity::item;
        case Task::reach_vehicle: return Entity::vehicle;
        case Task::reach_safezone: return Entity::safezone;
        case Task::engage_enemy: return Entity::enemy;
    }
    throw DataError("task_target: bad task");
}

// walkable, next to cover, close enough to some enemy to attack
inline bool is_firing_cell(const Scenario& sc, int r, int c, int fire_range) {
    if (!sc.walkable(r, c)) return false;
    static const int dr[] = {-1, 0, 1, 0};
    static const int dc[] = {0, 1, 0, -1};
    bool near_wall = false;
    for (int d = 0; d < 4; ++d)
        if (sc.inside(r + dr[d], c + dc[d]) && sc.at(r + dr[d], c + dc[d]) == Entity::wall) near_wall = true;
    if (!near_wall) return false;
    for (int er = 0; er < sc.size; ++er)
        for (int ec = 0; ec < sc.size; ++ec)
            if (sc.at(er, ec) == Entity::enemy && std::abs(er - r) + std::abs(ec - c) <= fire_range) return true;
    return false;
}

// cells the expert steers toward for a task
inline std::vector<std::pair<int, int>> goal_cells(const Scenario& sc, Task task, int fire_range) {
    std::vector<std::pair<int, int>> goals;
    for (int r = 0; r < sc.size; ++r) {
        for (int c = 0; c < sc.size; ++c) {
            if (task == Task::engage_enemy) {
                if (is_firing_cell(sc, r, c, fire_range)) goals.emplace_back(r, c);
            } else if (sc.at(r, c) == task_target(task)) {
                goals.emplace_back(r, c);
            }
        }
    }
    return goals;
}

inline constexpr int dist_unreachable = std::numeric_limits<int>::max();

// multi-source BFS over walkable cells
inline std::vector<int> distance_field(const Scenario& sc, const std::vector<std::pair<int, int>>& goals) {
    std::vector<int> dist(static_cast<std::size_t>(sc.size) * sc.size, dist_unreachable);
    std::deque<std::pair<int, int>> queue;
    for (const auto& [r, c] : goals) {
        if (!sc.walkable(r, c)) continue;
        dist[static_cast<std::size_t>(r) * sc.size + c] = 0;
        queue.emplace_back(r, c);
    }
    static const int dr[] = {-1, 0, 1, 0};
    static const int dc[] = {0, 1, 0, -1};
    while (!queue.empty()) {
        const auto [r, c] = queue.front();
        queue.pop_front();
        const int d = dist[static_cast<std::size_t>(r) * sc.size + c];
        for (int k = 0; k < 4; ++k) {
            const int nr = r + dr[k], nc = c + dc[k];
            if (!sc.walkable(nr, nc)) continue;
            auto& slot = dist[static_cast<std::size_t>(nr) * sc.size + nc];
            if (slot == dist_unreachable) {
                slot = d + 1;
                queue.emplace_back(nr, nc);
            }
        }
    }
    return dist;
}

// One template per line, lowercase words. Some variants name the target
// obliquely so the mapping from words to intent is not a string match.
inline const std::vector<std::vector<std::string>>& instruction_templates(Task t) {
    static const std::vector<std::vector<std::vector<std::string>>> table = {
        {{"go", "to", "the", "item"},
         {"grab", "the", "item"},
         {"pick", "up", "the", "supplies"},
         {"secure", "the", "package"}},
        {{"go", "to", "the", "vehicle"},
         {"board", "the", "vehicle"},
         {"get", "to", "the", "transport"},
         {"reach", "the", "truck"}},
        {{"move", "to", "the", "safezone"},
         {"retreat", "to", "shelter"},
         {"fall", "back", "to", "the", "safe", "area"},
         {"head", "for", "the", "safezone"}},
        {{"attack", "the", "enemy", "from", "cover"},
         {"engage", "the", "hostile", "using", "cover"},
         {"take", "out", "the", "threat", "from", "behind", "the", "wall"},
         {"fight", "the", "enemy", "from", "behind", "cover"}}};
    return table[static_cast<int>(t)];
}

inline Scenario generate_scenario(const ScenarioConfig& cfg, Rng& rng) {
    cfg.validate();
    const int n = cfg.board_size;
    for (int attempt = 0; attempt < cfg.max_generation_tries; ++attempt) {
        Scenario sc;
        sc.size = n;
        sc.cells.assign(static_cast<std::size_t>(n) * n, static_cast<std::uint8_t>(Entity::empty));

        const int walls = rng.next_int(cfg.min_walls, cfg.max_walls);
        for (int w = 0; w < walls; ++w) {
            const bool horizontal = rng.next_below(2) == 0;
            const int len = rng.next_int(cfg.min_wall_len, cfg.max_wall_len);
            const int r = rng.next_int(0, horizontal ? n - 1 : n - len);
            const int c = rng.next_int(0, horizontal ? n - len : n - 1);
            for (int i = 0; i < len; ++i) sc.set(horizontal ? r : r + i, horizontal ? c + i : c, Entity::wall);
        }

        auto place = [&](Entity e, int lo, int hi) {
            const int count = rng.next_int(lo, hi);
            for (int i = 0; i < count; ++i) {
                for (int tries = 0; tries < 100; ++tries) {
                    const int r = rng.next_int(0, n - 1), c = rng.next_int(0, n - 1);
                    if (sc.at(r, c) == Entity::empty) {
                        sc.set(r, c, e);
                        break;
                    }
                }
            }
        };
        place(Entity::item, cfg.min_items, cfg.max_items);
        place(Entity::vehicle, cfg.min_vehicles, cfg.max_vehicles);
        place(Entity::safezone, cfg.min_safezones, cfg.max_safezones);
        place(Entity::enemy, cfg.min_enemies, cfg.max_enemies);

        // agent start must see every task as solvable, so one board serves
        // any task draw
        std::array<std::vector<int>, n_tasks> dists;
        bool feasible = true;
        for (int t = 0; t < n_tasks; ++t) {
            const auto goals = goal_cells(sc, static_cast<Task>(t), cfg.fire_range);
            if (goals.empty()) {
                feasible = false;
                break;
            }
            dists[t] = distance_field(sc, goals);
        }
        if (!feasible) continue;

        std::vector<std::pair<int, int>> starts;
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) {
                if (sc.at(r, c) != Entity::empty) continue;
                bool ok = true;
                for (int t = 0; t < n_tasks && ok; ++t) {
                    const int d = dists[t][static_cast<std::size_t>(r) * n + c];
                    ok = d != dist_unreachable && d >= cfg.min_start_dist;
                }
                if (ok) starts.emplace_back(r, c);
            }
        }
        if (starts.empty()) continue;

        const auto [ar, ac] = starts[rng.next_below(starts.size())];
        sc.agent_r0 = ar;
        sc.agent_c0 = ac;
        sc.task = static_cast<Task>(rng.next_below(n_tasks));
        const auto& variants = instruction_templates(sc.task);
        sc.instruction_variant = static_cast<int>(rng.next_below(variants.size()));
        sc.instruction = variants[sc.instruction_variant];
        return sc;
    }
    throw TrainingError("generate_scenario: no feasible board after max tries");
}

// Rollout state. The distance field for the scenario task is fixed at
// construction; the expert follows it greedily with a north, east, south,
// west preference on ties.
class Sim {
public:
    Sim(const Scenario& sc, const ScenarioConfig& cfg) : sc_(sc), cfg_(cfg) {
        agent_r_ = sc.agent_r0;
        agent_c_ = sc.agent_c0;
        dist_ = distance_field(sc, goal_cells(sc, sc.task, cfg.fire_range));
        const int d0 = dist_at(agent_r_, agent_c_);
        if (d0 == dist_unreachable) throw DataError("sim: task goal unreachable from start");
        budget_ = d0 + (sc.task == Task::engage_enemy ? 1 : 0) + cfg.budget_slack;
        check_success();
    }

    int agent_r() const { return agent_r_; }
    int agent_c() const { return agent_c_; }
    int steps() const { return steps_; }
    int budget() const { return budget_; }
    bool done() const { return done_; }
    bool success() const { return success_; }
    const Scenario& scenario() const { return sc_; }

    int dist_at(int r, int c) const { return dist_[static_cast<std::size_t>(r) * sc_.size + c]; }

    void apply(int action) {
        if (done_) throw DataError("sim: apply after episode end");
        if (action < 0 || action >= n_actions) throw DataError("sim: bad action id");
        ++steps_;
        if (action == act_attack) {
            if (sc_.task == Task::engage_enemy && is_firing_cell(sc_, agent_r_, agent_c_, cfg_.fire_range)) {
                success_ = true;
                done_ = true;
                return;
            }
        } else if (action != act_noop) {
            static const int dr[] = {-1, 0, 1, 0};
            static const int dc[] = {0, 1, 0, -1};
            const int nr = agent_r_ + dr[action], nc = agent_c_ + dc[action];
            if (sc_.walkable(nr, nc)) {
                agent_r_ = nr;
                agent_c_ = nc;
            }
        }
        check_success();
        if (!done_ && steps_ >= budget_) done_ = true;
    }

    int expert_action() const {
        if (done_) throw DataError("sim: expert_action after episode end");
        const int d = dist_at(agent_r_, agent_c_);
        if (d == dist_unreachable) throw DataError("sim: expert stranded");
        if (d == 0) {
            if (sc_.task == Task::engage_enemy) return act_attack;
            throw DataError("sim: expert already on goal");
        }
        static const int dr[] = {-1, 0, 1, 0};
        static const int dc[] = {0, 1, 0, -1};
        for (int a = 0; a < 4; ++a) {
            const int nr = agent_r_ + dr[a], nc = agent_c_ + dc[a];
            if (sc_.walkable(nr, nc) && dist_at(nr, nc) == d - 1) return a;
        }
        throw DataError("sim: distance field inconsistent");
    }

private:
    void check_success() {
        if (sc_.task != Task::engage_enemy && sc_.at(agent_r_, agent_c_) == task_target(sc_.task)) {
            success_ = true;
            done_ = true;
        }
    }

    Scenario sc_;
    ScenarioConfig cfg_;
    std::vector<int> dist_;
    int agent_r_ = 0, agent_c_ = 0;
    int steps_ = 0, budget_ = 0;
    bool done_ = false, success_ = false;
};

// Rendering. Each board cell covers cell_px x cell_px raster pixels. The
// agent is drawn as a centered 2x2 pixel block so whatever it stands on stays
// partly visible and pooling sees both classes in that cell.
struct RenderConfig {
    int cell_px = 4;
    // indexed by Entity; agent/enemy share a semantic class but get opposite
    // texture means so the policy can tell them apart
    std::array<double, n_entity_types> mean{0.0, 0.9, -0.9, 0.3, -0.3, 0.6, -0.6};
    std::array<double, n_entity_types> spread{0.8, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05};

    void validate() const {
        if (cell_px < 2) throw ConfigError("render: cell_px must be at least 2");
        for (double s : spread)
            if (s < 0.0) throw ConfigError("render: negative spread");
    }
};

inline std::uint8_t quantize_unit(double v) {
    v = std::min(1.0, std::max(-1.0, v));
    return static_cast<std::uint8_t>(std::lround((v + 1.0) * 0.5 * 255.0));
}

inline double dequantize_unit(std::uint8_t level) { return -1.0 + 2.0 * level / 255.0; }

// the agent marker covers half the cell edge (at least 2 px), centered
inline int agent_block_px(int cell_px) { return std::max(2, cell_px / 2); }

inline SemanticMap render_semantic(const Scenario& sc, int agent_r, int agent_c, int cell_px = 4) {
    const int px = sc.size * cell_px;
    SemanticMap map(px, px, cls::other);
    for (int r = 0; r < sc.size; ++r)
        for (int c = 0; c < sc.size; ++c) {
            const std::uint8_t id = entity_class(sc.at(r, c));
            for (int i = 0; i < cell_px; ++i)
                for (int j = 0; j < cell_px; ++j) map.at(r * cell_px + i, c * cell_px + j) = id;
        }
    const int block = agent_block_px(cell_px);
    const int off = (cell_px - block) / 2;
    for (int i = 0; i < block; ++i)
        for (int j = 0; j < block; ++j)
            map.at(agent_r * cell_px + off + i, agent_c * cell_px + off + j) = entity_class(Entity::agent);
    return map;
}

// pixel intensities on the 256-level lattice over [-1, 1]
inline std::vector<std::uint8_t> render_raster(const Scenario& sc, int agent_r, int agent_c,
                                               const RenderConfig& rc, Rng& rng) {
    rc.validate();
    const int px = sc.size * rc.cell_px;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(px) * px);
    auto fine_type = [&](int pr, int pc) {
        const int br = pr / rc.cell_px, bc = pc / rc.cell_px;
        const int block = agent_block_px(rc.cell_px);
        const int off = (rc.cell_px - block) / 2;
        if (br == agent_r && bc == agent_c) {
            const int ir = pr - br * rc.cell_px, ic = pc - bc * rc.cell_px;
            if (ir >= off && ir < off + block && ic >= off && ic < off + block)
                return static_cast<int>(Entity::agent);
        }
        return static_cast<int>(sc.at(br, bc));
    };
    for (int pr = 0; pr < px; ++pr)
        for (int pc = 0; pc < px; ++pc) {
            const int t = fine_type(pr, pc);
            const double v = rc.mean[t] + rc.spread[t] * rng.next_gaussian();
            out[static_cast<std::size_t>(pr) * px + pc] = quantize_unit(v);
        }
    return out;
}

}  // namespace mainvla
