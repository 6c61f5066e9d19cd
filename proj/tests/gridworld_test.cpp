#include "mainvla/gridworld.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "oracles.hpp"

using namespace mainvla;

namespace {

// fixpoint DP shortest path, independent of the library BFS
std::vector<int> dp_distance(const Scenario& sc, const std::vector<std::pair<int, int>>& goals) {
    const int n = sc.size;
    const int inf = 1 << 20;
    std::vector<int> d(static_cast<std::size_t>(n) * n, inf);
    for (const auto& [r, c] : goals)
        if (sc.walkable(r, c)) d[r * n + c] = 0;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                if (!sc.walkable(r, c)) continue;
                int best = d[r * n + c];
                if (r > 0 && sc.walkable(r - 1, c)) best = std::min(best, d[(r - 1) * n + c] + 1);
                if (r + 1 < n && sc.walkable(r + 1, c)) best = std::min(best, d[(r + 1) * n + c] + 1);
                if (c > 0 && sc.walkable(r, c - 1)) best = std::min(best, d[r * n + c - 1] + 1);
                if (c + 1 < n && sc.walkable(r, c + 1)) best = std::min(best, d[r * n + c + 1] + 1);
                if (best < d[r * n + c]) {
                    d[r * n + c] = best;
                    changed = true;
                }
            }
    }
    for (auto& v : d)
        if (v >= inf) v = dist_unreachable;
    return d;
}

Scenario tiny_engage_scenario() {
    Scenario sc;
    sc.size = 8;
    sc.cells.assign(64, static_cast<std::uint8_t>(Entity::empty));
    sc.set(3, 4, Entity::wall);
    sc.set(3, 6, Entity::enemy);
    sc.set(7, 7, Entity::item);
    sc.set(0, 7, Entity::vehicle);
    sc.set(7, 0, Entity::safezone);
    sc.agent_r0 = 0;
    sc.agent_c0 = 0;
    sc.task = Task::engage_enemy;
    sc.instruction = instruction_templates(sc.task)[0];
    return sc;
}

}  // namespace

TEST(Scenario, generation_produces_feasible_boards) {
    const ScenarioConfig cfg;
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        const auto sc = generate_scenario(cfg, rng);
        EXPECT_EQ(sc.at(sc.agent_r0, sc.agent_c0), Entity::empty);
        std::map<Entity, int> counts;
        for (int r = 0; r < sc.size; ++r)
            for (int c = 0; c < sc.size; ++c) counts[sc.at(r, c)]++;
        EXPECT_GE(counts[Entity::item], 1);
        EXPECT_GE(counts[Entity::vehicle], 1);
        EXPECT_GE(counts[Entity::safezone], 1);
        EXPECT_GE(counts[Entity::enemy], 1);
        EXPECT_GE(counts[Entity::wall], cfg.min_walls * cfg.min_wall_len);
        for (int t = 0; t < n_tasks; ++t) {
            const auto goals = goal_cells(sc, static_cast<Task>(t), cfg.fire_range);
            ASSERT_FALSE(goals.empty());
            const auto dist = distance_field(sc, goals);
            const int d0 = dist[sc.agent_r0 * sc.size + sc.agent_c0];
            EXPECT_NE(d0, dist_unreachable);
            EXPECT_GE(d0, cfg.min_start_dist);
        }
        EXPECT_FALSE(sc.instruction.empty());
    }
}

TEST(Scenario, distance_field_matches_dp_reference) {
    const ScenarioConfig cfg;
    Rng rng(8);
    for (int i = 0; i < 30; ++i) {
        const auto sc = generate_scenario(cfg, rng);
        for (int t = 0; t < n_tasks; ++t) {
            const auto goals = goal_cells(sc, static_cast<Task>(t), cfg.fire_range);
            EXPECT_EQ(distance_field(sc, goals), dp_distance(sc, goals));
        }
    }
}

TEST(FiringCell, needs_wall_adjacency_and_enemy_in_range) {
    const auto sc = tiny_engage_scenario();
    EXPECT_TRUE(is_firing_cell(sc, 3, 5, 3));   // next to wall, 1 from enemy
    EXPECT_TRUE(is_firing_cell(sc, 2, 4, 3));   // above wall, 3 from enemy
    EXPECT_TRUE(is_firing_cell(sc, 3, 3, 3));   // left of wall, exactly at range
    EXPECT_FALSE(is_firing_cell(sc, 3, 3, 2));  // same cell, shorter range
    EXPECT_FALSE(is_firing_cell(sc, 4, 3, 3));  // diagonal to wall only
    EXPECT_FALSE(is_firing_cell(sc, 3, 6, 3));  // enemy cell is not walkable
    EXPECT_FALSE(is_firing_cell(sc, 0, 0, 3));  // open ground
}

TEST(Sim, movement_blocked_by_walls_enemies_and_edges) {
    auto sc = tiny_engage_scenario();
    sc.task = Task::reach_item;
    ScenarioConfig cfg;
    Sim sim(sc, cfg);
    sim.apply(act_north);  // off board
    EXPECT_EQ(sim.agent_r(), 0);
    EXPECT_EQ(sim.agent_c(), 0);
    sim.apply(act_west);  // off board
    EXPECT_EQ(sim.agent_c(), 0);
    // walk to (3,3), then east is wall at (3,4)
    sim.apply(act_south);
    sim.apply(act_south);
    sim.apply(act_south);
    sim.apply(act_east);
    sim.apply(act_east);
    sim.apply(act_east);
    EXPECT_EQ(sim.agent_r(), 3);
    EXPECT_EQ(sim.agent_c(), 3);
    sim.apply(act_east);
    EXPECT_EQ(sim.agent_c(), 3);  // wall blocks
    // enemy blocks: move to (2,5) then south onto... (3,5) is free; try walking onto enemy (3,6)
    sim.apply(act_north);
    sim.apply(act_east);
    sim.apply(act_east);
    sim.apply(act_east);
    EXPECT_EQ(sim.agent_r(), 2);
    EXPECT_EQ(sim.agent_c(), 6);
    sim.apply(act_south);  // enemy at (3,6)
    EXPECT_EQ(sim.agent_r(), 2);
    EXPECT_EQ(sim.agent_c(), 6);
}

TEST(Sim, attack_only_succeeds_on_firing_cell) {
    const auto sc = tiny_engage_scenario();
    ScenarioConfig cfg;
    Sim sim(sc, cfg);
    sim.apply(act_attack);  // open ground
    EXPECT_FALSE(sim.done());
    EXPECT_FALSE(sim.success());
    // walk to (3,5), a firing cell
    sim.apply(act_south);
    sim.apply(act_south);
    sim.apply(act_south);
    EXPECT_EQ(sim.agent_r(), 3);
    sim.apply(act_east);
    sim.apply(act_east);
    sim.apply(act_east);
    EXPECT_EQ(sim.agent_c(), 3);
    sim.apply(act_north);
    sim.apply(act_east);
    sim.apply(act_east);
    sim.apply(act_south);
    EXPECT_EQ(sim.agent_r(), 3);
    EXPECT_EQ(sim.agent_c(), 5);
    EXPECT_FALSE(sim.done());
    sim.apply(act_attack);
    EXPECT_TRUE(sim.done());
    EXPECT_TRUE(sim.success());
    EXPECT_THROW(sim.apply(act_noop), DataError);
}

TEST(Sim, budget_exhaustion_fails_episode) {
    const auto sc = tiny_engage_scenario();
    ScenarioConfig cfg;
    Sim sim(sc, cfg);
    while (!sim.done()) sim.apply(act_noop);
    EXPECT_FALSE(sim.success());
    EXPECT_EQ(sim.steps(), sim.budget());
}

TEST(Sim, expert_reaches_goal_on_shortest_path) {
    const ScenarioConfig cfg;
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const auto sc = generate_scenario(cfg, rng);
        Sim sim(sc, cfg);
        const int d0 = sim.dist_at(sim.agent_r(), sim.agent_c());
        int prev = d0;
        while (!sim.done()) {
            const int a = sim.expert_action();
            sim.apply(a);
            if (a < 4) {
                const int d = sim.dist_at(sim.agent_r(), sim.agent_c());
                EXPECT_EQ(d, prev - 1);
                prev = d;
            }
        }
        EXPECT_TRUE(sim.success()) << "scenario " << i;
        EXPECT_EQ(sim.steps(), d0 + (sc.task == Task::engage_enemy ? 1 : 0));
    }
}

TEST(Sim, expert_tie_break_is_north_east_south_west) {
    Scenario sc;
    sc.size = 8;
    sc.cells.assign(64, static_cast<std::uint8_t>(Entity::empty));
    sc.set(2, 2, Entity::item);
    sc.set(0, 4, Entity::vehicle);
    sc.set(7, 7, Entity::safezone);
    sc.set(5, 0, Entity::enemy);
    sc.set(5, 1, Entity::wall);
    sc.agent_r0 = 4;
    sc.agent_c0 = 4;
    sc.task = Task::reach_item;
    sc.instruction = instruction_templates(sc.task)[0];
    ScenarioConfig cfg;
    Sim sim(sc, cfg);
    // both north and west reduce distance; north wins
    EXPECT_EQ(sim.expert_action(), act_north);
    sim.apply(act_north);
    EXPECT_EQ(sim.expert_action(), act_north);
    sim.apply(act_north);
    EXPECT_EQ(sim.expert_action(), act_west);
}

TEST(Render, semantic_map_shows_agent_over_ground) {
    const auto sc = tiny_engage_scenario();
    const auto map = render_semantic(sc, 3, 6, 4);  // pretend agent overlaps enemy cell for class purposes
    EXPECT_EQ(map.width, 32);
    // wall cell (3,4) renders cover in all 16 pixels
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_EQ(map.at(12 + i, 16 + j), cls::cover);
    // agent block: person pixels centered in cell, ground elsewhere
    const auto map2 = render_semantic(sc, 0, 0, 4);
    int person_px = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) person_px += map2.at(i, j) == cls::person;
    EXPECT_EQ(person_px, 4);
    EXPECT_EQ(map2.at(1, 1), cls::person);
    EXPECT_EQ(map2.at(0, 0), cls::other);
    // pooled 4x4-px cells keep the agent and the ground it stands on
    const auto grid = pool_semantic_map(map2, ClassHierarchy::standard(), PoolConfig{4, 4, 2});
    EXPECT_EQ(grid.cell(0, 0)[0], cls::person);
    EXPECT_EQ(grid.cell(0, 0)[1], cls::other);
}

TEST(Render, raster_statistics_match_texture_settings) {
    const auto sc = tiny_engage_scenario();
    RenderConfig rc;
    Rng rng(10);
    const auto px = render_raster(sc, 0, 0, rc, rng);
    ASSERT_EQ(px.size(), 32u * 32u);
    // wall cell (3,4): 16 pixels with mean 0.3, spread 0.05
    double sum = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) sum += dequantize_unit(px[(12 + i) * 32 + 16 + j]);
    EXPECT_NEAR(sum / 16.0, rc.mean[static_cast<int>(Entity::wall)], 0.08);
    // background mean roughly 0 with wide spread
    double bg = 0.0, bg2 = 0.0;
    int n = 0;
    for (int i = 16; i < 32; ++i)
        for (int j = 8; j < 16; ++j) {
            const double v = dequantize_unit(px[i * 32 + j]);
            bg += v;
            bg2 += v * v;
            ++n;
        }
    EXPECT_NEAR(bg / n, 0.0, 0.15);
    EXPECT_GT(bg2 / n, 0.25);
}

TEST(Render, raster_is_deterministic_per_seed) {
    const auto sc = tiny_engage_scenario();
    RenderConfig rc;
    Rng a(42), b(42), c(43);
    EXPECT_EQ(render_raster(sc, 2, 2, rc, a), render_raster(sc, 2, 2, rc, b));
    EXPECT_NE(render_raster(sc, 2, 2, rc, a), render_raster(sc, 2, 2, rc, c));
}

TEST(Render, quantizer_round_trips_all_levels) {
    for (int level = 0; level < 256; ++level)
        EXPECT_EQ(quantize_unit(dequantize_unit(static_cast<std::uint8_t>(level))), level);
    EXPECT_EQ(quantize_unit(-5.0), 0);
    EXPECT_EQ(quantize_unit(5.0), 255);
}

TEST(Instructions, every_task_has_variants_with_lowercase_words) {
    for (int t = 0; t < n_tasks; ++t) {
        const auto& variants = instruction_templates(static_cast<Task>(t));
        EXPECT_GE(variants.size(), 3u);
        for (const auto& words : variants) {
            EXPECT_FALSE(words.empty());
            for (const auto& w : words)
                for (char ch : w) EXPECT_TRUE(ch >= 'a' && ch <= 'z');
        }
    }
}
