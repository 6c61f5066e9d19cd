#include "mainvla/semantic_grid.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace mainvla;

namespace {

SemanticMap fill_cell(SemanticMap map, int gr, int gc, int cell, std::uint8_t id, int n) {
    // paint n pixels of class id into pooled cell (gr, gc), row major
    int painted = 0;
    for (int r = gr * cell; r < (gr + 1) * cell && painted < n; ++r)
        for (int c = gc * cell; c < (gc + 1) * cell && painted < n; ++c, ++painted) map.at(r, c) = id;
    return map;
}

}  // namespace

TEST(ClassHierarchy, standard_order) {
    const auto hc = ClassHierarchy::standard();
    hc.validate();
    EXPECT_EQ(hc.num_classes(), 6);
    EXPECT_GT(hc.ranks[cls::person], hc.ranks[cls::vehicle]);
    EXPECT_GT(hc.ranks[cls::vehicle], hc.ranks[cls::cover]);
    EXPECT_GT(hc.ranks[cls::cover], hc.ranks[cls::item]);
    EXPECT_GT(hc.ranks[cls::item], hc.ranks[cls::other]);
    EXPECT_EQ(hc.pad_id, cls::pad);
}

TEST(ClassHierarchy, rejects_bad_configs) {
    auto hc = ClassHierarchy::standard();
    hc.ranks.pop_back();
    EXPECT_THROW(hc.validate(), ConfigError);
    hc = ClassHierarchy::standard();
    hc.pad_id = 9;
    EXPECT_THROW(hc.validate(), ConfigError);
    hc = ClassHierarchy::standard();
    hc.names[1] = hc.names[0];
    EXPECT_THROW(hc.validate(), ConfigError);
}

TEST(Pooling, background_only_cell_gives_single_background_token) {
    const auto hc = ClassHierarchy::standard();
    SemanticMap map(8, 8, cls::other);
    const auto grid = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
    EXPECT_EQ(grid.cell(0, 0)[0], cls::other);
    EXPECT_EQ(grid.cell(0, 0)[1], cls::pad);
}

TEST(Pooling, person_on_background_masks_nothing_needed) {
    const auto hc = ClassHierarchy::standard();
    auto map = fill_cell(SemanticMap(8, 8, cls::other), 0, 0, 8, cls::person, 3);
    const auto grid = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
    EXPECT_EQ(grid.cell(0, 0)[0], cls::person);
    EXPECT_EQ(grid.cell(0, 0)[1], cls::other);
}

TEST(Pooling, two_entities_mask_dominant_background) {
    // 60 background pixels lose both slots to 3 person + 1 vehicle pixels
    const auto hc = ClassHierarchy::standard();
    auto map = fill_cell(SemanticMap(8, 8, cls::other), 0, 0, 8, cls::person, 3);
    map.at(7, 7) = cls::vehicle;
    const auto grid = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
    EXPECT_EQ(grid.cell(0, 0)[0], cls::person);
    EXPECT_EQ(grid.cell(0, 0)[1], cls::vehicle);
}

TEST(Pooling, priority_beats_count) {
    const auto hc = ClassHierarchy::standard();
    SemanticMap map(8, 8, cls::item);
    map.at(0, 0) = cls::person;  // 1 person pixel vs 63 item pixels
    const auto grid = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
    EXPECT_EQ(grid.cell(0, 0)[0], cls::person);
    EXPECT_EQ(grid.cell(0, 0)[1], cls::item);
}

TEST(Pooling, tied_ranks_fall_back_to_count_then_id) {
    ClassHierarchy hc;
    hc.names = {"a", "b", "c", "pad"};
    hc.ranks = {1, 1, 1, -1};
    hc.pad_id = 3;
    SemanticMap map(4, 4, 0);
    map.at(0, 0) = 1;
    map.at(0, 1) = 1;
    map.at(1, 0) = 2;
    map.at(1, 1) = 2;
    const auto grid = pool_semantic_map(map, hc, PoolConfig{4, 4, 3});
    EXPECT_EQ(grid.cell(0, 0)[0], 0);  // 12 pixels
    EXPECT_EQ(grid.cell(0, 0)[1], 1);  // 2 pixels, id 1 < id 2
    EXPECT_EQ(grid.cell(0, 0)[2], 2);
}

TEST(Pooling, pixel_permutation_inside_cell_is_irrelevant) {
    const auto hc = ClassHierarchy::standard();
    Rng rng(11);
    auto map = oracle::random_map(rng, 16, 16, hc.num_classes(), hc.pad_id);
    const auto base = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = map;
        for (int gr = 0; gr < 2; ++gr)
            for (int gc = 0; gc < 2; ++gc)
                for (int i = 63; i > 0; --i) {
                    const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
                    std::swap(shuffled.at(gr * 8 + i / 8, gc * 8 + i % 8),
                              shuffled.at(gr * 8 + j / 8, gc * 8 + j % 8));
                }
        const auto got = pool_semantic_map(shuffled, hc, PoolConfig{8, 8, 2});
        EXPECT_EQ(got.tokens, base.tokens);
    }
}

TEST(Pooling, top1_is_prefix_of_top2) {
    const auto hc = ClassHierarchy::standard();
    Rng rng(12);
    for (int trial = 0; trial < 25; ++trial) {
        const auto map = oracle::random_map(rng, 32, 32, hc.num_classes(), hc.pad_id);
        const auto g1 = pool_semantic_map(map, hc, PoolConfig{8, 8, 1});
        const auto g2 = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
        for (int gr = 0; gr < g1.grid_h; ++gr)
            for (int gc = 0; gc < g1.grid_w; ++gc) EXPECT_EQ(g1.cell(gr, gc)[0], g2.cell(gr, gc)[0]);
    }
}

TEST(Pooling, matches_reference_enumeration) {
    const auto hc = ClassHierarchy::standard();
    const PoolConfig cfg{8, 8, 2};
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        const auto map = oracle::random_map(rng, 32, 32, hc.num_classes(), hc.pad_id);
        const auto got = pool_semantic_map(map, hc, cfg);
        const auto want = oracle::pool_reference(map, hc, cfg);
        ASSERT_EQ(got.tokens, want) << "seed " << seed;
    }
}

TEST(Pooling, matches_reference_with_tied_rank_hierarchy) {
    ClassHierarchy hc;
    hc.names = {"a", "b", "c", "d", "e", "pad"};
    hc.ranks = {0, 2, 2, 1, 0, -1};
    hc.pad_id = 5;
    const PoolConfig cfg{4, 8, 3};
    for (int seed = 0; seed < 50; ++seed) {
        Rng rng(2000 + seed);
        const auto map = oracle::random_map(rng, 16, 16, hc.num_classes(), hc.pad_id);
        const auto got = pool_semantic_map(map, hc, cfg);
        ASSERT_EQ(got.tokens, oracle::pool_reference(map, hc, cfg)) << "seed " << seed;
    }
}

TEST(Pooling, rejects_bad_inputs) {
    const auto hc = ClassHierarchy::standard();
    EXPECT_THROW(pool_semantic_map(SemanticMap(10, 10), hc, PoolConfig{8, 8, 2}), ConfigError);
    SemanticMap with_pad(8, 8, cls::other);
    with_pad.at(0, 0) = cls::pad;
    EXPECT_THROW(pool_semantic_map(with_pad, hc, PoolConfig{8, 8, 2}), DataError);
    SemanticMap bad_id(8, 8, cls::other);
    bad_id.at(0, 0) = 17;
    EXPECT_THROW(pool_semantic_map(bad_id, hc, PoolConfig{8, 8, 2}), DataError);
}

TEST(Flatten, round_trip) {
    const auto hc = ClassHierarchy::standard();
    Rng rng(3);
    const auto map = oracle::random_map(rng, 32, 32, hc.num_classes(), hc.pad_id);
    const auto grid = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
    const auto flat = flatten(grid);
    EXPECT_EQ(flat.size(), 4u * 4u * 2u);
    const auto back = unflatten(flat, grid.grid_w, grid.grid_h, grid.k);
    EXPECT_EQ(back.tokens, grid.tokens);
    EXPECT_THROW(unflatten(flat, 4, 4, 3), DataError);
}

TEST(MapFormat, round_trip_and_validation) {
    const auto hc = ClassHierarchy::standard();
    Rng rng(4);
    const auto map = oracle::random_map(rng, 24, 16, hc.num_classes(), hc.pad_id);
    std::stringstream ss;
    write_map(ss, map);
    EXPECT_EQ(ss.str().size(), 4u + 4u + 4u + 24u * 16u);
    const auto back = read_map(ss);
    EXPECT_EQ(back.width, map.width);
    EXPECT_EQ(back.height, map.height);
    EXPECT_EQ(back.cells, map.cells);

    std::stringstream bad("SMEP\x01\x00\x00\x00\x01\x00\x00\x00 ");
    EXPECT_THROW(read_map(bad), DataError);
    std::stringstream trunc;
    write_u32le(trunc, 8);
    EXPECT_THROW(read_map(trunc), DataError);
}
