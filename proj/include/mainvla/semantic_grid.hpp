#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace mainvla {

// Priority ordering over semantic classes. Higher rank pools first. One id is
// reserved as pad and fills empty slots in pooled cells; it must never appear
// in a source map.
struct ClassHierarchy {
    std::vector<std::string> names;  // index = class id
    std::vector<int> ranks;
    std::uint8_t pad_id = 0;

    int num_classes() const { return static_cast<int>(names.size()); }

    void validate() const {
        if (names.empty()) throw ConfigError("class hierarchy: no classes");
        if (names.size() != ranks.size()) throw ConfigError("class hierarchy: names/ranks size mismatch");
        if (names.size() > 250) throw ConfigError("class hierarchy: too many classes for u8 storage");
        if (pad_id >= names.size()) throw ConfigError("class hierarchy: pad id out of range");
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i].empty()) throw ConfigError("class hierarchy: empty class name");
            for (std::size_t j = i + 1; j < names.size(); ++j)
                if (names[i] == names[j]) throw ConfigError("class hierarchy: duplicate class name " + names[i]);
        }
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a("class-hierarchy");
        for (std::size_t i = 0; i < names.size(); ++i) {
            h = fnv1a(names[i], h);
            h = fnv1a_u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(ranks[i])), h);
        }
        return fnv1a_u64(pad_id, h);
    }

    // person > vehicle > cover > item > other, pad last
    static ClassHierarchy standard() {
        ClassHierarchy hc;
        hc.names = {"other", "item", "cover", "vehicle", "person", "pad"};
        hc.ranks = {0, 1, 2, 3, 4, -1};
        hc.pad_id = 5;
        return hc;
    }
};

namespace cls {
inline constexpr std::uint8_t other = 0;
inline constexpr std::uint8_t item = 1;
inline constexpr std::uint8_t cover = 2;
inline constexpr std::uint8_t vehicle = 3;
inline constexpr std::uint8_t person = 4;
inline constexpr std::uint8_t pad = 5;
}  // namespace cls

// Dense per-pixel class-id raster, row major.
struct SemanticMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> cells;

    SemanticMap() = default;
    SemanticMap(int w, int h, std::uint8_t fill = 0) : width(w), height(h) {
        if (w <= 0 || h <= 0) throw ConfigError("semantic map: non-positive dimensions");
        cells.assign(static_cast<std::size_t>(w) * h, fill);
    }

    std::uint8_t& at(int r, int c) {
        check(r, c);
        return cells[static_cast<std::size_t>(r) * width + c];
    }
    std::uint8_t at(int r, int c) const {
        check(r, c);
        return cells[static_cast<std::size_t>(r) * width + c];
    }

private:
    void check(int r, int c) const {
        if (r < 0 || r >= height || c < 0 || c >= width) throw DataError("semantic map: index out of range");
    }
};

struct PoolConfig {
    int cell_w = 8;
    int cell_h = 8;
    int k = 2;  // tokens kept per pooled cell

    void validate() const {
        if (cell_w <= 0 || cell_h <= 0) throw ConfigError("pool: non-positive cell size");
        if (k <= 0) throw ConfigError("pool: k must be positive");
    }
};

// Pooled map: grid of cells, each holding k class ids in priority order,
// padded with the hierarchy pad id. Storage index: (gr * grid_w + gc) * k + slot.
struct LatentGrid {
    int grid_w = 0;
    int grid_h = 0;
    int k = 0;
    std::vector<std::uint8_t> tokens;

    const std::uint8_t* cell(int gr, int gc) const {
        check(gr, gc);
        return tokens.data() + (static_cast<std::size_t>(gr) * grid_w + gc) * k;
    }
    std::uint8_t* cell(int gr, int gc) {
        check(gr, gc);
        return tokens.data() + (static_cast<std::size_t>(gr) * grid_w + gc) * k;
    }

private:
    void check(int gr, int gc) const {
        if (gr < 0 || gr >= grid_h || gc < 0 || gc >= grid_w) throw DataError("latent grid: index out of range");
    }
};

// For every cell, keep the k highest-priority classes present among its
// pixels. Order inside a cell: rank desc, then pixel count desc, then id asc,
// so custom hierarchies with tied ranks still pool deterministically.
inline LatentGrid pool_semantic_map(const SemanticMap& map, const ClassHierarchy& hc, const PoolConfig& cfg) {
    hc.validate();
    cfg.validate();
    if (map.width <= 0 || map.height <= 0) throw DataError("pool: empty map");
    if (map.width % cfg.cell_w != 0 || map.height % cfg.cell_h != 0)
        throw ConfigError("pool: map dimensions not divisible by cell size");
    for (std::uint8_t id : map.cells) {
        if (id >= hc.num_classes()) throw DataError("pool: class id out of range");
        if (id == hc.pad_id) throw DataError("pool: pad id present in source map");
    }

    LatentGrid grid;
    grid.grid_w = map.width / cfg.cell_w;
    grid.grid_h = map.height / cfg.cell_h;
    grid.k = cfg.k;
    grid.tokens.assign(static_cast<std::size_t>(grid.grid_w) * grid.grid_h * cfg.k, hc.pad_id);

    std::vector<int> counts(hc.num_classes(), 0);
    std::vector<int> present;
    for (int gr = 0; gr < grid.grid_h; ++gr) {
        for (int gc = 0; gc < grid.grid_w; ++gc) {
            std::fill(counts.begin(), counts.end(), 0);
            for (int r = gr * cfg.cell_h; r < (gr + 1) * cfg.cell_h; ++r)
                for (int c = gc * cfg.cell_w; c < (gc + 1) * cfg.cell_w; ++c) ++counts[map.at(r, c)];
            present.clear();
            for (int id = 0; id < hc.num_classes(); ++id)
                if (counts[id] > 0) present.push_back(id);
            std::sort(present.begin(), present.end(), [&](int a, int b) {
                if (hc.ranks[a] != hc.ranks[b]) return hc.ranks[a] > hc.ranks[b];
                if (counts[a] != counts[b]) return counts[a] > counts[b];
                return a < b;
            });
            std::uint8_t* out = grid.cell(gr, gc);
            for (int s = 0; s < cfg.k && s < static_cast<int>(present.size()); ++s)
                out[s] = static_cast<std::uint8_t>(present[s]);
        }
    }
    return grid;
}

// Row-major cell order, k ids per cell. flatten/unflatten round-trip exactly.
inline std::vector<std::uint8_t> flatten(const LatentGrid& grid) { return grid.tokens; }

inline LatentGrid unflatten(const std::vector<std::uint8_t>& flat, int grid_w, int grid_h, int k) {
    if (grid_w <= 0 || grid_h <= 0 || k <= 0) throw ConfigError("unflatten: non-positive dimensions");
    if (flat.size() != static_cast<std::size_t>(grid_w) * grid_h * k)
        throw DataError("unflatten: token count does not match grid shape");
    LatentGrid grid;
    grid.grid_w = grid_w;
    grid.grid_h = grid_h;
    grid.k = k;
    grid.tokens = flat;
    return grid;
}

// Map file format: "SMAP" magic, u32le width, u32le height, then
// width*height class-id bytes row major.
inline void write_map(std::ostream& os, const SemanticMap& map) {
    if (map.width <= 0 || map.height <= 0) throw DataError("map write: empty map");
    os.write("SMAP", 4);
    write_u32le(os, static_cast<std::uint32_t>(map.width));
    write_u32le(os, static_cast<std::uint32_t>(map.height));
    os.write(reinterpret_cast<const char*>(map.cells.data()), static_cast<std::streamsize>(map.cells.size()));
    if (!os) throw DataError("map write: stream failure");
}

inline SemanticMap read_map(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string_view(magic, 4) != "SMAP") throw DataError("map read: bad magic");
    const std::uint32_t w = read_u32le(is);
    const std::uint32_t h = read_u32le(is);
    if (w == 0 || h == 0 || w > 1u << 16 || h > 1u << 16) throw DataError("map read: implausible dimensions");
    SemanticMap map(static_cast<int>(w), static_cast<int>(h));
    is.read(reinterpret_cast<char*>(map.cells.data()), static_cast<std::streamsize>(map.cells.size()));
    if (!is) throw DataError("map read: truncated payload");
    return map;
}

inline void save_map(const std::string& path, const SemanticMap& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("map save: cannot open " + path);
    write_map(f, map);
}

inline SemanticMap load_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("map load: cannot open " + path);
    return read_map(f);
}

}  // namespace mainvla
