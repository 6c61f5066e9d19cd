#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "gridworld.hpp"
#include "sequence.hpp"

namespace mainvla {

// One expert decision: the observation at that step, the action taken, and
// the hindsight annotations. Fixed-width fields sized by the layout.
struct Record {
    std::vector<std::uint16_t> instruction;  // n_instruction ids, pad filled
    std::vector<std::uint8_t> raster;        // raster_px^2 intensity levels
    std::uint8_t action = 0;
    std::vector<std::uint16_t> intention;    // n_intention ids, terminator then pad
    std::vector<std::uint8_t> env;           // n_env pooled class ids
};

inline void validate_record(const Record& r, const SequenceLayout& lay) {
    if (r.instruction.size() != static_cast<std::size_t>(lay.n_instruction))
        throw DataError("record: instruction width mismatch");
    if (r.raster.size() != static_cast<std::size_t>(lay.raster_px) * lay.raster_px)
        throw DataError("record: raster size mismatch");
    if (r.action >= n_actions) throw DataError("record: bad action");
    if (r.intention.size() != static_cast<std::size_t>(lay.n_intention))
        throw DataError("record: intention width mismatch");
    if (r.env.size() != static_cast<std::size_t>(lay.n_env)) throw DataError("record: env width mismatch");
}

// Dataset file: magic, version, the seven layout fields, layout/vocab/class
// hierarchy hashes, record count, then fixed-size records.
class DatasetWriter {
public:
    DatasetWriter(const std::string& path, const SequenceLayout& lay, std::uint64_t vocab_hash,
                  std::uint64_t hierarchy_hash)
        : lay_(lay), f_(path, std::ios::binary) {
        lay.validate();
        if (!f_) throw DataError("dataset write: cannot open " + path);
        f_.write("MVDS", 4);
        write_u32le(f_, 1);
        for (int v : {lay.n_instruction, lay.n_visual, lay.n_action, lay.n_intention, lay.n_env, lay.patch_px,
                      lay.raster_px})
            write_u32le(f_, static_cast<std::uint32_t>(v));
        write_u64le(f_, lay.hash());
        write_u64le(f_, vocab_hash);
        write_u64le(f_, hierarchy_hash);
        count_pos_ = f_.tellp();
        write_u64le(f_, 0);
    }

    void append(const Record& r) {
        validate_record(r, lay_);
        for (std::uint16_t v : r.instruction) write_u16le(f_, v);
        f_.write(reinterpret_cast<const char*>(r.raster.data()), static_cast<std::streamsize>(r.raster.size()));
        f_.put(static_cast<char>(r.action));
        for (std::uint16_t v : r.intention) write_u16le(f_, v);
        f_.write(reinterpret_cast<const char*>(r.env.data()), static_cast<std::streamsize>(r.env.size()));
        if (!f_) throw DataError("dataset write: stream failure");
        ++count_;
    }

    std::uint64_t count() const { return count_; }

    void close() {
        if (!f_.is_open()) return;
        f_.seekp(count_pos_);
        write_u64le(f_, count_);
        f_.close();
        if (f_.fail()) throw DataError("dataset write: close failure");
    }

    ~DatasetWriter() {
        try {
            close();
        } catch (...) {
        }
    }

private:
    SequenceLayout lay_;
    std::ofstream f_;
    std::ofstream::pos_type count_pos_;
    std::uint64_t count_ = 0;
};

struct Dataset {
    SequenceLayout layout;
    std::vector<Record> records;

    static Dataset load(const std::string& path, const SequenceLayout& expected_layout,
                        std::uint64_t expected_vocab_hash, std::uint64_t expected_hierarchy_hash) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("dataset load: cannot open " + path);
        char magic[4];
        f.read(magic, 4);
        if (!f || std::string_view(magic, 4) != "MVDS") throw DataError("dataset load: bad magic");
        if (read_u32le(f) != 1) throw DataError("dataset load: unsupported version");
        Dataset ds;
        ds.layout.n_instruction = static_cast<int>(read_u32le(f));
        ds.layout.n_visual = static_cast<int>(read_u32le(f));
        ds.layout.n_action = static_cast<int>(read_u32le(f));
        ds.layout.n_intention = static_cast<int>(read_u32le(f));
        ds.layout.n_env = static_cast<int>(read_u32le(f));
        ds.layout.patch_px = static_cast<int>(read_u32le(f));
        ds.layout.raster_px = static_cast<int>(read_u32le(f));
        const std::uint64_t layout_hash = read_u64le(f);
        if (layout_hash != ds.layout.hash()) throw DataError("dataset load: corrupt layout header");
        if (layout_hash != expected_layout.hash()) throw DataError("dataset load: layout mismatch");
        if (read_u64le(f) != expected_vocab_hash) throw DataError("dataset load: vocabulary mismatch");
        if (read_u64le(f) != expected_hierarchy_hash) throw DataError("dataset load: class hierarchy mismatch");
        const std::uint64_t n = read_u64le(f);
        ds.records.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            Record r;
            r.instruction.resize(ds.layout.n_instruction);
            for (auto& v : r.instruction) v = read_u16le(f);
            r.raster.resize(static_cast<std::size_t>(ds.layout.raster_px) * ds.layout.raster_px);
            f.read(reinterpret_cast<char*>(r.raster.data()), static_cast<std::streamsize>(r.raster.size()));
            const int action = f.get();
            if (action < 0) throw DataError("dataset load: truncated record");
            r.action = static_cast<std::uint8_t>(action);
            r.intention.resize(ds.layout.n_intention);
            for (auto& v : r.intention) v = read_u16le(f);
            r.env.resize(ds.layout.n_env);
            f.read(reinterpret_cast<char*>(r.env.data()), static_cast<std::streamsize>(r.env.size()));
            if (!f) throw DataError("dataset load: truncated record");
            validate_record(r, ds.layout);
            ds.records.push_back(std::move(r));
        }
        return ds;
    }
};

// record fields to a training example; the record keeps raw ids, the
// example builder wants unpadded id lists
inline BuiltExample example_from_record(const Record& r, const SequenceLayout& lay, const Vocabulary& vocab,
                                        const LossWeights& w) {
    std::vector<int> instruction;
    for (std::uint16_t v : r.instruction) instruction.push_back(v);
    while (!instruction.empty() && instruction.back() == Vocabulary::pad_id) instruction.pop_back();
    std::vector<int> intention;
    for (std::uint16_t v : r.intention) {
        intention.push_back(v);
        if (v == Vocabulary::end_id) break;
    }
    return build_training_example(lay, vocab, instruction, r.raster, r.action, intention, r.env, w);
}

// Dihedral augmentation. sym = flip * 4 + quarter_turns: an optional
// horizontal mirror followed by clockwise quarter turns, applied alike to
// the pixel raster and the pooled scene grid. Pooling cells map onto
// pooling cells, so the stored scene tokens stay exact under the
// transform, and a rotated shortest-path action stays optimal in the
// rotated world (tie-breaks may differ from the canonical expert).
inline void dihedral_index(int sym, int n, int r, int c, int& out_r, int& out_c) {
    if (sym & 4) c = n - 1 - c;
    for (int q = 0; q < (sym & 3); ++q) {
        const int nr = c, nc = n - 1 - r;
        r = nr;
        c = nc;
    }
    out_r = r;
    out_c = c;
}

inline int dihedral_action(int sym, int action) {
    if (action >= 4) return action;
    if (sym & 4) action = action == act_east ? act_west : (action == act_west ? act_east : action);
    return (action + (sym & 3)) % 4;
}

inline Record augment_record(const Record& r, const SequenceLayout& lay, int env_side, int env_k, int sym) {
    if (sym < 0 || sym >= 8) throw ConfigError("augment: sym out of range");
    if (env_side * env_side * env_k != lay.n_env) throw ConfigError("augment: scene grid shape mismatch");
    if (sym == 0) return r;
    Record out = r;
    const int px = lay.raster_px;
    for (int i = 0; i < px; ++i)
        for (int j = 0; j < px; ++j) {
            int ti, tj;
            dihedral_index(sym, px, i, j, ti, tj);
            out.raster[static_cast<std::size_t>(ti) * px + tj] = r.raster[static_cast<std::size_t>(i) * px + j];
        }
    for (int i = 0; i < env_side; ++i)
        for (int j = 0; j < env_side; ++j) {
            int ti, tj;
            dihedral_index(sym, env_side, i, j, ti, tj);
            for (int s = 0; s < env_k; ++s)
                out.env[(static_cast<std::size_t>(ti) * env_side + tj) * env_k + s] =
                    r.env[(static_cast<std::size_t>(i) * env_side + j) * env_k + s];
        }
    out.action = static_cast<std::uint8_t>(dihedral_action(sym, r.action));
    return out;
}

}  // namespace mainvla
