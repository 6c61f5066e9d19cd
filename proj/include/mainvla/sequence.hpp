#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "nanomodel.hpp"
#include "pruning.hpp"
#include "tokens.hpp"

namespace mainvla {

// Position plan for one training sequence:
//   [instruction | visual patches | action | intention | environment]
// The decision pass feeds only the first two segments; everything after the
// action token exists for hindsight supervision and is never an input at
// decision time.
struct SequenceLayout {
    int n_instruction = 12;
    int n_visual = 64;
    int n_action = 1;
    int n_intention = 5;
    int n_env = 128;
    int patch_px = 8;
    int raster_px = 64;

    int instruction_begin() const { return 0; }
    int visual_begin() const { return n_instruction; }
    int action_begin() const { return n_instruction + n_visual; }
    int intention_begin() const { return action_begin() + n_action; }
    int env_begin() const { return intention_begin() + n_intention; }
    int total() const { return env_begin() + n_env; }
    int prefix_length() const { return action_begin(); }
    // pixels plus the patch's normalized grid coordinates
    int patch_dim() const { return patch_px * patch_px + 2; }
    int patches_per_side() const { return raster_px / patch_px; }

    void validate() const {
        if (n_instruction < 1 || n_visual < 1 || n_intention < 2 || n_env < 1)
            throw ConfigError("layout: non-positive segment");
        if (n_action != 1) throw ConfigError("layout: exactly one action position");
        if (patch_px < 1 || raster_px < 1 || raster_px % patch_px != 0)
            throw ConfigError("layout: raster not divisible into patches");
        const int side = raster_px / patch_px;
        if (side * side != n_visual) throw ConfigError("layout: n_visual does not match patch grid");
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a("sequence-layout");
        for (int v : {n_instruction, n_visual, n_action, n_intention, n_env, patch_px, raster_px})
            h = fnv1a_u64(static_cast<std::uint64_t>(v), h);
        return h;
    }
};

// row-major pixel tiles dequantized to [-1, 1], one column per patch, with
// the patch's grid coordinates scaled to [-1, 1] in the last two rows so
// relative geometry is readable from token content
inline Eigen::MatrixXd extract_patches(const SequenceLayout& lay, const std::vector<std::uint8_t>& raster) {
    if (raster.size() != static_cast<std::size_t>(lay.raster_px) * lay.raster_px)
        throw DataError("patches: raster size mismatch");
    const int side = lay.patches_per_side();
    Eigen::MatrixXd patches(lay.patch_dim(), lay.n_visual);
    for (int pr = 0; pr < side; ++pr)
        for (int pc = 0; pc < side; ++pc) {
            const int col = pr * side + pc;
            int row = 0;
            for (int i = 0; i < lay.patch_px; ++i)
                for (int j = 0; j < lay.patch_px; ++j, ++row) {
                    const int r = pr * lay.patch_px + i, c = pc * lay.patch_px + j;
                    patches(row, col) = dequantize_unit(raster[static_cast<std::size_t>(r) * lay.raster_px + c]);
                }
            patches(row, col) = side > 1 ? 2.0 * pr / (side - 1) - 1.0 : 0.0;
            patches(row + 1, col) = side > 1 ? 2.0 * pc / (side - 1) - 1.0 : 0.0;
        }
    return patches;
}

// decision-time input: instruction tokens then visual patches
inline SeqInput build_prefix(const SequenceLayout& lay, const Vocabulary& vocab, const std::vector<int>& instruction,
                             const std::vector<std::uint8_t>& raster) {
    lay.validate();
    if (static_cast<int>(instruction.size()) > lay.n_instruction) throw DataError("prefix: instruction too long");
    SeqInput in;
    in.patches = extract_patches(lay, raster);
    for (int t = 0; t < lay.n_instruction; ++t) {
        in.tokens.push_back(t < static_cast<int>(instruction.size()) ? instruction[t] : Vocabulary::pad_id);
        in.pos_ids.push_back(t);
        in.patch_col.push_back(-1);
    }
    for (int p = 0; p < lay.n_visual; ++p) {
        in.tokens.push_back(Vocabulary::vis_id);
        in.pos_ids.push_back(lay.visual_begin() + p);
        in.patch_col.push_back(p);
    }
    (void)vocab;
    return in;
}

struct LossWeights {
    double action = 1.0;
    double intention = 1.0;
    double env = 1.0;
    bool normalize_by_length = true;  // spread each segment weight over its supervised positions
};

struct BuiltExample {
    SeqInput in;
    SeqSupervision sup;
};

// Full hindsight sequence with next-token supervision on the action, the
// intention keywords through the terminator, and every environment token.
inline BuiltExample build_training_example(const SequenceLayout& lay, const Vocabulary& vocab,
                                           const std::vector<int>& instruction,
                                           const std::vector<std::uint8_t>& raster, int action,
                                           const std::vector<int>& intention_ids,
                                           const std::vector<std::uint8_t>& env_classes, const LossWeights& w) {
    if (intention_ids.empty() || intention_ids.back() != Vocabulary::end_id)
        throw DataError("example: intention must end with the terminator");
    if (static_cast<int>(intention_ids.size()) > lay.n_intention) throw DataError("example: intention too long");
    if (static_cast<int>(env_classes.size()) != lay.n_env) throw DataError("example: env token count mismatch");

    BuiltExample ex;
    ex.in = build_prefix(lay, vocab, instruction, raster);
    ex.in.tokens.push_back(vocab.action_token(action));
    ex.in.pos_ids.push_back(lay.action_begin());
    ex.in.patch_col.push_back(-1);
    for (int j = 0; j < lay.n_intention; ++j) {
        ex.in.tokens.push_back(j < static_cast<int>(intention_ids.size()) ? intention_ids[j] : Vocabulary::pad_id);
        ex.in.pos_ids.push_back(lay.intention_begin() + j);
        ex.in.patch_col.push_back(-1);
    }
    for (int j = 0; j < lay.n_env; ++j) {
        ex.in.tokens.push_back(vocab.class_token(env_classes[j]));
        ex.in.pos_ids.push_back(lay.env_begin() + j);
        ex.in.patch_col.push_back(-1);
    }

    const int T = lay.total();
    ex.sup.target.assign(T, -1);
    ex.sup.weight.assign(T, 0.0);
    // position i predicts the token standing at i + 1
    ex.sup.target[lay.action_begin() - 1] = ex.in.tokens[lay.action_begin()];
    ex.sup.weight[lay.action_begin() - 1] = w.action;
    const int n_int = static_cast<int>(intention_ids.size());
    const double iw = w.normalize_by_length ? w.intention / n_int : w.intention;
    for (int j = 0; j < n_int; ++j) {
        ex.sup.target[lay.intention_begin() - 1 + j] = intention_ids[j];
        ex.sup.weight[lay.intention_begin() - 1 + j] = iw;
    }
    const double ew = w.normalize_by_length ? w.env / lay.n_env : w.env;
    for (int j = 0; j < lay.n_env; ++j) {
        ex.sup.target[lay.env_begin() - 1 + j] = ex.in.tokens[lay.env_begin() + j];
        ex.sup.weight[lay.env_begin() - 1 + j] = ew;
    }
    return ex;
}

// greedy action from one logits column, restricted to the action token block
template <typename Derived>
int greedy_action(const Eigen::MatrixBase<Derived>& logits_col, const Vocabulary& vocab) {
    int best = 0;
    auto best_v = logits_col(vocab.action_token(0));
    for (int a = 1; a < n_actions; ++a) {
        const auto v = logits_col(vocab.action_token(a));
        if (v > best_v) {
            best_v = v;
            best = a;
        }
    }
    return best;
}

// instruction positions plus a subset of visual positions, original
// position ids preserved
inline SeqInput build_pruned_prefix(const SeqInput& prefix, const SequenceLayout& lay,
                                    const std::vector<int>& retained) {
    SeqInput out;
    out.patches = Eigen::MatrixXd(prefix.patches.rows(), retained.size());
    for (int t = 0; t < lay.n_instruction; ++t) {
        out.tokens.push_back(prefix.tokens[t]);
        out.pos_ids.push_back(prefix.pos_ids[t]);
        out.patch_col.push_back(-1);
    }
    int col = 0;
    for (int idx : retained) {
        if (idx < 0 || idx >= lay.n_visual) throw DataError("pruned prefix: visual index out of range");
        const int src = lay.visual_begin() + idx;
        out.tokens.push_back(prefix.tokens[src]);
        out.pos_ids.push_back(prefix.pos_ids[src]);
        out.patch_col.push_back(col);
        out.patches.col(col) = prefix.patches.col(prefix.patch_col[src]);
        ++col;
    }
    return out;
}

struct DecisionConfig {
    double tau = 1.0;
    double fraction = 1.0;        // share of visual tokens kept
    bool force_prune_path = false;  // run scoring and rebuild even when everything is kept

    int keep_count(int n_visual) const {
        int k = static_cast<int>(std::lround(fraction * n_visual));
        if (k < 1) k = 1;
        if (k > n_visual) k = n_visual;
        return k;
    }

    void validate() const {
        if (tau <= 0.0) throw ConfigError("decision: tau must be positive");
        if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("decision: fraction must be in (0, 1]");
    }
};

struct Decision {
    int action = 0;
    std::vector<int> retained;
    std::vector<double> alpha;
    DecisionFlops flops;
};

// Score visual tokens with the last-block embeddings of a full-prefix pass,
// keep the top slice, then decide from the pruned prefix. With everything
// kept the scoring pass is skipped and this is a single plain forward.
template <typename Scalar>
Decision decide(const Model<Scalar>& model, const SequenceLayout& lay, const Vocabulary& vocab,
                const SeqInput& prefix, const DecisionConfig& dc) {
    dc.validate();
    if (prefix.length() != lay.prefix_length()) throw DataError("decide: prefix length mismatch");
    const int keep = dc.keep_count(lay.n_visual);

    Decision d;
    if (keep == lay.n_visual && !dc.force_prune_path) {
        d.retained.resize(lay.n_visual);
        for (int i = 0; i < lay.n_visual; ++i) d.retained[i] = i;
        const auto logits = model.forward(prefix);
        d.action = greedy_action(logits.col(prefix.length() - 1), vocab);
    } else {
        const auto z_all = model.block_outputs(prefix);
        const Eigen::MatrixXd z =
            l2_normalize_columns(z_all.middleCols(lay.visual_begin(), lay.n_visual).template cast<double>());
        d.alpha = connectivity_scores(z, dc.tau);
        d.retained = top_k_indices(d.alpha, keep);
        const SeqInput pruned = build_pruned_prefix(prefix, lay, d.retained);
        const auto logits = model.forward(pruned);
        d.action = greedy_action(logits.col(pruned.length() - 1), vocab);
    }
    d.flops = decision_flops(model.config().n_layers, model.config().d_model, model.config().vocab_size,
                             lay.patch_dim(), lay.n_instruction, keep);
    return d;
}

// greedy hindsight decode of the intention segment, stopping at the
// terminator
template <typename Scalar>
std::vector<int> decode_intention(const Model<Scalar>& model, const SequenceLayout& lay, const Vocabulary& vocab,
                                  const std::vector<int>& instruction, const std::vector<std::uint8_t>& raster,
                                  int action) {
    SeqInput in = build_prefix(lay, vocab, instruction, raster);
    in.tokens.push_back(vocab.action_token(action));
    in.pos_ids.push_back(lay.action_begin());
    in.patch_col.push_back(-1);
    std::vector<int> out;
    for (int j = 0; j < lay.n_intention; ++j) {
        const auto logits = model.forward(in);
        int best = 0;
        for (int v = 1; v < model.config().vocab_size; ++v)
            if (logits(v, in.length() - 1) > logits(best, in.length() - 1)) best = v;
        out.push_back(best);
        if (best == Vocabulary::end_id) break;
        in.tokens.push_back(best);
        in.pos_ids.push_back(lay.intention_begin() + j);
        in.patch_col.push_back(-1);
    }
    return out;
}

// Per-segment negative log likelihood of one hindsight sequence. The total
// is defined as the sum of the three parts, so the partition identity is a
// structural property callers can rely on bit for bit.
struct NllParts {
    double action = 0.0;
    double intention = 0.0;
    double env = 0.0;
    double total = 0.0;
    int intention_terms = 0;
};

template <typename Scalar>
NllParts sequence_nll(const Model<Scalar>& model, const SequenceLayout& lay, const BuiltExample& ex) {
    const auto logits = model.forward(ex.in);
    NllParts parts;
    for (int i = 0; i + 1 < lay.total(); ++i) {
        const int tgt = ex.sup.target[i];
        if (tgt < 0) continue;
        const double nll = nll_of(logits.col(i), tgt);
        const int predicted_pos = i + 1;
        if (predicted_pos == lay.action_begin()) {
            parts.action += nll;
        } else if (predicted_pos >= lay.intention_begin() && predicted_pos < lay.env_begin()) {
            parts.intention += nll;
            ++parts.intention_terms;
        } else if (predicted_pos >= lay.env_begin()) {
            parts.env += nll;
        }
    }
    parts.total = parts.action + parts.intention + parts.env;
    return parts;
}

}  // namespace mainvla
