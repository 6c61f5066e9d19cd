#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "common.hpp"

namespace mainvla {

// Columns scaled to unit length; zero columns are left untouched.
inline Eigen::MatrixXd l2_normalize_columns(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out = x;
    for (int c = 0; c < out.cols(); ++c) {
        const double n = out.col(c).norm();
        if (n > 1e-300) out.col(c) /= n;
    }
    return out;
}

// Connectivity score per column: the logistic of the mean dot product
// against every column (self included), tempered by tau. Columns are
// expected to be unit length already.
inline std::vector<double> connectivity_scores(const Eigen::MatrixXd& z, double tau) {
    if (tau <= 0.0) throw ConfigError("connectivity: tau must be positive");
    const int n = static_cast<int>(z.cols());
    if (n == 0) throw DataError("connectivity: no columns");
    const Eigen::VectorXd sum = z.rowwise().sum();
    std::vector<double> alpha(n);
    const double inv = 1.0 / (static_cast<double>(n) * tau);
    for (int i = 0; i < n; ++i) {
        const double raw = z.col(i).dot(sum) * inv;
        alpha[i] = 1.0 / (1.0 + std::exp(-raw));
    }
    return alpha;
}

// Indices of the k largest scores, ties resolved toward the lower index,
// returned in ascending index order so downstream sequences keep their
// original ordering. k >= n keeps everything.
inline std::vector<int> top_k_indices(const std::vector<double>& alpha, int k) {
    if (k <= 0) throw ConfigError("top_k: k must be positive");
    const int n = static_cast<int>(alpha.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (alpha[a] != alpha[b]) return alpha[a] > alpha[b];
        return a < b;
    });
    order.resize(std::min(k, n));
    std::sort(order.begin(), order.end());
    return order;
}

// Multiply-accumulate counts for one greedy decision pass at a given number
// of retained visual tokens. attention_visual_visual is the share of the
// attention term spent on visual-to-visual pairs; it is included in
// attention, not added on top.
struct DecisionFlops {
    std::uint64_t patch_embed = 0;
    std::uint64_t qkv_and_out = 0;
    std::uint64_t attention = 0;
    std::uint64_t attention_visual_visual = 0;
    std::uint64_t mlp = 0;
    std::uint64_t head = 0;

    std::uint64_t total() const { return patch_embed + qkv_and_out + attention + mlp + head; }
};

inline DecisionFlops decision_flops(int n_layers, int d_model, int vocab_size, int patch_dim, int n_instruction,
                                    int n_visual) {
    if (n_layers < 1 || d_model < 1 || vocab_size < 1 || patch_dim < 1 || n_instruction < 0 || n_visual < 0)
        throw ConfigError("decision_flops: bad dimensions");
    const std::uint64_t L = n_layers, d = d_model, V = vocab_size, P = patch_dim;
    const std::uint64_t T = static_cast<std::uint64_t>(n_instruction) + n_visual;
    const std::uint64_t nv = n_visual;
    DecisionFlops f;
    f.patch_embed = nv * P * d;
    f.qkv_and_out = L * 4 * T * d * d;
    f.attention = L * 2 * T * T * d;
    f.attention_visual_visual = L * 2 * nv * nv * d;
    f.mlp = L * 8 * T * d * d;
    f.head = d * V;  // readout at the last position only
    return f;
}

}  // namespace mainvla
