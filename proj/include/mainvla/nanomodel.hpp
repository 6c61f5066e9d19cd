#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace mainvla {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 48;
    int n_layers = 2;
    int n_heads = 4;
    int max_seq = 256;
    int patch_dim = 64;
    double init_scale = 0.02;
    double ln_eps = 1e-5;

    void validate() const {
        if (vocab_size < 4) throw ConfigError("model: vocab too small");
        if (d_model < 4 || n_layers < 1 || n_heads < 1) throw ConfigError("model: bad dimensions");
        if (d_model % n_heads != 0) throw ConfigError("model: d_model not divisible by n_heads");
        if (max_seq < 2) throw ConfigError("model: max_seq too small");
        if (patch_dim < 1) throw ConfigError("model: bad patch_dim");
        if (init_scale <= 0.0 || ln_eps <= 0.0) throw ConfigError("model: bad init_scale or ln_eps");
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a("model-config");
        for (int v : {vocab_size, d_model, n_layers, n_heads, max_seq, patch_dim}) {
            h = fnv1a_u64(static_cast<std::uint64_t>(v), h);
        }
        std::uint64_t bits;
        std::memcpy(&bits, &init_scale, 8);
        h = fnv1a_u64(bits, h);
        std::memcpy(&bits, &ln_eps, 8);
        return fnv1a_u64(bits, h);
    }
};

// One sequence of mixed discrete tokens and projected patch vectors. A
// position is a patch position when patch_col[i] >= 0; its token id is
// ignored for embedding. pos_ids carry the position-embedding index so a
// pruned subsequence keeps its original coordinates.
struct SeqInput {
    std::vector<int> tokens;
    std::vector<int> pos_ids;
    std::vector<int> patch_col;
    Eigen::MatrixXd patches;  // patch_dim x n_patches

    int length() const { return static_cast<int>(tokens.size()); }

    void validate(const ModelConfig& cfg) const {
        const std::size_t t = tokens.size();
        if (t == 0) throw DataError("seq input: empty");
        if (pos_ids.size() != t || patch_col.size() != t) throw DataError("seq input: ragged fields");
        for (std::size_t i = 0; i < t; ++i) {
            if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size) throw DataError("seq input: token id out of range");
            if (pos_ids[i] < 0 || pos_ids[i] >= cfg.max_seq) throw DataError("seq input: position id out of range");
            if (patch_col[i] >= static_cast<int>(patches.cols())) throw DataError("seq input: patch column out of range");
        }
        if (patches.rows() != 0 && patches.rows() != cfg.patch_dim)
            throw DataError("seq input: patch dim mismatch");
    }
};

// next-token supervision: target[i] is the id position i should predict,
// -1 for unsupervised, weight[i] scales that position's loss term
struct SeqSupervision {
    std::vector<int> target;
    std::vector<double> weight;
};

namespace detail {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

template <typename Scalar>
Scalar gelu_tanh(Scalar x) {
    const Scalar c = Scalar(kGeluC);
    const Scalar a = Scalar(kGeluA);
    return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + a * x * x * x)));
}

template <typename Scalar>
Scalar gelu_tanh_grad(Scalar x) {
    const Scalar c = Scalar(kGeluC);
    const Scalar a = Scalar(kGeluA);
    const Scalar t = std::tanh(c * (x + a * x * x * x));
    const Scalar du = c * (Scalar(1) + Scalar(3) * a * x * x);
    return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * du;
}

}  // namespace detail

// Decoder-only transformer over the unified token space. Pre-norm blocks,
// learned absolute position embeddings, causal attention, untied output
// head. Patch positions embed a linear projection of raw pixels instead of a
// table lookup. All parameters live in one flat vector so optimizer and
// finite-difference checks can treat the model as a plain function of it.
template <typename Scalar>
class Model {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;

    Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg.validate();
        build_layout();
        params_ = Vec::Zero(n_params_);
        init(init_seed);
    }

    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        build_layout();
        params_ = Vec::Zero(n_params_);
        // layernorm gains default to one even before loading
        for (int l = 0; l < cfg_.n_layers; ++l) {
            view(off_.lay[l].ln1_g, cfg_.d_model, 1).setOnes();
            view(off_.lay[l].ln2_g, cfg_.d_model, 1).setOnes();
        }
        view(off_.lnf_g, cfg_.d_model, 1).setOnes();
    }

    const ModelConfig& config() const { return cfg_; }
    int n_params() const { return n_params_; }
    Vec& params() { return params_; }
    const Vec& params() const { return params_; }

    // logits for every position, vocab x T
    Mat forward(const SeqInput& in) const {
        in.validate(cfg_);
        Cache cache;
        return run_forward(in, cache, false);
    }

    // last-block residual stream (before the final layernorm), d x T
    Mat block_outputs(const SeqInput& in) const {
        in.validate(cfg_);
        Cache cache;
        run_forward(in, cache, true);
        return cache.x_final;
    }

    // mean over sequences of the weighted next-token cross entropy; grad is
    // resized and overwritten. All sequences in the batch must share a length.
    double loss_and_grad(const std::vector<const SeqInput*>& batch, const std::vector<const SeqSupervision*>& sup,
                         Vec& grad) {
        if (batch.empty() || batch.size() != sup.size()) throw TrainingError("loss_and_grad: bad batch");
        const int B = static_cast<int>(batch.size());
        const int T = batch[0]->length();
        for (int b = 0; b < B; ++b) {
            batch[b]->validate(cfg_);
            if (batch[b]->length() != T) throw TrainingError("loss_and_grad: ragged batch");
            if (sup[b]->target.size() != static_cast<std::size_t>(T) ||
                sup[b]->weight.size() != static_cast<std::size_t>(T))
                throw TrainingError("loss_and_grad: supervision length mismatch");
        }

        Cache& cache = fwd_scratch_;
        const Mat logits = run_forward_packed(batch, cache);

        grad = Vec::Zero(n_params_);
        Mat& dlogits = bwd_scratch_.dlogits;
        dlogits.resize(cfg_.vocab_size, B * T);
        dlogits.setZero();
        double loss = 0.0;
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < T; ++t) {
                const int tgt = sup[b]->target[t];
                if (tgt < 0) continue;
                if (tgt >= cfg_.vocab_size) throw TrainingError("loss_and_grad: target out of range");
                const double w = sup[b]->weight[t] / B;
                if (w == 0.0) continue;
                const int col = b * T + t;
                Vec p = logits.col(col);
                const Scalar m = p.maxCoeff();
                p = (p.array() - m).exp();
                const Scalar z = p.sum();
                p /= z;
                loss += w * (std::log(static_cast<double>(z)) + static_cast<double>(m) -
                             static_cast<double>(logits(tgt, col)));
                dlogits.col(col) = Scalar(w) * p;
                dlogits(tgt, col) -= Scalar(w);
            }
        }
        run_backward_packed(batch, cache, dlogits, grad, bwd_scratch_);
        return loss;
    }

    // ---- parameter views ----
    CMapM tok_emb() const { return cview(off_.tok_emb, cfg_.d_model, cfg_.vocab_size); }
    CMapM pos_emb() const { return cview(off_.pos_emb, cfg_.d_model, cfg_.max_seq); }
    CMapM head() const { return cview(off_.head, cfg_.vocab_size, cfg_.d_model); }

private:
    struct LayerOffsets {
        int ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, wfc, bfc, wproj, bproj;
    };
    struct Offsets {
        int tok_emb, pos_emb, patch_w, patch_b;
        std::vector<LayerOffsets> lay;
        int lnf_g, lnf_b, head;
    };

    struct Cache {
        int B = 1, T = 0;
        Mat x0;                             // after embedding
        Mat xwork;                          // residual stream, mutated through the blocks
        std::vector<Mat> patches_cast;      // per sequence, patches in this model's scalar type
        std::vector<Mat> patch_proj;        // per sequence, projected patches
        std::vector<Mat> ln1_out, qkv, attn_concat, x_mid, ln2_out, h_pre, h_tanh, h_act;  // per layer
        std::vector<std::vector<Mat>> attw;  // [layer][seq] stacked heads (H*T) x T, column i holds
                                             // softmax weights over keys j <= i (transposed scores)
        std::vector<Mat> ln1_in, ln2_in;     // inputs to each layernorm
        Mat x_final;                         // before final layernorm
        Mat y;                               // after final layernorm
    };

    // backward scratch, reused across steps to avoid reallocating per call
    struct Work {
        Mat dlogits, dy, dx, dmlp, dh_act, dh_pre, db, dattn_out, dconcat, dqkv, dst, da, dproj;
    };

    void build_layout() {
        int at = 0;
        auto take = [&](int n) {
            const int o = at;
            at += n;
            return o;
        };
        const int d = cfg_.d_model;
        off_.tok_emb = take(d * cfg_.vocab_size);
        off_.pos_emb = take(d * cfg_.max_seq);
        off_.patch_w = take(d * cfg_.patch_dim);
        off_.patch_b = take(d);
        off_.lay.resize(cfg_.n_layers);
        for (auto& L : off_.lay) {
            L.ln1_g = take(d);
            L.ln1_b = take(d);
            L.wqkv = take(3 * d * d);
            L.bqkv = take(3 * d);
            L.wo = take(d * d);
            L.bo = take(d);
            L.ln2_g = take(d);
            L.ln2_b = take(d);
            L.wfc = take(4 * d * d);
            L.bfc = take(4 * d);
            L.wproj = take(d * 4 * d);
            L.bproj = take(d);
        }
        off_.lnf_g = take(d);
        off_.lnf_b = take(d);
        off_.head = take(cfg_.vocab_size * d);
        n_params_ = at;
    }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        auto fill_normal = [&](int offset, int n) {
            for (int i = 0; i < n; ++i) params_[offset + i] = Scalar(cfg_.init_scale * rng.next_gaussian());
        };
        const int d = cfg_.d_model;
        fill_normal(off_.tok_emb, d * cfg_.vocab_size);
        fill_normal(off_.pos_emb, d * cfg_.max_seq);
        fill_normal(off_.patch_w, d * cfg_.patch_dim);
        for (auto& L : off_.lay) {
            view(L.ln1_g, d, 1).setOnes();
            view(L.ln2_g, d, 1).setOnes();
            fill_normal(L.wqkv, 3 * d * d);
            fill_normal(L.wo, d * d);
            fill_normal(L.wfc, 4 * d * d);
            fill_normal(L.wproj, d * 4 * d);
        }
        view(off_.lnf_g, d, 1).setOnes();
        fill_normal(off_.head, cfg_.vocab_size * d);
    }

    MapM view(int offset, int rows, int cols) { return MapM(params_.data() + offset, rows, cols); }
    CMapM cview(int offset, int rows, int cols) const { return CMapM(params_.data() + offset, rows, cols); }
    static MapM gview(Vec& g, int offset, int rows, int cols) { return MapM(g.data() + offset, rows, cols); }

    // per-column layernorm; caches nothing, recomputed in backward from input
    static Mat layer_norm(const Mat& x, CMapM g, CMapM b, double eps) {
        Mat y(x.rows(), x.cols());
        for (int c = 0; c < x.cols(); ++c) {
            const Scalar mu = x.col(c).mean();
            const Scalar var = (x.col(c).array() - mu).square().mean();
            const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(eps));
            y.col(c) = ((x.col(c).array() - mu) * inv) * g.col(0).array() + b.col(0).array();
        }
        return y;
    }

    void layer_norm_backward(const Mat& x, CMapM g, const Mat& dy, MapM dg, MapM db, Mat& dx) const {
        const Scalar eps = Scalar(cfg_.ln_eps);
        const int d = static_cast<int>(x.rows());
        for (int c = 0; c < x.cols(); ++c) {
            const Scalar mu = x.col(c).mean();
            const Scalar var = (x.col(c).array() - mu).square().mean();
            const Scalar inv = Scalar(1) / std::sqrt(var + eps);
            const Eigen::Array<Scalar, Eigen::Dynamic, 1> xhat = (x.col(c).array() - mu) * inv;
            const Eigen::Array<Scalar, Eigen::Dynamic, 1> dyc = dy.col(c).array();
            dg.col(0).array() += dyc * xhat;
            db.col(0).array() += dyc;
            const Eigen::Array<Scalar, Eigen::Dynamic, 1> dxhat = dyc * g.col(0).array();
            const Scalar m1 = dxhat.mean();
            const Scalar m2 = (dxhat * xhat).mean();
            dx.col(c).array() += inv * (dxhat - m1 - xhat * m2);
            (void)d;
        }
    }

    // embeds one sequence into x's columns; pc and proj are that sequence's
    // cached scalar-typed patches and their projections
    void embed_into(const SeqInput& in, Mat& pc, Mat& proj, Eigen::Ref<Mat> x) const {
        const int T = in.length();
        const auto te = tok_emb();
        const auto pe = pos_emb();
        const auto pw = cview(off_.patch_w, cfg_.d_model, cfg_.patch_dim);
        const auto pb = cview(off_.patch_b, cfg_.d_model, 1);
        pc = in.patches.template cast<Scalar>();
        proj.resize(cfg_.d_model, pc.cols());
        proj.noalias() = pw * pc;
        proj.colwise() += pb.col(0);
        for (int t = 0; t < T; ++t) {
            if (in.patch_col[t] >= 0) {
                x.col(t) = proj.col(in.patch_col[t]);
            } else {
                x.col(t) = te.col(in.tokens[t]);
            }
            x.col(t) += pe.col(in.pos_ids[t]);
        }
    }

    // forward over one sequence (B=1 packed path)
    Mat run_forward(const SeqInput& in, Cache& cache, bool stop_before_final_ln) const {
        std::vector<const SeqInput*> batch{&in};
        return run_forward_impl(batch, cache, stop_before_final_ln);
    }

    Mat run_forward_packed(const std::vector<const SeqInput*>& batch, Cache& cache) const {
        return run_forward_impl(batch, cache, false);
    }

    Mat run_forward_impl(const std::vector<const SeqInput*>& batch, Cache& cache, bool stop_before_final_ln) const {
        const int B = static_cast<int>(batch.size());
        const int T = batch[0]->length();
        const int d = cfg_.d_model;
        const int H = cfg_.n_heads;
        const int dh = d / H;
        const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

        cache.B = B;
        cache.T = T;
        Mat x(d, B * T);
        for (int b = 0; b < B; ++b) x.middleCols(b * T, T) = embed(*batch[b]);
        cache.x0 = x;

        cache.ln1_in.resize(cfg_.n_layers);
        cache.ln1_out.resize(cfg_.n_layers);
        cache.qkv.resize(cfg_.n_layers);
        cache.attw.assign(cfg_.n_layers, {});
        cache.attn_concat.resize(cfg_.n_layers);
        cache.x_mid.resize(cfg_.n_layers);
        cache.ln2_in.resize(cfg_.n_layers);
        cache.ln2_out.resize(cfg_.n_layers);
        cache.h_pre.resize(cfg_.n_layers);
        cache.h_act.resize(cfg_.n_layers);

        for (int l = 0; l < cfg_.n_layers; ++l) {
            const auto& L = off_.lay[l];
            cache.ln1_in[l] = x;
            const Mat a = layer_norm(x, cview(L.ln1_g, d, 1), cview(L.ln1_b, d, 1), cfg_.ln_eps);
            cache.ln1_out[l] = a;
            Mat qkv = cview(L.wqkv, 3 * d, d) * a;
            qkv.colwise() += cview(L.bqkv, 3 * d, 1).col(0);
            cache.qkv[l] = qkv;

            Mat concat(d, B * T);
            cache.attw[l].resize(B);
            for (int b = 0; b < B; ++b) {
                Mat& wstack = cache.attw[l][b];
                wstack.resize(H * T, T);
                for (int h = 0; h < H; ++h) {
                    const auto q = qkv.block(h * dh, b * T, dh, T);
                    const auto k = qkv.block(d + h * dh, b * T, dh, T);
                    const auto v = qkv.block(2 * d + h * dh, b * T, dh, T);
                    Mat s = (q.transpose() * k) * scale;  // s(i,j) = q_i . k_j
                    for (int i = 0; i < T; ++i) {
                        // causal softmax over j <= i
                        Scalar m = s(i, 0);
                        for (int j = 1; j <= i; ++j) m = std::max(m, s(i, j));
                        Scalar z = 0;
                        for (int j = 0; j <= i; ++j) {
                            s(i, j) = std::exp(s(i, j) - m);
                            z += s(i, j);
                        }
                        const Scalar invz = Scalar(1) / z;
                        for (int j = 0; j <= i; ++j) s(i, j) *= invz;
                        for (int j = i + 1; j < T; ++j) s(i, j) = Scalar(0);
                    }
                    wstack.middleRows(h * T, T) = s;
                    concat.block(h * dh, b * T, dh, T) = v * s.transpose();
                }
            }
            cache.attn_concat[l] = concat;
            Mat attn_out = cview(L.wo, d, d) * concat;
            attn_out.colwise() += cview(L.bo, d, 1).col(0);
            x += attn_out;
            cache.x_mid[l] = x;

            cache.ln2_in[l] = x;
            const Mat bnorm = layer_norm(x, cview(L.ln2_g, d, 1), cview(L.ln2_b, d, 1), cfg_.ln_eps);
            cache.ln2_out[l] = bnorm;
            Mat hpre = cview(L.wfc, 4 * d, d) * bnorm;
            hpre.colwise() += cview(L.bfc, 4 * d, 1).col(0);
            cache.h_pre[l] = hpre;
            Mat h = hpre.unaryExpr([](Scalar v) { return detail::gelu_tanh(v); });
            cache.h_act[l] = h;
            Mat mlp_out = cview(L.wproj, d, 4 * d) * h;
            mlp_out.colwise() += cview(L.bproj, d, 1).col(0);
            x += mlp_out;
        }

        cache.x_final = x;
        if (stop_before_final_ln) return Mat();
        cache.y = layer_norm(x, cview(off_.lnf_g, d, 1), cview(off_.lnf_b, d, 1), cfg_.ln_eps);
        return head() * cache.y;
    }

    void run_backward_packed(const std::vector<const SeqInput*>& batch, const Cache& cache, const Mat& dlogits,
                             Vec& grad) const {
        const int B = cache.B;
        const int T = cache.T;
        const int d = cfg_.d_model;
        const int H = cfg_.n_heads;
        const int dh = d / H;
        const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

        gview(grad, off_.head, cfg_.vocab_size, d) += dlogits * cache.y.transpose();
        Mat dy = head().transpose() * dlogits;
        Mat dx = Mat::Zero(d, B * T);
        layer_norm_backward(cache.x_final, cview(off_.lnf_g, d, 1), dy, gview(grad, off_.lnf_g, d, 1),
                            gview(grad, off_.lnf_b, d, 1), dx);

        for (int l = cfg_.n_layers - 1; l >= 0; --l) {
            const auto& L = off_.lay[l];
            // mlp
            Mat dmlp = dx;  // residual branch gradient
            gview(grad, L.wproj, d, 4 * d) += dmlp * cache.h_act[l].transpose();
            gview(grad, L.bproj, d, 1).col(0) += dmlp.rowwise().sum();
            Mat dh_act = cview(L.wproj, d, 4 * d).transpose() * dmlp;
            Mat dh_pre =
                dh_act.array() * cache.h_pre[l].unaryExpr([](Scalar v) { return detail::gelu_tanh_grad(v); }).array();
            gview(grad, L.wfc, 4 * d, d) += dh_pre * cache.ln2_out[l].transpose();
            gview(grad, L.bfc, 4 * d, 1).col(0) += dh_pre.rowwise().sum();
            Mat db = cview(L.wfc, 4 * d, d).transpose() * dh_pre;
            layer_norm_backward(cache.ln2_in[l], cview(L.ln2_g, d, 1), db, gview(grad, L.ln2_g, d, 1),
                                gview(grad, L.ln2_b, d, 1), dx);

            // attention
            Mat dattn_out = dx;
            gview(grad, L.wo, d, d) += dattn_out * cache.attn_concat[l].transpose();
            gview(grad, L.bo, d, 1).col(0) += dattn_out.rowwise().sum();
            Mat dconcat = cview(L.wo, d, d).transpose() * dattn_out;

            Mat dqkv = Mat::Zero(3 * d, B * T);
            const Mat& qkv = cache.qkv[l];
            for (int b = 0; b < B; ++b) {
                const Mat& wstack = cache.attw[l][b];
                for (int h = 0; h < H; ++h) {
                    const auto q = qkv.block(h * dh, b * T, dh, T);
                    const auto k = qkv.block(d + h * dh, b * T, dh, T);
                    const auto v = qkv.block(2 * d + h * dh, b * T, dh, T);
                    const auto w = wstack.middleRows(h * T, T);  // T x T
                    const auto doh = dconcat.block(h * dh, b * T, dh, T);

                    dqkv.block(2 * d + h * dh, b * T, dh, T) += doh * w;  // dV
                    Mat dw = doh.transpose() * v;                         // T x T
                    // softmax backward, rows; masked entries have w == 0
                    Mat ds(T, T);
                    for (int i = 0; i < T; ++i) {
                        const Scalar dot = (dw.row(i).array() * w.row(i).array()).sum();
                        ds.row(i) = w.row(i).array() * (dw.row(i).array() - dot);
                    }
                    dqkv.block(h * dh, b * T, dh, T) += (k * ds.transpose()) * scale;      // dQ
                    dqkv.block(d + h * dh, b * T, dh, T) += (q * ds) * scale;              // dK
                }
            }
            gview(grad, L.wqkv, 3 * d, d) += dqkv * cache.ln1_out[l].transpose();
            gview(grad, L.bqkv, 3 * d, 1).col(0) += dqkv.rowwise().sum();
            Mat da = cview(L.wqkv, 3 * d, d).transpose() * dqkv;
            layer_norm_backward(cache.ln1_in[l], cview(L.ln1_g, d, 1), da, gview(grad, L.ln1_g, d, 1),
                                gview(grad, L.ln1_b, d, 1), dx);
        }

        // embeddings
        auto dte = gview(grad, off_.tok_emb, d, cfg_.vocab_size);
        auto dpe = gview(grad, off_.pos_emb, d, cfg_.max_seq);
        auto dpw = gview(grad, off_.patch_w, d, cfg_.patch_dim);
        auto dpb = gview(grad, off_.patch_b, d, 1);
        for (int b = 0; b < B; ++b) {
            const SeqInput& in = *batch[b];
            for (int t = 0; t < T; ++t) {
                const auto dcol = dx.col(b * T + t);
                if (in.patch_col[t] >= 0) {
                    dpw += dcol * in.patches.col(in.patch_col[t]).cast<Scalar>().transpose();
                    dpb.col(0) += dcol;
                } else {
                    dte.col(in.tokens[t]) += dcol;
                }
                dpe.col(in.pos_ids[t]) += dcol;
            }
        }
    }

    ModelConfig cfg_;
    Offsets off_;
    int n_params_ = 0;
    Vec params_;
};

template <typename Scalar>
class Adam {
public:
    struct Settings {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Adam(int n, const Settings& s) : s_(s), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {
        if (s.lr <= 0 || s.beta1 < 0 || s.beta1 >= 1 || s.beta2 < 0 || s.beta2 >= 1 || s.eps <= 0)
            throw ConfigError("adam: bad settings");
    }

    void set_lr(double lr) {
        if (lr <= 0) throw ConfigError("adam: bad lr");
        s_.lr = lr;
    }

    void step(Vec& params, const Vec& grad) {
        if (params.size() != m_.size() || grad.size() != m_.size()) throw TrainingError("adam: size mismatch");
        ++t_;
        m_ = Scalar(s_.beta1) * m_ + Scalar(1 - s_.beta1) * grad;
        v_ = Scalar(s_.beta2) * v_ + Scalar(1 - s_.beta2) * grad.cwiseProduct(grad).eval();
        const Scalar bc1 = Scalar(1.0 - std::pow(s_.beta1, static_cast<double>(t_)));
        const Scalar bc2 = Scalar(1.0 - std::pow(s_.beta2, static_cast<double>(t_)));
        params.array() -=
            Scalar(s_.lr) * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + Scalar(s_.eps));
    }

private:
    Settings s_;
    Vec m_, v_;
    long t_ = 0;
};

// stable log softmax probability of one id, computed in double regardless of
// the model scalar
template <typename Derived>
double nll_of(const Eigen::MatrixBase<Derived>& logits_col, int id) {
    const Eigen::VectorXd x = logits_col.template cast<double>();
    if (id < 0 || id >= x.size()) throw DataError("nll_of: id out of range");
    const double m = x.maxCoeff();
    double z = 0.0;
    for (int i = 0; i < x.size(); ++i) z += std::exp(x[i] - m);
    return std::log(z) + m - x[id];
}

// Checkpoint format: magic, version, config fields, config hash, a caller
// supplied context hash (vocab and layout binding), then f64 parameters.
template <typename Scalar>
void save_checkpoint(const std::string& path, const Model<Scalar>& model, std::uint64_t context_hash) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint save: cannot open " + path);
    f.write("MVCK", 4);
    write_u32le(f, 1);
    const ModelConfig& c = model.config();
    for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.max_seq, c.patch_dim})
        write_u32le(f, static_cast<std::uint32_t>(v));
    write_f64le(f, c.init_scale);
    write_f64le(f, c.ln_eps);
    write_u64le(f, c.hash());
    write_u64le(f, context_hash);
    write_u64le(f, static_cast<std::uint64_t>(model.n_params()));
    for (int i = 0; i < model.n_params(); ++i) write_f64le(f, static_cast<double>(model.params()[i]));
    if (!f) throw DataError("checkpoint save: stream failure");
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::string& path, const ModelConfig& expected, std::uint64_t expected_context) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint load: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string_view(magic, 4) != "MVCK") throw DataError("checkpoint load: bad magic");
    if (read_u32le(f) != 1) throw DataError("checkpoint load: unsupported version");
    ModelConfig c;
    c.vocab_size = static_cast<int>(read_u32le(f));
    c.d_model = static_cast<int>(read_u32le(f));
    c.n_layers = static_cast<int>(read_u32le(f));
    c.n_heads = static_cast<int>(read_u32le(f));
    c.max_seq = static_cast<int>(read_u32le(f));
    c.patch_dim = static_cast<int>(read_u32le(f));
    c.init_scale = read_f64le(f);
    c.ln_eps = read_f64le(f);
    const std::uint64_t stored_hash = read_u64le(f);
    if (stored_hash != c.hash()) throw DataError("checkpoint load: corrupt header");
    if (c.hash() != expected.hash()) throw DataError("checkpoint load: config mismatch");
    const std::uint64_t context = read_u64le(f);
    if (context != expected_context) throw DataError("checkpoint load: vocab or layout mismatch");
    const std::uint64_t n = read_u64le(f);
    Model<Scalar> model(c);
    if (n != static_cast<std::uint64_t>(model.n_params())) throw DataError("checkpoint load: parameter count mismatch");
    for (std::uint64_t i = 0; i < n; ++i) model.params()[static_cast<int>(i)] = Scalar(read_f64le(f));
    if (!f) throw DataError("checkpoint load: truncated");
    return model;
}

}  // namespace mainvla
