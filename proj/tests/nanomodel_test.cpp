#include "mainvla/nanomodel.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mainvla;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 20;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_seq = 32;
    cfg.patch_dim = 8;
    return cfg;
}

SeqInput random_input(const ModelConfig& cfg, Rng& rng, int T, int n_patches) {
    SeqInput in;
    in.patches = Eigen::MatrixXd(cfg.patch_dim, n_patches);
    for (int i = 0; i < cfg.patch_dim; ++i)
        for (int j = 0; j < n_patches; ++j) in.patches(i, j) = rng.next_uniform(-1.0, 1.0);
    int used = 0;
    for (int t = 0; t < T; ++t) {
        in.tokens.push_back(rng.next_int(0, cfg.vocab_size - 1));
        in.pos_ids.push_back(t);
        if (used < n_patches && t >= 2 && t < 2 + n_patches) {
            in.patch_col.push_back(used++);
        } else {
            in.patch_col.push_back(-1);
        }
    }
    return in;
}

SeqSupervision random_supervision(const ModelConfig& cfg, Rng& rng, int T) {
    SeqSupervision sup;
    for (int t = 0; t < T; ++t) {
        const int kind = rng.next_int(0, 3);
        if (kind == 0) {
            sup.target.push_back(-1);
            sup.weight.push_back(0.0);
        } else {
            sup.target.push_back(rng.next_int(0, cfg.vocab_size - 1));
            sup.weight.push_back(kind == 1 ? 0.0 : (kind == 2 ? 0.3 : 1.0));
        }
    }
    return sup;
}

}  // namespace

TEST(Model, deterministic_init_and_param_count) {
    const auto cfg = tiny_config();
    Model<double> a(cfg, 5), b(cfg, 5), c(cfg, 6);
    EXPECT_GT(a.n_params(), 5000);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_NE(a.params(), c.params());
    Rng rng(1);
    const auto in = random_input(cfg, rng, 10, 3);
    EXPECT_EQ(a.forward(in), b.forward(in));
}

TEST(Model, forward_shapes_and_validation) {
    const auto cfg = tiny_config();
    Model<double> m(cfg, 1);
    Rng rng(2);
    auto in = random_input(cfg, rng, 12, 4);
    const auto logits = m.forward(in);
    EXPECT_EQ(logits.rows(), cfg.vocab_size);
    EXPECT_EQ(logits.cols(), 12);
    const auto z = m.block_outputs(in);
    EXPECT_EQ(z.rows(), cfg.d_model);
    EXPECT_EQ(z.cols(), 12);

    auto bad = in;
    bad.tokens[0] = cfg.vocab_size;
    EXPECT_THROW(m.forward(bad), DataError);
    bad = in;
    bad.pos_ids[3] = cfg.max_seq;
    EXPECT_THROW(m.forward(bad), DataError);
    bad = in;
    bad.patch_col[2] = 99;
    EXPECT_THROW(m.forward(bad), DataError);
}

TEST(Model, causal_mask_blocks_suffix_influence) {
    const auto cfg = tiny_config();
    Model<double> m(cfg, 3);
    Rng rng(3);
    const int T = 14;
    auto in = random_input(cfg, rng, T, 4);
    const auto base = m.forward(in);
    for (int cut = 1; cut < T; cut += 4) {
        auto perturbed = in;
        for (int t = cut; t < T; ++t) {
            if (perturbed.patch_col[t] >= 0) {
                perturbed.patches.col(perturbed.patch_col[t]).setConstant(0.77);
            } else {
                perturbed.tokens[t] = (perturbed.tokens[t] + 7) % cfg.vocab_size;
            }
        }
        const auto got = m.forward(perturbed);
        const double diff = (got.leftCols(cut) - base.leftCols(cut)).cwiseAbs().maxCoeff();
        EXPECT_LE(diff, 1e-12) << "cut " << cut;
    }
}

TEST(Model, gradient_matches_central_differences_everywhere) {
    const auto cfg = tiny_config();
    Model<double> m(cfg, 42);
    Rng rng(4);
    const int T = 12;
    const auto in0 = random_input(cfg, rng, T, 3);
    const auto in1 = random_input(cfg, rng, T, 3);
    const auto sup0 = random_supervision(cfg, rng, T);
    auto sup1 = random_supervision(cfg, rng, T);
    sup1.target[T - 2] = 5;  // ensure at least one supervised position
    sup1.weight[T - 2] = 1.0;
    const std::vector<const SeqInput*> batch{&in0, &in1};
    const std::vector<const SeqSupervision*> sup{&sup0, &sup1};

    Eigen::VectorXd grad;
    m.loss_and_grad(batch, sup, grad);
    ASSERT_EQ(grad.size(), m.n_params());

    const double h = 1e-5;
    double worst = 0.0;
    int worst_idx = -1;
    Eigen::VectorXd scratch;
    for (int i = 0; i < m.n_params(); i += 7) {
        const double saved = m.params()[i];
        m.params()[i] = saved + h;
        const double up = m.loss_and_grad(batch, sup, scratch);
        m.params()[i] = saved - h;
        const double dn = m.loss_and_grad(batch, sup, scratch);
        m.params()[i] = saved;
        const double numeric = (up - dn) / (2.0 * h);
        const double analytic = grad[i];
        const double rel = std::abs(analytic - numeric) /
                           std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
        if (rel > worst) {
            worst = rel;
            worst_idx = i;
        }
    }
    EXPECT_LT(worst, 1e-6) << "param index " << worst_idx;
}

TEST(Model, packed_batch_equals_mean_of_single_sequences) {
    const auto cfg = tiny_config();
    Model<double> m(cfg, 9);
    Rng rng(5);
    const int T = 10;
    const auto in0 = random_input(cfg, rng, T, 2);
    const auto in1 = random_input(cfg, rng, T, 2);
    auto sup0 = random_supervision(cfg, rng, T);
    auto sup1 = random_supervision(cfg, rng, T);
    sup0.target[4] = 3;
    sup0.weight[4] = 1.0;
    sup1.target[6] = 7;
    sup1.weight[6] = 0.5;

    Eigen::VectorXd g_pair, g0, g1;
    const double pair = m.loss_and_grad({&in0, &in1}, {&sup0, &sup1}, g_pair);
    const double l0 = m.loss_and_grad({&in0}, {&sup0}, g0);
    const double l1 = m.loss_and_grad({&in1}, {&sup1}, g1);
    EXPECT_NEAR(pair, 0.5 * (l0 + l1), 1e-12);
    const double gdiff = (g_pair - 0.5 * (g0 + g1)).cwiseAbs().maxCoeff();
    EXPECT_LE(gdiff, 1e-12);
}

TEST(Model, training_reduces_loss_on_memorization) {
    ModelConfig cfg = tiny_config();
    cfg.patch_dim = 4;
    Model<double> m(cfg, 17);
    SeqInput in;
    const int T = 10;
    for (int t = 0; t < T; ++t) {
        in.tokens.push_back((t * 3 + 1) % cfg.vocab_size);
        in.pos_ids.push_back(t);
        in.patch_col.push_back(-1);
    }
    SeqSupervision sup;
    for (int t = 0; t < T - 1; ++t) {
        sup.target.push_back(in.tokens[t + 1]);
        sup.weight.push_back(1.0);
    }
    sup.target.push_back(-1);
    sup.weight.push_back(0.0);

    Adam<double>::Settings s;
    s.lr = 3e-3;
    Adam<double> opt(m.n_params(), s);
    Eigen::VectorXd grad;
    const double first = m.loss_and_grad({&in}, {&sup}, grad);
    double last = first;
    for (int step = 0; step < 120; ++step) {
        last = m.loss_and_grad({&in}, {&sup}, grad);
        opt.step(m.params(), grad);
    }
    EXPECT_LT(last, 0.3 * first);
}

TEST(Model, nll_matches_manual_log_softmax) {
    Eigen::VectorXd col(4);
    col << 1.0, -2.0, 0.5, 3.0;
    double z = 0.0;
    for (int i = 0; i < 4; ++i) z += std::exp(col[i]);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(nll_of(col, i), -std::log(std::exp(col[i]) / z), 1e-12);
    EXPECT_THROW(nll_of(col, 4), DataError);
    // huge logits stay finite
    Eigen::VectorXd big(3);
    big << 1000.0, 999.0, 998.0;
    EXPECT_NEAR(nll_of(big, 0), -std::log(1.0 / (1.0 + std::exp(-1.0) + std::exp(-2.0))), 1e-9);
}

TEST(Checkpoint, round_trip_and_refusals) {
    const auto cfg = tiny_config();
    Model<float> m(cfg, 23);
    const std::string path = "ckpt_test.bin";
    save_checkpoint(path, m, 0xabcdefull);
    const auto loaded = load_checkpoint<float>(path, cfg, 0xabcdefull);
    EXPECT_EQ(loaded.params(), m.params());

    ModelConfig other = cfg;
    other.d_model = 32;
    EXPECT_THROW(load_checkpoint<float>(path, other, 0xabcdefull), DataError);
    EXPECT_THROW(load_checkpoint<float>(path, cfg, 0x1234ull), DataError);
    EXPECT_THROW(load_checkpoint<float>("missing_dir/nope.bin", cfg, 0xabcdefull), DataError);
    std::remove(path.c_str());
}

TEST(Model, pruned_position_ids_are_respected) {
    // a two-position input using position ids {0, 9} must differ from {0, 1}
    const auto cfg = tiny_config();
    Model<double> m(cfg, 31);
    SeqInput a;
    a.tokens = {4, 9};
    a.pos_ids = {0, 1};
    a.patch_col = {-1, -1};
    SeqInput b = a;
    b.pos_ids = {0, 9};
    EXPECT_GT((m.forward(a).col(1) - m.forward(b).col(1)).cwiseAbs().maxCoeff(), 1e-8);
}
