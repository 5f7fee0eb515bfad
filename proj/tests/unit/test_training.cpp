#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "diffbatt/checkpoint.hpp"
#include "diffbatt/errors.hpp"
#include "diffbatt/training.hpp"
#include "test_util.hpp"

using namespace diffbatt;

namespace {

std::vector<int> encoder_params(const DenoiserLayout& lay) {
    std::vector<int> out{lay.enc_in.w, lay.enc_in.b, lay.enc_norm.gamma, lay.enc_norm.beta, lay.enc_out.w, lay.enc_out.b};
    for (const auto& e : lay.enc)
        for (int i : {e.ln1.gamma, e.ln1.beta, e.qkv.w, e.qkv.b, e.out.w, e.out.b, e.ln2.gamma, e.ln2.beta, e.ff1.w,
                      e.ff1.b, e.ff2.w, e.ff2.b})
            out.push_back(i);
    return out;
}

struct Fixture {
    DenoiserConfig cfg = testutil::tiny_config();
    Dataset ds = testutil::tiny_dataset(6, 16, 2, 6, 3);
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 50);
};

TrainConfig short_run(int steps) {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = 4;
    tc.step_size = 1e-3;
    tc.seed = 7;
    return tc;
}

}  // namespace

TEST(LossSimple, GradientsMatchFiniteDifferences) {
    Fixture f;
    Rng rng(1);
    auto model = init_model(f.cfg, rng);
    testutil::randomize(model, 2);
    const auto items = testutil::items_of(f.ds);
    const auto r = testutil::gradient_check(model, {items.begin(), items.begin() + 3}, f.s, 50, 11);
    EXPECT_EQ(r.checked, 50);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(LossSimple, ZeroHeadLossIsNoiseVariance) {
    Fixture f;
    Rng rng(1);
    const auto model = init_model(f.cfg, rng);
    std::vector<TrainItem> batch;
    const auto items = testutil::items_of(f.ds);
    for (int i = 0; i < 64; ++i) batch.push_back(items[static_cast<std::size_t>(i) % items.size()]);
    Rng draw(3);
    const double loss = loss_simple(model, batch, f.s, 0.2, draw).loss;
    const double n = 64.0 * f.cfg.L;
    EXPECT_NEAR(loss, 1.0, 3 * std::sqrt(2.0 / n));
}

TEST(LossSimple, DroppedBranchGradients) {
    Fixture f;
    Rng rng(1);
    auto model = init_model(f.cfg, rng);
    testutil::randomize(model, 4);
    const auto items = testutil::items_of(f.ds);
    const auto null_idx = static_cast<std::size_t>(model.layout.null_embedding);

    Rng r1(5);
    const auto all_dropped = loss_simple(model, items, f.s, 1.0, r1);
    for (int i : encoder_params(model.layout))
        EXPECT_EQ(all_dropped.gradients[static_cast<std::size_t>(i)].cwiseAbs().maxCoeff(), 0.0) << model.params.names[i];
    EXPECT_GT(all_dropped.gradients[null_idx].norm(), 0.0);

    Rng r2(5);
    const auto none_dropped = loss_simple(model, items, f.s, 0.0, r2);
    EXPECT_EQ(none_dropped.gradients[null_idx].cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(none_dropped.gradients[static_cast<std::size_t>(model.layout.enc_in.w)].norm(), 0.0);
}

TEST(LossSimple, NonFiniteLossNamesStepAndCell) {
    Fixture f;
    Rng rng(1);
    auto model = init_model(f.cfg, rng);
    testutil::randomize(model, 4);
    model.params.values[static_cast<std::size_t>(model.layout.conv_out.b)](0, 0) = std::nan("");
    const auto items = testutil::items_of(f.ds);
    Rng draw(1);
    try {
        loss_simple(model, {items[0]}, f.s, 0.0, draw);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("t = "), std::string::npos) << msg;
        EXPECT_NE(msg.find(items[0].cell_id), std::string::npos) << msg;
    }
}

TEST(DrawLossInputs, DropRateAndRanges) {
    Rng rt(1), rn(2), rd(3);
    const auto d = draw_loss_inputs(10000, 8, 50, 0.2, rt, rn, rd);
    double dropped = 0;
    for (bool b : d.drop) dropped += b;
    EXPECT_GE(dropped / 10000, 0.18);
    EXPECT_LE(dropped / 10000, 0.22);
    EXPECT_EQ(d.eps.rows(), 10000);
    EXPECT_EQ(d.eps.cols(), 8);
    std::vector<int> hits(51, 0);
    for (int t : d.t) {
        ASSERT_GE(t, 1);
        ASSERT_LE(t, 50);
        ++hits[static_cast<std::size_t>(t)];
    }
    for (int t = 1; t <= 50; ++t) EXPECT_GT(hits[static_cast<std::size_t>(t)], 100);
    EXPECT_NEAR(d.eps.mean(), 0.0, 0.01);
    EXPECT_NEAR(d.eps.array().square().mean(), 1.0, 0.02);
}

TEST(Optimizer, ClipGlobalNorm) {
    std::vector<nn::Matrix> g{nn::Matrix::Constant(1, 1, 3.0), nn::Matrix::Constant(1, 1, 4.0)};
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
    EXPECT_DOUBLE_EQ(g[0](0, 0), 0.6);
    EXPECT_DOUBLE_EQ(g[1](0, 0), 0.8);
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(g[1](0, 0), 0.8);
}

TEST(Optimizer, FirstAdamStepIsSignedStepSize) {
    ParameterStore p;
    p.add("w", nn::Matrix::Zero(1, 3));
    AdamState st;
    nn::Matrix g(1, 3);
    g << 2.0, -0.5, 1e-3;
    adam_update(p, st, {g}, 1e-2, 0.9, 0.999, 1e-8);
    EXPECT_EQ(st.step, 1);
    for (int j = 0; j < 3; ++j) {
        const float expected = static_cast<float>(-1e-2 * g(0, j) / (std::abs(g(0, j)) + 1e-8));
        EXPECT_EQ(p.values[0](0, j), static_cast<double>(expected));
    }
}

TEST(Optimizer, EmaLimits) {
    ParameterStore params, ema;
    params.add("w", nn::Matrix::Constant(2, 2, 0.75));
    ema.add("w", nn::Matrix::Constant(2, 2, -0.25));
    ParameterStore keep = ema;
    ema_update(keep, params, 1.0);
    EXPECT_EQ(keep.values[0], ema.values[0]);
    ema_update(ema, params, 0.0);
    EXPECT_EQ(ema.values[0], params.values[0]);
    ParameterStore half;
    half.add("w", nn::Matrix::Constant(2, 2, -0.25));
    ema_update(half, params, 0.5);
    EXPECT_EQ(half.values[0](0, 0), 0.25);
}

TEST(Train, MinimalRunWritesCheckpointAndLog) {
    Fixture f;
    testutil::TempDir dir("train");
    auto tc = short_run(1);
    tc.batch_size = 2;
    tc.checkpoint_path = dir / "m.ckpt";
    tc.metrics_log = dir / "log.csv";
    auto [state, report] = train(initial_state(f.cfg, 1), f.ds, tc, f.s);
    EXPECT_EQ(report.loss_history.size(), 1u);
    EXPECT_TRUE(std::isfinite(report.loss_history[0].second));
    ASSERT_TRUE(report.final_checkpoint);
    EXPECT_TRUE(std::filesystem::exists(*report.final_checkpoint));
    const std::string log = testutil::read_file(dir / "log.csv");
    EXPECT_EQ(log.rfind("step,loss\n1,", 0), 0u) << log;
    EXPECT_EQ(state.model.schedule, f.s.descriptor());
    EXPECT_EQ(state.model.grid.length, 16);
    EXPECT_FALSE(state.model.norm_stats.empty());
    EXPECT_EQ(state.adam.step, 1);
}

TEST(Train, SameSeedIsBitIdentical) {
    Fixture f;
    auto [a, ra] = train(initial_state(f.cfg, 1), f.ds, short_run(6), f.s);
    auto [b, rb] = train(initial_state(f.cfg, 1), f.ds, short_run(6), f.s);
    EXPECT_EQ(a.model.params.checksum(), b.model.params.checksum());
    ASSERT_TRUE(a.ema && b.ema);
    EXPECT_EQ(a.ema->checksum(), b.ema->checksum());
    EXPECT_EQ(ra.loss_history, rb.loss_history);
    auto other = short_run(6);
    other.seed = 8;
    auto [c, rc] = train(initial_state(f.cfg, 1), f.ds, other, f.s);
    EXPECT_NE(a.model.params.checksum(), c.model.params.checksum());
}

TEST(Train, WithoutEmaSamplesRawWeights) {
    Fixture f;
    auto tc = short_run(2);
    tc.ema_decay.reset();
    auto [st, rep] = train(initial_state(f.cfg, 1), f.ds, tc, f.s);
    EXPECT_FALSE(st.ema);
    EXPECT_EQ(st.sampling_model().params.checksum(), st.model.params.checksum());
}

TEST(Train, LossTrendsDown) {
    Fixture f;
    auto tc = short_run(300);
    tc.batch_size = 8;
    tc.step_size = 3e-3;
    tc.ema_decay.reset();
    auto [st, rep] = train(initial_state(f.cfg, 1), f.ds, tc, f.s);
    const auto& h = rep.loss_history;
    double first = 0, last = 0;
    const std::size_t k = h.size() / 10;
    for (std::size_t i = 0; i < k; ++i) {
        first += h[i].second;
        last += h[h.size() - 1 - i].second;
    }
    EXPECT_LT(last, first);
}

TEST(Train, DivergenceAborts) {
    Fixture f;
    auto tc = short_run(20);
    tc.divergence_loss = 1e-12;
    tc.divergence_patience = 3;
    EXPECT_THROW(train(initial_state(f.cfg, 1), f.ds, tc, f.s), NumericError);
}

TEST(Train, RejectsMismatchedInputs) {
    Fixture f;
    auto tc = short_run(1);
    tc.steps = 0;
    EXPECT_THROW(train(initial_state(f.cfg, 1), f.ds, tc, f.s), ConfigError);
    tc = short_run(1);
    tc.p_uncond = 1.5;
    EXPECT_THROW(train(initial_state(f.cfg, 1), f.ds, tc, f.s), ConfigError);

    auto wide = f.cfg;
    wide.L = 32;
    EXPECT_THROW(train(initial_state(wide, 1), f.ds, short_run(1), f.s), ConfigError);
    auto feats = f.cfg;
    feats.n_feat = 3;
    EXPECT_THROW(train(initial_state(feats, 1), f.ds, short_run(1), f.s), ConfigError);

    auto [st, rep] = train(initial_state(f.cfg, 1), f.ds, short_run(1), f.s);
    EXPECT_THROW(train(st, f.ds, short_run(1), make_schedule(ScheduleKind::linear, 60)), ConfigError);
    EXPECT_THROW(train(initial_state(f.cfg, 1), Dataset{}, short_run(1), f.s), ValidationError);
}

TEST(Train, ResumeContinuesOptimizerState) {
    Fixture f;
    auto [st, rep] = train(initial_state(f.cfg, 1), f.ds, short_run(3), f.s);
    auto [st2, rep2] = train(st, f.ds, short_run(2), f.s);
    EXPECT_EQ(st2.adam.step, 5);
}
