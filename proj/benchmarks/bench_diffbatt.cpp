#include <benchmark/benchmark.h>

#include "diffbatt/data.hpp"
#include "diffbatt/denoiser.hpp"
#include "diffbatt/forest.hpp"
#include "diffbatt/metrics.hpp"
#include "diffbatt/sampler.hpp"
#include "diffbatt/synthesis.hpp"
#include "diffbatt/training.hpp"

using namespace diffbatt;

namespace {

// Desk-scale setup: 64-node grid, three U-Net levels.
struct Setup {
    Dataset train;
    DenoiserConfig cfg;
    TrainState state;
    NoiseSchedule schedule = make_schedule(ScheduleKind::linear, 200);

    Setup() {
        SyntheticDatasetConfig dc;
        dc.seed = 1;
        LoadOptions lo;
        lo.grid.length = 64;
        train = assemble_dataset(generate_synthetic_dataset(dc).train, lo);
        cfg.L = 64;
        cfg.base_channels = 16;
        cfg.channel_multipliers = {1, 2, 2};
        cfg.attn_levels = {2};
        cfg.time_embed_dim = 64;
        cfg.cond_embed_dim = 64;
        cfg.enc_d_model = 32;
        cfg.enc_layers = 1;
        cfg.enc_heads = 2;
        TrainConfig tc;
        tc.steps = 1;
        state = diffbatt::train(initial_state(cfg, 0), train, tc, schedule).first;
    }
};

const Setup& setup() {
    static const Setup s;
    return s;
}

void BM_DenoiseBatch(benchmark::State& st) {
    const auto& s = setup();
    const int B = static_cast<int>(st.range(0));
    Rng rng(1);
    Eigen::MatrixXd x(B, s.cfg.L);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
    std::vector<const CapacityMatrix*> qs;
    for (int b = 0; b < B; ++b) qs.push_back(&s.train.cells[static_cast<std::size_t>(b)].capacity);
    const Eigen::MatrixXd cond = encode_conditions(s.state.model, qs);
    const std::vector<int> t(static_cast<std::size_t>(B), 100);
    for (auto _ : st) benchmark::DoNotOptimize(denoise_batch(s.state.model, x, t, cond));
    st.SetItemsProcessed(st.iterations() * B);
}
BENCHMARK(BM_DenoiseBatch)->Arg(1)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_LossAndGradients(benchmark::State& st) {
    const auto& s = setup();
    std::vector<TrainItem> batch;
    for (int b = 0; b < 16; ++b) {
        const auto& c = s.train.cells[static_cast<std::size_t>(b)];
        batch.push_back({&c.grid, &c.capacity, c.curve.cell_id});
    }
    Rng rng(2);
    for (auto _ : st) benchmark::DoNotOptimize(loss_simple(s.state.model, batch, s.schedule, 0.2, rng).loss);
}
BENCHMARK(BM_LossAndGradients)->Unit(benchmark::kMillisecond);

void BM_SampleGuided(benchmark::State& st) {
    const auto& s = setup();
    const std::vector<const CapacityMatrix*> qs(8, &s.train.cells.front().capacity);
    GuidanceConfig g;
    g.w = static_cast<double>(st.range(0));
    Rng rng(3);
    for (auto _ : st) benchmark::DoNotOptimize(sample_batch(s.state.model, qs, g, s.schedule, rng));
}
BENCHMARK(BM_SampleGuided)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond)->Iterations(2);

void BM_TrainForest(benchmark::State& st) {
    const auto& s = setup();
    const auto x = forest_features(s.train, fit_feature_stats(s.train));
    const auto y = rul_labels(s.train);
    ForestConfig fc;
    fc.n_trees = static_cast<int>(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(train_forest(x, y, fc).trees.size());
}
BENCHMARK(BM_TrainForest)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_FidAndPrecisionRecall(benchmark::State& st) {
    const auto& s = setup();
    const auto real = curve_matrix(s.train);
    const auto map = fit_pca(real);
    Rng rng(4);
    Eigen::MatrixXd synth = real;
    for (Eigen::Index i = 0; i < synth.size(); ++i) synth(i) += 0.01 * rng.normal();
    for (auto _ : st) {
        benchmark::DoNotOptimize(fid(real, synth, map));
        benchmark::DoNotOptimize(precision_recall(real, synth, map, 3).recall);
    }
}
BENCHMARK(BM_FidAndPrecisionRecall)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
