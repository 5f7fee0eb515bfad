#include "test_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include <unistd.h>

namespace testutil {

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("diffbatt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

diffbatt::DenoiserConfig tiny_config(int n_feat, int n_early) {
    diffbatt::DenoiserConfig c;
    c.L = 16;
    c.base_channels = 4;
    c.channel_multipliers = {1};
    c.attn_levels = {0};
    c.time_embed_dim = 8;
    c.cond_embed_dim = 8;
    c.position_dim = 2;
    c.enc_layers = 1;
    c.enc_heads = 2;
    c.enc_d_model = 8;
    c.enc_ff_mult = 2;
    c.n_feat = n_feat;
    c.n_early = n_early;
    return c;
}

diffbatt::Dataset tiny_dataset(int n, int L, int n_feat, int n_early, std::uint64_t seed) {
    diffbatt::SyntheticDatasetConfig cfg;
    cfg.n_train = n;
    cfg.n_test = 0;
    cfg.n_feat = n_feat;
    cfg.n_early = n_early;
    cfg.rul_min = 40;
    cfg.rul_max = 150;
    cfg.a_min = 1e-4;
    cfg.a_max = 2e-2;
    cfg.seed = seed;
    auto syn = diffbatt::generate_synthetic_dataset(cfg);
    diffbatt::LoadOptions lo;
    lo.grid.length = L;
    lo.n_early = n_early;
    return diffbatt::assemble_dataset(syn.train, lo);
}

namespace {

// Sorted distances from row i of `a` to every other row of `a`; the k-th is the ball radius.
double kth_radius(const Eigen::MatrixXd& a, Eigen::Index i, int k) {
    std::vector<double> d;
    for (Eigen::Index j = 0; j < a.rows(); ++j)
        if (j != i) d.push_back((a.row(i) - a.row(j)).norm());
    std::sort(d.begin(), d.end());
    return d[static_cast<std::size_t>(k - 1)];
}

double coverage(const Eigen::MatrixXd& manifold, const Eigen::MatrixXd& probes, int k) {
    std::vector<double> radii;
    for (Eigen::Index i = 0; i < manifold.rows(); ++i) radii.push_back(kth_radius(manifold, i, k));
    int inside = 0;
    for (Eigen::Index p = 0; p < probes.rows(); ++p) {
        bool hit = false;
        for (Eigen::Index i = 0; i < manifold.rows() && !hit; ++i)
            hit = (probes.row(p) - manifold.row(i)).norm() <= radii[static_cast<std::size_t>(i)];
        inside += hit;
    }
    return static_cast<double>(inside) / static_cast<double>(probes.rows());
}

}  // namespace

std::pair<double, double> brute_precision_recall(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, int k) {
    return {coverage(real, synth, k), coverage(synth, real, k)};
}

diffbatt::TrainState tiny_trained(const diffbatt::Dataset& ds, int T, int steps, std::uint64_t seed) {
    const auto& q = ds.cells.front().capacity;
    diffbatt::TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = 4;
    tc.step_size = 3e-3;
    tc.seed = seed;
    tc.ema_decay.reset();
    auto cfg = tiny_config(q.n_feat(), q.n_early());
    cfg.L = ds.grid.length;
    return diffbatt::train(diffbatt::initial_state(cfg, seed), ds, tc,
                           diffbatt::make_schedule(diffbatt::ScheduleKind::linear, T))
        .first;
}

void randomize(diffbatt::DenoiserModel& m, std::uint64_t seed, double scale) {
    diffbatt::Rng rng(seed);
    for (auto& v : m.params.values)
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * rng.normal();
}

std::vector<diffbatt::TrainItem> items_of(const diffbatt::Dataset& ds) {
    std::vector<diffbatt::TrainItem> out;
    for (const auto& c : ds.cells) out.push_back({&c.grid, &c.capacity, c.curve.cell_id});
    return out;
}

GradientCheck gradient_check(const diffbatt::DenoiserModel& model, const std::vector<diffbatt::TrainItem>& batch,
                             const diffbatt::NoiseSchedule& s, int n_params, std::uint64_t seed) {
    diffbatt::Rng rng(seed);
    auto draws = diffbatt::draw_loss_inputs(batch.size(), model.config.L, s.T, 0.5, rng, rng, rng);
    // Both branches must be exercised.
    draws.drop.front() = true;
    draws.drop.back() = false;
    const auto analytic = diffbatt::loss_simple(model, batch, s, draws);

    diffbatt::DenoiserModel probe = model;
    GradientCheck out;
    const double h = 1e-5;
    while (out.checked < n_params) {
        const auto pi = static_cast<std::size_t>(rng.below(probe.params.size()));
        auto& tensor = probe.params.values[pi];
        const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(tensor.size())));
        const double an = analytic.gradients[pi](k);
        const double orig = tensor(k);
        tensor(k) = orig + h;
        const double up = diffbatt::loss_simple(probe, batch, s, draws).loss;
        tensor(k) = orig - h;
        const double down = diffbatt::loss_simple(probe, batch, s, draws).loss;
        tensor(k) = orig;
        const double fd = (up - down) / (2 * h);
        const double scale = std::max({std::abs(an), std::abs(fd), 1e-6});
        out.max_rel_error = std::max(out.max_rel_error, std::abs(an - fd) / scale);
        ++out.checked;
    }
    return out;
}

}  // namespace testutil
