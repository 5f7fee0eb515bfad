#include "diffbatt/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "diffbatt/checkpoint.hpp"
#include "diffbatt/errors.hpp"

namespace diffbatt {

using nn::Matrix;
using nn::Var;

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("steps must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("step_size must be positive");
    if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) throw ConfigError("p_uncond must lie in [0, 1]");
    if (ema_decay && !(*ema_decay >= 0.0 && *ema_decay <= 1.0)) throw ConfigError("ema_decay must lie in [0, 1]");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (divergence_patience < 1) throw ConfigError("divergence_patience must be positive");
}

DenoiserModel TrainState::sampling_model() const {
    DenoiserModel m = model;
    if (ema) m.params = *ema;
    return m;
}

LossDraws draw_loss_inputs(std::size_t batch, int L, int T, double p_uncond, Rng& timestep_rng, Rng& noise_rng,
                           Rng& dropout_rng) {
    LossDraws d;
    d.t.resize(batch);
    d.drop.resize(batch);
    d.eps.resize(static_cast<Eigen::Index>(batch), L);
    for (std::size_t b = 0; b < batch; ++b) {
        d.t[b] = 1 + static_cast<int>(timestep_rng.below(static_cast<std::uint64_t>(T)));
        d.drop[b] = dropout_rng.bernoulli(p_uncond);
        for (int l = 0; l < L; ++l) d.eps(static_cast<Eigen::Index>(b), l) = noise_rng.normal();
    }
    return d;
}

LossResult loss_simple(const DenoiserModel& model, const std::vector<TrainItem>& batch, const NoiseSchedule& s,
                       const LossDraws& draws) {
    const int L = model.config.L;
    const auto B = static_cast<Eigen::Index>(batch.size());
    if (B == 0) throw ShapeError("loss_simple: empty batch");
    if (static_cast<Eigen::Index>(draws.t.size()) != B || static_cast<Eigen::Index>(draws.drop.size()) != B ||
        draws.eps.rows() != B || draws.eps.cols() != L)
        throw ShapeError("loss_simple: draws do not match the batch");

    Matrix x_t(B, L);
    Matrix target(1, B * L);
    std::vector<const CapacityMatrix*> kept;
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& item = batch[static_cast<std::size_t>(b)];
        const int t = draws.t[static_cast<std::size_t>(b)];
        s.check_step(t);
        if (item.curve == nullptr || item.curve->values.size() != L)
            throw ShapeError("loss_simple: curve for " + item.cell_id + " does not have length L = " + std::to_string(L));
        Eigen::VectorXd x0 = item.curve->values.unaryExpr([](double v) { return soh_to_model(v); });
        const Eigen::VectorXd eps = draws.eps.row(b).transpose();
        x_t.row(b) = forward_diffuse(x0, t, eps, s).transpose();
        target.middleCols(b * L, L) = draws.eps.row(b);
        if (!draws.drop[static_cast<std::size_t>(b)]) kept.push_back(item.capacity);
    }

    LossResult out;
    out.gradients = model.params.zeros_like();
    nn::Graph g;
    ParameterBinder bind(g, model.params, &out.gradients);

    Var enc;
    if (!kept.empty()) enc = encode_condition_graph(bind, model, kept);
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(B));
    int next = 0;
    for (Eigen::Index b = 0; b < B; ++b) {
        if (draws.drop[static_cast<std::size_t>(b)])
            rows.push_back(bind(model.layout.null_embedding));
        else
            rows.push_back(nn::row_block(g, enc, next++, 1));
    }
    Var cond = nn::stack_rows(g, rows);
    Var pred = denoise_graph(bind, model, x_t, draws.t, cond);
    Var loss = nn::mse(g, pred, target);
    out.loss = g.value(loss)(0, 0);

    if (!std::isfinite(out.loss)) {
        const Matrix& p = g.value(pred);
        for (Eigen::Index b = 0; b < B; ++b) {
            const double e = (p.middleCols(b * L, L) - target.middleCols(b * L, L)).squaredNorm();
            if (!std::isfinite(e))
                throw NumericError("non-finite loss at t = " + std::to_string(draws.t[static_cast<std::size_t>(b)]) +
                                   ", cell_id = " + batch[static_cast<std::size_t>(b)].cell_id);
        }
        throw NumericError("non-finite loss");
    }
    g.backward(loss);
    return out;
}

LossResult loss_simple(const DenoiserModel& model, const std::vector<TrainItem>& batch, const NoiseSchedule& s,
                       double p_uncond, Rng& rng) {
    const LossDraws d = draw_loss_inputs(batch.size(), model.config.L, s.T, p_uncond, rng, rng, rng);
    return loss_simple(model, batch, s, d);
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& g : grads) g *= f;
    }
    return norm;
}

void adam_update(ParameterStore& params, AdamState& state, const std::vector<Matrix>& grads, double step_size,
                 double beta1, double beta2, double eps) {
    if (state.m.empty()) state.m = params.zeros_like();
    if (state.v.empty()) state.v = params.zeros_like();
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_update: gradient count does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        m = beta1 * m + (1.0 - beta1) * grads[i];
        v = beta2 * v + (1.0 - beta2) * grads[i].cwiseAbs2();
        round_to_float(m);
        round_to_float(v);
        params.values[i].array() -= step_size * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        round_to_float(params.values[i]);
    }
}

void ema_update(ParameterStore& ema, const ParameterStore& params, double decay) {
    if (ema.size() != params.size()) throw ShapeError("ema_update: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        ema.values[i] = decay * ema.values[i] + (1.0 - decay) * params.values[i];
        round_to_float(ema.values[i]);
    }
}

TrainState initial_state(const DenoiserConfig& model_cfg, std::uint64_t seed) {
    model_cfg.validate();
    Rng rng = Rng(seed).split("init");
    TrainState st;
    st.model = init_model(model_cfg, rng);
    st.adam.m = st.model.params.zeros_like();
    st.adam.v = st.model.params.zeros_like();
    return st;
}

std::pair<TrainState, TrainReport> train(TrainState state, const Dataset& ds_train, const TrainConfig& cfg,
                                         const NoiseSchedule& s) {
    cfg.validate();
    if (ds_train.empty()) throw ValidationError("training set is empty");
    auto& model = state.model;
    if (ds_train.grid.length != model.config.L)
        throw ConfigError("dataset grid length " + std::to_string(ds_train.grid.length) + " != model L = " +
                          std::to_string(model.config.L));
    const auto& cap0 = ds_train.cells.front().capacity;
    if (cap0.n_feat() != model.config.n_feat || cap0.n_early() != model.config.n_early)
        throw ConfigError("capacity matrices are " + std::to_string(cap0.n_early()) + "x" +
                          std::to_string(cap0.n_feat()) + ", model expects " + std::to_string(model.config.n_early) +
                          "x" + std::to_string(model.config.n_feat));
    if (!model.schedule.empty() && model.schedule != s.descriptor())
        throw ConfigError("state was trained with schedule '" + model.schedule + "', not '" + s.descriptor() + "'");

    model.norm_stats = fit_feature_stats(ds_train);
    model.schedule = s.descriptor();
    model.grid = ds_train.grid;
    if (state.adam.m.empty()) state.adam.m = model.params.zeros_like();
    if (state.adam.v.empty()) state.adam.v = model.params.zeros_like();
    if (cfg.ema_decay && !state.ema) state.ema = model.params;
    if (!cfg.ema_decay) state.ema.reset();

    std::vector<TrainItem> items;
    items.reserve(ds_train.size());
    for (const auto& c : ds_train.cells) items.push_back({&c.grid, &c.capacity, c.curve.cell_id});

    const Rng master(cfg.seed);
    Rng data_rng = master.split("data");
    Rng time_rng = master.split("timestep");
    Rng noise_rng = master.split("noise");
    Rng drop_rng = master.split("dropout");

    std::ofstream log;
    if (cfg.metrics_log) {
        log.open(*cfg.metrics_log);
        if (!log) throw IoError("cannot write " + cfg.metrics_log->string());
        log << "step,loss\n";
        log.precision(10);
    }

    TrainReport report;
    report.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
    const auto start = std::chrono::steady_clock::now();
    int over = 0;
    std::vector<TrainItem> batch(static_cast<std::size_t>(cfg.batch_size));
    for (int step = 1; step <= cfg.steps; ++step) {
        for (auto& b : batch) b = items[data_rng.below(items.size())];
        const LossDraws d =
            draw_loss_inputs(batch.size(), model.config.L, s.T, cfg.p_uncond, time_rng, noise_rng, drop_rng);
        LossResult r = loss_simple(model, batch, s, d);
        over = r.loss > cfg.divergence_loss ? over + 1 : 0;
        if (over >= cfg.divergence_patience)
            throw NumericError("training diverged: loss above " + std::to_string(cfg.divergence_loss) + " for " +
                               std::to_string(over) + " consecutive steps (step " + std::to_string(step) + ")");
        clip_global_norm(r.gradients, cfg.grad_clip);
        adam_update(model.params, state.adam, r.gradients, cfg.step_size, cfg.adam_beta1, cfg.adam_beta2,
                    cfg.adam_eps);
        if (state.ema) ema_update(*state.ema, model.params, *cfg.ema_decay);
        report.loss_history.emplace_back(step, r.loss);
        if (log.is_open() && (step % cfg.eval_every == 0 || step == cfg.steps)) log << step << ',' << r.loss << '\n';
    }
    if (!model.params.all_finite()) throw NumericError("parameters became non-finite during training");
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (cfg.checkpoint_path) {
        save_checkpoint(*cfg.checkpoint_path, state);
        report.final_checkpoint = cfg.checkpoint_path;
    }
    return {std::move(state), std::move(report)};
}

}  // namespace diffbatt
