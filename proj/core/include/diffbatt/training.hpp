#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffbatt/data.hpp"
#include "diffbatt/denoiser.hpp"
#include "diffbatt/rng.hpp"
#include "diffbatt/schedule.hpp"

namespace diffbatt {

struct TrainConfig {
    int steps = 2000;
    int batch_size = 16;
    double step_size = 1e-4;
    double p_uncond = 0.2;
    std::optional<double> ema_decay = 0.999;
    std::uint64_t seed = 0;
    int eval_every = 100;
    double grad_clip = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Abort when the loss exceeds `divergence_loss` for `divergence_patience` consecutive steps.
    double divergence_loss = 1e3;
    int divergence_patience = 100;
    /// Written at the end of train() when set.
    std::optional<std::filesystem::path> checkpoint_path;
    /// `step,loss` rows every eval_every steps when set.
    std::optional<std::filesystem::path> metrics_log;

    void validate() const;
};

struct TrainReport {
    std::vector<std::pair<int, double>> loss_history;
    double wall_time = 0.0;
    std::optional<std::filesystem::path> final_checkpoint;
};

/// One training example: model-space curve and its (raw) capacity matrix.
struct TrainItem {
    const GriddedCurve* curve = nullptr;
    const CapacityMatrix* capacity = nullptr;
    std::string cell_id;
};

/// Per-item random draws of the denoising objective.
struct LossDraws {
    std::vector<int> t;
    std::vector<bool> drop;
    Eigen::MatrixXd eps;  // batch x L
};

LossDraws draw_loss_inputs(std::size_t batch, int L, int T, double p_uncond, Rng& timestep_rng, Rng& noise_rng,
                           Rng& dropout_rng);

struct LossResult {
    double loss = 0.0;
    std::vector<nn::Matrix> gradients;  // aligned with model.params
};

/// Mean squared error between drawn noise and the network's prediction, plus
/// gradients with respect to every parameter.
LossResult loss_simple(const DenoiserModel& model, const std::vector<TrainItem>& batch, const NoiseSchedule& s,
                       const LossDraws& draws);
/// Draws t, eps and the dropout mask from a single stream.
LossResult loss_simple(const DenoiserModel& model, const std::vector<TrainItem>& batch, const NoiseSchedule& s,
                       double p_uncond, Rng& rng);

struct AdamState {
    std::vector<nn::Matrix> m;
    std::vector<nn::Matrix> v;
    long long step = 0;
};

/// Everything needed to resume or evaluate a run.
struct TrainState {
    DenoiserModel model;                  // raw optimizer weights
    std::optional<ParameterStore> ema;    // moving average, when enabled
    AdamState adam;

    /// Weights used for every downstream evaluation (EMA when present).
    DenoiserModel sampling_model() const;
};

/// Clips gradients to a global L2 norm; returns the pre-clip norm.
double clip_global_norm(std::vector<nn::Matrix>& grads, double max_norm);

void adam_update(ParameterStore& params, AdamState& state, const std::vector<nn::Matrix>& grads, double step_size,
                 double beta1, double beta2, double eps);

/// ema <- decay * ema + (1 - decay) * params.
void ema_update(ParameterStore& ema, const ParameterStore& params, double decay);

/// Fits feature statistics, then runs cfg.steps optimizer updates with batches
/// drawn with replacement. Seed streams: "init" (parameters, when
/// `initialize` is set), "data" (batch indices), "timestep", "noise", "dropout".
std::pair<TrainState, TrainReport> train(TrainState state, const Dataset& ds_train, const TrainConfig& cfg,
                                         const NoiseSchedule& s);

/// Fresh state for `cfg`, initialized from the "init" stream of `seed`.
TrainState initial_state(const DenoiserConfig& model_cfg, std::uint64_t seed);

}  // namespace diffbatt
