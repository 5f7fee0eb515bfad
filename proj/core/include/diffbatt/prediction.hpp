#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "diffbatt/data.hpp"
#include "diffbatt/denoiser.hpp"
#include "diffbatt/rng.hpp"
#include "diffbatt/schedule.hpp"

namespace diffbatt {

struct PredictionResult {
    Eigen::VectorXd selected;
    std::size_t selected_index = 0;
    std::vector<Eigen::VectorXd> samples;
    std::vector<double> fit_rmse;          // per sample
    std::vector<std::optional<int>> ruls;  // per sample at the primary threshold
    std::optional<int> rul;                // of the selected sample; empty when censored
    std::optional<double> rul_std;         // empty with fewer than two uncensored samples

    double selected_fit() const { return fit_rmse[selected_index]; }
};

struct EolConfig {
    std::vector<double> thresholds{0.9, 0.8, 0.7, 0.6};

    void validate() const;
};

struct PredictConfig {
    int K = 10;
    double w = 0.0;
    double threshold = 0.8;
    /// Early cycles (1..n) used to pick the best-fitting sample.
    int fit_cycles = 100;

    void validate() const;
};

/// SOH of a measured curve at integer cycles 1..n (linear interpolation,
/// first value held before the first observation, last value held after).
Eigen::VectorXd observed_early(const DegradationCurve& curve, int n = 100);

/// RMSE between a gridded curve evaluated at cycles 1..n and `observed` (length n).
double early_fit_rmse(const Eigen::VectorXd& values, const GridSpec& grid, const Eigen::VectorXd& observed);

/// Rounded cycle of the first grid node strictly below `threshold`; empty if none.
std::optional<int> rul_from_soh(const Eigen::VectorXd& values, const GridSpec& grid, double threshold);

/// Population standard deviation over uncensored per-sample RULs.
std::optional<double> rul_uncertainty(const std::vector<Eigen::VectorXd>& samples, const GridSpec& grid,
                                      double threshold);
std::optional<double> rul_uncertainty(const std::vector<std::optional<int>>& ruls);

struct SohRmse {
    double value = 0.0;  // percentage points
    int n_j = 0;         // last node included
    bool censored = false;
};

/// RMSE in percent over nodes 0..n_j, with n_j the first node where `pred`
/// is below `threshold` (the last node when it never is). The reference is
/// gridded with zero padding beyond its last observed cycle.
SohRmse soh_rmse(const Eigen::VectorXd& pred, const GridSpec& grid, const DegradationCurve& ref, double threshold);

/// Draws K samples for one capacity matrix and keeps the one that best fits `observed`.
PredictionResult predict(const DenoiserModel& model, const CapacityMatrix& q, const Eigen::VectorXd& observed,
                         const PredictConfig& cfg, const NoiseSchedule& schedule, Rng& rng);

struct CellPrediction {
    std::string cell_id;
    std::optional<int> true_rul;
    PredictionResult result;
};

/// Predictions for every cell; cell i samples from Rng(seed).split("predict").split(i).
std::vector<CellPrediction> predict_dataset(const DenoiserModel& model, const Dataset& ds, const PredictConfig& cfg,
                                            const NoiseSchedule& schedule, std::uint64_t seed);

struct RulScore {
    double rmse = 0.0;
    int censored = 0;
    std::vector<double> abs_errors;  // per cell, censored scored at the grid maximum
};

/// RUL RMSE over cells; censored predictions count as grid.max_cycle.
RulScore score_rul(const std::vector<CellPrediction>& preds, const GridSpec& grid);

struct SohScore {
    double mean_rmse = 0.0;
    int censored = 0;
};

SohScore score_soh(const std::vector<CellPrediction>& preds, const Dataset& ds, double threshold);

/// RMSE of predicting the mean training RUL for every test cell.
double mean_baseline_rmse(const Dataset& train, const Dataset& test);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct EvalRow {
    std::string metric;
    std::string dataset;
    std::string seed;  // numeric, or "mean" / "std" for aggregate rows
    double value = 0.0;
};

class EvalReport {
public:
    void add(std::string metric, std::string dataset, std::uint64_t seed, double value);
    /// Appends mean and population std rows for every metric added so far.
    void finalize();

    const std::vector<EvalRow>& rows() const { return rows_; }
    std::optional<double> find(const std::string& metric, const std::string& seed) const;

    /// `metric,dataset,seed,value`.
    std::string to_csv() const;
    /// One line per metric with `mean_{std}` cells.
    std::string to_table() const;

private:
    std::vector<EvalRow> rows_;
};

/// Trained weights tagged with the seed of their run.
struct SeededModel {
    std::uint64_t seed = 0;
    const DenoiserModel* model = nullptr;
};

EvalReport eval_rul(const std::vector<SeededModel>& models, const Dataset& ds_test, const PredictConfig& cfg,
                    const NoiseSchedule& schedule, const std::string& dataset_name = "test");

EvalReport eval_soh(const std::vector<SeededModel>& models, const Dataset& ds_test, const PredictConfig& cfg,
                    const EolConfig& eols, const NoiseSchedule& schedule, const std::string& dataset_name = "test");

/// Per-cell predictions as JSON (selected curve, sample RULs, fit errors).
std::string predictions_to_json(const std::vector<CellPrediction>& preds, const GridSpec& grid);

/// Formats mean and std as `mean_{std}`.
std::string format_mean_std(double mean, double sd, int precision = 2);

}  // namespace diffbatt
