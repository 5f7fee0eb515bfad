#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "diffbatt/data.hpp"
#include "diffbatt/denoiser.hpp"
#include "diffbatt/forest.hpp"
#include "diffbatt/metrics.hpp"
#include "diffbatt/pca.hpp"
#include "diffbatt/rng.hpp"
#include "diffbatt/schedule.hpp"

namespace diffbatt {

struct SynthesisConfig {
    int per_sample = 10;
    double w = 0.0;
    /// Relative standard deviation of the multiplicative condition noise.
    double input_noise = 0.01;
    double threshold = 0.8;

    void validate() const;
};

struct SyntheticSet {
    /// One cell per uncensored draw; capacity is the perturbed raw matrix,
    /// true_rul is read from the generated curve.
    Dataset data;
    int censored = 0;
    int drawn = 0;
};

/// Streams: "input_noise" perturbs the conditions, "sample" drives the sampler.
SyntheticSet synthesize_dataset(const DenoiserModel& model, const Dataset& ds_train, const SynthesisConfig& cfg,
                                const NoiseSchedule& schedule, Rng& rng);

/// Grid curves as rows (n x L).
Eigen::MatrixXd curve_matrix(const Dataset& ds);

/// Flattened capacity matrices standardized with `stats`, one row per cell.
Eigen::MatrixXd forest_features(const Dataset& ds, const FeatureStats& stats);
Eigen::VectorXd rul_labels(const Dataset& ds);

struct AugmentationConfig {
    std::vector<double> w_list{0.0, 1.0, 2.0, 4.0, 6.0};
    int per_sample = 10;
    double input_noise = 0.01;
    double threshold = 0.8;
    int k = 3;
    PcaOptions pca;
    ForestConfig forest;
    /// One forest per seed.
    std::vector<std::uint64_t> seeds{0};
    /// Train forests on real plus synthetic data instead of synthetic only.
    bool include_real = false;
    /// Synthesis for guidance w draws from Rng(synth_seed).split("synth").split("w=<w>").
    std::uint64_t synth_seed = 0;

    void validate() const;
};

struct SynthRow {
    double w = 0.0;
    double fid = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    int n_synthetic = 0;
    int n_censored = 0;
};

struct SynthReport {
    std::vector<SynthRow> rows;
    int latent_dim = 0;
    /// Set when recall at the largest w exceeds recall at w = 0.
    bool recall_trend_violated = false;

    /// Rows FID, Precision, Recall, RMSE (plus counts); one column per w.
    std::string to_csv() const;
    std::string to_table() const;
};

/// Synthetic sets for every w are also returned through `sets` when non-null.
SynthReport eval_augmentation(const DenoiserModel& model, const Dataset& ds_train, const Dataset& ds_test,
                              const AugmentationConfig& cfg, const NoiseSchedule& schedule,
                              std::vector<SyntheticSet>* sets = nullptr);

/// Generated curves as JSON records (cell_id, cycles, soh up to the first
/// zero-padded node, true_rul), in the canonical curve layout without features.
void write_synthetic_json(const std::filesystem::path& path, const SyntheticSet& set);

}  // namespace diffbatt
