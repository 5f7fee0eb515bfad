#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "diffbatt/data.hpp"
#include "diffbatt/denoiser.hpp"
#include "diffbatt/schedule.hpp"
#include "diffbatt/training.hpp"

namespace testutil {

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

void write_file(const std::filesystem::path& p, const std::string& text);
std::string read_file(const std::filesystem::path& p);

/// Small architecture used across tests (L = 16, one level, 4 channels).
diffbatt::DenoiserConfig tiny_config(int n_feat = 2, int n_early = 6);

/// Dataset of `n` synthetic power-law cells on an L-node grid with short capacity histories.
diffbatt::Dataset tiny_dataset(int n, int L, int n_feat, int n_early, std::uint64_t seed);

/// Exhaustive k-NN manifold precision/recall over all pairwise distances.
std::pair<double, double> brute_precision_recall(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, int k);

/// Tiny model briefly trained on `ds` under a linear schedule of T steps.
diffbatt::TrainState tiny_trained(const diffbatt::Dataset& ds, int T, int steps = 20, std::uint64_t seed = 1);

/// Redraws every parameter from N(0, scale^2) so no layer is zero.
void randomize(diffbatt::DenoiserModel& m, std::uint64_t seed, double scale = 0.3);

/// Batch items referencing every cell of `ds`.
std::vector<diffbatt::TrainItem> items_of(const diffbatt::Dataset& ds);

struct GradientCheck {
    double max_rel_error = 0.0;
    int checked = 0;
};

/// Compares loss_simple gradients against central differences for `n_params`
/// scalar parameters chosen at random (fixed draws, both condition branches).
GradientCheck gradient_check(const diffbatt::DenoiserModel& model, const std::vector<diffbatt::TrainItem>& batch,
                             const diffbatt::NoiseSchedule& s, int n_params, std::uint64_t seed);

}  // namespace testutil
