#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffbatt/rng.hpp"

namespace diffbatt {

/// Raw per-cell state-of-health series. `soh` is a fraction of nominal
/// capacity until scale_first_cycle() makes soh[0] exactly 1.
struct DegradationCurve {
    std::string cell_id;
    std::vector<int> cycles;
    std::vector<double> soh;

    int life() const { return cycles.empty() ? 0 : cycles.back(); }
};

/// Canonical fixed-length grid: node k sits at cycle 1 + k (C_max - 1) / (L - 1).
struct GridSpec {
    int length = 256;
    int max_cycle = 0;

    double cycle_at(int node) const;
    /// Grid cycle rounded to the nearest integer cycle.
    int rounded_cycle_at(int node) const;
    double spacing() const;
    void validate() const;
};

struct GriddedCurve {
    Eigen::VectorXd values;
    int grid_max_cycle = 0;
    int source_life = 0;
};

/// Early-life feature rows (one per cycle, cycle order).
struct CapacityMatrix {
    std::string cell_id;
    Eigen::MatrixXd rows;

    int n_early() const { return static_cast<int>(rows.rows()); }
    int n_feat() const { return static_cast<int>(rows.cols()); }
};

/// Per-feature standardization constants, fitted on the training split.
struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;

    bool empty() const { return mean.size() == 0; }
    Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
};

enum class Split { train, test };

struct Cell {
    DegradationCurve curve;  // first-cycle scaled
    GriddedCurve grid;
    CapacityMatrix capacity;  // raw (unstandardized) first n_early rows
    std::optional<int> true_rul;
};

struct Dataset {
    std::vector<Cell> cells;
    Split split = Split::train;
    double eol_threshold = 0.8;
    GridSpec grid;

    std::size_t size() const { return cells.size(); }
    bool empty() const { return cells.empty(); }
};

enum class DatasetFormat { canonical_csv, canonical_json };

struct LoadOptions {
    /// grid.max_cycle == 0 selects the automatic bound from this file's lives.
    GridSpec grid;
    int n_early = 100;
    double eol_threshold = 0.8;
    Split split = Split::train;
};

/// 1.1 x the longest life, rounded up to the next multiple of 100.
int default_max_cycle(int longest_life);

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const LoadOptions& options = {});
DatasetFormat format_from_extension(const std::filesystem::path& path);

/// Per-cell record as stored on disk, before scaling and gridding.
struct RawCell {
    DegradationCurve curve;
    Eigen::MatrixXd features;  // n_cycles x n_feat
    std::optional<int> true_rul;
};

std::vector<RawCell> read_raw_cells(const std::filesystem::path& path, DatasetFormat format);
void write_raw_cells_json(const std::filesystem::path& path, const std::vector<RawCell>& cells);
void write_raw_cells_csv(const std::filesystem::path& path, const std::vector<RawCell>& cells);

/// Builds a dataset from raw records; shared by load_dataset and the generator.
Dataset assemble_dataset(std::vector<RawCell> raw, const LoadOptions& options);

DegradationCurve scale_first_cycle(const DegradationCurve& curve);

/// Piecewise-linear interpolation onto the grid, exact zeros past the last
/// observed cycle. Nodes before the first observation hold soh[0].
GriddedCurve to_grid(const DegradationCurve& curve, int length, int max_cycle);
inline GriddedCurve to_grid(const DegradationCurve& curve, const GridSpec& grid) {
    return to_grid(curve, grid.length, grid.max_cycle);
}

/// Linear interpolation of a gridded vector at a (possibly fractional) cycle.
double interpolate_grid(const Eigen::VectorXd& values, const GridSpec& grid, double cycle);

/// First `n_early` rows of the per-cycle table, standardized when stats are given.
CapacityMatrix build_capacity_matrix(const Eigen::MatrixXd& raw, int n_early = 100,
                                     const FeatureStats* stats = nullptr, std::string cell_id = {});

FeatureStats fit_feature_stats(const Dataset& train);

/// First observed cycle with soh strictly below the threshold.
std::optional<int> first_crossing(const DegradationCurve& curve, double threshold);

/// Power-law oracle cell: SOH(n) = 1 - a n^b.
struct SyntheticCell {
    DegradationCurve curve;  // unscaled formula values, cycles 1..floor crossing
    GriddedCurve grid;
    CapacityMatrix capacity;
    Eigen::MatrixXd features;  // one row per curve cycle
    int true_rul = 0;
};

struct SyntheticCellOptions {
    int n_feat = 8;
    int n_early = 100;
    double eol_threshold = 0.8;
    double floor = 0.6;
};

double power_law_soh(double a, double b, int cycle);

/// Smallest integer n >= 1 with 1 - a n^b < threshold. Starts from the closed-form
/// crossing and corrects it by a local scan so the result agrees with the formula
/// evaluated in floating point.
int power_law_rul(double a, double b, double threshold);

SyntheticCell generate_synthetic_cell(double a, double b, double noise_sd, int length, int max_cycle, Rng& rng,
                                      const SyntheticCellOptions& options = {});

struct SyntheticDatasetConfig {
    int n_train = 64;
    int n_test = 16;
    double a_min = 1e-6;
    double a_max = 1e-2;
    double b_min = 1.0;
    double b_max = 2.0;
    int rul_min = 150;
    int rul_max = 600;
    double noise_sd = 0.001;
    int n_feat = 8;
    int n_early = 100;
    double eol_threshold = 0.8;
    double floor = 0.6;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticDataset {
    std::vector<RawCell> train;
    std::vector<RawCell> test;
};

/// Draws (a, b) log-uniform/uniform and keeps cells whose RUL lies in [rul_min, rul_max].
SyntheticDataset generate_synthetic_dataset(const SyntheticDatasetConfig& cfg);

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction, Rng& rng);

}  // namespace diffbatt
