#include "diffbatt/prediction.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "diffbatt/errors.hpp"
#include "diffbatt/sampler.hpp"

namespace diffbatt {

void EolConfig::validate() const {
    if (thresholds.empty()) throw ConfigError("EOL threshold list is empty");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) throw ConfigError("EOL thresholds must lie in (0, 1)");
        if (i > 0 && !(thresholds[i] < thresholds[i - 1]))
            throw ConfigError("EOL thresholds must be strictly decreasing");
    }
}

void PredictConfig::validate() const {
    if (K < 1) throw ConfigError("K must be at least 1");
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("guidance strength must be finite and non-negative");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
    if (fit_cycles < 1) throw ConfigError("fit_cycles must be positive");
}

Eigen::VectorXd observed_early(const DegradationCurve& curve, int n) {
    if (curve.cycles.empty()) throw ValidationError("cell " + curve.cell_id + ": empty curve");
    Eigen::VectorXd out(n);
    std::size_t j = 0;
    for (int c = 1; c <= n; ++c) {
        while (j + 1 < curve.cycles.size() && curve.cycles[j + 1] <= c) ++j;
        if (c <= curve.cycles.front()) {
            out(c - 1) = curve.soh.front();
        } else if (j + 1 >= curve.cycles.size()) {
            out(c - 1) = curve.soh.back();
        } else {
            const double c0 = curve.cycles[j], c1 = curve.cycles[j + 1];
            const double t = (c - c0) / (c1 - c0);
            out(c - 1) = curve.soh[j] + t * (curve.soh[j + 1] - curve.soh[j]);
        }
    }
    return out;
}

double early_fit_rmse(const Eigen::VectorXd& values, const GridSpec& grid, const Eigen::VectorXd& observed) {
    double sq = 0.0;
    for (Eigen::Index i = 0; i < observed.size(); ++i) {
        const double d = interpolate_grid(values, grid, static_cast<double>(i + 1)) - observed(i);
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(observed.size()));
}

std::optional<int> rul_from_soh(const Eigen::VectorXd& values, const GridSpec& grid, double threshold) {
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (values(i) < threshold) return grid.rounded_cycle_at(static_cast<int>(i));
    return std::nullopt;
}

std::optional<double> rul_uncertainty(const std::vector<std::optional<int>>& ruls) {
    std::vector<double> v;
    for (const auto& r : ruls)
        if (r) v.push_back(*r);
    if (ruls.size() == 1 && v.size() == 1) return 0.0;
    if (v.size() < 2) return std::nullopt;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    return std::sqrt(sq / static_cast<double>(v.size()));
}

std::optional<double> rul_uncertainty(const std::vector<Eigen::VectorXd>& samples, const GridSpec& grid,
                                      double threshold) {
    if (samples.empty()) throw ParameterError("rul_uncertainty needs at least one sample");
    std::vector<std::optional<int>> ruls;
    for (const auto& s : samples) ruls.push_back(rul_from_soh(s, grid, threshold));
    return rul_uncertainty(ruls);
}

SohRmse soh_rmse(const Eigen::VectorXd& pred, const GridSpec& grid, const DegradationCurve& ref, double threshold) {
    if (pred.size() != grid.length) throw ShapeError("soh_rmse: prediction length does not match the grid");
    SohRmse out;
    out.n_j = static_cast<int>(pred.size()) - 1;
    out.censored = true;
    for (Eigen::Index i = 0; i < pred.size(); ++i)
        if (pred(i) < threshold) {
            out.n_j = static_cast<int>(i);
            out.censored = false;
            break;
        }
    const Eigen::VectorXd y = to_grid(ref, grid).values;
    const auto n = static_cast<Eigen::Index>(out.n_j) + 1;
    out.value = 100.0 * std::sqrt((pred.head(n) - y.head(n)).squaredNorm() / static_cast<double>(n));
    return out;
}

PredictionResult predict(const DenoiserModel& model, const CapacityMatrix& q, const Eigen::VectorXd& observed,
                         const PredictConfig& cfg, const NoiseSchedule& schedule, Rng& rng) {
    cfg.validate();
    check_model_schedule(model, schedule);
    if (observed.size() == 0) throw ShapeError("predict: empty early observation");
    const GridSpec& grid = model.grid;
    grid.validate();

    const std::vector<const CapacityMatrix*> conds(static_cast<std::size_t>(cfg.K), &q);
    GuidanceConfig guidance;
    guidance.w = cfg.w;
    const Eigen::MatrixXd draws = sample_batch(model, conds, guidance, schedule, rng);

    PredictionResult r;
    for (Eigen::Index k = 0; k < draws.rows(); ++k) {
        r.samples.emplace_back(draws.row(k).transpose());
        r.fit_rmse.push_back(early_fit_rmse(r.samples.back(), grid, observed));
        r.ruls.push_back(rul_from_soh(r.samples.back(), grid, cfg.threshold));
    }
    // Strict comparison keeps the lowest index on ties.
    for (std::size_t k = 1; k < r.samples.size(); ++k)
        if (r.fit_rmse[k] < r.fit_rmse[r.selected_index]) r.selected_index = k;
    r.selected = r.samples[r.selected_index];
    r.rul = r.ruls[r.selected_index];
    r.rul_std = rul_uncertainty(r.ruls);
    return r;
}

std::vector<CellPrediction> predict_dataset(const DenoiserModel& model, const Dataset& ds, const PredictConfig& cfg,
                                            const NoiseSchedule& schedule, std::uint64_t seed) {
    if (ds.empty()) throw ValidationError("cannot predict on an empty dataset");
    if (ds.grid.length != model.config.L || ds.grid.max_cycle != model.grid.max_cycle)
        throw ConfigError("dataset grid (" + std::to_string(ds.grid.length) + " nodes to cycle " +
                          std::to_string(ds.grid.max_cycle) + ") does not match the model grid (" +
                          std::to_string(model.grid.length) + " nodes to cycle " +
                          std::to_string(model.grid.max_cycle) + ")");
    const Rng base = Rng(seed).split("predict");
    std::vector<CellPrediction> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& cell = ds.cells[i];
        Rng rng = base.split(static_cast<std::uint64_t>(i));
        out.push_back({cell.curve.cell_id, cell.true_rul,
                       predict(model, cell.capacity, observed_early(cell.curve, cfg.fit_cycles), cfg, schedule, rng)});
    }
    return out;
}

RulScore score_rul(const std::vector<CellPrediction>& preds, const GridSpec& grid) {
    if (preds.empty()) throw ValidationError("no predictions to score");
    RulScore s;
    double sq = 0.0;
    for (const auto& p : preds) {
        if (!p.true_rul) throw ValidationError("cell " + p.cell_id + " has no true RUL");
        int pred = grid.max_cycle;
        if (p.result.rul)
            pred = *p.result.rul;
        else
            ++s.censored;
        const double e = static_cast<double>(pred - *p.true_rul);
        sq += e * e;
        s.abs_errors.push_back(std::abs(e));
    }
    s.rmse = std::sqrt(sq / static_cast<double>(preds.size()));
    return s;
}

SohScore score_soh(const std::vector<CellPrediction>& preds, const Dataset& ds, double threshold) {
    if (preds.size() != ds.size() || preds.empty()) throw ShapeError("score_soh: one prediction per cell required");
    SohScore s;
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const SohRmse r = soh_rmse(preds[i].result.selected, ds.grid, ds.cells[i].curve, threshold);
        total += r.value;
        s.censored += r.censored ? 1 : 0;
    }
    s.mean_rmse = total / static_cast<double>(preds.size());
    return s;
}

double mean_baseline_rmse(const Dataset& train, const Dataset& test) {
    if (train.empty() || test.empty()) throw ValidationError("baseline needs non-empty train and test sets");
    double mean = 0.0;
    for (const auto& c : train.cells) {
        if (!c.true_rul) throw ValidationError("training cell " + c.curve.cell_id + " has no RUL label");
        mean += *c.true_rul;
    }
    mean /= static_cast<double>(train.size());
    double sq = 0.0;
    for (const auto& c : test.cells) {
        if (!c.true_rul) throw ValidationError("test cell " + c.curve.cell_id + " has no RUL label");
        sq += (*c.true_rul - mean) * (*c.true_rul - mean);
    }
    return std::sqrt(sq / static_cast<double>(test.size()));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> rank(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ShapeError("spearman: need two equal-length series of size >= 2");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Reports

std::string format_mean_std(double mean, double sd, int precision) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.*f_{%.*f}", precision, mean, precision, sd);
    return buf;
}

void EvalReport::add(std::string metric, std::string dataset, std::uint64_t seed, double value) {
    rows_.push_back({std::move(metric), std::move(dataset), std::to_string(seed), value});
}

void EvalReport::finalize() {
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<double>> values;
    for (const auto& r : rows_) {
        if (r.seed == "mean" || r.seed == "std") continue;
        auto key = std::make_pair(r.metric, r.dataset);
        if (!values.count(key)) keys.push_back(key);
        values[key].push_back(r.value);
    }
    for (const auto& key : keys) {
        const auto& v = values[key];
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double sq = 0.0;
        for (double x : v) sq += (x - mean) * (x - mean);
        rows_.push_back({key.first, key.second, "mean", mean});
        rows_.push_back({key.first, key.second, "std", std::sqrt(sq / n)});
    }
}

std::optional<double> EvalReport::find(const std::string& metric, const std::string& seed) const {
    for (const auto& r : rows_)
        if (r.metric == metric && r.seed == seed) return r.value;
    return std::nullopt;
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "metric,dataset,seed,value\n";
    char buf[40];
    for (const auto& r : rows_) {
        std::snprintf(buf, sizeof buf, "%.10g", r.value);
        os << r.metric << ',' << r.dataset << ',' << r.seed << ',' << buf << '\n';
    }
    return os.str();
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    std::size_t width = 6;
    for (const auto& r : rows_) width = std::max(width, r.metric.size());
    os << std::string(width - 6, ' ') << "metric  dataset  mean_std\n";
    for (const auto& r : rows_) {
        if (r.seed != "mean") continue;
        const auto sd = [&] {
            for (const auto& s : rows_)
                if (s.seed == "std" && s.metric == r.metric && s.dataset == r.dataset) return s.value;
            return 0.0;
        }();
        os << std::string(width - r.metric.size(), ' ') << r.metric << "  " << r.dataset << "  "
           << format_mean_std(r.value, sd) << '\n';
    }
    return os.str();
}

namespace {

void check_models(const std::vector<SeededModel>& models) {
    if (models.empty()) throw ConfigError("evaluation needs at least one trained model");
    for (const auto& m : models)
        if (m.model == nullptr) throw ConfigError("null model in evaluation list");
}

}  // namespace

EvalReport eval_rul(const std::vector<SeededModel>& models, const Dataset& ds_test, const PredictConfig& cfg,
                    const NoiseSchedule& schedule, const std::string& dataset_name) {
    check_models(models);
    EvalReport rep;
    for (const auto& m : models) {
        const auto preds = predict_dataset(*m.model, ds_test, cfg, schedule, m.seed);
        const RulScore s = score_rul(preds, ds_test.grid);
        rep.add("rul_rmse", dataset_name, m.seed, s.rmse);
        rep.add("rul_censored", dataset_name, m.seed, s.censored);
    }
    rep.finalize();
    return rep;
}

EvalReport eval_soh(const std::vector<SeededModel>& models, const Dataset& ds_test, const PredictConfig& cfg,
                    const EolConfig& eols, const NoiseSchedule& schedule, const std::string& dataset_name) {
    check_models(models);
    eols.validate();
    EvalReport rep;
    for (const auto& m : models) {
        const auto preds = predict_dataset(*m.model, ds_test, cfg, schedule, m.seed);
        for (double tau : eols.thresholds) {
            char name[48];
            std::snprintf(name, sizeof name, "soh_rmse_eol%g", 100.0 * tau);
            const SohScore s = score_soh(preds, ds_test, tau);
            rep.add(name, dataset_name, m.seed, s.mean_rmse);
            std::snprintf(name, sizeof name, "soh_censored_eol%g", 100.0 * tau);
            rep.add(name, dataset_name, m.seed, s.censored);
        }
    }
    rep.finalize();
    return rep;
}

std::string predictions_to_json(const std::vector<CellPrediction>& preds, const GridSpec& grid) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : preds) {
        nlohmann::json cycles = nlohmann::json::array(), soh = nlohmann::json::array(), ruls = nlohmann::json::array();
        for (Eigen::Index i = 0; i < p.result.selected.size(); ++i) {
            cycles.push_back(grid.cycle_at(static_cast<int>(i)));
            soh.push_back(p.result.selected(i));
        }
        for (const auto& r : p.result.ruls) ruls.push_back(r ? nlohmann::json(*r) : nlohmann::json(nullptr));
        nlohmann::json o;
        o["cell_id"] = p.cell_id;
        o["cycles"] = cycles;
        o["soh"] = soh;
        o["selected_index"] = p.result.selected_index;
        o["fit_rmse"] = p.result.fit_rmse;
        o["sample_ruls"] = ruls;
        o["rul"] = p.result.rul ? nlohmann::json(*p.result.rul) : nlohmann::json(nullptr);
        o["rul_std"] = p.result.rul_std ? nlohmann::json(*p.result.rul_std) : nlohmann::json(nullptr);
        o["true_rul"] = p.true_rul ? nlohmann::json(*p.true_rul) : nlohmann::json(nullptr);
        arr.push_back(std::move(o));
    }
    return arr.dump(1) + "\n";
}

}  // namespace diffbatt
