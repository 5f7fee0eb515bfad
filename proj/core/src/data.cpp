#include "diffbatt/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "diffbatt/errors.hpp"

namespace diffbatt {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse number '" + s + "'");
    return v;
}

int parse_int(const std::string& s, std::size_t line_no) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse integer '" + s + "'");
    return v;
}

void validate_curve(const DegradationCurve& c) {
    if (c.cycles.empty()) throw ValidationError("cell " + c.cell_id + ": empty curve");
    if (c.cycles.size() != c.soh.size())
        throw ValidationError("cell " + c.cell_id + ": cycles and soh lengths differ");
    for (std::size_t i = 1; i < c.cycles.size(); ++i) {
        if (c.cycles[i] <= c.cycles[i - 1])
            throw ValidationError("cell " + c.cell_id + ": cycles not strictly increasing at index " +
                                  std::to_string(i));
    }
    if (c.cycles.front() < 1) throw ValidationError("cell " + c.cell_id + ": cycle numbers start at 1");
    for (double v : c.soh) {
        if (!std::isfinite(v)) throw ValidationError("cell " + c.cell_id + ": non-finite soh");
    }
}

}  // namespace

double GridSpec::cycle_at(int node) const {
    return 1.0 + static_cast<double>(node) * static_cast<double>(max_cycle - 1) / static_cast<double>(length - 1);
}

int GridSpec::rounded_cycle_at(int node) const {
    return static_cast<int>(std::lround(cycle_at(node)));
}

double GridSpec::spacing() const {
    return static_cast<double>(max_cycle - 1) / static_cast<double>(length - 1);
}

void GridSpec::validate() const {
    if (length < 2) throw ConfigError("grid length must be >= 2, got " + std::to_string(length));
    if (max_cycle < 2) throw ConfigError("grid max cycle must be >= 2, got " + std::to_string(max_cycle));
}

Eigen::MatrixXd FeatureStats::apply(const Eigen::MatrixXd& rows) const {
    if (empty()) return rows;
    if (rows.cols() != mean.size())
        throw ShapeError("feature count " + std::to_string(rows.cols()) + " does not match statistics (" +
                         std::to_string(mean.size()) + ")");
    Eigen::MatrixXd out = rows;
    for (Eigen::Index j = 0; j < rows.cols(); ++j) out.col(j) = (rows.col(j).array() - mean(j)) / sd(j);
    return out;
}

int default_max_cycle(int longest_life) {
    // ceil(1.1 * life / 100) * 100 in integer arithmetic.
    const long long scaled = 11LL * longest_life;
    return static_cast<int>(((scaled + 999) / 1000) * 100);
}

DegradationCurve scale_first_cycle(const DegradationCurve& curve) {
    if (curve.soh.empty()) throw ValidationError("cell " + curve.cell_id + ": empty curve");
    const double first = curve.soh.front();
    if (!(first > 0.0)) throw ValidationError("cell " + curve.cell_id + ": degenerate cell, first-cycle soh <= 0");
    DegradationCurve out = curve;
    for (double& v : out.soh) v /= first;
    out.soh.front() = 1.0;
    return out;
}

GriddedCurve to_grid(const DegradationCurve& curve, int length, int max_cycle) {
    GridSpec grid{length, max_cycle};
    grid.validate();
    if (curve.cycles.empty()) throw ValidationError("cell " + curve.cell_id + ": empty curve");
    if (curve.cycles.front() > max_cycle)
        throw ConfigError("cell " + curve.cell_id + " starts at cycle " + std::to_string(curve.cycles.front()) +
                          ", beyond grid maximum " + std::to_string(max_cycle));

    GriddedCurve out;
    out.values = Eigen::VectorXd::Zero(length);
    out.grid_max_cycle = max_cycle;
    out.source_life = curve.life();

    std::size_t seg = 0;
    const long long span = max_cycle - 1;
    for (int k = 0; k < length; ++k) {
        // Exact integer node positions where possible so on-grid curves round trip.
        const long long num = static_cast<long long>(k) * span;
        const double c = (num % (length - 1) == 0) ? static_cast<double>(1 + num / (length - 1)) : grid.cycle_at(k);
        if (c > static_cast<double>(out.source_life)) break;
        if (c <= static_cast<double>(curve.cycles.front())) {
            out.values(k) = curve.soh.front();
            continue;
        }
        while (seg + 1 < curve.cycles.size() && static_cast<double>(curve.cycles[seg + 1]) <= c) ++seg;
        if (seg + 1 == curve.cycles.size()) {
            out.values(k) = curve.soh.back();
            continue;
        }
        const double c0 = curve.cycles[seg];
        const double c1 = curve.cycles[seg + 1];
        const double t = (c - c0) / (c1 - c0);
        out.values(k) = curve.soh[seg] + t * (curve.soh[seg + 1] - curve.soh[seg]);
    }
    return out;
}

double interpolate_grid(const Eigen::VectorXd& values, const GridSpec& grid, double cycle) {
    const double pos = (cycle - 1.0) / grid.spacing();
    if (pos <= 0.0) return values(0);
    const auto last = static_cast<double>(values.size() - 1);
    if (pos >= last) return values(values.size() - 1);
    const auto k = static_cast<Eigen::Index>(std::floor(pos));
    const double t = pos - static_cast<double>(k);
    return values(k) + t * (values(k + 1) - values(k));
}

CapacityMatrix build_capacity_matrix(const Eigen::MatrixXd& raw, int n_early, const FeatureStats* stats,
                                     std::string cell_id) {
    if (n_early < 1) throw ParameterError("n_early must be positive");
    if (raw.rows() < n_early)
        throw ValidationError("cell " + cell_id + ": insufficient history, " + std::to_string(raw.rows()) +
                              " cycles < " + std::to_string(n_early));
    CapacityMatrix q;
    q.cell_id = std::move(cell_id);
    q.rows = raw.topRows(n_early);
    if (stats != nullptr) q.rows = stats->apply(q.rows);
    if (!q.rows.allFinite()) throw ValidationError("cell " + q.cell_id + ": non-finite capacity-matrix entry");
    return q;
}

FeatureStats fit_feature_stats(const Dataset& train) {
    if (train.empty()) throw ParameterError("cannot fit feature statistics on an empty dataset");
    const Eigen::Index n_feat = train.cells.front().capacity.rows.cols();
    FeatureStats s;
    s.mean = Eigen::VectorXd::Zero(n_feat);
    s.sd = Eigen::VectorXd::Zero(n_feat);
    double count = 0.0;
    for (const auto& cell : train.cells) {
        if (cell.capacity.rows.cols() != n_feat) throw ShapeError("inconsistent feature count across cells");
        s.mean += cell.capacity.rows.colwise().sum().transpose();
        count += static_cast<double>(cell.capacity.rows.rows());
    }
    s.mean /= count;
    for (const auto& cell : train.cells) {
        const Eigen::MatrixXd centered = cell.capacity.rows.rowwise() - s.mean.transpose();
        s.sd += centered.array().square().colwise().sum().matrix().transpose();
    }
    s.sd = (s.sd / count).array().sqrt();
    for (Eigen::Index j = 0; j < n_feat; ++j) {
        if (!(s.sd(j) > 1e-12)) s.sd(j) = 1.0;
    }
    return s;
}

std::optional<int> first_crossing(const DegradationCurve& curve, double threshold) {
    for (std::size_t i = 0; i < curve.soh.size(); ++i) {
        if (curve.soh[i] < threshold) return curve.cycles[i];
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// File formats

DatasetFormat format_from_extension(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".csv") return DatasetFormat::canonical_csv;
    if (ext == ".json" || ext == ".jsonl") return DatasetFormat::canonical_json;
    throw ConfigError("cannot infer dataset format from '" + path.string() + "'");
}

namespace {

std::vector<RawCell> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_csv_line(line);
            break;
        }
    }
    if (header.size() < 3 || header[0] != "cell_id" || header[1] != "cycle" || header[2] != "soh")
        throw SchemaError("line " + std::to_string(line_no) + ": header must start with cell_id,cycle,soh");
    const std::size_t n_feat = header.size() - 3;

    struct Row {
        int cycle;
        double soh;
        std::vector<double> f;
        std::size_t line;
    };
    std::map<std::string, std::vector<Row>> by_cell;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        Row r{parse_int(fields[1], line_no), parse_double(fields[2], line_no), {}, line_no};
        r.f.reserve(n_feat);
        for (std::size_t j = 0; j < n_feat; ++j) r.f.push_back(parse_double(fields[3 + j], line_no));
        if (fields[0].empty()) throw ParseError("line " + std::to_string(line_no) + ": empty cell_id");
        by_cell[fields[0]].push_back(std::move(r));
    }

    std::vector<RawCell> cells;
    for (auto& [id, rows] : by_cell) {
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.cycle < b.cycle; });
        RawCell cell;
        cell.curve.cell_id = id;
        cell.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_feat));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i > 0 && rows[i].cycle == rows[i - 1].cycle)
                throw ValidationError("cell " + id + ": duplicate cycle " + std::to_string(rows[i].cycle) +
                                      " (line " + std::to_string(rows[i].line) + ")");
            cell.curve.cycles.push_back(rows[i].cycle);
            cell.curve.soh.push_back(rows[i].soh);
            for (std::size_t j = 0; j < n_feat; ++j)
                cell.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].f[j];
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

RawCell cell_from_json(const nlohmann::json& obj, std::size_t index) {
    const std::string where = "object " + std::to_string(index);
    if (!obj.is_object()) throw SchemaError(where + ": expected a JSON object");
    for (const char* key : {"cell_id", "cycles", "soh"}) {
        if (!obj.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
    }
    RawCell cell;
    try {
        cell.curve.cell_id = obj.at("cell_id").get<std::string>();
        cell.curve.cycles = obj.at("cycles").get<std::vector<int>>();
        cell.curve.soh = obj.at("soh").get<std::vector<double>>();
        std::vector<std::vector<double>> feats;
        if (obj.contains("features")) feats = obj.at("features").get<std::vector<std::vector<double>>>();
        if (obj.contains("true_rul") && !obj.at("true_rul").is_null()) cell.true_rul = obj.at("true_rul").get<int>();
        const std::size_t n_feat = feats.empty() ? 0 : feats.front().size();
        if (!feats.empty() && feats.size() != cell.curve.cycles.size())
            throw SchemaError(where + " (" + cell.curve.cell_id + "): features must have one row per cycle");
        cell.features.resize(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(n_feat));
        for (std::size_t i = 0; i < feats.size(); ++i) {
            if (feats[i].size() != n_feat) throw SchemaError(where + ": ragged feature rows");
            for (std::size_t j = 0; j < n_feat; ++j)
                cell.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feats[i][j];
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(where + ": " + e.what());
    }
    return cell;
}

std::vector<RawCell> read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<RawCell> cells;
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    try {
        if (first != std::string::npos && text[first] == '[') {
            const auto doc = nlohmann::json::parse(text);
            for (std::size_t i = 0; i < doc.size(); ++i) cells.push_back(cell_from_json(doc[i], i));
        } else {
            // One object per line.
            std::istringstream lines(text);
            std::string line;
            std::size_t line_no = 0;
            while (std::getline(lines, line)) {
                ++line_no;
                if (trim(line).empty()) continue;
                nlohmann::json obj;
                try {
                    obj = nlohmann::json::parse(line);
                } catch (const nlohmann::json::parse_error& e) {
                    throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
                }
                cells.push_back(cell_from_json(obj, cells.size()));
            }
        }
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return cells;
}

}  // namespace

std::vector<RawCell> read_raw_cells(const std::filesystem::path& path, DatasetFormat format) {
    if (!std::filesystem::exists(path)) throw IoError("dataset file not found: " + path.string());
    auto cells = format == DatasetFormat::canonical_csv ? read_csv(path) : read_json(path);
    std::set<std::string> seen;
    for (const auto& c : cells) {
        if (!seen.insert(c.curve.cell_id).second) throw SchemaError("duplicate cell_id '" + c.curve.cell_id + "'");
        validate_curve(c.curve);
    }
    return cells;
}

void write_raw_cells_json(const std::filesystem::path& path, const std::vector<RawCell>& cells) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "[\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& c = cells[i];
        nlohmann::json obj;
        obj["cell_id"] = c.curve.cell_id;
        obj["cycles"] = c.curve.cycles;
        obj["soh"] = c.curve.soh;
        auto feats = nlohmann::json::array();
        for (Eigen::Index r = 0; r < c.features.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(c.features.cols()));
            for (Eigen::Index j = 0; j < c.features.cols(); ++j) row[static_cast<std::size_t>(j)] = c.features(r, j);
            feats.push_back(std::move(row));
        }
        obj["features"] = std::move(feats);
        if (c.true_rul) obj["true_rul"] = *c.true_rul;
        out << obj.dump() << (i + 1 < cells.size() ? ",\n" : "\n");
    }
    out << "]\n";
    if (!out) throw IoError("write failed: " + path.string());
}

void write_raw_cells_csv(const std::filesystem::path& path, const std::vector<RawCell>& cells) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const Eigen::Index n_feat = cells.empty() ? 0 : cells.front().features.cols();
    out << "cell_id,cycle,soh";
    for (Eigen::Index j = 0; j < n_feat; ++j) out << ",f" << (j + 1);
    out << '\n';
    out.precision(17);
    for (const auto& c : cells) {
        for (std::size_t i = 0; i < c.curve.cycles.size(); ++i) {
            out << c.curve.cell_id << ',' << c.curve.cycles[i] << ',' << c.curve.soh[i];
            for (Eigen::Index j = 0; j < n_feat; ++j) out << ',' << c.features(static_cast<Eigen::Index>(i), j);
            out << '\n';
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

Dataset assemble_dataset(std::vector<RawCell> raw, const LoadOptions& options) {
    std::sort(raw.begin(), raw.end(),
              [](const RawCell& a, const RawCell& b) { return a.curve.cell_id < b.curve.cell_id; });
    Dataset ds;
    ds.split = options.split;
    ds.eol_threshold = options.eol_threshold;
    ds.grid = options.grid;
    if (ds.grid.max_cycle == 0) {
        int longest = 1;
        for (const auto& c : raw) longest = std::max(longest, c.curve.life());
        ds.grid.max_cycle = default_max_cycle(longest);
    }
    ds.grid.validate();
    for (auto& r : raw) {
        Cell cell;
        cell.curve = scale_first_cycle(r.curve);
        for (double v : cell.curve.soh) {
            if (!(v > 0.0 && v <= 1.2))
                throw ValidationError("cell " + cell.curve.cell_id + ": scaled soh " + std::to_string(v) +
                                      " outside (0, 1.2]");
        }
        cell.grid = to_grid(cell.curve, ds.grid);
        cell.capacity = build_capacity_matrix(r.features, options.n_early, nullptr, cell.curve.cell_id);
        cell.true_rul = r.true_rul ? r.true_rul : first_crossing(cell.curve, options.eol_threshold);
        ds.cells.push_back(std::move(cell));
    }
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const LoadOptions& options) {
    return assemble_dataset(read_raw_cells(path, format), options);
}

// ---------------------------------------------------------------------------
// Synthetic oracle

double power_law_soh(double a, double b, int cycle) { return 1.0 - a * std::pow(static_cast<double>(cycle), b); }

int power_law_rul(double a, double b, double threshold) {
    if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("power-law parameters must be positive");
    const double x = std::pow((1.0 - threshold) / a, 1.0 / b);
    if (!std::isfinite(x) || x > 1e9) throw ParameterError("power-law crossing out of range");
    int n = std::max(1, static_cast<int>(std::ceil(x)));
    while (n > 1 && power_law_soh(a, b, n - 1) < threshold) --n;
    while (!(power_law_soh(a, b, n) < threshold)) ++n;
    return n;
}

SyntheticCell generate_synthetic_cell(double a, double b, double noise_sd, int length, int max_cycle, Rng& rng,
                                      const SyntheticCellOptions& options) {
    if (!(a > 0.0)) throw ParameterError("a must be > 0");
    if (!(b > 0.0)) throw ParameterError("b must be > 0");
    if (!(noise_sd >= 0.0)) throw ParameterError("noise_sd must be >= 0");
    if (options.n_feat < 1) throw ParameterError("n_feat must be >= 1");
    GridSpec{length, max_cycle}.validate();

    SyntheticCell out;
    out.true_rul = power_law_rul(a, b, options.eol_threshold);
    if (out.true_rul > max_cycle)
        throw ParameterError("end-of-life crossing at cycle " + std::to_string(out.true_rul) +
                             " lies beyond C_max = " + std::to_string(max_cycle));

    const int floor_cycle = std::min(power_law_rul(a, b, options.floor), max_cycle);
    out.curve.cycles.resize(static_cast<std::size_t>(floor_cycle));
    out.curve.soh.resize(static_cast<std::size_t>(floor_cycle));
    for (int n = 1; n <= floor_cycle; ++n) {
        out.curve.cycles[static_cast<std::size_t>(n - 1)] = n;
        out.curve.soh[static_cast<std::size_t>(n - 1)] = power_law_soh(a, b, n);
    }

    const int n_rows = std::max(floor_cycle, options.n_early);
    Eigen::MatrixXd table(n_rows, options.n_feat);
    for (int n = 1; n <= n_rows; ++n) {
        const double s = power_law_soh(a, b, n);
        for (int j = 0; j < options.n_feat; ++j) table(n - 1, j) = noise_sd > 0.0 ? s + rng.normal(0.0, noise_sd) : s;
    }
    out.capacity = build_capacity_matrix(table, options.n_early);
    out.features = table.topRows(floor_cycle);
    out.grid = to_grid(out.curve, length, max_cycle);
    return out;
}

void SyntheticDatasetConfig::validate() const {
    if (n_train < 1 || n_test < 0) throw ParameterError("cell counts must be positive");
    if (!(a_min > 0.0) || !(a_max >= a_min)) throw ParameterError("require 0 < a_min <= a_max");
    if (!(b_min > 0.0) || !(b_max >= b_min)) throw ParameterError("require 0 < b_min <= b_max");
    if (rul_min < 1 || rul_max < rul_min) throw ParameterError("require 1 <= rul_min <= rul_max");
    if (rul_min <= n_early) throw ParameterError("rul_min must exceed n_early so every cell has a full early history");
    if (!(noise_sd >= 0.0)) throw ParameterError("noise_sd must be >= 0");
    if (!(floor < eol_threshold) || !(floor > 0.0) || !(eol_threshold < 1.0))
        throw ParameterError("require 0 < floor < eol_threshold < 1");
}

SyntheticDataset generate_synthetic_dataset(const SyntheticDatasetConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng params = root.split("params");
    Rng noise = root.split("features");
    SyntheticCellOptions opts{cfg.n_feat, cfg.n_early, cfg.eol_threshold, cfg.floor};
    // Generous bound so no cell is truncated by the grid during generation.
    const int horizon = 1 << 24;

    auto draw = [&](const std::string& prefix, int count) {
        std::vector<RawCell> cells;
        const double la = std::log(cfg.a_min), lb = std::log(cfg.a_max);
        for (int i = 0; i < count; ++i) {
            double a = 0.0, b = 0.0;
            int attempts = 0;
            while (true) {
                if (++attempts > 1000000)
                    throw ParameterError("no (a, b) draw produced an RUL inside [rul_min, rul_max]");
                a = std::exp(params.uniform(la, lb));
                b = params.uniform(cfg.b_min, cfg.b_max);
                const int rul = power_law_rul(a, b, cfg.eol_threshold);
                if (rul >= cfg.rul_min && rul <= cfg.rul_max) break;
            }
            auto cell = generate_synthetic_cell(a, b, cfg.noise_sd, 2, horizon, noise, opts);
            char id[32];
            std::snprintf(id, sizeof(id), "%s_%04d", prefix.c_str(), i);
            RawCell raw;
            raw.curve = std::move(cell.curve);
            raw.curve.cell_id = id;
            raw.features = std::move(cell.features);
            raw.true_rul = cell.true_rul;
            cells.push_back(std::move(raw));
        }
        return cells;
    };
    SyntheticDataset out;
    out.train = draw("train", cfg.n_train);
    out.test = draw("test", cfg.n_test);
    return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction, Rng& rng) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ParameterError("test_fraction must lie in (0, 1)");
    if (ds.empty()) throw ParameterError("cannot split an empty dataset");
    const auto n = ds.cells.size();
    const auto n_test = static_cast<std::size_t>(std::max(1.0, std::round(test_fraction * static_cast<double>(n))));
    if (n_test >= n) throw ParameterError("split would leave the training side empty");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    Dataset train, test;
    for (auto* d : {&train, &test}) {
        d->eol_threshold = ds.eol_threshold;
        d->grid = ds.grid;
    }
    train.split = Split::train;
    test.split = Split::test;
    std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    for (auto i : train_idx) train.cells.push_back(ds.cells[i]);
    for (auto i : test_idx) test.cells.push_back(ds.cells[i]);
    return {std::move(train), std::move(test)};
}

}  // namespace diffbatt
