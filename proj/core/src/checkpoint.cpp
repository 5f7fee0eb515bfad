#include "diffbatt/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "diffbatt/errors.hpp"

namespace diffbatt {

namespace {

constexpr const char* kMagic = "diffbatt-checkpoint";

std::string shape_str(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

std::uint32_t swap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

std::string encode_blob(const nn::Matrix& m) {
    std::string bytes(static_cast<std::size_t>(m.size()) * 4, '\0');
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            auto u = std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)));
            if constexpr (std::endian::native == std::endian::big) u = swap32(u);
            std::memcpy(bytes.data() + 4 * k++, &u, 4);
        }
    return bytes;
}

nn::Matrix decode_blob(const std::string& bytes, Eigen::Index rows, Eigen::Index cols) {
    nn::Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            std::uint32_t u;
            std::memcpy(&u, bytes.data() + 4 * k++, 4);
            if constexpr (std::endian::native == std::endian::big) u = swap32(u);
            m(r, c) = static_cast<double>(std::bit_cast<float>(u));
        }
    return m;
}

std::uint32_t crc(const std::string& bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_vector(std::ostream& os, const char* key, const Eigen::VectorXd& v) {
    os << key << ' ' << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << exact(v(i));
    os << '\n';
}

Eigen::VectorXd read_vector(std::istringstream& is) {
    Eigen::Index n = 0;
    if (!(is >> n) || n < 0) throw CorruptionError("checkpoint: bad vector length");
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::string tok;
        if (!(is >> tok)) throw CorruptionError("checkpoint: truncated vector");
        v(i) = std::strtod(tok.c_str(), nullptr);
    }
    return v;
}

std::string line_value(const std::string& line, const std::string& key) {
    if (line.rfind(key + " ", 0) != 0) throw CorruptionError("checkpoint: expected '" + key + "' header line");
    return line.substr(key.size() + 1);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    const auto& m = state.model;
    std::vector<std::pair<std::string, const nn::Matrix*>> blobs;
    for (std::size_t i = 0; i < m.params.size(); ++i) blobs.emplace_back("param/" + m.params.names[i], &m.params.values[i]);
    if (state.ema)
        for (std::size_t i = 0; i < state.ema->size(); ++i)
            blobs.emplace_back("ema/" + state.ema->names[i], &state.ema->values[i]);
    if (!state.adam.m.empty())
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            blobs.emplace_back("adam_m/" + m.params.names[i], &state.adam.m[i]);
            blobs.emplace_back("adam_v/" + m.params.names[i], &state.adam.v[i]);
        }

    std::ostringstream os;
    os << kMagic << '\n';
    os << "format_version " << kCheckpointVersion << '\n';
    os << "config " << m.config.to_string() << '\n';
    os << "schedule " << m.schedule << '\n';
    os << "grid " << m.grid.length << ' ' << m.grid.max_cycle << '\n';
    write_vector(os, "norm_mean", m.norm_stats.mean);
    write_vector(os, "norm_sd", m.norm_stats.sd);
    os << "ema " << (state.ema ? 1 : 0) << '\n';
    os << "adam_step " << state.adam.step << '\n';
    os << "blobs " << blobs.size() << '\n';
    os << "end_header\n";
    for (const auto& [name, mat] : blobs) {
        const std::string bytes = encode_blob(*mat);
        os << "blob " << name << ' ' << mat->rows() << ' ' << mat->cols() << ' ' << crc(bytes) << '\n';
        os << bytes;
    }
    os << "end\n";

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint " + path.string());
        const std::string s = os.str();
        f.write(s.data(), static_cast<std::streamsize>(s.size()));
        if (!f) throw IoError("failed writing checkpoint " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

TrainState load_checkpoint(const std::filesystem::path& path, const DenoiserConfig* expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    auto next_line = [&](const char* what) {
        std::string line;
        // A line without its newline means the file was cut short.
        if (!std::getline(f, line) || f.eof()) throw CorruptionError(std::string("checkpoint truncated before ") + what);
        return line;
    };

    if (next_line("magic") != kMagic) throw CorruptionError(path.string() + " is not a checkpoint");
    const int version = std::atoi(line_value(next_line("version"), "format_version").c_str());
    if (version != kCheckpointVersion)
        throw IncompatibleError("checkpoint format version " + std::to_string(version) + ", this build reads version " +
                                std::to_string(kCheckpointVersion));

    DenoiserConfig cfg;
    try {
        cfg = DenoiserConfig::from_string(line_value(next_line("config"), "config"));
    } catch (const ConfigError& e) {
        throw CorruptionError(std::string("checkpoint configuration unreadable: ") + e.what());
    }
    TrainState st;
    st.model = make_empty_model(cfg);
    auto& m = st.model;
    m.schedule = line_value(next_line("schedule"), "schedule");
    {
        std::istringstream is(line_value(next_line("grid"), "grid"));
        if (!(is >> m.grid.length >> m.grid.max_cycle)) throw CorruptionError("checkpoint: bad grid line");
    }
    {
        std::istringstream is(line_value(next_line("norm_mean"), "norm_mean"));
        m.norm_stats.mean = read_vector(is);
    }
    {
        std::istringstream is(line_value(next_line("norm_sd"), "norm_sd"));
        m.norm_stats.sd = read_vector(is);
    }
    const bool has_ema = line_value(next_line("ema"), "ema") == "1";
    st.adam.step = std::atoll(line_value(next_line("adam_step"), "adam_step").c_str());
    const long n_blobs = std::atol(line_value(next_line("blobs"), "blobs").c_str());
    if (next_line("header end") != "end_header") throw CorruptionError("checkpoint header is malformed");

    if (expected != nullptr && !(*expected == cfg)) {
        if (expected->L != cfg.L)
            throw IncompatibleError("checkpoint curve shape (" + std::to_string(cfg.L) + ") vs expected (" +
                                    std::to_string(expected->L) + ")");
        if (expected->n_early != cfg.n_early || expected->n_feat != cfg.n_feat)
            throw IncompatibleError("checkpoint capacity shape " + shape_str(cfg.n_early, cfg.n_feat) +
                                    " vs expected " + shape_str(expected->n_early, expected->n_feat));
        throw IncompatibleError("checkpoint architecture '" + cfg.to_string() + "' vs expected '" +
                                expected->to_string() + "'");
    }

    if (has_ema) st.ema = m.params;
    std::vector<nn::Matrix> am = m.params.zeros_like(), av = m.params.zeros_like();
    std::vector<char> seen_param(m.params.size(), 0), seen_ema(m.params.size(), 0), seen_adam(m.params.size(), 0);
    for (long b = 0; b < n_blobs; ++b) {
        std::istringstream is(line_value(next_line("blob"), "blob"));
        std::string name;
        Eigen::Index rows = 0, cols = 0;
        std::uint32_t sum = 0;
        if (!(is >> name >> rows >> cols >> sum) || rows < 0 || cols < 0)
            throw CorruptionError("checkpoint: bad blob descriptor");
        std::string bytes(static_cast<std::size_t>(rows * cols) * 4, '\0');
        f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
            throw CorruptionError("checkpoint truncated inside blob " + name);
        if (crc(bytes) != sum) throw CorruptionError("checksum mismatch in blob " + name);

        const auto slash = name.find('/');
        if (slash == std::string::npos) throw CorruptionError("checkpoint: unnamed blob group");
        const std::string group = name.substr(0, slash);
        const int idx = m.params.index_of(name.substr(slash + 1));
        if (idx < 0) throw IncompatibleError("checkpoint parameter " + name + " is unknown to this architecture");
        const auto ui = static_cast<std::size_t>(idx);
        const auto& want = m.params.values[ui];
        if (want.rows() != rows || want.cols() != cols)
            throw IncompatibleError("parameter " + name + ": checkpoint shape " + shape_str(rows, cols) +
                                    ", model expects " + shape_str(want.rows(), want.cols()));
        nn::Matrix value = decode_blob(bytes, rows, cols);
        if (group == "param") {
            m.params.values[ui] = std::move(value);
            seen_param[ui] = 1;
        } else if (group == "ema" && st.ema) {
            st.ema->values[ui] = std::move(value);
            seen_ema[ui] = 1;
        } else if (group == "adam_m") {
            am[ui] = std::move(value);
            seen_adam[ui] |= 1;
        } else if (group == "adam_v") {
            av[ui] = std::move(value);
            seen_adam[ui] |= 2;
        } else {
            throw CorruptionError("checkpoint: unknown blob group " + group);
        }
    }
    if (next_line("trailer") != "end") throw CorruptionError("checkpoint trailer missing");
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        if (!seen_param[i]) throw CorruptionError("checkpoint lacks parameter " + m.params.names[i]);
        if (st.ema && !seen_ema[i]) throw CorruptionError("checkpoint lacks EMA parameter " + m.params.names[i]);
    }
    st.adam.m = std::move(am);
    st.adam.v = std::move(av);
    return st;
}

}  // namespace diffbatt
