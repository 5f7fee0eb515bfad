#include "diffbatt/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "diffbatt/errors.hpp"

namespace diffbatt {

using nn::Matrix;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

bool DenoiserConfig::has_attention(int level) const {
    return std::find(attn_levels.begin(), attn_levels.end(), level) != attn_levels.end();
}

void DenoiserConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(L, "L");
    positive(base_channels, "base_channels");
    positive(time_embed_dim, "time_embed_dim");
    positive(cond_embed_dim, "cond_embed_dim");
    positive(position_dim, "position_dim");
    positive(enc_layers, "enc_layers");
    positive(enc_heads, "enc_heads");
    positive(enc_d_model, "enc_d_model");
    positive(enc_ff_mult, "enc_ff_mult");
    positive(n_feat, "n_feat");
    positive(n_early, "n_early");
    if (channel_multipliers.empty()) throw ConfigError("channel_multipliers must name at least one level");
    for (int m : channel_multipliers) positive(m, "channel multiplier");
    for (int a : attn_levels)
        if (a < 0 || a >= levels()) throw ConfigError("attention level " + std::to_string(a) + " out of range");
    const int factor = 1 << (levels() - 1);
    if (L % factor != 0)
        throw ConfigError("L = " + std::to_string(L) + " is not divisible by 2^(levels-1) = " + std::to_string(factor));
    if (time_embed_dim % 2 != 0) throw ConfigError("time_embed_dim must be even");
    if (enc_d_model % enc_heads != 0) throw ConfigError("enc_d_model must be divisible by enc_heads");
}

namespace {

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s.empty() ? "-" : s;
}

std::vector<int> parse_list(const std::string& s) {
    std::vector<int> out;
    if (s == "-" || s.empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

}  // namespace

std::string DenoiserConfig::to_string() const {
    std::ostringstream os;
    os << "L=" << L << " base_channels=" << base_channels << " channel_multipliers=" << join(channel_multipliers)
       << " attn_levels=" << join(attn_levels) << " time_embed_dim=" << time_embed_dim
       << " cond_embed_dim=" << cond_embed_dim << " position_dim=" << position_dim << " enc_layers=" << enc_layers
       << " enc_heads=" << enc_heads << " enc_d_model=" << enc_d_model << " enc_ff_mult=" << enc_ff_mult
       << " n_feat=" << n_feat << " n_early=" << n_early;
    return os.str();
}

DenoiserConfig DenoiserConfig::from_string(const std::string& text) {
    DenoiserConfig c;
    std::istringstream is(text);
    std::string kv;
    while (is >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed config entry '" + kv + "'");
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        try {
            if (key == "L") c.L = std::stoi(val);
            else if (key == "base_channels") c.base_channels = std::stoi(val);
            else if (key == "channel_multipliers") c.channel_multipliers = parse_list(val);
            else if (key == "attn_levels") c.attn_levels = parse_list(val);
            else if (key == "time_embed_dim") c.time_embed_dim = std::stoi(val);
            else if (key == "cond_embed_dim") c.cond_embed_dim = std::stoi(val);
            else if (key == "position_dim") c.position_dim = std::stoi(val);
            else if (key == "enc_layers") c.enc_layers = std::stoi(val);
            else if (key == "enc_heads") c.enc_heads = std::stoi(val);
            else if (key == "enc_d_model") c.enc_d_model = std::stoi(val);
            else if (key == "enc_ff_mult") c.enc_ff_mult = std::stoi(val);
            else if (key == "n_feat") c.n_feat = std::stoi(val);
            else if (key == "n_early") c.n_early = std::stoi(val);
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const std::logic_error&) {
            throw ConfigError("bad value for config key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

std::vector<int> level_resolutions(const DenoiserConfig& cfg) {
    std::vector<int> out;
    for (int i = 0; i < cfg.levels(); ++i) out.push_back(cfg.L >> i);
    return out;
}

std::size_t parameter_count(const DenoiserConfig& cfg) {
    cfg.validate();
    auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
    auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k + out; };
    const std::size_t E = static_cast<std::size_t>(cfg.time_embed_dim + cfg.cond_embed_dim);
    auto res = [&](std::size_t in, std::size_t out) {
        return 2 * in + conv(in, out, 3) + lin(E, out) + 2 * out + conv(out, out, 3) + (in != out ? conv(in, out, 1) : 0);
    };
    auto attn = [&](std::size_t c) { return 2 * c + conv(c, 3 * c, 1) + conv(c, c, 1); };

    const auto T = static_cast<std::size_t>(cfg.time_embed_dim);
    std::size_t n = 2 * lin(T, T);
    const auto base = static_cast<std::size_t>(cfg.base_channels);
    n += conv(1, base, 3);
    std::vector<std::size_t> skips;
    std::size_t cur = base + static_cast<std::size_t>(cfg.position_dim);
    for (int i = 0; i < cfg.levels(); ++i) {
        const auto out = static_cast<std::size_t>(cfg.channels_at(i));
        n += res(cur, out);
        if (cfg.has_attention(i)) n += attn(out);
        skips.push_back(out);
        cur = out;
        if (i + 1 < cfg.levels()) n += conv(cur, cur, 3);
    }
    n += 2 * res(cur, cur) + attn(cur);
    for (int i = cfg.levels() - 1; i >= 0; --i) {
        const auto out = static_cast<std::size_t>(cfg.channels_at(i));
        n += res(cur + skips[static_cast<std::size_t>(i)], out);
        if (cfg.has_attention(i)) n += attn(out);
        cur = out;
        if (i > 0) n += conv(cur, cur, 3);
    }
    n += 2 * cur + conv(cur, 1, 3);

    const auto d = static_cast<std::size_t>(cfg.enc_d_model);
    const auto ff = d * static_cast<std::size_t>(cfg.enc_ff_mult);
    n += lin(static_cast<std::size_t>(cfg.n_feat), d);
    n += static_cast<std::size_t>(cfg.enc_layers) * (2 * d + lin(d, 3 * d) + lin(d, d) + 2 * d + lin(d, ff) + lin(ff, d));
    n += 2 * d + lin(d, static_cast<std::size_t>(cfg.cond_embed_dim));
    n += static_cast<std::size_t>(cfg.cond_embed_dim);
    return n;
}

// ---------------------------------------------------------------------------
// Parameters

void round_to_float(Matrix& m) { m = m.cast<float>().cast<double>(); }

int ParameterStore::add(std::string name, Matrix init) {
    if (index_of(name) >= 0) throw ConfigError("duplicate parameter name " + name);
    names.push_back(std::move(name));
    values.push_back(std::move(init));
    return static_cast<int>(values.size()) - 1;
}

int ParameterStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
}

std::vector<Matrix> ParameterStore::zeros_like() const {
    std::vector<Matrix> out;
    out.reserve(values.size());
    for (const auto& v : values) out.push_back(Matrix::Zero(v.rows(), v.cols()));
    return out;
}

bool ParameterStore::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](const Matrix& m) { return m.allFinite(); });
}

std::uint64_t ParameterStore::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& v : values) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const float f = static_cast<float>(v.data()[i]);
            unsigned char bytes[4];
            std::memcpy(bytes, &f, 4);
            for (unsigned char c : bytes) {
                h ^= c;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

namespace {

class LayoutBuilder {
public:
    LayoutBuilder(ParameterStore& ps, Rng* rng) : ps_(ps), rng_(rng) {}

    Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound) {
        Matrix m = Matrix::Zero(rows, cols);
        if (rng_ != nullptr)
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng_->uniform(-bound, bound);
        round_to_float(m);
        return m;
    }

    DenoiserLayout::Linear linear(const std::string& name, int in, int out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        DenoiserLayout::Linear l;
        l.w = ps_.add(name + ".w", uniform(out, in, bound));
        l.b = ps_.add(name + ".b", uniform(1, out, bound));
        return l;
    }

    DenoiserLayout::Conv conv(const std::string& name, int in, int out, int k, bool zero = false) {
        const double bound = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in * k));
        DenoiserLayout::Conv c;
        c.in = in;
        c.out = out;
        c.kernel = k;
        c.w = ps_.add(name + ".w", zero ? Matrix::Zero(out, in * k) : uniform(out, in * k, bound));
        c.b = ps_.add(name + ".b", zero ? Matrix::Zero(out, 1) : uniform(out, 1, bound));
        return c;
    }

    DenoiserLayout::Norm group_norm(const std::string& name, int channels) {
        DenoiserLayout::Norm n;
        n.groups = nn::norm_groups(channels);
        n.gamma = ps_.add(name + ".gamma", Matrix::Ones(channels, 1));
        n.beta = ps_.add(name + ".beta", Matrix::Zero(channels, 1));
        return n;
    }

    DenoiserLayout::Norm layer_norm(const std::string& name, int d) {
        DenoiserLayout::Norm n;
        n.gamma = ps_.add(name + ".gamma", Matrix::Ones(1, d));
        n.beta = ps_.add(name + ".beta", Matrix::Zero(1, d));
        return n;
    }

    DenoiserLayout::ResBlock res(const std::string& name, int in, int out, int emb_dim) {
        DenoiserLayout::ResBlock r;
        r.n1 = group_norm(name + ".norm1", in);
        r.c1 = conv(name + ".conv1", in, out, 3);
        r.emb = linear(name + ".emb", emb_dim, out);
        r.n2 = group_norm(name + ".norm2", out);
        r.c2 = conv(name + ".conv2", out, out, 3);
        if (in != out) r.skip = conv(name + ".skip", in, out, 1);
        return r;
    }

    DenoiserLayout::Attn attn(const std::string& name, int c) {
        DenoiserLayout::Attn a;
        a.n = group_norm(name + ".norm", c);
        a.qkv = conv(name + ".qkv", c, 3 * c, 1);
        a.proj = conv(name + ".proj", c, c, 1);
        return a;
    }

private:
    ParameterStore& ps_;
    Rng* rng_;
};

DenoiserModel build_model(const DenoiserConfig& cfg, Rng* rng) {
    cfg.validate();
    DenoiserModel m;
    m.config = cfg;
    LayoutBuilder b(m.params, rng);
    auto& lay = m.layout;
    const int E = cfg.time_embed_dim + cfg.cond_embed_dim;

    lay.time1 = b.linear("time.fc1", cfg.time_embed_dim, cfg.time_embed_dim);
    lay.time2 = b.linear("time.fc2", cfg.time_embed_dim, cfg.time_embed_dim);
    lay.conv_in = b.conv("unet.conv_in", 1, cfg.base_channels, 3);

    std::vector<int> skips;
    int cur = cfg.base_channels + cfg.position_dim;
    for (int i = 0; i < cfg.levels(); ++i) {
        const std::string p = "unet.down" + std::to_string(i);
        const int out = cfg.channels_at(i);
        lay.down.push_back(b.res(p + ".res", cur, out, E));
        lay.down_attn.push_back(cfg.has_attention(i) ? std::optional(b.attn(p + ".attn", out)) : std::nullopt);
        skips.push_back(out);
        cur = out;
        if (i + 1 < cfg.levels()) lay.downsample.push_back(b.conv(p + ".downsample", cur, cur, 3));
    }
    lay.mid1 = b.res("unet.mid.res1", cur, cur, E);
    lay.mid_attn = b.attn("unet.mid.attn", cur);
    lay.mid2 = b.res("unet.mid.res2", cur, cur, E);

    lay.up.resize(static_cast<std::size_t>(cfg.levels()));
    lay.up_attn.resize(static_cast<std::size_t>(cfg.levels()));
    lay.upsample.resize(static_cast<std::size_t>(cfg.levels() - 1));
    for (int i = cfg.levels() - 1; i >= 0; --i) {
        const std::string p = "unet.up" + std::to_string(i);
        const int out = cfg.channels_at(i);
        const auto ui = static_cast<std::size_t>(i);
        lay.up[ui] = b.res(p + ".res", cur + skips[ui], out, E);
        if (cfg.has_attention(i)) lay.up_attn[ui] = b.attn(p + ".attn", out);
        cur = out;
        if (i > 0) lay.upsample[ui - 1] = b.conv(p + ".upsample", cur, cur, 3);
    }
    lay.out_norm = b.group_norm("unet.out.norm", cur);
    lay.conv_out = b.conv("unet.out.conv", cur, 1, 3, /*zero=*/true);

    const int d = cfg.enc_d_model;
    lay.enc_in = b.linear("encoder.in", cfg.n_feat, d);
    for (int i = 0; i < cfg.enc_layers; ++i) {
        const std::string p = "encoder.layer" + std::to_string(i);
        DenoiserLayout::EncoderLayer e;
        e.ln1 = b.layer_norm(p + ".ln1", d);
        e.qkv = b.linear(p + ".qkv", d, 3 * d);
        e.out = b.linear(p + ".out", d, d);
        e.ln2 = b.layer_norm(p + ".ln2", d);
        e.ff1 = b.linear(p + ".ff1", d, d * cfg.enc_ff_mult);
        e.ff2 = b.linear(p + ".ff2", d * cfg.enc_ff_mult, d);
        lay.enc.push_back(e);
    }
    lay.enc_norm = b.layer_norm("encoder.norm", d);
    lay.enc_out = b.linear("encoder.out", d, cfg.cond_embed_dim);
    lay.null_embedding = m.params.add(
        "null_embedding", b.uniform(1, cfg.cond_embed_dim, 1.0 / std::sqrt(static_cast<double>(cfg.cond_embed_dim))));
    m.grid.length = cfg.L;
    return m;
}

}  // namespace

DenoiserModel init_model(const DenoiserConfig& cfg, Rng& rng) { return build_model(cfg, &rng); }

DenoiserModel make_empty_model(const DenoiserConfig& cfg) { return build_model(cfg, nullptr); }

// ---------------------------------------------------------------------------
// Encodings

Eigen::VectorXd timestep_embedding_raw(double t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("timestep embedding dimension must be even and positive");
    const int half = dim / 2;
    Eigen::VectorXd e(dim);
    for (int k = 0; k < half; ++k) {
        const double omega = std::pow(10000.0, -2.0 * k / static_cast<double>(dim));
        e(k) = std::sin(t * omega);
        e(half + k) = std::cos(t * omega);
    }
    return e;
}

Eigen::VectorXd timestep_embedding(int t, int dim, int T) {
    if (t < 1 || t > T) throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    return timestep_embedding_raw(static_cast<double>(t), dim);
}

Matrix position_encoding(int L, int dim_p) {
    if (L < 1 || dim_p < 1) throw ConfigError("position encoding needs L >= 1 and dim_p >= 1");
    Matrix pe(L, dim_p);
    for (int k = 0; k < L; ++k) {
        for (int j = 0; j < dim_p; ++j) {
            const double phase = std::numbers::pi * static_cast<double>(k) / static_cast<double>(L) * (j / 2 + 1);
            pe(k, j) = (j % 2 == 0) ? std::sin(phase) : std::cos(phase);
        }
    }
    return pe;
}

Matrix sequence_encoding(int N, int d) {
    Matrix pe(N, d);
    for (int pos = 0; pos < N; ++pos) {
        for (int j = 0; j < d; ++j) {
            const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
            pe(pos, j) = (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
        }
    }
    return pe;
}

// ---------------------------------------------------------------------------
// Forward passes

ParameterBinder::ParameterBinder(nn::Graph& g, const ParameterStore& params, std::vector<Matrix>* grads)
    : g_(g), params_(params), grads_(grads), cache_(params.size()) {}

Var ParameterBinder::operator()(int index) {
    auto& slot = cache_[static_cast<std::size_t>(index)];
    if (!slot.valid()) {
        Matrix* sink = grads_ != nullptr ? &(*grads_)[static_cast<std::size_t>(index)] : nullptr;
        slot = g_.parameter(params_.values[static_cast<std::size_t>(index)], sink);
    }
    return slot;
}

namespace {

struct UNetPass {
    ParameterBinder& bind;
    nn::Graph& g;
    int batch;
    Var emb;  // B x (time + cond), after SiLU

    Var conv(Var x, const DenoiserLayout::Conv& c, int length, int stride = 1) {
        nn::ConvGeometry geo{batch, length, c.kernel, stride, c.kernel / 2};
        return nn::conv1d(g, x, bind(c.w), bind(c.b), geo);
    }

    Var norm_act(Var x, const DenoiserLayout::Norm& n, int length) {
        return nn::silu(g, nn::group_norm(g, x, bind(n.gamma), bind(n.beta), n.groups, batch, length));
    }

    Var res(Var x, const DenoiserLayout::ResBlock& r, int length) {
        Var h = conv(norm_act(x, r.n1, length), r.c1, length);
        Var e = nn::linear(g, emb, bind(r.emb.w), bind(r.emb.b));
        h = nn::add_channel_embedding(g, h, e, batch, length);
        h = conv(norm_act(h, r.n2, length), r.c2, length);
        Var skip = r.skip ? conv(x, *r.skip, length) : x;
        return nn::add(g, h, skip);
    }

    Var attn(Var x, const DenoiserLayout::Attn& a, int length) {
        const int C = a.proj.out;
        Var h = nn::group_norm(g, x, bind(a.n.gamma), bind(a.n.beta), a.n.groups, batch, length);
        Var qkv = nn::transpose(g, conv(h, a.qkv, length));
        Var o = nn::attention(g, nn::col_block(g, qkv, 0, C), nn::col_block(g, qkv, C, C),
                              nn::col_block(g, qkv, 2 * C, C), batch, 1);
        o = conv(nn::transpose(g, o), a.proj, length);
        return nn::add(g, x, o);
    }
};

}  // namespace

Var encode_condition_graph(ParameterBinder& bind, const DenoiserModel& model,
                           const std::vector<const CapacityMatrix*>& qs) {
    const auto& cfg = model.config;
    const auto& lay = model.layout;
    nn::Graph& g = bind.graph();
    const int S = static_cast<int>(qs.size());
    const int N = cfg.n_early;
    if (S == 0) throw ShapeError("encode_condition: no capacity matrices");

    Matrix X(static_cast<Eigen::Index>(S) * N, cfg.n_feat);
    for (int s = 0; s < S; ++s) {
        const auto& q = *qs[static_cast<std::size_t>(s)];
        if (q.rows.rows() != N || q.rows.cols() != cfg.n_feat)
            throw ShapeError("capacity matrix " + q.cell_id + " is " + std::to_string(q.rows.rows()) + "x" +
                             std::to_string(q.rows.cols()) + ", model expects " + std::to_string(N) + "x" +
                             std::to_string(cfg.n_feat));
        X.middleRows(static_cast<Eigen::Index>(s) * N, N) = model.norm_stats.apply(q.rows);
    }
    const Matrix pe = sequence_encoding(N, cfg.enc_d_model).replicate(S, 1);

    Var h = nn::linear(g, g.constant(std::move(X)), bind(lay.enc_in.w), bind(lay.enc_in.b));
    h = nn::add(g, h, g.constant(pe));
    const int d = cfg.enc_d_model;
    for (const auto& e : lay.enc) {
        Var a = nn::layer_norm(g, h, bind(e.ln1.gamma), bind(e.ln1.beta));
        Var qkv = nn::linear(g, a, bind(e.qkv.w), bind(e.qkv.b));
        Var o = nn::attention(g, nn::col_block(g, qkv, 0, d), nn::col_block(g, qkv, d, d), nn::col_block(g, qkv, 2 * d, d),
                              S, cfg.enc_heads);
        h = nn::add(g, h, nn::linear(g, o, bind(e.out.w), bind(e.out.b)));
        a = nn::layer_norm(g, h, bind(e.ln2.gamma), bind(e.ln2.beta));
        Var f = nn::gelu(g, nn::linear(g, a, bind(e.ff1.w), bind(e.ff1.b)));
        h = nn::add(g, h, nn::linear(g, f, bind(e.ff2.w), bind(e.ff2.b)));
    }
    h = nn::layer_norm(g, h, bind(lay.enc_norm.gamma), bind(lay.enc_norm.beta));
    Var pooled = nn::segment_mean_rows(g, h, S);
    return nn::linear(g, pooled, bind(lay.enc_out.w), bind(lay.enc_out.b));
}

Var denoise_graph(ParameterBinder& bind, const DenoiserModel& model, const Matrix& x_t, const std::vector<int>& t,
                  Var cond) {
    const auto& cfg = model.config;
    const auto& lay = model.layout;
    nn::Graph& g = bind.graph();
    const int B = static_cast<int>(x_t.rows());
    const int L = cfg.L;
    if (x_t.cols() != L) throw ShapeError("denoise: input length " + std::to_string(x_t.cols()) + " != L = " + std::to_string(L));
    if (static_cast<int>(t.size()) != B) throw ShapeError("denoise: one timestep per batch row required");
    if (g.value(cond).rows() != B || g.value(cond).cols() != cfg.cond_embed_dim)
        throw ShapeError("denoise: condition embedding must be B x cond_embed_dim");

    Matrix temb(B, cfg.time_embed_dim);
    for (int b = 0; b < B; ++b) temb.row(b) = timestep_embedding_raw(t[static_cast<std::size_t>(b)], cfg.time_embed_dim).transpose();
    Var te = nn::linear(g, g.constant(std::move(temb)), bind(lay.time1.w), bind(lay.time1.b));
    te = nn::linear(g, nn::silu(g, te), bind(lay.time2.w), bind(lay.time2.b));
    Var emb = nn::silu(g, nn::concat_cols(g, te, cond));

    UNetPass u{bind, g, B, emb};

    Matrix x(1, static_cast<Eigen::Index>(B) * L);
    for (int b = 0; b < B; ++b) x.middleCols(static_cast<Eigen::Index>(b) * L, L) = x_t.row(b);
    const Matrix pos = position_encoding(L, cfg.position_dim).transpose().replicate(1, B);

    Var h = u.conv(g.constant(std::move(x)), lay.conv_in, L);
    h = nn::concat_rows(g, h, g.constant(pos));

    std::vector<Var> skips;
    int len = L;
    for (int i = 0; i < cfg.levels(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        h = u.res(h, lay.down[ui], len);
        if (lay.down_attn[ui]) h = u.attn(h, *lay.down_attn[ui], len);
        skips.push_back(h);
        if (i + 1 < cfg.levels()) {
            h = u.conv(h, lay.downsample[ui], len, 2);
            len /= 2;
        }
    }
    h = u.res(h, lay.mid1, len);
    h = u.attn(h, lay.mid_attn, len);
    h = u.res(h, lay.mid2, len);
    for (int i = cfg.levels() - 1; i >= 0; --i) {
        const auto ui = static_cast<std::size_t>(i);
        h = nn::concat_rows(g, h, skips[ui]);
        h = u.res(h, lay.up[ui], len);
        if (lay.up_attn[ui]) h = u.attn(h, *lay.up_attn[ui], len);
        if (i > 0) {
            h = nn::upsample_nearest2(g, h, B, len);
            len *= 2;
            h = u.conv(h, lay.upsample[ui - 1], len);
        }
    }
    return u.conv(u.norm_act(h, lay.out_norm, len), lay.conv_out, len);
}

Eigen::MatrixXd encode_conditions(const DenoiserModel& model, const std::vector<const CapacityMatrix*>& qs) {
    nn::Graph g(false);
    ParameterBinder bind(g, model.params);
    return g.value(encode_condition_graph(bind, model, qs));
}

Eigen::VectorXd encode_condition(const DenoiserModel& model, const CapacityMatrix& q) {
    return encode_conditions(model, {&q}).row(0).transpose();
}

Eigen::MatrixXd denoise_batch(const DenoiserModel& model, const Eigen::MatrixXd& x_t, const std::vector<int>& t,
                              const Eigen::MatrixXd& cond) {
    nn::Graph g(false);
    ParameterBinder bind(g, model.params);
    const Matrix& flat = g.value(denoise_graph(bind, model, x_t, t, g.constant(cond)));
    const auto B = x_t.rows();
    const auto L = x_t.cols();
    Eigen::MatrixXd out(B, L);
    for (Eigen::Index b = 0; b < B; ++b) out.row(b) = flat.middleCols(b * L, L);
    return out;
}

Eigen::VectorXd denoise(const DenoiserModel& model, const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* cond) {
    Eigen::MatrixXd c = cond != nullptr ? Eigen::MatrixXd(cond->transpose()) : Eigen::MatrixXd(model.null_embedding());
    return denoise_batch(model, x_t.transpose(), {t}, c).row(0).transpose();
}

}  // namespace diffbatt
