#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "diffbatt/autograd.hpp"
#include "diffbatt/data.hpp"
#include "diffbatt/rng.hpp"

namespace diffbatt {

/// Architecture of the noise-prediction network.
struct DenoiserConfig {
    int L = 256;
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 2, 2, 4};
    std::vector<int> attn_levels{2, 3};
    int time_embed_dim = 128;
    int cond_embed_dim = 128;
    int position_dim = 8;
    int enc_layers = 2;
    int enc_heads = 4;
    int enc_d_model = 64;
    int enc_ff_mult = 4;
    int n_feat = 8;
    int n_early = 100;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int channels_at(int level) const { return base_channels * channel_multipliers[static_cast<std::size_t>(level)]; }
    bool has_attention(int level) const;
    void validate() const;

    /// Serialized as space-separated key=value pairs (lists comma-separated).
    std::string to_string() const;
    static DenoiserConfig from_string(const std::string& text);

    bool operator==(const DenoiserConfig&) const = default;
};

/// Sequence positions per level, halving from L.
std::vector<int> level_resolutions(const DenoiserConfig& cfg);

/// Closed-form parameter count of the network described by `cfg`.
std::size_t parameter_count(const DenoiserConfig& cfg);

/// Named dense parameter tensors in a fixed registration order.
struct ParameterStore {
    std::vector<std::string> names;
    std::vector<nn::Matrix> values;

    int add(std::string name, nn::Matrix init);
    int index_of(const std::string& name) const;
    std::size_t size() const { return values.size(); }
    std::size_t scalar_count() const;
    /// Zero tensors matching every parameter's shape.
    std::vector<nn::Matrix> zeros_like() const;
    bool all_finite() const;
    /// FNV-1a over the float32 encoding of every value, in order.
    std::uint64_t checksum() const;
};

struct DenoiserModel;

/// Indices into ParameterStore for each sub-layer.
struct DenoiserLayout {
    struct Linear { int w = -1, b = -1; };
    struct Conv { int w = -1, b = -1, in = 0, out = 0, kernel = 3; };
    struct Norm { int gamma = -1, beta = -1, groups = 1; };
    struct ResBlock { Norm n1; Conv c1; Linear emb; Norm n2; Conv c2; std::optional<Conv> skip; };
    struct Attn { Norm n; Conv qkv; Conv proj; };
    struct EncoderLayer { Norm ln1; Linear qkv; Linear out; Norm ln2; Linear ff1; Linear ff2; };

    Linear time1, time2;
    Conv conv_in;
    std::vector<ResBlock> down;
    std::vector<std::optional<Attn>> down_attn;
    std::vector<Conv> downsample;
    ResBlock mid1, mid2;
    Attn mid_attn;
    std::vector<ResBlock> up;  // index = level
    std::vector<std::optional<Attn>> up_attn;
    std::vector<Conv> upsample;  // index = level - 1, applied after level
    Norm out_norm;
    Conv conv_out;

    Linear enc_in;
    std::vector<EncoderLayer> enc;
    Norm enc_norm;
    Linear enc_out;
    int null_embedding = -1;
};

/// The noise-prediction network plus the metadata needed to use it.
struct DenoiserModel {
    DenoiserConfig config;
    ParameterStore params;
    DenoiserLayout layout;
    FeatureStats norm_stats;
    /// Schedule descriptor the model was trained with (empty before training).
    std::string schedule;
    GridSpec grid;

    const nn::Matrix& null_embedding() const { return params.values[static_cast<std::size_t>(layout.null_embedding)]; }
};

/// Fan-in scaled uniform initialization; output projection zeroed; values rounded to float32.
DenoiserModel init_model(const DenoiserConfig& cfg, Rng& rng);
/// Same layout with every parameter zero (used when loading checkpoints).
DenoiserModel make_empty_model(const DenoiserConfig& cfg);

/// Sinusoidal step embedding: [sin(t w_k)..., cos(t w_k)...], w_k = 10000^(-2k/dim).
Eigen::VectorXd timestep_embedding(int t, int dim, int T);
/// Unchecked variant used internally; accepts any t.
Eigen::VectorXd timestep_embedding_raw(double t, int dim);

/// L x dim_p grid-position encoding; channel j uses frequency floor(j/2) + 1,
/// sin for even j and cos for odd j, over phase pi k / L.
nn::Matrix position_encoding(int L, int dim_p);

/// Standard transformer sinusoidal encoding for the capacity-matrix tokens (N x d).
nn::Matrix sequence_encoding(int N, int d);

/// Binds model parameters into a graph, creating each leaf once.
class ParameterBinder {
public:
    ParameterBinder(nn::Graph& g, const ParameterStore& params, std::vector<nn::Matrix>* grads = nullptr);
    nn::Var operator()(int index);
    nn::Graph& graph() { return g_; }

private:
    nn::Graph& g_;
    const ParameterStore& params_;
    std::vector<nn::Matrix>* grads_;
    std::vector<nn::Var> cache_;
};

/// Condition embeddings (S x cond_embed_dim) for capacity matrices given raw;
/// the model's feature statistics are applied first.
nn::Var encode_condition_graph(ParameterBinder& bind, const DenoiserModel& model,
                               const std::vector<const CapacityMatrix*>& qs);

/// Epsilon prediction, 1 x (B * L). `x_t` is B x L in model space; `cond` is
/// B x cond_embed_dim (rows already substituted with the null embedding where
/// the condition is dropped).
nn::Var denoise_graph(ParameterBinder& bind, const DenoiserModel& model, const nn::Matrix& x_t,
                      const std::vector<int>& t, nn::Var cond);

Eigen::VectorXd encode_condition(const DenoiserModel& model, const CapacityMatrix& q);
Eigen::MatrixXd encode_conditions(const DenoiserModel& model, const std::vector<const CapacityMatrix*>& qs);

/// Single-item epsilon prediction; `cond == nullptr` selects the null embedding.
Eigen::VectorXd denoise(const DenoiserModel& model, const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd* cond);

/// Batched inference: rows of x_t (B x L), one step per row, cond B x cond_embed_dim.
Eigen::MatrixXd denoise_batch(const DenoiserModel& model, const Eigen::MatrixXd& x_t, const std::vector<int>& t,
                              const Eigen::MatrixXd& cond);

/// Rounds every entry to the nearest float32 value.
void round_to_float(nn::Matrix& m);

}  // namespace diffbatt
