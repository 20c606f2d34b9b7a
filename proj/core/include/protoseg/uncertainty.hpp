#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protoseg/protogen.hpp"
#include "protoseg/segmenter.hpp"
#include "protoseg/tensor.hpp"

namespace protoseg {

inline constexpr double kDefaultSigmaMin = 1e-3;

/// Dense layer y = W x + b with W stored row-major as [out][in].
struct Linear {
    int in = 0;
    int out = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    static Linear zeros(int in, int out);
    std::size_t parameter_count() const { return weight.size() + bias.size(); }
    double& w(int o, int i) { return weight[static_cast<std::size_t>(o) * in + i]; }
    double w(int o, int i) const { return weight[static_cast<std::size_t>(o) * in + i]; }

    bool operator==(const Linear&) const = default;
};

struct NetShape {
    int proj_dim = 64;
    std::vector<int> hidden = {128, 128};
};

/// Per-pixel sigma estimator.
///
/// The nearest FG prototype, nearest BG prototype and the query feature are
/// each projected C -> proj_dim, concatenated, passed through ReLU hidden
/// layers and mapped to two logits. Output per channel (BG, FG) is
/// sigma_min + (1 - sigma_min) * sigmoid(logit), so sigma lies in [sigma_min, 1).
struct UncertaintyNet {
    Linear proj_fg;
    Linear proj_bg;
    Linear proj_q;
    std::vector<Linear> hidden;
    Linear output;
    double sigma_min = kDefaultSigmaMin;
    std::uint64_t seed = 0;

    /// Weights and biases uniform in +-1/sqrt(fan_in), drawn from `seed`.
    static UncertaintyNet create(int channels, std::uint64_t seed, const NetShape& shape = {},
                                 double sigma_min = kDefaultSigmaMin);

    int channels() const { return proj_q.in; }
    NetShape shape() const;
    std::size_t parameter_count() const;

    /// Layers in canonical order: proj_fg, proj_bg, proj_q, hidden..., output.
    std::vector<Linear*> layers();
    std::vector<const Linear*> layers() const;
    std::vector<std::string> layer_names() const;

    bool operator==(const UncertaintyNet&) const = default;
};

/// Forward pass for one pixel. Returns {sigma_BG, sigma_FG}.
/// Throws NumericError on non-finite inputs and DimensionError on channel mismatch.
std::array<double, 2> sigma_forward(const UncertaintyNet& net, std::span<const double> p_fg,
                                    std::span<const double> p_bg, std::span<const double> f_q);

/// Sigma for every query pixel, fed with the nearest prototypes recorded in
/// `sims`, bilinearly resized to (out_width, out_height).
ProbabilityMap sigma_map(const UncertaintyNet& net, const FeatureMap& query, const PrototypeSet& protos,
                         const SimilarityMaps& sims, int out_width, int out_height);

/// -log N(label; mu, sigma^2) = log sigma + 0.5 log(2 pi) + (label - mu)^2 / (2 sigma^2).
double gaussian_nll_term(double label, double mu, double sigma);

/// Sum of gaussian_nll_term over pixels and both channels; `label` is one-hot
/// encoded to (BG, FG).
double gaussian_nll(const LabelMask& label, const ProbabilityMap& mu, const ProbabilityMap& sigma);

/// One pixel of training data. `mu` is a constant input to the loss.
struct TrainingSample {
    std::vector<double> p_fg;
    std::vector<double> p_bg;
    std::vector<double> f_q;
    std::array<double, 2> label{};  ///< one-hot (BG, FG)
    std::array<double, 2> mu{};     ///< (BG, FG)
};

/// Mean over samples of the per-pixel NLL summed over both channels.
double batch_nll(const UncertaintyNet& net, std::span<const TrainingSample> batch);

struct NetGradients {
    std::vector<Linear> layers;  ///< same order and shapes as UncertaintyNet::layers()
    double loss = 0.0;           ///< batch_nll at the evaluation point
};

/// Exact gradients of batch_nll with respect to every network parameter.
NetGradients nll_gradients(const UncertaintyNet& net, std::span<const TrainingSample> batch);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainState {
    UncertaintyNet net;
    std::vector<Linear> first_moment;
    std::vector<Linear> second_moment;
    long step = 0;
    std::vector<double> loss_history;

    static TrainState start(UncertaintyNet net);
    bool operator==(const TrainState&) const = default;
};

/// One Adam update on `batch`. The pre-update loss is appended to the history.
/// Throws NumericError if the loss is not finite.
TrainState train_step(TrainState state, std::span<const TrainingSample> batch, double lr,
                      const AdamOptions& adam = {});

/// Training samples from a labeled query: for each listed pixel, the nearest
/// prototypes from `sims`, the query feature, the one-hot truth and mu.
/// `truth` and `mu` must be at feature resolution.
std::vector<TrainingSample> collect_samples(const FeatureMap& query, const PrototypeSet& protos,
                                            const SimilarityMaps& sims, const ProbabilityMap& mu,
                                            const LabelMask& truth, std::span<const std::size_t> pixels);

/// Checkpoint directory: manifest.json (shape, sigma_min, seed, layer list)
/// plus one interchange tensor per weight and bias.
void save_checkpoint(const std::filesystem::path& dir, const UncertaintyNet& net);
UncertaintyNet load_checkpoint(const std::filesystem::path& dir);

} // namespace protoseg
