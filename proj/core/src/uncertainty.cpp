#include "protoseg/uncertainty.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "protoseg/error.hpp"
#include "protoseg/interchange.hpp"

namespace protoseg {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Linear uniform_linear(int in, int out, std::mt19937_64& rng) {
    Linear l = Linear::zeros(in, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : l.weight) w = dist(rng);
    for (auto& b : l.bias) b = dist(rng);
    return l;
}

void affine(const Linear& l, const double* x, double* y) {
    for (int o = 0; o < l.out; ++o) {
        const double* row = l.weight.data() + static_cast<std::size_t>(o) * l.in;
        double s = l.bias[o];
        for (int i = 0; i < l.in; ++i) s += row[i] * x[i];
        y[o] = s;
    }
}

void require_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string("sigma_forward: non-finite value in ") + what);
    }
}

void require_width(std::span<const double> v, int channels, const char* what) {
    if (static_cast<int>(v.size()) != channels) {
        throw DimensionError(std::string("uncertainty net: ") + what + " has " + std::to_string(v.size()) +
                             " channels, net expects " + std::to_string(channels));
    }
}

/// Activations of one forward pass, kept for backprop.
struct Trace {
    std::vector<double> input;               // concatenated projections
    std::vector<std::vector<double>> pre;    // hidden pre-activations
    std::vector<std::vector<double>> post;   // hidden ReLU outputs
    std::array<double, 2> logits{};
    std::array<double, 2> gate{};            // sigmoid(logits)
    std::array<double, 2> sigma{};
};

void forward_trace(const UncertaintyNet& net, std::span<const double> p_fg, std::span<const double> p_bg,
                   std::span<const double> f_q, Trace& t) {
    const int d = net.proj_q.out;
    t.input.resize(static_cast<std::size_t>(3) * d);
    affine(net.proj_fg, p_fg.data(), t.input.data());
    affine(net.proj_bg, p_bg.data(), t.input.data() + d);
    affine(net.proj_q, f_q.data(), t.input.data() + 2 * d);

    t.pre.resize(net.hidden.size());
    t.post.resize(net.hidden.size());
    const std::vector<double>* x = &t.input;
    for (std::size_t l = 0; l < net.hidden.size(); ++l) {
        const auto& layer = net.hidden[l];
        t.pre[l].resize(layer.out);
        t.post[l].resize(layer.out);
        affine(layer, x->data(), t.pre[l].data());
        for (int o = 0; o < layer.out; ++o) t.post[l][o] = t.pre[l][o] > 0.0 ? t.pre[l][o] : 0.0;
        x = &t.post[l];
    }
    affine(net.output, x->data(), t.logits.data());
    for (int c = 0; c < 2; ++c) {
        t.gate[c] = sigmoid(t.logits[c]);
        t.sigma[c] = net.sigma_min + (1.0 - net.sigma_min) * t.gate[c];
    }
}

void check_net(const UncertaintyNet& net) {
    if (net.output.out != 2) throw DimensionError("uncertainty net: output layer must have 2 units");
    if (net.proj_fg.in != net.proj_q.in || net.proj_bg.in != net.proj_q.in) {
        throw DimensionError("uncertainty net: projection input widths disagree");
    }
}

/// Weight/bias accumulation for y = W x + b given dL/dy; optionally dL/dx.
void backprop_linear(const Linear& l, const double* x, const double* gy, Linear& grad, double* gx) {
    for (int o = 0; o < l.out; ++o) {
        const double g = gy[o];
        grad.bias[o] += g;
        if (g == 0.0) continue;
        double* grow = grad.weight.data() + static_cast<std::size_t>(o) * l.in;
        for (int i = 0; i < l.in; ++i) grow[i] += g * x[i];
    }
    if (gx == nullptr) return;
    for (int i = 0; i < l.in; ++i) gx[i] = 0.0;
    for (int o = 0; o < l.out; ++o) {
        const double g = gy[o];
        if (g == 0.0) continue;
        const double* row = l.weight.data() + static_cast<std::size_t>(o) * l.in;
        for (int i = 0; i < l.in; ++i) gx[i] += g * row[i];
    }
}

std::vector<Linear> zeros_like(const UncertaintyNet& net) {
    std::vector<Linear> out;
    for (const Linear* l : net.layers()) out.push_back(Linear::zeros(l->in, l->out));
    return out;
}

/// Inference-only evaluator. The FG/BG prototype branches are folded into
/// per-prototype contributions to the first hidden layer, and the query
/// projection is fused with the query slice of that layer.
class SigmaEvaluator {
public:
    SigmaEvaluator(const UncertaintyNet& net, const PrototypeSet& protos) : net_(net) {
        check_net(net);
        if (net.hidden.empty()) throw DimensionError("sigma_map: net needs at least one hidden layer");
        const Linear& first = net.hidden.front();
        const int d = net.proj_q.out;
        const int c = net.channels();
        width_ = first.out;

        std::vector<double> proj(d);
        auto contribution = [&](const Linear& proj_layer, std::span<const double> p, int offset) {
            affine(proj_layer, p.data(), proj.data());
            std::vector<double> h(width_, 0.0);
            for (int o = 0; o < width_; ++o) {
                double s = 0.0;
                for (int k = 0; k < d; ++k) s += first.w(o, offset + k) * proj[k];
                h[o] = s;
            }
            return h;
        };
        for (const auto& p : protos.fg) {
            require_width(p.values, c, "FG prototype");
            fg_terms_.push_back(contribution(net.proj_fg, p.values, 0));
        }
        for (const auto& p : protos.bg) {
            require_width(p.values, c, "BG prototype");
            bg_terms_.push_back(contribution(net.proj_bg, p.values, d));
        }

        fused_.assign(static_cast<std::size_t>(width_) * c, 0.0);
        fused_bias_.assign(width_, 0.0);
        for (int o = 0; o < width_; ++o) {
            double b = first.bias[o];
            for (int k = 0; k < d; ++k) {
                const double w = first.w(o, 2 * d + k);
                b += w * net.proj_q.bias[k];
                for (int i = 0; i < c; ++i) fused_[static_cast<std::size_t>(o) * c + i] += w * net.proj_q.w(k, i);
            }
            fused_bias_[o] = b;
        }
    }

    std::array<double, 2> operator()(int fg_index, int bg_index, std::span<const float> f) {
        const int c = net_.channels();
        buf_a_.resize(width_);
        const auto& tf = fg_terms_[fg_index];
        const auto& tb = bg_terms_[bg_index];
        for (int o = 0; o < width_; ++o) {
            const double* row = fused_.data() + static_cast<std::size_t>(o) * c;
            double s = fused_bias_[o] + tf[o] + tb[o];
            for (int i = 0; i < c; ++i) s += row[i] * f[i];
            buf_a_[o] = s > 0.0 ? s : 0.0;
        }
        for (std::size_t l = 1; l < net_.hidden.size(); ++l) {
            const Linear& layer = net_.hidden[l];
            buf_b_.resize(layer.out);
            affine(layer, buf_a_.data(), buf_b_.data());
            for (auto& v : buf_b_) v = v > 0.0 ? v : 0.0;
            std::swap(buf_a_, buf_b_);
        }
        std::array<double, 2> logits{};
        affine(net_.output, buf_a_.data(), logits.data());
        std::array<double, 2> sigma{};
        for (int k = 0; k < 2; ++k) sigma[k] = net_.sigma_min + (1.0 - net_.sigma_min) * sigmoid(logits[k]);
        return sigma;
    }

private:
    const UncertaintyNet& net_;
    int width_ = 0;
    std::vector<std::vector<double>> fg_terms_;
    std::vector<std::vector<double>> bg_terms_;
    std::vector<double> fused_;
    std::vector<double> fused_bias_;
    std::vector<double> buf_a_;
    std::vector<double> buf_b_;
};

} // namespace

Linear Linear::zeros(int in, int out) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight.assign(static_cast<std::size_t>(in) * out, 0.0);
    l.bias.assign(out, 0.0);
    return l;
}

UncertaintyNet UncertaintyNet::create(int channels, std::uint64_t seed, const NetShape& shape, double sigma_min) {
    if (channels < 1) throw ConfigError("UncertaintyNet: channels must be >= 1");
    if (shape.proj_dim < 1) throw ConfigError("UncertaintyNet: proj_dim must be >= 1");
    if (!(sigma_min > 0.0 && sigma_min < 1.0)) throw ConfigError("UncertaintyNet: sigma_min must be in (0, 1)");
    std::mt19937_64 rng(seed);
    UncertaintyNet net;
    net.seed = seed;
    net.sigma_min = sigma_min;
    net.proj_fg = uniform_linear(channels, shape.proj_dim, rng);
    net.proj_bg = uniform_linear(channels, shape.proj_dim, rng);
    net.proj_q = uniform_linear(channels, shape.proj_dim, rng);
    int in = 3 * shape.proj_dim;
    for (int width : shape.hidden) {
        if (width < 1) throw ConfigError("UncertaintyNet: hidden widths must be >= 1");
        net.hidden.push_back(uniform_linear(in, width, rng));
        in = width;
    }
    net.output = uniform_linear(in, 2, rng);
    return net;
}

NetShape UncertaintyNet::shape() const {
    NetShape s;
    s.proj_dim = proj_q.out;
    s.hidden.clear();
    for (const auto& h : hidden) s.hidden.push_back(h.out);
    return s;
}

std::size_t UncertaintyNet::parameter_count() const {
    std::size_t n = 0;
    for (const Linear* l : layers()) n += l->parameter_count();
    return n;
}

std::vector<Linear*> UncertaintyNet::layers() {
    std::vector<Linear*> out{&proj_fg, &proj_bg, &proj_q};
    for (auto& h : hidden) out.push_back(&h);
    out.push_back(&output);
    return out;
}

std::vector<const Linear*> UncertaintyNet::layers() const {
    std::vector<const Linear*> out{&proj_fg, &proj_bg, &proj_q};
    for (const auto& h : hidden) out.push_back(&h);
    out.push_back(&output);
    return out;
}

std::vector<std::string> UncertaintyNet::layer_names() const {
    std::vector<std::string> out{"proj_fg", "proj_bg", "proj_q"};
    for (std::size_t i = 0; i < hidden.size(); ++i) out.push_back("hidden" + std::to_string(i));
    out.emplace_back("output");
    return out;
}

std::array<double, 2> sigma_forward(const UncertaintyNet& net, std::span<const double> p_fg,
                                    std::span<const double> p_bg, std::span<const double> f_q) {
    check_net(net);
    require_width(p_fg, net.channels(), "p_fg");
    require_width(p_bg, net.channels(), "p_bg");
    require_width(f_q, net.channels(), "f_q");
    require_finite(p_fg, "p_fg");
    require_finite(p_bg, "p_bg");
    require_finite(f_q, "f_q");
    Trace t;
    forward_trace(net, p_fg, p_bg, f_q, t);
    return t.sigma;
}

ProbabilityMap sigma_map(const UncertaintyNet& net, const FeatureMap& query, const PrototypeSet& protos,
                         const SimilarityMaps& sims, int out_width, int out_height) {
    if (query.channels() != net.channels()) {
        throw DimensionError("sigma_map: query has " + std::to_string(query.channels()) + " channels, net expects " +
                             std::to_string(net.channels()));
    }
    if (sims.width != query.width() || sims.height != query.height()) {
        throw DimensionError("sigma_map: similarity maps do not match the query resolution");
    }
    SigmaEvaluator eval(net, protos);
    ProbabilityMap sigma(query.width(), query.height());
    for (std::size_t i = 0; i < query.pixel_count(); ++i) {
        const auto s = eval(sims.fg_nearest[i], sims.bg_nearest[i], query.pixel(i));
        sigma.bg(i) = s[0];
        sigma.fg(i) = s[1];
    }
    return upsample_probmap(sigma, out_width, out_height);
}

double gaussian_nll_term(double label, double mu, double sigma) {
    const double r = label - mu;
    return std::log(sigma) + kHalfLog2Pi + (r * r) / (2.0 * sigma * sigma);
}

double gaussian_nll(const LabelMask& label, const ProbabilityMap& mu, const ProbabilityMap& sigma) {
    if (label.width() != mu.width() || label.height() != mu.height() || sigma.width() != mu.width() ||
        sigma.height() != mu.height()) {
        throw DimensionError("gaussian_nll: label, mu and sigma must share dimensions");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < label.pixel_count(); ++i) {
        const double fg = label[i] == kForeground ? 1.0 : 0.0;
        total += gaussian_nll_term(1.0 - fg, mu.bg(i), sigma.bg(i));
        total += gaussian_nll_term(fg, mu.fg(i), sigma.fg(i));
    }
    if (!std::isfinite(total)) throw NumericError("gaussian_nll: non-finite loss");
    return total;
}

double batch_nll(const UncertaintyNet& net, std::span<const TrainingSample> batch) {
    if (batch.empty()) throw ConfigError("batch_nll: empty batch");
    check_net(net);
    Trace t;
    double total = 0.0;
    for (const auto& s : batch) {
        forward_trace(net, s.p_fg, s.p_bg, s.f_q, t);
        for (int c = 0; c < 2; ++c) total += gaussian_nll_term(s.label[c], s.mu[c], t.sigma[c]);
    }
    return total / static_cast<double>(batch.size());
}

NetGradients nll_gradients(const UncertaintyNet& net, std::span<const TrainingSample> batch) {
    if (batch.empty()) throw ConfigError("nll_gradients: empty batch");
    check_net(net);
    const int channels = net.channels();
    const int d = net.proj_q.out;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const std::size_t n_hidden = net.hidden.size();

    NetGradients grads;
    grads.layers = zeros_like(net);
    Linear& g_proj_fg = grads.layers[0];
    Linear& g_proj_bg = grads.layers[1];
    Linear& g_proj_q = grads.layers[2];
    Linear& g_output = grads.layers.back();

    Trace t;
    std::vector<double> g_cur, g_next;
    double total = 0.0;
    for (const auto& s : batch) {
        require_width(s.p_fg, channels, "p_fg");
        require_width(s.p_bg, channels, "p_bg");
        require_width(s.f_q, channels, "f_q");
        forward_trace(net, s.p_fg, s.p_bg, s.f_q, t);

        std::array<double, 2> g_logit{};
        for (int c = 0; c < 2; ++c) {
            const double sig = t.sigma[c];
            const double r = s.label[c] - s.mu[c];
            total += gaussian_nll_term(s.label[c], s.mu[c], sig);
            const double dl_dsigma = 1.0 / sig - (r * r) / (sig * sig * sig);
            const double dsigma_dz = (1.0 - net.sigma_min) * t.gate[c] * (1.0 - t.gate[c]);
            g_logit[c] = inv_n * dl_dsigma * dsigma_dz;
        }

        const std::vector<double>& last = n_hidden ? t.post.back() : t.input;
        g_cur.resize(last.size());
        backprop_linear(net.output, last.data(), g_logit.data(), g_output, g_cur.data());

        for (std::size_t l = n_hidden; l-- > 0;) {
            const Linear& layer = net.hidden[l];
            for (int o = 0; o < layer.out; ++o) {
                if (!(t.pre[l][o] > 0.0)) g_cur[o] = 0.0;
            }
            const std::vector<double>& x = l == 0 ? t.input : t.post[l - 1];
            g_next.resize(x.size());
            backprop_linear(layer, x.data(), g_cur.data(), grads.layers[3 + l], g_next.data());
            std::swap(g_cur, g_next);
        }

        backprop_linear(net.proj_fg, s.p_fg.data(), g_cur.data(), g_proj_fg, nullptr);
        backprop_linear(net.proj_bg, s.p_bg.data(), g_cur.data() + d, g_proj_bg, nullptr);
        backprop_linear(net.proj_q, s.f_q.data(), g_cur.data() + 2 * d, g_proj_q, nullptr);
    }
    grads.loss = total * inv_n;
    return grads;
}

TrainState TrainState::start(UncertaintyNet net) {
    TrainState s;
    s.first_moment = zeros_like(net);
    s.second_moment = zeros_like(net);
    s.net = std::move(net);
    return s;
}

TrainState train_step(TrainState state, std::span<const TrainingSample> batch, double lr, const AdamOptions& adam) {
    if (lr < 0.0) throw ConfigError("train_step: learning rate must be >= 0");
    NetGradients g = nll_gradients(state.net, batch);
    if (!std::isfinite(g.loss)) {
        std::ostringstream msg;
        msg << "train_step: non-finite loss " << g.loss << " at step " << state.step << " (batch of "
            << batch.size() << ")";
        if (!state.loss_history.empty()) msg << ", previous loss " << state.loss_history.back();
        throw NumericError(msg.str());
    }
    ++state.step;
    state.loss_history.push_back(g.loss);
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(adam.beta1, t);
    const double bc2 = 1.0 - std::pow(adam.beta2, t);

    auto layers = state.net.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        auto update = [&](std::vector<double>& param, const std::vector<double>& grad, std::vector<double>& m,
                          std::vector<double>& v) {
            for (std::size_t k = 0; k < param.size(); ++k) {
                m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * grad[k];
                v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * grad[k] * grad[k];
                const double m_hat = m[k] / bc1;
                const double v_hat = v[k] / bc2;
                param[k] -= lr * m_hat / (std::sqrt(v_hat) + adam.eps);
            }
        };
        update(layers[li]->weight, g.layers[li].weight, state.first_moment[li].weight, state.second_moment[li].weight);
        update(layers[li]->bias, g.layers[li].bias, state.first_moment[li].bias, state.second_moment[li].bias);
    }
    return state;
}

std::vector<TrainingSample> collect_samples(const FeatureMap& query, const PrototypeSet& protos,
                                            const SimilarityMaps& sims, const ProbabilityMap& mu,
                                            const LabelMask& truth, std::span<const std::size_t> pixels) {
    if (mu.width() != query.width() || mu.height() != query.height() || truth.width() != query.width() ||
        truth.height() != query.height()) {
        throw DimensionError("collect_samples: mu and truth must be at feature resolution");
    }
    std::vector<TrainingSample> out;
    out.reserve(pixels.size());
    for (std::size_t i : pixels) {
        TrainingSample s;
        s.p_fg = protos.fg.at(sims.fg_nearest[i]).values;
        s.p_bg = protos.bg.at(sims.bg_nearest[i]).values;
        const auto f = query.pixel(i);
        s.f_q.assign(f.begin(), f.end());
        const double fg = truth[i] == kForeground ? 1.0 : 0.0;
        s.label = {1.0 - fg, fg};
        s.mu = {mu.bg(i), mu.fg(i)};
        out.push_back(std::move(s));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& dir, const UncertaintyNet& net) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["format"] = "protoseg-uncertainty-net";
    j["channels"] = net.channels();
    j["proj_dim"] = net.proj_q.out;
    nlohmann::json hidden = nlohmann::json::array();
    for (const auto& h : net.hidden) hidden.push_back(h.out);
    j["hidden"] = hidden;
    j["sigma_min"] = net.sigma_min;
    j["seed"] = net.seed;
    nlohmann::json layers = nlohmann::json::array();
    const auto names = net.layer_names();
    const auto ls = net.layers();
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const Linear& l = *ls[i];
        layers.push_back({{"name", names[i]}, {"in", l.in}, {"out", l.out}});
        const std::vector<float> w(l.weight.begin(), l.weight.end());
        const std::vector<float> b(l.bias.begin(), l.bias.end());
        io::write_tensor(dir / (names[i] + ".weight"),
                         {names[i] + ".weight", io::DType::F32,
                          {static_cast<std::size_t>(l.out), static_cast<std::size_t>(l.in)}},
                         w);
        io::write_tensor(dir / (names[i] + ".bias"),
                         {names[i] + ".bias", io::DType::F32, {static_cast<std::size_t>(l.out)}}, b);
    }
    j["layers"] = layers;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
}

UncertaintyNet load_checkpoint(const std::filesystem::path& dir) {
    const auto file = dir / "manifest.json";
    std::ifstream in(file);
    if (!in) throw FormatError("missing checkpoint manifest " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(file.string() + ": invalid JSON: " + e.what());
    }
    UncertaintyNet net;
    try {
        NetShape shape;
        shape.proj_dim = j.at("proj_dim").get<int>();
        shape.hidden = j.at("hidden").get<std::vector<int>>();
        net = UncertaintyNet::create(j.at("channels").get<int>(), j.at("seed").get<std::uint64_t>(), shape,
                                     j.at("sigma_min").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
    const auto names = net.layer_names();
    auto ls = net.layers();
    for (std::size_t i = 0; i < ls.size(); ++i) {
        io::TensorManifest wm, bm;
        const auto w = io::read_f32(dir / (names[i] + ".weight"), &wm);
        const auto b = io::read_f32(dir / (names[i] + ".bias"), &bm);
        if (w.size() != ls[i]->weight.size() || b.size() != ls[i]->bias.size()) {
            throw FormatError(file.string() + ": layer " + names[i] + " does not match the declared shape");
        }
        ls[i]->weight.assign(w.begin(), w.end());
        ls[i]->bias.assign(b.begin(), b.end());
    }
    return net;
}

} // namespace protoseg
