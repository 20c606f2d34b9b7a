#include "protoseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <type_traits>

#include "protoseg/error.hpp"

namespace protoseg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

enum class Role : std::uint64_t { Support = 1, Unlabeled = 2, Query = 3 };

std::vector<double> random_unit(int dims, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(dims);
    double n2 = 0.0;
    for (auto& x : v) {
        x = n01(rng);
        n2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
    return v;
}

void normalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
}

struct Ellipse {
    double cx, cy, rx, ry;
    bool contains(double x, double y) const {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
    }
};

Ellipse random_ellipse(double area, double grid, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> aspect_d(0.6, 1.6);
    const double aspect = aspect_d(rng);
    double rx = std::sqrt(area / (std::numbers::pi * aspect));
    double ry = rx * aspect;
    rx = std::min(rx, grid / 2.0);
    ry = std::min(ry, grid / 2.0);
    std::uniform_real_distribution<double> cx_d(rx, grid - rx);
    std::uniform_real_distribution<double> cy_d(ry, grid - ry);
    return {cx_d(rng), cy_d(rng), rx, ry};
}

SyntheticImage paint(const SyntheticTaskSpec& spec, const Codebook& book, int cls, Role role, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int g = spec.grid;
    const std::size_t n = static_cast<std::size_t>(g) * g;
    SyntheticImage img;
    img.truth = LabelMask(g, g);
    img.components.kind.assign(n, ComponentKind::Background);
    img.components.part.assign(n, 0);

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double area = (spec.fg_area_min + (spec.fg_area_max - spec.fg_area_min) * u01(rng)) * g * g;
    const Ellipse obj = random_ellipse(area, g, rng);
    const double rotation = u01(rng);

    const int common = spec.fg_parts - spec.novel_parts;
    const double novel_frac =
        role == Role::Support || spec.novel_parts == 0 ? 0.0 : spec.mode_coverage * spec.novel_area_share;

    // Background: Voronoi cells over a random subset of the shared codebook.
    std::vector<int> bg_ids(spec.bg_parts);
    for (int i = 0; i < spec.bg_parts; ++i) bg_ids[i] = i;
    std::shuffle(bg_ids.begin(), bg_ids.end(), rng);
    bg_ids.resize(spec.bg_parts_per_image);
    std::vector<std::pair<double, double>> seeds;
    for (int i = 0; i < spec.bg_parts_per_image; ++i) seeds.emplace_back(u01(rng) * g, u01(rng) * g);

    std::optional<Ellipse> distractor;
    int distractor_part = 0;
    if (role != Role::Support && spec.distractor_area > 0.0) {
        Ellipse e = random_ellipse(spec.distractor_area * g * g, g, rng);
        distractor = e;
        distractor_part = std::uniform_int_distribution<int>(0, common - 1)(rng);
    }

    for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * g + x;
            const double px = x + 0.5, py = y + 0.5;
            if (obj.contains(px, py)) {
                img.truth.set(i, kForeground);
                img.components.kind[i] = ComponentKind::Foreground;
                double t = std::atan2(py - obj.cy, px - obj.cx) / (2.0 * std::numbers::pi) + 0.5 + rotation;
                t -= std::floor(t);
                int part;
                if (t < novel_frac) {
                    part = common + std::min(spec.novel_parts - 1, static_cast<int>(t / novel_frac * spec.novel_parts));
                } else {
                    const double s = (t - novel_frac) / (1.0 - novel_frac);
                    part = std::min(common - 1, static_cast<int>(s * common));
                }
                img.components.part[i] = part;
            } else if (distractor && distractor->contains(px, py)) {
                img.components.kind[i] = ComponentKind::Distractor;
                img.components.part[i] = distractor_part;
            } else {
                std::size_t best = 0;
                double best_d = 1e300;
                for (std::size_t s = 0; s < seeds.size(); ++s) {
                    const double dx = px - seeds[s].first, dy = py - seeds[s].second;
                    const double d = dx * dx + dy * dy;
                    if (d < best_d) {
                        best_d = d;
                        best = s;
                    }
                }
                img.components.part[i] = bg_ids[best];
            }
        }
    }

    std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
    std::vector<float> data(n * spec.channels);
    for (std::size_t i = 0; i < n; ++i) {
        const int part = img.components.part[i];
        const std::vector<double>* centroid = nullptr;
        switch (img.components.kind[i]) {
        case ComponentKind::Foreground: centroid = &book.fg[cls][part]; break;
        case ComponentKind::Background: centroid = &book.bg[part]; break;
        case ComponentKind::Distractor: centroid = &book.distractor[cls][part]; break;
        }
        for (int c = 0; c < spec.channels; ++c) {
            const double eps = spec.noise_std > 0.0 ? noise(rng) : 0.0;
            data[i * spec.channels + c] = static_cast<float>((*centroid)[c] + eps);
        }
    }
    img.features = FeatureMap(g, g, spec.channels, std::move(data));
    return img;
}

template <typename Spec, typename F>
void for_each_field(Spec& s, F&& f) {
    f("channels", s.channels);
    f("grid", s.grid);
    f("fg_parts", s.fg_parts);
    f("novel_parts", s.novel_parts);
    f("bg_parts", s.bg_parts);
    f("bg_parts_per_image", s.bg_parts_per_image);
    f("separation", s.separation);
    f("noise_std", s.noise_std);
    f("fg_area_min", s.fg_area_min);
    f("fg_area_max", s.fg_area_max);
    f("mode_coverage", s.mode_coverage);
    f("novel_area_share", s.novel_area_share);
    f("distractor_area", s.distractor_area);
    f("distractor_mix", s.distractor_mix);
    f("distractor_scale", s.distractor_scale);
    f("n_classes", s.n_classes);
    f("folds", s.folds);
    f("codebook_seed", s.codebook_seed);
    f("episode_seed", s.episode_seed);
}

} // namespace

nlohmann::json to_json(const SyntheticTaskSpec& spec) {
    nlohmann::json j = nlohmann::json::object();
    for_each_field(spec, [&](const char* name, const auto& v) { j[name] = v; });
    return j;
}

SyntheticTaskSpec apply_overrides(SyntheticTaskSpec base, const nlohmann::json& overrides) {
    if (!overrides.is_object()) throw ConfigError("synthetic spec overrides must be a JSON object");
    std::size_t used = 0;
    for_each_field(base, [&](const char* name, auto& v) {
        const auto it = overrides.find(name);
        if (it == overrides.end()) return;
        ++used;
        using T = std::remove_reference_t<decltype(v)>;
        const bool ok = std::is_unsigned_v<T>   ? it->is_number_unsigned()
                        : std::is_integral_v<T> ? it->is_number_integer()
                                                : it->is_number();
        if (!ok) {
            throw ConfigError(std::string("synthetic spec: field '") + name + "' has the wrong type");
        }
        v = it->template get<T>();
    });
    if (used != overrides.size()) {
        const nlohmann::json known = to_json(base);
        for (const auto& [key, _] : overrides.items()) {
            if (!known.contains(key)) throw ConfigError("synthetic spec: unknown field '" + key + "'");
        }
    }
    base.validate();
    return base;
}

void SyntheticTaskSpec::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("synthetic spec: " + msg); };
    if (channels < 1) fail("channels must be >= 1");
    if (grid < 2) fail("grid must be >= 2");
    if (fg_parts < 1) fail("fg_parts must be >= 1");
    if (novel_parts < 0 || novel_parts >= fg_parts) fail("novel_parts must be in [0, fg_parts)");
    if (bg_parts < 1) fail("bg_parts must be >= 1");
    if (bg_parts_per_image < 1 || bg_parts_per_image > bg_parts) fail("bg_parts_per_image must be in [1, bg_parts]");
    if (!(separation > 0.0)) fail("separation must be > 0");
    if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
    if (!(fg_area_min > 0.0 && fg_area_max < 1.0 && fg_area_min <= fg_area_max)) {
        fail("fg area fractions must satisfy 0 < min <= max < 1");
    }
    if (!(mode_coverage >= 0.0 && mode_coverage <= 1.0)) fail("mode_coverage must be in [0, 1]");
    if (!(novel_area_share >= 0.0 && novel_area_share < 1.0)) fail("novel_area_share must be in [0, 1)");
    if (!(distractor_area >= 0.0 && distractor_area < 1.0)) fail("distractor_area must be in [0, 1)");
    if (!(distractor_scale > 0.0)) fail("distractor_scale must be > 0");
    if (n_classes < 1 || folds < 1 || n_classes % folds != 0) fail("n_classes must be a positive multiple of folds");
}

Codebook make_codebook(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(mix(spec.codebook_seed, 0xc0deb00cULL));
    Codebook book;
    book.channels = spec.channels;
    book.bg.reserve(spec.bg_parts);
    for (int k = 0; k < spec.bg_parts; ++k) book.bg.push_back(random_unit(spec.channels, rng));

    // A small shared set of offsets makes distractors recognisable across classes.
    std::vector<std::vector<double>> offsets;
    for (int k = 0; k < 2; ++k) offsets.push_back(random_unit(spec.channels, rng));

    const int common = spec.fg_parts - spec.novel_parts;
    book.fg.resize(spec.n_classes);
    book.distractor.resize(spec.n_classes);
    for (int c = 0; c < spec.n_classes; ++c) {
        const auto class_dir = random_unit(spec.channels, rng);
        for (int j = 0; j < spec.fg_parts; ++j) {
            auto part = random_unit(spec.channels, rng);
            for (int d = 0; d < spec.channels; ++d) part[d] += spec.separation * class_dir[d];
            normalize(part);
            book.fg[c].push_back(std::move(part));
        }
        const auto& offset = offsets[c % offsets.size()];
        for (int j = 0; j < common; ++j) {
            auto v = book.fg[c][j];
            for (int d = 0; d < spec.channels; ++d) v[d] += spec.distractor_mix * offset[d];
            normalize(v);
            for (auto& x : v) x *= spec.distractor_scale;
            book.distractor[c].push_back(std::move(v));
        }
    }
    return book;
}

int class_fold(const SyntheticTaskSpec& spec, int class_index) {
    return class_index / (spec.n_classes / spec.folds);
}

int episode_class(const SyntheticTaskSpec& spec, std::size_t index) {
    const int per_fold = spec.n_classes / spec.folds;
    const int fold = static_cast<int>(index % spec.folds);
    const auto r = splitmix64(mix(spec.episode_seed, index) ^ 0x5eedULL);
    return fold * per_fold + static_cast<int>(r % static_cast<std::uint64_t>(per_fold));
}

GeneratedEpisode generate_episode(const SyntheticTaskSpec& spec, const Codebook& codebook, int class_index,
                                  std::size_t episode_index, int k_shot, int m_unlabeled) {
    spec.validate();
    if (k_shot < 1) throw ConfigError("generate_episode: K must be >= 1");
    if (m_unlabeled < 0) throw ConfigError("generate_episode: M must be >= 0");
    if (class_index < 0 || class_index >= spec.n_classes) throw ConfigError("generate_episode: class out of range");

    const std::uint64_t base = mix(mix(spec.episode_seed, episode_index), static_cast<std::uint64_t>(class_index));
    auto image_seed = [&](Role role, int idx) {
        return mix(mix(base, static_cast<std::uint64_t>(role)), static_cast<std::uint64_t>(idx));
    };

    GeneratedEpisode out;
    out.class_index = class_index;
    for (int k = 0; k < k_shot; ++k) out.supports.push_back(paint(spec, codebook, class_index, Role::Support, image_seed(Role::Support, k)));
    for (int m = 0; m < m_unlabeled; ++m) {
        out.unlabeled.push_back(paint(spec, codebook, class_index, Role::Unlabeled, image_seed(Role::Unlabeled, m)));
    }
    out.query = paint(spec, codebook, class_index, Role::Query, image_seed(Role::Query, 0));

    Episode& ep = out.episode;
    ep.class_id = class_name(class_index);
    for (const auto& s : out.supports) ep.supports.push_back({s.features, s.truth});
    for (const auto& u : out.unlabeled) ep.unlabeled.push_back(u.features);
    ep.query = out.query.features;
    ep.query_truth = out.query.truth;
    return out;
}

Episode gen_episode(const SyntheticTaskSpec& spec, int class_index, std::size_t episode_index, int k_shot,
                    int m_unlabeled) {
    return generate_episode(spec, make_codebook(spec), class_index, episode_index, k_shot, m_unlabeled).episode;
}

std::string class_name(int class_index) { return "class_" + std::to_string(class_index); }

namespace presets {

SyntheticTaskSpec two_mode() {
    SyntheticTaskSpec s;
    s.mode_coverage = 1.0;
    return s;
}

SyntheticTaskSpec adversarial() {
    SyntheticTaskSpec s;
    s.distractor_area = 0.12;
    return s;
}

SyntheticTaskSpec by_name(const std::string& name) {
    if (name == "default") return {};
    if (name == "two-mode") return two_mode();
    if (name == "adversarial") return adversarial();
    throw ConfigError("unknown synthetic preset '" + name + "' (expected default, two-mode or adversarial)");
}

} // namespace presets

} // namespace protoseg
