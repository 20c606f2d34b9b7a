#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "protoseg/episode_io.hpp"
#include "protoseg/error.hpp"
#include "protoseg/interchange.hpp"

namespace protoseg::cli {

namespace fs = std::filesystem;
using io::save_mask;
using io::save_matrix;
using io::save_probability_map;

namespace {

std::string numbered(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu", prefix, i);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    f.close();
    if (!f) throw Error("cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Loads the checkpoint when given; requires one when sigma refinement
/// would actually run.
std::optional<UncertaintyNet> load_net(const RunConfig& cfg) {
    const bool needed = parse_refinement(cfg.refinement) == Refinement::Sigma &&
                        (cfg.m_unlabeled > 0 || cfg.use_query_as_unlabeled);
    if (cfg.checkpoint.empty()) {
        if (needed) throw ConfigError("sigma refinement with unlabeled images requires --checkpoint");
        return std::nullopt;
    }
    return load_checkpoint(cfg.checkpoint);
}

void prepare_out(const RunConfig& cfg) { fs::create_directories(cfg.out); }

void dump_episode_maps(const fs::path& dir, const Episode& ep, const SemiSupervisedResult& r,
                       const UncertaintyNet* net, const SemiSupervisedConfig& pipeline) {
    fs::create_directories(dir);
    save_mask(dir / "query_mask", r.mask, "query_mask");
    save_probability_map(dir / "query_mu", r.mu, "query_mu");
    if (ep.query_truth) save_mask(dir / "query_truth", *ep.query_truth, "query_truth");
    if (net != nullptr) {
        const PrototypeSet all = merge_prototype_sets(r.support_prototypes, r.unlabeled_prototypes);
        const SimilarityMaps sims = similarity(ep.query, all);
        save_probability_map(dir / "query_sigma", sigma_map(*net, ep.query, all, sims, r.mu.width(), r.mu.height()),
                             "query_sigma");
    }
    std::vector<FeatureMap> pool(ep.unlabeled.begin(), ep.unlabeled.end());
    if (pipeline.use_query_as_unlabeled) pool.push_back(ep.query);
    for (std::size_t m = 0; m < pool.size(); ++m) {
        const PseudoLabelResult p = pseudo_label_image(pool[m], r.support_prototypes, net, pipeline);
        const fs::path u = dir / numbered("unlabeled", m);
        fs::create_directories(u);
        save_probability_map(u / "mu", p.mu, "mu");
        save_probability_map(u / "uncertainty", p.uncertainty, "uncertainty");
        save_probability_map(u / "mu_refined", p.mu_refined, "mu_refined");
        save_mask(u / "pseudo_label", p.label, "pseudo_label");
    }
}

} // namespace

std::unique_ptr<EpisodeSource> make_source(const RunConfig& cfg) {
    if (!cfg.episode_dirs.empty()) return std::make_unique<DirectorySource>(cfg.episode_dirs);
    return std::make_unique<SyntheticSource>(resolve_spec(cfg));
}

nlohmann::json cmd_train(const RunConfig& cfg) {
    const auto source = make_source(cfg);
    const TrainOptions opts = train_options(cfg);
    const int channels = source->episode(kTrainingEpisodeOffset, opts.k_shot, 0).channels();
    const UncertaintyNet init = UncertaintyNet::create(channels, cfg.seed, {}, cfg.sigma_min);
    const auto validation = validation_samples(*source, opts, 8, 256);
    const double val_before = batch_nll(init, validation);

    prepare_out(cfg);
    std::ostringstream csv;
    csv << "step,loss\n";
    const TrainState state = train_uncertainty(TrainState::start(init), *source, opts, [&](long step, double loss) {
        csv << step << ',' << format_double(loss) << '\n';
    });
    const double val_after = batch_nll(state.net, validation);

    save_checkpoint(cfg.out / "checkpoint", state.net);
    write_text(cfg.out / "loss.csv", csv.str());
    nlohmann::json summary{{"steps", state.step},
                           {"parameters", state.net.parameter_count()},
                           {"validation_nll_initial", val_before},
                           {"validation_nll_final", val_after},
                           {"checkpoint", (cfg.out / "checkpoint").generic_string()},
                           {"loss_csv", (cfg.out / "loss.csv").generic_string()}};
    write_json(cfg.out / "train.json", {{"config", cfg.to_json()}, {"result", summary}});
    return summary;
}

nlohmann::json cmd_eval(const RunConfig& cfg) {
    const auto source = make_source(cfg);
    const std::optional<UncertaintyNet> net = load_net(cfg);
    const UncertaintyNet* net_ptr = net ? &*net : nullptr;
    const BenchmarkConfig bench = benchmark_config(cfg);

    prepare_out(cfg);
    std::vector<std::string> records(static_cast<std::size_t>(cfg.episodes));
    std::mutex records_mutex;
    const BenchmarkReport report =
        run_benchmark(*source, net_ptr, bench, [&](std::size_t i, const Episode& ep, const SemiSupervisedResult& r) {
            std::string lines;
            for (const auto& rec : r.report.images) {
                nlohmann::json j = nlohmann::json::parse(rec.to_json_line());
                j["episode"] = i;
                lines += j.dump() + "\n";
            }
            {
                std::lock_guard lock(records_mutex);
                records[i] = std::move(lines);
            }
            if (i < static_cast<std::size_t>(cfg.dump_maps)) {
                dump_episode_maps(cfg.out / "maps" / numbered("episode", i), ep, r, net_ptr, bench.pipeline(i));
            }
        });

    std::string all;
    for (const auto& r : records) all += r;
    write_text(cfg.out / "refinement.jsonl", all);
    nlohmann::json j = report.to_json();
    j["run_config"] = cfg.to_json();
    write_json(cfg.out / "report.json", j);
    return {{"report", (cfg.out / "report.json").generic_string()},
            {"mean_iou", report.aggregate.mean_iou},
            {"binary_iou", report.aggregate.binary_iou},
            {"episodes", report.aggregate.n_episodes}};
}

nlohmann::json cmd_gen(const RunConfig& cfg) {
    if (!cfg.episode_dirs.empty()) throw ConfigError("gen writes synthetic episodes; --episode-dir is not allowed");
    const SyntheticSource source(resolve_spec(cfg));
    prepare_out(cfg);
    nlohmann::json listing = nlohmann::json::array();
    for (int i = 0; i < cfg.episodes; ++i) {
        const auto index = static_cast<std::size_t>(i);
        const std::string name = numbered("episode", index);
        const Episode ep = source.episode(index, cfg.k_shot, cfg.m_unlabeled);
        io::save_episode(cfg.out / name, ep);
        listing.push_back({{"dir", name}, {"class_id", ep.class_id}, {"fold", source.fold(index)}});
    }
    write_json(cfg.out / "episodes.json", {{"config", cfg.to_json()}, {"episodes", listing}});
    return {{"episodes", cfg.episodes}, {"listing", (cfg.out / "episodes.json").generic_string()}};
}

nlohmann::json cmd_dump_embeddings(const RunConfig& cfg) {
    const auto source = make_source(cfg);
    const std::optional<UncertaintyNet> net = load_net(cfg);
    const Episode ep = source->episode(cfg.index, cfg.k_shot, cfg.m_unlabeled);
    if (!ep.query_truth) throw ConfigError("dump-embeddings needs an episode with query truth");
    SemiSupervisedConfig pipeline = benchmark_config(cfg).pipeline(cfg.index);
    const SemiSupervisedResult r = segment_semisupervised(ep, net ? &*net : nullptr, pipeline);
    const LabelMask truth = mask_at_feature_resolution(*ep.query_truth, ep.query);

    Matrix rows;
    std::string labels = "row,group,class\n";
    std::size_t n = 0;
    nlohmann::json counts = nlohmann::json::object();
    auto add = [&](std::span<const double> v, const char* group, const char* cls) {
        rows.append(v);
        labels += std::to_string(n++) + ',' + group + ',' + cls + '\n';
        counts[std::string(group) + "_" + cls] = counts.value(std::string(group) + "_" + cls, 0) + 1;
    };
    for (std::uint8_t cls : {kForeground, kBackground}) {
        const char* name = cls == kForeground ? "fg" : "bg";
        counts[std::string("query_") + name] = 0;
        for (std::size_t i = 0; i < ep.query.pixel_count(); ++i) {
            if (truth[i] != cls) continue;
            const auto f = ep.query.pixel(i);
            const std::vector<double> v(f.begin(), f.end());
            add(v, "query", name);
        }
    }
    for (const PrototypeSet* set : {&r.support_prototypes, &r.unlabeled_prototypes}) {
        const char* group = set == &r.support_prototypes ? "support_prototype" : "unlabeled_prototype";
        for (std::uint8_t cls : {kForeground, kBackground}) {
            const char* name = cls == kForeground ? "fg" : "bg";
            counts[std::string(group) + "_" + name] = 0;
            for (const auto& p : set->of(cls)) add(p.values, group, name);
        }
    }

    prepare_out(cfg);
    save_matrix(cfg.out / "embeddings", rows, "embeddings");
    write_text(cfg.out / "labels.csv", labels);
    nlohmann::json summary{{"rows", n}, {"channels", ep.channels()}, {"class_id", ep.class_id}, {"counts", counts}};
    write_json(cfg.out / "embeddings.json", {{"config", cfg.to_json()}, {"result", summary}});
    return summary;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const CLI::Error*>(&e)) return 2;
    if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

nlohmann::json error_record(const std::string& command, const std::exception& e) {
    std::string type = "Error";
    if (dynamic_cast<const ConfigError*>(&e)) type = "ConfigError";
    else if (dynamic_cast<const FormatError*>(&e)) type = "FormatError";
    else if (dynamic_cast<const DimensionError*>(&e)) type = "DimensionError";
    else if (dynamic_cast<const NumericError*>(&e)) type = "NumericError";
    else if (dynamic_cast<const CLI::Error*>(&e)) type = "UsageError";
    else if (dynamic_cast<const fs::filesystem_error*>(&e)) type = "IOError";
    return {{"status", "error"}, {"command", command}, {"error", {{"type", type}, {"message", e.what()}}}};
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Few-shot segmentation with part-aware and uncertainty-refined unlabeled prototypes", "protoseg"};
    app.require_subcommand(1);

    RunConfig flags = default_config();
    std::string config_path, refinement;
    std::vector<std::string> episode_dirs;
    std::string out_dir, checkpoint;
    std::vector<std::function<void(RunConfig&)>> overrides;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
        auto bind = [&](const std::string& name, auto& target, auto member, const std::string& help) {
            CLI::Option* opt = sub->add_option(name, target, help);
            overrides.push_back([opt, &target, member](RunConfig& c) {
                if (opt->count() > 0) c.*member = target;
            });
        };
        bind("--seed", flags.seed, &RunConfig::seed, "Master seed");
        bind("--k", flags.k_shot, &RunConfig::k_shot, "Support images per episode");
        bind("--m", flags.m_unlabeled, &RunConfig::m_unlabeled, "Unlabeled images per episode");
        bind("--episodes", flags.episodes, &RunConfig::episodes, "Episodes to evaluate or generate");
        CLI::Option* ref = sub->add_option("--refinement", refinement, "Pseudo-label refinement")
                               ->check(CLI::IsMember({"sigma", "entropy", "none"}));
        overrides.push_back([ref, &refinement](RunConfig& c) {
            if (ref->count() > 0) c.refinement = refinement;
        });
        CLI::Option* uq = sub->add_flag("--use-query-as-unlabeled", "Also pseudo-label the query");
        overrides.push_back([uq](RunConfig& c) {
            if (uq->count() > 0) c.use_query_as_unlabeled = true;
        });
        CLI::Option* o = sub->add_option("--out", out_dir, "Output directory");
        overrides.push_back([o, &out_dir](RunConfig& c) {
            if (o->count() > 0) c.out = out_dir;
        });
        bind("--threads", flags.threads, &RunConfig::threads, "Worker threads (default: available cores)");
        bind("--preset", flags.preset, &RunConfig::preset, "Synthetic preset: default, two-mode or adversarial");
        CLI::Option* dirs = sub->add_option("--episode-dir", episode_dirs, "Episode fixture directory (repeatable)");
        overrides.push_back([dirs, &episode_dirs](RunConfig& c) {
            if (dirs->count() > 0) c.episode_dirs.assign(episode_dirs.begin(), episode_dirs.end());
        });
        CLI::Option* ck = sub->add_option("--checkpoint", checkpoint, "Uncertainty net checkpoint directory");
        overrides.push_back([ck, &checkpoint](RunConfig& c) {
            if (ck->count() > 0) c.checkpoint = checkpoint;
        });
        bind("--clusters-support", flags.clusters_support, &RunConfig::clusters_support, "Support clusters per class");
        bind("--clusters-unlabeled", flags.clusters_unlabeled, &RunConfig::clusters_unlabeled,
             "Unlabeled clusters per class");
        bind("--lambda-p", flags.lambda_p, &RunConfig::lambda_p, "Context augmentation weight");
        bind("--kmeans-iters", flags.kmeans_iters, &RunConfig::kmeans_iters, "Lloyd iterations");
        bind("--temperature", flags.temperature, &RunConfig::temperature, "Similarity softmax temperature");
        bind("--sigma-min", flags.sigma_min, &RunConfig::sigma_min, "Lower bound of the net's sigma (train)");
        bind("--steps", flags.steps, &RunConfig::steps, "Training steps");
        bind("--batch", flags.batch, &RunConfig::batch, "Training batch size in pixels");
        bind("--lr", flags.lr, &RunConfig::lr, "Adam learning rate");
        bind("--index", flags.index, &RunConfig::index, "Episode index (dump-embeddings)");
        bind("--dump-maps", flags.dump_maps, &RunConfig::dump_maps, "Episodes whose maps are written (eval)");
    };

    CLI::App* train = app.add_subcommand("train", "Train the uncertainty net; writes a checkpoint and loss curve");
    CLI::App* eval = app.add_subcommand("eval", "Benchmark episodes; writes a JSON report");
    CLI::App* gen = app.add_subcommand("gen", "Write synthetic episode fixtures");
    CLI::App* dump = app.add_subcommand("dump-embeddings", "Export query features and prototypes of one episode");
    for (CLI::App* sub : {train, eval, gen, dump}) add_common(sub);

    std::string command;
    for (const auto& a : args) {
        if (a == "train" || a == "eval" || a == "gen" || a == "dump-embeddings") {
            command = a;
            break;
        }
    }

    RunConfig cfg;
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        command = app.get_subcommands().front()->get_name();
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << error_record(command, e).dump() << std::endl;
        return 2;
    }

    try {
        cfg = default_config();
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(f);
            } catch (const nlohmann::json::parse_error& e) {
                throw ConfigError("config " + config_path + ": " + e.what());
            }
            apply_json(cfg, j);
        }
        for (const auto& apply : overrides) apply(cfg);
        cfg.command = command;
        cfg.validate();

        nlohmann::json summary;
        if (command == "train") summary = cmd_train(cfg);
        else if (command == "eval") summary = cmd_eval(cfg);
        else if (command == "gen") summary = cmd_gen(cfg);
        else summary = cmd_dump_embeddings(cfg);
        out << nlohmann::json{{"status", "ok"}, {"command", command}, {"result", summary}}.dump() << std::endl;
        return 0;
    } catch (const std::exception& e) {
        const nlohmann::json record = error_record(command, e);
        err << record.dump() << std::endl;
        if (!cfg.out.empty()) {
            std::error_code ec;
            fs::create_directories(cfg.out, ec);
            std::ofstream f(cfg.out / "error.json");
            if (f) f << record.dump(2) << "\n";
        }
        return exit_code_for(e);
    }
}

} // namespace protoseg::cli
