#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "oodkit/parallel.hpp"
#include "oodkit/store.hpp"

namespace oodkit::cli {

using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
}

std::string valid_methods() {
    std::vector<std::string> names;
    for (Method m : all_methods()) names.emplace_back(to_string(m));
    return join(names);
}

std::vector<Method> resolve_methods(const RunConfig& cfg) {
    if (cfg.methods.empty()) return all_methods();
    std::vector<Method> out;
    for (const auto& name : cfg.methods) out.push_back(method_from_string(name));
    return out;
}

std::vector<ReportFormat> resolve_formats(const RunConfig& cfg) {
    std::vector<ReportFormat> out;
    for (const auto& f : cfg.formats) out.push_back(report_format_from_string(f));
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

void write_reports(const RunConfig& cfg, const EvalReport& report) {
    if (cfg.out.empty()) return;
    std::filesystem::create_directories(cfg.out);
    for (ReportFormat f : resolve_formats(cfg)) {
        write_text(std::filesystem::path(cfg.out) / ("report." + std::string(extension(f))),
                   render_report(report, f));
    }
}

ProbeHead train_head(const RunConfig& cfg, const DatasetSplit& train) {
    if (cfg.probe == "linear") return train_linear_probe(train, cfg.probe_cfg);
    if (cfg.probe == "mlp") return train_mlp_probe(train, cfg.probe_cfg);
    throw IoError("unknown probe type '" + cfg.probe + "' (valid: linear, mlp)");
}

std::string single_train_split(const Manifest& m) {
    const auto names = m.names_with_role(Role::IdTrain);
    if (names.size() != 1) throw Error("manifest needs exactly one id_train split");
    return names.front();
}

DatasetSplit load_with_warnings(const Manifest& m, const std::string& name, std::ostream& err) {
    DatasetSplit s = load_split(m, name);
    for (const auto& w : s.warnings) err << "warning: " << name << ": " << w << "\n";
    return s;
}

// Maps exceptions onto the exit-code contract.
template <typename F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kDomainFailure;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
}

}  // namespace

std::string RunConfig::snapshot_json() const {
    json j{{"methods", methods},
           {"probe", probe},
           {"epochs", probe_cfg.epochs},
           {"batch_size", probe_cfg.batch_size},
           {"lr", probe_cfg.learning_rate},
           {"momentum", probe_cfg.momentum},
           {"weight_decay", probe_cfg.weight_decay},
           {"standardize", probe_cfg.standardize_features},
           {"hidden", probe_cfg.hidden},
           {"scorer", json::parse(params_to_json(scorer))},
           {"seed", seed},
           {"seeds", seeds}};
    return j.dump();
}

void apply_config_file(const std::filesystem::path& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("invalid config " + path.string() + ": " + e.what());
    }
    auto list = [](const json& v) {
        return v.is_array() ? v.get<std::vector<std::string>>() : split_list(v.get<std::string>());
    };
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "manifest") cfg.manifest = v.get<std::string>();
            else if (key == "out") cfg.out = v.get<std::string>();
            else if (key == "methods") cfg.methods = list(v);
            else if (key == "probe") cfg.probe = v.get<std::string>();
            else if (key == "k") cfg.scorer.k = v.get<std::size_t>();
            else if (key == "react_p") cfg.scorer.react_percentile = v.get<double>();
            else if (key == "dice_sparsity") cfg.scorer.dice_sparsity = v.get<double>();
            else if (key == "vim_dprime") cfg.scorer.vim_dim = v.get<std::size_t>();
            else if (key == "eps") cfg.scorer.mahalanobis_shrinkage = v.get<double>();
            else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
            else if (key == "threads") cfg.threads = v.get<std::size_t>();
            else if (key == "format") cfg.formats = list(v);
            else if (key == "epochs") cfg.probe_cfg.epochs = v.get<std::size_t>();
            else if (key == "batch_size") cfg.probe_cfg.batch_size = v.get<std::size_t>();
            else if (key == "lr") cfg.probe_cfg.learning_rate = v.get<double>();
            else if (key == "momentum") cfg.probe_cfg.momentum = v.get<double>();
            else if (key == "weight_decay") cfg.probe_cfg.weight_decay = v.get<double>();
            else if (key == "hidden") cfg.probe_cfg.hidden = v.get<std::size_t>();
            else if (key == "standardize") cfg.probe_cfg.standardize_features = v.get<bool>();
            else if (key == "seeds") cfg.seeds = v.get<std::size_t>();
            else if (key == "d") cfg.scenario.d = v.get<std::size_t>();
            else if (key == "classes") cfg.scenario.classes = v.get<std::size_t>();
            else if (key == "ood_clusters") cfg.scenario.ood_clusters = v.get<std::size_t>();
            else if (key == "n") cfg.scenario.n_per_cluster = v.get<std::size_t>();
            else if (key == "radius") cfg.scenario.radius = v.get<double>();
            else if (key == "sigma_id") cfg.scenario.sigma_id = v.get<double>();
            else if (key == "sigma_scatter") cfg.scenario.sigma_scatter = v.get<double>();
            else if (key == "separation") cfg.scenario.min_mean_separation = v.get<double>();
            else throw IoError("unknown config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw IoError("invalid config value in " + path.string() + ": " + e.what());
    }
}

int cmd_validate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const Manifest m = read_manifest(cfg.manifest);
        const auto issues = validate_manifest(m);
        for (const auto& issue : issues) out << issue << "\n";
        return issues.empty() ? kOk : kDomainFailure;
    });
}

int cmd_probe(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (cfg.out.empty()) throw IoError("--out is required");
        const Manifest m = read_manifest(cfg.manifest);
        const DatasetSplit train = load_with_warnings(m, single_train_split(m), err);
        const ProbeHead head = train_head(cfg, train);

        std::filesystem::create_directories(cfg.out);
        save_head(cfg.out, head);
        json metrics{{"probe", cfg.probe}, {"train_accuracy", accuracy(head, train)}};
        json test = json::object();
        for (const auto& name : m.names_with_role(Role::IdTest)) {
            const DatasetSplit s = load_with_warnings(m, name, err);
            if (s.labels) test[name] = accuracy(head, s);
        }
        metrics["id_test_accuracy"] = std::move(test);
        metrics["config"] = json::parse(cfg.snapshot_json());
        write_text(std::filesystem::path(cfg.out) / "metrics.json", metrics.dump(2) + "\n");
        out << "train accuracy: " << metrics["train_accuracy"].get<double>() << "\n";
        for (const auto& [name, acc] : metrics["id_test_accuracy"].items()) {
            out << name << " accuracy: " << acc.get<double>() << "\n";
        }
        return kOk;
    });
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto methods = resolve_methods(cfg);
        resolve_formats(cfg);
        const Manifest m = read_manifest(cfg.manifest);
        const DatasetSplit train = load_with_warnings(m, single_train_split(m), err);
        const auto test_names = m.names_with_role(Role::IdTest);
        if (test_names.empty()) throw Error("manifest has no id_test split");

        std::vector<DatasetSplit> loaded;
        loaded.push_back(load_with_warnings(m, test_names.front(), err));
        for (const auto& name : m.names_with_role(Role::OodTest)) loaded.push_back(load_with_warnings(m, name, err));
        std::vector<const DatasetSplit*> splits;
        for (const auto& s : loaded) splits.push_back(&s);

        const ProbeHead head = train_head(cfg, train);
        const auto results = score_all(methods, train, &head, splits, cfg.scorer);

        ReportMeta meta;
        meta.dataset = m.dataset;
        if (loaded.front().labels) meta.id_accuracy = accuracy(head, loaded.front());
        meta.config = cfg.snapshot_json();
        std::vector<EvalCell> cells;
        for (const auto& r : results) {
            const std::string name(to_string(r.method));
            for (const auto& w : r.warnings) err << "warning: " << w << "\n";
            if (r.error) {
                err << "method " << name << " failed: " << *r.error << "\n";
                meta.failures.push_back({name, *r.error});
                continue;
            }
            for (std::size_t o = 1; o < splits.size(); ++o) {
                cells.push_back(make_cell(name, splits[o]->name, r.scores[0].values, r.scores[o].values));
            }
            if (!cfg.out.empty()) {
                const auto dir = std::filesystem::path(cfg.out) / "scores";
                std::filesystem::create_directories(dir);
                for (std::size_t s = 0; s < splits.size(); ++s) {
                    save_scores(dir / (name + "__" + splits[s]->name + ".npy"), r.scores[s], splits[s]->name,
                                cfg.scorer);
                }
            }
        }
        const bool any = !cells.empty();
        const EvalReport report = build_report(std::move(cells), std::move(meta));
        if (!cfg.out.empty()) save_head(std::filesystem::path(cfg.out) / "head", head);
        write_reports(cfg, report);
        out << render_report(report, ReportFormat::Text);
        return any ? kOk : kDomainFailure;
    });
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (cfg.out.empty()) throw IoError("--out is required");
        const Scenario s = generate_scenario(cfg.scenario);
        out << write_scenario(cfg.out, s).string() << "\n";
        return kOk;
    });
}

int cmd_geometry(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto methods = resolve_methods(cfg);
        resolve_formats(cfg);
        if (cfg.seeds < 1) throw IoError("--seeds must be >= 1");
        std::vector<EvalReport> reports;
        for (std::size_t i = 0; i < cfg.seeds; ++i) {
            ScenarioConfig sc = cfg.scenario;
            sc.seed = cfg.seed + i;
            GeometryOptions opt{cfg.probe_cfg, cfg.scorer};
            opt.probe.seed = cfg.seed + i;
            reports.push_back(run_geometry_experiment(generate_scenario(sc), methods, cfg.scorer.k, opt));
        }
        EvalReport report = cfg.seeds == 1 ? reports.front() : median_report(reports);
        report.config = cfg.snapshot_json();
        for (const auto& f : report.failures) err << "method " << f.method << " failed: " << f.message << "\n";
        write_reports(cfg, report);
        out << render_report(report, ReportFormat::Text);
        return report.cells.empty() ? kDomainFailure : kOk;
    });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    // Config file values become the defaults that explicit flags override.
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
        if (path.empty()) continue;
        try {
            apply_config_file(path, cfg);
        } catch (const Error& e) {
            err << "error: " << e.what() << "\n";
            return kUsage;
        }
    }

    CLI::App app{"Out-of-distribution detection on frozen embeddings"};
    app.require_subcommand(1);
    std::string config_path, methods = join(cfg.methods), formats = join(cfg.formats);
    std::optional<std::size_t> vim_dprime = cfg.scorer.vim_dim;
    std::optional<double> sigma_scatter = cfg.scenario.sigma_scatter;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (flags override it)");
        sub->add_option("--threads", cfg.threads, "Worker threads (default: OODKIT_THREADS or all cores)");
        sub->add_option("--seed", cfg.seed, "Seed for every random draw");
    };
    auto probe_flags = [&](CLI::App* sub) {
        sub->add_option("--probe", cfg.probe, "Probe head: linear | mlp")->check(CLI::IsMember({"linear", "mlp"}));
        sub->add_option("--epochs", cfg.probe_cfg.epochs, "Training epochs");
        sub->add_option("--batch-size", cfg.probe_cfg.batch_size, "Mini-batch size");
        sub->add_option("--lr", cfg.probe_cfg.learning_rate, "Peak learning rate (cosine decay)");
        sub->add_option("--momentum", cfg.probe_cfg.momentum, "SGD momentum");
        sub->add_option("--weight-decay", cfg.probe_cfg.weight_decay, "L2 weight decay");
        sub->add_option("--hidden", cfg.probe_cfg.hidden, "MLP hidden width");
        sub->add_flag("--standardize", cfg.probe_cfg.standardize_features, "Standardize features before training");
    };
    auto scorer_flags = [&](CLI::App* sub) {
        sub->add_option("--methods", methods, "Comma-separated methods: " + valid_methods());
        sub->add_option("--k", cfg.scorer.k, "kNN neighbour rank");
        sub->add_option("--react-p", cfg.scorer.react_percentile, "ReAct clip percentile");
        sub->add_option("--dice-sparsity", cfg.scorer.dice_sparsity, "DICE pruned fraction");
        sub->add_option("--vim-dprime", vim_dprime, "Principal subspace dimension for Residual/ViM");
        sub->add_option("--eps", cfg.scorer.mahalanobis_shrinkage, "Mahalanobis shrinkage scale");
        sub->add_option("--format", formats, "Report formats: text,csv,json");
    };
    auto scenario_flags = [&](CLI::App* sub) {
        sub->add_option("--d", cfg.scenario.d, "Feature dimension");
        sub->add_option("--classes", cfg.scenario.classes, "ID classes");
        sub->add_option("--ood-clusters", cfg.scenario.ood_clusters, "Concentrated OOD clusters");
        sub->add_option("--n", cfg.scenario.n_per_cluster, "Points per cluster");
        sub->add_option("--radius", cfg.scenario.radius, "Norm of the cluster means");
        sub->add_option("--sigma-id", cfg.scenario.sigma_id, "Within-cluster std");
        sub->add_option("--sigma-scatter", sigma_scatter, "Scattered-OOD std (default 2r/sqrt(d))");
        sub->add_option("--separation", cfg.scenario.min_mean_separation, "Minimum distance between means");
    };

    auto* validate = app.add_subcommand("validate", "Check a manifest and its array headers");
    validate->add_option("--manifest", cfg.manifest, "manifest.json")->required();
    common(validate);

    auto* probe = app.add_subcommand("probe", "Train a probe head on id_train");
    probe->add_option("--manifest", cfg.manifest, "manifest.json")->required();
    probe->add_option("--out", cfg.out, "Output directory")->required();
    common(probe);
    probe_flags(probe);

    auto* eval = app.add_subcommand("eval", "Score every method and report AUROC per OOD split");
    eval->add_option("--manifest", cfg.manifest, "manifest.json")->required();
    eval->add_option("--out", cfg.out, "Output directory for reports, scores and head");
    common(eval);
    probe_flags(eval);
    scorer_flags(eval);

    auto* synth = app.add_subcommand("synth", "Write a synthetic scenario as a manifest");
    synth->add_option("--out", cfg.out, "Output directory")->required();
    common(synth);
    scenario_flags(synth);

    auto* geometry = app.add_subcommand("geometry", "Run the concentrated vs scattered OOD experiment");
    geometry->add_option("--out", cfg.out, "Output directory for reports");
    geometry->add_option("--seeds", cfg.seeds, "Number of consecutive seeds; >1 reports medians");
    common(geometry);
    probe_flags(geometry);
    scorer_flags(geometry);
    scenario_flags(geometry);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kUsage;
    }

    cfg.methods = split_list(methods);
    cfg.formats = split_list(formats);
    cfg.scorer.vim_dim = vim_dprime;
    cfg.scenario.sigma_scatter = sigma_scatter;
    cfg.probe_cfg.seed = cfg.seed;
    cfg.scenario.seed = cfg.seed;
    set_default_threads(cfg.threads);

    try {
        resolve_methods(cfg);
        resolve_formats(cfg);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kUsage;
    }

    if (*validate) return cmd_validate(cfg, out, err);
    if (*probe) return cmd_probe(cfg, out, err);
    if (*eval) return cmd_eval(cfg, out, err);
    if (*synth) return cmd_synth(cfg, out, err);
    return cmd_geometry(cfg, out, err);
}

}  // namespace oodkit::cli
