// Command-line driver for the detection toolkit. Every subcommand takes a
// JSON config file; flags override individual fields. All randomness flows
// from seeds in the config, so reruns are bit-identical.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mlloo/mlloo.hpp"

namespace fs = std::filesystem;
using namespace mlloo;

namespace {

std::string set_file_base(const std::string& out_dir, const std::string& key) {
    std::string name = key;
    for (char& ch : name)
        if (ch == '/') ch = '_';
    return out_dir + "/set_" + name;
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::size_t workers = 0;
    std::uint64_t master_seed = 0;
    bool has_seed = false;
};

Config load_with_overrides(const CommonOpts& o) {
    Config cfg = load_config(o.config_path);
    if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
    if (o.workers) cfg.workers = o.workers;
    if (o.has_seed) cfg.master_seed = o.master_seed;
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file")->required();
    cmd->add_option("--out", o.out_dir, "output directory (overrides config)");
    cmd->add_option("--workers", o.workers, "worker thread count");
    cmd->add_option("--seed", o.master_seed, "master seed")->each([&](const std::string&) {
        o.has_seed = true;
    });
}

int fail(const std::string& msg) {
    std::cerr << json{{"error", msg}}.dump() << "\n";
    return 1;
}

void write_train_log(const std::string& path, const std::vector<EpochStats>& log) {
    atomic_write(path, [&](std::ostream& out) {
        out.precision(17);
        out << "epoch,loss,accuracy\n";
        for (std::size_t e = 0; e < log.size(); ++e)
            out << e << ',' << log[e].loss << ',' << log[e].accuracy << '\n';
    });
}

// Generate (and persist) the attack sets named by the config.
void generate_stage_sets(Pipeline& p, bool mixed, const std::string& out_dir) {
    const Config& cfg = p.config();
    const std::uint64_t mh = p.model_hash_value();
    const std::uint64_t dh = p.dataset().manifest.content_hash;
    auto persist = [&](const std::string& key, const AttackSet& set) {
        save_attack_set(set_file_base(out_dir, key), set, mh, dh);
        save_attack_summary_csv(set_file_base(out_dir, key) + "_summary.csv", set);
        if (set.partial_warning)
            std::cerr << json{{"warning", "attack set " + key + " is partial"}}.dump() << "\n";
    };
    for (const AttackParams& a : cfg.attacks) {
        const std::string name = attack_kind_name(a.kind);
        persist(name + "/train", p.attack_set(name + "/train", a, "train"));
        persist(name + "/eval", p.attack_set(name + "/eval", a, "eval"));
    }
    if (mixed) {
        const bool cw = cfg.protocol.mixed_family == "cw";
        AttackParams base;
        base.kind = cw ? AttackKind::CWL2 : AttackKind::LinfPGD;
        for (const AttackParams& a : cfg.attacks)
            if (a.kind == base.kind) base = a;
        base.mix = cw ? MixMode::ConfidenceGrid : MixMode::EpsilonGrid;
        AttackParams lc = base, hc = base;
        lc.mix = hc.mix = MixMode::None;
        (cw ? lc.confidence : lc.epsilon) = cfg.protocol.mixed_lc_value;
        (cw ? hc.confidence : hc.epsilon) = cfg.protocol.mixed_hc_value;
        const std::string family = attack_kind_name(base.kind);
        persist(family + "_mix/train", p.attack_set(family + "_mix/train", base, "train"));
        persist(family + "_mix/eval", p.attack_set(family + "_mix/eval", base, "eval"));
        persist(family + "_lc/eval", p.attack_set(family + "_lc/eval", lc, "eval"));
        persist(family + "_hc/eval", p.attack_set(family + "_hc/eval", hc, "eval"));
    }
}

ExperimentReport eval_from_files(const Config& cfg, const std::string& detector_path,
                                 const std::string& features_path) {
    LogisticDetector det = load_detector(detector_path);
    FeatureTable table = load_features_csv(features_path);
    detail::check(det.selection_hash == table.selection_hash(),
                  "eval: detector/features selection hash mismatch");
    auto it = table.meta.find("model_hash");
    detail::check(it != table.meta.end(), "eval: features file lacks model_hash");

    std::vector<double> nat_scores, adv_scores, nat_f0, adv_f0;
    for (std::size_t i = 0; i < table.features.size(); ++i) {
        const double s = score_raw(det, table.features[i]);
        if (table.is_adversarial[i]) {
            adv_scores.push_back(s);
            adv_f0.push_back(table.features[i][0]);
        } else {
            nat_scores.push_back(s);
            nat_f0.push_back(table.features[i][0]);
        }
    }
    detail::check(!nat_scores.empty() && !adv_scores.empty(),
                  "eval: need both natural and adversarial rows");

    ExperimentReport r;
    r.protocol = "eval";
    r.dataset_name = table.meta.count("dataset") ? table.meta.at("dataset") : "";
    r.dataset_hash = table.meta.count("dataset_hash") ? table.meta.at("dataset_hash") : "";
    r.model_hash = it->second;
    r.stat_kind = table.meta.count("stat") ? table.meta.at("stat") : stat_kind_name(cfg.stat);
    r.fpr_targets = cfg.protocol.fpr_targets;
    const std::string attack = table.meta.count("attack") ? table.meta.at("attack") : "unknown";

    MetricRow ml;
    ml.attack = attack;
    ml.detector = "ml_loo";
    ml.auc_value = auc(nat_scores, adv_scores);
    for (double t : r.fpr_targets) ml.tpr.push_back(tpr_at_fpr(nat_scores, adv_scores, t));
    ml.n_train = 0;
    ml.n_eval = adv_scores.size();
    r.rows.push_back(ml);
    if (r.stat_kind == "iqr") {
        MetricRow base;
        base.attack = attack;
        base.detector = "iqr_threshold";
        base.auc_value = auc(nat_f0, adv_f0);
        for (double t : r.fpr_targets) base.tpr.push_back(tpr_at_fpr(nat_f0, adv_f0, t));
        base.n_train = 0;
        base.n_eval = adv_f0.size();
        r.rows.push_back(base);
    }
    r.config_echo = json::object();  // pure function of the input files
    r.wall_clock_seconds = 0.0;      // keeps eval reports byte-stable
    return r;
}

void write_idx_pair(const std::string& images_path, const std::string& labels_path,
                    const Dataset& ds, SplitRange range) {
    atomic_write(images_path, [&](std::ostream& out) {
        auto be32 = [&](std::uint32_t v) {
            unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
            out.write(reinterpret_cast<const char*>(b), 4);
        };
        be32(0x00000803u);
        be32(static_cast<std::uint32_t>(range.size()));
        be32(static_cast<std::uint32_t>(ds.manifest.h));
        be32(static_cast<std::uint32_t>(ds.manifest.w));
        for (std::size_t i = range.begin; i < range.end; ++i)
            for (double v : ds.images[i].values()) {
                const unsigned char b =
                    static_cast<unsigned char>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
                out.write(reinterpret_cast<const char*>(&b), 1);
            }
    }, true);
    atomic_write(labels_path, [&](std::ostream& out) {
        auto be32 = [&](std::uint32_t v) {
            unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
            out.write(reinterpret_cast<const char*>(b), 4);
        };
        be32(0x00000801u);
        be32(static_cast<std::uint32_t>(range.size()));
        for (std::size_t i = range.begin; i < range.end; ++i) {
            const unsigned char b = static_cast<unsigned char>(ds.labels[i]);
            out.write(reinterpret_cast<const char*>(&b), 1);
        }
    }, true);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial-example generation and dispersion-based detection toolkit"};
    app.require_subcommand(1);

    CommonOpts train_o, dataset_o, attack_o, features_o, fit_o, eval_o, roc_o, repro_o;

    auto* cmd_train = app.add_subcommand("train", "train the classifier");
    add_common(cmd_train, train_o);
    std::string train_model_out = "model.bin";
    cmd_train->add_option("--model-out", train_model_out, "model file name inside --out");

    auto* cmd_dataset = app.add_subcommand("dataset", "materialize the dataset as IDX files");
    add_common(cmd_dataset, dataset_o);

    auto* cmd_attack = app.add_subcommand("attack", "generate adversarial example sets");
    add_common(cmd_attack, attack_o);
    std::string attack_model;
    bool attack_mixed = false;
    cmd_attack->add_option("--model", attack_model, "trained model file")->required();
    cmd_attack->add_flag("--mixed", attack_mixed, "also generate the mixed-confidence sets");

    auto* cmd_features = app.add_subcommand("features", "attribution + dispersion features");
    add_common(cmd_features, features_o);
    std::string features_model, features_set, features_out;
    cmd_features->add_option("--model", features_model, "trained model file")->required();
    cmd_features->add_option("--set", features_set, "attack set base path (no extension)")->required();
    cmd_features->add_option("--features-out", features_out, "output CSV path")->required();

    auto* cmd_fit = app.add_subcommand("fit", "fit the logistic detector from a features CSV");
    add_common(cmd_fit, fit_o);
    std::string fit_features, fit_out;
    cmd_fit->add_option("--features", fit_features, "training features CSV")->required();
    cmd_fit->add_option("--detector-out", fit_out, "output detector JSON")->required();

    auto* cmd_eval = app.add_subcommand("eval", "score a features CSV with a detector");
    add_common(cmd_eval, eval_o);
    std::string eval_detector, eval_features, eval_out;
    cmd_eval->add_option("--detector", eval_detector, "detector JSON")->required();
    cmd_eval->add_option("--features", eval_features, "evaluation features CSV")->required();
    cmd_eval->add_option("--report-out", eval_out, "output report JSON")->required();

    auto* cmd_roc = app.add_subcommand("roc", "emit the ROC curve for a detector + features CSV");
    add_common(cmd_roc, roc_o);
    std::string roc_detector, roc_features, roc_out;
    cmd_roc->add_option("--detector", roc_detector, "detector JSON")->required();
    cmd_roc->add_option("--features", roc_features, "features CSV")->required();
    cmd_roc->add_option("--roc-out", roc_out, "output CSV path")->required();

    auto* cmd_repro = app.add_subcommand("repro", "run the full desk-scale protocols");
    add_common(cmd_repro, repro_o);
    std::string protocol = "all";
    std::string repro_model_in;
    cmd_repro->add_option("--protocol", protocol, "known|mixed|transfer|all");
    cmd_repro->add_option("--model", repro_model_in, "reuse a trained model file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed()) {
            Config cfg = load_with_overrides(train_o);
            Pipeline p(cfg);
            Model& m = p.model();
            fs::create_directories(cfg.output_dir);
            save_manifest(cfg.output_dir + "/manifest.json", p.dataset().manifest);
            save_model(cfg.output_dir + "/" + train_model_out, m, cfg.train.seed,
                       json{{"dataset_hash", detail::hash_hex(p.dataset().manifest.content_hash)},
                            {"arch", cfg.arch.name}});
            write_train_log(cfg.output_dir + "/train_log.csv", p.train_log());
            const auto& log = p.train_log();
            std::cout << json{{"model_hash", detail::hash_hex(p.model_hash_value())},
                              {"final_train_accuracy", log.empty() ? 0.0 : log.back().accuracy}}
                             .dump()
                      << "\n";
            return 0;
        }

        if (cmd_dataset->parsed()) {
            Config cfg = load_with_overrides(dataset_o);
            Dataset ds = Pipeline::build_dataset(cfg.dataset);
            fs::create_directories(cfg.output_dir);
            save_manifest(cfg.output_dir + "/manifest.json", ds.manifest);
            write_idx_pair(cfg.output_dir + "/train-images-idx3-ubyte",
                           cfg.output_dir + "/train-labels-idx1-ubyte", ds, ds.manifest.train);
            write_idx_pair(cfg.output_dir + "/test-images-idx3-ubyte",
                           cfg.output_dir + "/test-labels-idx1-ubyte", ds, ds.manifest.test);
            std::cout << manifest_to_json(ds.manifest).dump() << "\n";
            return 0;
        }

        if (cmd_attack->parsed()) {
            Config cfg = load_with_overrides(attack_o);
            Pipeline p(cfg);
            LoadedModel lm = load_model(attack_model);
            p.adopt_model(std::move(lm.model));
            fs::create_directories(cfg.output_dir);
            generate_stage_sets(p, attack_mixed, cfg.output_dir);
            return 0;
        }

        if (cmd_features->parsed()) {
            Config cfg = load_with_overrides(features_o);
            Pipeline p(cfg);
            LoadedModel lm = load_model(features_model);
            p.adopt_model(std::move(lm.model));
            LoadedAttackSet las = load_attack_set(features_set);
            detail::check(las.model_hash == p.model_hash_value(),
                          "features: attack set was generated with a different model");
            detail::check(las.dataset_hash == p.dataset().manifest.content_hash,
                          "features: attack set was generated from a different dataset");
            const std::string key = "external/" + features_set;
            p.register_set(key, las.set);
            FeatureTable t =
                feature_table_for_set(p, key, las.set, attack_kind_name(las.set.params.kind));
            t.meta["dataset"] = p.dataset().manifest.name;
            t.meta["dataset_hash"] = detail::hash_hex(p.dataset().manifest.content_hash);
            save_features_csv(features_out, t);
            save_selection(cfg.output_dir + "/selection.json", p.selection(), p.model_hash_value());
            return 0;
        }

        if (cmd_fit->parsed()) {
            Config cfg = load_with_overrides(fit_o);
            FeatureTable t = load_features_csv(fit_features);
            std::vector<std::vector<double>> nat, adv;
            for (std::size_t i = 0; i < t.features.size(); ++i)
                (t.is_adversarial[i] ? adv : nat).push_back(t.features[i]);
            LogisticDetector det =
                fit_logistic(nat, adv, cfg.detector.lambda, cfg.detector.iters, cfg.detector.lr,
                             cfg.detector.seed, t.selection_hash(),
                             stat_kind_from_name(t.meta.count("stat") ? t.meta.at("stat") : "iqr"));
            save_detector(fit_out, det);
            return 0;
        }

        if (cmd_eval->parsed()) {
            Config cfg = load_with_overrides(eval_o);
            ExperimentReport r = eval_from_files(cfg, eval_detector, eval_features);
            save_report(eval_out, r);
            std::cout << report_to_json(r)["rows"].dump() << "\n";
            return 0;
        }

        if (cmd_roc->parsed()) {
            LogisticDetector det = load_detector(roc_detector);
            FeatureTable t = load_features_csv(roc_features);
            detail::check(det.selection_hash == t.selection_hash(),
                          "roc: detector/features selection hash mismatch");
            std::vector<double> nat, adv;
            for (std::size_t i = 0; i < t.features.size(); ++i)
                (t.is_adversarial[i] ? adv : nat).push_back(score_raw(det, t.features[i]));
            save_roc_csv(roc_out, roc_curve(nat, adv));
            return 0;
        }

        if (cmd_repro->parsed()) {
            Config cfg = load_with_overrides(repro_o);
            Pipeline p(cfg);
            fs::create_directories(cfg.output_dir);
            if (!repro_model_in.empty()) {
                LoadedModel lm = load_model(repro_model_in);
                p.adopt_model(std::move(lm.model));
            } else {
                p.model();
                save_model(cfg.output_dir + "/model.bin", p.model(), cfg.train.seed,
                           json{{"dataset_hash",
                                 detail::hash_hex(p.dataset().manifest.content_hash)}});
                write_train_log(cfg.output_dir + "/train_log.csv", p.train_log());
            }
            save_manifest(cfg.output_dir + "/manifest.json", p.dataset().manifest);
            save_selection(cfg.output_dir + "/selection.json", p.selection(), p.model_hash_value());

            if (protocol == "known" || protocol == "all") {
                ExperimentReport r = run_known_attack_experiment(p, cfg.output_dir);
                save_report(cfg.output_dir + "/report_known_attacks.json", r);
                std::cout << json{{"protocol", "known_attacks"},
                                  {"rows", report_to_json(r)["rows"]}}
                                 .dump()
                          << "\n";
            }
            if (protocol == "mixed" || protocol == "all") {
                MixedConfidenceArtifacts art = run_mixed_confidence_experiment(p, cfg.output_dir);
                save_report(cfg.output_dir + "/report_mixed_confidence.json", art.report);
                std::cout << json{{"protocol", "mixed_confidence"},
                                  {"rows", report_to_json(art.report)["rows"]}}
                                 .dump()
                          << "\n";
            }
            if (protocol == "transfer" || protocol == "all") {
                ExperimentReport r = run_transfer_experiment(p, cfg.output_dir);
                save_report(cfg.output_dir + "/report_transfer.json", r);
                std::cout << json{{"protocol", "transfer"}, {"rows", report_to_json(r)["rows"]}}
                                 .dump()
                          << "\n";
            }
            return 0;
        }
    } catch (const std::exception& e) {
        return fail(e.what());
    }
    return fail("no subcommand handled");
}
