#ifndef MLLOO_EXPERIMENT_HPP
#define MLLOO_EXPERIMENT_HPP

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "mlloo/attacks.hpp"
#include "mlloo/attribution.hpp"
#include "mlloo/config.hpp"
#include "mlloo/dataset.hpp"
#include "mlloo/detector.hpp"
#include "mlloo/evaluation.hpp"
#include "mlloo/io.hpp"
#include "mlloo/parallel.hpp"

namespace mlloo {

struct MetricRow {
    std::string attack;    // e.g. "cw_l2", "cw_l2_hc"
    std::string detector;  // "ml_loo" or "iqr_threshold"
    double auc_value = 0.0;
    std::vector<double> tpr;  // aligned with fpr_targets
    std::size_t n_train = 0, n_eval = 0;
    bool partial = false;
};

struct ExperimentReport {
    std::string protocol;
    std::string dataset_name;
    std::string dataset_hash;
    std::string model_hash;
    std::string stat_kind;
    std::vector<double> fpr_targets;
    std::vector<MetricRow> rows;
    json config_echo;
    double wall_clock_seconds = 0.0;
};

inline json report_to_json(const ExperimentReport& r) {
    json j;
    j["format"] = "mlloo-report-v1";
    j["protocol"] = r.protocol;
    j["dataset"] = {{"name", r.dataset_name}, {"hash", r.dataset_hash}};
    j["model_hash"] = r.model_hash;
    j["stat"] = r.stat_kind;
    j["fpr_targets"] = r.fpr_targets;
    json rows = json::array();
    for (const MetricRow& row : r.rows) {
        json jr;
        jr["attack"] = row.attack;
        jr["detector"] = row.detector;
        jr["auc"] = row.auc_value;
        for (std::size_t i = 0; i < r.fpr_targets.size(); ++i) {
            char key[32];
            std::snprintf(key, sizeof(key), "tpr_at_%.2f", r.fpr_targets[i]);
            jr[key] = row.tpr[i];
        }
        jr["n_train"] = row.n_train;
        jr["n_eval"] = row.n_eval;
        jr["partial"] = row.partial;
        rows.push_back(jr);
    }
    j["rows"] = rows;
    j["config"] = r.config_echo;
    j["wall_clock_seconds"] = r.wall_clock_seconds;
    return j;
}

inline void save_report(const std::string& path, const ExperimentReport& r) {
    atomic_write(path, [&](std::ostream& out) { out << report_to_json(r).dump(2) << '\n'; });
}

// Reports are bit-comparable except for the wall clock.
inline bool reports_equivalent(const json& a, const json& b) {
    json ca = a, cb = b;
    ca.erase("wall_clock_seconds");
    cb.erase("wall_clock_seconds");
    return ca.dump() == cb.dump();
}

// Per-attack-set feature bundle: one row per successful pair.
struct SetFeatures {
    std::vector<std::vector<double>> adv, nat;
    std::vector<double> adv_iqr0, nat_iqr0;  // output-layer IQR baseline scores
    std::vector<double> adv_conf, nat_conf;  // -log(1-p) confidence levels
    std::uint64_t selection_hash = 0;
};

// Shared state for the three experiment protocols: dataset, trained model,
// neuron selection, and memoized attack sets / features so protocols reuse
// each other's work.
class Pipeline {
public:
    explicit Pipeline(Config cfg) : cfg_(std::move(cfg)) {}

    const Config& config() const { return cfg_; }

    Dataset& dataset() {
        if (!dataset_ready_) {
            ds_ = build_dataset(cfg_.dataset);
            dataset_ready_ = true;
        }
        return ds_;
    }

    static Dataset build_dataset(const DatasetConfig& dc) {
        if (dc.kind == "synth")
            return make_synthetic_digits(dc.h, dc.w, dc.n_train, dc.n_test, dc.seed);
        if (dc.kind == "idx") {
            Dataset train = ingest_idx(dc.train_images, dc.train_labels);
            Dataset test = ingest_idx(dc.test_images, dc.test_labels);
            Dataset ds;
            ds.images = std::move(train.images);
            ds.labels = std::move(train.labels);
            const std::size_t n_train = ds.images.size();
            for (auto& t : test.images) ds.images.push_back(std::move(t));
            for (int y : test.labels) ds.labels.push_back(y);
            ds.manifest = train.manifest;
            ds.manifest.name = "idx";
            ds.manifest.num_examples = ds.images.size();
            ds.manifest.train = {0, n_train};
            ds.manifest.test = {n_train, ds.images.size()};
            ds.manifest.content_hash = detail::hash_images_labels(ds.images, ds.labels);
            return ds;
        }
        if (dc.kind == "csv") {
            Dataset ds = ingest_csv(dc.path, dc.h, dc.w, dc.c);
            const std::size_t n_train =
                static_cast<std::size_t>(dc.train_fraction * static_cast<double>(ds.images.size()));
            ds.manifest.train = {0, n_train};
            ds.manifest.test = {n_train, ds.images.size()};
            return ds;
        }
        detail::fail("build_dataset: unknown dataset kind '" + dc.kind + "'");
    }

    Model& model() {
        if (!model_ready_) {
            Dataset& d = dataset();
            cfg_.arch.input_h = d.manifest.h;
            cfg_.arch.input_w = d.manifest.w;
            cfg_.arch.input_c = d.manifest.c;
            cfg_.arch.num_classes = d.manifest.num_classes;
            std::vector<Tensor> xs(d.images.begin() + static_cast<std::ptrdiff_t>(d.manifest.train.begin),
                                   d.images.begin() + static_cast<std::ptrdiff_t>(d.manifest.train.end));
            std::vector<int> ys(d.labels.begin() + static_cast<std::ptrdiff_t>(d.manifest.train.begin),
                                d.labels.begin() + static_cast<std::ptrdiff_t>(d.manifest.train.end));
            TrainResult tr = train_classifier(xs, ys, cfg_.arch, cfg_.train);
            model_ = std::move(tr.model);
            train_log_ = std::move(tr.log);
            model_hash_ = mlloo::model_hash(model_);
            model_ready_ = true;
        }
        return model_;
    }

    void adopt_model(Model m) {
        dataset();
        model_ = std::move(m);
        model_hash_ = mlloo::model_hash(model_);
        model_ready_ = true;
    }

    const std::vector<EpochStats>& train_log() const { return train_log_; }
    std::uint64_t model_hash_value() { model(); return model_hash_; }

    const LayerSelection& selection() {
        if (!selection_ready_) {
            Dataset& d = dataset();
            const std::size_t n =
                std::min<std::size_t>(cfg_.selection.calibration_n, d.manifest.train.size());
            detail::check(n > 0, "selection: empty calibration set");
            std::vector<Tensor> calib(d.images.begin() + static_cast<std::ptrdiff_t>(d.manifest.train.begin),
                                      d.images.begin() + static_cast<std::ptrdiff_t>(d.manifest.train.begin + n));
            selection_ = select_layers(model(), calib, cfg_.selection.per_layer_cap,
                                       cfg_.selection.seed);
            selection_ready_ = true;
        }
        return selection_;
    }

    // Test-split images in split-local index space.
    const std::vector<Tensor>& test_images() {
        slice_test();
        return test_images_;
    }
    const std::vector<int>& test_labels() {
        slice_test();
        return test_labels_;
    }

    // Memoized attack-set generation. `role` is "train" or "eval"; train sets
    // scan the test split from 0, eval sets from eval_start_offset so natural
    // eval images never overlap the fitting images.
    const AttackSet& attack_set(const std::string& key, AttackParams params,
                                const std::string& role) {
        auto it = sets_.find(key);
        if (it != sets_.end()) return it->second;
        slice_test();
        const std::size_t n =
            role == "train" ? cfg_.protocol.train_pairs : cfg_.protocol.eval_pairs;
        const std::size_t start = role == "train" ? 0 : cfg_.protocol.eval_start_offset;
        params.seed = derive_seed(cfg_.master_seed, fnv1a64(key));
        AttackSet set = generate_attack_set(model(), test_images_, test_labels_, params, n, start,
                                            cfg_.effective_workers());
        if (role == "train")
            detail::check(set.end_index <= cfg_.protocol.eval_start_offset,
                          "attack_set: training scan ran into the evaluation region; "
                          "increase eval_start_offset or the test split");
        return sets_.emplace(key, std::move(set)).first->second;
    }

    const SetFeatures& set_features(const std::string& key) {
        auto fit = features_.find(key);
        if (fit != features_.end()) return fit->second;
        auto sit = sets_.find(key);
        detail::check(sit != sets_.end(), "set_features: unknown attack set " + key);
        return features_.emplace(key, compute_features(sit->second)).first->second;
    }

    // Adopt an externally loaded attack set (CLI stages).
    void register_set(const std::string& key, const AttackSet& set) { sets_.emplace(key, set); }

    const AttackSet& existing_set(const std::string& key) const {
        auto it = sets_.find(key);
        detail::check(it != sets_.end(), "existing_set: unknown attack set " + key);
        return it->second;
    }

    SetFeatures compute_features(const AttackSet& set) {
        const LayerSelection& sel = selection();
        std::vector<const PairedExample*> ok;
        for (const PairedExample& ex : set.examples)
            if (ex.success) ok.push_back(&ex);

        SetFeatures sf;
        sf.selection_hash = sel.hash();
        const std::size_t n = ok.size();
        sf.adv.resize(n);
        sf.nat.resize(n);
        sf.adv_iqr0.resize(n);
        sf.nat_iqr0.resize(n);
        sf.adv_conf.resize(n);
        sf.nat_conf.resize(n);

        const Model& m = model();
        const MaskSpec mask = cfg_.mask;
        const StatKind stat = cfg_.stat;
        parallel_for(n, cfg_.effective_workers(), [&](std::size_t i) {
            const PairedExample& ex = *ok[i];
            AttributionRecord adv_rec = ml_loo_attribution(m, ex.adversarial, sel, mask, ex.id);
            AttributionRecord nat_rec = ml_loo_attribution(m, ex.original, sel, mask, ex.id);
            DispersionFeatures af = feature_vector(adv_rec, stat);
            DispersionFeatures nf = feature_vector(nat_rec, stat);
            sf.adv[i] = std::move(af.values);
            sf.nat[i] = std::move(nf.values);
            std::vector<double> row(adv_rec.num_features);
            for (std::size_t k = 0; k < row.size(); ++k) row[k] = adv_rec.per_neuron.at(0, k);
            sf.adv_iqr0[i] = iqr(row);
            for (std::size_t k = 0; k < row.size(); ++k) row[k] = nat_rec.per_neuron.at(0, k);
            sf.nat_iqr0[i] = iqr(row);
            sf.adv_conf[i] = ex.confidence_level;
            sf.nat_conf[i] = confidence_level(m, ex.original);
        });
        return sf;
    }

    LogisticDetector fit_detector(const SetFeatures& train) {
        return fit_logistic(train.nat, train.adv, cfg_.detector.lambda, cfg_.detector.iters,
                            cfg_.detector.lr, cfg_.detector.seed, train.selection_hash, cfg_.stat);
    }

    // Scores for an eval bundle under a fitted detector.
    static std::pair<std::vector<double>, std::vector<double>> detector_scores(
        const LogisticDetector& det, const SetFeatures& eval) {
        std::vector<double> nat(eval.nat.size()), adv(eval.adv.size());
        for (std::size_t i = 0; i < eval.nat.size(); ++i) nat[i] = score_raw(det, eval.nat[i]);
        for (std::size_t i = 0; i < eval.adv.size(); ++i) adv[i] = score_raw(det, eval.adv[i]);
        return {std::move(nat), std::move(adv)};
    }

    MetricRow metric_row(const std::string& attack, const std::string& detector,
                         const std::vector<double>& nat_scores,
                         const std::vector<double>& adv_scores, std::size_t n_train, bool partial) {
        MetricRow row;
        row.attack = attack;
        row.detector = detector;
        row.auc_value = auc(nat_scores, adv_scores);
        for (double target : cfg_.protocol.fpr_targets)
            row.tpr.push_back(tpr_at_fpr(nat_scores, adv_scores, target));
        row.n_train = n_train;
        row.n_eval = adv_scores.size();
        row.partial = partial;
        return row;
    }

    ExperimentReport make_report(const std::string& protocol) {
        ExperimentReport r;
        r.protocol = protocol;
        r.dataset_name = dataset().manifest.name;
        r.dataset_hash = detail::hash_hex(dataset().manifest.content_hash);
        r.model_hash = detail::hash_hex(model_hash_value());
        r.stat_kind = stat_kind_name(cfg_.stat);
        r.fpr_targets = cfg_.protocol.fpr_targets;
        r.config_echo = config_to_json(cfg_);
        return r;
    }

private:
    void slice_test() {
        if (test_sliced_) return;
        Dataset& d = dataset();
        test_images_.assign(d.images.begin() + static_cast<std::ptrdiff_t>(d.manifest.test.begin),
                            d.images.begin() + static_cast<std::ptrdiff_t>(d.manifest.test.end));
        test_labels_.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(d.manifest.test.begin),
                            d.labels.begin() + static_cast<std::ptrdiff_t>(d.manifest.test.end));
        test_sliced_ = true;
    }

    Config cfg_;
    Dataset ds_;
    bool dataset_ready_ = false;
    Model model_;
    std::vector<EpochStats> train_log_;
    std::uint64_t model_hash_ = 0;
    bool model_ready_ = false;
    LayerSelection selection_;
    bool selection_ready_ = false;
    std::vector<Tensor> test_images_;
    std::vector<int> test_labels_;
    bool test_sliced_ = false;
    std::map<std::string, AttackSet> sets_;
    std::map<std::string, SetFeatures> features_;
};

// ---------------------------------------------------------------------------
// Protocol runners.

// Known-attacks protocol: per attack, fit on train pairs, report ML-LOO and
// the single-statistic IQR-threshold baseline on disjoint eval pairs.
inline ExperimentReport run_known_attack_experiment(Pipeline& p,
                                                    const std::string& out_dir = "") {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport r = p.make_report("known_attacks");
    for (const AttackParams& base : p.config().attacks) {
        const std::string name = attack_kind_name(base.kind);
        const AttackSet& train_set = p.attack_set(name + "/train", base, "train");
        const AttackSet& eval_set = p.attack_set(name + "/eval", base, "eval");
        const SetFeatures& train_f = p.set_features(name + "/train");
        const SetFeatures& eval_f = p.set_features(name + "/eval");
        const bool partial = train_set.partial_warning || eval_set.partial_warning;

        LogisticDetector det = p.fit_detector(train_f);
        auto [nat_scores, adv_scores] = Pipeline::detector_scores(det, eval_f);
        r.rows.push_back(p.metric_row(name, "ml_loo", nat_scores, adv_scores,
                                      train_f.adv.size(), partial));
        r.rows.push_back(p.metric_row(name, "iqr_threshold", eval_f.nat_iqr0, eval_f.adv_iqr0,
                                      train_f.adv.size(), partial));
        if (!out_dir.empty()) {
            save_roc_csv(out_dir + "/roc_" + name + "_ml_loo.csv", roc_curve(nat_scores, adv_scores));
            save_roc_csv(out_dir + "/roc_" + name + "_iqr_threshold.csv",
                         roc_curve(eval_f.nat_iqr0, eval_f.adv_iqr0));
        }
    }
    r.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

struct MixedConfidenceArtifacts {
    ExperimentReport report;
    Histogram natural, lc, hc, mix;
    double median_natural = 0.0, median_mix = 0.0;
    double bin_width = 0.0;
};

inline double median_of(std::vector<double> v) {
    detail::check(!v.empty(), "median_of: empty");
    return quantile(std::move(v), 0.5);
}

// Mixed-confidence protocol: fit on the MIX set, evaluate on LC, HC and MIX
// eval sets, and emit Figure-4-style confidence histograms.
inline MixedConfidenceArtifacts run_mixed_confidence_experiment(Pipeline& p,
                                                                const std::string& out_dir = "") {
    const auto t0 = std::chrono::steady_clock::now();
    const ProtocolConfig& pc = p.config().protocol;
    const bool cw = pc.mixed_family == "cw";

    AttackParams base;
    if (cw) {
        base.kind = AttackKind::CWL2;
        for (const AttackParams& a : p.config().attacks)
            if (a.kind == AttackKind::CWL2) base = a;
        base.mix = MixMode::ConfidenceGrid;
    } else {
        base.kind = AttackKind::LinfPGD;
        for (const AttackParams& a : p.config().attacks)
            if (a.kind == AttackKind::LinfPGD) base = a;
        base.mix = MixMode::EpsilonGrid;
    }
    const std::string family = attack_kind_name(base.kind);

    AttackParams lc = base, hc = base;
    lc.mix = MixMode::None;
    hc.mix = MixMode::None;
    if (cw) {
        lc.confidence = pc.mixed_lc_value;
        hc.confidence = pc.mixed_hc_value;
    } else {
        lc.epsilon = pc.mixed_lc_value;
        hc.epsilon = pc.mixed_hc_value;
    }

    MixedConfidenceArtifacts art;
    art.report = p.make_report("mixed_confidence");

    p.attack_set(family + "_mix/train", base, "train");
    const SetFeatures& mix_train = p.set_features(family + "_mix/train");
    LogisticDetector det = p.fit_detector(mix_train);

    struct Leg {
        std::string key, label;
        AttackParams params;
    };
    const std::vector<Leg> legs = {{family + "_mix/eval", family + "_mix", base},
                                   {family + "_lc/eval", family + "_lc", lc},
                                   {family + "_hc/eval", family + "_hc", hc}};
    for (const Leg& leg : legs) {
        const AttackSet& set = p.attack_set(leg.key, leg.params, "eval");
        const SetFeatures& f = p.set_features(leg.key);
        auto [nat_scores, adv_scores] = Pipeline::detector_scores(det, f);
        art.report.rows.push_back(p.metric_row(leg.label, "ml_loo", nat_scores, adv_scores,
                                               mix_train.adv.size(), set.partial_warning));
        art.report.rows.push_back(p.metric_row(leg.label, "iqr_threshold", f.nat_iqr0, f.adv_iqr0,
                                               mix_train.adv.size(), set.partial_warning));
        if (!out_dir.empty())
            save_roc_csv(out_dir + "/roc_" + leg.label + "_ml_loo.csv",
                         roc_curve(nat_scores, adv_scores));
    }

    // Figure-4 data: confidence-level histograms over a common range.
    const SetFeatures& mix_eval = p.set_features(family + "_mix/eval");
    const SetFeatures& lc_eval = p.set_features(family + "_lc/eval");
    const SetFeatures& hc_eval = p.set_features(family + "_hc/eval");
    double hi = 1e-9;
    for (const auto* v : {&mix_eval.nat_conf, &mix_eval.adv_conf, &lc_eval.adv_conf,
                          &hc_eval.adv_conf})
        for (double x : *v) hi = std::max(hi, x);
    art.natural = make_histogram(mix_eval.nat_conf, 0.0, hi, pc.histogram_bins);
    art.mix = make_histogram(mix_eval.adv_conf, 0.0, hi, pc.histogram_bins);
    art.lc = make_histogram(lc_eval.adv_conf, 0.0, hi, pc.histogram_bins);
    art.hc = make_histogram(hc_eval.adv_conf, 0.0, hi, pc.histogram_bins);
    art.median_natural = median_of(mix_eval.nat_conf);
    art.median_mix = median_of(mix_eval.adv_conf);
    art.bin_width = art.natural.bin_width;
    if (!out_dir.empty()) {
        save_histogram_csv(out_dir + "/conf_hist_natural.csv", art.natural);
        save_histogram_csv(out_dir + "/conf_hist_" + family + "_mix.csv", art.mix);
        save_histogram_csv(out_dir + "/conf_hist_" + family + "_lc.csv", art.lc);
        save_histogram_csv(out_dir + "/conf_hist_" + family + "_hc.csv", art.hc);
    }

    art.report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return art;
}

// Transferability protocol: fit on the plain C&W training pairs only,
// evaluate on every other attack's eval set.
inline ExperimentReport run_transfer_experiment(Pipeline& p, const std::string& out_dir = "") {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport r = p.make_report("transfer");

    AttackParams cw_params;
    cw_params.kind = AttackKind::CWL2;
    bool found = false;
    for (const AttackParams& a : p.config().attacks)
        if (a.kind == AttackKind::CWL2) {
            cw_params = a;
            found = true;
        }
    detail::check(found, "transfer: config must include a cw_l2 attack");

    p.attack_set("cw_l2/train", cw_params, "train");
    const SetFeatures& train_f = p.set_features("cw_l2/train");
    LogisticDetector det = p.fit_detector(train_f);

    for (const AttackParams& base : p.config().attacks) {
        if (base.kind == AttackKind::CWL2) continue;
        const std::string name = attack_kind_name(base.kind);
        const AttackSet& eval_set = p.attack_set(name + "/eval", base, "eval");
        const SetFeatures& eval_f = p.set_features(name + "/eval");
        auto [nat_scores, adv_scores] = Pipeline::detector_scores(det, eval_f);
        r.rows.push_back(p.metric_row(name, "ml_loo", nat_scores, adv_scores, train_f.adv.size(),
                                      eval_set.partial_warning));
        if (!out_dir.empty())
            save_roc_csv(out_dir + "/roc_transfer_" + name + "_ml_loo.csv",
                         roc_curve(nat_scores, adv_scores));
    }
    r.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// Feature table (the CSV interchange row set) for a generated attack set.
inline FeatureTable feature_table_for_set(Pipeline& p, const std::string& key,
                                          const AttackSet& set, const std::string& attack_name) {
    const SetFeatures& f = p.set_features(key);
    std::vector<const PairedExample*> ok;
    for (const PairedExample& ex : set.examples)
        if (ex.success) ok.push_back(&ex);
    detail::check(ok.size() == f.adv.size(), "feature_table: set/features mismatch");

    FeatureTable t;
    t.meta["model_hash"] = detail::hash_hex(p.model_hash_value());
    t.meta["selection_hash"] = detail::hash_hex(f.selection_hash);
    t.meta["stat"] = stat_kind_name(p.config().stat);
    t.meta["attack"] = attack_name;
    for (std::size_t i = 0; i < f.adv.size(); ++i) {
        t.ids.push_back(ok[i]->id + "/adv");
        t.labels.push_back(ok[i]->original_label);
        t.is_adversarial.push_back(1);
        t.attack.push_back(attack_name);
        t.features.push_back(f.adv[i]);
    }
    for (std::size_t i = 0; i < f.nat.size(); ++i) {
        t.ids.push_back(ok[i]->id + "/nat");
        t.labels.push_back(ok[i]->original_label);
        t.is_adversarial.push_back(0);
        t.attack.push_back(attack_name);
        t.features.push_back(f.nat[i]);
    }
    return t;
}

} // namespace mlloo

#endif // MLLOO_EXPERIMENT_HPP
