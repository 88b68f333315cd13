#ifndef MLLOO_CONFIG_HPP
#define MLLOO_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlloo/attacks.hpp"
#include "mlloo/attribution.hpp"
#include "mlloo/dispersion.hpp"
#include "mlloo/io.hpp"
#include "mlloo/net.hpp"

namespace mlloo {

struct DatasetConfig {
    std::string kind = "synth";  // synth | idx | csv
    // synth
    std::size_t h = 12, w = 12;
    std::size_t n_train = 3000, n_test = 1500;
    std::uint64_t seed = 11;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
    // csv
    std::string path;
    std::size_t c = 1;
    double train_fraction = 0.8;
};

struct SelectionConfig {
    std::size_t per_layer_cap = 64;
    std::size_t calibration_n = 100;
    std::uint64_t seed = 5;
};

struct DetectorConfig {
    double lambda = 1e-4;
    std::size_t iters = 5000;
    double lr = 0.1;
    std::uint64_t seed = 3;
};

struct ProtocolConfig {
    std::size_t train_pairs = 200;
    std::size_t eval_pairs = 200;
    std::size_t eval_start_offset = 600;  // relative to the test split
    std::vector<double> fpr_targets = {0.01, 0.05, 0.10};
    std::size_t histogram_bins = 20;
    std::string mixed_family = "cw";  // cw | pgd
    double mixed_lc_value = 0.0;      // c for cw, epsilon for pgd
    double mixed_hc_value = 50.0;
};

struct Config {
    DatasetConfig dataset;
    ArchConfig arch;
    TrainHyperparams train;
    SelectionConfig selection;
    MaskSpec mask;
    StatKind stat = StatKind::IQR;
    DetectorConfig detector;
    ProtocolConfig protocol;
    std::vector<AttackParams> attacks;
    std::string output_dir = "out";
    std::size_t workers = 0;  // 0 = MLLOO_WORKERS env or hardware default
    std::uint64_t master_seed = 7;

    std::size_t effective_workers() const { return workers ? workers : default_workers(); }
};

inline json config_to_json(const Config& c) {
    json j;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"h", c.dataset.h},
                    {"w", c.dataset.w},
                    {"n_train", c.dataset.n_train},
                    {"n_test", c.dataset.n_test},
                    {"seed", c.dataset.seed},
                    {"train_images", c.dataset.train_images},
                    {"train_labels", c.dataset.train_labels},
                    {"test_images", c.dataset.test_images},
                    {"test_labels", c.dataset.test_labels},
                    {"path", c.dataset.path},
                    {"c", c.dataset.c},
                    {"train_fraction", c.dataset.train_fraction}};
    j["model"] = {{"arch", c.arch.name},
                  {"conv_blocks", c.arch.conv_blocks},
                  {"conv_filters", c.arch.conv_filters},
                  {"conv_kernel", c.arch.conv_kernel},
                  {"dense_units", c.arch.dense_units},
                  {"hidden_units", c.arch.hidden_units},
                  {"train", {{"lr", c.train.lr},
                             {"batch", c.train.batch},
                             {"epochs", c.train.epochs},
                             {"seed", c.train.seed}}}};
    j["selection"] = {{"per_layer_cap", c.selection.per_layer_cap},
                      {"calibration_n", c.selection.calibration_n},
                      {"seed", c.selection.seed}};
    j["mask"] = {{"reference", c.mask.reference_value},
                 {"granularity", c.mask.granularity == MaskGranularity::PerPixelAllChannels
                                     ? "per_pixel"
                                     : "per_scalar"}};
    j["stat"] = stat_kind_name(c.stat);
    j["detector"] = {{"lambda", c.detector.lambda},
                     {"iters", c.detector.iters},
                     {"lr", c.detector.lr},
                     {"seed", c.detector.seed}};
    j["protocol"] = {{"train_pairs", c.protocol.train_pairs},
                     {"eval_pairs", c.protocol.eval_pairs},
                     {"eval_start_offset", c.protocol.eval_start_offset},
                     {"fpr_targets", c.protocol.fpr_targets},
                     {"histogram_bins", c.protocol.histogram_bins},
                     {"mixed_family", c.protocol.mixed_family},
                     {"mixed_lc_value", c.protocol.mixed_lc_value},
                     {"mixed_hc_value", c.protocol.mixed_hc_value}};
    json attacks = json::array();
    for (const AttackParams& a : c.attacks) attacks.push_back(attack_params_to_json(a));
    j["attacks"] = attacks;
    j["output_dir"] = c.output_dir;
    j["workers"] = c.workers;
    j["master_seed"] = c.master_seed;
    return j;
}

inline Config config_from_json(const json& j) {
    Config c;
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        c.dataset.kind = d.value("kind", c.dataset.kind);
        c.dataset.h = d.value("h", c.dataset.h);
        c.dataset.w = d.value("w", c.dataset.w);
        c.dataset.n_train = d.value("n_train", c.dataset.n_train);
        c.dataset.n_test = d.value("n_test", c.dataset.n_test);
        c.dataset.seed = d.value("seed", c.dataset.seed);
        c.dataset.train_images = d.value("train_images", std::string{});
        c.dataset.train_labels = d.value("train_labels", std::string{});
        c.dataset.test_images = d.value("test_images", std::string{});
        c.dataset.test_labels = d.value("test_labels", std::string{});
        c.dataset.path = d.value("path", std::string{});
        c.dataset.c = d.value("c", c.dataset.c);
        c.dataset.train_fraction = d.value("train_fraction", c.dataset.train_fraction);
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        c.arch.name = m.value("arch", c.arch.name);
        c.arch.conv_blocks = m.value("conv_blocks", c.arch.conv_blocks);
        c.arch.conv_filters = m.value("conv_filters", c.arch.conv_filters);
        c.arch.conv_kernel = m.value("conv_kernel", c.arch.conv_kernel);
        c.arch.dense_units = m.value("dense_units", c.arch.dense_units);
        c.arch.hidden_units = m.value("hidden_units", c.arch.hidden_units);
        if (m.contains("train")) {
            const json& t = m["train"];
            c.train.lr = t.value("lr", c.train.lr);
            c.train.batch = t.value("batch", c.train.batch);
            c.train.epochs = t.value("epochs", c.train.epochs);
            c.train.seed = t.value("seed", c.train.seed);
        }
    }
    if (j.contains("selection")) {
        const json& s = j["selection"];
        c.selection.per_layer_cap = s.value("per_layer_cap", c.selection.per_layer_cap);
        c.selection.calibration_n = s.value("calibration_n", c.selection.calibration_n);
        c.selection.seed = s.value("seed", c.selection.seed);
    }
    if (j.contains("mask")) {
        const json& m = j["mask"];
        c.mask.reference_value = m.value("reference", 0.0);
        c.mask.granularity = m.value("granularity", "per_pixel") == std::string("per_scalar")
                                 ? MaskGranularity::PerScalar
                                 : MaskGranularity::PerPixelAllChannels;
    }
    c.stat = stat_kind_from_name(j.value("stat", "iqr"));
    if (j.contains("detector")) {
        const json& d = j["detector"];
        c.detector.lambda = d.value("lambda", c.detector.lambda);
        c.detector.iters = d.value("iters", c.detector.iters);
        c.detector.lr = d.value("lr", c.detector.lr);
        c.detector.seed = d.value("seed", c.detector.seed);
    }
    if (j.contains("protocol")) {
        const json& p = j["protocol"];
        c.protocol.train_pairs = p.value("train_pairs", c.protocol.train_pairs);
        c.protocol.eval_pairs = p.value("eval_pairs", c.protocol.eval_pairs);
        c.protocol.eval_start_offset = p.value("eval_start_offset", c.protocol.eval_start_offset);
        if (p.contains("fpr_targets"))
            c.protocol.fpr_targets = p["fpr_targets"].get<std::vector<double>>();
        c.protocol.histogram_bins = p.value("histogram_bins", c.protocol.histogram_bins);
        c.protocol.mixed_family = p.value("mixed_family", c.protocol.mixed_family);
        c.protocol.mixed_lc_value = p.value("mixed_lc_value", c.protocol.mixed_lc_value);
        c.protocol.mixed_hc_value = p.value("mixed_hc_value", c.protocol.mixed_hc_value);
    }
    if (j.contains("attacks"))
        for (const json& a : j["attacks"]) c.attacks.push_back(attack_params_from_json(a));
    c.output_dir = j.value("output_dir", c.output_dir);
    c.workers = j.value("workers", c.workers);
    c.master_seed = j.value("master_seed", c.master_seed);
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    detail::check(static_cast<bool>(in), "load_config: cannot open " + path);
    json j = json::parse(in);
    Config c = config_from_json(j);
    // fill arch input shape from the dataset block
    if (c.dataset.kind == "synth") {
        c.arch.input_h = c.dataset.h;
        c.arch.input_w = c.dataset.w;
        c.arch.input_c = 1;
        c.arch.num_classes = 10;
    }
    return c;
}

inline std::uint64_t config_hash(const Config& c) { return fnv1a64(config_to_json(c).dump()); }

} // namespace mlloo

#endif // MLLOO_CONFIG_HPP
