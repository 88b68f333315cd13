#ifndef MLLOO_IO_HPP
#define MLLOO_IO_HPP

// On-disk formats, all little-endian:
//
//   Tensor blob     u32 rank, u32 extent per dimension, then IEEE-754 f64
//                   values in row-major order.
//   Model file      u32 header length, JSON header (architecture descriptor,
//                   seed, metadata), then the tensor blobs of every
//                   parameterized layer in layer order (conv: kernels, bias;
//                   dense: weights, bias).
//   Attack set      <base>.json manifest plus <base>.blobs holding the
//                   original/adversarial tensors back to back; the manifest
//                   records byte offsets.
//   Features CSV    '#'-prefixed metadata lines, a header row, then
//                   id,label,is_adversarial,attack,feat_0..feat_{m-1}.
//
// Every artifact carries the hash of its upstream inputs so stages can refuse
// mismatched files. Writers go through a temp-file rename so failed runs do
// not leave partial outputs.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlloo/attacks.hpp"
#include "mlloo/attribution.hpp"
#include "mlloo/dataset.hpp"
#include "mlloo/detector.hpp"
#include "mlloo/evaluation.hpp"
#include "mlloo/net.hpp"
#include "mlloo/tensor.hpp"

namespace mlloo {

using json = nlohmann::json;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    check(static_cast<bool>(in), std::string("read: truncated ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in, const char* what) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    check(static_cast<bool>(in), std::string("read: truncated ") + what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace detail

inline void write_tensor_blob(std::ostream& out, const Tensor& t) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.values()) detail::put_f64(out, v);
}

inline Tensor read_tensor_blob(std::istream& in) {
    const std::uint32_t rank = detail::get_u32(in, "tensor rank");
    detail::check(rank >= 1 && rank <= 8, "read_tensor_blob: implausible rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = detail::get_u32(in, "tensor extent");
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f64(in, "tensor data");
    detail::check(t.all_finite(), "read_tensor_blob: non-finite values");
    return t;
}

inline std::string tensor_blob_string(const Tensor& t) {
    std::ostringstream ss(std::ios::binary);
    write_tensor_blob(ss, t);
    return ss.str();
}

// Replace the target only after the full write succeeded; a failed write
// leaves neither the target nor the temp file behind.
template <typename WriteFn>
void atomic_write(const std::string& path, WriteFn&& fn, bool binary = false) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    try {
        std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
        detail::check(static_cast<bool>(out), "atomic_write: cannot open " + tmp.string());
        fn(out);
        out.flush();
        detail::check(static_cast<bool>(out), "atomic_write: write failed for " + path);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
    fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// Model files.

inline json architecture_descriptor(const Model& model) {
    json layers = json::array();
    for (const Layer& l : model.layers()) {
        json jl;
        jl["kind"] = layer_kind_name(l.kind);
        if (l.kind == LayerKind::Conv) {
            jl["kh"] = l.kernels.extent(0);
            jl["kw"] = l.kernels.extent(1);
            jl["cin"] = l.kernels.extent(2);
            jl["cout"] = l.kernels.extent(3);
            jl["stride"] = l.stride;
            jl["padding"] = l.padding == Padding::Same ? "same" : "valid";
        } else if (l.kind == LayerKind::Dense) {
            jl["out"] = l.weights.extent(0);
            jl["in"] = l.weights.extent(1);
        }
        layers.push_back(jl);
    }
    json j;
    j["layers"] = layers;
    j["input_shape"] = model.input_shape();
    j["num_classes"] = model.num_classes();
    return j;
}

// Hash of the architecture descriptor plus every parameter blob.
inline std::uint64_t model_hash(const Model& model) {
    std::uint64_t h = fnv1a64(architecture_descriptor(model).dump());
    for (const Layer& l : model.layers()) {
        if (l.kind == LayerKind::Conv) {
            h = fnv1a64(l.kernels.data(), l.kernels.size() * sizeof(double), h);
            h = fnv1a64(l.bias.data(), l.bias.size() * sizeof(double), h);
        } else if (l.kind == LayerKind::Dense) {
            h = fnv1a64(l.weights.data(), l.weights.size() * sizeof(double), h);
            h = fnv1a64(l.bias.data(), l.bias.size() * sizeof(double), h);
        }
    }
    return h;
}

inline void save_model(const std::string& path, const Model& model, std::uint64_t seed,
                       const json& metadata = json::object()) {
    json header;
    header["format"] = "mlloo-model-v1";
    header["architecture"] = architecture_descriptor(model);
    header["seed"] = seed;
    header["metadata"] = metadata;
    header["model_hash"] = detail::hash_hex(model_hash(model));
    const std::string hs = header.dump();
    atomic_write(path, [&](std::ostream& out) {
        detail::put_u32(out, static_cast<std::uint32_t>(hs.size()));
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const Layer& l : model.layers()) {
            if (l.kind == LayerKind::Conv) {
                write_tensor_blob(out, l.kernels);
                write_tensor_blob(out, l.bias);
            } else if (l.kind == LayerKind::Dense) {
                write_tensor_blob(out, l.weights);
                write_tensor_blob(out, l.bias);
            }
        }
    }, true);
}

struct LoadedModel {
    Model model;
    std::uint64_t seed = 0;
    json metadata;
};

inline LoadedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    detail::check(static_cast<bool>(in), "load_model: cannot open " + path);
    const std::uint32_t hlen = detail::get_u32(in, "model header length");
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    detail::check(static_cast<bool>(in), "load_model: truncated header");
    json header = json::parse(hs);
    detail::check(header.value("format", "") == "mlloo-model-v1", "load_model: unknown format");

    const json& arch = header["architecture"];
    std::vector<Layer> layers;
    for (const json& jl : arch["layers"]) {
        const std::string kind = jl["kind"].get<std::string>();
        if (kind == "conv") {
            Tensor k = read_tensor_blob(in);
            Tensor b = read_tensor_blob(in);
            const Padding p = jl["padding"].get<std::string>() == "same" ? Padding::Same : Padding::Valid;
            layers.push_back(Layer::conv(std::move(k), std::move(b), jl["stride"].get<std::size_t>(), p));
        } else if (kind == "dense") {
            Tensor w = read_tensor_blob(in);
            Tensor b = read_tensor_blob(in);
            layers.push_back(Layer::dense(std::move(w), std::move(b)));
        } else if (kind == "maxpool2x2") {
            layers.push_back(Layer::maxpool());
        } else if (kind == "relu") {
            layers.push_back(Layer::relu());
        } else if (kind == "flatten") {
            layers.push_back(Layer::flatten());
        } else if (kind == "softmax") {
            layers.push_back(Layer::softmax());
        } else {
            detail::fail("load_model: unknown layer kind '" + kind + "'");
        }
    }
    LoadedModel lm{Model(arch["input_shape"].get<std::vector<std::size_t>>(), std::move(layers)),
                   header.value("seed", std::uint64_t{0}), header.value("metadata", json::object())};
    const std::string stored = header.value("model_hash", "");
    detail::check(stored == detail::hash_hex(model_hash(lm.model)),
                  "load_model: stored hash does not match file contents");
    return lm;
}

// ---------------------------------------------------------------------------
// Dataset manifests.

inline json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["name"] = m.name;
    j["num_examples"] = m.num_examples;
    j["input_shape"] = {m.h, m.w, m.c};
    j["num_classes"] = m.num_classes;
    j["source_format"] = m.source_format;
    j["normalization"] = m.normalization;
    j["train_range"] = {m.train.begin, m.train.end};
    j["test_range"] = {m.test.begin, m.test.end};
    j["content_hash"] = detail::hash_hex(m.content_hash);
    return j;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
    atomic_write(path, [&](std::ostream& out) { out << manifest_to_json(m).dump(2) << '\n'; });
}

// ---------------------------------------------------------------------------
// Attack sets.

inline json attack_params_to_json(const AttackParams& p) {
    json j;
    j["kind"] = attack_kind_name(p.kind);
    j["epsilon"] = p.epsilon;
    j["step_size"] = p.step_size;
    j["steps"] = p.steps;
    j["confidence"] = p.confidence;
    j["tradeoff"] = p.tradeoff;
    j["tradeoff_lo"] = p.tradeoff_lo;
    j["tradeoff_hi"] = p.tradeoff_hi;
    j["search_steps"] = p.search_steps;
    j["max_iters"] = p.max_iters;
    j["learning_rate"] = p.learning_rate;
    j["overshoot"] = p.overshoot;
    j["max_steps"] = p.max_steps;
    j["theta"] = p.theta;
    j["gamma"] = p.gamma;
    j["seed"] = p.seed;
    j["targeted"] = p.targeted;
    j["mix"] = p.mix == MixMode::None ? "none"
               : p.mix == MixMode::ConfidenceGrid ? "confidence_grid" : "epsilon_grid";
    j["confidence_grid"] = p.confidence_grid;
    j["epsilon_grid"] = p.epsilon_grid;
    j["boundary_iterations"] = p.boundary_iterations;
    return j;
}

inline AttackParams attack_params_from_json(const json& j) {
    AttackParams p;
    p.kind = attack_kind_from_name(j["kind"].get<std::string>());
    p.epsilon = j.value("epsilon", p.epsilon);
    p.step_size = j.value("step_size", p.step_size);
    p.steps = j.value("steps", p.steps);
    p.confidence = j.value("confidence", p.confidence);
    p.tradeoff = j.value("tradeoff", p.tradeoff);
    p.tradeoff_lo = j.value("tradeoff_lo", p.tradeoff_lo);
    p.tradeoff_hi = j.value("tradeoff_hi", p.tradeoff_hi);
    p.search_steps = j.value("search_steps", p.search_steps);
    p.max_iters = j.value("max_iters", p.max_iters);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.overshoot = j.value("overshoot", p.overshoot);
    p.max_steps = j.value("max_steps", p.max_steps);
    p.theta = j.value("theta", p.theta);
    p.gamma = j.value("gamma", p.gamma);
    p.seed = j.value("seed", p.seed);
    p.targeted = j.value("targeted", p.targeted);
    const std::string mix = j.value("mix", "none");
    p.mix = mix == "confidence_grid" ? MixMode::ConfidenceGrid
            : mix == "epsilon_grid" ? MixMode::EpsilonGrid : MixMode::None;
    if (j.contains("confidence_grid")) p.confidence_grid = j["confidence_grid"].get<std::vector<double>>();
    if (j.contains("epsilon_grid")) p.epsilon_grid = j["epsilon_grid"].get<std::vector<double>>();
    p.boundary_iterations = j.value("boundary_iterations", p.boundary_iterations);
    return p;
}

inline void save_attack_set(const std::string& base_path, const AttackSet& set,
                            std::uint64_t model_hash_value, std::uint64_t dataset_hash) {
    // blobs first, collecting offsets
    std::vector<std::pair<std::uint64_t, std::uint64_t>> offsets;  // (original, adversarial)
    atomic_write(base_path + ".blobs", [&](std::ostream& out) {
        std::uint64_t pos = 0;
        for (const PairedExample& ex : set.examples) {
            const std::string ob = tensor_blob_string(ex.original);
            const std::string ab = tensor_blob_string(ex.adversarial);
            offsets.emplace_back(pos, pos + ob.size());
            out.write(ob.data(), static_cast<std::streamsize>(ob.size()));
            out.write(ab.data(), static_cast<std::streamsize>(ab.size()));
            pos += ob.size() + ab.size();
        }
    }, true);

    json j;
    j["format"] = "mlloo-attackset-v1";
    j["params"] = attack_params_to_json(set.params);
    j["model_hash"] = detail::hash_hex(model_hash_value);
    j["dataset_hash"] = detail::hash_hex(dataset_hash);
    j["partial_warning"] = set.partial_warning;
    j["images_scanned"] = set.images_scanned;
    j["start_index"] = set.start_index;
    j["end_index"] = set.end_index;
    j["n_success"] = set.success_count();
    j["n_total"] = set.examples.size();
    json exs = json::array();
    for (std::size_t i = 0; i < set.examples.size(); ++i) {
        const PairedExample& ex = set.examples[i];
        json je;
        je["id"] = ex.id;
        je["dataset_index"] = ex.dataset_index;
        je["original_label"] = ex.original_label;
        je["adversarial_label"] = ex.adversarial_label;
        je["success"] = ex.success;
        je["confidence_level"] = ex.confidence_level;
        je["l2"] = ex.l2_dist;
        je["linf"] = ex.linf_dist;
        je["cw_c"] = ex.attack.confidence;
        je["epsilon"] = ex.attack.epsilon;
        je["original_offset"] = offsets[i].first;
        je["adversarial_offset"] = offsets[i].second;
        exs.push_back(je);
    }
    j["examples"] = exs;
    atomic_write(base_path + ".json", [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

struct LoadedAttackSet {
    AttackSet set;
    std::uint64_t model_hash = 0;
    std::uint64_t dataset_hash = 0;
};

inline std::uint64_t parse_hash_hex(const std::string& s) {
    return std::strtoull(s.c_str(), nullptr, 16);
}

inline LoadedAttackSet load_attack_set(const std::string& base_path) {
    std::ifstream jf(base_path + ".json");
    detail::check(static_cast<bool>(jf), "load_attack_set: cannot open " + base_path + ".json");
    json j = json::parse(jf);
    detail::check(j.value("format", "") == "mlloo-attackset-v1", "load_attack_set: unknown format");

    std::ifstream bf(base_path + ".blobs", std::ios::binary);
    detail::check(static_cast<bool>(bf), "load_attack_set: cannot open " + base_path + ".blobs");

    LoadedAttackSet out;
    out.model_hash = parse_hash_hex(j["model_hash"].get<std::string>());
    out.dataset_hash = parse_hash_hex(j["dataset_hash"].get<std::string>());
    out.set.params = attack_params_from_json(j["params"]);
    out.set.partial_warning = j.value("partial_warning", false);
    out.set.images_scanned = j.value("images_scanned", std::size_t{0});
    out.set.start_index = j.value("start_index", std::size_t{0});
    out.set.end_index = j.value("end_index", std::size_t{0});
    for (const json& je : j["examples"]) {
        PairedExample ex;
        ex.id = je["id"].get<std::string>();
        ex.dataset_index = je["dataset_index"].get<std::size_t>();
        ex.original_label = je["original_label"].get<int>();
        ex.adversarial_label = je["adversarial_label"].get<int>();
        ex.success = je["success"].get<bool>();
        ex.confidence_level = je["confidence_level"].get<double>();
        ex.l2_dist = je["l2"].get<double>();
        ex.linf_dist = je["linf"].get<double>();
        ex.attack = out.set.params;
        ex.attack.confidence = je.value("cw_c", ex.attack.confidence);
        ex.attack.epsilon = je.value("epsilon", ex.attack.epsilon);
        bf.seekg(static_cast<std::streamoff>(je["original_offset"].get<std::uint64_t>()));
        ex.original = read_tensor_blob(bf);
        bf.seekg(static_cast<std::streamoff>(je["adversarial_offset"].get<std::uint64_t>()));
        ex.adversarial = read_tensor_blob(bf);
        out.set.examples.push_back(std::move(ex));
    }
    return out;
}

inline void save_attack_summary_csv(const std::string& path, const AttackSet& set) {
    atomic_write(path, [&](std::ostream& out) {
        out.precision(17);
        out << "id,attack,success,l2,linf,confidence_level\n";
        for (const PairedExample& ex : set.examples)
            out << ex.id << ',' << attack_kind_name(ex.attack.kind) << ','
                << (ex.success ? 1 : 0) << ',' << ex.l2_dist << ',' << ex.linf_dist << ','
                << ex.confidence_level << '\n';
    });
}

// ---------------------------------------------------------------------------
// Features CSV: the interchange format between attribution and detector
// fitting.

struct FeatureTable {
    std::map<std::string, std::string> meta;
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<int> is_adversarial;
    std::vector<std::string> attack;
    std::vector<std::vector<double>> features;

    std::uint64_t selection_hash() const {
        auto it = meta.find("selection_hash");
        return it == meta.end() ? 0 : parse_hash_hex(it->second);
    }
};

inline void save_features_csv(const std::string& path, const FeatureTable& table) {
    atomic_write(path, [&](std::ostream& out) {
        out.precision(17);
        for (const auto& kv : table.meta) out << "# " << kv.first << '=' << kv.second << '\n';
        const std::size_t m = table.features.empty() ? 0 : table.features[0].size();
        out << "id,label,is_adversarial,attack";
        for (std::size_t j = 0; j < m; ++j) out << ",feat_" << j;
        out << '\n';
        for (std::size_t i = 0; i < table.features.size(); ++i) {
            out << table.ids[i] << ',' << table.labels[i] << ',' << table.is_adversarial[i] << ','
                << table.attack[i];
            for (double v : table.features[i]) out << ',' << v;
            out << '\n';
        }
    });
}

inline FeatureTable load_features_csv(const std::string& path) {
    std::ifstream in(path);
    detail::check(static_cast<bool>(in), "load_features_csv: cannot open " + path);
    FeatureTable t;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::size_t sp = line.find_first_not_of("# ");
            const std::size_t eq = line.find('=', sp);
            detail::check(eq != std::string::npos, "load_features_csv: bad metadata line");
            t.meta[line.substr(sp, eq - sp)] = line.substr(eq + 1);
            continue;
        }
        if (!header_seen) {
            header_seen = true;  // column names are fixed by the writer
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        t.ids.push_back(cell);
        std::getline(ss, cell, ',');
        t.labels.push_back(std::stoi(cell));
        std::getline(ss, cell, ',');
        t.is_adversarial.push_back(std::stoi(cell));
        std::getline(ss, cell, ',');
        t.attack.push_back(cell);
        std::vector<double> feats;
        while (std::getline(ss, cell, ',')) feats.push_back(std::stod(cell));
        t.features.push_back(std::move(feats));
    }
    detail::check(header_seen, "load_features_csv: missing header");
    for (const auto& f : t.features)
        detail::check(f.size() == t.features[0].size(), "load_features_csv: ragged rows");
    return t;
}

// ---------------------------------------------------------------------------
// Detectors.

inline void save_detector(const std::string& path, const LogisticDetector& det) {
    json j;
    j["format"] = "mlloo-detector-v1";
    j["stat_kind"] = stat_kind_name(det.stat_kind);
    j["weights"] = det.weights;
    j["bias"] = det.bias;
    j["feature_mean"] = det.feature_mean;
    j["feature_scale"] = det.feature_scale;
    j["selection_hash"] = detail::hash_hex(det.selection_hash);
    j["lambda"] = det.lambda;
    j["seed"] = det.seed;
    atomic_write(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline LogisticDetector load_detector(const std::string& path) {
    std::ifstream in(path);
    detail::check(static_cast<bool>(in), "load_detector: cannot open " + path);
    json j = json::parse(in);
    detail::check(j.value("format", "") == "mlloo-detector-v1", "load_detector: unknown format");
    LogisticDetector det;
    det.stat_kind = stat_kind_from_name(j["stat_kind"].get<std::string>());
    det.weights = j["weights"].get<std::vector<double>>();
    det.bias = j["bias"].get<double>();
    det.feature_mean = j["feature_mean"].get<std::vector<double>>();
    det.feature_scale = j["feature_scale"].get<std::vector<double>>();
    det.selection_hash = parse_hash_hex(j["selection_hash"].get<std::string>());
    det.lambda = j["lambda"].get<double>();
    det.seed = j["seed"].get<std::uint64_t>();
    return det;
}

// ---------------------------------------------------------------------------
// Layer selections (persisted so later stages can verify the hash chain).

inline void save_selection(const std::string& path, const LayerSelection& sel,
                           std::uint64_t model_hash_value) {
    json j;
    j["format"] = "mlloo-selection-v1";
    j["model_hash"] = detail::hash_hex(model_hash_value);
    j["selection_hash"] = detail::hash_hex(sel.hash());
    json entries = json::array();
    for (const auto& e : sel.entries) entries.push_back({{"layer", e.first}, {"neurons", e.second}});
    j["entries"] = entries;
    atomic_write(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline LayerSelection load_selection(const std::string& path, std::uint64_t* model_hash_out = nullptr) {
    std::ifstream in(path);
    detail::check(static_cast<bool>(in), "load_selection: cannot open " + path);
    json j = json::parse(in);
    detail::check(j.value("format", "") == "mlloo-selection-v1", "load_selection: unknown format");
    LayerSelection sel;
    for (const json& e : j["entries"])
        sel.entries.emplace_back(e["layer"].get<std::size_t>(),
                                 e["neurons"].get<std::vector<std::size_t>>());
    detail::check(detail::hash_hex(sel.hash()) == j["selection_hash"].get<std::string>(),
                  "load_selection: hash mismatch");
    if (model_hash_out) *model_hash_out = parse_hash_hex(j["model_hash"].get<std::string>());
    return sel;
}

// ---------------------------------------------------------------------------
// Attribution records (cacheable by model/input/method/selection).

inline void save_attribution_record(const std::string& path, const AttributionRecord& rec,
                                    const MaskSpec& mask) {
    json header;
    header["format"] = "mlloo-attribution-v1";
    header["input_id"] = rec.input_id;
    header["num_features"] = rec.num_features;
    header["method"] = attribution_method_name(rec.method);
    header["selection_hash"] = detail::hash_hex(rec.selection_hash);
    header["mask_reference"] = mask.reference_value;
    header["mask_granularity"] =
        mask.granularity == MaskGranularity::PerPixelAllChannels ? "per_pixel" : "per_scalar";
    const std::string hs = header.dump();
    atomic_write(path, [&](std::ostream& out) {
        detail::put_u32(out, static_cast<std::uint32_t>(hs.size()));
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        write_tensor_blob(out, rec.per_neuron);
    }, true);
}

inline AttributionRecord load_attribution_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    detail::check(static_cast<bool>(in), "load_attribution_record: cannot open " + path);
    const std::uint32_t hlen = detail::get_u32(in, "attribution header length");
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    detail::check(static_cast<bool>(in), "load_attribution_record: truncated header");
    json header = json::parse(hs);
    AttributionRecord rec;
    rec.input_id = header["input_id"].get<std::string>();
    rec.num_features = header["num_features"].get<std::size_t>();
    rec.method = header["method"].get<std::string>() == "ig" ? AttributionMethod::IG
                                                             : AttributionMethod::LOO;
    rec.selection_hash = parse_hash_hex(header["selection_hash"].get<std::string>());
    rec.per_neuron = read_tensor_blob(in);
    return rec;
}

// ---------------------------------------------------------------------------
// ROC and histogram CSVs (plot-ready).

inline void save_roc_csv(const std::string& path, const RocCurve& roc) {
    atomic_write(path, [&](std::ostream& out) {
        out.precision(17);
        out << "fpr,tpr,threshold\n";
        for (const RocPoint& p : roc.points)
            out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
    });
}

struct Histogram {
    std::vector<double> bin_left;
    std::vector<double> bin_right;
    std::vector<std::size_t> count;
    double bin_width = 0.0;
};

inline Histogram make_histogram(const std::vector<double>& values, double lo, double hi,
                                std::size_t bins) {
    detail::check(bins > 0 && hi > lo, "make_histogram: bad bins or range");
    Histogram h;
    h.bin_width = (hi - lo) / static_cast<double>(bins);
    h.bin_left.resize(bins);
    h.bin_right.resize(bins);
    h.count.assign(bins, 0);
    for (std::size_t b = 0; b < bins; ++b) {
        h.bin_left[b] = lo + static_cast<double>(b) * h.bin_width;
        h.bin_right[b] = lo + static_cast<double>(b + 1) * h.bin_width;
    }
    for (double v : values) {
        std::ptrdiff_t b = static_cast<std::ptrdiff_t>((v - lo) / h.bin_width);
        b = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(b, static_cast<std::ptrdiff_t>(bins) - 1));
        ++h.count[static_cast<std::size_t>(b)];
    }
    return h;
}

inline void save_histogram_csv(const std::string& path, const Histogram& h) {
    atomic_write(path, [&](std::ostream& out) {
        out.precision(17);
        out << "bin_left,bin_right,count\n";
        for (std::size_t b = 0; b < h.count.size(); ++b)
            out << h.bin_left[b] << ',' << h.bin_right[b] << ',' << h.count[b] << '\n';
    });
}

} // namespace mlloo

#endif // MLLOO_IO_HPP
