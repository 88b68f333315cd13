#ifndef MLLOO_DATASET_HPP
#define MLLOO_DATASET_HPP

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mlloo/rng.hpp"
#include "mlloo/tensor.hpp"

namespace mlloo {

struct SplitRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct DatasetManifest {
    std::string name;
    std::size_t num_examples = 0;
    std::size_t h = 0, w = 0, c = 0;
    std::size_t num_classes = 0;
    std::string source_format;  // idx | csv | raw
    std::string normalization;  // scale_1_255 | identity
    SplitRange train, test;
    std::uint64_t content_hash = 0;
};

struct Dataset {
    std::vector<Tensor> images;
    std::vector<int> labels;
    DatasetManifest manifest;

    void validate() const {
        detail::check(images.size() == labels.size(), "Dataset: image/label count mismatch");
        detail::check(images.size() == manifest.num_examples, "Dataset: manifest count mismatch");
        for (int y : labels)
            detail::check(y >= 0 && static_cast<std::size_t>(y) < manifest.num_classes,
                          "Dataset: label out of range");
        for (const Tensor& t : images)
            for (double v : t.values())
                detail::check(v >= 0.0 && v <= 1.0, "Dataset: pixel outside [0,1]");
    }
};

namespace detail {

inline std::uint64_t hash_images_labels(const std::vector<Tensor>& images,
                                        const std::vector<int>& labels) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Tensor& t : images) h = fnv1a64(t.data(), t.size() * sizeof(double), h);
    for (int y : labels) {
        const std::int32_t v = y;
        h = fnv1a64(&v, sizeof(v), h);
    }
    return h;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Synthetic digit corpus. A classic 7x5 glyph per digit is warped onto the
// canvas with a random rotation, scale and offset, then intensity-jittered
// and noised. Deterministic in the seed; accurate CNNs are reachable at
// canvas sizes down to 12x12.

namespace detail {

inline const std::array<std::array<const char*, 7>, 10>& digit_glyphs() {
    static const std::array<std::array<const char*, 7>, 10> glyphs = {{
        {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
        {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
        {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
        {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
        {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
        {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
        {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
        {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
        {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
        {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
    }};
    return glyphs;
}

inline double glyph_sample(int digit, double gy, double gx) {
    // bilinear sample of the glyph bitmap, zero outside
    const auto& g = digit_glyphs()[static_cast<std::size_t>(digit)];
    auto texel = [&](int y, int x) -> double {
        if (y < 0 || y >= 7 || x < 0 || x >= 5) return 0.0;
        return g[static_cast<std::size_t>(y)][x] == '1' ? 1.0 : 0.0;
    };
    const int y0 = static_cast<int>(std::floor(gy)), x0 = static_cast<int>(std::floor(gx));
    const double fy = gy - y0, fx = gx - x0;
    return texel(y0, x0) * (1 - fy) * (1 - fx) + texel(y0, x0 + 1) * (1 - fy) * fx +
           texel(y0 + 1, x0) * fy * (1 - fx) + texel(y0 + 1, x0 + 1) * fy * fx;
}

} // namespace detail

inline Tensor render_digit(int digit, std::size_t h, std::size_t w, Rng& rng) {
    const double angle = rng.uniform(-0.15, 0.15);
    const double box_h = rng.uniform(0.70, 0.92) * static_cast<double>(h);
    const double box_w = std::min(rng.uniform(0.85, 1.15) * box_h * 5.0 / 7.0,
                                  0.92 * static_cast<double>(w));
    const double cy = 0.5 * static_cast<double>(h) + rng.uniform(-1.0, 1.0);
    const double cx = 0.5 * static_cast<double>(w) + rng.uniform(-1.0, 1.0);
    const double intensity = rng.uniform(0.7, 1.0);
    const double noise_sigma = rng.uniform(0.02, 0.06);
    const double ca = std::cos(angle), sa = std::sin(angle);

    Tensor img({h, w, 1});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double ry = ca * dy - sa * dx;
            const double rx = sa * dy + ca * dx;
            const double gy = (ry / box_h + 0.5) * 7.0 - 0.5;
            const double gx = (rx / box_w + 0.5) * 5.0 - 0.5;
            double v = intensity * detail::glyph_sample(digit, gy, gx);
            v += noise_sigma * rng.normal();
            img.at(y, x, 0) = std::min(1.0, std::max(0.0, v));
        }
    }
    return img;
}

inline Dataset make_synthetic_digits(std::size_t h, std::size_t w, std::size_t n_train,
                                     std::size_t n_test, std::uint64_t seed) {
    Dataset ds;
    const std::size_t n = n_train + n_test;
    ds.images.reserve(n);
    ds.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int digit = static_cast<int>(i % 10);
        Rng rng(derive_seed(seed, 0x73796e7468ull + i));
        ds.images.push_back(render_digit(digit, h, w, rng));
        ds.labels.push_back(digit);
    }
    std::ostringstream name;
    name << "synth-digits-" << h << "x" << w;
    ds.manifest.name = name.str();
    ds.manifest.num_examples = n;
    ds.manifest.h = h;
    ds.manifest.w = w;
    ds.manifest.c = 1;
    ds.manifest.num_classes = 10;
    ds.manifest.source_format = "raw";
    ds.manifest.normalization = "identity";
    ds.manifest.train = {0, n_train};
    ds.manifest.test = {n_train, n};
    ds.manifest.content_hash = detail::hash_images_labels(ds.images, ds.labels);
    return ds;
}

// ---------------------------------------------------------------------------
// IDX ingestion (the MNIST distribution format): big-endian extents, one
// unsigned byte per pixel/label.

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    check(static_cast<bool>(in), "ingest_idx: truncated file (" + what + ")");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

} // namespace detail

inline Dataset ingest_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgf(images_path, std::ios::binary);
    detail::check(static_cast<bool>(imgf), "ingest_idx: cannot open " + images_path);
    std::ifstream labf(labels_path, std::ios::binary);
    detail::check(static_cast<bool>(labf), "ingest_idx: cannot open " + labels_path);

    const std::uint32_t img_magic = detail::read_be_u32(imgf, "image magic");
    detail::check(img_magic == 0x00000803u, "ingest_idx: bad image-file magic");
    const std::uint32_t n_img = detail::read_be_u32(imgf, "image count");
    const std::uint32_t rows = detail::read_be_u32(imgf, "rows");
    const std::uint32_t cols = detail::read_be_u32(imgf, "cols");

    const std::uint32_t lab_magic = detail::read_be_u32(labf, "label magic");
    detail::check(lab_magic == 0x00000801u, "ingest_idx: bad label-file magic");
    const std::uint32_t n_lab = detail::read_be_u32(labf, "label count");
    detail::check(n_img == n_lab, "ingest_idx: image/label count mismatch");

    Dataset ds;
    ds.images.reserve(n_img);
    ds.labels.reserve(n_img);
    std::uint64_t hash = 0xcbf29ce484222325ull;
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n_img; ++i) {
        imgf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        detail::check(static_cast<bool>(imgf), "ingest_idx: truncated image data");
        hash = fnv1a64(buf.data(), buf.size(), hash);
        Tensor t({rows, cols, 1});
        for (std::size_t p = 0; p < buf.size(); ++p) t[p] = static_cast<double>(buf[p]) / 255.0;
        ds.images.push_back(std::move(t));

        unsigned char lab = 0;
        labf.read(reinterpret_cast<char*>(&lab), 1);
        detail::check(static_cast<bool>(labf), "ingest_idx: truncated label data");
        hash = fnv1a64(&lab, 1, hash);
        ds.labels.push_back(static_cast<int>(lab));
        max_label = std::max(max_label, static_cast<int>(lab));
    }

    ds.manifest.name = "idx";
    ds.manifest.num_examples = n_img;
    ds.manifest.h = rows;
    ds.manifest.w = cols;
    ds.manifest.c = 1;
    ds.manifest.num_classes = static_cast<std::size_t>(std::max(max_label + 1, 10));
    ds.manifest.source_format = "idx";
    ds.manifest.normalization = "scale_1_255";
    ds.manifest.train = {0, 0};
    ds.manifest.test = {0, n_img};
    ds.manifest.content_hash = hash;
    return ds;
}

// ---------------------------------------------------------------------------
// CSV ingestion: label followed by d pixel values per row. Pixel scale is
// auto-detected: any value above 1 means byte scale.

inline Dataset ingest_csv(const std::string& path, std::size_t h, std::size_t w, std::size_t c) {
    std::ifstream in(path);
    detail::check(static_cast<bool>(in), "ingest_csv: cannot open " + path);
    const std::size_t d = h * w * c;

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    double max_val = 0.0;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> cells;
        cells.reserve(d + 1);
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                const double v = std::stod(cell, &pos);
                while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
                detail::check(pos == cell.size(), "ingest_csv: non-numeric cell at line " +
                                                      std::to_string(line_no));
                cells.push_back(v);
            } catch (const std::invalid_argument&) {
                detail::fail("ingest_csv: non-numeric cell at line " + std::to_string(line_no));
            }
        }
        detail::check(cells.size() == d + 1,
                      "ingest_csv: ragged row at line " + std::to_string(line_no));
        const double lab = cells[0];
        detail::check(lab >= 0 && lab == std::floor(lab),
                      "ingest_csv: bad label at line " + std::to_string(line_no));
        labels.push_back(static_cast<int>(lab));
        for (std::size_t i = 1; i < cells.size(); ++i) max_val = std::max(max_val, cells[i]);
        cells.erase(cells.begin());
        rows.push_back(std::move(cells));
    }
    detail::check(!rows.empty(), "ingest_csv: empty file");

    const bool byte_scale = max_val > 1.0;
    Dataset ds;
    ds.images.reserve(rows.size());
    int max_label = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (byte_scale)
            for (double& v : rows[i]) v /= 255.0;
        for (double v : rows[i])
            detail::check(v >= 0.0 && v <= 1.0, "ingest_csv: pixel out of range after scaling");
        ds.images.push_back(Tensor({h, w, c}, std::move(rows[i])));
        max_label = std::max(max_label, labels[i]);
    }
    ds.labels = std::move(labels);

    ds.manifest.name = "csv";
    ds.manifest.num_examples = ds.images.size();
    ds.manifest.h = h;
    ds.manifest.w = w;
    ds.manifest.c = c;
    ds.manifest.num_classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
    ds.manifest.source_format = "csv";
    ds.manifest.normalization = byte_scale ? "scale_1_255" : "identity";
    ds.manifest.train = {0, 0};
    ds.manifest.test = {0, ds.images.size()};
    ds.manifest.content_hash = detail::hash_images_labels(ds.images, ds.labels);
    return ds;
}

inline void export_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    detail::check(static_cast<bool>(out), "export_csv: cannot open " + path);
    out.precision(17);
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        out << ds.labels[i];
        for (double v : ds.images[i].values()) out << ',' << v;
        out << '\n';
    }
}

} // namespace mlloo

#endif // MLLOO_DATASET_HPP
