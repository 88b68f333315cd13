#ifndef MLLOO_DISPERSION_HPP
#define MLLOO_DISPERSION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlloo/tensor.hpp"

namespace mlloo {

enum class StatKind { IQR, STD, MAD };

inline const char* stat_kind_name(StatKind k) {
    switch (k) {
        case StatKind::IQR: return "iqr";
        case StatKind::STD: return "std";
        case StatKind::MAD: return "mad";
    }
    return "?";
}

inline StatKind stat_kind_from_name(const std::string& s) {
    if (s == "iqr") return StatKind::IQR;
    if (s == "std") return StatKind::STD;
    if (s == "mad") return StatKind::MAD;
    detail::fail("unknown dispersion statistic '" + s + "'");
}

// Type-1 quantile: the ceil(p*d)-th order statistic of the sorted values.
// This is the infimum of { beta : #{i : v_i < beta}/d >= p }, whose minimum
// is not attained because the inequality is strict.
inline double quantile(std::vector<double> values, double p) {
    detail::check(!values.empty(), "quantile: empty vector");
    detail::check(p > 0.0 && p <= 1.0, "quantile: p outside (0,1]");
    const std::size_t d = values.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(d)));
    k = std::min(std::max<std::size_t>(k, 1), d);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     values.end());
    return values[k - 1];
}

inline double iqr(const std::vector<double>& values) {
    detail::check(!values.empty(), "iqr: empty vector");
    return quantile(values, 0.75) - quantile(values, 0.25);
}

// Population standard deviation (divide by d).
inline double stddev(const std::vector<double>& values) {
    detail::check(!values.empty(), "stddev: empty vector");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) {
        const double dvi = v - mean;
        ss += dvi * dvi;
    }
    return std::sqrt(ss / n);
}

// Median of absolute deviations from the median; the median of an
// even-length vector is its lower-middle order statistic, matching
// quantile(v, 0.5).
inline double mad(const std::vector<double>& values) {
    detail::check(!values.empty(), "mad: empty vector");
    const double med = quantile(values, 0.5);
    std::vector<double> devs(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) devs[i] = std::abs(values[i] - med);
    return quantile(std::move(devs), 0.5);
}

inline double dispersion(const std::vector<double>& values, StatKind kind) {
    switch (kind) {
        case StatKind::IQR: return iqr(values);
        case StatKind::STD: return stddev(values);
        case StatKind::MAD: return mad(values);
    }
    detail::fail("dispersion: bad kind");
}

// One dispersion scalar per selected neuron; the detector's feature vector.
struct DispersionFeatures {
    std::string input_id;
    StatKind stat_kind = StatKind::IQR;
    std::vector<double> values;
    std::uint64_t selection_hash = 0;
};

} // namespace mlloo

#endif // MLLOO_DISPERSION_HPP
