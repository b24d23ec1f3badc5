#include "mvhoi/metrics.hpp"

#include <numbers>

namespace mvhoi::metrics {

Index argmax(const RowVector& w) {
    if (w.size() == 0) {
        throw std::invalid_argument("argmax of an empty vector");
    }
    Index best = 0;
    for (Index i = 1; i < w.size(); ++i) {
        if (w(i) > w(best)) {
            best = i;
        }
    }
    return best;
}

double angular_distance(double a, double b) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double d = std::fmod(std::abs(a - b), two_pi);
    return std::min(d, two_pi - d);
}

Index nearest_view(double azimuth, const std::vector<double>& ref_azimuths) {
    if (ref_azimuths.empty()) {
        throw std::invalid_argument("no reference azimuths");
    }
    Index best = 0;
    double best_d = angular_distance(azimuth, ref_azimuths[0]);
    for (std::size_t k = 1; k < ref_azimuths.size(); ++k) {
        const double d = angular_distance(azimuth, ref_azimuths[k]);
        if (d < best_d - 1e-12) {
            best = static_cast<Index>(k);
            best_d = d;
        }
    }
    return best;
}

double retrieval_accuracy(const std::vector<RowVector>& weights, const std::vector<double>& gt_azimuths,
                          const std::vector<double>& ref_azimuths) {
    if (weights.size() != gt_azimuths.size()) {
        throw std::invalid_argument("retrieval: weight trace and pose count differ");
    }
    if (weights.empty()) {
        throw std::invalid_argument("retrieval: empty trace");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i].size() != static_cast<Index>(ref_azimuths.size())) {
            throw std::invalid_argument("retrieval: weight vector length differs from reference count");
        }
        hits += argmax(weights[i]) == nearest_view(gt_azimuths[i], ref_azimuths) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(weights.size());
}

} // namespace mvhoi::metrics
