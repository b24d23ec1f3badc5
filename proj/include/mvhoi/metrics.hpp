#pragma once

#include "mvhoi/image.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mvhoi::metrics {

inline constexpr double kPsnrCap = 99.0;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

template <typename Scalar>
double mse(const ImageT<Scalar>& a, const ImageT<Scalar>& b) {
    if (!a.same_size(b)) {
        throw std::invalid_argument("image size mismatch");
    }
    return (a.pixels - b.pixels).template cast<double>().squaredNorm() / static_cast<double>(a.pixels.size());
}

inline double psnr_from_mse(double m) {
    if (m <= 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / m);
}

inline double capped(double db) { return std::min(db, kPsnrCap); }

// 10 log10(1 / MSE); +inf when identical.
template <typename Scalar>
double psnr(const ImageT<Scalar>& a, const ImageT<Scalar>& b) {
    return psnr_from_mse(mse(a, b));
}

// PSNR of the MSE pooled over every frame.
template <typename Scalar>
double psnr(const std::vector<ImageT<Scalar>>& a, const std::vector<ImageT<Scalar>>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("video length mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        total += mse(a[i], b[i]);
    }
    return psnr_from_mse(total / static_cast<double>(a.size()));
}

// Normalized 1D Gaussian taps for the SSIM window.
inline Eigen::VectorXd ssim_kernel() {
    Eigen::VectorXd k(kSsimWindow);
    const int r = kSsimWindow / 2;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - r;
        k(i) = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    }
    return k / k.sum();
}

// (n - 10) x n band matrix applying the window with valid boundaries.
inline Matrix ssim_filter_matrix(Index n) {
    if (n < kSsimWindow) {
        throw std::invalid_argument("image smaller than the SSIM window");
    }
    const Eigen::VectorXd k = ssim_kernel();
    Matrix g = Matrix::Zero(n - kSsimWindow + 1, n);
    for (Index i = 0; i < g.rows(); ++i) {
        g.row(i).segment(i, kSsimWindow) = k.transpose();
    }
    return g;
}

// Mean SSIM of two gray images of equal size.
template <typename Derived>
double ssim_gray(const Eigen::MatrixBase<Derived>& x_in, const Eigen::MatrixBase<Derived>& y_in) {
    const Matrix x = x_in.template cast<double>();
    const Matrix y = y_in.template cast<double>();
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
        throw std::invalid_argument("image size mismatch");
    }
    const Matrix gr = ssim_filter_matrix(x.rows());
    const Matrix gc = ssim_filter_matrix(x.cols());
    auto filt = [&](const Matrix& m) -> Matrix { return gr * m * gc.transpose(); };
    const Matrix mx = filt(x);
    const Matrix my = filt(y);
    const Matrix sxx = filt(x.cwiseProduct(x)) - mx.cwiseProduct(mx);
    const Matrix syy = filt(y.cwiseProduct(y)) - my.cwiseProduct(my);
    const Matrix sxy = filt(x.cwiseProduct(y)) - mx.cwiseProduct(my);
    const auto num = (2.0 * mx.cwiseProduct(my).array() + kSsimC1) * (2.0 * sxy.array() + kSsimC2);
    const auto den = (mx.array().square() + my.array().square() + kSsimC1) * (sxx.array() + syy.array() + kSsimC2);
    return (num / den).mean();
}

template <typename Scalar>
double ssim(const ImageT<Scalar>& a, const ImageT<Scalar>& b) {
    if (!a.same_size(b)) {
        throw std::invalid_argument("image size mismatch");
    }
    auto gray = [](const ImageT<Scalar>& img) -> Matrix {
        const Eigen::VectorXd g = img.pixels.template cast<double>().rowwise().mean();
        return Eigen::Map<const Matrix>(g.data(), img.height, img.width);
    };
    return ssim_gray(gray(a), gray(b));
}

// Mean of per-frame SSIM.
template <typename Scalar>
double ssim(const std::vector<ImageT<Scalar>>& a, const std::vector<ImageT<Scalar>>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("video length mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        total += ssim(a[i], b[i]);
    }
    return total / static_cast<double>(a.size());
}

// First index of the maximum.
Index argmax(const RowVector& w);
// Circular distance between angles in radians.
double angular_distance(double a, double b);
// Reference with minimal circular distance to the azimuth; ties go low.
Index nearest_view(double azimuth, const std::vector<double>& ref_azimuths);
double retrieval_accuracy(const std::vector<RowVector>& weights, const std::vector<double>& gt_azimuths,
                          const std::vector<double>& ref_azimuths);

} // namespace mvhoi::metrics
