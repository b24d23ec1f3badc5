#include "mvhoi/losses.hpp"

#include "mvhoi/metrics.hpp"
#include "mvhoi/nn.hpp"
#include "mvhoi/rng.hpp"

#include <array>
#include <stdexcept>

namespace mvhoi::losses {

using ad::Var;

namespace {

void require_same(Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("loss inputs differ in shape");
    }
}

constexpr std::array<Index, 3> kFeatureWidths = {16, 32, 64};
constexpr std::uint64_t kFeatureSeed = 0x5eed1f5;

const std::array<Matrix, 3>& feature_weights() {
    static const std::array<Matrix, 3> weights = [] {
        std::array<Matrix, 3> w;
        Rng rng(kFeatureSeed);
        Index in = 3;
        for (std::size_t l = 0; l < 3; ++l) {
            const Index fan_in = 4 * in;
            w[l] = Matrix(fan_in, kFeatureWidths[l]);
            const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (Index i = 0; i < w[l].size(); ++i) {
                w[l].data()[i] = rng.normal(0.0, sd);
            }
            in = kFeatureWidths[l];
        }
        return w;
    }();
    return weights;
}

std::vector<Var> features(Var img, Index h, Index w) {
    ad::Tape* tape = img.tape;
    const auto& weights = feature_weights();
    std::vector<Var> out;
    Var x = ad::add_scalar(img, -0.5);
    Index c = 3;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        x = nn::patchify(x, 1, h, w, c, 2);
        x = ad::gelu(ad::matmul(x, tape->constant(weights[l])));
        h /= 2;
        w /= 2;
        c = kFeatureWidths[l];
        out.push_back(x);
    }
    return out;
}

} // namespace

Var mse(Var pred, Var target) {
    require_same(pred, target);
    const Var d = pred - target;
    return ad::mean_all(ad::mul(d, d));
}

Var ssim_loss(Var pred, Var target, Index h, Index w) {
    require_same(pred, target);
    if (pred.rows() != h * w) {
        throw std::invalid_argument("ssim_loss: image rows do not match h * w");
    }
    ad::Tape* tape = pred.tape;
    const Var gr = tape->constant(metrics::ssim_filter_matrix(h));
    const Var gct = tape->constant(metrics::ssim_filter_matrix(w).transpose());
    auto filt = [&](Var m) { return ad::matmul(ad::matmul(gr, m), gct); };
    const Var x = ad::reshape(ad::mean(pred, ad::Axis::Cols), h, w);
    const Var y = ad::reshape(ad::mean(target, ad::Axis::Cols), h, w);
    const Var mx = filt(x);
    const Var my = filt(y);
    const Var mxy = ad::mul(mx, my);
    const Var mxx = ad::mul(mx, mx);
    const Var myy = ad::mul(my, my);
    const Var sxx = filt(ad::mul(x, x)) - mxx;
    const Var syy = filt(ad::mul(y, y)) - myy;
    const Var sxy = filt(ad::mul(x, y)) - mxy;
    const Var num = ad::mul(ad::add_scalar(mxy * 2.0, metrics::kSsimC1), ad::add_scalar(sxy * 2.0, metrics::kSsimC2));
    const Var den = ad::mul(ad::add_scalar(mxx + myy, metrics::kSsimC1), ad::add_scalar(sxx + syy, metrics::kSsimC2));
    return ad::add_scalar(ad::mean_all(ad::div(num, den)) * -1.0, 1.0);
}

Var perceptual(Var pred, Var target, Index h, Index w) {
    require_same(pred, target);
    if (pred.rows() != h * w || pred.cols() != 3 || h % 8 != 0 || w % 8 != 0) {
        throw std::invalid_argument("perceptual: expected an (h*w) x 3 image with h, w divisible by 8");
    }
    const auto fp = features(pred, h, w);
    const auto ft = features(target, h, w);
    Var total = mse(fp[0], ft[0]);
    for (std::size_t l = 1; l < fp.size(); ++l) {
        total = total + mse(fp[l], ft[l]);
    }
    return total;
}

Var stage1_loss(Var pred, Var target, Index h, Index w, const Stage1Weights& weights) {
    return mse(pred, target) * weights.l2 + perceptual(pred, target, h, w) * weights.perceptual +
           ssim_loss(pred, target, h, w) * weights.ssim;
}

Matrix hoi_weights(const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>& mask, double beta) {
    const Index s = mask.size();
    Index s_hoi = 0;
    for (Index i = 0; i < s; ++i) {
        s_hoi += mask(i) != 0 ? 1 : 0;
    }
    Matrix w = Matrix::Ones(s, 1);
    if (s_hoi == 0) {
        return w;
    }
    const double inside = beta * static_cast<double>(s) / static_cast<double>(s_hoi);
    for (Index i = 0; i < s; ++i) {
        if (mask(i) != 0) {
            w(i, 0) = inside;
        }
    }
    return w;
}

Var hoi_weighted_fm_loss(Var v_pred, Var u, const Matrix& weights) {
    require_same(v_pred, u);
    if (weights.rows() != v_pred.rows() || weights.cols() != 1) {
        throw std::invalid_argument("hoi loss: weight column does not match pixel count");
    }
    const Var d = v_pred - u;
    return ad::mean_all(ad::mul(ad::mul(d, d), v_pred.tape->constant(weights)));
}

double hoi_weighted_fm_loss(const Matrix& v_pred, const Matrix& u, const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>& mask,
                            double beta) {
    if (v_pred.rows() != u.rows() || v_pred.cols() != u.cols() || mask.size() != v_pred.rows()) {
        throw std::invalid_argument("hoi loss: shape mismatch");
    }
    const Matrix w = hoi_weights(mask, beta);
    return ((v_pred - u).array().square().colwise() * w.col(0).array()).mean();
}

} // namespace mvhoi::losses
