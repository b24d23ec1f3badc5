#pragma once

#include "mvhoi/autodiff.hpp"

namespace mvhoi::losses {

struct Stage1Weights {
    double l2 = 1.0;
    double perceptual = 0.1;
    double ssim = 0.1;
};

// Images on the tape are (h*w) x 3.
ad::Var mse(ad::Var pred, ad::Var target);
// 1 - mean SSIM of the channel-mean gray images.
ad::Var ssim_loss(ad::Var pred, ad::Var target, Index h, Index w);
// Sum over layers of the feature MSE under a fixed random strided feature
// stack (2x2 patches to 16, 32 and 64 channels, GELU after each).
ad::Var perceptual(ad::Var pred, ad::Var target, Index h, Index w);
ad::Var stage1_loss(ad::Var pred, ad::Var target, Index h, Index w, const Stage1Weights& weights = {});

// Per-pixel weights beta * S / S_hoi on mask pixels and 1 elsewhere, as an
// S x 1 column; all ones when the mask is empty.
Matrix hoi_weights(const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>& mask, double beta);
// Mean over all elements of weight * (v - u)^2; rows are pixels.
ad::Var hoi_weighted_fm_loss(ad::Var v_pred, ad::Var u, const Matrix& weights);
double hoi_weighted_fm_loss(const Matrix& v_pred, const Matrix& u, const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>& mask,
                            double beta);

} // namespace mvhoi::losses
