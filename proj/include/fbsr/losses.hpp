#pragma once

// Generator and discriminator objectives as differentiable graphs.
//
// Image batches are [N, 1, H, W]; fibre-vector batches are [N, n_f];
// discriminator outputs are [N] or [N, 1]. Every term is averaged over the batch.

#include <span>
#include <vector>

#include "fbsr/geometry.hpp"
#include "fbsr/tensor.hpp"

namespace fbsr {

inline constexpr double kProbabilityFloor = 1e-7;

struct LossWeights {
    double vec = 1.0;
    double adv = 1.0;
    double reg = 1.0;
};

struct LossBreakdown {
    double l_vec = 0.0;
    double l_adv = 0.0;
    double l_reg = 0.0;
    double total = 0.0;
    LossWeights weights;
};

/// Min-max range applied to a sample's cell means. A degenerate range maps
/// every live fibre to zero.
struct VectorRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Cell means of each image over its own layout, normalised to [0,1] with the
/// per-sample extrema held constant (no gradient through min/max) and
/// zero-padded to n_f.
template <typename T>
ad::BasicTensor<T> vectorize_batch(const ad::BasicTensor<T>& images, std::span<const FibreLayout* const> layouts,
                                   int n_f);

/// As vectorize_batch, with caller-supplied normalisation ranges.
template <typename T>
ad::BasicTensor<T> vectorize_batch(const ad::BasicTensor<T>& images, std::span<const FibreLayout* const> layouts,
                                   std::span<const VectorRange> ranges, int n_f);

/// (1/n_f) * sum (v_input - v_sr)^2, batch mean.
template <typename T>
ad::BasicTensor<T> l_vec(const ad::BasicTensor<T>& v_input, const ad::BasicTensor<T>& v_sr);

/// -log(d), d clamped below at kProbabilityFloor, batch mean.
template <typename T>
ad::BasicTensor<T> l_adv(const ad::BasicTensor<T>& ds_output);

/// Squared differences of row means plus squared differences of column means.
template <typename T>
ad::BasicTensor<T> l_reg(const ad::BasicTensor<T>& input_lr, const ad::BasicTensor<T>& sr);

/// -mean log d_real - mean log(1 - d_fake), probabilities clamped to
/// [kProbabilityFloor, 1 - kProbabilityFloor].
template <typename T>
ad::BasicTensor<T> discriminator_objective(const ad::BasicTensor<T>& ds_real, const ad::BasicTensor<T>& ds_fake);

template <typename T>
struct LossTerms {
    ad::BasicTensor<T> l_vec;
    ad::BasicTensor<T> l_adv;
    ad::BasicTensor<T> l_reg;
    ad::BasicTensor<T> total;
    LossWeights weights;

    [[nodiscard]] LossBreakdown breakdown() const {
        return {static_cast<double>(l_vec.item()), static_cast<double>(l_adv.item()),
                static_cast<double>(l_reg.item()), static_cast<double>(total.item()), weights};
    }
};

/// Weighted composite generator loss. The input vector is taken from
/// input_lr through the same vectorisation as the output; input_lr is
/// treated as data and receives no gradient.
template <typename T>
LossTerms<T> total_loss(const ad::BasicTensor<T>& input_lr, const ad::BasicTensor<T>& sr,
                        std::span<const FibreLayout* const> layouts, const ad::BasicTensor<T>& ds_output,
                        const LossWeights& weights, int n_f);

}  // namespace fbsr
