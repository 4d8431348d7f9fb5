#include "fbsr/losses.hpp"

#include <algorithm>
#include <string>

#include "fbsr/error.hpp"

namespace fbsr {

using ad::BasicTensor;

namespace {

void check_image_batch(const ad::Shape& s, const char* what) {
    if (s.size() != 4 || s[1] != 1) {
        throw ShapeError(std::string(what) + " must be [N,1,H,W], got " + ad::shape_string(s));
    }
}

template <typename T>
BasicTensor<T> cell_means(const BasicTensor<T>& images, std::span<const FibreLayout* const> layouts, int n_f) {
    check_image_batch(images.shape(), "vectorize input");
    const int n = images.dim(0);
    const int h = images.dim(2);
    const int w = images.dim(3);
    if (static_cast<int>(layouts.size()) != n) {
        throw ShapeError("vectorize: " + std::to_string(layouts.size()) + " layouts for a batch of " +
                         std::to_string(n));
    }
    std::vector<ad::Segments> segments;
    segments.reserve(n);
    for (const FibreLayout* layout : layouts) {
        if (layout->width != w || layout->height != h) throw ShapeError("vectorize: layout does not match image size");
        if (layout->fibre_count() > n_f) {
            throw ShapeError("layout has " + std::to_string(layout->fibre_count()) +
                             " fibres but the vector length is " + std::to_string(n_f));
        }
        segments.push_back({layout->cells.offsets, layout->cells.pixels});
    }
    return ad::gather_mean(ad::reshape(images, {n, h * w}), std::span<const ad::Segments>(segments), n_f);
}

template <typename T>
BasicTensor<T> normalise(const BasicTensor<T>& means, std::span<const FibreLayout* const> layouts,
                         std::span<const VectorRange> ranges, int n_f) {
    const int n = means.dim(0);
    std::vector<T> scale(static_cast<std::size_t>(n) * n_f, T(0));
    std::vector<T> offset(scale.size(), T(0));
    for (int s = 0; s < n; ++s) {
        const auto [lo, hi] = ranges[s];
        if (!(hi > lo)) continue;
        const double inv = 1.0 / (hi - lo);
        for (int f = 0; f < layouts[s]->fibre_count(); ++f) {
            scale[static_cast<std::size_t>(s) * n_f + f] = static_cast<T>(inv);
            offset[static_cast<std::size_t>(s) * n_f + f] = static_cast<T>(-lo * inv);
        }
    }
    return means * BasicTensor<T>::from({n, n_f}, std::move(scale)) + BasicTensor<T>::from({n, n_f}, std::move(offset));
}

}  // namespace

template <typename T>
BasicTensor<T> vectorize_batch(const BasicTensor<T>& images, std::span<const FibreLayout* const> layouts, int n_f) {
    auto means = cell_means(images, layouts, n_f);
    std::vector<VectorRange> ranges(layouts.size());
    const auto data = means.data();
    for (std::size_t s = 0; s < layouts.size(); ++s) {
        const int live = layouts[s]->fibre_count();
        if (live == 0) continue;
        const auto* row = data.data() + s * n_f;
        const auto [lo, hi] = std::minmax_element(row, row + live);
        ranges[s] = {static_cast<double>(*lo), static_cast<double>(*hi)};
    }
    return normalise(means, layouts, std::span<const VectorRange>(ranges), n_f);
}

template <typename T>
BasicTensor<T> vectorize_batch(const BasicTensor<T>& images, std::span<const FibreLayout* const> layouts,
                               std::span<const VectorRange> ranges, int n_f) {
    if (ranges.size() != layouts.size()) throw ShapeError("vectorize: one range per sample required");
    return normalise(cell_means(images, layouts, n_f), layouts, ranges, n_f);
}

template <typename T>
BasicTensor<T> l_vec(const BasicTensor<T>& v_input, const BasicTensor<T>& v_sr) {
    if (v_input.shape() != v_sr.shape() || v_input.rank() != 2) {
        throw ShapeError("l_vec: fibre vectors " + ad::shape_string(v_input.shape()) + " and " +
                         ad::shape_string(v_sr.shape()));
    }
    return ad::mean(ad::square(v_input - v_sr));
}

template <typename T>
BasicTensor<T> l_adv(const BasicTensor<T>& ds_output) {
    return ad::mean(-ad::log(ad::clamp(ds_output, static_cast<T>(kProbabilityFloor), T(1))));
}

template <typename T>
BasicTensor<T> l_reg(const BasicTensor<T>& input_lr, const BasicTensor<T>& sr) {
    check_image_batch(input_lr.shape(), "l_reg input");
    if (input_lr.shape() != sr.shape()) {
        throw ShapeError("l_reg: " + ad::shape_string(input_lr.shape()) + " vs " + ad::shape_string(sr.shape()));
    }
    const auto diff = sr - input_lr;
    const auto rows = ad::mean(diff, {3}, false);
    const auto cols = ad::mean(diff, {2}, false);
    return ad::mean(ad::square(rows)) + ad::mean(ad::square(cols));
}

template <typename T>
BasicTensor<T> discriminator_objective(const BasicTensor<T>& ds_real, const BasicTensor<T>& ds_fake) {
    const T lo = static_cast<T>(kProbabilityFloor);
    const T hi = static_cast<T>(1.0 - kProbabilityFloor);
    const auto real_term = ad::mean(ad::log(ad::clamp(ds_real, lo, hi)));
    const auto fake_term = ad::mean(ad::log(T(1) - ad::clamp(ds_fake, lo, hi)));
    return -(real_term + fake_term);
}

template <typename T>
LossTerms<T> total_loss(const BasicTensor<T>& input_lr, const BasicTensor<T>& sr,
                        std::span<const FibreLayout* const> layouts, const BasicTensor<T>& ds_output,
                        const LossWeights& weights, int n_f) {
    LossTerms<T> terms;
    terms.weights = weights;
    const auto input = ad::stop_gradient(input_lr);
    terms.l_vec = l_vec(vectorize_batch(input, layouts, n_f), vectorize_batch(sr, layouts, n_f));
    terms.l_adv = l_adv(ds_output);
    terms.l_reg = l_reg(input, sr);
    terms.total = terms.l_vec * static_cast<T>(weights.vec) + terms.l_adv * static_cast<T>(weights.adv) +
                  terms.l_reg * static_cast<T>(weights.reg);
    return terms;
}

#define FBSR_INSTANTIATE(T)                                                                                       \
    template BasicTensor<T> vectorize_batch(const BasicTensor<T>&, std::span<const FibreLayout* const>, int);     \
    template BasicTensor<T> vectorize_batch(const BasicTensor<T>&, std::span<const FibreLayout* const>,           \
                                            std::span<const VectorRange>, int);                                   \
    template BasicTensor<T> l_vec(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> l_adv(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> l_reg(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> discriminator_objective(const BasicTensor<T>&, const BasicTensor<T>&);                \
    template LossTerms<T> total_loss(const BasicTensor<T>&, const BasicTensor<T>&,                                \
                                     std::span<const FibreLayout* const>, const BasicTensor<T>&,                  \
                                     const LossWeights&, int);

FBSR_INSTANTIATE(float)
FBSR_INSTANTIATE(double)

#undef FBSR_INSTANTIATE

}  // namespace fbsr
