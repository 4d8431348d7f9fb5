#include "fbsr/forward_model.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include "fbsr/error.hpp"

namespace fbsr {

NoiseModel::NoiseModel(double sigma_add, double sigma_mult, std::uint64_t seed)
    : sigma_add_(sigma_add), sigma_mult_(sigma_mult), seed_(seed), rng_(seed) {
    if (!(sigma_add >= 0.0) || !(sigma_mult >= 0.0)) throw ConfigError("noise sigmas must be non-negative");
}

NoiseModel NoiseModel::derive(std::uint64_t stream) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6e6f6973u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    const std::uint64_t child = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return {sigma_add_, sigma_mult_, child};
}

std::vector<float> NoiseModel::apply(std::span<const float> fs) {
    std::vector<float> out(fs.begin(), fs.end());
    if (sigma_add_ == 0.0 && sigma_mult_ == 0.0) return out;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : out) {
        const double e_mult = sigma_mult_ * gauss(rng_);
        const double e_add = sigma_add_ * gauss(rng_);
        v = static_cast<float>(std::max(0.0, v * (1.0 + e_mult) + e_add));
    }
    return out;
}

std::vector<float> extract_fibre_signals(const Image& image, const FibreLayout& layout) {
    if (image.width != layout.width || image.height != layout.height) {
        throw ShapeError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " does not match layout " + std::to_string(layout.width) + "x" +
                         std::to_string(layout.height));
    }
    const int n = layout.fibre_count();
    std::vector<float> fs(n);
    for (int f = 0; f < n; ++f) {
        const auto cell = layout.cells.cell(f);
        double sum = 0.0;
        for (int p : cell) sum += image.pixels[p];
        fs[f] = static_cast<float>(sum / static_cast<double>(cell.size()));
    }
    return fs;
}

FibreVector normalize_signals(std::span<const float> signals, int n_f) {
    const int live = static_cast<int>(signals.size());
    if (live > n_f) {
        throw ShapeError("layout has " + std::to_string(live) + " fibres but the vector length is " +
                         std::to_string(n_f));
    }
    FibreVector v;
    v.values.assign(n_f, 0.0f);
    v.live_count = live;
    if (live == 0) return v;
    const auto [lo, hi] = std::minmax_element(signals.begin(), signals.end());
    v.norm_min = *lo;
    v.norm_max = *hi;
    if (v.degenerate()) return v;
    const double scale = 1.0 / (v.norm_max - v.norm_min);
    for (int i = 0; i < live; ++i) {
        v.values[i] = static_cast<float>(std::clamp((signals[i] - v.norm_min) * scale, 0.0, 1.0));
    }
    return v;
}

FibreVector vectorize(const Image& image, const FibreLayout& layout, int n_f) {
    if (layout.fibre_count() > n_f) {
        throw ShapeError("layout has " + std::to_string(layout.fibre_count()) +
                         " fibres but the vector length is " + std::to_string(n_f));
    }
    return normalize_signals(extract_fibre_signals(image, layout), n_f);
}

Image reconstruct_lr(std::span<const float> values, const FibreLayout& layout) {
    Image out = interpolate(layout, values);
    for (auto& p : out.pixels) p = std::clamp(p, 0.0f, 1.0f);
    return out;
}

std::vector<float> apply_noise(std::span<const float> fs, NoiseModel& model) { return model.apply(fs); }

Image synthesize_lr(const Image& hr, const FibreLayout& layout, NoiseModel& model) {
    const auto fs = extract_fibre_signals(hr, layout);
    const auto nfs = apply_noise(fs, model);
    return rescale_unit(reconstruct_lr(nfs, layout));
}

void write_fibre_vector_csv(const std::filesystem::path& path, const FibreVector& v) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "index,value\n";
    for (int i = 0; i < v.live_count; ++i) out << i << ',' << v.values[i] << '\n';
}

}  // namespace fbsr
