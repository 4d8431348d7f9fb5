#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "fbsr/geometry.hpp"
#include "fbsr/image.hpp"

namespace fbsr {

/// Fixed-length vector length used throughout (maximum fibres in a 64x64 patch).
inline constexpr int kDefaultFibreVectorLength = 682;

/// Per-fibre signal, min-max normalised over the live fibres and zero-padded.
struct FibreVector {
    std::vector<float> values;  // length n_f
    int live_count = 0;
    double norm_min = 0.0;
    double norm_max = 0.0;

    [[nodiscard]] int length() const { return static_cast<int>(values.size()); }
    [[nodiscard]] bool degenerate() const { return !(norm_max > norm_min); }
};

/// Gaussian fibre noise, nfs = fs * (1 + e_mult) + e_add, clamped at zero.
/// Owns its random stream: do not share one instance between threads.
class NoiseModel {
public:
    NoiseModel(double sigma_add, double sigma_mult, std::uint64_t seed);

    [[nodiscard]] double sigma_add() const { return sigma_add_; }
    [[nodiscard]] double sigma_mult() const { return sigma_mult_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }

    /// Independent copy whose stream is derived from this model's seed and `stream`.
    [[nodiscard]] NoiseModel derive(std::uint64_t stream) const;

    std::vector<float> apply(std::span<const float> fs);

private:
    double sigma_add_;
    double sigma_mult_;
    std::uint64_t seed_;
    std::mt19937_64 rng_;
};

/// Raw Voronoi-cell means of the image (fibre signals), un-normalised and un-padded.
std::vector<float> extract_fibre_signals(const Image& image, const FibreLayout& layout);

/// Cell means, normalised to [0,1] over the live fibres and padded to n_f. A
/// constant cell-mean vector normalises to zeros.
FibreVector vectorize(const Image& image, const FibreLayout& layout, int n_f = kDefaultFibreVectorLength);

/// Same normalisation applied to an already-extracted signal vector.
FibreVector normalize_signals(std::span<const float> signals, int n_f);

/// Piecewise-linear reconstruction of fibre values onto the grid, clamped to [0,1].
Image reconstruct_lr(std::span<const float> values, const FibreLayout& layout);

std::vector<float> apply_noise(std::span<const float> fs, NoiseModel& model);

/// HR -> fibre signals -> noise -> reconstruction -> per-frame rescale to [0,1].
Image synthesize_lr(const Image& hr, const FibreLayout& layout, NoiseModel& model);

/// "index,value" header, then one row per live entry.
void write_fibre_vector_csv(const std::filesystem::path& path, const FibreVector& v);

}  // namespace fbsr
