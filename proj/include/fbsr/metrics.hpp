#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "fbsr/image.hpp"

namespace fbsr {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr int kGcfLevels = 9;

/// Mean structural similarity over all 11x11 Gaussian windows (sigma 1.5) that
/// fit entirely inside the image, for a dynamic range of 1. Both images must
/// be at least 11 pixels in each dimension.
double ssim(const Image& a, const Image& b);

/// Global contrast factor over up to 9 resolution levels built by 2x2 block
/// averaging. Levels that would have no pixels are skipped.
double gcf(const Image& image);

/// Per-level weight used by gcf(), level in 1..9.
double gcf_weight(int level);

/// Mean local contrast of the perceptual luminance at one resolution level.
double gcf_level_contrast(const Image& image);

/// Composite score: mean of SSIM mapped by (s - 0.6) / 0.4 and the contrast
/// difference mapped by (d + 0.5) / 1.8. Not clamped.
double tot_cs(double ssim_hr, double delta_gcf_hr);

struct NamedImage {
    std::string id;
    Image image;
};

struct EvaluationRow {
    std::string image_id;
    double ssim_hr = 0.0;
    double gcf_sr = 0.0;
    double gcf_hr = 0.0;
    double gcf_lr = 0.0;
    double delta_gcf_hr = 0.0;
    double delta_gcf_lr = 0.0;
    double tot_cs = 0.0;
};

struct ColumnStats {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single row
};

struct EvaluationReport {
    static constexpr std::array<const char*, 7> kColumns{"ssim_hr", "gcf_sr", "gcf_hr", "gcf_lr",
                                                         "delta_gcf_hr", "delta_gcf_lr", "tot_cs"};

    std::vector<EvaluationRow> rows;
    std::array<ColumnStats, 7> aggregate{};

    [[nodiscard]] static double column(const EvaluationRow& row, std::size_t index);
};

EvaluationRow evaluate_triple(const std::string& id, const Image& sr, const Image& hr, const Image& lr);

/// Matches the three sets by id (order of sr_set is kept). Throws DataError
/// listing every id that is missing from one of the sets.
EvaluationReport evaluate(const std::vector<NamedImage>& sr_set, const std::vector<NamedImage>& hr_set,
                          const std::vector<NamedImage>& lr_set);

void write_report_csv(const std::filesystem::path& path, const EvaluationReport& report);

/// Plain-text "mean +- std" table, one line per metric.
std::string format_report_table(const EvaluationReport& report);

/// Box plot of each column's per-image distribution.
void write_report_svg(const std::filesystem::path& path, const EvaluationReport& report);

}  // namespace fbsr
