#include "fbsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fbsr/error.hpp"

namespace fbsr {

namespace {

std::vector<double> gaussian_window() {
    std::vector<double> w(kSsimWindow);
    const int r = kSsimWindow / 2;
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - r;
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Separable 'valid' filtering of a w x h plane.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int ow = w - n + 1;
    const int oh = h - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ShapeError("ssim: image sizes differ (" + std::to_string(a.width) + "x" + std::to_string(a.height) +
                         " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
    }
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw ShapeError("ssim: images must be at least 11x11");
    }
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const int w = a.width;
    const int h = a.height;
    const std::size_t n = a.size();
    std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        pa[i] = a.pixels[i];
        pb[i] = b.pixels[i];
        aa[i] = pa[i] * pa[i];
        bb[i] = pb[i] * pb[i];
        ab[i] = pa[i] * pb[i];
    }
    const auto k = gaussian_window();
    const auto mu_a = filter_valid(pa, w, h, k);
    const auto mu_b = filter_valid(pb, w, h, k);
    const auto e_aa = filter_valid(aa, w, h, k);
    const auto e_bb = filter_valid(bb, w, h, k);
    const auto e_ab = filter_valid(ab, w, h, k);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

double gcf_weight(int level) {
    const double t = static_cast<double>(level) / kGcfLevels;
    return (-0.406385 * t + 0.334573) * t + 0.0877526;
}

double gcf_level_contrast(const Image& image) {
    const int w = image.width;
    const int h = image.height;
    if (w == 0 || h == 0) return 0.0;
    std::vector<double> lum(image.size());
    for (std::size_t i = 0; i < lum.size(); ++i) {
        const double p = std::clamp(static_cast<double>(image.pixels[i]), 0.0, 1.0);
        lum[i] = 100.0 * std::sqrt(std::pow(p, 2.2));
    }
    double total = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double c = lum[static_cast<std::size_t>(y) * w + x];
            double acc = 0.0;
            int count = 0;
            auto visit = [&](int nx, int ny) {
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) return;
                acc += std::abs(c - lum[static_cast<std::size_t>(ny) * w + nx]);
                ++count;
            };
            visit(x - 1, y);
            visit(x + 1, y);
            visit(x, y - 1);
            visit(x, y + 1);
            if (count > 0) total += acc / count;
        }
    }
    return total / static_cast<double>(w * h);
}

double gcf(const Image& image) {
    Image level = image;
    double total = 0.0;
    for (int i = 1; i <= kGcfLevels; ++i) {
        if (level.width == 0 || level.height == 0) break;
        total += gcf_weight(i) * gcf_level_contrast(level);
        const int nw = level.width / 2;
        const int nh = level.height / 2;
        Image next(nw, nh);
        for (int y = 0; y < nh; ++y) {
            for (int x = 0; x < nw; ++x) {
                next.at(x, y) = 0.25f * (level.at(2 * x, 2 * y) + level.at(2 * x + 1, 2 * y) +
                                         level.at(2 * x, 2 * y + 1) + level.at(2 * x + 1, 2 * y + 1));
            }
        }
        level = std::move(next);
    }
    return total;
}

double tot_cs(double ssim_hr, double delta_gcf_hr) {
    return ((ssim_hr - 0.6) / 0.4 + (delta_gcf_hr + 0.5) / 1.8) / 2.0;
}

double EvaluationReport::column(const EvaluationRow& row, std::size_t index) {
    switch (index) {
        case 0: return row.ssim_hr;
        case 1: return row.gcf_sr;
        case 2: return row.gcf_hr;
        case 3: return row.gcf_lr;
        case 4: return row.delta_gcf_hr;
        case 5: return row.delta_gcf_lr;
        case 6: return row.tot_cs;
        default: throw ShapeError("report column out of range");
    }
}

EvaluationRow evaluate_triple(const std::string& id, const Image& sr, const Image& hr, const Image& lr) {
    EvaluationRow row;
    row.image_id = id;
    row.ssim_hr = ssim(sr, hr);
    row.gcf_sr = gcf(sr);
    row.gcf_hr = gcf(hr);
    row.gcf_lr = gcf(lr);
    row.delta_gcf_hr = row.gcf_sr - row.gcf_hr;
    row.delta_gcf_lr = row.gcf_sr - row.gcf_lr;
    row.tot_cs = tot_cs(row.ssim_hr, row.delta_gcf_hr);
    return row;
}

EvaluationReport evaluate(const std::vector<NamedImage>& sr_set, const std::vector<NamedImage>& hr_set,
                          const std::vector<NamedImage>& lr_set) {
    std::map<std::string, const Image*> hr;
    std::map<std::string, const Image*> lr;
    for (const auto& e : hr_set) hr[e.id] = &e.image;
    for (const auto& e : lr_set) lr[e.id] = &e.image;

    std::vector<std::string> missing;
    std::map<std::string, bool> in_sr;
    for (const auto& e : sr_set) {
        in_sr[e.id] = true;
        if (!hr.count(e.id)) missing.push_back(e.id + " (hr)");
        if (!lr.count(e.id)) missing.push_back(e.id + " (lr)");
    }
    for (const auto& [id, _] : hr) {
        if (!in_sr.count(id)) missing.push_back(id + " (sr)");
    }
    for (const auto& [id, _] : lr) {
        if (!in_sr.count(id) && !hr.count(id)) missing.push_back(id + " (sr)");
    }
    if (!missing.empty()) {
        std::string msg = "unmatched images:";
        for (const auto& m : missing) msg += " " + m;
        throw DataError(msg);
    }

    EvaluationReport report;
    for (const auto& e : sr_set) report.rows.push_back(evaluate_triple(e.id, e.image, *hr[e.id], *lr[e.id]));
    const double n = static_cast<double>(report.rows.size());
    for (std::size_t c = 0; c < EvaluationReport::kColumns.size(); ++c) {
        if (report.rows.empty()) break;
        double sum = 0.0;
        for (const auto& r : report.rows) sum += EvaluationReport::column(r, c);
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& r : report.rows) {
            const double d = EvaluationReport::column(r, c) - mean;
            ss += d * d;
        }
        report.aggregate[c] = {mean, report.rows.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
    }
    return report;
}

void write_report_csv(const std::filesystem::path& path, const EvaluationReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "image_id";
    for (const char* c : EvaluationReport::kColumns) out << ',' << c;
    out << '\n';
    for (const auto& r : report.rows) {
        out << r.image_id;
        for (std::size_t c = 0; c < EvaluationReport::kColumns.size(); ++c) {
            out << ',' << format_double(EvaluationReport::column(r, c));
        }
        out << '\n';
    }
    if (!out) throw DataError("failed writing " + path.string());
}

std::string format_report_table(const EvaluationReport& report) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-14s %10s %10s\n", "metric", "mean", "std");
    out << line;
    for (std::size_t c = 0; c < EvaluationReport::kColumns.size(); ++c) {
        std::snprintf(line, sizeof line, "%-14s %10.4f %10.4f\n", EvaluationReport::kColumns[c],
                      report.aggregate[c].mean, report.aggregate[c].std);
        out << line;
    }
    std::snprintf(line, sizeof line, "images: %zu\n", report.rows.size());
    out << line;
    return out.str();
}

void write_report_svg(const std::filesystem::path& path, const EvaluationReport& report) {
    constexpr int panel_w = 120;
    constexpr int panel_h = 260;
    constexpr int margin = 30;
    const int columns = static_cast<int>(EvaluationReport::kColumns.size());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << columns * panel_w << "\" height=\""
        << panel_h + 2 * margin << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int c = 0; c < columns; ++c) {
        std::vector<double> v;
        for (const auto& r : report.rows) v.push_back(EvaluationReport::column(r, c));
        std::sort(v.begin(), v.end());
        const int x0 = c * panel_w;
        out << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << margin - 10 << "\" text-anchor=\"middle\">"
            << EvaluationReport::kColumns[c] << "</text>\n";
        if (v.empty()) continue;
        auto quantile = [&](double q) {
            const double pos = q * static_cast<double>(v.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, v.size() - 1);
            return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
        };
        double lo = v.front();
        double hi = v.back();
        if (hi - lo < 1e-12) {
            lo -= 0.5;
            hi += 0.5;
        }
        auto y = [&](double value) { return margin + panel_h * (1.0 - (value - lo) / (hi - lo)); };
        const double cx = x0 + panel_w / 2.0;
        const double q1 = quantile(0.25);
        const double med = quantile(0.5);
        const double q3 = quantile(0.75);
        out << "<line x1=\"" << cx << "\" y1=\"" << y(v.back()) << "\" x2=\"" << cx << "\" y2=\"" << y(v.front())
            << "\" stroke=\"black\"/>\n";
        out << "<rect x=\"" << cx - 25 << "\" y=\"" << y(q3) << "\" width=\"50\" height=\"" << y(q1) - y(q3)
            << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
        out << "<line x1=\"" << cx - 25 << "\" y1=\"" << y(med) << "\" x2=\"" << cx + 25 << "\" y2=\"" << y(med)
            << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << cx + 30 << "\" y=\"" << y(v.back()) + 4 << "\">" << format_double(v.back()).substr(0, 6)
            << "</text>\n";
        out << "<text x=\"" << cx + 30 << "\" y=\"" << y(v.front()) + 4 << "\">"
            << format_double(v.front()).substr(0, 6) << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace fbsr
