#include "fbsr/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>

#include "fbsr/error.hpp"
#include "fbsr/random.hpp"

namespace fbsr {

std::string to_string(FrameRole role) {
    switch (role) {
        case FrameRole::InputLR: return "input-lr";
        case FrameRole::EstimatedHR: return "estimated-hr";
        case FrameRole::Natural: return "natural";
        case FrameRole::Derived: return "derived";
    }
    return "?";
}

std::string to_string(Domain domain) {
    switch (domain) {
        case Domain::InputLR: return "lr";
        case Domain::Nat: return "nat";
        case Domain::Orig: return "orig";
        case Domain::Syn: return "syn";
        case Domain::Res: return "res";
    }
    return "?";
}

std::string to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train: return "train";
        case SplitTag::Validation: return "validation";
        case SplitTag::Test: return "test";
    }
    return "?";
}

std::string to_string(SplitMode mode) { return mode == SplitMode::CS1 ? "cs1" : "cs2"; }

FrameRole parse_frame_role(const std::string& s) {
    for (auto r : {FrameRole::InputLR, FrameRole::EstimatedHR, FrameRole::Natural, FrameRole::Derived}) {
        if (to_string(r) == s) return r;
    }
    throw DataError("unknown frame role '" + s + "'");
}

Domain parse_domain(const std::string& s) {
    for (auto d : {Domain::InputLR, Domain::Nat, Domain::Orig, Domain::Syn, Domain::Res}) {
        if (to_string(d) == s) return d;
    }
    throw ConfigError("unknown domain '" + s + "' (expected nat, orig, syn or res)");
}

SplitMode parse_split_mode(const std::string& s) {
    if (s == "cs1" || s == "CS1") return SplitMode::CS1;
    if (s == "cs2" || s == "CS2") return SplitMode::CS2;
    throw ConfigError("unknown split mode '" + s + "' (expected cs1 or cs2)");
}

std::string Patch::pair_key() const { return frame_id + "@" + std::to_string(x) + "," + std::to_string(y); }

Image normalize_frame(const Image& raw, const FovMask& fov) {
    if (raw.empty()) throw DataError("cannot normalise an empty frame");
    const bool masked = !fov.inside.empty();
    if (masked && (fov.width != raw.width || fov.height != raw.height)) {
        throw ShapeError("field-of-view mask does not match frame size");
    }
    auto inside = [&](std::size_t i) { return !masked || fov.inside[i] != 0; };

    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!inside(i)) continue;
        sum += raw.pixels[i];
        ++count;
    }
    Image out(raw.width, raw.height, 0.0f);
    if (count == 0) return out;
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!inside(i)) continue;
        const double d = raw.pixels[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(count));
    std::vector<double> z(raw.size(), 0.0);
    double lo = 0.0;
    double hi = 0.0;
    bool first = true;
    if (sd > 0.0) {
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (!inside(i)) continue;
            z[i] = (raw.pixels[i] - mean) / sd;
            if (first || z[i] < lo) lo = z[i];
            if (first || z[i] > hi) hi = z[i];
            first = false;
        }
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!inside(i)) continue;
        out.pixels[i] = hi > lo ? static_cast<float>((z[i] - lo) / (hi - lo)) : 0.5f;
    }
    return out;
}

std::vector<PatchOrigin> patch_grid(int width, int height, int patch_size, const FovMask& fov, double min_coverage) {
    std::vector<PatchOrigin> out;
    if (patch_size < 1) throw ConfigError("patch size must be positive");
    const double area = static_cast<double>(patch_size) * patch_size;
    for (int y = 0; y + patch_size <= height; y += patch_size) {
        for (int x = 0; x + patch_size <= width; x += patch_size) {
            std::size_t inside = 0;
            for (int yy = y; yy < y + patch_size; ++yy) {
                for (int xx = x; xx < x + patch_size; ++xx) inside += fov.contains(xx, yy) ? 1 : 0;
            }
            if (static_cast<double>(inside) >= min_coverage * area) out.push_back({x, y});
        }
    }
    return out;
}

namespace {

Patch make_patch(const Frame& frame, const Image& source, int x, int y, int size) {
    Patch p;
    p.image = source.crop(x, y, size, size);
    p.frame_id = frame.id;
    p.x = x;
    p.y = y;
    p.video_id = frame.video_id;
    p.patient_id = frame.patient_id;
    p.setting = frame.setting;
    return p;
}

}  // namespace

std::vector<Patch> extract_patches(const Frame& frame, int patch_size, double min_coverage) {
    std::vector<Patch> out;
    for (const auto& o : patch_grid(frame.image.width, frame.image.height, patch_size, frame.fov, min_coverage)) {
        out.push_back(make_patch(frame, frame.image, o.x, o.y, patch_size));
    }
    return out;
}

const std::string& group_key(const Frame& frame, SplitMode mode) {
    return mode == SplitMode::CS1 ? frame.video_id : frame.patient_id;
}

SplitResult split_frames(const std::vector<Frame>& frames, SplitMode mode, const SplitFractions& fractions,
                         std::uint64_t seed) {
    const std::array<double, 3> f{fractions.train, fractions.validation, fractions.test};
    for (double v : f) {
        if (!(v >= 0.0)) throw ConfigError("split fractions must be non-negative");
    }
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

    struct Group {
        std::vector<std::size_t> frames;
        std::map<std::string, int> settings;
    };
    std::map<std::string, Group> groups;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& key = group_key(frames[i], mode);
        if (key.empty()) throw DataError("frame " + frames[i].id + " has no " +
                                         (mode == SplitMode::CS1 ? "video id" : "patient id"));
        auto& g = groups[key];
        g.frames.push_back(i);
        ++g.settings[frames[i].setting];
    }

    std::map<std::string, std::vector<std::string>> strata;
    for (const auto& [key, g] : groups) {
        const auto best = std::max_element(g.settings.begin(), g.settings.end(),
                                           [](const auto& a, const auto& b) { return a.second < b.second; });
        strata[best->first].push_back(key);
    }

    SplitResult result;
    result.assignment.assign(frames.size(), SplitTag::Train);
    std::mt19937_64 rng(derive_seed(seed, stable_hash("split")));
    constexpr std::array<SplitTag, 3> tags{SplitTag::Train, SplitTag::Validation, SplitTag::Test};
    for (auto& [setting, keys] : strata) {
        const int n = static_cast<int>(keys.size());
        if (n < 3) {
            result.warnings.push_back("stratum '" + setting + "' has only " + std::to_string(n) +
                                      " group(s); splits cannot all be represented");
        }
        std::shuffle(keys.begin(), keys.end(), rng);
        std::array<int, 3> counts{};
        std::array<double, 3> remainder{};
        int assigned = 0;
        for (int k = 0; k < 3; ++k) {
            const double q = f[k] * n;
            counts[k] = static_cast<int>(std::floor(q + 1e-9));
            remainder[k] = q - counts[k];
            assigned += counts[k];
        }
        while (assigned < n) {
            int best = 0;
            for (int k = 1; k < 3; ++k) {
                if (remainder[k] > remainder[best] + 1e-12) best = k;
            }
            ++counts[best];
            remainder[best] = -1.0;
            ++assigned;
        }
        int pos = 0;
        for (int k = 0; k < 3; ++k) {
            for (int c = 0; c < counts[k]; ++c, ++pos) {
                for (std::size_t i : groups[keys[pos]].frames) result.assignment[i] = tags[k];
            }
        }
    }
    return result;
}

Image box_downsample(const Image& image, int factor) {
    if (factor < 1 || image.width % factor != 0 || image.height % factor != 0) {
        throw ShapeError("box_downsample: size is not a multiple of the factor");
    }
    Image out(image.width / factor, image.height / factor);
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            double acc = 0.0;
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) acc += image.at(x * factor + dx, y * factor + dy);
            }
            out.at(x, y) = static_cast<float>(acc * inv);
        }
    }
    return out;
}

Dataset build_target_domain(Domain kind, const DomainSources& sources, int patch_size, double min_coverage) {
    Dataset ds;
    ds.domain = kind;
    ds.patch_size = patch_size;
    switch (kind) {
        case Domain::Nat:
            for (const Frame* f : sources.frames) {
                const Image img = normalize_frame(f->image);
                for (const auto& o : patch_grid(img.width, img.height, patch_size, {}, min_coverage)) {
                    ds.patches.push_back(make_patch(*f, img, o.x, o.y, patch_size));
                }
            }
            break;
        case Domain::Orig:
            for (const Frame* f : sources.frames) {
                auto patches = extract_patches(*f, patch_size, min_coverage);
                std::move(patches.begin(), patches.end(), std::back_inserter(ds.patches));
            }
            break;
        case Domain::Syn: {
            if (!sources.layout || !sources.noise) throw ConfigError("syn domain needs a fibre layout and noise model");
            for (std::size_t i = 0; i < sources.frames.size(); ++i) {
                const Frame& f = *sources.frames[i];
                NoiseModel noise = sources.noise->derive(stable_hash(f.id));
                Image lr = synthesize_lr(f.image, *sources.layout, noise);
                lr = normalize_frame(lr, f.fov);
                for (const auto& o : patch_grid(f.image.width, f.image.height, patch_size, f.fov, min_coverage)) {
                    Patch p = make_patch(f, f.image, o.x, o.y, patch_size);
                    p.paired_lr = lr.crop(o.x, o.y, patch_size, patch_size);
                    ds.patches.push_back(std::move(p));
                }
            }
            break;
        }
        case Domain::Res: {
            const int region = 4 * patch_size;
            for (const Frame* f : sources.frames) {
                for (const auto& o : patch_grid(f->image.width, f->image.height, region, f->fov, min_coverage)) {
                    Patch p = make_patch(*f, f->image, o.x, o.y, region);
                    p.image = box_downsample(p.image, 4);
                    ds.patches.push_back(std::move(p));
                }
            }
            if (ds.patches.empty()) {
                throw DataError("res domain needs LR regions of at least " + std::to_string(region) + "x" +
                                std::to_string(region) + " pixels inside the field of view");
            }
            break;
        }
        case Domain::InputLR:
            throw ConfigError("use build_input_domain for the input pool");
    }
    return ds;
}

Dataset build_input_domain(const std::vector<const Frame*>& frames, const FibreLayout& layout, int patch_size,
                           double min_coverage) {
    Dataset ds;
    ds.domain = Domain::InputLR;
    ds.patch_size = patch_size;
    std::map<std::pair<int, int>, std::shared_ptr<const FibreLayout>> cropped;
    for (const Frame* f : frames) {
        if (f->image.width != layout.width || f->image.height != layout.height) {
            throw DataError("frame " + f->id + " does not match the fibre layout size");
        }
        for (const auto& o : patch_grid(f->image.width, f->image.height, patch_size, f->fov, min_coverage)) {
            auto& lay = cropped[{o.x, o.y}];
            if (!lay) lay = std::make_shared<const FibreLayout>(crop_layout(layout, o.x, o.y, patch_size, patch_size));
            Patch p = make_patch(*f, f->image, o.x, o.y, patch_size);
            p.layout = lay;
            ds.patches.push_back(std::move(p));
        }
    }
    return ds;
}

// ---- procedural content ----

Image make_phantom(int width, int height, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(width, height, 0.0f);
    std::vector<double> acc(img.size(), 0.0);

    const double gx = u(rng) - 0.5;
    const double gy = u(rng) - 0.5;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            acc[static_cast<std::size_t>(y) * width + x] = 0.3 * (gx * x / width + gy * y / height);
        }
    }

    const double area = static_cast<double>(width) * height;
    const int cells = std::max(3, static_cast<int>(area / 300.0));
    for (int c = 0; c < cells; ++c) {
        const double cx = u(rng) * width;
        const double cy = u(rng) * height;
        const double r = 1.5 + 5.0 * u(rng);
        const double amp = 0.3 + 0.7 * u(rng);
        const int x0 = std::max(0, static_cast<int>(cx - 3 * r));
        const int x1 = std::min(width - 1, static_cast<int>(cx + 3 * r));
        const int y0 = std::max(0, static_cast<int>(cy - 3 * r));
        const int y1 = std::min(height - 1, static_cast<int>(cy + 3 * r));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - cx;
                const double dy = y + 0.5 - cy;
                acc[static_cast<std::size_t>(y) * width + x] += amp * std::exp(-(dx * dx + dy * dy) / (2 * r * r));
            }
        }
    }

    const int filaments = std::max(2, static_cast<int>(area / 1500.0));
    for (int k = 0; k < filaments; ++k) {
        const double theta = u(rng) * std::numbers::pi;
        const double ct = std::cos(theta);
        const double st = std::sin(theta);
        const double offset = (u(rng) - 0.5) * std::min(width, height);
        const double amplitude = 2.0 + 10.0 * u(rng);
        const double wavelength = 20.0 + 60.0 * u(rng);
        const double phase = u(rng) * 2 * std::numbers::pi;
        const double w = 0.7 + 1.3 * u(rng);
        const double amp = 0.4 + 0.6 * u(rng);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double px = x + 0.5 - width / 2.0;
                const double py = y + 0.5 - height / 2.0;
                const double along = px * ct + py * st;
                const double across = -px * st + py * ct;
                const double d = across - offset - amplitude * std::sin(2 * std::numbers::pi * along / wavelength + phase);
                acc[static_cast<std::size_t>(y) * width + x] += amp * std::exp(-d * d / (2 * w * w));
            }
        }
    }

    for (std::size_t i = 0; i < acc.size(); ++i) img.pixels[i] = static_cast<float>(acc[i]);
    return rescale_unit(img);
}

Image make_natural_standin(int width, int height, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> acc(static_cast<std::size_t>(width) * height, 0.0);
    for (int k = 0; k < 48; ++k) {
        const double f = 1.0 + 30.0 * u(rng) * u(rng);
        const double theta = u(rng) * 2 * std::numbers::pi;
        const double phase = u(rng) * 2 * std::numbers::pi;
        const double kx = f * std::cos(theta) / width;
        const double ky = f * std::sin(theta) / height;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                acc[static_cast<std::size_t>(y) * width + x] +=
                    std::cos(2 * std::numbers::pi * (kx * x + ky * y) + phase) / f;
            }
        }
    }
    for (int k = 0; k < 5; ++k) {
        const double cx = u(rng) * width;
        const double cy = u(rng) * height;
        const double r = (0.05 + 0.2 * u(rng)) * std::min(width, height);
        const double value = 2.0 * (u(rng) - 0.5);
        const bool disc = u(rng) < 0.5;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double dx = std::abs(x + 0.5 - cx);
                const double dy = std::abs(y + 0.5 - cy);
                const bool hit = disc ? dx * dx + dy * dy < r * r : (dx < r && dy < 0.6 * r);
                if (hit) acc[static_cast<std::size_t>(y) * width + x] = value;
            }
        }
    }
    Image img(width, height);
    for (std::size_t i = 0; i < acc.size(); ++i) img.pixels[i] = static_cast<float>(acc[i]);
    return rescale_unit(img);
}

Corpus make_synthetic_corpus(const CorpusConfig& config) {
    if (config.frames < 1 || config.videos < 1 || config.patients < 1 || config.settings < 1) {
        throw ConfigError("corpus counts must be positive");
    }
    Corpus corpus;
    corpus.layout = generate_layout(config.frame_size, config.frame_size, config.density, config.jitter,
                                    derive_seed(config.seed, stable_hash("layout")));
    const FovMask fov = config.circular_fov ? circular_fov(config.frame_size, config.frame_size) : FovMask{};
    const NoiseModel noise(config.sigma_add, config.sigma_mult, derive_seed(config.seed, stable_hash("noise")));
    for (int i = 0; i < config.frames; ++i) {
        const int video = i % config.videos;
        const int patient = video % config.patients;
        const int setting = patient % config.settings;
        char id[32];
        std::snprintf(id, sizeof id, "frame%04d", i);
        Frame hr;
        hr.id = id;
        hr.video_id = "video" + std::to_string(video);
        hr.patient_id = "patient" + std::to_string(patient);
        hr.setting = "setting" + std::to_string(setting);
        hr.role = FrameRole::EstimatedHR;
        hr.fov = fov;
        hr.image = normalize_frame(
            make_phantom(config.frame_size, config.frame_size, derive_seed(config.seed, stable_hash("phantom"), i)),
            fov);
        Frame lr = hr;
        lr.role = FrameRole::InputLR;
        NoiseModel frame_noise = noise.derive(static_cast<std::uint64_t>(i));
        lr.image = normalize_frame(synthesize_lr(hr.image, corpus.layout, frame_noise), fov);
        corpus.hr.push_back(std::move(hr));
        corpus.lr.push_back(std::move(lr));
    }
    return corpus;
}

// ---- files ----

void write_manifest(const std::filesystem::path& path, const std::vector<Frame>& frames) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& f : frames) {
        nlohmann::json j = {{"path", f.path.generic_string()}, {"video_id", f.video_id},
                            {"patient_id", f.patient_id},      {"setting", f.setting},
                            {"role", to_string(f.role)},       {"id", f.id}};
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("failed writing " + path.string());
}

std::vector<Frame> read_manifest(const std::filesystem::path& path, bool load_images) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    std::vector<Frame> frames;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        Frame f;
        f.path = j.at("path").get<std::string>();
        f.video_id = j.value("video_id", "");
        f.patient_id = j.value("patient_id", "");
        f.setting = j.value("setting", "");
        f.role = parse_frame_role(j.value("role", "input-lr"));
        f.id = j.value("id", f.path.stem().string());
        if (f.video_id.empty() || f.patient_id.empty()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": video_id and patient_id are required");
        }
        if (load_images) {
            const auto full = f.path.is_absolute() ? f.path : path.parent_path() / f.path;
            f.image = read_png(full);
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

namespace {

constexpr char kPackMagic[8] = {'F', 'B', 'S', 'R', 'P', 'A', 'K', '1'};

void write_floats(std::ofstream& out, const std::vector<float>& values) {
    std::vector<char> buf;
    buf.reserve(values.size() * 4);
    for (float v : values) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<float> read_floats(std::ifstream& in, std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError("truncated patch file");
    std::vector<float> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(buf[4 * k + i]) << (8 * i);
        out[k] = std::bit_cast<float>(bits);
    }
    return out;
}

}  // namespace

void write_packed_patches(const std::filesystem::path& path, const Dataset& dataset) {
    nlohmann::json index = nlohmann::json::array();
    for (const auto& p : dataset.patches) {
        index.push_back({{"frame_id", p.frame_id},
                         {"x", p.x},
                         {"y", p.y},
                         {"video_id", p.video_id},
                         {"patient_id", p.patient_id},
                         {"setting", p.setting},
                         {"paired", p.paired_lr.has_value()}});
    }
    const nlohmann::json header = {{"domain", to_string(dataset.domain)},
                                   {"split", to_string(dataset.split)},
                                   {"patch_size", dataset.patch_size},
                                   {"patches", index}};
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kPackMagic, sizeof kPackMagic);
    const auto len = static_cast<std::uint64_t>(text.size());
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xffu));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : dataset.patches) {
        write_floats(out, p.image.pixels);
        if (p.paired_lr) write_floats(out, p.paired_lr->pixels);
    }
    if (!out) throw DataError("failed writing " + path.string());
}

Dataset read_packed_patches(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kPackMagic)) throw DataError(path.string() + " is not a patch file");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(in.get())) << (8 * i);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated patch file header");
    const auto header = nlohmann::json::parse(text);
    Dataset ds;
    ds.patch_size = header.at("patch_size").get<int>();
    const std::string domain = header.at("domain").get<std::string>();
    ds.domain = domain == "lr" ? Domain::InputLR : parse_domain(domain);
    const std::string split = header.at("split").get<std::string>();
    ds.split = split == "validation" ? SplitTag::Validation : split == "test" ? SplitTag::Test : SplitTag::Train;
    const std::size_t n = static_cast<std::size_t>(ds.patch_size) * ds.patch_size;
    for (const auto& e : header.at("patches")) {
        Patch p;
        p.frame_id = e.at("frame_id").get<std::string>();
        p.x = e.at("x").get<int>();
        p.y = e.at("y").get<int>();
        p.video_id = e.value("video_id", "");
        p.patient_id = e.value("patient_id", "");
        p.setting = e.value("setting", "");
        p.image = Image(ds.patch_size, ds.patch_size, read_floats(in, n));
        if (e.value("paired", false)) p.paired_lr = Image(ds.patch_size, ds.patch_size, read_floats(in, n));
        ds.patches.push_back(std::move(p));
    }
    return ds;
}

}  // namespace fbsr
