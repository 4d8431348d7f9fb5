// fbsr command-line front end: synth, train, infer, eval, report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "fbsr/config.hpp"
#include "fbsr/data.hpp"
#include "fbsr/error.hpp"
#include "fbsr/metrics.hpp"
#include "fbsr/models.hpp"
#include "fbsr/random.hpp"
#include "fbsr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw fbsr::DataError("cannot read " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char byte[3];
    for (unsigned i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", digest[i]);
        hex += byte;
    }
    return hex;
}

/// Records what a command read and how it was configured.
struct RunManifest {
    std::string command;
    json config = json::object();
    json seeds = json::object();
    json inputs = json::array();
    json outputs = json::array();

    void add_input(const fs::path& p) { inputs.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}}); }

    void write(const fs::path& dir) const {
        json j = {{"tool", "fbsr"}, {"command", command}, {"config", config},
                  {"seeds", seeds}, {"inputs", inputs},   {"outputs", outputs}};
        std::ofstream out(dir / "run_manifest.json");
        if (!out) throw fbsr::DataError("cannot write " + (dir / "run_manifest.json").string());
        out << j.dump(2) << '\n';
    }
};

fs::path output_dir(const std::string& given, const std::string& command) {
    fs::path out;
    if (!given.empty()) {
        out = given;
    } else {
        const char* root = std::getenv("FBSR_OUTPUT_ROOT");
        out = fs::path(root && *root ? root : "fbsr_output") / command;
    }
    fs::create_directories(out);
    return out;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw fbsr::DataError(dir.string() + " is not a directory");
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<fbsr::NamedImage> load_named(const fs::path& dir, RunManifest& manifest) {
    std::vector<fbsr::NamedImage> out;
    for (const auto& p : list_pngs(dir)) {
        manifest.add_input(p);
        out.push_back({fs::relative(p, dir).replace_extension().generic_string(), fbsr::read_png(p)});
    }
    if (out.empty()) throw fbsr::DataError("no PNG images in " + dir.string());
    return out;
}

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<long> seed;
    std::string out;

    fbsr::RunConfig resolve() const {
        fbsr::RunConfig config;
        if (!config_file.empty()) config.load_file(config_file);
        for (const auto& o : overrides) config.apply_override(o);
        if (seed) config.set("run.seed", std::to_string(*seed));
        return config;
    }
};

// ---- synth ----

struct SynthOptions {
    std::optional<int> frames;
    std::optional<int> frame_size;
    std::optional<std::string> density;
    std::optional<double> sigma_add;
    std::optional<double> sigma_mult;
};

int run_synth(const CommonOptions& common, const SynthOptions& opt) {
    auto config = common.resolve();
    if (opt.frames) config.set("data.frames", std::to_string(*opt.frames));
    if (opt.frame_size) config.set("layout.frame_size", std::to_string(*opt.frame_size));
    if (opt.density) config.set("layout.density", *opt.density);
    if (opt.sigma_add) config.set("noise.sigma_add", std::to_string(*opt.sigma_add));
    if (opt.sigma_mult) config.set("noise.sigma_mult", std::to_string(*opt.sigma_mult));

    const fs::path out = output_dir(common.out, "synth");
    const auto cc = config.corpus();
    fbsr::Corpus corpus = fbsr::make_synthetic_corpus(cc);
    fs::create_directories(out / "hr");
    fs::create_directories(out / "lr");
    std::vector<fbsr::Frame> entries;
    for (std::size_t i = 0; i < corpus.hr.size(); ++i) {
        for (auto* f : {&corpus.hr[i], &corpus.lr[i]}) {
            const std::string sub = f->role == fbsr::FrameRole::InputLR ? "lr" : "hr";
            f->path = fs::path(sub) / (f->id + ".png");
            fbsr::write_png(out / f->path, f->image);
            entries.push_back(*f);
        }
    }
    fbsr::write_manifest(out / "manifest.jsonl", entries);
    fbsr::save_layout(out / "layout.json", corpus.layout);

    RunManifest m{"synth"};
    m.config = config.to_json();
    m.seeds = {{"master", cc.seed},
               {"layout", fbsr::derive_seed(cc.seed, fbsr::stable_hash("layout"))},
               {"noise", fbsr::derive_seed(cc.seed, fbsr::stable_hash("noise"))}};
    m.outputs = {"manifest.jsonl", "layout.json", "hr/", "lr/"};
    m.write(out);
    std::cout << "wrote " << corpus.hr.size() << " HR/LR frame pairs and a layout with "
              << corpus.layout.fibre_count() << " fibres to " << out.string() << '\n';
    return kExitOk;
}

// ---- train ----

struct TrainOptions {
    std::string data;
    std::optional<long> iterations;
    std::string target_domain;
    std::string split;
    std::string natural_dir;
    std::string resume;
};

int run_train(const CommonOptions& common, const TrainOptions& opt) {
    auto config = common.resolve();
    if (opt.iterations) config.set("training.iterations", std::to_string(*opt.iterations));
    if (!opt.target_domain.empty()) config.set("data.target_domain", opt.target_domain);
    if (!opt.split.empty()) config.set("data.split_mode", opt.split);
    if (!opt.natural_dir.empty()) config.set("data.natural_dir", opt.natural_dir);

    const auto domain = fbsr::parse_domain(config.get_string("data.target_domain"));
    if (domain == fbsr::Domain::InputLR) throw fbsr::ConfigError("target domain must be nat, orig, syn or res");
    const auto split_mode = fbsr::parse_split_mode(config.get_string("data.split_mode"));
    const auto gcfg = config.generator();
    const auto dcfg = config.discriminator();
    auto tcfg = config.training();
    const int patch = static_cast<int>(config.get_int("data.patch_size"));
    const double coverage = config.get_double("data.min_coverage");
    const auto seed = static_cast<std::uint64_t>(config.get_int("run.seed"));

    const fs::path data_dir = opt.data;
    RunManifest m{"train"};
    m.add_input(data_dir / "manifest.jsonl");
    m.add_input(data_dir / "layout.json");
    std::vector<fbsr::Frame> frames = fbsr::read_manifest(data_dir / "manifest.jsonl");
    const fbsr::FibreLayout layout = fbsr::load_layout(data_dir / "layout.json");
    for (auto& f : frames) {
        m.add_input(data_dir / f.path);
        if (config.get_bool("data.circular_fov")) f.fov = fbsr::circular_fov(f.image.width, f.image.height);
    }

    std::vector<fbsr::Frame> lr_frames;
    std::map<std::string, const fbsr::Frame*> hr_by_id;
    for (const auto& f : frames) {
        if (f.role == fbsr::FrameRole::InputLR) lr_frames.push_back(f);
        if (f.role == fbsr::FrameRole::EstimatedHR) hr_by_id[f.id] = &f;
    }
    if (lr_frames.empty()) throw fbsr::DataError("manifest lists no input-LR frames");
    for (auto& f : lr_frames) f.image = fbsr::normalize_frame(f.image, f.fov);

    fbsr::SplitFractions fr{config.get_double("data.train_fraction"), config.get_double("data.validation_fraction"),
                            config.get_double("data.test_fraction")};
    const fbsr::SplitResult split = fbsr::split_frames(lr_frames, split_mode, fr, seed);
    for (const auto& w : split.warnings) std::cerr << "warning: " << w << '\n';

    std::vector<const fbsr::Frame*> lr_train, lr_val, target_frames;
    json split_json = json::object();
    for (std::size_t i = 0; i < lr_frames.size(); ++i) {
        split_json[lr_frames[i].id] = fbsr::to_string(split.assignment[i]);
        if (split.assignment[i] == fbsr::SplitTag::Train) lr_train.push_back(&lr_frames[i]);
        if (split.assignment[i] == fbsr::SplitTag::Validation) lr_val.push_back(&lr_frames[i]);
    }
    if (lr_train.empty()) throw fbsr::DataError("the training split is empty");

    // Target-domain sources come from training-split scenes only.
    std::vector<fbsr::Frame> naturals;
    if (domain == fbsr::Domain::Orig || domain == fbsr::Domain::Syn) {
        for (const auto* f : lr_train) {
            const auto it = hr_by_id.find(f->id);
            if (it == hr_by_id.end()) throw fbsr::DataError("no HR estimate for training frame " + f->id);
            target_frames.push_back(it->second);
        }
    } else if (domain == fbsr::Domain::Res) {
        target_frames = lr_train;
    } else {
        const std::string nat_dir = config.get_string("data.natural_dir");
        if (!nat_dir.empty()) {
            for (const auto& p : list_pngs(nat_dir)) {
                m.add_input(p);
                fbsr::Frame f;
                f.id = p.stem().string();
                f.role = fbsr::FrameRole::Natural;
                f.image = fbsr::read_png(p);
                naturals.push_back(std::move(f));
            }
        } else {
            for (std::size_t i = 0; i < lr_train.size(); ++i) {
                fbsr::Frame f;
                f.id = "natural" + std::to_string(i);
                f.role = fbsr::FrameRole::Natural;
                f.image = fbsr::make_natural_standin(lr_train[i]->image.width, lr_train[i]->image.height,
                                                     fbsr::derive_seed(seed, fbsr::stable_hash("natural"), i));
                naturals.push_back(std::move(f));
            }
        }
        for (const auto& f : naturals) target_frames.push_back(&f);
    }

    const fbsr::NoiseModel syn_noise(config.get_double("noise.sigma_add"), config.get_double("noise.sigma_mult"),
                                     fbsr::derive_seed(seed, fbsr::stable_hash("syn-noise")));
    fbsr::DomainSources sources{target_frames, &layout, &syn_noise};
    const fbsr::Dataset hr_train = fbsr::build_target_domain(domain, sources, patch, coverage);
    fbsr::Dataset lr_train_set = fbsr::build_input_domain(lr_train, layout, patch, coverage);
    const long cap = config.get_int("data.max_train_patches");
    if (cap > 0 && lr_train_set.patches.size() > static_cast<std::size_t>(cap)) {
        std::mt19937_64 rng(fbsr::derive_seed(seed, fbsr::stable_hash("patch-cap")));
        std::shuffle(lr_train_set.patches.begin(), lr_train_set.patches.end(), rng);
        lr_train_set.patches.resize(static_cast<std::size_t>(cap));
    }
    std::optional<fbsr::Dataset> lr_val_set;
    if (!lr_val.empty()) {
        lr_val_set = fbsr::build_input_domain(lr_val, layout, patch, coverage);
        lr_val_set->split = fbsr::SplitTag::Validation;
    }

    const fs::path out = output_dir(common.out, "train");
    fbsr::Trainer trainer(gcfg, dcfg, tcfg, lr_train_set, hr_train, lr_val_set ? &*lr_val_set : nullptr);
    if (!opt.resume.empty()) {
        m.add_input(opt.resume);
        trainer.load_state(fbsr::read_checkpoint(opt.resume));
    }

    m.config = config.to_json();
    m.seeds = {{"master", seed},
               {"generator", fbsr::derive_seed(seed, fbsr::stable_hash("generator"))},
               {"discriminator", fbsr::derive_seed(seed, fbsr::stable_hash("discriminator"))},
               {"split", fbsr::derive_seed(seed, fbsr::stable_hash("split"))}};
    m.outputs = {"training_log.csv", "validation.csv", "best.json", "final.json", "split.json"};
    {
        std::ofstream s(out / "split.json");
        s << split_json.dump(2) << '\n';
    }
    m.write(out);

    std::cout << "input patches: " << lr_train_set.size() << " train, " << (lr_val_set ? lr_val_set->size() : 0)
              << " validation; target domain " << fbsr::to_string(domain) << ": " << hr_train.size()
              << " patches\n";
    const long every = std::max<long>(1, tcfg.validate_every > 0 ? tcfg.validate_every : 100);
    const auto summary = fbsr::train(trainer, out, [&](const fbsr::IterationResult& r) {
        if (r.iteration % every == 0) {
            std::printf("iter %6ld  l_vec %.6f  l_adv %.4f  l_reg %.6f  d_loss %.4f\n", r.iteration,
                        r.losses.l_vec, r.losses.l_adv, r.losses.l_reg, r.d_loss);
            std::fflush(stdout);
        }
    });
    std::printf("done: %ld iterations, validation l_vec %.6g -> %.6g (best %.6g)\n", summary.iterations,
                summary.initial_validation, summary.final_validation, summary.best_validation);
    return kExitOk;
}

// ---- infer ----

int run_infer(const CommonOptions& common, const std::string& checkpoint_path, const std::string& input) {
    RunManifest m{"infer"};
    m.add_input(checkpoint_path);
    const fbsr::Checkpoint cp = fbsr::read_checkpoint(checkpoint_path);
    if (!cp.metadata.contains("generator")) throw fbsr::DataError(checkpoint_path + " holds no generator");
    const auto gcfg = fbsr::generator_config_from_json(cp.metadata["generator"]);
    fbsr::Generator g(gcfg, 0);
    g.load_state(cp, "generator/");

    const fs::path out = output_dir(common.out, "infer");
    const fs::path in_path = input;
    std::vector<std::pair<fs::path, fs::path>> jobs;  // source, relative output
    if (fs::is_directory(in_path)) {
        for (const auto& p : list_pngs(in_path)) jobs.emplace_back(p, fs::relative(p, in_path));
    } else {
        jobs.emplace_back(in_path, in_path.filename());
    }
    if (jobs.empty()) throw fbsr::DataError("no PNG images in " + input);

    fbsr::ad::NoGradGuard no_grad;
    for (const auto& [src, rel] : jobs) {
        m.add_input(src);
        const fbsr::Image lr = fbsr::normalize_frame(fbsr::read_png(src));
        auto x = fbsr::ad::Tensor::from({1, 1, lr.height, lr.width}, lr.pixels);
        const auto y = g.forward(x, false);
        fbsr::Image sr{lr.width, lr.height, std::vector<float>(y.data().begin(), y.data().end())};
        const fs::path dst = out / rel;
        fs::create_directories(dst.parent_path());
        fbsr::write_png(dst, sr);
        m.outputs.push_back(rel.generic_string());
    }
    m.config = {{"generator", fbsr::to_json(gcfg)}, {"checkpoint", checkpoint_path}};
    m.write(out);
    std::cout << "wrote " << jobs.size() << " images to " << out.string() << '\n';
    return kExitOk;
}

// ---- eval ----

int run_eval(const CommonOptions& common, const std::string& sr_dir, const std::string& hr_dir,
             const std::string& lr_dir, bool svg) {
    auto config = common.resolve();
    RunManifest m{"eval"};
    const auto sr = load_named(sr_dir, m);
    const auto hr = load_named(hr_dir, m);
    const auto lr = load_named(lr_dir, m);
    const auto report = fbsr::evaluate(sr, hr, lr);
    const fs::path out = output_dir(common.out, "eval");
    fbsr::write_report_csv(out / "report.csv", report);
    const std::string table = fbsr::format_report_table(report);
    {
        std::ofstream t(out / "report.txt");
        t << table;
    }
    m.outputs = {"report.csv", "report.txt"};
    if (svg && config.get_bool("metrics.svg")) {
        fbsr::write_report_svg(out / "report.svg", report);
        m.outputs.push_back("report.svg");
    }
    m.config = config.to_json();
    m.write(out);
    std::cout << table;
    return kExitOk;
}

// ---- report ----

struct Series {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
};

Series read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw fbsr::DataError("cannot read " + path.string());
    Series s;
    std::string line;
    if (!std::getline(in, line)) throw fbsr::DataError(path.string() + " is empty");
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) s.names.push_back(cell);
    s.columns.resize(s.names.size());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        for (std::size_t c = 0; c < s.names.size(); ++c) {
            if (!std::getline(ls, cell, ',')) throw fbsr::DataError("short row in " + path.string());
            s.columns[c].push_back(std::strtod(cell.c_str(), nullptr));
        }
    }
    return s;
}

void write_curves_svg(const fs::path& path, const Series& log) {
    const int panel_w = 360, panel_h = 200, pad = 40;
    const std::size_t n = log.names.size() - 1;
    const int cols = 3;
    const int rows = static_cast<int>((n + cols - 1) / cols);
    std::ofstream out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * (panel_w + pad) + pad << "\" height=\""
        << rows * (panel_h + pad) + pad << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    const auto& x = log.columns[0];
    for (std::size_t k = 0; k < n; ++k) {
        const auto& y = log.columns[k + 1];
        const int ox = pad + static_cast<int>(k % cols) * (panel_w + pad);
        const int oy = pad + static_cast<int>(k / cols) * (panel_h + pad);
        out << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << panel_w << "\" height=\"" << panel_h
            << "\" fill=\"none\" stroke=\"#888\"/>\n";
        out << "<text x=\"" << ox << "\" y=\"" << oy - 6 << "\">" << log.names[k + 1] << "</text>\n";
        if (y.empty()) continue;
        double lo = *std::min_element(y.begin(), y.end());
        double hi = *std::max_element(y.begin(), y.end());
        if (!(hi > lo)) hi = lo + 1.0;
        const double x0 = x.front(), x1 = x.back() > x.front() ? x.back() : x.front() + 1.0;
        out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1\" points=\"";
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double px = ox + (x[i] - x0) / (x1 - x0) * panel_w;
            const double py = oy + panel_h - (y[i] - lo) / (hi - lo) * panel_h;
            out << px << ',' << py << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << ox + 4 << "\" y=\"" << oy + 12 << "\">" << hi << "</text>\n";
        out << "<text x=\"" << ox + 4 << "\" y=\"" << oy + panel_h - 4 << "\">" << lo << "</text>\n";
    }
    out << "</svg>\n";
}

int run_report(const CommonOptions& common, const std::string& run_dir) {
    const fs::path run = run_dir;
    const fs::path out = common.out.empty() ? run : output_dir(common.out, "report");
    std::ostringstream text;
    bool found = false;
    if (fs::exists(run / "training_log.csv")) {
        found = true;
        const Series log = read_csv(run / "training_log.csv");
        const std::size_t rows = log.columns[0].size();
        text << "training iterations: " << rows << '\n';
        const std::size_t window = std::min<std::size_t>(rows, 100);
        for (std::size_t c = 1; c < log.names.size() && rows > 0; ++c) {
            const auto& col = log.columns[c];
            const double first = std::accumulate(col.begin(), col.begin() + window, 0.0) / window;
            const double last = std::accumulate(col.end() - window, col.end(), 0.0) / window;
            char line[160];
            std::snprintf(line, sizeof line, "  %-8s first %zu mean %.6g, last %zu mean %.6g\n",
                          log.names[c].c_str(), window, first, window, last);
            text << line;
        }
        write_curves_svg(out / "loss_curves.svg", log);
    }
    if (fs::exists(run / "validation.csv")) {
        found = true;
        const Series val = read_csv(run / "validation.csv");
        const auto& v = val.columns.at(1);
        if (!v.empty()) {
            const auto best = std::min_element(v.begin(), v.end());
            char line[200];
            std::snprintf(line, sizeof line, "validation l_vec: initial %.6g, final %.6g, best %.6g at iteration %ld\n",
                          v.front(), v.back(), *best,
                          static_cast<long>(val.columns[0][static_cast<std::size_t>(best - v.begin())]));
            text << line;
        }
    }
    if (fs::exists(run / "report.csv")) {
        found = true;
        const Series rep = read_csv(run / "report.csv");
        text << "evaluation over " << rep.columns[0].size() << " images:\n";
        for (std::size_t c = 1; c < rep.names.size(); ++c) {
            const auto& col = rep.columns[c];
            if (col.empty()) continue;
            const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
            char line[120];
            std::snprintf(line, sizeof line, "  %-12s mean %.4f\n", rep.names[c].c_str(), mean);
            text << line;
        }
    }
    if (!found) throw fbsr::DataError("no training logs or evaluation report in " + run.string());
    std::ofstream(out / "summary.txt") << text.str();
    std::cout << text.str();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fibre-bundle image super-resolution toolkit"};
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_file, "sectioned key = value configuration file");
        sub->add_option("--set", common.overrides, "override a configuration key (section.key=value)");
        sub->add_option("--seed", common.seed, "master seed (run.seed)");
        sub->add_option("-o,--out", common.out, "output directory (default $FBSR_OUTPUT_ROOT/<command>)");
    };

    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic HR/LR corpus and fibre layout");
    add_common(synth_cmd);
    synth_cmd->add_option("--frames", synth.frames, "number of frames");
    synth_cmd->add_option("--frame-size", synth.frame_size, "frame side in pixels");
    synth_cmd->add_option("--density", synth.density, "fibres per pixel, e.g. 1/7");
    synth_cmd->add_option("--noise-add", synth.sigma_add, "additive noise std");
    synth_cmd->add_option("--noise-mult", synth.sigma_mult, "multiplicative noise std");

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "train a generator on a corpus");
    add_common(train_cmd);
    train_cmd->add_option("-d,--data", train.data, "corpus directory (manifest.jsonl, layout.json)")->required();
    train_cmd->add_option("--iterations", train.iterations, "training iterations");
    train_cmd->add_option("--target-domain", train.target_domain, "nat, orig, syn or res");
    train_cmd->add_option("--split", train.split, "cs1 (by video) or cs2 (by patient)");
    train_cmd->add_option("--natural-dir", train.natural_dir, "natural images for the nat target domain");
    train_cmd->add_option("--resume", train.resume, "training checkpoint to resume from");

    std::string checkpoint, infer_input;
    auto* infer_cmd = app.add_subcommand("infer", "super-resolve full frames with a trained generator");
    add_common(infer_cmd);
    infer_cmd->add_option("--checkpoint", checkpoint, "checkpoint manifest (.json)")->required();
    infer_cmd->add_option("-i,--input", infer_input, "PNG file or directory of PNGs")->required();

    std::string sr_dir, hr_dir, lr_dir;
    bool svg = true;
    auto* eval_cmd = app.add_subcommand("eval", "score SR images against HR estimates and LR inputs");
    add_common(eval_cmd);
    eval_cmd->add_option("--sr", sr_dir, "directory of SR images")->required();
    eval_cmd->add_option("--hr", hr_dir, "directory of HR estimates")->required();
    eval_cmd->add_option("--lr", lr_dir, "directory of LR inputs")->required();
    eval_cmd->add_flag("--svg,!--no-svg", svg, "write a box-plot SVG (default on)");

    std::string run_dir;
    auto* report_cmd = app.add_subcommand("report", "summarise training logs and evaluation reports");
    add_common(report_cmd);
    report_cmd->add_option("--run", run_dir, "directory written by train or eval")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*synth_cmd) return run_synth(common, synth);
        if (*train_cmd) return run_train(common, train);
        if (*infer_cmd) return run_infer(common, checkpoint, infer_input);
        if (*eval_cmd) return run_eval(common, sr_dir, hr_dir, lr_dir, svg);
        if (*report_cmd) return run_report(common, run_dir);
    } catch (const fbsr::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const fbsr::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const fbsr::Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitOk;
}
