#include "fbsr/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fbsr/error.hpp"

namespace fbsr {

namespace {

using Type = RunConfig::Type;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long parse_int(const std::string& key, const std::string& v) {
    long out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    // Fractions such as 1/7 are accepted for densities.
    const auto slash = v.find('/');
    if (slash != std::string::npos) {
        const double num = parse_double(key, trim(v.substr(0, slash)));
        const double den = parse_double(key, trim(v.substr(slash + 1)));
        if (den == 0.0) throw ConfigError(key + ": division by zero");
        return num / den;
    }
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(key, trim(item))));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
}

void check_value(const std::string& key, Type type, const std::string& v) {
    switch (type) {
        case Type::Int: parse_int(key, v); break;
        case Type::Double: parse_double(key, v); break;
        case Type::Bool: parse_bool(key, v); break;
        case Type::IntList: parse_int_list(key, v); break;
        case Type::String: break;
    }
}

}  // namespace

const std::map<std::string, RunConfig::KeyInfo>& RunConfig::registry() {
    static const std::map<std::string, KeyInfo> keys = {
        {"run.seed", {Type::Int, "1234", "master seed; every random stream is derived from it"}},

        {"layout.frame_size", {Type::Int, "128", "side of synthetic frames in pixels"}},
        {"layout.density", {Type::Double, "1/7", "fibres per pixel"}},
        {"layout.jitter", {Type::Double, "0.2", "uniform jitter as a fraction of the lattice pitch"}},

        {"noise.sigma_add", {Type::Double, "0.02", "additive fibre noise std"}},
        {"noise.sigma_mult", {Type::Double, "0.05", "multiplicative fibre noise std"}},

        {"data.frames", {Type::Int, "20", "number of synthetic frames"}},
        {"data.videos", {Type::Int, "20", "number of synthetic videos"}},
        {"data.patients", {Type::Int, "10", "number of synthetic patients"}},
        {"data.settings", {Type::Int, "2", "number of clinical settings"}},
        {"data.circular_fov", {Type::Bool, "false", "restrict frames to the inscribed disc"}},
        {"data.patch_size", {Type::Int, "32", "training patch side"}},
        {"data.min_coverage", {Type::Double, "0.99", "minimum in-FOV fraction of a kept patch"}},
        {"data.split_mode", {Type::String, "cs1", "cs1 (by video) or cs2 (by patient)"}},
        {"data.train_fraction", {Type::Double, "0.70", "share of groups in the training split"}},
        {"data.validation_fraction", {Type::Double, "0.15", "share of groups in the validation split"}},
        {"data.test_fraction", {Type::Double, "0.15", "share of groups in the test split"}},
        {"data.target_domain", {Type::String, "orig", "nat, orig, syn or res"}},
        {"data.natural_dir", {Type::String, "", "directory of natural images for the nat domain"}},
        {"data.max_train_patches", {Type::Int, "0", "cap on input training patches (0 = all)"}},

        {"generator.blocks", {Type::Int, "5", "residual blocks"}},
        {"generator.channels", {Type::Int, "16", "feature channels"}},
        {"generator.kernel", {Type::Int, "3", "convolution kernel size"}},
        {"generator.batchnorm", {Type::Bool, "true", "batch normalisation in residual blocks"}},
        {"generator.prelu_init", {Type::Double, "0.25", "initial PReLU slope"}},

        {"discriminator.channels", {Type::IntList, "16,16,32,32,64", "convolution ladder"}},
        {"discriminator.leaky_slope", {Type::Double, "0.2", "leaky ReLU slope"}},
        {"discriminator.dense_units", {Type::Int, "128", "hidden dense units"}},
        {"discriminator.noise_sigma", {Type::Double, "0.1", "input white-noise std during training"}},

        {"training.lr", {Type::Double, "1e-4", "Adam learning rate"}},
        {"training.beta1", {Type::Double, "0.9", "Adam beta1"}},
        {"training.beta2", {Type::Double, "0.999", "Adam beta2"}},
        {"training.epsilon", {Type::Double, "1e-8", "Adam epsilon"}},
        {"training.batch_size", {Type::Int, "16", "patches per batch"}},
        {"training.iterations", {Type::Int, "2000", "training iterations"}},
        {"training.d_steps", {Type::Int, "1", "discriminator steps per generator step"}},
        {"training.checkpoint_every", {Type::Int, "500", "checkpoint interval (0 = none)"}},
        {"training.validate_every", {Type::Int, "100", "validation interval (0 = start and end only)"}},
        {"training.w_vec", {Type::Double, "1", "weight of the fibre-vector term"}},
        {"training.w_adv", {Type::Double, "1", "weight of the adversarial term"}},
        {"training.w_reg", {Type::Double, "1", "weight of the row/column-mean term"}},
        {"training.n_f", {Type::Int, "682", "fibre-vector length"}},

        {"metrics.svg", {Type::Bool, "true", "write SVG plots with evaluation reports"}},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& [key, info] : registry()) values_[key] = info.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError("unknown configuration key '" + key + "'");
    const std::string v = trim(value);
    check_value(key, it->second.type, v);
    values_[key] = v;
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration file " + path.string());
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of a section");
        try {
            set(section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
}

const std::string& RunConfig::raw(const std::string& key, Type expected) const {
    const auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError("unknown configuration key '" + key + "'");
    if (it->second.type != expected) throw ConfigError("configuration key '" + key + "' read with the wrong type");
    return values_.at(key);
}

long RunConfig::get_int(const std::string& key) const { return parse_int(key, raw(key, Type::Int)); }
double RunConfig::get_double(const std::string& key) const { return parse_double(key, raw(key, Type::Double)); }
bool RunConfig::get_bool(const std::string& key) const { return parse_bool(key, raw(key, Type::Bool)); }
const std::string& RunConfig::get_string(const std::string& key) const { return raw(key, Type::String); }
std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    return parse_int_list(key, raw(key, Type::IntList));
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [key, info] : registry()) {
        const auto dot = key.find('.');
        const std::string section = key.substr(0, dot);
        const std::string name = key.substr(dot + 1);
        nlohmann::json value;
        switch (info.type) {
            case Type::Int: value = get_int(key); break;
            case Type::Double: value = get_double(key); break;
            case Type::Bool: value = get_bool(key); break;
            case Type::String: value = get_string(key); break;
            case Type::IntList: value = get_int_list(key); break;
        }
        out[section][name] = value;
    }
    return out;
}

GeneratorConfig RunConfig::generator() const {
    GeneratorConfig c;
    c.n_residual_blocks = static_cast<int>(get_int("generator.blocks"));
    c.base_channels = static_cast<int>(get_int("generator.channels"));
    c.kernel_size = static_cast<int>(get_int("generator.kernel"));
    c.use_batchnorm = get_bool("generator.batchnorm");
    c.prelu_init = get_double("generator.prelu_init");
    c.validate();
    return c;
}

DiscriminatorConfig RunConfig::discriminator() const {
    DiscriminatorConfig c;
    c.conv_channels = get_int_list("discriminator.channels");
    c.leaky_slope = get_double("discriminator.leaky_slope");
    c.dense_units = static_cast<int>(get_int("discriminator.dense_units"));
    c.input_noise_sigma = get_double("discriminator.noise_sigma");
    c.input_size = static_cast<int>(get_int("data.patch_size"));
    c.validate();
    return c;
}

TrainConfig RunConfig::training() const {
    TrainConfig c;
    c.adam.lr = get_double("training.lr");
    c.adam.beta1 = get_double("training.beta1");
    c.adam.beta2 = get_double("training.beta2");
    c.adam.epsilon = get_double("training.epsilon");
    c.batch_size = static_cast<int>(get_int("training.batch_size"));
    c.max_iterations = get_int("training.iterations");
    c.d_steps_per_g_step = static_cast<int>(get_int("training.d_steps"));
    c.checkpoint_every = get_int("training.checkpoint_every");
    c.validate_every = get_int("training.validate_every");
    c.seed = static_cast<std::uint64_t>(get_int("run.seed"));
    c.weights = {get_double("training.w_vec"), get_double("training.w_adv"), get_double("training.w_reg")};
    c.n_f = static_cast<int>(get_int("training.n_f"));
    c.validate();
    return c;
}

CorpusConfig RunConfig::corpus() const {
    CorpusConfig c;
    c.frames = static_cast<int>(get_int("data.frames"));
    c.frame_size = static_cast<int>(get_int("layout.frame_size"));
    c.videos = static_cast<int>(get_int("data.videos"));
    c.patients = static_cast<int>(get_int("data.patients"));
    c.settings = static_cast<int>(get_int("data.settings"));
    c.density = get_double("layout.density");
    c.jitter = get_double("layout.jitter");
    c.sigma_add = get_double("noise.sigma_add");
    c.sigma_mult = get_double("noise.sigma_mult");
    c.circular_fov = get_bool("data.circular_fov");
    c.seed = static_cast<std::uint64_t>(get_int("run.seed"));
    return c;
}

}  // namespace fbsr
