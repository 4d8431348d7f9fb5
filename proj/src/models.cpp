#include "fbsr/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fbsr/error.hpp"

namespace fbsr {

using ad::Shape;
using ad::Tensor;

void GeneratorConfig::validate() const {
    if (n_residual_blocks < 1) throw ConfigError("generator needs at least one residual block");
    if (base_channels < 8) throw ConfigError("generator base_channels must be >= 8");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("generator kernel_size must be odd");
    if (!(prelu_init >= 0.0)) throw ConfigError("prelu_init must be non-negative");
}

void DiscriminatorConfig::validate() const {
    if (conv_channels.empty()) throw ConfigError("discriminator needs at least one convolution");
    for (int c : conv_channels) {
        if (c < 1) throw ConfigError("discriminator channel counts must be positive");
    }
    if (dense_units < 1) throw ConfigError("discriminator dense_units must be positive");
    if (!(input_noise_sigma >= 0.0)) throw ConfigError("discriminator input noise must be non-negative");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky slope must be in [0,1)");
    int size = input_size;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) size = (size - 1) / stride(static_cast<int>(i)) + 1;
    if (input_size < 1 || size < 1) throw ConfigError("discriminator input_size too small");
}

nlohmann::json to_json(const GeneratorConfig& c) {
    return {{"n_residual_blocks", c.n_residual_blocks}, {"base_channels", c.base_channels},
            {"kernel_size", c.kernel_size},             {"use_batchnorm", c.use_batchnorm},
            {"prelu_init", c.prelu_init},               {"zero_init_output", c.zero_init_output}};
}

nlohmann::json to_json(const DiscriminatorConfig& c) {
    return {{"conv_channels", c.conv_channels},
            {"leaky_slope", c.leaky_slope},
            {"dense_units", c.dense_units},
            {"input_noise_sigma", c.input_noise_sigma},
            {"input_size", c.input_size}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.n_residual_blocks = j.value("n_residual_blocks", c.n_residual_blocks);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.use_batchnorm = j.value("use_batchnorm", c.use_batchnorm);
    c.prelu_init = j.value("prelu_init", c.prelu_init);
    c.zero_init_output = j.value("zero_init_output", c.zero_init_output);
    c.validate();
    return c;
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
    DiscriminatorConfig c;
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.dense_units = j.value("dense_units", c.dense_units);
    c.input_noise_sigma = j.value("input_noise_sigma", c.input_noise_sigma);
    c.input_size = j.value("input_size", c.input_size);
    c.validate();
    return c;
}

// ---- checkpoint files ----

const CheckpointArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

void Checkpoint::add(std::string name, Shape shape, std::vector<float> values) {
    if (ad::shape_numel(shape) != values.size()) throw ShapeError("checkpoint array " + name + " has wrong length");
    arrays.push_back({std::move(name), std::move(shape), std::move(values)});
}

namespace {

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

void put_le(std::vector<char>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<char> blob;
    for (const auto& a : checkpoint.arrays) {
        tensors.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "float32"}, {"offset", blob.size()}});
        blob.reserve(blob.size() + 4 * a.values.size());
        for (float v : a.values) put_le(blob, v);
    }
    const auto bin = blob_path(path);
    nlohmann::json manifest = {{"format", "fbsr-checkpoint"},
                               {"version", 1},
                               {"blob", bin.filename().string()},
                               {"bytes", blob.size()},
                               {"metadata", checkpoint.metadata},
                               {"tensors", tensors}};
    {
        std::ofstream out(bin, std::ios::binary);
        if (!out) throw DataError("cannot write " + bin.string());
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw DataError("failed writing " + bin.string());
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint manifest " + path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "fbsr-checkpoint") throw DataError(path.string() + " is not a checkpoint");
    const auto bin = path.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream bin_in(bin, std::ios::binary);
    if (!bin_in) throw DataError("cannot open checkpoint blob " + bin.string());
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin_in)), std::istreambuf_iterator<char>());
    if (blob.size() != manifest.value("bytes", std::size_t{0})) throw DataError("checkpoint blob size mismatch");

    Checkpoint cp;
    cp.metadata = manifest.value("metadata", nlohmann::json::object());
    for (const auto& t : manifest.at("tensors")) {
        if (t.value("dtype", "") != "float32") throw DataError("unsupported dtype in checkpoint");
        CheckpointArray a;
        a.name = t.at("name").get<std::string>();
        a.shape = t.at("shape").get<Shape>();
        const auto offset = t.at("offset").get<std::size_t>();
        const std::size_t n = ad::shape_numel(a.shape);
        if (offset + 4 * n > blob.size()) throw DataError("checkpoint array " + a.name + " exceeds blob");
        a.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) a.values[i] = get_le(blob.data() + offset + 4 * i);
        cp.arrays.push_back(std::move(a));
    }
    return cp;
}

// ---- Network ----

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void Network::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void Network::set_requires_grad(bool flag) {
    for (auto& p : params_) p.tensor.set_requires_grad(flag);
}

void Network::save_state(Checkpoint& checkpoint, const std::string& prefix) const {
    for (const auto& p : params_) {
        const auto d = p.tensor.data();
        checkpoint.add(prefix + p.name, p.tensor.shape(), {d.begin(), d.end()});
    }
    for (const auto& b : buffers_) checkpoint.add(prefix + b.name, b.shape, b.values);
}

void Network::load_state(const Checkpoint& checkpoint, const std::string& prefix) {
    auto fetch = [&](const std::string& name, const Shape& shape) -> const CheckpointArray& {
        const auto* a = checkpoint.find(prefix + name);
        if (!a) throw ConfigError("checkpoint is missing " + prefix + name);
        if (a->shape != shape) {
            throw ConfigError("checkpoint array " + prefix + name + " has shape " + ad::shape_string(a->shape) +
                              ", model expects " + ad::shape_string(shape));
        }
        return *a;
    };
    for (auto& p : params_) {
        const auto& a = fetch(p.name, p.tensor.shape());
        std::copy(a.values.begin(), a.values.end(), p.tensor.mutable_data().begin());
    }
    for (auto& b : buffers_) b.values = fetch(b.name, b.shape).values;
}

Tensor Network::add_parameter(std::string name, Shape shape, std::vector<float> values) {
    auto t = Tensor::from(std::move(shape), std::move(values), true);
    params_.push_back({std::move(name), t});
    return t;
}

Tensor Network::add_he_normal(std::string name, Shape shape, int fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fan_in));
    std::vector<float> values(ad::shape_numel(shape));
    for (auto& v : values) v = static_cast<float>(gauss(rng));
    return add_parameter(std::move(name), std::move(shape), std::move(values));
}

int Network::add_buffer(std::string name, Shape shape, float fill) {
    const std::size_t n = ad::shape_numel(shape);
    buffers_.push_back({std::move(name), std::move(shape), std::vector<float>(n, fill)});
    return static_cast<int>(buffers_.size()) - 1;
}

// ---- Generator ----

Generator::Generator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const int c = config_.base_channels;
    const int k = config_.kernel_size;
    const auto alpha = [&](const std::string& name) {
        return add_parameter(name, {c}, std::vector<float>(c, static_cast<float>(config_.prelu_init)));
    };
    const bool bn = config_.use_batchnorm;

    conv_in_ = add_he_normal("conv_in.weight", {c, 1, k, k}, k * k, rng);
    bias_in_ = add_parameter("conv_in.bias", {c}, std::vector<float>(c, 0.0f));
    alpha_in_ = alpha("conv_in.prelu");
    for (int b = 0; b < config_.n_residual_blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        Block block;
        block.conv1 = add_he_normal(p + "conv1.weight", {c, c, k, k}, c * k * k, rng);
        if (!bn) block.bias1 = add_parameter(p + "conv1.bias", {c}, std::vector<float>(c, 0.0f));
        block.norm1 = make_norm(p + "bn1", c);
        block.alpha = alpha(p + "prelu");
        block.conv2 = add_he_normal(p + "conv2.weight", {c, c, k, k}, c * k * k, rng);
        if (!bn) block.bias2 = add_parameter(p + "conv2.bias", {c}, std::vector<float>(c, 0.0f));
        block.norm2 = make_norm(p + "bn2", c);
        blocks_.push_back(std::move(block));
    }
    conv_mid_ = add_he_normal("conv_mid.weight", {c, c, k, k}, c * k * k, rng);
    if (!bn) bias_mid_ = add_parameter("conv_mid.bias", {c}, std::vector<float>(c, 0.0f));
    norm_mid_ = make_norm("bn_mid", c);
    if (config_.zero_init_output) {
        conv_out_ = add_parameter("conv_out.weight", {1, c, k, k}, std::vector<float>(c * k * k, 0.0f));
    } else {
        conv_out_ = add_he_normal("conv_out.weight", {1, c, k, k}, c * k * k, rng);
    }
    bias_out_ = add_parameter("conv_out.bias", {1}, {0.0f});
}

Generator::Norm Generator::make_norm(const std::string& name, int channels) {
    Norm n;
    if (!config_.use_batchnorm) return n;
    n.gamma = add_parameter(name + ".gamma", {channels}, std::vector<float>(channels, 1.0f));
    n.beta = add_parameter(name + ".beta", {channels}, std::vector<float>(channels, 0.0f));
    n.running_mean = add_buffer(name + ".running_mean", {channels}, 0.0f);
    n.running_var = add_buffer(name + ".running_var", {channels}, 1.0f);
    return n;
}

Tensor Generator::normalise(const Tensor& x, Norm& norm, bool training) {
    if (!norm.gamma.defined()) return x;
    auto& rm = buffers_[norm.running_mean].values;
    auto& rv = buffers_[norm.running_var].values;
    const int c = x.dim(1);
    if (training) {
        std::vector<float> mean, var;
        auto y = ad::batch_norm(x, norm.gamma, norm.beta, kBatchNormEps, &mean, &var);
        const double m = static_cast<double>(x.numel()) / c;
        const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
        for (int i = 0; i < c; ++i) {
            rm[i] = (1.0f - kBatchNormMomentum) * rm[i] + kBatchNormMomentum * mean[i];
            rv[i] = (1.0f - kBatchNormMomentum) * rv[i] + kBatchNormMomentum * static_cast<float>(var[i] * unbias);
        }
        return y;
    }
    std::vector<float> inv_std(c);
    for (int i = 0; i < c; ++i) inv_std[i] = 1.0f / std::sqrt(rv[i] + kBatchNormEps);
    const auto gamma = ad::reshape(norm.gamma, {1, c, 1, 1});
    const auto beta = ad::reshape(norm.beta, {1, c, 1, 1});
    const auto centred = x - Tensor::from({1, c, 1, 1}, rm);
    return centred * Tensor::from({1, c, 1, 1}, inv_std) * gamma + beta;
}

Tensor Generator::conv(const Tensor& x, const Tensor& kernel, const Tensor& bias) const {
    auto y = ad::conv2d(x, kernel, 1, config_.kernel_size / 2);
    if (bias.defined()) y = y + ad::reshape(bias, {1, bias.dim(0), 1, 1});
    return y;
}

Tensor Generator::forward(const Tensor& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != 1) {
        throw ShapeError("generator expects [N,1,H,W], got " + ad::shape_string(x.shape()));
    }
    const Tensor head = ad::prelu(conv(x, conv_in_, bias_in_), alpha_in_);
    Tensor h = head;
    for (auto& block : blocks_) {
        Tensor r = normalise(conv(h, block.conv1, block.bias1), block.norm1, training);
        r = ad::prelu(r, block.alpha);
        r = normalise(conv(r, block.conv2, block.bias2), block.norm2, training);
        h = h + r;
    }
    h = normalise(conv(h, conv_mid_, bias_mid_), norm_mid_, training) + head;
    return ad::sigmoid(conv(h, conv_out_, bias_out_));
}

// ---- Discriminator ----

Discriminator::Discriminator(const DiscriminatorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    int in_c = 1;
    int size = config_.input_size;
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
        const int out_c = config_.conv_channels[i];
        const std::string p = "conv" + std::to_string(i) + ".";
        kernels_.push_back(add_he_normal(p + "weight", {out_c, in_c, 3, 3}, in_c * 9, rng));
        biases_.push_back(add_parameter(p + "bias", {out_c}, std::vector<float>(out_c, 0.0f)));
        size = (size - 1) / DiscriminatorConfig::stride(static_cast<int>(i)) + 1;
        in_c = out_c;
    }
    flat_features_ = in_c * size * size;
    const int u = config_.dense_units;
    dense1_ = add_he_normal("dense1.weight", {flat_features_, u}, flat_features_, rng);
    dense1_bias_ = add_parameter("dense1.bias", {u}, std::vector<float>(u, 0.0f));
    dense2_ = add_he_normal("dense2.weight", {u, 1}, u, rng);
    dense2_bias_ = add_parameter("dense2.bias", {1}, {0.0f});
}

Tensor Discriminator::forward(const Tensor& x, std::mt19937_64* noise_rng) {
    const int s = config_.input_size;
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != s || x.dim(3) != s) {
        throw ShapeError("discriminator expects [N,1," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                         ad::shape_string(x.shape()));
    }
    const int n = x.dim(0);
    const auto slope = static_cast<float>(config_.leaky_slope);
    Tensor h = x;
    if (noise_rng && config_.input_noise_sigma > 0.0) {
        std::normal_distribution<double> gauss(0.0, config_.input_noise_sigma);
        std::vector<float> noise(x.numel());
        for (auto& v : noise) v = static_cast<float>(gauss(*noise_rng));
        h = h + Tensor::from(x.shape(), std::move(noise));
    }
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
        h = ad::conv2d(h, kernels_[i], DiscriminatorConfig::stride(static_cast<int>(i)), 1);
        h = ad::leaky_relu(h + ad::reshape(biases_[i], {1, biases_[i].dim(0), 1, 1}), slope);
    }
    h = ad::reshape(h, {n, flat_features_});
    h = ad::leaky_relu(ad::matmul(h, dense1_) + ad::reshape(dense1_bias_, {1, config_.dense_units}), slope);
    h = ad::matmul(h, dense2_) + ad::reshape(dense2_bias_, {1, 1});
    return ad::reshape(ad::sigmoid(h), {n});
}

}  // namespace fbsr
