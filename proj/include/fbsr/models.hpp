#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbsr/tensor.hpp"

namespace fbsr {

struct GeneratorConfig {
    int n_residual_blocks = 5;
    int base_channels = 64;
    int kernel_size = 3;
    bool use_batchnorm = true;
    double prelu_init = 0.25;
    bool zero_init_output = true;

    void validate() const;
};

struct DiscriminatorConfig {
    std::vector<int> conv_channels{64, 64, 128, 128, 256};
    double leaky_slope = 0.2;
    int dense_units = 512;
    double input_noise_sigma = 0.1;
    int input_size = 64;  // square patch side; fixes the dense layer width

    void validate() const;
    /// 1 for even layers, 2 for odd layers.
    [[nodiscard]] static int stride(int layer) { return layer % 2 == 0 ? 1 : 2; }
};

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

/// Non-trainable state saved with the parameters (batch-norm running statistics).
struct NamedBuffer {
    std::string name;
    ad::Shape shape;
    std::vector<float> values;
};

struct CheckpointArray {
    std::string name;
    ad::Shape shape;
    std::vector<float> values;
};

/// In-memory form of a checkpoint: a JSON manifest plus one little-endian
/// float32 blob holding the arrays back to back in manifest order.
struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<CheckpointArray> arrays;

    [[nodiscard]] const CheckpointArray* find(const std::string& name) const;
    void add(std::string name, ad::Shape shape, std::vector<float> values);
};

/// Writes `path` (manifest) and `path` with extension ".bin" (blob).
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

class Network {
public:
    virtual ~Network() = default;

    [[nodiscard]] std::vector<NamedTensor>& parameters() { return params_; }
    [[nodiscard]] const std::vector<NamedTensor>& parameters() const { return params_; }
    [[nodiscard]] std::vector<NamedBuffer>& buffers() { return buffers_; }
    [[nodiscard]] const std::vector<NamedBuffer>& buffers() const { return buffers_; }

    [[nodiscard]] std::size_t parameter_count() const;
    void zero_grad();
    void set_requires_grad(bool flag);

    /// Appends parameters and buffers under `prefix`.
    void save_state(Checkpoint& checkpoint, const std::string& prefix) const;
    /// Copies matching arrays in; throws ConfigError on missing names or shape mismatch.
    void load_state(const Checkpoint& checkpoint, const std::string& prefix);

protected:
    ad::Tensor add_parameter(std::string name, ad::Shape shape, std::vector<float> values);
    ad::Tensor add_he_normal(std::string name, ad::Shape shape, int fan_in, std::mt19937_64& rng);
    int add_buffer(std::string name, ad::Shape shape, float fill);

    std::vector<NamedTensor> params_;
    std::vector<NamedBuffer> buffers_;
};

/// Residual super-resolution network with equal input and output size.
class Generator : public Network {
public:
    Generator(const GeneratorConfig& config, std::uint64_t seed);

    [[nodiscard]] const GeneratorConfig& config() const { return config_; }

    /// x is [N,1,H,W] in [0,1]; output has the same shape and lies in (0,1).
    /// Training mode normalises with batch statistics and updates the running
    /// averages; otherwise the running averages are used.
    ad::Tensor forward(const ad::Tensor& x, bool training);

    static constexpr float kBatchNormEps = 1e-5f;
    static constexpr float kBatchNormMomentum = 0.1f;

private:
    struct Norm {
        ad::Tensor gamma;
        ad::Tensor beta;
        int running_mean = -1;
        int running_var = -1;
    };
    struct Block {
        ad::Tensor conv1;
        Norm norm1;
        ad::Tensor alpha;
        ad::Tensor conv2;
        Norm norm2;
        ad::Tensor bias1;
        ad::Tensor bias2;
    };

    Norm make_norm(const std::string& name, int channels);
    ad::Tensor normalise(const ad::Tensor& x, Norm& norm, bool training);
    ad::Tensor conv(const ad::Tensor& x, const ad::Tensor& kernel, const ad::Tensor& bias) const;

    GeneratorConfig config_;
    ad::Tensor conv_in_;
    ad::Tensor bias_in_;
    ad::Tensor alpha_in_;
    std::vector<Block> blocks_;
    ad::Tensor conv_mid_;
    ad::Tensor bias_mid_;
    Norm norm_mid_;
    ad::Tensor conv_out_;
    ad::Tensor bias_out_;
};

/// Strided convolutional classifier returning the probability that a patch is
/// drawn from the target domain.
class Discriminator : public Network {
public:
    Discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

    [[nodiscard]] const DiscriminatorConfig& config() const { return config_; }

    /// x is [N,1,S,S] with S = input_size; returns [N]. White noise of the
    /// configured sigma is added to the input when `noise_rng` is non-null.
    ad::Tensor forward(const ad::Tensor& x, std::mt19937_64* noise_rng);

private:
    DiscriminatorConfig config_;
    std::vector<ad::Tensor> kernels_;
    std::vector<ad::Tensor> biases_;
    ad::Tensor dense1_;
    ad::Tensor dense1_bias_;
    ad::Tensor dense2_;
    ad::Tensor dense2_bias_;
    int flat_features_ = 0;
};

}  // namespace fbsr
