#include "fbsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "fbsr/error.hpp"
#include "fbsr/random.hpp"

namespace fbsr {

using ad::Tensor;

void adam_update(std::span<float> param, std::span<const float> grad, std::vector<float>& m, std::vector<float>& v,
                 long t, const AdamConfig& c) {
    if (!grad.empty() && grad.size() != param.size()) throw ShapeError("adam: gradient length mismatch");
    if (m.size() != param.size()) m.assign(param.size(), 0.0f);
    if (v.size() != param.size()) v.assign(param.size(), 0.0f);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        param[i] = static_cast<float>(param[i] - c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon));
    }
}

void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& config) {
    if (state.m.size() != params.size()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
    }
    ++state.t;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].tensor;
        std::span<const float> grad;
        if (p.has_grad()) grad = p.grad();
        adam_update(p.mutable_data(), grad, state.m[k], state.v[k], state.t, config);
    }
}

void TrainConfig::validate() const {
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0,1)");
    }
    if (!(adam.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (max_iterations < 0) throw ConfigError("iteration count must be non-negative");
    if (d_steps_per_g_step < 1) throw ConfigError("d_steps_per_g_step must be at least 1");
    if (checkpoint_every < 0 || validate_every < 0) throw ConfigError("intervals must be non-negative");
    if (weights.vec < 0 || weights.adv < 0 || weights.reg < 0) throw ConfigError("loss weights must be non-negative");
    if (n_f < 1) throw ConfigError("n_f must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon},
            {"batch_size", c.batch_size},
            {"max_iterations", c.max_iterations},
            {"d_steps_per_g_step", c.d_steps_per_g_step},
            {"checkpoint_every", c.checkpoint_every},
            {"validate_every", c.validate_every},
            {"seed", c.seed},
            {"w_vec", c.weights.vec},
            {"w_adv", c.weights.adv},
            {"w_reg", c.weights.reg},
            {"n_f", c.n_f},
            {"freeze_discriminator", c.freeze_discriminator}};
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
    Batch b;
    const int s = dataset.patch_size;
    const std::size_t area = static_cast<std::size_t>(s) * s;
    std::vector<float> pixels(indices.size() * area);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const Patch& p = dataset.patches.at(indices[k]);
        if (p.image.width != s || p.image.height != s) throw DataError("patch size differs from dataset patch size");
        std::copy(p.image.pixels.begin(), p.image.pixels.end(), pixels.begin() + k * area);
        b.layouts.push_back(p.layout.get());
        b.pair_keys.push_back(p.pair_key());
    }
    b.images = Tensor::from({static_cast<int>(indices.size()), 1, s, s}, std::move(pixels));
    return b;
}

namespace {

std::vector<std::size_t> draw(std::size_t pool, int count, std::mt19937_64& rng) {
    std::vector<std::size_t> out;
    if (pool >= static_cast<std::size_t>(count)) {
        std::vector<std::size_t> idx(pool);
        for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
        for (int k = 0; k < count; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool - 1);
            std::swap(idx[k], idx[pick(rng)]);
            out.push_back(idx[k]);
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
        for (int k = 0; k < count; ++k) out.push_back(pick(rng));
    }
    return out;
}

void check_finite(double value, long iteration, const char* term) {
    if (!std::isfinite(value)) {
        throw NumericalError("non-finite " + std::string(term) + " at iteration " + std::to_string(iteration));
    }
}

const std::uint64_t kLrStream = stable_hash("lr-batch");
const std::uint64_t kHrStream = stable_hash("hr-batch");
const std::uint64_t kNoiseStream = stable_hash("discriminator-noise");

}  // namespace

Trainer::Trainer(const GeneratorConfig& g_config, const DiscriminatorConfig& d_config, const TrainConfig& config,
                 const Dataset& lr_train, const Dataset& hr_train, const Dataset* lr_validation)
    : config_(config),
      generator_(g_config, derive_seed(config.seed, stable_hash("generator"))),
      discriminator_(d_config, derive_seed(config.seed, stable_hash("discriminator"))),
      lr_train_(lr_train),
      hr_train_(hr_train),
      lr_validation_(lr_validation) {
    config_.validate();
    if (lr_train.patches.empty()) throw DataError("input training pool is empty");
    if (hr_train.patches.empty()) throw DataError("target training pool is empty");
    if (hr_train.patch_size != lr_train.patch_size) throw ConfigError("input and target patch sizes differ");
    if (d_config.input_size != lr_train.patch_size) {
        throw ConfigError("discriminator input size " + std::to_string(d_config.input_size) +
                          " does not match patch size " + std::to_string(lr_train.patch_size));
    }
    for (const auto& p : lr_train.patches) {
        if (!p.layout) throw DataError("input patch " + p.pair_key() + " has no fibre layout");
    }
}

void Trainer::audit(const std::string& phase, const std::string& domain, const std::vector<std::string>& keys) {
    if (!audit_) return;
    for (const auto& k : keys) audit_({iteration_ + 1, phase, domain, k});
}

std::vector<std::size_t> Trainer::sample_lr_indices(long iteration) const {
    std::mt19937_64 rng(derive_seed(config_.seed, kLrStream, static_cast<std::uint64_t>(iteration)));
    return draw(lr_train_.patches.size(), config_.batch_size, rng);
}

std::vector<std::size_t> Trainer::sample_hr_indices(long iteration, const std::vector<std::string>& lr_keys) const {
    std::mt19937_64 rng(derive_seed(config_.seed, kHrStream, static_cast<std::uint64_t>(iteration)));
    const std::unordered_set<std::string> excluded(lr_keys.begin(), lr_keys.end());
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < hr_train_.patches.size(); ++i) {
        if (!excluded.count(hr_train_.patches[i].pair_key())) eligible.push_back(i);
    }
    if (eligible.empty()) throw DataError("every target patch is paired with the current input batch");
    auto picks = draw(eligible.size(), config_.batch_size, rng);
    for (auto& p : picks) p = eligible[p];
    return picks;
}

IterationResult Trainer::step() {
    const auto lr_idx = sample_lr_indices(iteration_);
    const Batch lr = make_batch(lr_train_, lr_idx);
    const auto hr_idx = sample_hr_indices(iteration_, lr.pair_keys);
    const Batch hr = make_batch(hr_train_, hr_idx);
    return train_iteration(lr, hr);
}

LossTerms<float> Trainer::generator_losses(const Batch& lr, const Tensor& sr, std::mt19937_64& noise_rng) {
    const Tensor ds = discriminator_.forward(sr, &noise_rng);
    return total_loss(lr.images, sr, std::span<const FibreLayout* const>(lr.layouts), ds, config_.weights,
                      config_.n_f);
}

IterationResult Trainer::train_iteration(const Batch& lr, const Batch& hr) {
    const long it = iteration_ + 1;
    std::mt19937_64 noise_rng(derive_seed(config_.seed, kNoiseStream, static_cast<std::uint64_t>(iteration_)));
    IterationResult result;
    result.iteration = it;

    generator_.set_requires_grad(true);
    const Tensor sr = generator_.forward(lr.images, true);
    const Tensor fake = ad::stop_gradient(sr);

    audit("discriminator", "lr", lr.pair_keys);
    audit("discriminator", "hr", hr.pair_keys);
    for (int k = 0; k < config_.d_steps_per_g_step; ++k) {
        if (config_.freeze_discriminator) {
            ad::NoGradGuard no_grad;
            const auto d_loss = discriminator_objective(discriminator_.forward(hr.images, &noise_rng),
                                                        discriminator_.forward(fake, &noise_rng));
            result.d_loss = d_loss.item();
            break;
        }
        discriminator_.set_requires_grad(true);
        discriminator_.zero_grad();
        const auto d_loss = discriminator_objective(discriminator_.forward(hr.images, &noise_rng),
                                                    discriminator_.forward(fake, &noise_rng));
        if (k == 0) result.d_loss = d_loss.item();
        check_finite(d_loss.item(), it, "d_loss");
        ad::backward(d_loss);
        adam_step(discriminator_.parameters(), adam_d_, config_.adam);
    }

    audit("generator", "lr", lr.pair_keys);
    discriminator_.set_requires_grad(false);
    const auto terms = generator_losses(lr, sr, noise_rng);
    result.losses = terms.breakdown();
    check_finite(result.losses.l_vec, it, "l_vec");
    check_finite(result.losses.l_adv, it, "l_adv");
    check_finite(result.losses.l_reg, it, "l_reg");
    check_finite(result.losses.total, it, "total");
    generator_.zero_grad();
    ad::backward(terms.total);
    adam_step(generator_.parameters(), adam_g_, config_.adam);
    discriminator_.set_requires_grad(true);
    discriminator_.zero_grad();
    generator_.zero_grad();
    iteration_ = it;
    return result;
}

LossBreakdown Trainer::generator_step(const Batch& lr) {
    std::mt19937_64 noise_rng(derive_seed(config_.seed, kNoiseStream, static_cast<std::uint64_t>(iteration_)));
    audit("generator", "lr", lr.pair_keys);
    generator_.set_requires_grad(true);
    discriminator_.set_requires_grad(false);
    const Tensor sr = generator_.forward(lr.images, true);
    const auto terms = generator_losses(lr, sr, noise_rng);
    const auto losses = terms.breakdown();
    check_finite(losses.total, iteration_ + 1, "total");
    generator_.zero_grad();
    ad::backward(terms.total);
    adam_step(generator_.parameters(), adam_g_, config_.adam);
    generator_.zero_grad();
    discriminator_.set_requires_grad(true);
    ++iteration_;
    return losses;
}

double Trainer::validation_l_vec() {
    if (!lr_validation_ || lr_validation_->patches.empty()) return std::numeric_limits<double>::quiet_NaN();
    ad::NoGradGuard no_grad;
    const std::size_t n = lr_validation_->patches.size();
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config_.batch_size)) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(config_.batch_size));
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        const Batch b = make_batch(*lr_validation_, idx);
        const auto layouts = std::span<const FibreLayout* const>(b.layouts);
        const Tensor sr = generator_.forward(b.images, false);
        const auto loss = l_vec(vectorize_batch(b.images, layouts, config_.n_f), vectorize_batch(sr, layouts, config_.n_f));
        total += static_cast<double>(loss.item()) * static_cast<double>(end - start);
    }
    return total / static_cast<double>(n);
}

Checkpoint Trainer::save_state() const {
    Checkpoint cp;
    cp.metadata = {{"kind", "training-state"},
                   {"iteration", iteration_},
                   {"generator", to_json(generator_.config())},
                   {"discriminator", to_json(discriminator_.config())},
                   {"train", to_json(config_)},
                   {"adam_g_t", adam_g_.t},
                   {"adam_d_t", adam_d_.t}};
    if (best_validation) cp.metadata["best_validation"] = *best_validation;
    generator_.save_state(cp, "generator/");
    discriminator_.save_state(cp, "discriminator/");
    auto save_adam = [&](const AdamState& s, const Network& net, const std::string& prefix) {
        for (std::size_t k = 0; k < s.m.size(); ++k) {
            if (s.m[k].empty()) continue;
            const auto& p = net.parameters()[k];
            cp.add(prefix + "m/" + p.name, p.tensor.shape(), s.m[k]);
            cp.add(prefix + "v/" + p.name, p.tensor.shape(), s.v[k]);
        }
    };
    save_adam(adam_g_, generator_, "adam_g/");
    save_adam(adam_d_, discriminator_, "adam_d/");
    return cp;
}

void Trainer::load_state(const Checkpoint& cp) {
    generator_.load_state(cp, "generator/");
    discriminator_.load_state(cp, "discriminator/");
    auto load_adam = [&](AdamState& s, Network& net, const std::string& prefix, long t) {
        s = AdamState{};
        s.t = t;
        s.m.resize(net.parameters().size());
        s.v.resize(net.parameters().size());
        for (std::size_t k = 0; k < net.parameters().size(); ++k) {
            const auto& p = net.parameters()[k];
            const auto* m = cp.find(prefix + "m/" + p.name);
            const auto* v = cp.find(prefix + "v/" + p.name);
            if (!m || !v) continue;
            if (m->shape != p.tensor.shape() || v->shape != p.tensor.shape()) {
                throw ConfigError("optimiser state for " + p.name + " has the wrong shape");
            }
            s.m[k] = m->values;
            s.v[k] = v->values;
        }
    };
    load_adam(adam_g_, generator_, "adam_g/", cp.metadata.value("adam_g_t", 0L));
    load_adam(adam_d_, discriminator_, "adam_d/", cp.metadata.value("adam_d_t", 0L));
    iteration_ = cp.metadata.value("iteration", 0L);
    if (cp.metadata.contains("best_validation")) best_validation = cp.metadata["best_validation"].get<double>();
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

TrainSummary train(Trainer& trainer, const std::filesystem::path& out_dir,
                   const std::function<void(const IterationResult&)>& progress) {
    std::filesystem::create_directories(out_dir);
    TrainSummary summary;
    summary.log = out_dir / "training_log.csv";
    summary.final_checkpoint = out_dir / "final.json";
    summary.best_checkpoint = out_dir / "best.json";
    const bool resumed = trainer.iteration() > 0;
    const auto& cfg = trainer.config();

    const auto mode = resumed ? std::ios::app : std::ios::trunc;
    std::ofstream log(summary.log, mode);
    std::ofstream val_log(out_dir / "validation.csv", mode);
    if (!log || !val_log) throw DataError("cannot write logs in " + out_dir.string());
    if (!resumed) {
        log << "iteration,l_vec,l_adv,l_reg,total,d_loss\n";
        val_log << "iteration,val_l_vec\n";
    }

    auto record_validation = [&](double v) {
        if (std::isnan(v)) return;
        val_log << trainer.iteration() << ',' << fmt(v) << '\n';
        val_log.flush();
        if (!trainer.best_validation || v < *trainer.best_validation) {
            trainer.best_validation = v;
            write_checkpoint(summary.best_checkpoint, trainer.save_state());
        }
    };

    summary.initial_validation = trainer.validation_l_vec();
    if (!resumed) record_validation(summary.initial_validation);

    bool validated_last = true;
    while (trainer.iteration() < cfg.max_iterations) {
        const IterationResult r = trainer.step();
        const auto& l = r.losses;
        log << r.iteration << ',' << fmt(l.l_vec) << ',' << fmt(l.l_adv) << ',' << fmt(l.l_reg) << ','
            << fmt(l.total) << ',' << fmt(r.d_loss) << '\n';
        if (!log) throw DataError("failed writing " + summary.log.string());
        if (progress) progress(r);
        validated_last = false;
        if (cfg.validate_every > 0 && r.iteration % cfg.validate_every == 0) {
            record_validation(trainer.validation_l_vec());
            validated_last = true;
        }
        if (cfg.checkpoint_every > 0 && r.iteration % cfg.checkpoint_every == 0) {
            write_checkpoint(out_dir / ("checkpoint_" + std::to_string(r.iteration) + ".json"), trainer.save_state());
        }
    }
    log.flush();

    summary.final_validation = trainer.validation_l_vec();
    if (!validated_last) record_validation(summary.final_validation);
    summary.iterations = trainer.iteration();
    summary.best_validation = trainer.best_validation.value_or(summary.final_validation);
    write_checkpoint(summary.final_checkpoint, trainer.save_state());
    if (!trainer.best_validation) write_checkpoint(summary.best_checkpoint, trainer.save_state());
    return summary;
}

}  // namespace fbsr
