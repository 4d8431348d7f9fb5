#include <doctest.h>

#include <cmath>
#include <random>

#include "fbsr/forward_model.hpp"
#include "fbsr/losses.hpp"
#include "oracles.hpp"

using namespace fbsr;
using ad::TensorD;
using Inputs = std::vector<TensorD>;

namespace {

// Random perturbation whose every row and column (per sample) averages to zero.
TensorD double_centred(int n, int h, int w, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 0.3);
    std::vector<double> v(static_cast<std::size_t>(n) * h * w);
    for (auto& x : v) x = g(rng);
    for (int b = 0; b < n; ++b) {
        double* p = v.data() + static_cast<std::size_t>(b) * h * w;
        std::vector<double> row(h, 0.0), col(w, 0.0);
        double all = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                row[y] += p[y * w + x] / w;
                col[x] += p[y * w + x] / h;
                all += p[y * w + x] / (h * w);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) p[y * w + x] += all - row[y] - col[x];
    }
    return TensorD::from({n, 1, h, w}, v);
}

double l_reg_oracle(const TensorD& a, const TensorD& b) {
    const int n = a.dim(0), h = a.dim(2), w = a.dim(3);
    double rows = 0.0, cols = 0.0;
    for (int s = 0; s < n; ++s) {
        for (int y = 0; y < h; ++y) {
            double d = 0.0;
            for (int x = 0; x < w; ++x) {
                const std::size_t i = (static_cast<std::size_t>(s) * h + y) * w + x;
                d += (a.data()[i] - b.data()[i]) / w;
            }
            rows += d * d;
        }
        for (int x = 0; x < w; ++x) {
            double d = 0.0;
            for (int y = 0; y < h; ++y) {
                const std::size_t i = (static_cast<std::size_t>(s) * h + y) * w + x;
                d += (a.data()[i] - b.data()[i]) / h;
            }
            cols += d * d;
        }
    }
    return rows / (n * h) + cols / (n * w);
}

}  // namespace

TEST_CASE("identities of the loss terms") {
    std::mt19937_64 rng(1);
    const auto v = oracle::random_tensor({3, 20}, rng, 0.0, 1.0);
    CHECK(l_vec(v, v).item() == 0.0);
    const auto img = oracle::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
    CHECK(l_reg(img, img).item() == 0.0);
    CHECK(l_adv(TensorD::full({4}, 1.0)).item() == 0.0);
    const auto half = TensorD::full({5}, 0.5);
    CHECK(std::abs(discriminator_objective(half, half).item() - 2.0 * std::log(2.0)) < 1e-9);
}

TEST_CASE("l_reg ignores perturbations with zero row and column means") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = oracle::random_tensor({2, 1, 9, 7}, rng, 0.0, 1.0);
        const auto b = oracle::random_tensor({2, 1, 9, 7}, rng, 0.0, 1.0);
        const double base = l_reg(a, b).item();
        const double moved = l_reg(a, b + double_centred(2, 9, 7, rng)).item();
        CHECK(std::abs(moved - base) < 1e-9);
    }
}

TEST_CASE("loss values against direct formulas") {
    std::mt19937_64 rng(3);
    const auto a = oracle::random_tensor({2, 5}, rng, 0.0, 1.0);
    const auto b = oracle::random_tensor({2, 5}, rng, 0.0, 1.0);
    double sq = 0.0;
    for (std::size_t i = 0; i < 10; ++i) sq += std::pow(a.data()[i] - b.data()[i], 2);
    CHECK(l_vec(a, b).item() == doctest::Approx(sq / 10.0).epsilon(1e-12));

    const auto x = oracle::random_tensor({2, 1, 6, 5}, rng, 0.0, 1.0);
    const auto y = oracle::random_tensor({2, 1, 6, 5}, rng, 0.0, 1.0);
    CHECK(l_reg(x, y).item() == doctest::Approx(l_reg_oracle(x, y)).epsilon(1e-12));

    const auto d = TensorD::from({3}, {0.25, 0.5, 0.0});
    CHECK(l_adv(d).item() == doctest::Approx((-std::log(0.25) - std::log(0.5) - std::log(kProbabilityFloor)) / 3.0));

    const auto real = TensorD::from({2}, {0.9, 0.6});
    const auto fake = TensorD::from({2}, {0.2, 0.3});
    const double expected = -(std::log(0.9) + std::log(0.6)) / 2.0 - (std::log(0.8) + std::log(0.7)) / 2.0;
    CHECK(discriminator_objective(real, fake).item() == doctest::Approx(expected).epsilon(1e-12));
    // Saturated probabilities stay finite.
    CHECK(std::isfinite(discriminator_objective(TensorD::zeros({2}), TensorD::full({2}, 1.0)).item()));
}

TEST_CASE("loss gradients pass finite-difference checks") {
    std::mt19937_64 rng(4);
    Inputs vecs{oracle::random_tensor({2, 6}, rng, 0.0, 1.0), oracle::random_tensor({2, 6}, rng, 0.0, 1.0)};
    CHECK(oracle::gradient_check(vecs, [](const Inputs& x) { return l_vec(x[0], x[1]); }) < 1e-4);
    Inputs imgs{oracle::random_tensor({2, 1, 4, 5}, rng, 0.0, 1.0), oracle::random_tensor({2, 1, 4, 5}, rng, 0.0, 1.0)};
    CHECK(oracle::gradient_check(imgs, [](const Inputs& x) { return l_reg(x[0], x[1]); }) < 1e-4);
    Inputs probs{oracle::random_tensor({5}, rng, 0.05, 0.95)};
    CHECK(oracle::gradient_check(probs, [](const Inputs& x) { return l_adv(x[0]); }) < 1e-4);
    Inputs pair{oracle::random_tensor({4}, rng, 0.05, 0.95), oracle::random_tensor({4}, rng, 0.05, 0.95)};
    CHECK(oracle::gradient_check(pair, [](const Inputs& x) { return discriminator_objective(x[0], x[1]); }) < 1e-4);
}

TEST_CASE("vectorize_batch matches per-image vectorisation") {
    std::mt19937_64 rng(5);
    const auto l1 = generate_layout(16, 16, 1.0 / 7.0, 0.2, 1);
    const auto l2 = generate_layout(16, 16, 1.0 / 7.0, 0.2, 2);
    const std::vector<const FibreLayout*> layouts{&l1, &l2};
    const auto x = oracle::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
    const auto v = vectorize_batch(x, std::span<const FibreLayout* const>(layouts), 50);
    REQUIRE(v.shape() == ad::Shape{2, 50});
    for (int s = 0; s < 2; ++s) {
        Image img(16, 16);
        for (int i = 0; i < 256; ++i) img.pixels[i] = static_cast<float>(x.data()[s * 256 + i]);
        const auto ref = vectorize(img, *layouts[s], 50);
        for (int i = 0; i < 50; ++i) CHECK(v.data()[s * 50 + i] == doctest::Approx(ref.values[i]).epsilon(1e-5));
    }
}

TEST_CASE("gradient flows through cell averaging with detached normalisation") {
    std::mt19937_64 rng(6);
    const auto l1 = generate_layout(8, 8, 0.25, 0.2, 3);
    const auto l2 = generate_layout(8, 8, 0.25, 0.2, 4);
    const std::vector<const FibreLayout*> layouts{&l1, &l2};
    const std::span<const FibreLayout* const> ls(layouts);
    const int n_f = 24;
    const auto target = oracle::random_tensor({2, n_f}, rng, 0.0, 1.0);
    auto x = oracle::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);

    // Analytic gradient of the automatic version...
    x.set_requires_grad(true);
    ad::backward(l_vec(vectorize_batch(x, ls, n_f), target));
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());

    // ...equals the finite-difference gradient with the ranges held fixed.
    Inputs in{TensorD::from(x.shape(), {x.data().begin(), x.data().end()})};
    std::vector<VectorRange> fixed;
    {
        // Per-sample cell-mean extrema at the evaluation point.
        ad::NoGradGuard guard;
        for (int s = 0; s < 2; ++s) {
            std::vector<double> means;
            const auto& cells = layouts[s]->cells;
            for (int f = 0; f < layouts[s]->fibre_count(); ++f) {
                double acc = 0.0;
                for (int p : cells.cell(f)) acc += x.data()[s * 64 + p];
                means.push_back(acc / static_cast<double>(cells.cell(f).size()));
            }
            const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
            fixed.push_back({*lo, *hi});
        }
    }
    const double h = 1e-6;
    double worst = 0.0;
    auto data = in[0].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        ad::NoGradGuard guard;
        const double orig = data[i];
        data[i] = orig + h;
        const double up = l_vec(vectorize_batch(in[0], ls, std::span<const VectorRange>(fixed), n_f), target).item();
        data[i] = orig - h;
        const double down =
            l_vec(vectorize_batch(in[0], ls, std::span<const VectorRange>(fixed), n_f), target).item();
        data[i] = orig;
        const double numeric = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(numeric)));
    }
    CHECK(worst < 1e-4);
    // The gradient is not trivially zero.
    double norm = 0.0;
    for (double g : analytic) norm += g * g;
    CHECK(norm > 1e-8);
}

TEST_CASE("total loss is the weighted sum and leaves the input detached") {
    std::mt19937_64 rng(7);
    const auto l1 = generate_layout(16, 16, 1.0 / 7.0, 0.2, 1);
    const std::vector<const FibreLayout*> layouts{&l1, &l1};
    const auto lr = oracle::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
    auto lr_leaf = TensorD::from(lr.shape(), {lr.data().begin(), lr.data().end()}, true);
    auto sr = oracle::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
    sr.set_requires_grad(true);
    const auto ds = TensorD::from({2}, {0.3, 0.6});
    const LossWeights w{2.0, 0.5, 3.0};
    const auto terms = total_loss(lr_leaf, sr, std::span<const FibreLayout* const>(layouts), ds, w, 40);
    const auto b = terms.breakdown();
    CHECK(b.total == doctest::Approx(2.0 * b.l_vec + 0.5 * b.l_adv + 3.0 * b.l_reg).epsilon(1e-12));
    CHECK(b.l_reg == doctest::Approx(l_reg_oracle(lr, sr)).epsilon(1e-12));
    ad::backward(terms.total);
    CHECK(sr.has_grad());
    CHECK(!lr_leaf.has_grad());
}
