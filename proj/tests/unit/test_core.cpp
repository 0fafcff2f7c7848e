#include "bagan/autograd.hpp"
#include "bagan/errors.hpp"
#include "bagan/nn.hpp"
#include "bagan/npz.hpp"
#include "bagan/optim.hpp"
#include "bagan/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

using namespace bagan;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng)
{
    Tensor t(shape);
    for (auto& v : t.values())
        v = rng.normal();
    return t;
}

// Checks dL/dx of a scalar function against central differences.
void check_gradient(const std::function<ag::Var(const ag::Var&)>& f, const Tensor& x0, double tol = 1e-6)
{
    ag::Var x(x0, true);
    const Tensor g = ag::grad(f(x), x).value();
    const double h = 1e-5;
    for (std::int64_t i = 0; i < x0.size(); ++i) {
        Tensor xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (f(ag::Var(xp)).item() - f(ag::Var(xm)).item()) / (2 * h);
        CHECK(g[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
}

} // namespace

TEST_CASE("tensor basics")
{
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.dim(1) == 3);
    CHECK(t.slice_rows(1, 2).to_vector() == std::vector<double>{4, 5, 6});
    const std::int64_t idx[] = {1, 0, 1};
    CHECK(t.gather_rows(idx).to_vector() == std::vector<double>{4, 5, 6, 1, 2, 3, 4, 5, 6});
    CHECK(Tensor::scalar(2.5).item() == 2.5);
    CHECK(t.all_finite());
    t[2] = NAN;
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("rng is reproducible and its state round-trips")
{
    Rng a(123), b(123);
    for (int i = 0; i < 10; ++i)
        CHECK(a.next_u64() == b.next_u64());
    const auto s = a.state();
    const double x = a.normal();
    Rng c(0);
    c.set_state(s);
    CHECK(c.normal() == x);
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = a.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1) < 0.02);
    for (int i = 0; i < 1000; ++i)
        CHECK(a.below(7) < 7);
}

TEST_CASE("elementwise gradients")
{
    Rng rng(1);
    const Tensor x = random_tensor({7}, rng);
    check_gradient([](const ag::Var& v) { return ag::sum(ag::tanh(v)); }, x);
    check_gradient([](const ag::Var& v) { return ag::sum(ag::sigmoid(v)); }, x);
    check_gradient([](const ag::Var& v) { return ag::sum(ag::softplus(v)); }, x);
    check_gradient([](const ag::Var& v) { return ag::sum(ag::leaky_relu(v, 0.2)); }, x);
    check_gradient([](const ag::Var& v) { return ag::mean(ag::mul(v, ag::square(v))); }, x);
    check_gradient([](const ag::Var& v) { return ag::sum(ag::sqrt(ag::add_scalar(ag::square(v), 1.0))); }, x);
}

TEST_CASE("softplus does not overflow")
{
    ag::Var x(Tensor({3}, {-800, 0, 800}));
    const Tensor y = ag::softplus(x).value();
    CHECK(y[0] == doctest::Approx(0.0));
    CHECK(y[1] == doctest::Approx(std::log(2.0)));
    CHECK(y[2] == doctest::Approx(800.0));
}

TEST_CASE("matmul against a hand loop and its gradients")
{
    Rng rng(2);
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    const Tensor c = ag::matmul(ag::Var(a), ag::Var(b)).value();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double s = 0;
            for (int k = 0; k < 4; ++k)
                s += a[i * 4 + k] * b[k * 2 + j];
            CHECK(c[i * 2 + j] == doctest::Approx(s));
        }
    check_gradient([&](const ag::Var& v) { return ag::sum(ag::square(ag::matmul(v, ag::Var(b)))); }, a);
    check_gradient([&](const ag::Var& v) { return ag::sum(ag::square(ag::matmul(ag::Var(a), v))); }, b);
    const Tensor bt = random_tensor({2, 4}, rng);
    check_gradient([&](const ag::Var& v) { return ag::sum(ag::tanh(ag::matmul(v, ag::Var(bt), false, true))); }, a);
}

TEST_CASE("conv2d against a direct loop")
{
    Rng rng(3);
    const Tensor x = random_tensor({2, 6, 6, 2}, rng), w = random_tensor({4, 4, 2, 3}, rng);
    const ag::ConvGeometry g{2, 1};
    const Tensor y = ag::conv2d(ag::Var(x), ag::Var(w), g).value();
    CHECK(y.shape() == Shape{2, 3, 3, 3});
    for (int n = 0; n < 2; ++n)
        for (int oy = 0; oy < 3; ++oy)
            for (int ox = 0; ox < 3; ++ox)
                for (int o = 0; o < 3; ++o) {
                    double s = 0;
                    for (int ky = 0; ky < 4; ++ky)
                        for (int kx = 0; kx < 4; ++kx) {
                            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                            if (iy < 0 || iy >= 6 || ix < 0 || ix >= 6)
                                continue;
                            for (int c = 0; c < 2; ++c)
                                s += x[((n * 6 + iy) * 6 + ix) * 2 + c] * w[((ky * 4 + kx) * 2 + c) * 3 + o];
                        }
                    CHECK(y[((n * 3 + oy) * 3 + ox) * 3 + o] == doctest::Approx(s));
                }
}

TEST_CASE("conv gradients and the transposed convolution adjoint")
{
    Rng rng(4);
    const Tensor x = random_tensor({1, 4, 4, 2}, rng), w = random_tensor({4, 4, 2, 2}, rng);
    check_gradient([&](const ag::Var& v) { return ag::sum(ag::square(ag::conv2d(v, ag::Var(w), {}))); }, x);
    check_gradient([&](const ag::Var& v) { return ag::sum(ag::square(ag::conv2d(ag::Var(x), v, {}))); }, w);

    // <conv(x), y> == <x, conv^T(y)>
    const Tensor y = random_tensor({1, 2, 2, 2}, rng);
    const Tensor cx = ag::conv2d(ag::Var(x), ag::Var(w), {}).value();
    const Tensor cty = ag::conv2d_input_grad(ag::Var(y), ag::Var(w), x.shape(), {}).value();
    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < y.size(); ++i)
        lhs += cx[i] * y[i];
    for (std::int64_t i = 0; i < x.size(); ++i)
        rhs += x[i] * cty[i];
    CHECK(lhs == doctest::Approx(rhs));
}

TEST_CASE("double backprop through a gradient norm")
{
    // f(w) = || d/dx sum(tanh(x * w)) ||^2, checked against finite differences in w.
    Rng rng(5);
    const Tensor x0 = random_tensor({5}, rng);
    const auto f = [&](const ag::Var& w) {
        ag::Var x(x0, true);
        const ag::Var out = ag::sum(ag::tanh(ag::mul(x, w)));
        const ag::Var gx = ag::grad(out, x, true);
        return ag::sum(ag::square(gx));
    };
    check_gradient(f, random_tensor({5}, rng), 1e-5);

    // Same through a convolution and a dense layer.
    const Tensor xc = random_tensor({1, 4, 4, 1}, rng);
    const Tensor dense = random_tensor({4, 1}, rng);
    const auto g = [&](const ag::Var& w) {
        ag::Var x(xc, true);
        const ag::Var h = ag::leaky_relu(ag::conv2d(x, w, {}), 0.2);
        const ag::Var out = ag::sum(ag::matmul(ag::reshape(h, {1, 4}), ag::Var(dense)));
        const ag::Var gx = ag::grad(out, x, true);
        return ag::sum(ag::square(gx));
    };
    check_gradient(g, random_tensor({4, 4, 1, 1}, rng), 1e-5);
}

TEST_CASE("no-grad mode records nothing")
{
    ag::Var x(Tensor({2}, {1, 2}), true);
    {
        ag::NoGradGuard guard;
        CHECK_FALSE(ag::square(x).requires_grad());
    }
    CHECK(ag::square(x).requires_grad());
}

TEST_CASE("softmax cross entropy")
{
    ag::Var z(Tensor({2, 3}, {0, 0, 0, 1, 2, 3}));
    const std::vector<int> y{0, 2};
    const double expect = (std::log(3.0) + (std::log(std::exp(1) + std::exp(2) + std::exp(3)) - 3)) / 2;
    CHECK(ag::softmax_cross_entropy(z, y).item() == doctest::Approx(expect));
    Rng rng(6);
    check_gradient([&](const ag::Var& v) { return ag::softmax_cross_entropy(v, y); }, random_tensor({2, 3}, rng));
}

TEST_CASE("batch norm statistics and gradient")
{
    Rng rng(7);
    const Tensor x = random_tensor({6, 3}, rng);
    ag::Var gamma(Tensor({3}, 1.0)), beta(Tensor({3}, 0.0));
    ag::BatchStats st;
    const Tensor y = ag::batch_norm_train(ag::Var(x), gamma, beta, 1e-3, &st).value();
    for (int f = 0; f < 3; ++f) {
        double m = 0, v = 0;
        for (int i = 0; i < 6; ++i)
            m += x[i * 3 + f];
        m /= 6;
        for (int i = 0; i < 6; ++i)
            v += (x[i * 3 + f] - m) * (x[i * 3 + f] - m);
        v /= 6;
        CHECK(st.mean[f] == doctest::Approx(m));
        CHECK(st.var[f] == doctest::Approx(v));
        CHECK(y[f] == doctest::Approx((x[f] - m) / std::sqrt(v + 1e-3)));
    }
    const Tensor w = random_tensor({6, 3}, rng);
    check_gradient(
        [&](const ag::Var& v) {
            return ag::sum(ag::mul_const(ag::batch_norm_train(v, gamma, beta, 1e-3), std::make_shared<Tensor>(w)));
        },
        x);
}

TEST_CASE("batch norm layer updates its moving averages")
{
    nn::BatchNorm bn(2);
    Rng rng(1);
    bn.init(rng);
    ag::Var x(Tensor({2, 2}, {1, 10, 3, 14}));
    bn.forward(x, nn::Mode::Train);
    CHECK(bn.moving_mean[0] == doctest::Approx(0.1 * 2));
    CHECK(bn.moving_mean[1] == doctest::Approx(0.1 * 12));
    // Bessel-corrected batch variance: 1 * 2 / (2 - 1)
    CHECK(bn.moving_variance[0] == doctest::Approx(0.9 + 0.1 * 2));
    const Tensor before = bn.moving_mean;
    bn.forward(x, nn::Mode::Eval);
    CHECK(max_abs_diff(before, bn.moving_mean) == 0.0);
}

TEST_CASE("network weights, clone and transfer")
{
    nn::Network a("t", {3});
    a.emplace<nn::Dense>(3, 4).emplace<nn::LeakyReLU>(0.2).emplace<nn::Dense>(4, 2);
    Rng rng(8);
    a.init(rng);
    CHECK(a.parameter_count() == 3 * 4 + 4 + 4 * 2 + 2);
    CHECK(a.output_signature() == Shape{2});
    const auto names = a.weights();
    CHECK(names.front().first == "0_dense/kernel");
    CHECK(names.back().first == "2_dense/bias");

    nn::Network b = a.clone();
    b.init(rng);
    const Tensor x = random_tensor({5, 3}, rng);
    CHECK(max_abs_diff(a.forward(ag::Var(x), nn::Mode::Eval).value(), b.forward(ag::Var(x), nn::Mode::Eval).value())
          > 0);
    nn::transfer_weights(a, b, nn::prefix_map(3));
    CHECK(max_abs_diff(a.forward(ag::Var(x), nn::Mode::Eval).value(), b.forward(ag::Var(x), nn::Mode::Eval).value())
          == 0);

    nn::Network c("t", {3});
    c.emplace<nn::Dense>(3, 5);
    c.init(rng);
    const auto before = c.weights();
    CHECK_THROWS_AS(nn::transfer_weights(a, c, nn::prefix_map(1)), ShapeMismatch);
    CHECK(max_abs_diff(before[0].second, c.weights()[0].second) == 0);

    nn::Network d = a.clone();
    d.init(rng);
    d.load_archive(a.to_archive());
    CHECK(max_abs_diff(a.forward(ag::Var(x), nn::Mode::Eval).value(), d.forward(ag::Var(x), nn::Mode::Eval).value())
          == 0);
}

TEST_CASE("adam matches a scalar reference")
{
    AdamConfig cfg{0.1, 0.5, 0.9, 1e-7};
    ag::Var p(Tensor({1}, {1.0}), true);
    Adam opt({p}, cfg);
    double x = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 20; ++t) {
        const double g = 2 * x;
        opt.step({ag::Var(Tensor({1}, {2 * p.value()[0]}))});
        m = 0.5 * m + 0.5 * g;
        v = 0.9 * v + 0.1 * g * g;
        // Bias correction folded into the step size, eps outside the correction.
        const double lr_t = 0.1 * std::sqrt(1 - std::pow(0.9, t)) / (1 - std::pow(0.5, t));
        x -= lr_t * m / (std::sqrt(v) + 1e-7);
        CHECK(p.value()[0] == doctest::Approx(x).epsilon(1e-9));
    }
    CHECK(opt.steps() == 20);

    ag::Var q(Tensor({1}, {1.0}), true);
    Adam restored({q}, cfg);
    restored.load_state(opt.state());
    CHECK(restored.steps() == 20);
    ag::Var r(Tensor({2}, {1.0, 2.0}), true);
    Adam other({r}, cfg);
    CHECK_THROWS_AS(other.load_state(opt.state()), CheckpointIncompatible);
}

TEST_CASE("npz round trip")
{
    const auto dir = fs::temp_directory_path() / "bagan_test_npz";
    fs::create_directories(dir);
    npz::Archive a;
    a.add("t", npz::Array::from_tensor(Tensor({2, 2}, {1.5, -2, 3, 1e-300})));
    const std::uint8_t bytes[] = {0, 7, 255};
    a.add("u", npz::Array::from_u8({3}, bytes));
    const std::int64_t ints[] = {-5, 1LL << 40};
    a.add("i", npz::Array::from_i64({2}, ints));
    npz::save(dir / "a.npz", a);
    const auto b = npz::load(dir / "a.npz");
    CHECK(b.at("t").to_tensor().to_vector() == a.at("t").to_tensor().to_vector());
    CHECK(b.at("t").shape == Shape{2, 2});
    CHECK(b.at("u").to_u8() == std::vector<std::uint8_t>{0, 7, 255});
    CHECK(b.at("i").to_int64() == std::vector<std::int64_t>{-5, 1LL << 40});
    CHECK_FALSE(b.contains("missing"));
    fs::remove_all(dir);
}

TEST_CASE("npz files written by numpy load")
{
    const fs::path data = fs::path(BAGAN_SOURCE_DIR) / "tests" / "data";
    const auto c = npz::load(data / "numpy_compressed.npz");
    CHECK(c.at("images").dtype == npz::DType::U8);
    CHECK(c.at("images").shape == Shape{2, 3, 4, 1});
    const auto img = c.at("images").to_u8();
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(img[i] == i);
    CHECK(c.at("labels").to_int64() == std::vector<std::int64_t>{3, -1});
    CHECK(c.at("w").to_doubles() == std::vector<double>{0.5, -2.25, static_cast<double>(1e-3f), 7.0});
    const auto p = npz::load(data / "numpy_plain.npz");
    CHECK(p.at("a").to_doubles() == std::vector<double>{1.5, 2.5, -3.0});
    CHECK(p.at("b").dtype == npz::DType::I32);
    CHECK(p.at("b").to_int64() == std::vector<std::int64_t>{1, 2, 3, 4});
}

TEST_CASE("npy header decode")
{
    const auto arr = npz::Array::from_tensor(Tensor({3}, {1, 2, 3}));
    const auto bytes = npz::encode_npy(arr);
    const std::string magic(bytes.begin() + 1, bytes.begin() + 6);
    CHECK(magic == "NUMPY");
    const auto back = npz::decode_npy(bytes);
    CHECK(back.to_doubles() == std::vector<double>{1, 2, 3});
}
