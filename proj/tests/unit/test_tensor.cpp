#include "doctest.h"

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "jamident/tensor.hpp"

using namespace jamident;
using ad::Tensor;
using TD = Tensor<double>;
using TF = Tensor<float>;

namespace {

TD random(ad::Shape shape, std::uint64_t seed, bool grad = false) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = g(rng);
    return TD::from_data(std::move(shape), std::move(v), grad);
}

} // namespace

TEST_CASE("every op passes a finite-difference gradient check") {
    auto cases = gradcheck::op_cases();
    CHECK(cases.size() >= 30);
    for (auto& c : cases) {
        const auto r = gradcheck::run(c);
        INFO(r.name, " rel error ", r.rel_error);
        CHECK(r.rel_error < 1e-4);
    }
}

TEST_CASE("miniature model gradient check end to end") {
    auto c = gradcheck::mini_model_case();
    const auto r = gradcheck::run(c);
    INFO("rel error ", r.rel_error);
    CHECK(r.rel_error < 1e-3);
}

TEST_CASE("softmax rows sum to one") {
    const auto x = ad::scale(random({6, 9}, 1), 5.0);
    const auto p = ad::softmax(x);
    for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 9; ++j) s += p.at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-7);
    }
    const auto pf = ad::softmax(TF::from_data({1, 3}, {1000.0f, 0.0f, -1000.0f}));
    CHECK(pf.data()[0] == doctest::Approx(1.0));
    CHECK(std::isfinite(pf.data()[2]));
}

TEST_CASE("matmul by the identity") {
    const auto a = random({4, 5}, 2);
    std::vector<double> eye(25, 0.0);
    for (int i = 0; i < 5; ++i) eye[static_cast<std::size_t>(i * 6)] = 1.0;
    const auto out = ad::matmul(a, TD::from_data({5, 5}, eye));
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out.data()[i] == a.data()[i]);
    const auto nt = ad::matmul_nt(a, TD::from_data({5, 5}, eye));
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(nt.data()[i] == a.data()[i]);
}

TEST_CASE("silu limits") {
    const auto y = ad::silu(TD::from_data({3}, {0.0, 40.0, -40.0}));
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == doctest::Approx(40.0));
    CHECK(std::abs(y.data()[2]) < 1e-12);
}

TEST_CASE("layernorm and batchnorm statistics") {
    const auto x = random({5, 8}, 3);
    const auto y = ad::layernorm(x, TD{}, TD{});
    for (std::size_t i = 0; i < 5; ++i) {
        double m = 0.0, v = 0.0;
        for (std::size_t j = 0; j < 8; ++j) m += y.at(i, j);
        m /= 8;
        for (std::size_t j = 0; j < 8; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m);
        CHECK(std::abs(m) < 1e-12);
        CHECK(v / 8 == doctest::Approx(1.0).epsilon(1e-4));
    }

    auto rm = TD::zeros({8}), rv = TD::full({8}, 1.0);
    const auto g = TD::full({8}, 1.0), b = TD::zeros({8});
    const auto bn = ad::batchnorm1d(x, g, b, rm, rv, true);
    for (std::size_t j = 0; j < 8; ++j) {
        double m = 0.0, var = 0.0;
        for (std::size_t i = 0; i < 5; ++i) m += x.at(i, j);
        m /= 5;
        for (std::size_t i = 0; i < 5; ++i) var += (x.at(i, j) - m) * (x.at(i, j) - m);
        // momentum 0.1, unbiased running variance
        CHECK(rm.data()[j] == doctest::Approx(0.1 * m));
        CHECK(rv.data()[j] == doctest::Approx(0.9 + 0.1 * var / 4));
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i) s += bn.at(i, j);
        CHECK(std::abs(s) < 1e-9);
    }
    const auto keep_m = std::vector<double>(rm.data().begin(), rm.data().end());
    ad::batchnorm1d(x, g, b, rm, rv, false);
    CHECK(std::equal(keep_m.begin(), keep_m.end(), rm.data().begin()));
}

TEST_CASE("conv1d pads each segment separately") {
    // Kernel picks the previous row: y[t] = x[t-1] inside each segment.
    std::vector<double> w(3, 0.0);
    w[0] = 1.0;
    const auto weight = TD::from_data({3, 1, 1}, w);
    const auto x = TD::from_data({5, 1}, {1, 2, 3, 4, 5});
    const std::size_t seg[] = {2, 3};
    const auto y = ad::conv1d(x, weight, TD{}, std::span<const std::size_t>(seg));
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 1, 0, 3, 4});
    const auto whole = ad::conv1d(x, weight, TD{});
    CHECK(std::vector<double>(whole.data().begin(), whole.data().end()) == std::vector<double>{0, 1, 2, 3, 4});
}

TEST_CASE("shape mismatches name both shapes") {
    const auto a = random({2, 3}, 4), b = random({3, 2}, 5);
    try {
        ad::add(a, b);
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find(ad::shape_str({2, 3})) != std::string::npos);
        CHECK(msg.find(ad::shape_str({3, 2})) != std::string::npos);
    }
    CHECK_THROWS_AS(ad::matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(ad::reshape(a, {4, 2}), std::invalid_argument);
    const int labels[] = {0, 7};
    CHECK_THROWS_AS(ad::cross_entropy(a, std::span<const int>(labels)), std::invalid_argument);
}

TEST_CASE("backward accumulates into leaves and runs once per graph") {
    auto w = random({3}, 6, true);
    auto loss = ad::sum(ad::mul(w, w));
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * w.data()[i]));
    CHECK_THROWS_AS(loss.backward(), std::logic_error);
    auto again = ad::sum(w);
    again.backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * w.data()[i] + 1.0));
    loss.reset_backward();
    CHECK_NOTHROW(loss.backward());
}

TEST_CASE("shared subexpressions receive the sum of their uses") {
    auto x = random({4}, 7, true);
    auto s = ad::silu(x);
    auto loss = ad::sum(ad::add(s, ad::mul(s, s)));
    loss.backward();
    for (std::size_t i = 0; i < 4; ++i) {
        const double v = x.data()[i];
        const double sig = 1.0 / (1.0 + std::exp(-v));
        const double ds = sig * (1.0 + v * (1.0 - sig));
        const double sv = v * sig;
        CHECK(x.grad()[i] == doctest::Approx((1.0 + 2.0 * sv) * ds));
    }
}

TEST_CASE("sgd step") {
    ad::ParamList<double> params;
    params.push_back({"w", TD::from_data({2}, {1.0, -1.0}, true), true});
    params.push_back({"frozen", TD::from_data({1}, {5.0}, true), false});
    CHECK_THROWS_AS(ad::sgd_step(params, 0.1), std::logic_error);
    auto loss = ad::add(ad::sum(ad::mul(params[0].tensor, params[0].tensor)), ad::sum(params[1].tensor));
    loss.backward();
    ad::sgd_step(params, 0.25);
    CHECK(params[0].tensor.data()[0] == doctest::Approx(0.5));
    CHECK(params[0].tensor.data()[1] == doctest::Approx(-0.5));
    CHECK(params[1].tensor.data()[0] == 5.0);
    CHECK_FALSE(params[0].tensor.has_grad());
}

TEST_CASE("noise is reproducible and the gradient passes through") {
    auto x = random({10}, 8, true);
    Rng a = make_rng(3), b = make_rng(3);
    const auto y1 = ad::gaussian_noise_add(x, 0.5, a), y2 = ad::gaussian_noise_add(x, 0.5, b);
    CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
    Rng c = make_rng(3);
    const auto y0 = ad::gaussian_noise_add(x, 0.0, c);
    CHECK(std::equal(y0.data().begin(), y0.data().end(), x.data().begin()));
    auto loss = ad::sum(y1);
    loss.backward();
    for (double g : x.grad()) CHECK(g == 1.0);
    CHECK_THROWS_AS(ad::gaussian_noise_add(x, -1.0, a), std::invalid_argument);
}
