#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ebus3d/ops.hpp"
#include "ebus3d/optim.hpp"
#include "ebus3d/tensor.hpp"
#include "oracles.hpp"

using namespace ebus3d;

namespace {

template <typename S>
Tensor<S> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

// relu has a kink at 0; keep finite-difference probes away from it
Tensor<double> random_tensor_away_from_zero(Shape shape, Rng& rng, bool requires_grad) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) {
        double u = rng.uniform(0.05, 1.0);
        v = rng.bernoulli(0.5) ? u : -u;
    }
    return t;
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
    Tensor<float> t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.shape() == Shape{2, 3});

    CHECK_THROWS_AS(Tensor<float>({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), std::invalid_argument);

    Tensor<float> s = Tensor<float>::scalar(4.f);
    CHECK(s.item() == 4.f);
    CHECK_THROWS_AS(t.item(), std::invalid_argument);

    t.set({1, 2}, 7.f);
    CHECK(t.at({1, 2}) == 7.f);
    CHECK(t[5] == 7.f);
    CHECK_THROWS_AS(t.at({1, 3}), std::out_of_range);
}

TEST_CASE("conv output shape follows the extent formula") {
    // full-resolution stem: 704x576x24 in, kernel 5^3, stride 1, pad 2
    ConvSpec stem = ConvSpec::cube3d(3, 16, 5, 1, 2);
    CHECK(conv_output_shape(stem, {1, 3, 24, 704, 576}) == Shape{1, 16, 24, 704, 576});

    ConvSpec stem2d = ConvSpec::square2d(3, 16, 5, 1, 2);
    CHECK(conv_output_shape(stem2d, {1, 3, 704, 576}) == Shape{1, 16, 704, 576});

    // downsampling conv: kernel 3, stride 2, pad 1 halves odd extents upward
    ConvSpec down = ConvSpec::cube3d(16, 16, 3, 1, 1);
    down.stride = {1, 2, 2};
    CHECK(conv_output_shape(down, {1, 16, 24, 704, 576}) == Shape{1, 16, 24, 352, 288});

    // errors name the offending axis
    CHECK_THROWS_WITH_AS(conv_output_shape(stem, {1, 4, 24, 32, 32}),
                         doctest::Contains("channel"), std::invalid_argument);
    ConvSpec nopad = ConvSpec::cube3d(1, 1, 3, 1, 0);
    CHECK_THROWS_WITH_AS(conv_output_shape(nopad, {1, 1, 2, 8, 8}), doctest::Contains("axis T"),
                         std::invalid_argument);
}

TEST_CASE("conv3d identity and hand values") {
    // 1x1x1 kernel with weight 1, bias 0 is the identity
    Rng rng(7);
    auto x = random_tensor<float>({1, 1, 3, 4, 5}, rng);
    ConvSpec id = ConvSpec::cube3d(1, 1, 1, 1, 0);
    Tensor<float> w({1, 1, 1, 1, 1}, {1.f});
    Tensor<float> b({1}, {0.f});
    auto y = conv3d(x, id, w, b);
    CHECK(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

    // all-ones 2^3 kernel over an all-ones 2x2x2 input sums to 8
    ConvSpec cube = ConvSpec::cube3d(1, 1, 2, 1, 0);
    auto ones = Tensor<float>::full({1, 1, 2, 2, 2}, 1.f);
    auto wones = Tensor<float>::full({1, 1, 2, 2, 2}, 1.f);
    auto out = conv3d(ones, cube, wones, b);
    CHECK(out.shape() == Shape{1, 1, 1, 1, 1});
    CHECK(out.item() == doctest::Approx(8.0).epsilon(1e-6));
}

TEST_CASE("conv2d identity and hand values") {
    Rng rng(8);
    auto x = random_tensor<float>({1, 1, 4, 5}, rng);
    ConvSpec id = ConvSpec::square2d(1, 1, 1, 1, 0);
    Tensor<float> w({1, 1, 1, 1}, {1.f});
    Tensor<float> b({1}, {0.f});
    auto y = conv2d(x, id, w, b);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

    ConvSpec sq = ConvSpec::square2d(1, 1, 2, 1, 0);
    auto ones = Tensor<float>::full({1, 1, 2, 2}, 1.f);
    auto wones = Tensor<float>::full({1, 1, 2, 2}, 1.f);
    auto out = conv2d(ones, sq, wones, b);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.item() == doctest::Approx(4.0));
}

TEST_CASE("conv3d and conv2d match the nested-loop oracle") {
    Rng rng(42);
    for (int kernel : {1, 2, 3}) {
        for (int stride : {1, 2}) {
            for (int pad : {0, 1, 2}) {
                oracle::ConvDims d{2, 3, 4, 5, 6, 7, kernel, kernel, kernel,
                                   stride, stride, stride, pad, pad, pad};
                if (d.ot() <= 0 || d.oh() <= 0 || d.ow() <= 0) continue;
                auto x = random_tensor<float>({d.n, d.cin, d.it, d.ih, d.iw}, rng);
                auto w = random_tensor<float>({d.cout, d.cin, kernel, kernel, kernel}, rng);
                auto b = random_tensor<float>({d.cout}, rng);
                ConvSpec spec{static_cast<int>(d.cin), static_cast<int>(d.cout),
                              {kernel, kernel, kernel}, {stride, stride, stride}, {pad, pad, pad}};
                auto got = conv3d(x, spec, w, b);
                auto want = oracle::conv3d_loops(d, x.data(), w.data(), b.data());
                REQUIRE(got.size() == static_cast<std::int64_t>(want.size()));
                for (std::size_t i = 0; i < want.size(); ++i)
                    CHECK(std::abs(got[static_cast<std::int64_t>(i)] - want[i]) < 1e-5f);

                // 2D path: same data with T collapsed
                oracle::ConvDims d2{2, 3, 4, 1, 6, 7, 1, kernel, kernel,
                                    1, stride, stride, 0, pad, pad};
                if (d2.oh() <= 0 || d2.ow() <= 0) continue;
                auto x2 = random_tensor<float>({d2.n, d2.cin, d2.ih, d2.iw}, rng);
                auto w2 = random_tensor<float>({d2.cout, d2.cin, kernel, kernel}, rng);
                ConvSpec spec2{static_cast<int>(d2.cin), static_cast<int>(d2.cout),
                               {kernel, kernel}, {stride, stride}, {pad, pad}};
                auto got2 = conv2d(x2, spec2, w2, b);
                auto want2 = oracle::conv3d_loops(d2, x2.data(), w2.data(), b.data());
                for (std::size_t i = 0; i < want2.size(); ++i)
                    CHECK(std::abs(got2[static_cast<std::int64_t>(i)] - want2[i]) < 1e-5f);
            }
        }
    }
}

TEST_CASE("conv is linear in its input for fixed weights and zero bias") {
    Rng rng(11);
    ConvSpec spec = ConvSpec::cube3d(2, 3, 3, 1, 1);
    auto w = random_tensor<float>({3, 2, 3, 3, 3}, rng);
    auto zero_b = Tensor<float>::zeros({3});
    auto x = random_tensor<float>({1, 2, 4, 5, 5}, rng);
    auto y = random_tensor<float>({1, 2, 4, 5, 5}, rng);
    const float a = 0.7f, c = -1.3f;

    Tensor<float> mix(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + c * y[i];
    auto lhs = conv3d(mix, spec, w, zero_b);
    auto fx = conv3d(x, spec, w, zero_b);
    auto fy = conv3d(y, spec, w, zero_b);
    for (std::int64_t i = 0; i < lhs.size(); ++i)
        CHECK(std::abs(lhs[i] - (a * fx[i] + c * fy[i])) < 1e-5f);
}

TEST_CASE("batch_norm training statistics and eval arithmetic") {
    Rng rng(3);
    auto x = random_tensor<float>({4, 3, 5, 5}, rng, -2.0, 3.0);
    auto gamma = Tensor<float>::full({3}, 1.f);
    auto beta = Tensor<float>::zeros({3});
    BatchNormState<float> st(3);

    auto y = batch_norm(x, gamma, beta, st, /*training=*/true);
    // per-channel mean ~0, variance ~1 before scale/shift
    const std::int64_t spatial = 25, n = 4, c = 3;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t s = 0; s < spatial; ++s) mean += y[(i * c + ch) * spatial + s];
        mean /= n * spatial;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t s = 0; s < spatial; ++s) {
                double d = y[(i * c + ch) * spatial + s] - mean;
                var += d * d;
            }
        var /= n * spatial;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }

    // constant channel normalizes to zero
    auto xc = Tensor<float>::full({2, 1, 4}, 3.25f);
    auto g1 = Tensor<float>::full({1}, 1.f);
    auto b1 = Tensor<float>::zeros({1});
    BatchNormState<float> st1(1);
    auto yc = batch_norm(xc, g1, b1, st1, true);
    for (std::int64_t i = 0; i < yc.size(); ++i) CHECK(std::abs(yc[i]) < 1e-6f);

    // eval mode: (x - m)/sqrt(v + eps) * scale + shift for x=2,m=1,v=1,scale=3,shift=1
    Tensor<float> xe({1, 1, 1}, {2.f});
    Tensor<float> ge({1}, {3.f});
    Tensor<float> be({1}, {1.f});
    BatchNormState<float> ste(1);
    ste.running_mean[0] = 1.f;
    ste.running_var[0] = 1.f;
    auto ye = batch_norm(xe, ge, be, ste, /*training=*/false);
    CHECK(std::abs(ye.item() - 4.0f) < 1e-4f);

    // channel mismatch is rejected
    CHECK_THROWS_WITH_AS(batch_norm(x, g1, b1, st, true), doctest::Contains("channel mismatch"),
                         std::invalid_argument);
}

TEST_CASE("activations") {
    Tensor<float> x({3}, {0.f, -1.f, 2.f});
    auto s = sigmoid(x);
    CHECK(s[0] == doctest::Approx(0.5));
    auto r = relu(x);
    CHECK(r[0] == 0.f);
    CHECK(r[1] == 0.f);
    CHECK(r[2] == 2.f);

    Tensor<double> ln3 = Tensor<double>::scalar(std::log(3.0));
    CHECK(sigmoid(ln3).item() == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("global_avg_pool") {
    auto c = Tensor<float>::full({2, 3, 4, 5}, 2.5f);
    auto p = global_avg_pool(c);
    CHECK(p.shape() == Shape{2, 3});
    for (std::int64_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(2.5));

    Tensor<float> two({1, 1, 2, 1, 1}, {1.f, 3.f});
    CHECK(global_avg_pool(two).item() == doctest::Approx(2.0));

    // paper-sized feature map pools to one value per channel
    Tensor<float> feat = Tensor<float>::full({1, 512, 24, 11, 9}, 0.125f);
    auto pf = global_avg_pool(feat);
    CHECK(pf.shape() == Shape{1, 512});

    CHECK_THROWS_AS(global_avg_pool(Tensor<float>({2, 3})), std::invalid_argument);
}

TEST_CASE("linear") {
    Tensor<float> x({1, 2}, {4.f, 5.f});
    Tensor<float> w({1, 2}, {1.f, 2.f});
    Tensor<float> b({1}, {3.f});
    CHECK(linear(x, w, b).item() == doctest::Approx(17.0));

    // identity weights, zero bias
    Tensor<float> eye({2, 2}, {1.f, 0.f, 0.f, 1.f});
    auto y = linear(x, eye, Tensor<float>::zeros({2}));
    CHECK(y[0] == 4.f);
    CHECK(y[1] == 5.f);

    // 512 -> 1000 projection used after pooling
    Rng rng(5);
    auto xf = random_tensor<float>({1, 512}, rng);
    auto wf = random_tensor<float>({1000, 512}, rng);
    auto bf = Tensor<float>::zeros({1000});
    CHECK(linear(xf, wf, bf).shape() == Shape{1, 1000});

    CHECK_THROWS_WITH_AS(linear(xf, w, b), doctest::Contains("dimension mismatch"),
                         std::invalid_argument);
}

TEST_CASE("bce_loss values and clamping") {
    CHECK(bce_loss(Tensor<double>::scalar(0.5), 1.0).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(Tensor<double>::scalar(0.5), 0.0).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(Tensor<double>::scalar(0.9), 1.0).item() ==
          doctest::Approx(-std::log(0.9)).epsilon(1e-12));

    // exactly-correct predictions clamp instead of producing log(0)
    CHECK(bce_loss(Tensor<double>::scalar(1.0), 1.0).item() <= -std::log(1.0 - 1e-7) + 1e-12);
    CHECK(bce_loss(Tensor<double>::scalar(0.0), 0.0).item() <= -std::log(1.0 - 1e-7) + 1e-12);

    // non-negative, minimal at p == y
    for (double p : {0.1, 0.3, 0.5, 0.7, 0.95}) {
        CHECK(bce_loss(Tensor<double>::scalar(p), 1.0).item() >= 0.0);
        CHECK(bce_loss(Tensor<double>::scalar(p), 1.0).item() >=
              bce_loss(Tensor<double>::scalar(1.0), 1.0).item());
    }
    CHECK_THROWS_AS(bce_loss(Tensor<double>::scalar(0.5), 0.25), std::invalid_argument);
}

TEST_CASE("backward basics") {
    // loss = sum(x) gives grad of ones
    Rng rng(9);
    auto x = random_tensor<double>({2, 3, 4}, rng, -1, 1, /*requires_grad=*/true);
    auto loss = sum(x);
    backward(loss);
    for (const auto& g : x.grad()) CHECK(g == doctest::Approx(1.0));

    // repeated backward without reset accumulates
    backward(loss);
    for (const auto& g : x.grad()) CHECK(g == doctest::Approx(2.0));

    // backward on non-scalars is rejected
    auto y = relu(x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("bce through sigmoid has the closed-form gradient") {
    // w=0, x=1, y=1: p = 0.5 and dL/dw = (p - y) * x = -0.5
    auto w = Tensor<double>::scalar(0.0, /*requires_grad=*/true);
    auto x = Tensor<double>::scalar(1.0);
    auto p = sigmoid(mul(w, x));
    auto loss = bce_loss(p, 1.0);
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(-0.5).epsilon(1e-10));
}

TEST_CASE("finite-difference check for every operator") {
    std::mt19937_64 pick(101);
    Rng rng(202);

    SUBCASE("conv3d") {
        for (int trial = 0; trial < 4; ++trial) {
            auto x = random_tensor<double>({2, 2, 3, 4, 4}, rng, -1, 1, true);
            auto w = random_tensor<double>({3, 2, 2, 2, 2}, rng, -1, 1, true);
            auto b = random_tensor<double>({3}, rng, -1, 1, true);
            auto t = random_tensor<double>({2, 3, 2, 3, 3}, rng);
            ConvSpec spec{2, 3, {2, 2, 2}, {1, 1, 1}, {0, 0, 0}};
            auto fn = [&]() { return sum(mul(conv3d(x, spec, w, b), t)); };
            auto rep = oracle::grad_check({x, w, b}, fn, pick);
            CHECK(rep.ok());
        }
    }
    SUBCASE("conv2d strided padded") {
        auto x = random_tensor<double>({1, 2, 5, 6}, rng, -1, 1, true);
        auto w = random_tensor<double>({2, 2, 3, 3}, rng, -1, 1, true);
        auto b = random_tensor<double>({2}, rng, -1, 1, true);
        ConvSpec spec{2, 2, {3, 3}, {2, 2}, {1, 1}};
        auto t = random_tensor<double>({1, 2, 3, 3}, rng);
        auto fn = [&]() { return sum(mul(conv2d(x, spec, w, b), t)); };
        CHECK(oracle::grad_check({x, w, b}, fn, pick).ok());
    }
    SUBCASE("batch_norm training mode") {
        auto x = random_tensor<double>({3, 2, 4}, rng, -1, 1, true);
        auto g = random_tensor<double>({2}, rng, 0.5, 1.5, true);
        auto b = random_tensor<double>({2}, rng, -0.5, 0.5, true);
        auto t = random_tensor<double>({3, 2, 4}, rng);
        BatchNormState<double> st(2);
        auto fn = [&]() {
            return sum(mul(batch_norm(x, g, b, st, true, /*update_running=*/false), t));
        };
        CHECK(oracle::grad_check({x, g, b}, fn, pick).ok());
    }
    SUBCASE("batch_norm eval mode") {
        auto x = random_tensor<double>({3, 2, 4}, rng, -1, 1, true);
        auto g = random_tensor<double>({2}, rng, 0.5, 1.5, true);
        auto b = random_tensor<double>({2}, rng, -0.5, 0.5, true);
        auto t = random_tensor<double>({3, 2, 4}, rng);
        BatchNormState<double> st(2);
        st.running_mean = {0.2, -0.4};
        st.running_var = {1.4, 0.6};
        auto fn = [&]() { return sum(mul(batch_norm(x, g, b, st, false), t)); };
        CHECK(oracle::grad_check({x, g, b}, fn, pick).ok());
    }
    SUBCASE("relu") {
        auto x = random_tensor_away_from_zero({3, 4}, rng, true);
        auto t = random_tensor<double>({3, 4}, rng);
        auto fn = [&]() { return sum(mul(relu(x), t)); };
        CHECK(oracle::grad_check({x}, fn, pick).ok());
    }
    SUBCASE("sigmoid, pool, linear, add, mul_scalar") {
        auto x = random_tensor<double>({2, 3, 2, 2}, rng, -1, 1, true);
        auto w = random_tensor<double>({4, 3}, rng, -1, 1, true);
        auto b = random_tensor<double>({4}, rng, -1, 1, true);
        auto t = random_tensor<double>({2, 4}, rng);
        auto fn = [&]() {
            auto h = global_avg_pool(sigmoid(x));
            auto z = linear(add(h, h), w, b);
            return sum(mul(mul_scalar(z, 0.5), t));
        };
        CHECK(oracle::grad_check({x, w, b}, fn, pick).ok());
    }
    SUBCASE("bce") {
        auto s = Tensor<double>::scalar(0.37, true);
        auto fn1 = [&]() { return bce_loss(s, 1.0); };
        CHECK(oracle::grad_check({s}, fn1, pick).ok());
        auto s0 = Tensor<double>::scalar(0.81, true);
        auto fn0 = [&]() { return bce_loss(s0, 0.0); };
        CHECK(oracle::grad_check({s0}, fn0, pick).ok());
    }
}

TEST_CASE("no-grad mode records no graph") {
    Rng rng(1);
    auto x = random_tensor<double>({2, 2}, rng, -1, 1, true);
    NoGradGuard ng;
    auto y = relu(x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("cosine schedule endpoints and monotonicity") {
    CosineSchedule sch{1e-4, 100, 0};
    CHECK(sch.lr() == doctest::Approx(1e-4).epsilon(1e-12));
    sch.current_step = 100;
    CHECK(sch.lr() == doctest::Approx(0.0).epsilon(1e-18));
    sch.current_step = 50;
    CHECK(sch.lr() == doctest::Approx(5e-5).epsilon(1e-12));

    double prev = 1.0;
    for (std::int64_t t = 0; t <= 100; ++t) {
        sch.current_step = t;
        CHECK(sch.lr() <= prev + 1e-18);
        prev = sch.lr();
    }
}

TEST_CASE("sgd accumulation and update") {
    auto p = Tensor<float>::scalar(1.0f, true);
    SgdConfig cfg;
    cfg.schedule = {1e-4, 1000, 0};
    cfg.accumulation = 12;
    SgdOptimizer<float> opt({p}, cfg);

    // param 1.0, mean grad 1.0, lr 1e-4 -> 0.9999 after the first step
    int steps = 0;
    for (int i = 0; i < 12; ++i) {
        p.grad()[0] += 1.0f;
        if (opt.accumulate()) ++steps;
    }
    CHECK(steps == 1);
    CHECK(p.data()[0] == doctest::Approx(0.9999).epsilon(1e-6));

    // 24 samples streamed -> exactly 2 optimizer steps
    for (int i = 0; i < 12; ++i) {
        p.grad()[0] += 1.0f;
        if (opt.accumulate()) ++steps;
    }
    CHECK(steps == 2);
    CHECK(opt.steps_taken() == 2);
    CHECK(p.data()[0] == doctest::Approx(1.0 - 2e-4).epsilon(1e-6));

    CHECK_FALSE(opt.flush());  // nothing pending
    p.grad()[0] += 2.0f;
    opt.accumulate();
    CHECK(opt.pending() == 1);
    CHECK(opt.flush());  // partial window uses mean over 1 sample
    CHECK(opt.steps_taken() == 3);
}

TEST_CASE("single-threaded forward is deterministic for identical seeds") {
    auto run = []() {
        Rng rng(99);
        auto x = random_tensor<float>({1, 3, 4, 8, 8}, rng);
        auto w = random_tensor<float>({4, 3, 3, 3, 3}, rng);
        auto b = random_tensor<float>({4}, rng);
        ConvSpec spec = ConvSpec::cube3d(3, 4, 3, 1, 1);
        auto y = relu(conv3d(x, spec, w, b));
        return y.data();
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("forward passes stay finite") {
    Rng rng(15);
    auto x = random_tensor<float>({1, 3, 4, 10, 10}, rng);
    auto w = random_tensor<float>({8, 3, 3, 3, 3}, rng);
    auto b = random_tensor<float>({8}, rng);
    auto y = conv3d(x, ConvSpec::cube3d(3, 8, 3, 1, 1), w, b);
    CHECK(y.all_finite());
}
