#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cft/tensor.hpp"
#include "helpers.hpp"

using namespace cft;
using namespace cft::testing;

TEST_CASE("matmul identity and hand arithmetic") {
    Rng rng(7);
    Tensor a = randn({3, 3}, rng);
    Tensor eye = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(bit_equal(matmul(eye, a), a));

    Tensor m = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    Tensor v = Tensor::from_vector({2, 1}, {1, 1});
    Tensor p = matmul(m, v);
    CHECK(p.at({0, 0}) == 3.0);
    CHECK(p.at({1, 0}) == 7.0);
}

TEST_CASE("matmul shape mismatch throws") {
    Rng rng(3);
    Tensor a = randn({2, 3}, rng);
    Tensor b = randn({4, 2}, rng);
    CHECK_THROWS_AS(matmul(a, b), TensorError);
}

TEST_CASE("matmul gradient matches central finite differences") {
    Rng rng(11);
    Tensor a = randn({5, 4}, rng).set_requires_grad(true);
    Tensor b = randn({4, 3}, rng).set_requires_grad(true);
    auto result = check_gradients([&] { return sum(matmul(a, b)); }, {a, b});
    CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("matmul registers the closed-form mul-add count") {
    Rng rng(5);
    Tensor a = randn({5, 7}, rng);
    Tensor b = randn({7, 3}, rng);
    OpCounter counter;
    {
        CounterGuard guard(counter);
        matmul(a, b);
    }
    CHECK(counter.total() == 5u * 7u * 3u);
}

TEST_CASE("matmul_nt counts and matches explicit transpose") {
    Rng rng(6);
    Tensor a = randn({4, 6}, rng);
    Tensor b = randn({5, 6}, rng);
    OpCounter counter;
    Tensor nt;
    {
        CounterGuard guard(counter);
        nt = matmul_nt(a, b);
    }
    CHECK(counter.total() == 4u * 6u * 5u);
    // reference: transpose b by hand
    std::vector<double> bt(6 * 5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) bt[static_cast<size_t>(j * 5 + i)] = b.at({i, j});
    Tensor ref = matmul(a, Tensor::from_vector({6, 5}, bt));
    CHECK(max_abs_diff(nt, ref) == 0.0);
}

TEST_CASE("counter is monotone within a forward pass") {
    Rng rng(8);
    Tensor a = randn({3, 3}, rng);
    OpCounter counter;
    CounterGuard guard(counter);
    uint64_t last = 0;
    for (int i = 0; i < 4; ++i) {
        matmul(a, a);
        CHECK(counter.total() >= last);
        last = counter.total();
    }
}

TEST_CASE("softmax of zeros is uniform and rows sum to one") {
    Tensor x = Tensor::zeros({1, 4});
    Tensor s = softmax(x, 1);
    for (int i = 0; i < 4; ++i) CHECK(s.at({0, i}) == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(9);
    Tensor y = randn({6, 11}, rng, 3.0);
    Tensor sy = softmax(y, 1);
    for (int r = 0; r < 6; ++r) {
        double total = 0.0;
        for (int c = 0; c < 11; ++c) {
            CHECK(sy.at({r, c}) >= 0.0);
            total += sy.at({r, c});
        }
        CHECK(std::fabs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("softmax axis out of range throws") {
    Tensor x = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(softmax(x, 2), TensorError);
}

TEST_CASE("masked softmax zeroes excluded entries exactly") {
    Rng rng(10);
    Tensor x = randn({2, 5}, rng);
    std::vector<uint8_t> mask(10, 1);
    mask[1] = 0;
    mask[7] = 0;
    Tensor s = masked_softmax(x, mask, 1);
    CHECK(s.at({0, 1}) == 0.0);
    CHECK(s.at({1, 2}) == 0.0);
    for (int r = 0; r < 2; ++r) {
        double total = 0.0;
        for (int c = 0; c < 5; ++c) total += s.at({r, c});
        CHECK(std::fabs(total - 1.0) < 1e-12);
    }
    // gradient with respect to a masked logit is exactly zero
    Tensor x2 = randn({1, 4}, rng).set_requires_grad(true);
    std::vector<uint8_t> m2 = {1, 0, 1, 1};
    Tensor weights = Tensor::from_vector({1, 4}, {0.3, 0.5, 0.9, 0.1});
    backward(sum(mul(masked_softmax(x2, m2, 1), weights)));
    CHECK(x2.grad()[1] == 0.0);
}

TEST_CASE("sigmoid at zero") {
    CHECK(sigmoid(Tensor::zeros({1})).item() == 0.5);
}

TEST_CASE("layer_norm output has row mean 0 and variance 1 before gain/bias") {
    Rng rng(12);
    Tensor x = randn({7, 16}, rng, 2.5);
    Tensor gain = Tensor::full({16}, 1.0);
    Tensor bias = Tensor::zeros({16});
    Tensor y = layer_norm(x, gain, bias);
    for (int r = 0; r < 7; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 16; ++c) mean += y.at({r, c});
        mean /= 16.0;
        for (int c = 0; c < 16; ++c) var += (y.at({r, c}) - mean) * (y.at({r, c}) - mean);
        var /= 16.0;
        CHECK(std::fabs(mean) < 1e-12);
        CHECK(std::fabs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("backward of sum gives all-ones") {
    Rng rng(13);
    Tensor x = randn({3, 4}, rng).set_requires_grad(true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("grad of sum(matmul) reproduces the columnwise-sum pattern") {
    Rng rng(14);
    Tensor x = randn({6, 3}, rng).set_requires_grad(true);
    Tensor w = randn({3, 2}, rng).set_requires_grad(true);
    backward(sum(matmul(x, w)));
    // d/dw[k,j] sum_i sum_j (x w) = sum_i x[i,k]
    for (int k = 0; k < 3; ++k) {
        double col = 0.0;
        for (int i = 0; i < 6; ++i) col += x.at({i, k});
        for (int j = 0; j < 2; ++j) CHECK(w.grad()[static_cast<size_t>(k * 2 + j)] == doctest::Approx(col).epsilon(1e-12));
    }
    auto fd = check_gradients([&] { return sum(matmul(x, w)); }, {x, w});
    CHECK(fd.max_rel_err < 1e-6);
}

TEST_CASE("backward requires a scalar loss") {
    Rng rng(15);
    Tensor x = randn({2, 2}, rng).set_requires_grad(true);
    Tensor y = add(x, x);
    CHECK_THROWS_AS(backward(y), TensorError);
}

TEST_CASE("non-finite results are surfaced immediately") {
    Tensor x = Tensor::from_vector({2}, {-1.0, 2.0});
    CHECK_THROWS_AS(log_op(x), TensorError);
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(mul(big, big), TensorError);
}

TEST_CASE("concat then slice round-trips bit-exactly") {
    Rng rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t rows = rng.uniform_int(1, 5), c1 = rng.uniform_int(1, 6), c2 = rng.uniform_int(1, 6);
        Tensor a = randn({rows, c1}, rng);
        Tensor b = randn({rows, c2}, rng);
        const int axis = 1;
        Tensor cat = concat({a, b}, axis);
        CHECK(bit_equal(slice(cat, axis, 0, c1), a));
        CHECK(bit_equal(slice(cat, axis, c1, c2), b));
        Tensor cat0 = concat({a, a}, 0);
        CHECK(bit_equal(slice(cat0, 0, rows, rows), a));
    }
}

TEST_CASE("slice range errors") {
    Tensor a = Tensor::zeros({3, 4});
    CHECK_THROWS_AS(slice(a, 1, 2, 3), TensorError);
    CHECK_THROWS_AS(slice(a, 1, 0, 0), TensorError);
}

TEST_CASE("gather and scatter invert each other on disjoint rows") {
    Rng rng(17);
    Tensor x = randn({6, 3}, rng);
    std::vector<int64_t> rows = {4, 0, 2};
    Tensor g = gather_rows(x, rows);
    Tensor s = scatter_rows(g, rows, 6);
    for (size_t i = 0; i < rows.size(); ++i)
        for (int c = 0; c < 3; ++c) CHECK(s.at({rows[i], c}) == x.at({rows[i], c}));
    CHECK(s.at({1, 0}) == 0.0);
    CHECK_THROWS_AS(scatter_rows(g, {0, 0, 1}, 6), TensorError);
}

TEST_CASE("every differentiable op passes the finite-difference oracle") {
    Rng rng(18);
    const double tol = 1e-4;

    auto fd_unary = [&](const char* name, const std::function<Tensor(const Tensor&)>& op, Tensor input) {
        input.set_requires_grad(true);
        auto r = check_gradients([&] { return sum(op(input)); }, {input});
        INFO(name);
        CHECK(r.max_rel_err < tol);
    };

    fd_unary("relu", [](const Tensor& t) { return relu(t); }, randn_away_from_zero({4, 5}, rng));
    fd_unary("sigmoid", [](const Tensor& t) { return sigmoid(t); }, randn({4, 5}, rng));
    fd_unary("exp", [](const Tensor& t) { return exp_op(t); }, randn({3, 3}, rng));
    fd_unary("log", [](const Tensor& t) { return log_op(t); }, rand_uniform({3, 3}, rng, 0.5, 2.0));
    fd_unary("abs", [](const Tensor& t) { return abs_op(t); }, randn_away_from_zero({3, 4}, rng));
    fd_unary("scale", [](const Tensor& t) { return scale(t, -2.5); }, randn({3, 3}, rng));
    fd_unary("add_scalar", [](const Tensor& t) { return add_scalar(t, 1.5); }, randn({3, 3}, rng));
    fd_unary("clamp", [](const Tensor& t) { return clamp(t, -10.0, 10.0); }, randn({3, 3}, rng));
    fd_unary("softmax", [](const Tensor& t) { return softmax(t, 1); }, randn({3, 6}, rng));
    fd_unary("reshape", [](const Tensor& t) { return reshape(t, {9, 1}); }, randn({3, 3}, rng));
    fd_unary("mean", [](const Tensor& t) { return mean(t); }, randn({4, 4}, rng));
    fd_unary("repeat_rows", [](const Tensor& t) { return repeat_rows(t, 3); }, randn({2, 3}, rng));
    fd_unary("gather", [](const Tensor& t) { return gather_rows(t, {2, 0, 2}); }, randn({4, 3}, rng));
    fd_unary("scatter", [](const Tensor& t) { return scatter_rows(t, {3, 1}, 5); }, randn({2, 3}, rng));
    fd_unary("upsample2x", [](const Tensor& t) { return upsample2x(t); }, randn({1, 3, 3, 2}, rng));
    fd_unary("sinusoidal", [](const Tensor& t) { return sinusoidal_encode(t, 8, 100.0); }, randn({5}, rng));

    SUBCASE("binary and parameterized ops") {
        Tensor a = randn({3, 4}, rng).set_requires_grad(true);
        Tensor b = randn({3, 4}, rng).set_requires_grad(true);
        CHECK(check_gradients([&] { return sum(mul(a, b)); }, {a, b}).max_rel_err < tol);
        CHECK(check_gradients([&] { return sum(sub(a, b)); }, {a, b}).max_rel_err < tol);
        CHECK(check_gradients([&] { return sum(add(a, b)); }, {a, b}).max_rel_err < tol);

        Tensor v = randn({4}, rng).set_requires_grad(true);
        CHECK(check_gradients([&] { return sum(add_rowvec(a, v)); }, {a, v}).max_rel_err < tol);

        Tensor gain = rand_uniform({4}, rng, 0.5, 1.5).set_requires_grad(true);
        Tensor bias = randn({4}, rng).set_requires_grad(true);
        CHECK(check_gradients([&] { return sum(mul(layer_norm(a, gain, bias), b)); }, {a, gain, bias}).max_rel_err <
              tol);

        Tensor c1 = randn({2, 3}, rng).set_requires_grad(true);
        Tensor c2 = randn({2, 2}, rng).set_requires_grad(true);
        Tensor wsel = randn({2, 5}, rng);
        CHECK(check_gradients([&] { return sum(mul(concat({c1, c2}, 1), wsel)); }, {c1, c2}).max_rel_err < tol);
        CHECK(check_gradients([&] { return sum(slice(c1, 1, 1, 2)); }, {c1}).max_rel_err < tol);

        Tensor qa = randn({3, 4}, rng).set_requires_grad(true);
        Tensor qb = randn({5, 4}, rng).set_requires_grad(true);
        CHECK(check_gradients([&] { return sum(matmul_nt(qa, qb)); }, {qa, qb}).max_rel_err < tol);
    }

    SUBCASE("conv2d") {
        Tensor x = randn({2, 5, 5, 3}, rng).set_requires_grad(true);
        Tensor w = randn({3, 3, 3, 4}, rng, 0.5).set_requires_grad(true);
        Tensor b = randn({4}, rng).set_requires_grad(true);
        Tensor probe = randn({2 * 3 * 3 * 4}, rng);
        auto loss = [&] {
            Tensor y = conv2d(x, w, b, 2, 1);
            return sum(mul(reshape(y, {y.numel()}), probe));
        };
        CHECK(check_gradients(loss, {x, w, b}).max_rel_err < tol);
    }

    SUBCASE("masked softmax") {
        Tensor x = randn({2, 6}, rng).set_requires_grad(true);
        std::vector<uint8_t> mask = {1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0};
        Tensor probe = randn({2, 6}, rng);
        CHECK(check_gradients([&] { return sum(mul(masked_softmax(x, mask, 1), probe)); }, {x}).max_rel_err < tol);
    }
}

TEST_CASE("sinusoidal encode matches the stated closed forms") {
    Tensor zero = Tensor::zeros({1});
    Tensor e = sinusoidal_encode(zero, 4, 1e4);
    CHECK(e.at({0, 0}) == 0.0);
    CHECK(e.at({0, 1}) == 1.0);
    CHECK(e.at({0, 2}) == 0.0);
    CHECK(e.at({0, 3}) == 1.0);

    Tensor half_pi = Tensor::from_vector({1}, {M_PI / 2.0});
    Tensor e2 = sinusoidal_encode(half_pi, 2, 1.0);
    CHECK(e2.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::fabs(e2.at({0, 1})) < 1e-15);

    CHECK_THROWS_AS(sinusoidal_encode(zero, 3, 1e4), TensorError);

    // periodicity of the first channel pair: value and value + 2*pi*temperature^0
    Rng rng(19);
    Tensor v = randn({16}, rng, 2.0);
    std::vector<double> shifted = v.values();
    for (double& s : shifted) s += 2.0 * M_PI;
    Tensor ev = sinusoidal_encode(v, 8, 50.0);
    Tensor es = sinusoidal_encode(Tensor::from_vector({16}, shifted), 8, 50.0);
    for (int i = 0; i < 16; ++i) {
        CHECK(ev.at({i, 0}) == doctest::Approx(es.at({i, 0})).epsilon(1e-9));
        CHECK(ev.at({i, 1}) == doctest::Approx(es.at({i, 1})).epsilon(1e-9));
    }
    // channels stay inside [-1, 1]
    for (double x : ev.values()) CHECK(std::fabs(x) <= 1.0);
}

TEST_CASE("no-grad mode skips graph construction") {
    Rng rng(20);
    Tensor x = randn({2, 2}, rng).set_requires_grad(true);
    NoGradGuard off;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node().parents.empty());
}

TEST_CASE("seeded generator reproduces streams") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(123), d(124);
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs = differs || (c.next_u64() != d.next_u64());
    CHECK(differs);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1.0, 2.0, 3.0}), TensorError);
    Rng rng(21);
    Tensor x = randn({3}, rng).set_requires_grad(true);
    backward(sum(x));
    CHECK(x.grad().size() == x.values().size());
}
