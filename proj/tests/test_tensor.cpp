#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "csfc/tensor.hpp"

using namespace csfc;

namespace {

Tensor<double> random_tensor(Axes axes, Rng& rng) {
    return Tensor<double>::uniform(std::move(axes), -1.0, 1.0, rng);
}

} // namespace

TEST_CASE("construction and element access") {
    auto t = Tensor<double>::from_data({{"r", 2}, {"c", 3}}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.size() == 6);
    CHECK(t.axis_size("c") == 3);
    CHECK(t.at({0, 0}) == 1.0);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK(Tensor<double>::scalar(7.0).value() == 7.0);
    CHECK(Tensor<double>::full({{"x", 3}}, 2.5).at({1}) == 2.5);

    CHECK_THROWS_AS(Tensor<double>::from_data({{"r", 2}}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>::zeros({{"r", 2}, {"r", 3}}), AxisError);
    CHECK_THROWS_AS(Tensor<double>::zeros({{"r", 0}}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>::zeros({{"", 2}}), AxisError);
    CHECK_THROWS_AS(t.value(), ShapeError);
    CHECK_THROWS_AS(t.at({0}), ShapeError);
    CHECK_THROWS_AS(t.at({2, 0}), IndexError);
    CHECK_THROWS_AS(t.axis_index("missing"), AxisError);
}

TEST_CASE("uniform factory is deterministic and in range") {
    Rng a(42), b(42);
    auto x = Tensor<double>::uniform({{"n", 64}}, -0.5, 0.5, a);
    auto y = Tensor<double>::uniform({{"n", 64}}, -0.5, 0.5, b);
    for (std::size_t i = 0; i < 64; ++i) {
        CHECK(x.data()[i] == y.data()[i]);
        CHECK(x.data()[i] >= -0.5);
        CHECK(x.data()[i] < 0.5);
    }
}

TEST_CASE("contract of two matrices reproduces a hand matmul") {
    auto a = Tensor<double>::from_data({{"x", 2}, {"k", 3}}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::from_data({{"k", 3}, {"y", 2}}, {1, 2, 3, 4, 5, 6});
    auto c = contract(a, b, "k");
    REQUIRE(c.axes() == Axes{{"x", 2}, {"y", 2}});
    CHECK(c.at({0, 0}) == doctest::Approx(22));
    CHECK(c.at({0, 1}) == doctest::Approx(28));
    CHECK(c.at({1, 0}) == doctest::Approx(49));
    CHECK(c.at({1, 1}) == doctest::Approx(64));
}

TEST_CASE("contract matches a naive loop on random rank-3 operands") {
    Rng rng(7);
    auto a = random_tensor({{"p", 3}, {"k", 4}, {"q", 2}}, rng);
    auto b = random_tensor({{"r", 5}, {"k", 4}}, rng);
    auto c = contract(a, b, "k");
    REQUIRE(c.axes() == Axes{{"p", 3}, {"q", 2}, {"r", 5}});
    for (std::size_t p = 0; p < 3; ++p) {
        for (std::size_t q = 0; q < 2; ++q) {
            for (std::size_t r = 0; r < 5; ++r) {
                double want = 0.0;
                for (std::size_t k = 0; k < 4; ++k) {
                    want += a.at({p, k, q}) * b.at({r, k});
                }
                CHECK(c.at({p, q, r}) == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("contract pairs entries by axis name, not position") {
    Rng rng(11);
    auto a = random_tensor({{"u", 2}, {"k", 3}}, rng);
    auto b = random_tensor({{"v", 4}, {"k", 3}}, rng);
    auto ab = contract(a, b, "k");
    auto ba = contract(b, a, "k");
    REQUIRE(ab.axes() == Axes{{"u", 2}, {"v", 4}});
    REQUIRE(ba.axes() == Axes{{"v", 4}, {"u", 2}});
    for (std::size_t u = 0; u < 2; ++u) {
        for (std::size_t v = 0; v < 4; ++v) {
            CHECK(ab.at({u, v}) == doctest::Approx(ba.at({v, u})).epsilon(1e-12));
        }
    }
}

TEST_CASE("contract of two vectors is a scalar dot product") {
    auto a = Tensor<double>::from_data({{"k", 3}}, {1, 2, 3});
    auto b = Tensor<double>::from_data({{"k", 3}}, {4, 5, 6});
    CHECK(contract(a, b, "k").value() == doctest::Approx(32));
}

TEST_CASE("contract is bilinear") {
    Rng rng(13);
    auto a1 = random_tensor({{"x", 3}, {"k", 4}}, rng);
    auto a2 = random_tensor({{"x", 3}, {"k", 4}}, rng);
    auto b = random_tensor({{"k", 4}, {"y", 2}}, rng);
    auto lhs = contract(add(a1, a2), b, "k");
    auto rhs = add(contract(a1, b, "k"), contract(a2, b, "k"));
    for (std::size_t x = 0; x < 3; ++x) {
        for (std::size_t y = 0; y < 2; ++y) {
            CHECK(lhs.at({x, y}) == doctest::Approx(rhs.at({x, y})).epsilon(1e-12));
        }
    }
}

TEST_CASE("contract rejects bad axes") {
    auto a = Tensor<double>::zeros({{"x", 2}, {"k", 3}});
    auto b = Tensor<double>::zeros({{"k", 3}, {"y", 2}});
    auto b_bad = Tensor<double>::zeros({{"k", 4}, {"y", 2}});
    auto b_clash = Tensor<double>::zeros({{"k", 3}, {"x", 2}});
    CHECK_THROWS_AS(contract(a, b, "z"), AxisError);
    CHECK_THROWS_AS(contract(a, b_bad, "k"), ShapeError);
    CHECK_THROWS_AS(contract(a, b_clash, "k"), AxisError);
}

TEST_CASE("elementwise ops match loops and demand identical axes") {
    Rng rng(17);
    auto a = random_tensor({{"x", 2}, {"y", 3}}, rng);
    auto b = random_tensor({{"x", 2}, {"y", 3}}, rng);
    auto s = add(a, b);
    auto d = sub(a, b);
    auto m = mul(a, b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(s.data()[i] == doctest::Approx(a.data()[i] + b.data()[i]));
        CHECK(d.data()[i] == doctest::Approx(a.data()[i] - b.data()[i]));
        CHECK(m.data()[i] == doctest::Approx(a.data()[i] * b.data()[i]));
    }
    auto sc = scale(a, -2.0);
    CHECK(sc.data()[3] == doctest::Approx(-2.0 * a.data()[3]));

    auto transposed = Tensor<double>::zeros({{"y", 3}, {"x", 2}});
    auto resized = Tensor<double>::zeros({{"x", 2}, {"y", 4}});
    CHECK_THROWS_AS(add(a, transposed), AxisError);
    CHECK_THROWS_AS(add(a, resized), ShapeError);
}

TEST_CASE("relu clamps negatives and gates the gradient") {
    auto x = Tensor<double>::from_data({{"n", 4}}, {-2, -0.5, 0.5, 2});
    x.set_requires_grad(true);
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 0.5);
    CHECK(y.data()[3] == 2.0);
    backward(sum_all(y));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 1.0);
    CHECK(x.grad()[3] == 1.0);
}

TEST_CASE("softmax normalizes, is shift invariant, and matches hand values") {
    auto x = Tensor<double>::from_data({{"r", 2}, {"c", 3}}, {1, 2, 3, -1, 0, 1});
    auto y = softmax(x, "c");
    for (std::size_t r = 0; r < 2; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) sum += y.at({r, c});
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    // independent recomputation
    for (std::size_t r = 0; r < 2; ++r) {
        double denom = 0.0;
        for (std::size_t c = 0; c < 3; ++c) denom += std::exp(x.at({r, c}));
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(y.at({r, c}) == doctest::Approx(std::exp(x.at({r, c})) / denom));
        }
    }
    auto shifted = softmax(
        Tensor<double>::from_data({{"r", 2}, {"c", 3}}, {101, 102, 103, 99, 100, 101}),
        "c");
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(shifted.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));
    }

    auto two = softmax(Tensor<double>::from_data({{"c", 2}}, {0.0, std::log(2.0)}), "c");
    CHECK(two.at({0}) == doctest::Approx(1.0 / 3.0));
    CHECK(two.at({1}) == doctest::Approx(2.0 / 3.0));

    auto bad = Tensor<double>::from_data({{"c", 2}},
                                         {std::numeric_limits<double>::quiet_NaN(), 0.0});
    CHECK_THROWS_AS(softmax(bad, "c"), NumericError);
}

TEST_CASE("masked softmax renormalizes over kept positions only") {
    auto x = Tensor<double>::from_data({{"r", 2}, {"c", 3}}, {1, 2, 3, 5, 5, 5});
    std::vector<std::uint8_t> keep{1, 0, 1, 0, 0, 0};
    auto y = masked_softmax(x, keep, "c");

    const double denom = std::exp(1.0) + std::exp(3.0);
    CHECK(y.at({0, 0}) == doctest::Approx(std::exp(1.0) / denom));
    CHECK(y.at({0, 1}) == 0.0);
    CHECK(y.at({0, 2}) == doctest::Approx(std::exp(3.0) / denom));
    // fully masked row comes out zero rather than uniform
    for (std::size_t c = 0; c < 3; ++c) CHECK(y.at({1, c}) == 0.0);

    CHECK_THROWS_AS(masked_softmax(x, std::vector<std::uint8_t>{1, 0}, "c"), ShapeError);
}

TEST_CASE("layer norm matches a two-pass oracle") {
    Rng rng(23);
    auto x = random_tensor({{"r", 3}, {"c", 5}}, rng);
    auto g = Tensor<double>::from_data({{"c", 5}}, {1.0, 2.0, 0.5, -1.0, 3.0});
    auto b = Tensor<double>::from_data({{"c", 5}}, {0.1, -0.2, 0.3, 0.0, 1.0});
    const double eps = 1e-5;
    auto y = layer_norm(x, "c", g, b, eps);
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < 5; ++c) mean += x.at({r, c});
        mean /= 5.0;
        double var = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
            var += (x.at({r, c}) - mean) * (x.at({r, c}) - mean);
        }
        var /= 5.0;
        for (std::size_t c = 0; c < 5; ++c) {
            const double want =
                g.at({c}) * (x.at({r, c}) - mean) / std::sqrt(var + eps) + b.at({c});
            CHECK(y.at({r, c}) == doctest::Approx(want).epsilon(1e-10));
        }
    }

    auto wrong = Tensor<double>::zeros({{"c", 4}});
    CHECK_THROWS_AS(layer_norm(x, "c", wrong, b, eps), ShapeError);
    auto misnamed = Tensor<double>::zeros({{"d", 5}});
    CHECK_THROWS_AS(layer_norm(x, "c", misnamed, b, eps), ShapeError);
}

TEST_CASE("cross entropy of uniform logits is log of the class count") {
    auto logits = Tensor<double>::zeros({{"pos", 3}, {"cls", 8}});
    auto loss = cross_entropy(logits, {0, 5, 7}, "cls", -1);
    CHECK(loss.value() == doctest::Approx(std::log(8.0)));
}

TEST_CASE("cross entropy skips ignored positions and validates targets") {
    auto logits = Tensor<double>::from_data({{"pos", 3}, {"cls", 2}},
                                            {2, 0, 0, 2, 9, 9});
    // ignore_id 0 removes positions 0 and 2, leaving only position 1
    auto loss = cross_entropy(logits, {0, 1, 0}, "cls", 0);
    const double want = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
    CHECK(loss.value() == doctest::Approx(want));

    CHECK_THROWS_AS(cross_entropy(logits, {0, 0, 0}, "cls", 0), Error);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 3, 1}, "cls", -1), IndexError);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 1}, "cls", -1), ShapeError);
    auto r3 = Tensor<double>::zeros({{"a", 2}, {"b", 2}, {"cls", 2}});
    CHECK_THROWS_AS(cross_entropy(r3, {0, 0, 0, 0}, "cls", -1), ShapeError);
}

TEST_CASE("cross entropy gradient equals softmax minus one-hot over count") {
    Rng rng(29);
    auto logits = random_tensor({{"pos", 4}, {"cls", 5}}, rng);
    logits.set_requires_grad(true);
    const std::vector<int> targets{2, 0, 4, 0};
    const int ignore = 0;
    auto loss = cross_entropy(logits, targets, "cls", ignore);
    backward(loss);

    // positions 1 and 3 carry the ignored id, so two positions count
    for (std::size_t p = 0; p < 4; ++p) {
        double denom = 0.0;
        for (std::size_t c = 0; c < 5; ++c) denom += std::exp(logits.at({p, c}));
        for (std::size_t c = 0; c < 5; ++c) {
            double want = 0.0;
            if (targets[p] != ignore) {
                want = std::exp(logits.at({p, c})) / denom;
                if (static_cast<int>(c) == targets[p]) want -= 1.0;
                want /= 2.0;
            }
            CHECK(logits.grad()[p * 5 + c] == doctest::Approx(want).epsilon(1e-10));
        }
    }
}

TEST_CASE("gather rows copies table rows and accumulates duplicate ids") {
    auto table = Tensor<double>::from_data({{"row", 3}, {"e", 2}}, {1, 2, 3, 4, 5, 6});
    table.set_requires_grad(true);
    auto out = gather_rows(table, {2, 0, 2}, {{"pos", 3}});
    REQUIRE(out.axes() == Axes{{"pos", 3}, {"e", 2}});
    CHECK(out.at({0, 0}) == 5.0);
    CHECK(out.at({1, 1}) == 2.0);
    CHECK(out.at({2, 1}) == 6.0);

    backward(sum_all(out));
    CHECK(table.grad()[0] == 1.0); // row 0 used once
    CHECK(table.grad()[2] == 0.0); // row 1 never used
    CHECK(table.grad()[4] == 2.0); // row 2 used twice

    CHECK_THROWS_AS(gather_rows(table, {3}, {{"pos", 1}}), IndexError);
    CHECK_THROWS_AS(gather_rows(table, {-1}, {{"pos", 1}}), IndexError);
    CHECK_THROWS_AS(gather_rows(table, {0, 1}, {{"pos", 3}}), ShapeError);
}

TEST_CASE("gather rows supports a two-axis id grid") {
    auto table = Tensor<double>::from_data({{"row", 4}, {"e", 1}}, {10, 20, 30, 40});
    auto out = gather_rows(table, {0, 1, 2, 3, 3, 2}, {{"fcn", 2}, {"token", 3}});
    REQUIRE(out.axes() == Axes{{"fcn", 2}, {"token", 3}, {"e", 1}});
    CHECK(out.at({0, 2, 0}) == 30.0);
    CHECK(out.at({1, 0, 0}) == 40.0);
}

TEST_CASE("expand front tiles data and its backward sums over the new axis") {
    auto x = Tensor<double>::from_data({{"e", 2}}, {3, 4});
    x.set_requires_grad(true);
    auto y = expand_front(x, {"pos", 3});
    REQUIRE(y.axes() == Axes{{"pos", 3}, {"e", 2}});
    for (std::size_t p = 0; p < 3; ++p) {
        CHECK(y.at({p, 0}) == 3.0);
        CHECK(y.at({p, 1}) == 4.0);
    }
    backward(sum_all(y));
    CHECK(x.grad()[0] == 3.0);
    CHECK(x.grad()[1] == 3.0);
    CHECK_THROWS_AS(expand_front(x, {"e", 2}), AxisError);
}

TEST_CASE("merge axes relabels row-major adjacent axes") {
    auto x = Tensor<double>::from_data({{"fcn", 2}, {"token", 3}}, {0, 1, 2, 3, 4, 5});
    auto y = merge_axes(x, "fcn", "token", "fcntoken");
    REQUIRE(y.axes() == Axes{{"fcntoken", 6}});
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(y.at({i}) == static_cast<double>(i));
    }
    auto z = Tensor<double>::zeros({{"a", 2}, {"b", 2}, {"c", 2}});
    CHECK_THROWS_AS(merge_axes(z, "c", "a", "ca"), AxisError);
    CHECK_THROWS_AS(merge_axes(z, "a", "c", "ac"), AxisError);
}

TEST_CASE("rename axis keeps data and rejects collisions") {
    auto x = Tensor<double>::from_data({{"a", 2}, {"b", 2}}, {1, 2, 3, 4});
    auto y = rename_axis(x, "b", "b_k");
    REQUIRE(y.axes() == Axes{{"a", 2}, {"b_k", 2}});
    CHECK(y.at({1, 0}) == 3.0);
    CHECK_THROWS_AS(rename_axis(x, "b", "a"), AxisError);
    CHECK_THROWS_AS(rename_axis(x, "missing", "c"), AxisError);
}

TEST_CASE("dropout is identity in eval mode and rescales kept entries") {
    auto x = Tensor<double>::full({{"n", 1000}}, 1.0);
    auto eval = dropout(x, 0.4, nullptr);
    CHECK(eval.node() == x.node());

    Rng rng(31);
    auto y = dropout(x, 0.4, &rng);
    std::size_t dropped = 0;
    for (double v : y.data()) {
        const bool zero = v == 0.0;
        const bool scaled = std::abs(v - 1.0 / 0.6) < 1e-12;
        CHECK((zero || scaled));
        if (zero) ++dropped;
    }
    CHECK(dropped > 300);
    CHECK(dropped < 500);

    Rng r1(5), r2(5);
    auto d1 = dropout(x, 0.4, &r1);
    auto d2 = dropout(x, 0.4, &r2);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(d1.data()[i] == d2.data()[i]);

    CHECK_THROWS_AS(dropout(x, 1.0, &rng), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, &rng), ConfigError);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
    auto x = Tensor<double>::from_data({{"n", 2}}, {1, 2});
    x.set_requires_grad(true);
    auto make_loss = [&] { return sum_all(mul(x, x)); };
    backward(make_loss());
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    backward(make_loss());
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
    backward(make_loss());
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a single-value loss and respects requires_grad") {
    auto x = Tensor<double>::from_data({{"n", 2}}, {1, 2});
    x.set_requires_grad(true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ShapeError);

    auto frozen = Tensor<double>::from_data({{"n", 2}}, {3, 4});
    auto y = sum_all(mul(x, frozen));
    backward(y);
    CHECK(x.grad()[0] == 3.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("value reused along two paths receives both contributions") {
    auto x = Tensor<double>::from_data({{"n", 2}}, {1.0, 3.0});
    x.set_requires_grad(true);
    // f = sum(x*x) + sum(x)  =>  df/dx = 2x + 1
    auto loss = add(sum_all(mul(x, x)), sum_all(x));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(x.grad()[1] == doctest::Approx(7.0));
}

TEST_CASE("finite differences confirm a composite graph") {
    Rng rng(37);
    auto x = random_tensor({{"pos", 3}, {"e", 4}}, rng);
    auto w = random_tensor({{"e", 4}, {"h", 6}}, rng);
    auto w2 = random_tensor({{"h", 6}, {"cls", 5}}, rng);
    auto g = Tensor<double>::full({{"h", 6}}, 1.0);
    auto b = Tensor<double>::zeros({{"h", 6}});
    g.mutable_data()[2] = 1.5;
    b.mutable_data()[1] = -0.3;

    auto f = [&] {
        auto h = relu(contract(x, w, "e"));
        auto n = layer_norm(h, "h", g, b, 1e-5);
        auto logits = contract(n, w2, "h");
        return cross_entropy(logits, {1, 4, 2}, "cls", -1);
    };
    auto report = grad_check(f, {{"x", x}, {"w", w}, {"w2", w2}, {"g", g}, {"b", b}},
                             1e-5);
    INFO(report.to_string());
    CHECK(report.passed(1e-4));
}

TEST_CASE("finite differences confirm softmax and masked softmax") {
    Rng rng(41);
    auto x = random_tensor({{"q", 2}, {"k", 4}}, rng);
    auto v = random_tensor({{"k", 4}, {"e", 3}}, rng);
    std::vector<std::uint8_t> keep{1, 1, 0, 1, 1, 0, 1, 1};

    auto f_soft = [&] {
        auto p = softmax(x, "k");
        return sum_all(mul(contract(p, v, "k"), contract(p, v, "k")));
    };
    CHECK(grad_check(f_soft, {{"x", x}, {"v", v}}, 1e-5).passed(1e-4));

    auto f_masked = [&] {
        auto p = masked_softmax(x, keep, "k");
        auto o = contract(p, v, "k");
        return sum_all(mul(o, o));
    };
    CHECK(grad_check(f_masked, {{"x", x}, {"v", v}}, 1e-5).passed(1e-4));
}

TEST_CASE("a custom op with a wrong backward fails the finite difference check") {
    auto x = Tensor<double>::from_data({{"n", 3}}, {0.5, -1.0, 2.0});
    x.set_requires_grad(true);
    auto f = [&] {
        // forward computes sum of squares but claims the gradient is 3x
        std::vector<double> out{0.0};
        for (double v : x.data()) out[0] += v * v;
        auto xn = x.node();
        return make_op<double>({}, std::move(out), {x}, [xn](detail::Node<double>& self) {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[0] * 3.0 * xn->data[i];
            }
        });
    };
    auto report = grad_check(f, {{"x", x}}, 1e-5);
    CHECK_FALSE(report.passed(1e-4));
    CHECK(report.max_rel_err > 0.1);
}

TEST_CASE("grad check validates its step size") {
    auto x = Tensor<double>::scalar(1.0);
    CHECK_THROWS_AS(grad_check([&] { return x; }, {{"x", x}}, 0.0), ConfigError);
}
