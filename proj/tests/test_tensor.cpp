#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mat/grad_check.hpp"
#include "mat/rng.hpp"
#include "mat/tensor.hpp"

using namespace mat;

TEST_CASE("rng streams are deterministic and independent") {
    Rng a(42, RngStream::Dropout);
    Rng b(42, RngStream::Dropout);
    Rng c(42, RngStream::Masking);
    bool diverged = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        REQUIRE(x == b.next_u64());
        if (x != c.next_u64()) diverged = true;
    }
    CHECK(diverged);

    Rng u(7, RngStream::Init);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("masked softmax rows") {
    Tape tape;
    SECTION("symmetric row") {
        auto x = tape.constant(Tensor::matrix(1, 2, {0.0, 0.0}));
        auto y = tape.masked_softmax_rows(x, {1, 1});
        CHECK(tape.val(y).data[0] == Catch::Approx(0.5));
        CHECK(tape.val(y).data[1] == Catch::Approx(0.5));
    }
    SECTION("overflow-safe shift") {
        auto x = tape.constant(Tensor::matrix(1, 2, {1000.0, 0.0}));
        auto y = tape.masked_softmax_rows(x, {1, 1});
        CHECK(tape.val(y).data[0] == Catch::Approx(1.0).margin(1e-12));
        CHECK(tape.val(y).data[1] == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("masked middle column") {
        auto x = tape.constant(Tensor::matrix(1, 3, {1.0, 2.0, 3.0}));
        auto y = tape.masked_softmax_rows(x, {1, 0, 1});
        const double sigma = 1.0 / (1.0 + std::exp(2.0));
        CHECK(tape.val(y).data[0] == Catch::Approx(sigma).epsilon(1e-12));
        CHECK(tape.val(y).data[1] == 0.0);
        CHECK(tape.val(y).data[2] == Catch::Approx(1.0 - sigma).epsilon(1e-12));
    }
    SECTION("fully masked row is the zero sentinel") {
        auto x = tape.constant(Tensor::matrix(1, 2, {3.0, 4.0}));
        auto y = tape.masked_softmax_rows(x, {0, 0});
        CHECK(tape.val(y).data[0] == 0.0);
        CHECK(tape.val(y).data[1] == 0.0);
    }
    SECTION("invariant to constant shift of unmasked entries") {
        Rng rng(3, RngStream::Check);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> row(5);
            for (double& v : row) v = rng.uniform(-3.0, 3.0);
            std::vector<double> shifted = row;
            const double c = rng.uniform(-10.0, 10.0);
            std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1};
            for (std::size_t j = 0; j < row.size(); ++j)
                if (mask[j]) shifted[j] += c;
            Tape t2;
            auto y1 = t2.masked_softmax_rows(t2.constant(Tensor::matrix(1, 5, row)), mask);
            auto y2 = t2.masked_softmax_rows(t2.constant(Tensor::matrix(1, 5, shifted)), mask);
            for (std::size_t j = 0; j < row.size(); ++j)
                REQUIRE(t2.val(y1).data[j] ==
                        Catch::Approx(t2.val(y2).data[j]).margin(1e-12));
        }
    }
}

TEST_CASE("layer norm") {
    Tape tape;
    Tensor gamma1 = Tensor::vector_of({1.0, 1.0, 1.0});
    Tensor beta0 = Tensor::vector_of({0.0, 0.0, 0.0});
    SECTION("constant row collapses to zero") {
        auto x = tape.constant(Tensor::matrix(1, 3, {5.0, 5.0, 5.0}));
        auto y = tape.layer_norm(x, tape.constant(gamma1), tape.constant(beta0), 1e-5);
        for (double v : tape.val(y).data) CHECK(v == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("already standardized row passes through") {
        Tensor g2 = Tensor::vector_of({1.0, 1.0});
        Tensor b2 = Tensor::vector_of({0.0, 0.0});
        auto x = tape.constant(Tensor::matrix(1, 2, {1.0, -1.0}));
        auto y = tape.layer_norm(x, tape.constant(g2), tape.constant(b2), 1e-12);
        CHECK(tape.val(y).data[0] == Catch::Approx(1.0).epsilon(1e-6));
        CHECK(tape.val(y).data[1] == Catch::Approx(-1.0).epsilon(1e-6));
    }
    SECTION("zero gamma broadcasts beta") {
        Tensor g = Tensor::vector_of({0.0, 0.0, 0.0});
        Tensor b = Tensor::vector_of({2.0, -1.0, 0.5});
        auto x = tape.constant(Tensor::matrix(2, 3, {1.0, 7.0, -2.0, 0.0, 3.0, 9.0}));
        auto y = tape.layer_norm(x, tape.constant(g), tape.constant(b), 1e-5);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(tape.val(y).at(i, 0) == 2.0);
            CHECK(tape.val(y).at(i, 1) == -1.0);
            CHECK(tape.val(y).at(i, 2) == 0.5);
        }
    }
}

TEST_CASE("dropout contract") {
    SECTION("eval mode is the identity") {
        Tape tape;
        Rng rng(1, RngStream::Dropout);
        auto x = tape.constant(Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0}));
        auto y = tape.dropout(x, 0.5, &rng, /*train=*/false);
        CHECK(y.idx == x.idx);  // literally the same node
    }
    SECTION("train mode keeps expectation") {
        // E[output] = input within 3 sigma over many draws
        const double rate = 0.3;
        const double keep = 1.0 - rate;
        const int draws = 200000;
        Rng rng(99, RngStream::Dropout);
        double sum = 0.0;
        for (int i = 0; i < draws; ++i) {
            Tape tape;
            auto x = tape.constant(Tensor::scalar(1.0));
            auto y = tape.dropout(x, rate, &rng, true);
            sum += tape.val(y).data[0];
        }
        const double mean = sum / draws;
        // each draw is Bernoulli(keep)/keep: variance (1-keep)/keep
        const double sigma = std::sqrt((1.0 - keep) / keep / draws);
        CHECK(std::abs(mean - 1.0) < 3.0 * sigma);
    }
    SECTION("kept entries are scaled by 1/keep") {
        Rng rng(5, RngStream::Dropout);
        Tape tape;
        auto x = tape.constant(Tensor::matrix(1, 64, std::vector<double>(64, 2.0)));
        auto y = tape.dropout(x, 0.25, &rng, true);
        for (double v : tape.val(y).data)
            CHECK((v == 0.0 || v == Catch::Approx(2.0 / 0.75)));
    }
}

TEST_CASE("mean pool over masked rows is the exact mean") {
    Tape tape;
    auto x = tape.constant(Tensor::matrix(3, 2, {1.0, 2.0, 100.0, 200.0, 3.0, 4.0}));
    auto y = tape.mean_pool_rows(x, {1, 0, 1});
    CHECK(tape.val(y).data[0] == 2.0);
    CHECK(tape.val(y).data[1] == 3.0);
}

namespace {

// wraps a single-op computation as a grad_check runner
GradCheckReport check_op(Tensor& x, const std::function<ValueId(Tape&, ValueId)>& op,
                         std::size_t samples = 64, double tol = 1e-4) {
    auto run = [&](bool with_grad) {
        Tape tape;
        ValueId in = tape.param(x);
        ValueId out = op(tape, in);
        // reduce to a scalar through a fixed weighted sum so every output
        // coordinate matters
        const Tensor& o = tape.val(out);
        Tensor w(o.shape);
        for (std::size_t i = 0; i < w.data.size(); ++i)
            w.data[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
        ValueId prod = tape.mul_const(out, w);
        ValueId flat = tape.reshape(prod, {1, o.numel()});
        ValueId pooled = tape.mean_pool_rows(flat, {1});
        ValueId loss = tape.mse_loss(pooled, Tensor::matrix(1, 1, {0.25}));
        const double v = tape.val(loss).data[0];
        if (with_grad) tape.backward(loss);
        return v;
    };
    std::vector<NamedParam> params{{"x", &x}};
    Rng rng(2024, RngStream::Check);
    return grad_check(run, params, samples, 1e-5, tol, rng);
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.5,
                     double hi = 1.5) {
    Tensor t(r, c);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("gradient check passes for every op") {
    Rng rng(17, RngStream::Check);

    SECTION("quadratic is exact") {
        Tensor x = random_tensor(3, 3, rng);
        auto run = [&](bool with_grad) {
            Tape tape;
            ValueId in = tape.param(x);
            ValueId flat = tape.reshape(in, {1, 9});
            // sum of squares via mse against zero, scaled back up
            ValueId loss = tape.scale(tape.mse_loss(flat, Tensor(1, 9)), 9.0);
            const double v = tape.val(loss).data[0];
            if (with_grad) tape.backward(loss);
            return v;
        };
        std::vector<NamedParam> params{{"x", &x}};
        Rng crng(1, RngStream::Check);
        auto rep = grad_check(run, params, 9, 1e-5, 1e-4, crng);
        CHECK(rep.pass);
        CHECK(rep.max_rel_err < 1e-8);
    }

    SECTION("matmul") {
        Tensor x = random_tensor(4, 3, rng);
        Tensor w = random_tensor(3, 5, rng);
        auto rep = check_op(x, [&](Tape& t, ValueId in) {
            return t.matmul(in, t.constant(w));
        });
        INFO(rep.summary());
        CHECK(rep.pass);
    }
    SECTION("add and add_bias") {
        Tensor x = random_tensor(3, 4, rng);
        Tensor other = random_tensor(3, 4, rng);
        Tensor bias = random_tensor(1, 4, rng);
        bias.shape = {4};
        auto rep = check_op(x, [&](Tape& t, ValueId in) {
            return t.add_bias(t.add(in, t.constant(other)), t.constant(bias));
        });
        INFO(rep.summary());
        CHECK(rep.pass);
    }
    SECTION("scale, relu, tanh, sigmoid") {
        Tensor x = random_tensor(4, 4, rng);
        // keep relu inputs away from the kink
        for (double& v : x.data)
            if (std::abs(v) < 0.05) v = 0.2;
        auto rep = check_op(x, [&](Tape& t, ValueId in) {
            return t.sigmoid(t.tanh_act(t.relu(t.scale(in, 1.7))));
        });
        INFO(rep.summary());
        CHECK(rep.pass);
    }
    SECTION("masked softmax") {
        Tensor x = random_tensor(4, 5, rng);
        std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1};
        auto rep = check_op(x, [&](Tape& t, ValueId in) {
            return t.masked_softmax_rows(in, mask);
        });
        INFO(rep.summary());
        CHECK(rep.pass);
    }
    SECTION("layer norm including gamma and beta") {
        Tensor x = random_tensor(3, 6, rng);
        Tensor gamma = random_tensor(1, 6, rng, 0.5, 1.5);
        gamma.shape = {6};
        Tensor beta = random_tensor(1, 6, rng, -0.5, 0.5);
        beta.shape = {6};
        auto run = [&](bool with_grad) {
            Tape tape;
            ValueId out = tape.layer_norm(tape.param(x), tape.param(gamma), tape.param(beta),
                                          1e-5);
            ValueId flat = tape.reshape(out, {1, 18});
            ValueId pooled = tape.mean_pool_rows(flat, {1});
            ValueId loss = tape.mse_loss(pooled, Tensor::matrix(1, 1, {0.1}));
            const double v = tape.val(loss).data[0];
            if (with_grad) tape.backward(loss);
            return v;
        };
        std::vector<NamedParam> params{{"x", &x}, {"gamma", &gamma}, {"beta", &beta}};
        Rng crng(8, RngStream::Check);
        auto rep = grad_check(run, params, 30, 1e-5, 1e-4, crng);
        INFO(rep.summary());
        CHECK(rep.pass);
    }
    SECTION("concat, select_rows, transpose-free ops") {
        Tensor x = random_tensor(4, 3, rng);
        auto rep = check_op(x, [&](Tape& t, ValueId in) {
            std::vector<ValueId> parts{in, t.scale(in, 0.5)};
            ValueId cat = t.concat_cols(parts);
            return t.select_rows(cat, {2, 0, 3});
        });
        INFO(rep.summary());
        CHECK(rep.pass);
    }
    SECTION("bce with logits") {
        Tensor x = random_tensor(1, 6, rng, -2.0, 2.0);
        Tensor target = Tensor::matrix(1, 6, {1, 0, 1, 1, 0, 0});
        auto run = [&](bool with_grad) {
            Tape tape;
            ValueId loss = tape.bce_with_logits(tape.param(x), target);
            const double v = tape.val(loss).data[0];
            if (with_grad) tape.backward(loss);
            return v;
        };
        std::vector<NamedParam> params{{"x", &x}};
        Rng crng(9, RngStream::Check);
        auto rep = grad_check(run, params, 6, 1e-5, 1e-4, crng);
        INFO(rep.summary());
        CHECK(rep.pass);
    }
}

TEST_CASE("grad check detects a broken backward rule") {
    Rng rng(23, RngStream::Check);
    Tensor x(1, 4);
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    // softmax with a deliberately wrong backward: drops the -y*dot term
    auto run = [&](bool with_grad) {
        Tape tape;
        ValueId in = tape.param(x);
        const Tensor& X = tape.val(in);
        Tensor y = X;
        double mx = *std::max_element(y.data.begin(), y.data.end());
        double z = 0.0;
        for (double& v : y.data) {
            v = std::exp(v - mx);
            z += v;
        }
        for (double& v : y.data) v /= z;
        ValueId soft = tape.raw_op(std::move(y), [in](Tape& t, Tape::Node& node) {
            auto& da = t.adj(in);
            for (std::size_t i = 0; i < node.adj.size(); ++i)
                da[i] += node.value.data[i] * node.adj[i];  // missing correction term
        });
        ValueId loss = tape.mse_loss(soft, Tensor::matrix(1, 4, {0.7, 0.1, 0.1, 0.1}));
        const double v = tape.val(loss).data[0];
        if (with_grad) tape.backward(loss);
        return v;
    };
    std::vector<NamedParam> params{{"x", &x}};
    Rng crng(4, RngStream::Check);
    auto rep = grad_check(run, params, 4, 1e-5, 1e-4, crng);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("backward accumulates into shared parameters") {
    // the same parameter used twice must receive both contributions
    Tensor w = Tensor::matrix(1, 1, {3.0});
    Tape tape;
    ValueId a = tape.param(w);
    ValueId prod = tape.matmul(a, a);  // w^2
    ValueId loss = tape.mse_loss(prod, Tensor::matrix(1, 1, {0.0}));  // w^4
    w.ensure_grad();
    w.zero_grad();
    tape.backward(loss);
    // d(w^4)/dw = 4 w^3 = 108
    CHECK(w.grad[0] == Catch::Approx(108.0));
}
