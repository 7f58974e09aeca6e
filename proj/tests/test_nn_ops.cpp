#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "qrsdet/errors.hpp"
#include "qrsdet/nn_ops.hpp"
#include "qrsdet/rng.hpp"

using namespace qrsdet;
using namespace qrsdet::nn;

namespace {
Tensor make_bcl(std::size_t b, std::size_t c, std::size_t l, uint64_t seed) {
    Tensor t({b, c, l});
    Rng rng(seed);
    for (auto& v : t.data)
        v = rng.normal();
    return t;
}
} // namespace

TEST_CASE("conv1d with the unit center tap is the identity") {
    Conv1d conv(1, 1, 3, Rng(1));
    conv.weight.data = {0.0, 1.0, 0.0};
    conv.bias.data = {0.0};
    auto x = make_bcl(2, 1, 17, 2);
    auto y = conv.forward(x);
    CHECK(y.data == x.data);
}

TEST_CASE("conv1d hand example with zero padding") {
    Conv1d conv(1, 1, 3, Rng(1));
    conv.weight.data = {1.0, 0.0, -1.0};
    conv.bias.data = {0.0};
    Tensor x({1, 1, 3});
    x.data = {1.0, 2.0, 3.0};
    auto y = conv.forward(x);
    CHECK(y.data[0] == doctest::Approx(-2.0));
    CHECK(y.data[1] == doctest::Approx(-2.0));
    CHECK(y.data[2] == doctest::Approx(2.0));
}

TEST_CASE("conv1d on zero input broadcasts the bias") {
    Conv1d conv(3, 2, 3, Rng(7));
    conv.bias.data = {0.25, -1.5};
    Tensor x({1, 3, 9});
    auto y = conv.forward(x);
    for (std::size_t l = 0; l < 9; ++l) {
        CHECK(y.data[l] == 0.25);
        CHECK(y.data[9 + l] == -1.5);
    }
}

TEST_CASE("conv1d matches the quadruple-loop oracle on random shapes") {
    Rng shapes(42);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t c_in = 1 + shapes.below(4);
        const std::size_t c_out = 1 + shapes.below(4);
        const std::size_t len = 4 + shapes.below(29);
        const std::size_t k = 1 + 2 * shapes.below(4); // 1,3,5,7
        Conv1d conv(c_in, c_out, k, Rng(100 + static_cast<uint64_t>(trial)));
        auto x = make_bcl(1, c_in, len, 200 + static_cast<uint64_t>(trial));
        auto y = conv.forward(x);
        auto ref = oracle::conv1d_direct(x.data, c_in, len, conv.weight.data, c_out, k,
                                         conv.bias.data);
        REQUIRE(y.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(y.data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv1d rejects mismatched channel counts") {
    Conv1d conv(2, 1, 3, Rng(1));
    Tensor x({1, 3, 5});
    CHECK_THROWS_AS(conv.forward(x), ConfigError);
    CHECK_THROWS_AS(Conv1d(1, 1, 4, Rng(1)), ConfigError);
}

TEST_CASE("relu and sigmoid point values") {
    CHECK(sigmoid(0.0) == 0.5);
    std::vector<double> in = {-3.0, 2.0, 0.0};
    std::vector<double> out(3);
    relu_forward(in, out);
    CHECK(out == std::vector<double>{0.0, 2.0, 0.0});
}

TEST_CASE("sigmoid symmetry and stability") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-30.0, 30.0);
        CHECK(std::abs(sigmoid(-x) - (1.0 - sigmoid(x))) < 1e-12);
    }
    CHECK(sigmoid(-745.0) >= 0.0); // no underflow blowup
    CHECK(sigmoid(745.0) <= 1.0);
}

TEST_CASE("batch norm normalizes per channel in training mode") {
    BatchNorm1d bn(3);
    auto x = make_bcl(4, 3, 50, 9);
    auto y = bn.forward(x, true);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t l = 0; l < 50; ++l)
                mean += y.data[(b * 3 + c) * 50 + l];
        mean /= 200.0;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t l = 0; l < 50; ++l) {
                const double v = y.data[(b * 3 + c) * 50 + l] - mean;
                var += v * v;
            }
        var /= 200.0;
        CHECK(std::abs(mean) <= 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("batch norm with zero gamma outputs beta") {
    BatchNorm1d bn(2);
    bn.gamma.data = {0.0, 0.0};
    bn.beta.data = {0.7, -0.2};
    auto x = make_bcl(2, 2, 10, 11);
    auto y = bn.forward(x, true);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t l = 0; l < 10; ++l) {
            CHECK(y.data[(b * 2 + 0) * 10 + l] == 0.7);
            CHECK(y.data[(b * 2 + 1) * 10 + l] == -0.2);
        }
}

TEST_CASE("batch norm of a constant channel outputs beta") {
    BatchNorm1d bn(1);
    bn.beta.data = {0.3};
    Tensor x({2, 1, 8});
    std::fill(x.data.begin(), x.data.end(), 5.0);
    auto y = bn.forward(x, true);
    for (double v : y.data)
        CHECK(v == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("batch norm inference before any training update fails") {
    BatchNorm1d bn(1);
    Tensor x({1, 1, 4});
    CHECK_THROWS_WITH_AS(bn.forward(x, false), "running stats uninitialized", TrainingError);
    bn.init_running_stats();
    CHECK_NOTHROW(bn.forward(x, false));
}

TEST_CASE("dropout identities") {
    auto x = make_bcl(1, 2, 100, 13);
    Dropout d0(0.0, Rng(1));
    CHECK(d0.forward(x, true).data == x.data);
    Dropout d5(0.5, Rng(2));
    CHECK(d5.forward(x, false).data == x.data); // inference is the identity
    CHECK_THROWS_AS(Dropout(1.0, Rng(3)), ConfigError);
}

TEST_CASE("dropout keeps about (1-rate) survivors and preserves the mean") {
    const std::size_t n = 1'000'000;
    Tensor x({1, 1, n});
    std::fill(x.data.begin(), x.data.end(), 1.0);
    Dropout drop(0.5, Rng(77));
    auto y = drop.forward(x, true);
    std::size_t survivors = 0;
    double sum = 0;
    for (double v : y.data) {
        survivors += v != 0.0;
        sum += v;
    }
    const double survivor_fraction = static_cast<double>(survivors) / static_cast<double>(n);
    CHECK(survivor_fraction == doctest::Approx(0.5).epsilon(0.02));
    CHECK(sum / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("dropout backward routes gradients through the same mask") {
    auto x = make_bcl(1, 1, 500, 15);
    Dropout drop(0.3, Rng(5));
    auto y = drop.forward(x, true);
    Tensor dy({1, 1, 500});
    std::fill(dy.data.begin(), dy.data.end(), 1.0);
    auto dx = drop.backward(dy);
    for (std::size_t i = 0; i < 500; ++i) {
        if (y.data[i] == 0.0)
            CHECK(dx.data[i] == 0.0);
        else
            CHECK(dx.data[i] == doctest::Approx(1.0 / 0.7).epsilon(1e-12));
    }
}

TEST_CASE("maxpool window arithmetic from the documented example") {
    MaxPool1d pool;
    Tensor x({1, 1, 5});
    x.data = {1, 3, 2, 5, 4};
    auto y = pool.forward(x);
    // windows (1,3,2), (2,5,4), (4,-inf,-inf)
    REQUIRE(y.size() == 3);
    CHECK(y.data == std::vector<double>{3, 5, 4});
    auto ref = oracle::maxpool_direct(x.data, 3, 2);
    CHECK(y.data == ref);
}

TEST_CASE("maxpool on constant and monotone inputs") {
    MaxPool1d pool;
    Tensor c({1, 1, 9});
    std::fill(c.data.begin(), c.data.end(), 2.5);
    auto yc = pool.forward(c);
    for (double v : yc.data)
        CHECK(v == 2.5);

    Tensor m({1, 1, 8});
    std::iota(m.data.begin(), m.data.end(), 0.0);
    auto ym = pool.forward(m);
    CHECK(ym.data == oracle::maxpool_direct(m.data, 3, 2));
    // each output is the rightmost element of its (unpadded) window
    CHECK(ym.data == std::vector<double>{2, 4, 6, 7});
}

TEST_CASE("maxpool backward routes each gradient to exactly one argmax") {
    auto x = make_bcl(2, 3, 33, 17);
    MaxPool1d pool;
    auto y = pool.forward(x);
    Tensor dy(y.shape);
    Rng rng(18);
    for (auto& v : dy.data)
        v = rng.normal();
    auto dx = pool.backward(dy);
    const double up = std::accumulate(dy.data.begin(), dy.data.end(), 0.0);
    const double routed = std::accumulate(dx.data.begin(), dx.data.end(), 0.0);
    CHECK(routed == doctest::Approx(up).epsilon(1e-12));
}

TEST_CASE("upsample2 repeats and its backward sums pairs") {
    Upsample2 up;
    Tensor x({1, 1, 2});
    x.data = {1.0, 2.0};
    auto y = up.forward(x);
    CHECK(y.data == std::vector<double>{1, 1, 2, 2});
    Tensor dy({1, 1, 4});
    dy.data = {1, 10, 100, 1000};
    auto dx = up.backward(dy);
    CHECK(dx.data == std::vector<double>{11, 1100});

    auto r = make_bcl(2, 3, 21, 19);
    CHECK(up.forward(r).dim(2) == 42);
}

TEST_CASE("upsample + 1x1 conv halves channels and doubles length") {
    Upsample2 up;
    Conv1d halve(4, 2, 1, Rng(23));
    auto x = make_bcl(1, 4, 9, 25);
    auto y = halve.forward(up.forward(x));
    CHECK(y.dim(1) == 2);
    CHECK(y.dim(2) == 18);

    std::fill(halve.weight.data.begin(), halve.weight.data.end(), 0.0);
    std::fill(halve.bias.data.begin(), halve.bias.data.end(), 0.0);
    auto zero = halve.forward(up.forward(x));
    for (double v : zero.data)
        CHECK(v == 0.0);
}

TEST_CASE("lstm cell closed forms") {
    const std::size_t d = 2, h = 3;
    std::vector<double> w(4 * h * d, 0.0), u(4 * h * h, 0.0), b(4 * h, 0.0);
    std::vector<double> x(d, 0.7), h_prev(h, 0.0), c_prev(h, 0.0);
    std::vector<double> h_out(h), c_out(h);
    // all-zero weights and states: gates 0.5, tanh(0)=0 => h = c = 0
    lstm_cell_step(x, h_prev, c_prev, w, u, b, h, h_out, c_out);
    for (std::size_t i = 0; i < h; ++i) {
        CHECK(h_out[i] == 0.0);
        CHECK(c_out[i] == 0.0);
    }
    // saturated forget gate with zero input weights: c_t -> c_prev
    for (std::size_t i = 0; i < h; ++i)
        b[h + i] = 50.0; // forget-gate bias -> sigmoid ~ 1
    c_prev = {0.3, -0.8, 1.5};
    lstm_cell_step(x, h_prev, c_prev, w, u, b, h, h_out, c_out);
    for (std::size_t i = 0; i < h; ++i)
        CHECK(c_out[i] == doctest::Approx(c_prev[i]).epsilon(1e-12));
}

TEST_CASE("lstm cell matches the scalar-loop oracle") {
    const std::size_t d = 2, h = 3;
    Rng rng(31);
    std::vector<double> w(4 * h * d), u(4 * h * h), b(4 * h), x(d), hp(h), cp(h);
    for (int trial = 0; trial < 20; ++trial) {
        for (auto* vec : {&w, &u, &b, &x, &hp, &cp})
            for (auto& v : *vec)
                v = rng.normal();
        std::vector<double> h1(h), c1(h), h2(h), c2(h);
        lstm_cell_step(x, hp, cp, w, u, b, h, h1, c1);
        oracle::lstm_cell_direct(x, hp, cp, w, u, b, h, h2, c2);
        for (std::size_t i = 0; i < h; ++i) {
            CHECK(h1[i] == doctest::Approx(h2[i]).epsilon(1e-12));
            CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("lstm layer agrees with stepwise cell application") {
    const std::size_t d = 3, h = 4, len = 6;
    Lstm lstm(d, h, false, Rng(41));
    auto x = make_bcl(1, d, len, 43);
    auto y = lstm.forward(x);

    std::vector<double> hp(h, 0.0), cp(h, 0.0), ho(h), co(h), xt(d);
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < d; ++j)
            xt[j] = x.data[j * len + t];
        oracle::lstm_cell_direct(xt, hp, cp, lstm.w.data, lstm.u.data, lstm.b.data, h, ho, co);
        for (std::size_t j = 0; j < h; ++j) {
            CHECK(y.data[j * len + t] == doctest::Approx(ho[j]).epsilon(1e-10));
        }
        hp = ho;
        cp = co;
    }
}

TEST_CASE("bilstm reduces to the forward cell when backward weights vanish") {
    const std::size_t d = 2, h = 3, len = 5;
    BiLstm bi(d, h, Rng(51));
    std::fill(bi.bwd.w.data.begin(), bi.bwd.w.data.end(), 0.0);
    std::fill(bi.bwd.u.data.begin(), bi.bwd.u.data.end(), 0.0);
    std::fill(bi.bwd.b.data.begin(), bi.bwd.b.data.end(), 0.0);
    auto x = make_bcl(1, d, len, 53);
    auto sum = bi.forward(x);
    auto fwd_only = bi.fwd.forward(x);
    for (std::size_t i = 0; i < sum.size(); ++i)
        CHECK(sum.data[i] == doctest::Approx(fwd_only.data[i]).epsilon(1e-12));
}

TEST_CASE("bilstm output on zero weights is zero") {
    BiLstm bi(2, 3, Rng(61));
    for (auto* t : {&bi.fwd.w, &bi.fwd.u, &bi.fwd.b, &bi.bwd.w, &bi.bwd.u, &bi.bwd.b})
        std::fill(t->data.begin(), t->data.end(), 0.0);
    auto x = make_bcl(2, 2, 7, 63);
    auto y = bi.forward(x);
    for (double v : y.data)
        CHECK(v == 0.0);
}

TEST_CASE("bilstm with shared direction weights maps palindromes to palindromes") {
    const std::size_t d = 2, h = 3, len = 7;
    BiLstm bi(d, h, Rng(71));
    bi.bwd.w.data = bi.fwd.w.data;
    bi.bwd.u.data = bi.fwd.u.data;
    bi.bwd.b.data = bi.fwd.b.data;
    Tensor x({1, d, len});
    Rng rng(73);
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t t = 0; t <= len / 2; ++t) {
            const double v = rng.normal();
            x.data[c * len + t] = v;
            x.data[c * len + (len - 1 - t)] = v;
        }
    auto y = bi.forward(x);
    for (std::size_t c = 0; c < h; ++c)
        for (std::size_t t = 0; t < len; ++t)
            CHECK(y.data[c * len + t] ==
                  doctest::Approx(y.data[c * len + (len - 1 - t)]).epsilon(1e-9));
}

TEST_CASE("bce loss closed forms") {
    Tensor logits({1, 1, 4}), targets({1, 1, 4});
    // p == t in {0,1}: clamp keeps the loss below 1e-6
    logits.data = {40.0, -40.0, 40.0, -40.0};
    targets.data = {1.0, 0.0, 1.0, 0.0};
    CHECK(bce_with_logits(logits, targets).value <= 1e-6);

    // p = t = 0.5 everywhere: loss = ln 2
    std::fill(logits.data.begin(), logits.data.end(), 0.0);
    std::fill(targets.data.begin(), targets.data.end(), 0.5);
    CHECK(bce_with_logits(logits, targets).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("mse loss gradient shrinks to zero at the optimum") {
    Tensor logits({1, 1, 3}), targets({1, 1, 3});
    logits.data = {0.0, 0.0, 0.0};
    targets.data = {0.5, 0.5, 0.5};
    auto res = mse_with_logits(logits, targets);
    CHECK(res.value == doctest::Approx(0.0));
    for (double g : res.dlogits.data)
        CHECK(g == 0.0);
}
