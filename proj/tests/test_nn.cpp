#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "softarm/nn.hpp"

using namespace softarm;
using namespace softarm::nn;

namespace {

std::vector<std::vector<double>> random_sequence(rng::Engine& e, int len, int dim) {
    std::vector<std::vector<double>> seq(static_cast<std::size_t>(len));
    for (auto& row : seq) {
        row.resize(static_cast<std::size_t>(dim));
        for (auto& v : row) v = rng::uniform(e, -1.5, 1.5);
    }
    return seq;
}

std::vector<const double*> row_ptrs(const std::vector<std::vector<double>>& seq) {
    std::vector<const double*> out;
    for (const auto& r : seq) out.push_back(r.data());
    return out;
}

}  // namespace

TEST_CASE("lstm step: zero parameters give zero outputs, bounded otherwise") {
    LstmLayer layer = LstmLayer::make("l", 4, 6);
    std::vector<double> h(6, 0.0), c(6, 0.0);
    LstmStepCache cache;
    const double x[4] = {0.3, -1.0, 2.0, 0.5};
    lstm_step(layer, x, h, c, cache);
    for (double v : h) CHECK(v == 0.0);
    for (double v : c) CHECK(v == 0.0);

    rng::Engine e(1);
    xavier_init(layer.Wx, e);
    xavier_init(layer.Wh, e);
    for (int i = 0; i < 20; ++i) {
        const double xi[4] = {rng::uniform(e, -3, 3), rng::uniform(e, -3, 3),
                              rng::uniform(e, -3, 3), rng::uniform(e, -3, 3)};
        lstm_step(layer, xi, h, c, cache);
        for (double v : h) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
    }

    std::vector<double> bad(5, 0.0);
    CHECK_THROWS_AS(lstm_step(layer, x, bad, c, cache), std::invalid_argument);
}

TEST_CASE("saturated forget gate preserves the cell state") {
    LstmLayer layer = LstmLayer::make("l", 3, 5);
    for (int k = 0; k < 5; ++k) layer.b.w.a[static_cast<std::size_t>(5 + k)] = 10.0;  // forget block
    std::vector<double> h(5, 0.0);
    std::vector<double> c = {0.4, -0.7, 1.2, 0.0, -2.0};
    const std::vector<double> c_before = c;
    LstmStepCache cache;
    const double x[3] = {0.1, 0.2, 0.3};
    lstm_step(layer, x, h, c, cache);
    for (int k = 0; k < 5; ++k) {
        CHECK(c[static_cast<std::size_t>(k)] ==
              doctest::Approx(c_before[static_cast<std::size_t>(k)]).epsilon(1e-4));
    }
}

TEST_CASE("chunked evaluation matches whole-sequence evaluation") {
    rng::Engine e(7);
    LstmStack stack = LstmStack::make("s", 5, 8);
    for (Param* p : stack.params()) xavier_init(*p, e);

    const auto seq = random_sequence(e, 9, 5);
    const auto ptrs = row_ptrs(seq);

    StackState whole = StackState::zeros(8);
    StackCache cache;
    stack_forward(stack, ptrs, whole, cache);

    StackState chunked = StackState::zeros(8);
    for (std::size_t split = 0; split < 2; ++split) {
        const std::size_t begin = split == 0 ? 0 : 4;
        const std::size_t end = split == 0 ? 4 : 9;
        std::vector<const double*> part(ptrs.begin() + static_cast<long>(begin),
                                        ptrs.begin() + static_cast<long>(end));
        stack_forward(stack, part, chunked, cache);
    }
    for (int l = 0; l < 2; ++l) {
        for (int k = 0; k < 8; ++k) {
            CHECK(std::abs(whole.h[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] -
                           chunked.h[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)]) < 1e-12);
            CHECK(std::abs(whole.c[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] -
                           chunked.c[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)]) < 1e-12);
        }
    }
}

TEST_CASE("zero output gradient produces zero parameter gradients") {
    rng::Engine e(3);
    LstmStack stack = LstmStack::make("s", 4, 6);
    for (Param* p : stack.params()) xavier_init(*p, e);
    const auto seq = random_sequence(e, 5, 4);
    StackState st = StackState::zeros(6);
    StackCache cache;
    stack_forward(stack, row_ptrs(seq), st, cache);

    zero_grads(stack.params());
    std::vector<std::vector<double>> d_top(5);
    StackGrads grads;
    stack_backward(stack, cache, d_top, true, true, grads);
    for (Param* p : stack.params()) {
        for (double g : p->g.a) CHECK(g == 0.0);
    }
    for (const auto& d : grads.d_inputs) {
        for (double v : d) CHECK(v == 0.0);
    }
}

TEST_CASE("BPTT gradients match finite differences (params, inputs, init state)") {
    rng::Engine e(11);
    LstmStack stack = LstmStack::make("s", 5, 7);
    for (Param* p : stack.params()) xavier_init(*p, e);
    Fc out = Fc::make("out", 7, 2, Act::identity);
    xavier_init(out.W, e);

    auto seq = random_sequence(e, 4, 5);
    std::vector<double> target = {0.3, -0.8};
    std::vector<double> h_init(7), c_init(7);
    for (auto& v : h_init) v = rng::uniform(e, -0.5, 0.5);
    for (auto& v : c_init) v = rng::uniform(e, -0.5, 0.5);

    StackCache cache;
    FcCache fcc;
    auto loss = [&] {
        StackState st = StackState::zeros(7);
        st.h[0] = h_init;
        st.c[0] = c_init;
        stack_forward(stack, row_ptrs(seq), st, cache);
        fc_forward(out, st.h[1].data(), fcc);
        double l = 0.0;
        for (int k = 0; k < 2; ++k) {
            const double d = fcc.y[static_cast<std::size_t>(k)] - target[static_cast<std::size_t>(k)];
            l += d * d;
        }
        return l;
    };

    StackGrads grads;
    std::vector<Param*> params = stack.params();
    for (Param* p : out.params()) params.push_back(p);
    auto compute_grads = [&] {
        zero_grads(params);
        const double l = loss();  // fills caches
        (void)l;
        std::vector<double> d_y(2);
        for (int k = 0; k < 2; ++k) {
            d_y[static_cast<std::size_t>(k)] =
                2.0 * (fcc.y[static_cast<std::size_t>(k)] - target[static_cast<std::size_t>(k)]);
        }
        std::vector<double> d_h(7);
        fc_backward(out, fcc, d_y.data(), d_h.data(), true);
        std::vector<std::vector<double>> d_top(4);
        d_top[3] = d_h;
        stack_backward(stack, cache, d_top, true, true, grads);
    };

    const GradCheckReport rep = grad_check(loss, compute_grads, params, 1e-5, 1e-4);
    INFO("worst ", rep.worst_param, "[", rep.worst_index, "] analytic ", rep.analytic, " numeric ",
         rep.numeric);
    CHECK(rep.pass);

    // Input gradients against finite differences.
    compute_grads();
    const auto d_inputs = grads.d_inputs;
    bool any_nonzero = false;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        for (std::size_t k = 0; k < seq[t].size(); ++k) {
            const double saved = seq[t][k];
            seq[t][k] = saved + 1e-5;
            const double lp = loss();
            seq[t][k] = saved - 1e-5;
            const double lm = loss();
            seq[t][k] = saved;
            const double num = (lp - lm) / 2e-5;
            CHECK(std::abs(num - d_inputs[t][k]) <
                  1e-6 * std::max({std::abs(num), std::abs(d_inputs[t][k]), 1.0}));
            if (std::abs(d_inputs[t][k]) > 1e-9) any_nonzero = true;
        }
    }
    CHECK(any_nonzero);

    // Initial-state gradients against finite differences.
    compute_grads();
    const auto d_h0 = grads.d_init.h[0];
    for (int k = 0; k < 7; ++k) {
        const double saved = h_init[static_cast<std::size_t>(k)];
        h_init[static_cast<std::size_t>(k)] = saved + 1e-5;
        const double lp = loss();
        h_init[static_cast<std::size_t>(k)] = saved - 1e-5;
        const double lm = loss();
        h_init[static_cast<std::size_t>(k)] = saved;
        const double num = (lp - lm) / 2e-5;
        CHECK(std::abs(num - d_h0[static_cast<std::size_t>(k)]) < 1e-6);
    }
}

TEST_CASE("fully connected layers compute the documented activations") {
    Fc id = Fc::make("id", 3, 3, Act::identity);
    for (int i = 0; i < 3; ++i) id.W.w.at(i, i) = 1.0;
    FcCache cache;
    const double x[3] = {-1.0, 0.0, 2.0};
    fc_forward(id, x, cache);
    CHECK(cache.y[0] == -1.0);
    CHECK(cache.y[1] == 0.0);
    CHECK(cache.y[2] == 2.0);

    Fc relu = Fc::make("r", 3, 3, Act::relu);
    for (int i = 0; i < 3; ++i) relu.W.w.at(i, i) = 1.0;
    fc_forward(relu, x, cache);
    CHECK(cache.y[0] == 0.0);
    CHECK(cache.y[1] == 0.0);
    CHECK(cache.y[2] == 2.0);

    rng::Engine e(5);
    Fc sig = Fc::make("s", 3, 4, Act::sigmoid);
    xavier_init(sig.W, e);
    fc_forward(sig, x, cache);
    for (double v : cache.y) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("adam: zero gradients leave fresh parameters unchanged") {
    Param p = Param::zeros("p", 2, 2);
    p.w.a = {1.0, -2.0, 3.0, 4.0};
    std::vector<Param*> params = {&p};
    Adam adam({}, params);
    adam.update(params);
    CHECK(p.w.a == std::vector<double>{1.0, -2.0, 3.0, 4.0});
}

TEST_CASE("adam: first step has magnitude close to the learning rate") {
    Param p = Param::zeros("p", 1, 3);
    p.w.a = {0.0, 0.0, 0.0};
    p.g.a = {3.0, -0.004, 120.0};
    std::vector<Param*> params = {&p};
    Adam adam({1e-3, 0.9, 0.999, 1e-8}, params);
    adam.update(params);
    // Bias correction makes m_hat/sqrt(v_hat) = sign(g) at step one.
    for (std::size_t k = 0; k < 3; ++k) {
        const double expect = p.g.a[k] > 0 ? -1e-3 : 1e-3;
        CHECK(p.w.a[k] == doctest::Approx(expect).epsilon(1e-4));
    }
}

TEST_CASE("adam: deterministic across runs") {
    auto run = [] {
        Param p = Param::zeros("p", 4, 4);
        rng::Engine e(77);
        xavier_init(p, e);
        std::vector<Param*> params = {&p};
        Adam adam({1e-2, 0.9, 0.999, 1e-8}, params);
        for (int i = 0; i < 50; ++i) {
            for (std::size_t k = 0; k < p.w.size(); ++k) p.g.a[k] = 2.0 * p.w.a[k];
            adam.update(params);
        }
        return p.w.a;
    };
    CHECK(run() == run());
}

TEST_CASE("initialization: seeded, bounded, forget bias set") {
    LstmLayer a = LstmLayer::make("a", 6, 9);
    LstmLayer b = LstmLayer::make("b", 6, 9);
    rng::Engine e1(123), e2(123);
    xavier_init(a.Wx, e1);
    xavier_init(b.Wx, e2);
    CHECK(a.Wx.w.a == b.Wx.w.a);

    const double bound = std::sqrt(6.0 / (4 * 9 + 6));
    for (double v : a.Wx.w.a) CHECK(std::abs(v) <= bound);

    init_lstm_forget_bias(a);
    for (int k = 0; k < 9; ++k) {
        CHECK(a.b.w.a[static_cast<std::size_t>(k)] == 0.0);          // input gate block
        CHECK(a.b.w.a[static_cast<std::size_t>(9 + k)] == 1.0);      // forget gate block
        CHECK(a.b.w.a[static_cast<std::size_t>(2 * 9 + k)] == 0.0);  // cell block
    }
}

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
    Param p = Param::zeros("p", 3, 2);
    p.w.a = {0.9, -1.1, 0.7, -0.8, 1.0, -0.6};
    std::vector<Param*> params = {&p};
    auto loss = [&] {
        double l = 0.0;
        for (double v : p.w.a) l += 0.5 * v * v;
        return l;
    };
    auto grads = [&] {
        zero_grads(params);
        for (std::size_t k = 0; k < p.w.size(); ++k) p.g.a[k] = p.w.a[k];
    };
    const GradCheckReport rep = grad_check(loss, grads, params, 1e-5, 1e-10);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err <= 1e-10);
}
