#include "softarm/nn.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace softarm::nn {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

#ifndef NDEBUG
bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}
#endif

}  // namespace

void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) p->g.a.assign(p->g.a.size(), 0.0);
}

void matvec(const Matrix& m, const double* x, double* y) {
    const double* row = m.a.data();
    for (int r = 0; r < m.rows; ++r, row += m.cols) {
        double acc = 0.0;
        for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

void matvec_add(const Matrix& m, const double* x, double* y) {
    const double* row = m.a.data();
    for (int r = 0; r < m.rows; ++r, row += m.cols) {
        double acc = 0.0;
        for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
}

void matvec_t_add(const Matrix& m, const double* x, double* y) {
    const double* row = m.a.data();
    for (int r = 0; r < m.rows; ++r, row += m.cols) {
        const double xr = x[r];
        for (int c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
    }
}

void outer_add(Matrix& m, const double* u, const double* v) {
    double* row = m.a.data();
    for (int r = 0; r < m.rows; ++r, row += m.cols) {
        const double ur = u[r];
        for (int c = 0; c < m.cols; ++c) row[c] += ur * v[c];
    }
}

LstmLayer LstmLayer::make(const std::string& prefix, int in_dim, int hidden) {
    LstmLayer l;
    l.in_dim = in_dim;
    l.hidden = hidden;
    l.Wx = Param::zeros(prefix + ".Wx", 4 * hidden, in_dim);
    l.Wh = Param::zeros(prefix + ".Wh", 4 * hidden, hidden);
    l.b = Param::zeros(prefix + ".b", 4 * hidden, 1);
    return l;
}

std::vector<Param*> LstmLayer::params() { return {&Wx, &Wh, &b}; }

void lstm_step(const LstmLayer& layer, const double* x, std::vector<double>& h,
               std::vector<double>& c, LstmStepCache& cache) {
    const int H = layer.hidden;
    if (static_cast<int>(h.size()) != H || static_cast<int>(c.size()) != H) {
        throw std::invalid_argument("lstm_step: state size does not match hidden size");
    }
    cache.x.assign(x, x + layer.in_dim);
    cache.h_prev = h;
    cache.c_prev = c;

    std::vector<double>& z = cache.i;  // reuse as staging before the gate split
    z.resize(static_cast<std::size_t>(4 * H));
    for (int r = 0; r < 4 * H; ++r) z[static_cast<std::size_t>(r)] = layer.b.w.a[static_cast<std::size_t>(r)];
    matvec_add(layer.Wx.w, x, z.data());
    matvec_add(layer.Wh.w, cache.h_prev.data(), z.data());

    cache.f.resize(static_cast<std::size_t>(H));
    cache.g.resize(static_cast<std::size_t>(H));
    cache.o.resize(static_cast<std::size_t>(H));
    cache.c.resize(static_cast<std::size_t>(H));
    cache.tc.resize(static_cast<std::size_t>(H));
    for (int k = 0; k < H; ++k) {
        const double zi = z[static_cast<std::size_t>(k)];
        const double zf = z[static_cast<std::size_t>(H + k)];
        const double zg = z[static_cast<std::size_t>(2 * H + k)];
        const double zo = z[static_cast<std::size_t>(3 * H + k)];
        const double gi = sigmoid(zi);
        const double gf = sigmoid(zf);
        const double gg = std::tanh(zg);
        const double go = sigmoid(zo);
        const double cn = gf * cache.c_prev[static_cast<std::size_t>(k)] + gi * gg;
        const double tc = std::tanh(cn);
        cache.f[static_cast<std::size_t>(k)] = gf;
        cache.g[static_cast<std::size_t>(k)] = gg;
        cache.o[static_cast<std::size_t>(k)] = go;
        cache.c[static_cast<std::size_t>(k)] = cn;
        cache.tc[static_cast<std::size_t>(k)] = tc;
        z[static_cast<std::size_t>(k)] = gi;  // i gates land in the low block
        c[static_cast<std::size_t>(k)] = cn;
        h[static_cast<std::size_t>(k)] = go * tc;
    }
    cache.i.resize(static_cast<std::size_t>(H));
    assert(all_finite(h) && all_finite(c));
}

namespace {

// Reverse of one cell update. dh: incoming gradient on h output; dc_carry is
// the running gradient on the cell state (updated in place to dc_prev).
// dh_prev_out accumulates Wh^T dz; dx_out (optional) accumulates Wx^T dz.
void lstm_step_backward(LstmLayer& layer, const LstmStepCache& cache, const double* dh,
                        std::vector<double>& dc_carry, std::vector<double>& dz,
                        double* dh_prev_out, double* dx_out, bool accum_params) {
    const int H = layer.hidden;
    dz.resize(static_cast<std::size_t>(4 * H));
    for (int k = 0; k < H; ++k) {
        const double tc = cache.tc[static_cast<std::size_t>(k)];
        const double o = cache.o[static_cast<std::size_t>(k)];
        const double i = cache.i[static_cast<std::size_t>(k)];
        const double f = cache.f[static_cast<std::size_t>(k)];
        const double g = cache.g[static_cast<std::size_t>(k)];
        const double do_ = dh[k] * tc;
        const double dc = dc_carry[static_cast<std::size_t>(k)] + dh[k] * o * (1.0 - tc * tc);
        const double di = dc * g;
        const double df = dc * cache.c_prev[static_cast<std::size_t>(k)];
        const double dg = dc * i;
        dz[static_cast<std::size_t>(k)] = di * i * (1.0 - i);
        dz[static_cast<std::size_t>(H + k)] = df * f * (1.0 - f);
        dz[static_cast<std::size_t>(2 * H + k)] = dg * (1.0 - g * g);
        dz[static_cast<std::size_t>(3 * H + k)] = do_ * o * (1.0 - o);
        dc_carry[static_cast<std::size_t>(k)] = dc * f;
    }
    if (accum_params) {
        outer_add(layer.Wx.g, dz.data(), cache.x.data());
        outer_add(layer.Wh.g, dz.data(), cache.h_prev.data());
        for (int r = 0; r < 4 * H; ++r) layer.b.g.a[static_cast<std::size_t>(r)] += dz[static_cast<std::size_t>(r)];
    }
    matvec_t_add(layer.Wh.w, dz.data(), dh_prev_out);
    if (dx_out != nullptr) matvec_t_add(layer.Wx.w, dz.data(), dx_out);
}

}  // namespace

LstmStack LstmStack::make(const std::string& prefix, int in_dim, int hidden) {
    LstmStack s;
    s.l0 = LstmLayer::make(prefix + "0", in_dim, hidden);
    s.l1 = LstmLayer::make(prefix + "1", hidden, hidden);
    return s;
}

std::vector<Param*> LstmStack::params() {
    return {&l0.Wx, &l0.Wh, &l0.b, &l1.Wx, &l1.Wh, &l1.b};
}

StackState StackState::zeros(int hidden) {
    StackState st;
    for (int l = 0; l < 2; ++l) {
        st.h[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(hidden), 0.0);
        st.c[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(hidden), 0.0);
    }
    return st;
}

void stack_forward(const LstmStack& stack, const std::vector<const double*>& inputs,
                   StackState& state, StackCache& cache) {
    if (inputs.empty()) throw std::invalid_argument("stack_forward: empty sequence");
    const int T = static_cast<int>(inputs.size());
    cache.len = T;
    cache.s0.resize(static_cast<std::size_t>(T));
    cache.s1.resize(static_cast<std::size_t>(T));
    cache.top.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        lstm_step(stack.l0, inputs[static_cast<std::size_t>(t)], state.h[0], state.c[0],
                  cache.s0[static_cast<std::size_t>(t)]);
        lstm_step(stack.l1, state.h[0].data(), state.h[1], state.c[1],
                  cache.s1[static_cast<std::size_t>(t)]);
        cache.top[static_cast<std::size_t>(t)] = state.h[1];
    }
}

void stack_backward(LstmStack& stack, StackCache& cache,
                    const std::vector<std::vector<double>>& d_top, bool accum_params,
                    bool want_d_inputs, StackGrads& out) {
    const int T = cache.len;
    const int H = stack.hidden();
    if (static_cast<int>(d_top.size()) != T) {
        throw std::invalid_argument("stack_backward: d_top length does not match cached sequence");
    }
    out.d_init = StackState::zeros(H);
    std::vector<double>& dh1 = out.d_init.h[1];
    std::vector<double>& dc1 = out.d_init.c[1];
    std::vector<double>& dh0 = out.d_init.h[0];
    std::vector<double>& dc0 = out.d_init.c[0];
    if (want_d_inputs) {
        out.d_inputs.assign(static_cast<std::size_t>(T),
                            std::vector<double>(static_cast<std::size_t>(stack.in_dim()), 0.0));
    } else {
        out.d_inputs.clear();
    }

    // The d_init vectors double as the carried gradients; after the loop they
    // hold gradients into the initial states.
    std::vector<double> dh1_total(static_cast<std::size_t>(H));
    std::vector<double> dh0_total(static_cast<std::size_t>(H));
    StackCache& scratch = cache;
    for (int t = T - 1; t >= 0; --t) {
        for (int k = 0; k < H; ++k) {
            dh1_total[static_cast<std::size_t>(k)] = dh1[static_cast<std::size_t>(k)];
        }
        const auto& dt = d_top[static_cast<std::size_t>(t)];
        if (!dt.empty()) {
            if (static_cast<int>(dt.size()) != H) {
                throw std::invalid_argument("stack_backward: d_top entry has wrong size");
            }
            for (int k = 0; k < H; ++k) dh1_total[static_cast<std::size_t>(k)] += dt[static_cast<std::size_t>(k)];
        }
        std::fill(dh1.begin(), dh1.end(), 0.0);
        std::fill(dh0_total.begin(), dh0_total.end(), 0.0);
        lstm_step_backward(stack.l1, cache.s1[static_cast<std::size_t>(t)], dh1_total.data(), dc1,
                           scratch.dz, dh1.data(), dh0_total.data(), accum_params);
        for (int k = 0; k < H; ++k) {
            dh0_total[static_cast<std::size_t>(k)] += dh0[static_cast<std::size_t>(k)];
        }
        std::fill(dh0.begin(), dh0.end(), 0.0);
        double* dx = want_d_inputs ? out.d_inputs[static_cast<std::size_t>(t)].data() : nullptr;
        lstm_step_backward(stack.l0, cache.s0[static_cast<std::size_t>(t)], dh0_total.data(), dc0,
                           scratch.dz, dh0.data(), dx, accum_params);
    }
}

Fc Fc::make(const std::string& prefix, int in_dim, int out_dim, Act act) {
    Fc fc;
    fc.W = Param::zeros(prefix + ".W", out_dim, in_dim);
    fc.b = Param::zeros(prefix + ".b", out_dim, 1);
    fc.act = act;
    return fc;
}

std::vector<Param*> Fc::params() { return {&W, &b}; }

void fc_forward(const Fc& fc, const double* x, FcCache& cache) {
    const int out = fc.W.w.rows;
    cache.x.assign(x, x + fc.W.w.cols);
    cache.pre.resize(static_cast<std::size_t>(out));
    cache.y.resize(static_cast<std::size_t>(out));
    for (int r = 0; r < out; ++r) cache.pre[static_cast<std::size_t>(r)] = fc.b.w.a[static_cast<std::size_t>(r)];
    matvec_add(fc.W.w, x, cache.pre.data());
    for (int r = 0; r < out; ++r) {
        const double z = cache.pre[static_cast<std::size_t>(r)];
        switch (fc.act) {
            case Act::identity: cache.y[static_cast<std::size_t>(r)] = z; break;
            case Act::relu: cache.y[static_cast<std::size_t>(r)] = z > 0.0 ? z : 0.0; break;
            case Act::sigmoid: cache.y[static_cast<std::size_t>(r)] = sigmoid(z); break;
        }
    }
    assert(all_finite(cache.y));
}

void fc_backward(Fc& fc, const FcCache& cache, const double* dy, double* dx, bool accum_params) {
    const int out = fc.W.w.rows;
    std::vector<double> dpre(static_cast<std::size_t>(out));
    for (int r = 0; r < out; ++r) {
        double d = dy[r];
        switch (fc.act) {
            case Act::identity: break;
            case Act::relu:
                // Subgradient at 0 is defined as 0.
                d = cache.pre[static_cast<std::size_t>(r)] > 0.0 ? d : 0.0;
                break;
            case Act::sigmoid: {
                const double y = cache.y[static_cast<std::size_t>(r)];
                d *= y * (1.0 - y);
                break;
            }
        }
        dpre[static_cast<std::size_t>(r)] = d;
    }
    if (accum_params) {
        outer_add(fc.W.g, dpre.data(), cache.x.data());
        for (int r = 0; r < out; ++r) fc.b.g.a[static_cast<std::size_t>(r)] += dpre[static_cast<std::size_t>(r)];
    }
    if (dx != nullptr) {
        std::fill(dx, dx + fc.W.w.cols, 0.0);
        matvec_t_add(fc.W.w, dpre.data(), dx);
    }
}

Adam::Adam(AdamConfig cfg, const std::vector<Param*>& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param* p : params) {
        m_.emplace_back(p->w.size(), 0.0);
        v_.emplace_back(p->w.size(), 0.0);
    }
}

void Adam::update(const std::vector<Param*>& params) {
    if (params.size() != m_.size()) throw std::invalid_argument("Adam: parameter list changed size");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (p.w.size() != m_[i].size()) throw std::invalid_argument("Adam: parameter shape changed");
        double* w = p.w.a.data();
        const double* g = p.g.a.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t k = 0; k < p.w.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void xavier_init(Param& p, rng::Engine& e) {
    const double bound = std::sqrt(6.0 / static_cast<double>(p.w.rows + p.w.cols));
    for (double& w : p.w.a) w = rng::uniform(e, -bound, bound);
}

void init_lstm_forget_bias(LstmLayer& layer, double value) {
    const int H = layer.hidden;
    for (int k = 0; k < H; ++k) layer.b.w.a[static_cast<std::size_t>(H + k)] = value;
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           const std::vector<Param*>& params, double step, double tol) {
    compute_grads();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Param* p : params) analytic.push_back(p->g.a);

    GradCheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        for (std::size_t k = 0; k < p.w.size(); ++k) {
            const double saved = p.w.a[k];
            p.w.a[k] = saved + step;
            const double lp = loss();
            p.w.a[k] = saved - step;
            const double lm = loss();
            p.w.a[k] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                throw std::runtime_error("grad_check: non-finite loss at " + p.name);
            }
            const double num = (lp - lm) / (2.0 * step);
            const double ana = analytic[pi][k];
            const double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
            const double rel = std::abs(num - ana) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.name;
                rep.worst_index = static_cast<int>(k);
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace softarm::nn
