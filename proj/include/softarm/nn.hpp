#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "softarm/rng.hpp"

namespace softarm::nn {

struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> a;  // row-major

    static Matrix zeros(int r, int c) {
        Matrix m;
        m.rows = r;
        m.cols = c;
        m.a.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
        return m;
    }
    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
    std::size_t size() const { return a.size(); }
};

// Learnable tensor with its gradient accumulator.
struct Param {
    std::string name;
    Matrix w, g;

    static Param zeros(std::string name, int r, int c) {
        Param p;
        p.name = std::move(name);
        p.w = Matrix::zeros(r, c);
        p.g = Matrix::zeros(r, c);
        return p;
    }
};

void zero_grads(const std::vector<Param*>& params);

// y = M x / y += M x / y += M^T x / M += u v^T
void matvec(const Matrix& m, const double* x, double* y);
void matvec_add(const Matrix& m, const double* x, double* y);
void matvec_t_add(const Matrix& m, const double* x, double* y);
void outer_add(Matrix& m, const double* u, const double* v);

// ---------------------------------------------------------------------------
// LSTM: gate order fixed as (input i, forget f, cell g, output o); the four
// blocks stack along the rows of Wx/Wh/b. This ordering is part of the
// checkpoint format.

struct LstmLayer {
    int in_dim = 0, hidden = 0;
    Param Wx, Wh, b;

    static LstmLayer make(const std::string& prefix, int in_dim, int hidden);
    std::vector<Param*> params();
};

struct LstmStepCache {
    std::vector<double> x, h_prev, c_prev;
    std::vector<double> i, f, g, o, c, tc;  // gates, new cell, tanh(cell)
};

// One cell update; h and c are updated in place, the cache records everything
// backward needs. Throws std::invalid_argument on shape mismatch.
void lstm_step(const LstmLayer& layer, const double* x, std::vector<double>& h,
               std::vector<double>& c, LstmStepCache& cache);

struct LstmStack {
    LstmLayer l0, l1;  // l0 consumes the input sequence, l1 consumes l0's outputs

    static LstmStack make(const std::string& prefix, int in_dim, int hidden);
    std::vector<Param*> params();
    int hidden() const { return l0.hidden; }
    int in_dim() const { return l0.in_dim; }
};

struct StackState {
    std::array<std::vector<double>, 2> h, c;  // per layer

    static StackState zeros(int hidden);
};

struct StackCache {
    int len = 0;
    std::vector<LstmStepCache> s0, s1;
    std::vector<std::vector<double>> top;  // per-step top-layer outputs
    // scratch for backward
    std::vector<double> dz, dh_scratch, dx_scratch;
};

// Runs the full sequence; state carries (h0, c0) in and the final states out,
// so chunked evaluation composes exactly with whole-sequence evaluation.
void stack_forward(const LstmStack& stack, const std::vector<const double*>& inputs,
                   StackState& state, StackCache& cache);

struct StackGrads {
    StackState d_init;                          // gradients into the initial (h0, c0)
    std::vector<std::vector<double>> d_inputs;  // per-step input gradients (if requested)
};

// Reverse pass over a cached forward run. d_top[k] may be empty (treated as
// zeros). Parameter gradients accumulate into the layer Params only when
// accum_params is set (a frozen model skips that half of the work).
// Throws std::invalid_argument if the cache does not match the stack shape.
void stack_backward(LstmStack& stack, StackCache& cache,
                    const std::vector<std::vector<double>>& d_top, bool accum_params,
                    bool want_d_inputs, StackGrads& out);

// ---------------------------------------------------------------------------

enum class Act { identity, relu, sigmoid };

struct Fc {
    Param W, b;
    Act act = Act::identity;

    static Fc make(const std::string& prefix, int in_dim, int out_dim, Act act);
    std::vector<Param*> params();
};

struct FcCache {
    std::vector<double> x, pre, y;
};

void fc_forward(const Fc& fc, const double* x, FcCache& cache);
// dx may be null when input gradients are not needed.
void fc_backward(Fc& fc, const FcCache& cache, const double* dy, double* dx, bool accum_params);

// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(AdamConfig cfg, const std::vector<Param*>& params);

    // Standard bias-corrected update; reads each param's g, leaves g untouched.
    void update(const std::vector<Param*>& params);
    std::int64_t step_count() const { return step_; }

private:
    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases. The
// LSTM forget-gate bias block is set to 1.0 afterwards by the layer factory
// users (see init_lstm_forget_bias).
void xavier_init(Param& p, rng::Engine& e);
void init_lstm_forget_bias(LstmLayer& layer, double value = 1.0);

// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int worst_index = -1;
    double analytic = 0.0, numeric = 0.0;
    bool pass = false;
};

// Central finite differences against analytic gradients. `loss` recomputes the
// scalar from current weights; `compute_grads` zeroes and refills every g.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           const std::vector<Param*>& params, double step = 1e-5,
                           double tol = 1e-4);

}  // namespace softarm::nn
