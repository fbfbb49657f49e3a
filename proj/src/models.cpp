#include "softarm/models.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <sstream>

#include "softarm/artifact_io.hpp"
#include "softarm/errors.hpp"

namespace softarm {

std::string variant_label(Variant v) {
    switch (v) {
        case Variant::fi: return "f+i";
        case Variant::fic: return "f+i+c";
        case Variant::fc: return "f+c";
    }
    return "?";
}

Variant variant_from_label(const std::string& name) {
    if (name == "i" || name == "f+i") return Variant::fi;
    if (name == "ic" || name == "f+i+c") return Variant::fic;
    if (name == "c" || name == "f+c") return Variant::fc;
    throw std::invalid_argument("unknown loss variant '" + name + "' (expected i, ic or c)");
}

void TrainConfig::validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (batch_size <= 0) throw std::invalid_argument("batch size must be > 0");
    if (epochs_forward <= 0 || epochs_inverse <= 0) throw std::invalid_argument("epoch counts must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (rollout_depth < 1) throw std::invalid_argument("rollout depth must be >= 1");
}

ForwardModel ForwardModel::make(const NormStats& stats) {
    ForwardModel fm;
    fm.lstm = nn::LstmStack::make("lstm", kForwardInputDim, kHidden);
    fm.fc1 = nn::Fc::make("fc1", kHidden, kFcHidden, nn::Act::relu);
    fm.head = nn::Fc::make("head", kFcHidden, 3, nn::Act::sigmoid);
    fm.stats = stats;
    return fm;
}

std::vector<nn::Param*> ForwardModel::params() {
    std::vector<nn::Param*> out = lstm.params();
    for (nn::Param* p : fc1.params()) out.push_back(p);
    for (nn::Param* p : head.params()) out.push_back(p);
    return out;
}

InverseModel InverseModel::make(const NormStats& stats) {
    InverseModel im;
    im.lstm = nn::LstmStack::make("lstm", kInverseInputDim, kHidden);
    im.fc1 = nn::Fc::make("fc1", kHidden, kFcHidden, nn::Act::relu);
    im.head = nn::Fc::make("head", kFcHidden, 6, nn::Act::identity);
    // The band is padded a little beyond [0, 250] so labels that were clamped
    // to the range boundary stay reachable at finite head outputs.
    const double pad = 5.0;  // kPa
    for (std::size_t c = 0; c < 6; ++c) {
        const double lo = (kPressureMin - pad - stats.u_mean[c]) / stats.u_std[c];
        const double hi = (kPressureMax + pad - stats.u_mean[c]) / stats.u_std[c];
        im.head_mid[c] = 0.5 * (lo + hi);
        im.head_half[c] = 0.5 * (hi - lo);
    }
    for (int l = 0; l < 2; ++l) {
        const std::string prefix = "init" + std::to_string(l);
        im.init[static_cast<std::size_t>(l)].Wh = nn::Param::zeros(prefix + ".Wh", kHidden, 3);
        im.init[static_cast<std::size_t>(l)].bh = nn::Param::zeros(prefix + ".bh", kHidden, 1);
        im.init[static_cast<std::size_t>(l)].Wc = nn::Param::zeros(prefix + ".Wc", kHidden, 3);
        im.init[static_cast<std::size_t>(l)].bc = nn::Param::zeros(prefix + ".bc", kHidden, 1);
    }
    im.stats = stats;
    return im;
}

std::vector<nn::Param*> InverseModel::params() {
    std::vector<nn::Param*> out = lstm.params();
    for (nn::Param* p : fc1.params()) out.push_back(p);
    for (nn::Param* p : head.params()) out.push_back(p);
    for (auto& m : init) {
        out.push_back(&m.Wh);
        out.push_back(&m.bh);
        out.push_back(&m.Wc);
        out.push_back(&m.bc);
    }
    return out;
}

namespace {

// Weight matrices drawn Xavier-uniform in a fixed order; biases stay zero
// apart from the forget-gate block.
void init_weights(std::vector<nn::Param*> weights, nn::LstmLayer& l0, nn::LstmLayer& l1,
                  rng::Engine e) {
    for (nn::Param* p : weights) nn::xavier_init(*p, e);
    nn::init_lstm_forget_bias(l0);
    nn::init_lstm_forget_bias(l1);
}

}  // namespace

void randomize_forward(ForwardModel& fm, std::uint64_t seed) {
    init_weights({&fm.lstm.l0.Wx, &fm.lstm.l0.Wh, &fm.lstm.l1.Wx, &fm.lstm.l1.Wh, &fm.fc1.W,
                  &fm.head.W},
                 fm.lstm.l0, fm.lstm.l1, rng::make_stream(seed, 2));
}

void randomize_inverse(InverseModel& im, std::uint64_t seed) {
    std::vector<nn::Param*> weights = {&im.lstm.l0.Wx, &im.lstm.l0.Wh, &im.lstm.l1.Wx,
                                       &im.lstm.l1.Wh, &im.fc1.W,      &im.head.W};
    for (auto& m : im.init) {
        weights.push_back(&m.Wh);
        weights.push_back(&m.Wc);
    }
    init_weights(std::move(weights), im.lstm.l0, im.lstm.l1, rng::make_stream(seed, 4));
}

std::array<double, 3> forward_predict(const ForwardModel& fm, const ForwardWindow& window,
                                      ForwardPass& ws) {
    ws.st = nn::StackState::zeros(kHidden);
    std::vector<const double*> rows(kWindowLen);
    for (int k = 0; k < kWindowLen; ++k) rows[static_cast<std::size_t>(k)] = window[static_cast<std::size_t>(k)].data();
    nn::stack_forward(fm.lstm, rows, ws.st, ws.cache);
    nn::fc_forward(fm.fc1, ws.st.h[1].data(), ws.fc1c);
    nn::fc_forward(fm.head, ws.fc1c.y.data(), ws.headc);
    ws.pred = {ws.headc.y[0], ws.headc.y[1], ws.headc.y[2]};
    return ws.pred;
}

void forward_backward(ForwardModel& fm, ForwardPass& ws, const std::array<double, 3>& d_pred,
                      bool accum_params, bool want_d_inputs) {
    std::vector<double> d_fc1(static_cast<std::size_t>(kFcHidden));
    std::vector<double> d_h(static_cast<std::size_t>(kHidden));
    nn::fc_backward(fm.head, ws.headc, d_pred.data(), d_fc1.data(), accum_params);
    nn::fc_backward(fm.fc1, ws.fc1c, d_fc1.data(), d_h.data(), accum_params);
    ws.d_top.assign(kWindowLen, {});
    ws.d_top[kWindowLen - 1] = d_h;
    nn::stack_backward(fm.lstm, ws.cache, ws.d_top, accum_params, want_d_inputs, ws.grads);
}

Vec3 denorm_position(const NormStats& stats, const std::array<double, 3>& sig) {
    // The raw sigmoid range (0,1) is wider than the [0.05, 0.95] band the
    // targets occupy; clamping keeps every denormalized prediction inside the
    // training min/max box.
    const std::vector<double> mm = apply_norm(stats,
                                              {std::clamp(sig[0], 0.05, 0.95),
                                               std::clamp(sig[1], 0.05, 0.95),
                                               std::clamp(sig[2], 0.05, 0.95)},
                                              NormMode::minmax, NormDir::inverse);
    return {mm[0], mm[1], mm[2]};
}

std::array<std::vector<double>, 2> inverse_init_state(const InverseModel& im,
                                                      const std::array<double, 3>& target_z) {
    std::array<std::vector<double>, 2> hc;
    for (int l = 0; l < 2; ++l) {
        const InitMap& m = im.init[static_cast<std::size_t>(l)];
        std::vector<double> h(static_cast<std::size_t>(kHidden));
        std::vector<double> c(static_cast<std::size_t>(kHidden));
        nn::matvec(m.Wh.w, target_z.data(), h.data());
        nn::matvec(m.Wc.w, target_z.data(), c.data());
        for (int k = 0; k < kHidden; ++k) {
            h[static_cast<std::size_t>(k)] = std::tanh(h[static_cast<std::size_t>(k)] + m.bh.w.a[static_cast<std::size_t>(k)]);
            c[static_cast<std::size_t>(k)] = std::tanh(c[static_cast<std::size_t>(k)] + m.bc.w.a[static_cast<std::size_t>(k)]);
        }
        hc[static_cast<std::size_t>(l)] = h;
        hc[static_cast<std::size_t>(l)].insert(hc[static_cast<std::size_t>(l)].end(), c.begin(), c.end());
    }
    return hc;
}

std::array<double, 6> inverse_predict(const InverseModel& im,
                                      const std::array<std::array<double, kInverseInputDim>,
                                                       kWindowLen>& steps,
                                      const std::array<double, 3>& target_z, InversePass& ws) {
    ws.tz = target_z;
    ws.st = nn::StackState::zeros(kHidden);
    const auto hc = inverse_init_state(im, target_z);
    for (int l = 0; l < 2; ++l) {
        auto& packed = hc[static_cast<std::size_t>(l)];
        ws.h0_out[static_cast<std::size_t>(l)].assign(packed.begin(), packed.begin() + kHidden);
        ws.c0_out[static_cast<std::size_t>(l)].assign(packed.begin() + kHidden, packed.end());
        ws.st.h[static_cast<std::size_t>(l)] = ws.h0_out[static_cast<std::size_t>(l)];
        ws.st.c[static_cast<std::size_t>(l)] = ws.c0_out[static_cast<std::size_t>(l)];
    }
    std::vector<const double*> rows(kWindowLen);
    for (int k = 0; k < kWindowLen; ++k) rows[static_cast<std::size_t>(k)] = steps[static_cast<std::size_t>(k)].data();
    nn::stack_forward(im.lstm, rows, ws.st, ws.cache);
    nn::fc_forward(im.fc1, ws.st.h[1].data(), ws.fc1c);
    nn::fc_forward(im.head, ws.fc1c.y.data(), ws.headc);
    for (std::size_t c = 0; c < 6; ++c) {
        const double t = (ws.headc.y[c] - im.head_mid[c]) / im.head_half[c];
        const double th = std::tanh(t);
        ws.u_hat[c] = im.head_mid[c] + im.head_half[c] * th;
        ws.squash_d[c] = 1.0 - th * th;
    }
    return ws.u_hat;
}

void inverse_backward(InverseModel& im, InversePass& ws, const std::array<double, 6>& d_u_hat) {
    std::array<double, 6> d_head{};
    for (std::size_t c = 0; c < 6; ++c) d_head[c] = d_u_hat[c] * ws.squash_d[c];
    std::vector<double> d_fc1(static_cast<std::size_t>(kFcHidden));
    std::vector<double> d_h(static_cast<std::size_t>(kHidden));
    nn::fc_backward(im.head, ws.headc, d_head.data(), d_fc1.data(), true);
    nn::fc_backward(im.fc1, ws.fc1c, d_fc1.data(), d_h.data(), true);
    ws.d_top.assign(kWindowLen, {});
    ws.d_top[kWindowLen - 1] = d_h;
    nn::stack_backward(im.lstm, ws.cache, ws.d_top, true, false, ws.grads);
    // Route the initial-state gradients through the tanh init maps.
    for (int l = 0; l < 2; ++l) {
        InitMap& m = im.init[static_cast<std::size_t>(l)];
        const auto& h0 = ws.h0_out[static_cast<std::size_t>(l)];
        const auto& c0 = ws.c0_out[static_cast<std::size_t>(l)];
        std::vector<double> dpre(static_cast<std::size_t>(kHidden));
        for (int k = 0; k < kHidden; ++k) {
            dpre[static_cast<std::size_t>(k)] =
                ws.grads.d_init.h[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] *
                (1.0 - h0[static_cast<std::size_t>(k)] * h0[static_cast<std::size_t>(k)]);
        }
        nn::outer_add(m.Wh.g, dpre.data(), ws.tz.data());
        for (int k = 0; k < kHidden; ++k) m.bh.g.a[static_cast<std::size_t>(k)] += dpre[static_cast<std::size_t>(k)];
        for (int k = 0; k < kHidden; ++k) {
            dpre[static_cast<std::size_t>(k)] =
                ws.grads.d_init.c[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] *
                (1.0 - c0[static_cast<std::size_t>(k)] * c0[static_cast<std::size_t>(k)]);
        }
        nn::outer_add(m.Wc.g, dpre.data(), ws.tz.data());
        for (int k = 0; k < kHidden; ++k) m.bc.g.a[static_cast<std::size_t>(k)] += dpre[static_cast<std::size_t>(k)];
    }
}

std::array<double, 6> pressures_from_z(const NormStats& stats, const std::array<double, 6>& u_z) {
    std::array<double, 6> out{};
    for (std::size_t c = 0; c < 6; ++c) {
        out[c] = std::clamp(u_z[c] * stats.u_std[c] + stats.u_mean[c], kPressureMin, kPressureMax);
    }
    return out;
}

std::array<double, 3> consistency_rollout(const ForwardModel& fm, const InverseSample& sample,
                                          const std::array<double, 6>& u_hat_z, int depth,
                                          RolloutPass& ws) {
    if (depth < 1) throw std::invalid_argument("rollout depth must be >= 1");
    if (!fm.trained) {
        throw DependencyError("consistency rollout requires a trained forward model");
    }
    ws.u_is_uhat = {false, false, false};
    ws.du_is_uhat = {false, false, false};
    // The final control step carries u_hat with its pressure difference taken
    // against the last executed command; deeper rollouts slide the window so
    // u_hat occupies the trailing steps (a held command, zero differences).
    const int shift = std::min(depth - 1, 3);
    for (int k = 0; k < kWindowLen; ++k) {
        // Row k covers absolute step t-2+k+shift: 0/1 are recorded history,
        // 2 is the commanded step, beyond that the command is held.
        const int src = k + shift;
        auto& row = ws.window[static_cast<std::size_t>(k)];
        if (src < 2) {
            row = sample.fwd_hist[static_cast<std::size_t>(src)];
        } else {
            for (int c = 0; c < 6; ++c) {
                row[static_cast<std::size_t>(c)] = u_hat_z[static_cast<std::size_t>(c)];
                row[static_cast<std::size_t>(6 + c)] =
                    src == 2 ? u_hat_z[static_cast<std::size_t>(c)] - sample.u_prev_z[static_cast<std::size_t>(c)]
                             : 0.0;
            }
            ws.u_is_uhat[static_cast<std::size_t>(k)] = true;
            ws.du_is_uhat[static_cast<std::size_t>(k)] = src == 2;
        }
    }
    return forward_predict(fm, ws.window, ws.fwd);
}

void consistency_rollout_backward(ForwardModel& fm, RolloutPass& ws,
                                  const std::array<double, 3>& d_p_roll,
                                  std::array<double, 6>& d_u_hat) {
    forward_backward(fm, ws.fwd, d_p_roll, /*accum_params=*/false, /*want_d_inputs=*/true);
    for (int k = 0; k < kWindowLen; ++k) {
        const auto& d_row = ws.fwd.grads.d_inputs[static_cast<std::size_t>(k)];
        if (ws.u_is_uhat[static_cast<std::size_t>(k)]) {
            for (int c = 0; c < 6; ++c) d_u_hat[static_cast<std::size_t>(c)] += d_row[static_cast<std::size_t>(c)];
        }
        if (ws.du_is_uhat[static_cast<std::size_t>(k)]) {
            for (int c = 0; c < 6; ++c) d_u_hat[static_cast<std::size_t>(c)] += d_row[static_cast<std::size_t>(6 + c)];
        }
    }
}

InverseLoss compute_loss(Variant v, const std::vector<const InverseSample*>& batch,
                         ForwardModel& fm, InverseModel& im, double lambda, int depth,
                         bool with_grads, ModelWorkspace& ws) {
    if (batch.empty()) throw std::invalid_argument("loss over an empty batch");
    const bool has_i = v == Variant::fi || v == Variant::fic;
    const bool has_c = v == Variant::fic || v == Variant::fc;
    if (has_c && lambda > 0.0 && !fm.trained) {
        throw DependencyError("consistency variants require a trained forward model");
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    InverseLoss loss;
    for (const InverseSample* sp : batch) {
        const InverseSample& s = *sp;
        const auto u_hat = inverse_predict(im, s.steps, s.target_z, ws.inv);
        std::array<double, 6> d_u{};
        if (has_i) {
            for (int c = 0; c < 6; ++c) {
                const double d = u_hat[static_cast<std::size_t>(c)] - s.label_z[static_cast<std::size_t>(c)];
                loss.inv += d * d * inv_n;
                d_u[static_cast<std::size_t>(c)] += 2.0 * d * inv_n;
            }
        }
        if (has_c && lambda > 0.0) {
            const auto p_roll = consistency_rollout(fm, s, u_hat, depth, ws.roll);
            std::array<double, 3> d_p{};
            for (int c = 0; c < 3; ++c) {
                const double d = p_roll[static_cast<std::size_t>(c)] - s.target_sig[static_cast<std::size_t>(c)];
                loss.cons += d * d * inv_n;
                d_p[static_cast<std::size_t>(c)] = 2.0 * lambda * d * inv_n;
            }
            if (with_grads) consistency_rollout_backward(fm, ws.roll, d_p, d_u);
        }
        if (with_grads) inverse_backward(im, ws.inv, d_u);
    }
    loss.total = (has_i ? loss.inv : 0.0) + (has_c ? lambda * loss.cons : 0.0);
    return loss;
}

double compute_forward_loss(const std::vector<const ForwardSample*>& batch, ForwardModel& fm,
                            bool with_grads, ForwardPass& ws) {
    if (batch.empty()) throw std::invalid_argument("loss over an empty batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const ForwardSample* sp : batch) {
        const auto pred = forward_predict(fm, sp->steps, ws);
        std::array<double, 3> d_pred{};
        for (int c = 0; c < 3; ++c) {
            const double d = pred[static_cast<std::size_t>(c)] - sp->target_sig[static_cast<std::size_t>(c)];
            loss += d * d * inv_n;
            d_pred[static_cast<std::size_t>(c)] = 2.0 * d * inv_n;
        }
        if (with_grads) forward_backward(fm, ws, d_pred, true, false);
    }
    return loss;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<nn::Param> snapshot(std::vector<nn::Param*> params) {
    std::vector<nn::Param> out;
    out.reserve(params.size());
    for (const nn::Param* p : params) {
        nn::Param copy;
        copy.name = p->name;
        copy.w = p->w;
        copy.g = nn::Matrix::zeros(p->w.rows, p->w.cols);
        out.push_back(std::move(copy));
    }
    return out;
}

void restore(std::vector<nn::Param*> params, const std::vector<nn::Param>& blocks) {
    if (params.size() != blocks.size()) throw CompatibilityError("checkpoint block count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->name != blocks[i].name || params[i]->w.rows != blocks[i].w.rows ||
            params[i]->w.cols != blocks[i].w.cols) {
            throw CompatibilityError("checkpoint block '" + blocks[i].name +
                                     "' does not match the model architecture");
        }
        params[i]->w = blocks[i].w;
    }
}

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void set_stats(io::KvBlock& kv, const NormStats& st) {
    kv.set("stats.u_mean", io::fmt_double_list({st.u_mean.begin(), st.u_mean.end()}));
    kv.set("stats.u_std", io::fmt_double_list({st.u_std.begin(), st.u_std.end()}));
    kv.set("stats.p_mean", io::fmt_double_list({st.p_mean.begin(), st.p_mean.end()}));
    kv.set("stats.p_std", io::fmt_double_list({st.p_std.begin(), st.p_std.end()}));
    kv.set("stats.p_min", io::fmt_double_list({st.p_min.begin(), st.p_min.end()}));
    kv.set("stats.p_max", io::fmt_double_list({st.p_max.begin(), st.p_max.end()}));
    kv.set("stats.n_train", st.n_train);
}

template <std::size_t N>
void read_list(const io::KvBlock& kv, const std::string& key, std::array<double, N>& out) {
    const auto v = io::parse_double_list(kv.get(key), key);
    if (v.size() != N) throw std::invalid_argument(key + ": expected " + std::to_string(N) + " values");
    std::copy(v.begin(), v.end(), out.begin());
}

NormStats stats_from_kv(const io::KvBlock& kv) {
    NormStats st;
    read_list(kv, "stats.u_mean", st.u_mean);
    read_list(kv, "stats.u_std", st.u_std);
    read_list(kv, "stats.p_mean", st.p_mean);
    read_list(kv, "stats.p_std", st.p_std);
    read_list(kv, "stats.p_min", st.p_min);
    read_list(kv, "stats.p_max", st.p_max);
    st.n_train = kv.get_int("stats.n_train");
    return st;
}

}  // namespace

Checkpoint checkpoint_of_forward(const ForwardModel& fm, const TrainConfig& cfg,
                                 const std::string& plant_fp) {
    Checkpoint c;
    c.model_kind = "forward";
    c.cfg = cfg;
    c.stats = fm.stats;
    c.plant_fp = plant_fp;
    c.blocks = snapshot(const_cast<ForwardModel&>(fm).params());
    return c;
}

Checkpoint checkpoint_of_inverse(const InverseModel& im, const TrainConfig& cfg,
                                 const std::string& plant_fp) {
    Checkpoint c;
    c.model_kind = "inverse";
    c.cfg = cfg;
    c.stats = im.stats;
    c.plant_fp = plant_fp;
    c.blocks = snapshot(const_cast<InverseModel&>(im).params());
    return c;
}

ForwardModel forward_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.model_kind != "forward") {
        throw CompatibilityError("expected a forward checkpoint, got '" + ckpt.model_kind + "'");
    }
    ForwardModel fm = ForwardModel::make(ckpt.stats);
    restore(fm.params(), ckpt.blocks);
    fm.trained = true;
    return fm;
}

InverseModel inverse_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.model_kind != "inverse") {
        throw CompatibilityError("expected an inverse checkpoint, got '" + ckpt.model_kind + "'");
    }
    InverseModel im = InverseModel::make(ckpt.stats);
    restore(im.params(), ckpt.blocks);
    return im;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    io::KvBlock kv;
    kv.set("format", std::string(io::kFormatTag));
    kv.set("kind", std::string("checkpoint"));
    kv.set("created", now_utc());
    kv.set("model", ckpt.model_kind);
    kv.set("loss", ckpt.model_kind == "forward" ? std::string("f") : variant_label(ckpt.cfg.variant));
    kv.set("fingerprint.plant", ckpt.plant_fp);
    kv.set("cfg.lambda", ckpt.cfg.lambda);
    kv.set("cfg.batch_size", static_cast<std::int64_t>(ckpt.cfg.batch_size));
    kv.set("cfg.epochs_forward", static_cast<std::int64_t>(ckpt.cfg.epochs_forward));
    kv.set("cfg.epochs_inverse", static_cast<std::int64_t>(ckpt.cfg.epochs_inverse));
    kv.set("cfg.lr", ckpt.cfg.lr);
    kv.set("cfg.seed", ckpt.cfg.seed);
    kv.set("cfg.rollout_depth", static_cast<std::int64_t>(ckpt.cfg.rollout_depth));
    set_stats(kv, ckpt.stats);

    std::string out = kv.serialize();
    out += "params:\n";
    for (const nn::Param& p : ckpt.blocks) {
        out += "param " + p.name + " " + std::to_string(p.w.rows) + " " + std::to_string(p.w.cols) + "\n";
        for (int r = 0; r < p.w.rows; ++r) {
            for (int c = 0; c < p.w.cols; ++c) {
                if (c) out += ' ';
                out += io::fmt(p.w.at(r, c));
            }
            out += '\n';
        }
    }
    out += "end\n";
    io::write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::istringstream in(io::read_file(path));
    io::LineReader reader(in, path);

    io::KvBlock header;
    std::string line;
    bool saw_params = false;
    while (reader.next(line)) {
        const std::string t = io::trim(line);
        if (t.empty()) continue;
        if (t == "params:") {
            saw_params = true;
            break;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) reader.fail("expected 'key = value' or 'params:', got '" + t + "'");
        header.set(io::trim(t.substr(0, eq)), io::trim(t.substr(eq + 1)));
    }
    if (!saw_params) throw ParseError(path, reader.line_no(), "missing 'params:' section");
    io::check_format(header, path);
    if (header.get("kind") != "checkpoint") {
        throw ParseError(path, 2, "expected kind = checkpoint, got '" + header.get("kind") + "'");
    }

    Checkpoint ckpt;
    ckpt.model_kind = header.get("model");
    if (ckpt.model_kind != "forward" && ckpt.model_kind != "inverse") {
        throw ParseError(path, 2, "unknown model kind '" + ckpt.model_kind + "'");
    }
    if (ckpt.model_kind == "inverse") ckpt.cfg.variant = variant_from_label(header.get("loss"));
    ckpt.plant_fp = header.get("fingerprint.plant");
    ckpt.cfg.lambda = header.get_double("cfg.lambda");
    ckpt.cfg.batch_size = static_cast<int>(header.get_int("cfg.batch_size"));
    ckpt.cfg.epochs_forward = static_cast<int>(header.get_int("cfg.epochs_forward"));
    ckpt.cfg.epochs_inverse = static_cast<int>(header.get_int("cfg.epochs_inverse"));
    ckpt.cfg.lr = header.get_double("cfg.lr");
    ckpt.cfg.seed = static_cast<std::uint64_t>(header.get_int("cfg.seed"));
    ckpt.cfg.rollout_depth = static_cast<int>(header.get_int("cfg.rollout_depth"));
    ckpt.stats = stats_from_kv(header);

    bool saw_end = false;
    while (reader.next(line)) {
        const std::string t = io::trim(line);
        if (t.empty()) continue;
        if (t == "end") {
            saw_end = true;
            break;
        }
        std::istringstream ls(t);
        std::string tag, name;
        int rows = 0, cols = 0;
        ls >> tag >> name >> rows >> cols;
        if (tag != "param" || ls.fail() || rows <= 0 || cols <= 0) {
            reader.fail("expected 'param <name> <rows> <cols>', got '" + t + "'");
        }
        nn::Param p = nn::Param::zeros(name, rows, cols);
        for (int r = 0; r < rows; ++r) {
            if (!reader.next(line)) reader.fail("unexpected end of file inside param '" + name + "'");
            const auto fields = io::split(io::trim(line), ' ');
            if (static_cast<int>(fields.size()) != cols) {
                reader.fail("param '" + name + "' row has " + std::to_string(fields.size()) +
                            " values, expected " + std::to_string(cols));
            }
            for (int c = 0; c < cols; ++c) {
                try {
                    p.w.at(r, c) = io::parse_double(fields[static_cast<std::size_t>(c)], name);
                } catch (const std::invalid_argument& e) {
                    reader.fail(e.what());
                }
            }
        }
        ckpt.blocks.push_back(std::move(p));
    }
    if (!saw_end) throw ParseError(path, reader.line_no(), "missing 'end' marker (truncated file?)");
    return ckpt;
}

// ---------------------------------------------------------------------------

namespace {

void check_dataset_compat(const Checkpoint& ckpt, const NormStats& stats,
                          const std::string& plant_fp) {
    if (ckpt.plant_fp != plant_fp) {
        throw CompatibilityError("plant fingerprint mismatch: checkpoint " + ckpt.plant_fp +
                                 " vs dataset " + plant_fp);
    }
    if (!same_stats(ckpt.stats, stats)) {
        throw CompatibilityError("normalization statistics do not match the dataset");
    }
}

}  // namespace

ForwardTrainResult train_forward(const RawDataset& ds, TrainConfig cfg) {
    cfg.validate();
    const NormStats stats = compute_norm_stats(ds);
    const std::string fp = plant_fingerprint(ds.plant);
    const auto windows = make_forward_windows(ds, stats);
    const auto split = split_windows(windows, ds.n_train_frames(), kForwardLookback);

    ForwardModel fm = ForwardModel::make(stats);
    randomize_forward(fm, cfg.seed);
    auto params = fm.params();
    nn::Adam adam({cfg.lr, 0.9, 0.999, 1e-8}, params);
    rng::Engine shuffle_rng = rng::make_stream(cfg.seed, 3);

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    ForwardPass ws;
    ForwardTrainResult result;
    double best = std::numeric_limits<double>::infinity();
    std::vector<nn::Param> best_blocks;

    std::vector<const ForwardSample*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int epoch = 1; epoch <= cfg.epochs_forward; ++epoch) {
        rng::shuffle(order, shuffle_rng);
        double train_loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (std::size_t i = start; i < end; ++i) batch.push_back(&split.train[order[i]]);
            nn::zero_grads(params);
            train_loss_sum += compute_forward_loss(batch, fm, true, ws);
            adam.update(params);
            ++n_batches;
        }

        std::vector<const ForwardSample*> val_batch;
        val_batch.reserve(split.val.size());
        for (const auto& s : split.val) val_batch.push_back(&s);
        const double val_loss = compute_forward_loss(val_batch, fm, false, ws);

        result.log.push_back({epoch, train_loss_sum / static_cast<double>(n_batches), val_loss});
        if (val_loss < best) {
            best = val_loss;
            best_blocks = snapshot(params);
            result.best_epoch = epoch;
        }
    }
    restore(params, best_blocks);
    fm.trained = true;
    result.best_val = best;
    result.checkpoint = checkpoint_of_forward(fm, cfg, fp);
    return result;
}

InverseTrainResult train_inverse(const RawDataset& ds, const Checkpoint& fwd_ckpt,
                                 TrainConfig cfg) {
    cfg.validate();
    if (fwd_ckpt.model_kind != "forward") {
        throw DependencyError("inverse training requires a forward checkpoint");
    }
    const NormStats stats = compute_norm_stats(ds);
    const std::string fp = plant_fingerprint(ds.plant);
    check_dataset_compat(fwd_ckpt, stats, fp);

    ForwardModel fm = forward_from_checkpoint(fwd_ckpt);
    const auto windows = make_inverse_windows(ds, stats);
    const auto split = split_windows(windows, ds.n_train_frames(), kInverseLookback);

    InverseModel im = InverseModel::make(stats);
    randomize_inverse(im, cfg.seed ^ 0x5f3759df);
    auto params = im.params();
    nn::Adam adam({cfg.lr, 0.9, 0.999, 1e-8}, params);
    rng::Engine shuffle_rng = rng::make_stream(cfg.seed, 5);

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    ModelWorkspace ws;
    InverseTrainResult result;
    double best = std::numeric_limits<double>::infinity();
    std::vector<nn::Param> best_blocks;

    std::vector<const InverseSample*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    std::vector<const InverseSample*> val_batch;
    val_batch.reserve(split.val.size());
    for (const auto& s : split.val) val_batch.push_back(&s);

    for (int epoch = 1; epoch <= cfg.epochs_inverse; ++epoch) {
        rng::shuffle(order, shuffle_rng);
        double inv_sum = 0.0, cons_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (std::size_t i = start; i < end; ++i) batch.push_back(&split.train[order[i]]);
            nn::zero_grads(params);
            const InverseLoss l =
                compute_loss(cfg.variant, batch, fm, im, cfg.lambda, cfg.rollout_depth, true, ws);
            adam.update(params);
            inv_sum += l.inv;
            cons_sum += l.cons;
            ++n_batches;
        }
        const double nb = static_cast<double>(n_batches);

        const InverseLoss vl =
            compute_loss(cfg.variant, val_batch, fm, im, cfg.lambda, cfg.rollout_depth, false, ws);
        // Best-checkpoint selection by the variant's own validation objective.
        const double objective = vl.total;

        InverseEpoch row;
        row.epoch = epoch;
        row.train_inv = inv_sum / nb;
        row.train_cons = cons_sum / nb;
        const bool has_i = cfg.variant != Variant::fc;
        const bool has_c = cfg.variant != Variant::fi;
        row.train_total = (has_i ? row.train_inv : 0.0) + (has_c ? cfg.lambda * row.train_cons : 0.0);
        row.val_inv = vl.inv;
        row.val_cons = vl.cons;
        row.val_objective = objective;
        result.log.push_back(row);

        if (objective < best) {
            best = objective;
            best_blocks = snapshot(params);
            result.best_epoch = epoch;
        }
    }
    restore(params, best_blocks);
    result.best_val = best;
    result.checkpoint = checkpoint_of_inverse(im, cfg, fp);
    return result;
}

EvalReport evaluate_forward(const Checkpoint& ckpt, const RawDataset& ds, Split split_sel) {
    const NormStats stats = compute_norm_stats(ds);
    check_dataset_compat(ckpt, stats, plant_fingerprint(ds.plant));
    ForwardModel fm = forward_from_checkpoint(ckpt);

    const auto windows = make_forward_windows(ds, stats);
    const auto split = split_windows(windows, ds.n_train_frames(), kForwardLookback);
    const auto& samples = split_sel == Split::train ? split.train : split.val;
    if (samples.empty()) throw std::invalid_argument("selected split is empty");

    ForwardPass ws;
    EvalReport rep;
    std::array<double, 3> se{};
    for (const auto& s : samples) {
        const auto pred = forward_predict(fm, s.steps, ws);
        const Vec3 mm = denorm_position(stats, pred);
        const double d[3] = {mm.x - s.target_mm[0], mm.y - s.target_mm[1], mm.z - s.target_mm[2]};
        for (int c = 0; c < 3; ++c) se[static_cast<std::size_t>(c)] += d[c] * d[c];
    }
    rep.n = static_cast<std::int64_t>(samples.size());
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        total += se[static_cast<std::size_t>(c)];
        rep.rmse_axis[static_cast<std::size_t>(c)] =
            std::sqrt(se[static_cast<std::size_t>(c)] / static_cast<double>(rep.n));
    }
    rep.rmse_total = std::sqrt(total / static_cast<double>(rep.n));
    return rep;
}

}  // namespace softarm
