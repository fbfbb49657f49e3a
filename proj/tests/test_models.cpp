#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "softarm/control.hpp"
#include "softarm/errors.hpp"
#include "softarm/models.hpp"

using namespace softarm;

namespace {

struct Fixture {
    RawDataset ds;
    NormStats stats;
    std::vector<ForwardSample> fwd;
    std::vector<InverseSample> inv;

    explicit Fixture(std::int64_t frames = 400, std::uint64_t seed = 1) {
        DataGenConfig cfg;
        cfg.total_frames = frames;
        cfg.seed = seed;
        ds = generate_dataset(default_plant_params(), cfg);
        stats = compute_norm_stats(ds);
        fwd = make_forward_windows(ds, stats);
        inv = make_inverse_windows(ds, stats);
    }
};

double rollout_loss(ForwardModel& fm, const InverseSample& s, const std::array<double, 6>& u,
                    int depth, RolloutPass& ws) {
    const auto p = consistency_rollout(fm, s, u, depth, ws);
    double l = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double d = p[static_cast<std::size_t>(c)] - s.target_sig[static_cast<std::size_t>(c)];
        l += d * d;
    }
    return l;
}

// Adam descent on the 6-vector u against the rollout loss.
std::array<double, 6> solve_control(ForwardModel& fm, const InverseSample& s,
                                    std::array<double, 6> u, int steps, RolloutPass& ws) {
    nn::Param p = nn::Param::zeros("u", 6, 1);
    std::copy(u.begin(), u.end(), p.w.a.begin());
    std::vector<nn::Param*> params = {&p};
    nn::Adam adam({0.05, 0.9, 0.999, 1e-8}, params);
    for (int i = 0; i < steps; ++i) {
        std::array<double, 6> cur{};
        std::copy(p.w.a.begin(), p.w.a.end(), cur.begin());
        const auto pred = consistency_rollout(fm, s, cur, 1, ws);
        std::array<double, 3> d_p{};
        for (int c = 0; c < 3; ++c) {
            d_p[static_cast<std::size_t>(c)] =
                2.0 * (pred[static_cast<std::size_t>(c)] - s.target_sig[static_cast<std::size_t>(c)]);
        }
        std::array<double, 6> d_u{};
        consistency_rollout_backward(fm, ws, d_p, d_u);
        std::copy(d_u.begin(), d_u.end(), p.g.a.begin());
        adam.update(params);
    }
    std::array<double, 6> out{};
    std::copy(p.w.a.begin(), p.w.a.end(), out.begin());
    return out;
}

}  // namespace

TEST_CASE("zero-initialized heads give the documented neutral outputs") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    ForwardPass ws;
    const auto pred = forward_predict(fm, f.fwd[0].steps, ws);
    CHECK(pred[0] == 0.5);
    CHECK(pred[1] == 0.5);
    CHECK(pred[2] == 0.5);

    InverseModel im = InverseModel::make(f.stats);
    InversePass iws;
    const auto u = inverse_predict(im, f.inv[0].steps, f.inv[0].target_z, iws);
    // The range squash emits the band midpoint (mid-range pressure, close to
    // the channel mean on this excitation) for a zero head.
    const auto kpa = pressures_from_z(f.stats, u);
    for (int c = 0; c < 6; ++c) {
        CHECK(std::abs(kpa[static_cast<std::size_t>(c)] - 125.0) < 1.0);
        CHECK(std::abs(kpa[static_cast<std::size_t>(c)] -
                       f.stats.u_mean[static_cast<std::size_t>(c)]) < 10.0);
    }
}

TEST_CASE("inverse outputs always denormalize into the actuator range") {
    const Fixture f;
    InverseModel im = InverseModel::make(f.stats);
    randomize_inverse(im, 97);
    // Blow up the head weights to force saturation.
    for (auto& v : im.head.W.w.a) v *= 50.0;
    InversePass ws;
    for (std::size_t i = 0; i < f.inv.size(); i += 43) {
        const auto u = inverse_predict(im, f.inv[i].steps, f.inv[i].target_z, ws);
        const auto kpa = pressures_from_z(f.stats, u);
        for (int c = 0; c < 6; ++c) {
            const double raw = u[static_cast<std::size_t>(c)] * f.stats.u_std[static_cast<std::size_t>(c)] +
                               f.stats.u_mean[static_cast<std::size_t>(c)];
            // Emissions stay within the padded band; the deployment clamp
            // trims at most the 5 kPa pad.
            CHECK(raw >= kPressureMin - 5.0 - 1e-9);
            CHECK(raw <= kPressureMax + 5.0 + 1e-9);
            CHECK(kpa[static_cast<std::size_t>(c)] >= kPressureMin);
            CHECK(kpa[static_cast<std::size_t>(c)] <= kPressureMax);
        }
    }
}

TEST_CASE("denormalized forward predictions stay inside the training box") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    randomize_forward(fm, 5);
    ForwardPass ws;
    for (std::size_t i = 0; i < f.fwd.size(); i += 29) {
        const auto pred = forward_predict(fm, f.fwd[i].steps, ws);
        const Vec3 mm = denorm_position(f.stats, pred);
        CHECK(mm.x >= f.stats.p_min[0]);
        CHECK(mm.x <= f.stats.p_max[0]);
        CHECK(mm.y >= f.stats.p_min[1]);
        CHECK(mm.y <= f.stats.p_max[1]);
        CHECK(mm.z >= f.stats.p_min[2]);
        CHECK(mm.z <= f.stats.p_max[2]);
    }
}

TEST_CASE("inverse init maps: zero map, bounded prior, reachable by gradients") {
    const Fixture f;
    InverseModel im = InverseModel::make(f.stats);
    const auto zero_hc = inverse_init_state(im, {0.5, -1.0, 2.0});
    for (const auto& packed : zero_hc) {
        for (double v : packed) CHECK(v == 0.0);
    }

    randomize_inverse(im, 3);
    const auto hc = inverse_init_state(im, {3.0, -8.0, 5.0});
    for (const auto& packed : hc) {
        for (double v : packed) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
    }

    // Supervised loss reaches the init maps.
    ForwardModel fm = ForwardModel::make(f.stats);
    fm.trained = true;
    ModelWorkspace ws;
    std::vector<const InverseSample*> batch = {&f.inv[0], &f.inv[5]};
    nn::zero_grads(im.params());
    compute_loss(Variant::fi, batch, fm, im, 1.0, 1, true, ws);
    for (const auto& m : im.init) {
        double norm = 0.0;
        for (double g : m.Wh.g.a) norm += g * g;
        for (double g : m.bh.g.a) norm += g * g;
        CHECK(norm > 0.0);
    }
}

TEST_CASE("rollout with the recorded control equals the plain forward prediction") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    randomize_forward(fm, 11);
    fm.trained = true;

    ForwardPass fws;
    RolloutPass rws;
    for (std::size_t i = 0; i < f.inv.size(); i += 37) {
        const InverseSample& s = f.inv[i];
        const auto p_roll = consistency_rollout(fm, s, s.label_z, 1, rws);
        // The matching forward window targets the same frame.
        const ForwardSample& fsample = f.fwd[static_cast<std::size_t>(s.t - 3)];
        REQUIRE(fsample.t == s.t);
        const auto p_fwd = forward_predict(fm, fsample.steps, fws);
        for (int c = 0; c < 3; ++c) {
            CHECK(std::abs(p_roll[static_cast<std::size_t>(c)] - p_fwd[static_cast<std::size_t>(c)]) < 1e-12);
        }
    }
}

TEST_CASE("rollout rejects bad depth and untrained forward models") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    RolloutPass ws;
    CHECK_THROWS_AS(consistency_rollout(fm, f.inv[0], f.inv[0].label_z, 0, ws),
                    std::invalid_argument);
    CHECK_THROWS_AS(consistency_rollout(fm, f.inv[0], f.inv[0].label_z, 1, ws), DependencyError);
}

TEST_CASE("consistency gradient w.r.t. the control matches finite differences") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    randomize_forward(fm, 17);
    fm.trained = true;
    RolloutPass ws;

    rng::Engine e(23);
    for (int depth : {1, 2, 3}) {
        const InverseSample& s = f.inv[40];
        std::array<double, 6> u{};
        for (auto& v : u) v = rng::uniform(e, -1.0, 1.0);

        const auto pred = consistency_rollout(fm, s, u, depth, ws);
        std::array<double, 3> d_p{};
        for (int c = 0; c < 3; ++c) {
            d_p[static_cast<std::size_t>(c)] =
                2.0 * (pred[static_cast<std::size_t>(c)] - s.target_sig[static_cast<std::size_t>(c)]);
        }
        std::array<double, 6> d_u{};
        consistency_rollout_backward(fm, ws, d_p, d_u);

        for (int c = 0; c < 6; ++c) {
            const double saved = u[static_cast<std::size_t>(c)];
            u[static_cast<std::size_t>(c)] = saved + 1e-5;
            const double lp = rollout_loss(fm, s, u, depth, ws);
            u[static_cast<std::size_t>(c)] = saved - 1e-5;
            const double lm = rollout_loss(fm, s, u, depth, ws);
            u[static_cast<std::size_t>(c)] = saved;
            const double num = (lp - lm) / 2e-5;
            const double rel = std::abs(num - d_u[static_cast<std::size_t>(c)]) /
                               std::max({std::abs(num), std::abs(d_u[static_cast<std::size_t>(c)]), 1e-6});
            CHECK(rel <= 1e-4);
        }
    }
}

TEST_CASE("full-model gradient oracles: forward loss and consistency loss") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    randomize_forward(fm, 29);
    ForwardPass fws;

    std::vector<const ForwardSample*> fwd_batch;
    for (std::size_t i = 0; i < 4; ++i) fwd_batch.push_back(&f.fwd[20 + 31 * i]);
    auto fwd_params = fm.params();
    const nn::GradCheckReport fwd_rep = nn::grad_check(
        [&] { return compute_forward_loss(fwd_batch, fm, false, fws); },
        [&] {
            nn::zero_grads(fwd_params);
            compute_forward_loss(fwd_batch, fm, true, fws);
        },
        fwd_params, 1e-5, 1e-4);
    INFO("forward worst ", fwd_rep.worst_param, " analytic ", fwd_rep.analytic, " numeric ",
         fwd_rep.numeric);
    CHECK(fwd_rep.pass);

    fm.trained = true;
    InverseModel im = InverseModel::make(f.stats);
    randomize_inverse(im, 31);
    ModelWorkspace ws;
    std::vector<const InverseSample*> inv_batch;
    for (std::size_t i = 0; i < 4; ++i) inv_batch.push_back(&f.inv[10 + 41 * i]);
    auto inv_params = im.params();
    const nn::GradCheckReport cons_rep = nn::grad_check(
        [&] { return compute_loss(Variant::fc, inv_batch, fm, im, 1.0, 1, false, ws).total; },
        [&] {
            nn::zero_grads(inv_params);
            compute_loss(Variant::fc, inv_batch, fm, im, 1.0, 1, true, ws);
        },
        inv_params, 1e-5, 1e-4);
    INFO("consistency worst ", cons_rep.worst_param, " analytic ", cons_rep.analytic, " numeric ",
         cons_rep.numeric);
    CHECK(cons_rep.pass);

    // The frozen forward model must not accumulate gradients or change.
    const auto fm_before = checkpoint_of_forward(fm, {}, "x");
    nn::zero_grads(inv_params);
    nn::zero_grads(fwd_params);
    compute_loss(Variant::fc, inv_batch, fm, im, 1.0, 1, true, ws);
    for (nn::Param* p : fwd_params) {
        for (double g : p->g.a) CHECK(g == 0.0);
    }
    const auto fm_after = checkpoint_of_forward(fm, {}, "x");
    for (std::size_t b = 0; b < fm_before.blocks.size(); ++b) {
        CHECK(fm_before.blocks[b].w.a == fm_after.blocks[b].w.a);
    }
}

TEST_CASE("loss routing across the three formulations") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    randomize_forward(fm, 37);
    fm.trained = true;
    InverseModel im = InverseModel::make(f.stats);
    randomize_inverse(im, 41);
    ModelWorkspace ws;
    std::vector<const InverseSample*> batch;
    for (std::size_t i = 0; i < 8; ++i) batch.push_back(&f.inv[3 + 19 * i]);
    auto params = im.params();

    auto grads_of = [&](Variant v, double lambda) {
        nn::zero_grads(params);
        compute_loss(v, batch, fm, im, lambda, 1, true, ws);
        std::vector<std::vector<double>> out;
        for (nn::Param* p : params) out.push_back(p->g.a);
        return out;
    };

    // Under f+i the consistency weight is irrelevant.
    CHECK(grads_of(Variant::fi, 0.0) == grads_of(Variant::fi, 7.0));
    // f+i+c with lambda = 0 degenerates to f+i exactly.
    CHECK(grads_of(Variant::fic, 0.0) == grads_of(Variant::fi, 1.0));
    // The consistency path must be live for c-variants.
    const auto fc_grads = grads_of(Variant::fc, 1.0);
    double norm = 0.0;
    for (const auto& g : fc_grads) {
        for (double v : g) norm += v * v;
    }
    CHECK(norm > 0.0);

    const InverseLoss l = compute_loss(Variant::fic, batch, fm, im, 0.7, 1, false, ws);
    CHECK(l.total == l.inv + 0.7 * l.cons);

    CHECK_THROWS_AS(compute_loss(Variant::fic, {}, fm, im, 1.0, 1, false, ws),
                    std::invalid_argument);
    ForwardModel untrained = ForwardModel::make(f.stats);
    CHECK_THROWS_AS(compute_loss(Variant::fc, batch, untrained, im, 1.0, 1, false, ws),
                    DependencyError);
}

TEST_CASE("one-to-many conflict: the averaged control misses, the consistent one lands") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    randomize_forward(fm, 43);
    fm.trained = true;
    RolloutPass ws;

    InverseSample s = f.inv[60];
    rng::Engine e(47);
    std::array<double, 6> u1{};
    for (auto& v : u1) v = rng::uniform(e, -1.2, 1.2);
    const auto target = consistency_rollout(fm, s, u1, 1, ws);
    s.target_sig = target;  // u1 reaches the target exactly by construction

    // A second, distinct control that also reaches the target.
    std::array<double, 6> start{};
    for (auto& v : start) v = rng::uniform(e, -1.2, 1.2);
    const auto u2 = solve_control(fm, s, start, 4000, ws);
    REQUIRE(rollout_loss(fm, s, u2, 1, ws) < 1e-8);
    double sep = 0.0;
    for (int c = 0; c < 6; ++c) {
        sep += (u2[static_cast<std::size_t>(c)] - u1[static_cast<std::size_t>(c)]) *
               (u2[static_cast<std::size_t>(c)] - u1[static_cast<std::size_t>(c)]);
    }
    REQUIRE(std::sqrt(sep) > 0.3);  // genuinely different solution

    // Supervised regression on the two-sample conflict set can only output the
    // mean of the labels; the consistency objective picks an executable control.
    std::array<double, 6> u_mean{};
    for (int c = 0; c < 6; ++c) {
        u_mean[static_cast<std::size_t>(c)] =
            0.5 * (u1[static_cast<std::size_t>(c)] + u2[static_cast<std::size_t>(c)]);
    }
    const double err_supervised = std::sqrt(rollout_loss(fm, s, u_mean, 1, ws));
    const auto u_consistent = solve_control(fm, s, u_mean, 4000, ws);
    const double err_consistent = std::sqrt(rollout_loss(fm, s, u_consistent, 1, ws));
    INFO("supervised ", err_supervised, " consistent ", err_consistent);
    CHECK(err_supervised > err_consistent);
    CHECK(err_supervised > 10.0 * err_consistent);
}

TEST_CASE("supervised training on identical inputs converges to the label mean") {
    const Fixture f;
    ForwardModel fm = ForwardModel::make(f.stats);
    fm.trained = true;
    InverseModel im = InverseModel::make(f.stats);
    randomize_inverse(im, 53);

    InverseSample a = f.inv[10];
    InverseSample b = a;
    rng::Engine e(59);
    for (int c = 0; c < 6; ++c) {
        a.label_z[static_cast<std::size_t>(c)] = rng::uniform(e, -1, 1);
        b.label_z[static_cast<std::size_t>(c)] = rng::uniform(e, -1, 1);
    }
    std::vector<const InverseSample*> batch = {&a, &b};

    auto params = im.params();
    nn::Adam adam({3e-3, 0.9, 0.999, 1e-8}, params);
    ModelWorkspace ws;
    for (int i = 0; i < 3000; ++i) {
        nn::zero_grads(params);
        compute_loss(Variant::fi, batch, fm, im, 1.0, 1, true, ws);
        adam.update(params);
    }
    InversePass iws;
    const auto u = inverse_predict(im, a.steps, a.target_z, iws);
    for (int c = 0; c < 6; ++c) {
        const double mean = 0.5 * (a.label_z[static_cast<std::size_t>(c)] +
                                   b.label_z[static_cast<std::size_t>(c)]);
        CHECK(u[static_cast<std::size_t>(c)] == doctest::Approx(mean).epsilon(0.02));
    }
}

TEST_CASE("smoke training: forward model beats its untrained start and is deterministic") {
    const Fixture f(400, 3);
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.epochs_forward = 2;

    ForwardModel untrained = ForwardModel::make(f.stats);
    randomize_forward(untrained, cfg.seed);
    const auto split = split_windows(f.fwd, f.ds.n_train_frames(), kForwardLookback);
    std::vector<const ForwardSample*> val;
    for (const auto& s : split.val) val.push_back(&s);
    ForwardPass ws;
    const double untrained_val = compute_forward_loss(val, untrained, false, ws);

    const ForwardTrainResult r1 = train_forward(f.ds, cfg);
    CHECK(r1.log.size() == 2);
    CHECK(r1.best_val < untrained_val);

    const ForwardTrainResult r2 = train_forward(f.ds, cfg);
    REQUIRE(r1.checkpoint.blocks.size() == r2.checkpoint.blocks.size());
    for (std::size_t b = 0; b < r1.checkpoint.blocks.size(); ++b) {
        CHECK(r1.checkpoint.blocks[b].w.a == r2.checkpoint.blocks[b].w.a);
    }
}

TEST_CASE("overfitting a tiny dataset drives training-split RMSE near zero") {
    PlantParams quiet = default_plant_params();
    quiet.noise_sigma = 0.0;
    DataGenConfig dcfg;
    dcfg.total_frames = 50;
    dcfg.seed = 7;
    const RawDataset ds = generate_dataset(quiet, dcfg);

    TrainConfig cfg;
    cfg.seed = 7;
    cfg.epochs_forward = 400;
    const ForwardTrainResult r = train_forward(ds, cfg);
    const EvalReport rep = evaluate_forward(r.checkpoint, ds, Split::train);
    const WorkspaceBox box = WorkspaceBox::from_dataset(ds);
    INFO("train RMSE ", rep.rmse_total, " mm; diagonal ", box.diagonal());
    CHECK(rep.rmse_total < 0.02 * box.diagonal());

    const EvalReport rep2 = evaluate_forward(r.checkpoint, ds, Split::train);
    CHECK(rep.rmse_total == rep2.rmse_total);
}

TEST_CASE("inverse training honors the variant objective and logs the decomposition") {
    const Fixture f(300, 5);
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.epochs_forward = 3;
    cfg.epochs_inverse = 3;
    const ForwardTrainResult fr = train_forward(f.ds, cfg);

    for (Variant v : {Variant::fi, Variant::fic, Variant::fc}) {
        cfg.variant = v;
        const InverseTrainResult ir = train_inverse(f.ds, fr.checkpoint, cfg);
        CHECK(ir.log.size() == 3);
        for (const auto& row : ir.log) {
            const bool has_i = v != Variant::fc;
            const bool has_c = v != Variant::fi;
            const double expect_total =
                (has_i ? row.train_inv : 0.0) + (has_c ? cfg.lambda * row.train_cons : 0.0);
            CHECK(row.train_total == expect_total);
            const double expect_obj =
                (has_i ? row.val_inv : 0.0) + (has_c ? cfg.lambda * row.val_cons : 0.0);
            CHECK(row.val_objective == expect_obj);
        }
        CHECK(ir.checkpoint.model_kind == "inverse");
        CHECK(ir.checkpoint.cfg.variant == v);
    }

    // Mismatched plant: compatibility error.
    Fixture other(300, 6);
    other.ds.plant.actuator.L0 = 101.0;
    CHECK_THROWS_AS(train_inverse(other.ds, fr.checkpoint, cfg), CompatibilityError);
}

TEST_CASE("evaluating against the wrong dataset fails cleanly") {
    const Fixture f(300, 8);
    TrainConfig cfg;
    cfg.seed = 8;
    cfg.epochs_forward = 2;
    const ForwardTrainResult fr = train_forward(f.ds, cfg);

    DataGenConfig dcfg;
    dcfg.total_frames = 300;
    dcfg.seed = 12345;  // different data -> different stats
    const RawDataset other = generate_dataset(default_plant_params(), dcfg);
    CHECK_THROWS_AS(evaluate_forward(fr.checkpoint, other, Split::val), CompatibilityError);
}
