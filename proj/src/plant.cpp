#include "softarm/plant.hpp"

#include <cmath>
#include <stdexcept>

#include "softarm/artifact_io.hpp"

namespace softarm {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Mat3 Mat3::rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
}

Vec3 Mat3::apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::mul(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            r.m[static_cast<std::size_t>(3 * i + j)] =
                m[static_cast<std::size_t>(3 * i)] * o.m[static_cast<std::size_t>(j)] +
                m[static_cast<std::size_t>(3 * i + 1)] * o.m[static_cast<std::size_t>(3 + j)] +
                m[static_cast<std::size_t>(3 * i + 2)] * o.m[static_cast<std::size_t>(6 + j)];
        }
    }
    return r;
}

void ActuatorParams::validate() const {
    if (!(L0 > 0.0)) throw std::invalid_argument("actuator L0 must be > 0");
    if (!(c0 > 0.0)) throw std::invalid_argument("actuator c0 must be > 0");
    if (r.size() != w.size()) throw std::invalid_argument("actuator r/w size mismatch");
    double prev = 0.0;
    double total_w = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
        if (!(r[j] > prev)) throw std::invalid_argument("play thresholds must be strictly increasing and > 0");
        if (!(r[j] < kPressureMax)) throw std::invalid_argument("play thresholds must be < 250 kPa");
        if (!(w[j] >= 0.0)) throw std::invalid_argument("play weights must be >= 0");
        prev = r[j];
        total_w += w[j];
    }
    if (!(c0 + total_w > 0.0)) throw std::invalid_argument("total actuator gain must be > 0");
}

void SegmentGeometry::validate() const {
    if (!(d > 0.0)) throw std::invalid_argument("mounting radius d must be > 0");
    if (!(s0 > 0.0)) throw std::invalid_argument("backbone arc length s0 must be > 0");
}

void PlantParams::validate() const {
    actuator.validate();
    geometry.validate();
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
}

PlantParams default_plant_params() {
    PlantParams p;
    p.actuator.L0 = 100.0;
    p.actuator.c0 = 0.20;
    const int n = 8;
    p.actuator.r.resize(n);
    p.actuator.w.resize(n);
    for (int j = 1; j <= n; ++j) {
        p.actuator.r[static_cast<std::size_t>(j - 1)] = 250.0 * j / 9.0;
        p.actuator.w[static_cast<std::size_t>(j - 1)] = 0.10 * std::exp(-j / 4.0);
    }
    p.geometry.d = 25.0;
    p.geometry.s0 = 120.0;
    p.noise_sigma = 0.5;
    return p;
}

double play_update(double y_prev, double p, double r) {
    return std::max(p - r, std::min(p + r, y_prev));
}

std::pair<double, ActuatorState> actuator_length(const ActuatorParams& params,
                                                 const ActuatorState& state, double p) {
    if (!(p >= kPressureMin && p <= kPressureMax)) {
        throw std::out_of_range("pressure " + io::fmt(p) + " kPa outside [0, 250]");
    }
    ActuatorState next = state;
    double length = params.L0 + params.c0 * p;
    for (std::size_t j = 0; j < params.r.size(); ++j) {
        next.y[j] = play_update(state.y[j], p, params.r[j]);
        length += params.w[j] * next.y[j];
    }
    next.p_last = p;
    return {length, next};
}

Curvature pcc_from_lengths(double l1, double l2, double l3, double d) {
    if (!(l1 > 0.0 && l2 > 0.0 && l3 > 0.0)) throw std::domain_error("actuator lengths must be > 0");
    if (!(d > 0.0)) throw std::domain_error("mounting radius must be > 0");
    // Sum of squares minus pairwise products, written as the stable half-sum
    // of squared differences.
    const double q = 0.5 * ((l1 - l2) * (l1 - l2) + (l2 - l3) * (l2 - l3) + (l3 - l1) * (l3 - l1));
    Curvature c;
    c.kappa = 2.0 * std::sqrt(q) / (d * (l1 + l2 + l3));
    c.phi = std::atan2(std::sqrt(3.0) * (l3 - l2), l2 + l3 - 2.0 * l1);
    return c;
}

SegmentTransform segment_transform(double kappa, double phi, double s) {
    if (!(s > 0.0)) throw std::domain_error("arc length must be > 0");
    if (!(kappa >= 0.0)) throw std::domain_error("curvature must be >= 0");
    const double theta = kappa * s;
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    const double half = std::sin(0.5 * theta);
    const double cm1 = -2.0 * half * half;  // cos(theta) - 1, no cancellation
    const double st = std::sin(theta);

    SegmentTransform T;
    T.R.m = {1.0 + cphi * cphi * cm1, cphi * sphi * cm1,       cphi * st,
             cphi * sphi * cm1,       1.0 + sphi * sphi * cm1, sphi * st,
             -cphi * st,              -sphi * st,              1.0 + cm1};
    if (kappa < 1e-9) {
        // First-order limit of ((1-cos)/kappa, sin/kappa); exact (0,0,s) at kappa = 0.
        const double a = 0.5 * kappa * s * s;
        T.t = {a * cphi, a * sphi, s};
    } else {
        const double a = -cm1 / kappa;
        T.t = {a * cphi, a * sphi, st / kappa};
    }
    return T;
}

StepResult arm_step(const PlantParams& params, const ArmState& state,
                    const std::array<double, 6>& u, rng::Engine* noise_rng) {
    StepResult out;
    out.state = state;
    std::array<double, 6> len{};
    for (int i = 0; i < 6; ++i) {
        auto [l, s] = actuator_length(params.actuator, state.actuators[static_cast<std::size_t>(i)],
                                      u[static_cast<std::size_t>(i)]);
        len[static_cast<std::size_t>(i)] = l;
        out.state.actuators[static_cast<std::size_t>(i)] = std::move(s);
    }
    const Curvature c1 = pcc_from_lengths(len[0], len[1], len[2], params.geometry.d);
    const Curvature c2 = pcc_from_lengths(len[3], len[4], len[5], params.geometry.d);
    const SegmentTransform T1 = segment_transform(c1.kappa, c1.phi, params.geometry.s0);
    const SegmentTransform T2 = segment_transform(c2.kappa, c2.phi, params.geometry.s0);
    out.tip = T1.R.apply(T2.t) + T1.t;
    if (noise_rng != nullptr && params.noise_sigma > 0.0) {
        out.tip.x += rng::gaussian(*noise_rng, 0.0, params.noise_sigma);
        out.tip.y += rng::gaussian(*noise_rng, 0.0, params.noise_sigma);
        out.tip.z += rng::gaussian(*noise_rng, 0.0, params.noise_sigma);
    }
    return out;
}

ArmState arm_reset(const ActuatorParams& params) {
    ArmState s;
    for (auto& a : s.actuators) {
        a.y.assign(params.r.size(), 0.0);
        a.p_last = 0.0;
    }
    return s;
}

std::string plant_params_kv(const PlantParams& p) {
    io::KvBlock kv;
    kv.set("plant.L0", p.actuator.L0);
    kv.set("plant.c0", p.actuator.c0);
    kv.set("plant.r", io::fmt_double_list(p.actuator.r));
    kv.set("plant.w", io::fmt_double_list(p.actuator.w));
    kv.set("plant.d", p.geometry.d);
    kv.set("plant.s0", p.geometry.s0);
    kv.set("plant.noise_sigma", p.noise_sigma);
    return kv.serialize();
}

PlantParams plant_params_from_kv(const std::string& block) {
    const io::KvBlock kv = io::KvBlock::parse_string(block);
    PlantParams p;
    p.actuator.L0 = kv.get_double("plant.L0");
    p.actuator.c0 = kv.get_double("plant.c0");
    p.actuator.r = io::parse_double_list(kv.get("plant.r"), "plant.r");
    p.actuator.w = io::parse_double_list(kv.get("plant.w"), "plant.w");
    p.geometry.d = kv.get_double("plant.d");
    p.geometry.s0 = kv.get_double("plant.s0");
    p.noise_sigma = kv.get_double("plant.noise_sigma");
    p.validate();
    return p;
}

std::string plant_fingerprint(const PlantParams& p) {
    return io::hex64(io::fnv1a64(plant_params_kv(p)));
}

Plant::Plant(PlantParams params, std::uint64_t noise_seed, bool noise_on)
    : params_(std::move(params)),
      state_(arm_reset(params_.actuator)),
      noise_rng_(rng::make_stream(noise_seed, 7)),
      noise_on_(noise_on) {
    params_.validate();
}

void Plant::reset() { state_ = arm_reset(params_.actuator); }

Vec3 Plant::step(const std::array<double, 6>& u) {
    StepResult r = arm_step(params_, state_, u, noise_on_ ? &noise_rng_ : nullptr);
    state_ = std::move(r.state);
    return r.tip;
}

}  // namespace softarm
