#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "softarm/rng.hpp"

namespace softarm {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

struct Mat3 {
    // Row-major.
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    static Mat3 rot_z(double a);
    Vec3 apply(const Vec3& v) const;
    Mat3 mul(const Mat3& o) const;
};

// Pressure-to-length law of one McKibben-style actuator: linear compliance
// plus a weighted superposition of play operators (Prandtl-Ishlinskii), which
// produces the rate-independent loading/unloading loop.
struct ActuatorParams {
    double L0 = 0.0;        // rest length, mm
    double c0 = 0.0;        // linear compliance, mm/kPa
    std::vector<double> r;  // play thresholds, kPa, strictly increasing in (0, 250)
    std::vector<double> w;  // play weights, mm/kPa, all >= 0

    // Throws std::invalid_argument on any violated invariant.
    void validate() const;
};

struct ActuatorState {
    std::vector<double> y;  // play-operator states, kPa; |y[j] - p_last| <= r[j]
    double p_last = 0.0;
};

struct SegmentGeometry {
    double d = 0.0;   // actuator mounting radius from backbone, mm
    double s0 = 0.0;  // fixed backbone arc length per segment, mm

    void validate() const;
};

// Actuators 0..2 drive segment 1 (base), 3..5 drive segment 2.
struct ArmState {
    std::array<ActuatorState, 6> actuators;
};

struct PlantParams {
    ActuatorParams actuator;  // shared by all six actuators
    SegmentGeometry geometry;
    double noise_sigma = 0.0;  // tip sensor noise, mm; 0 disables

    void validate() const;
};

// Workbench defaults; every dataset/checkpoint header records the values used.
PlantParams default_plant_params();

constexpr double kPressureMin = 0.0;
constexpr double kPressureMax = 250.0;

// Classical play operator: the state trails the input within the threshold band.
double play_update(double y_prev, double p, double r);

// Advances all play states and returns the actuator length at pressure p.
// Throws std::out_of_range for p outside [0, 250].
std::pair<double, ActuatorState> actuator_length(const ActuatorParams& params,
                                                 const ActuatorState& state, double p);

struct Curvature {
    double kappa = 0.0;  // 1/mm, >= 0
    double phi = 0.0;    // bend azimuth, rad; actuator i mounted at (i-1)*120 deg
};

// Three-actuator constant-curvature map. Equal lengths give kappa = 0, phi = 0.
// Throws std::domain_error on non-positive lengths or radius.
Curvature pcc_from_lengths(double l1, double l2, double l3, double d);

struct SegmentTransform {
    Mat3 R;
    Vec3 t;
};

// Rigid transform of one constant-curvature arc of length s.
// kappa below 1e-9 takes the series limit to avoid cancellation in (1-cos)/kappa.
SegmentTransform segment_transform(double kappa, double phi, double s);

struct StepResult {
    Vec3 tip;
    ArmState state;
};

// One quasi-static control frame: advance all six actuators, compose the two
// segment arcs, return the tip in the base frame. Adds Gaussian sensor noise
// to the tip when noise_rng is given and params.noise_sigma > 0.
StepResult arm_step(const PlantParams& params, const ArmState& state,
                    const std::array<double, 6>& u, rng::Engine* noise_rng = nullptr);

ArmState arm_reset(const ActuatorParams& params);

// Serialized key-value form of the plant parameters (embedded in artifact
// headers, round-trip exact) and its FNV-1a fingerprint used for
// dataset/checkpoint compatibility checks.
std::string plant_params_kv(const PlantParams& p);
PlantParams plant_params_from_kv(const std::string& block);
std::string plant_fingerprint(const PlantParams& p);

// Stateful convenience wrapper owning an ArmState and a noise stream.
class Plant {
public:
    explicit Plant(PlantParams params, std::uint64_t noise_seed = 0, bool noise_on = false);

    void reset();
    Vec3 step(const std::array<double, 6>& u);
    const PlantParams& params() const { return params_; }
    const ArmState& state() const { return state_; }
    bool noise_on() const { return noise_on_; }

private:
    PlantParams params_;
    ArmState state_;
    rng::Engine noise_rng_;
    bool noise_on_ = false;
};

}  // namespace softarm
