#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "softarm/plant.hpp"
#include "softarm/rng.hpp"

namespace softarm {

struct DataGenConfig {
    std::int64_t total_frames = 13000;
    std::int64_t frames_per_target = 10;
    double fixed_sum = 375.0;     // kPa, per-segment triple sum
    double noise_sigma_u = 5.0;   // kPa, control excitation noise
    std::uint64_t seed = 1;
    double frame_dt = 3.0;        // s, quasi-static frame interval

    void validate() const;
};

struct Frame {
    double t = 0.0;
    std::array<double, 6> u{};
    Vec3 p;
};

struct RawDataset {
    PlantParams plant;
    DataGenConfig cfg;
    std::vector<Frame> frames;

    std::int64_t n_train_frames() const;  // chronological 80% split point
};

struct NormStats {
    std::array<double, 6> u_mean{}, u_std{};
    std::array<double, 3> p_mean{}, p_std{}, p_min{}, p_max{};
    std::int64_t n_train = 0;
};

bool same_stats(const NormStats& a, const NormStats& b);

enum class NormMode { zscore, minmax };
enum class NormDir { forward, inverse };

// Size-dispatched channel sets: 6 values = pressures, 3 values = positions.
// minmax (positions only) maps [min, max] onto [0.05, 0.95].
std::vector<double> apply_norm(const NormStats& stats, const std::vector<double>& values,
                               NormMode mode, NormDir dir);

// Input layout per step of the forward model: 6 z-scored pressures followed by
// 6 scaled pressure differences (z(u_k) - z(u_{k-1})).
constexpr int kForwardInputDim = 12;
// Inverse model step: 3 goal increment, 3 history position increment,
// 6 history pressures, 3 raw position, all in z-space.
constexpr int kInverseInputDim = 15;
constexpr int kWindowLen = 3;

struct ForwardSample {
    std::int64_t t = 0;  // target frame index
    std::array<std::array<double, kForwardInputDim>, kWindowLen> steps{};
    std::array<double, 3> target_sig{};  // position at t, minmax space
    std::array<double, 3> target_mm{};
};

struct InverseSample {
    std::int64_t t = 0;
    std::array<std::array<double, kInverseInputDim>, kWindowLen> steps{};
    std::array<double, 3> target_z{};    // z-scored p*, feeds the hidden-state prior
    std::array<double, 3> target_sig{};  // minmax p*, consistency target
    std::array<double, 6> label_z{};     // z-scored u*
    std::array<double, 6> label_kpa{};
    // Forward-window context for the consistency rollout: steps t-2 and t-1
    // plus z(u_{t-1}) for rebuilding the final step's pressure difference.
    std::array<std::array<double, kForwardInputDim>, 2> fwd_hist{};
    std::array<double, 6> u_prev_z{};
};

// Uniform draw from the simplex slice {x in [0,250]^3 : sum(x) = S}.
std::array<double, 3> sample_fixed_sum_triple(rng::Engine& rng, double S);

// Per-segment fixed-sum targets every frames_per_target steps, linear
// interpolation in between, Gaussian excitation noise, clamp to [0, 250].
std::vector<std::array<double, 6>> build_control_sequence(rng::Engine& rng,
                                                          const DataGenConfig& cfg);

RawDataset generate_dataset(const PlantParams& plant, const DataGenConfig& cfg);

// Statistics over the chronological training split only (first 80% of frames).
// Throws std::invalid_argument naming any constant channel.
NormStats compute_norm_stats(const RawDataset& ds);

std::vector<ForwardSample> make_forward_windows(const RawDataset& ds, const NormStats& stats);
std::vector<InverseSample> make_inverse_windows(const RawDataset& ds, const NormStats& stats);

// Chronological partition that drops samples straddling the split boundary.
// lookback = index distance from a sample's target to the earliest frame it reads.
template <typename Sample>
struct SplitWindows {
    std::vector<Sample> train, val;
};

template <typename Sample>
SplitWindows<Sample> split_windows(const std::vector<Sample>& all, std::int64_t n_train_frames,
                                   std::int64_t lookback) {
    SplitWindows<Sample> out;
    for (const auto& s : all) {
        if (s.t < n_train_frames) {
            out.train.push_back(s);
        } else if (s.t - lookback >= n_train_frames) {
            out.val.push_back(s);
        }
    }
    return out;
}

constexpr std::int64_t kForwardLookback = 3;
constexpr std::int64_t kInverseLookback = 4;

void save_dataset(const std::string& path, const RawDataset& ds);
RawDataset load_dataset(const std::string& path);

}  // namespace softarm
