#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "softarm/datagen.hpp"
#include "softarm/nn.hpp"

namespace softarm {

// The three loss formulations of the ablation: supervised inverse regression,
// supervised + consistency, consistency only. The forward model is always
// trained separately on its own MSE.
enum class Variant { fi, fic, fc };

std::string variant_label(Variant v);                 // "f+i", "f+i+c", "f+c"
Variant variant_from_label(const std::string& name);  // accepts "i"/"ic"/"c" and full labels

struct TrainConfig {
    Variant variant = Variant::fic;
    double lambda = 1.0;  // consistency weight
    int batch_size = 32;
    int epochs_forward = 40;
    int epochs_inverse = 60;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    int rollout_depth = 1;

    void validate() const;
};

constexpr int kHidden = 32;
constexpr int kFcHidden = 16;

// history of pressures and their differences -> next position (sigmoid space).
struct ForwardModel {
    nn::LstmStack lstm;  // 12 -> 32, two layers
    nn::Fc fc1;          // 32 -> 16, relu
    nn::Fc head;         // 16 -> 3, sigmoid
    NormStats stats;
    bool trained = false;

    static ForwardModel make(const NormStats& stats);  // zero-initialized
    std::vector<nn::Param*> params();
};

// Hidden-state prior of the inverse model: (h0, c0) = tanh(W * target_xyz + b).
struct InitMap {
    nn::Param Wh, bh, Wc, bc;
};

// goal increment + state history -> driving pressures in z-space. The linear
// head is squashed onto the z-image of the [0, 250] kPa band (mid + half *
// tanh((y - mid)/half) per channel), so emitted commands are always physically
// executable and the deployment clamp is a no-op; near mid-range the map is
// identity to first order.
struct InverseModel {
    nn::LstmStack lstm;  // 15 -> 32, two layers
    nn::Fc fc1;          // 32 -> 16, relu
    nn::Fc head;         // 16 -> 6, identity, then the fixed range squash
    std::array<InitMap, 2> init;  // one per LSTM layer
    std::array<double, 6> head_mid{}, head_half{};
    NormStats stats;

    static InverseModel make(const NormStats& stats);
    std::vector<nn::Param*> params();
};

void randomize_forward(ForwardModel& fm, std::uint64_t seed);
void randomize_inverse(InverseModel& im, std::uint64_t seed);

// Reusable per-model scratch; owning one per training stream keeps everything
// allocation-free after warmup.
struct ForwardPass {
    nn::StackState st;
    nn::StackCache cache;
    nn::FcCache fc1c, headc;
    std::array<double, 3> pred{};
    std::vector<std::vector<double>> d_top;
    nn::StackGrads grads;
};

struct InversePass {
    nn::StackState st;
    nn::StackCache cache;
    nn::FcCache fc1c, headc;
    std::array<double, 3> tz{};
    std::array<std::vector<double>, 2> h0_out, c0_out;
    std::array<double, 6> u_hat{};
    std::array<double, 6> squash_d{};  // d u_hat / d head output
    std::vector<std::vector<double>> d_top;
    nn::StackGrads grads;
};

using ForwardWindow = std::array<std::array<double, kForwardInputDim>, kWindowLen>;

std::array<double, 3> forward_predict(const ForwardModel& fm, const ForwardWindow& window,
                                      ForwardPass& ws);
// d_pred in sigmoid space; input gradients land in ws.grads.d_inputs when requested.
void forward_backward(ForwardModel& fm, ForwardPass& ws, const std::array<double, 3>& d_pred,
                      bool accum_params, bool want_d_inputs);

Vec3 denorm_position(const NormStats& stats, const std::array<double, 3>& sig);

std::array<std::vector<double>, 2> inverse_init_state(const InverseModel& im,
                                                      const std::array<double, 3>& target_z);

std::array<double, 6> inverse_predict(const InverseModel& im,
                                      const std::array<std::array<double, kInverseInputDim>,
                                                       kWindowLen>& steps,
                                      const std::array<double, 3>& target_z, InversePass& ws);
void inverse_backward(InverseModel& im, InversePass& ws, const std::array<double, 6>& d_u_hat);

// Denormalized deployment form, clamped to the actuator range.
std::array<double, 6> pressures_from_z(const NormStats& stats, const std::array<double, 6>& u_z);

// Forward window rebuilt around the inverse output; flags record which blocks
// of each row depend on u_hat so the backward pass can route gradients.
struct RolloutPass {
    ForwardWindow window{};
    std::array<bool, kWindowLen> u_is_uhat{};
    std::array<bool, kWindowLen> du_is_uhat{};
    ForwardPass fwd;
};

// Evaluates F on the window whose final control step(s) carry u_hat; depth > 1
// slides the window further into the commanded future. Throws
// std::invalid_argument for depth < 1, DependencyError if fm is untrained.
std::array<double, 3> consistency_rollout(const ForwardModel& fm, const InverseSample& sample,
                                          const std::array<double, 6>& u_hat_z, int depth,
                                          RolloutPass& ws);
// Accumulates into d_u_hat; fm parameters receive no gradient.
void consistency_rollout_backward(ForwardModel& fm, RolloutPass& ws,
                                  const std::array<double, 3>& d_p_roll,
                                  std::array<double, 6>& d_u_hat);

struct ModelWorkspace {
    InversePass inv;
    RolloutPass roll;
};

struct InverseLoss {
    double inv = 0.0;   // mean ||u_hat - u*||^2
    double cons = 0.0;  // mean ||p_roll - p*||^2
    double total = 0.0;
};

// Batch-mean loss of the chosen formulation; gradients (scaled by 1/batch)
// accumulate into the inverse parameters only when with_grads is set.
InverseLoss compute_loss(Variant v, const std::vector<const InverseSample*>& batch,
                         ForwardModel& fm, InverseModel& im, double lambda, int depth,
                         bool with_grads, ModelWorkspace& ws);

double compute_forward_loss(const std::vector<const ForwardSample*>& batch, ForwardModel& fm,
                            bool with_grads, ForwardPass& ws);

// ---------------------------------------------------------------------------

struct Checkpoint {
    std::string model_kind;  // "forward" | "inverse"
    TrainConfig cfg;
    NormStats stats;
    std::string plant_fp;
    std::vector<nn::Param> blocks;
};

Checkpoint checkpoint_of_forward(const ForwardModel& fm, const TrainConfig& cfg,
                                 const std::string& plant_fp);
Checkpoint checkpoint_of_inverse(const InverseModel& im, const TrainConfig& cfg,
                                 const std::string& plant_fp);
ForwardModel forward_from_checkpoint(const Checkpoint& ckpt);
InverseModel inverse_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct ForwardEpoch {
    int epoch = 0;
    double train_mse = 0.0, val_mse = 0.0;
};

struct InverseEpoch {
    int epoch = 0;
    double train_inv = 0.0, train_cons = 0.0, train_total = 0.0;
    double val_inv = 0.0, val_cons = 0.0, val_objective = 0.0;
};

struct ForwardTrainResult {
    Checkpoint checkpoint;
    std::vector<ForwardEpoch> log;
    int best_epoch = 0;
    double best_val = 0.0;
};

struct InverseTrainResult {
    Checkpoint checkpoint;
    std::vector<InverseEpoch> log;
    int best_epoch = 0;
    double best_val = 0.0;
};

ForwardTrainResult train_forward(const RawDataset& ds, TrainConfig cfg);
InverseTrainResult train_inverse(const RawDataset& ds, const Checkpoint& fwd_ckpt,
                                 TrainConfig cfg);

enum class Split { train, val };

struct EvalReport {
    std::array<double, 3> rmse_axis{};
    double rmse_total = 0.0;
    std::int64_t n = 0;
};

EvalReport evaluate_forward(const Checkpoint& ckpt, const RawDataset& ds, Split split);

}  // namespace softarm
