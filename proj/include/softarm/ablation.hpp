#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "softarm/control.hpp"
#include "softarm/models.hpp"

namespace softarm {

struct AblationCell {
    Variant variant = Variant::fi;
    std::uint64_t seed = 0;
    // Waypoint errors pooled over the four trajectories.
    double mean_err = 0.0, std_err = 0.0, max_err = 0.0;
    std::vector<double> per_traj_mean;  // circle, ushape, figure8, star
};

struct VariantSummary {
    Variant variant = Variant::fi;
    double median_mean = 0.0, median_std = 0.0, median_max = 0.0;
};

struct AblationTable {
    std::vector<AblationCell> cells;      // variant-major, seed-minor
    std::vector<VariantSummary> summary;  // one row per variant
    std::vector<std::uint64_t> seeds;
};

// Table-I reference values (hardware measurements; emitted for context, never
// asserted against).
struct PaperReferenceRow {
    const char* variant;
    double mean_mm, max_mm, std_mm;
};
inline constexpr PaperReferenceRow kPaperTable[] = {
    {"f+i", 43.94, 86.50, 23.52},
    {"f+i+c", 36.03, 77.47, 14.42},
    {"f+c", 30.47, 62.25, 17.74},
};

// Trains the three loss variants for every seed against the fixed forward
// checkpoint, tracks the four trajectories per cell, and writes the per-cell
// reports, per-cell checkpoints and the aggregated CSV under out_dir. Cells
// run concurrently up to `threads` (deterministic regardless of scheduling).
// Throws PartialAblationError listing completed cells if any cell fails.
AblationTable run_ablation(const RawDataset& ds, const Checkpoint& fwd_ckpt,
                           const TrainConfig& base_cfg, const std::vector<std::uint64_t>& seeds,
                           const TrajectorySpec& traj_base, const std::string& out_dir,
                           int threads);

void save_ablation_csv(const std::string& path, const AblationTable& table);
AblationTable load_ablation_csv(const std::string& path);

// Ordering criterion, recomputed from an emitted CSV so the check is auditable:
// median(f+c) < median(f+i+c) < median(f+i) over per-seed mean errors.
bool ablation_ordering_pass(const std::string& csv_path);

// Median improvement of f+c over f+i, from the emitted CSV.
double ablation_fc_improvement(const std::string& csv_path);

std::string format_ablation_text(const AblationTable& table, bool ordering_pass);

}  // namespace softarm
