#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "softarm/models.hpp"
#include "softarm/plant.hpp"

namespace softarm {

enum class TrajKind { circle, ushape, figure8, star };

std::string traj_label(TrajKind k);
TrajKind traj_from_label(const std::string& name);

struct TrajectorySpec {
    TrajKind kind = TrajKind::circle;
    int n_waypoints = 60;
    double scale = 0.6;                // fraction of the smaller x/y workspace extent
    std::optional<double> plane_z;     // defaults to the dataset's median z

    void validate() const;
};

struct WorkspaceBox {
    Vec3 lo, hi;

    static WorkspaceBox from_dataset(const RawDataset& ds);
    double diagonal() const;
    bool contains(const Vec3& p) const;
};

double median_z(const RawDataset& ds);

// Closed planar shapes (the U is open) sampled into the unit square [-1,1]^2.
std::vector<std::array<double, 2>> gen_planar_trajectory(const TrajectorySpec& spec);

// Isotropic affine placement onto the horizontal plane: centered in the box's
// x-y extent, sized by scale times the smaller extent.
std::vector<Vec3> map_to_workspace(const std::vector<std::array<double, 2>>& points,
                                   const WorkspaceBox& box, const TrajectorySpec& spec,
                                   double plane_z);

struct TrackingRow {
    Vec3 target, achieved;
    double err = 0.0;
};

struct TrackingReport {
    std::vector<TrackingRow> rows;
    double mean = 0.0, stddev = 0.0, max = 0.0;  // population statistics, mm
    std::string variant;
    std::uint64_t seed = 0;
    TrajKind kind = TrajKind::circle;
};

struct TrackMetrics {
    double mean = 0.0, stddev = 0.0, max = 0.0;
};

TrackMetrics report_metrics(const TrackingReport& report);

// Drives the plant through the waypoint list: one inverse query per waypoint,
// clamped pressures applied for settle_frames quasi-static steps, achieved tip
// recorded after settling. The controller sees only past plant outputs and the
// current goal increment.
TrackingReport track(Plant& plant, const Checkpoint& inv_ckpt, const std::vector<Vec3>& waypoints,
                     int settle_frames = 1);

// CSV: `idx,tx,ty,tz,ax,ay,az,err` body with a key-value header (plant params,
// trajectory, checkpoint provenance) and a summary footer.
void save_report(const std::string& path, const TrackingReport& report,
                 const PlantParams& plant, const TrajectorySpec& spec);
TrackingReport load_report(const std::string& path);

// Fig-4 style overlay: red = original planar path (inset), green = mapped
// targets, blue = achieved trajectory.
std::string render_tracking_svg(const TrackingReport& report,
                                const std::vector<std::array<double, 2>>& planar);

}  // namespace softarm
