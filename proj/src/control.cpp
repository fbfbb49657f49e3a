#include "softarm/control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "softarm/artifact_io.hpp"
#include "softarm/errors.hpp"

namespace softarm {

std::string traj_label(TrajKind k) {
    switch (k) {
        case TrajKind::circle: return "circle";
        case TrajKind::ushape: return "ushape";
        case TrajKind::figure8: return "figure8";
        case TrajKind::star: return "star";
    }
    return "?";
}

TrajKind traj_from_label(const std::string& name) {
    if (name == "circle") return TrajKind::circle;
    if (name == "ushape") return TrajKind::ushape;
    if (name == "figure8") return TrajKind::figure8;
    if (name == "star") return TrajKind::star;
    throw std::invalid_argument("unknown trajectory '" + name +
                                "' (expected circle, ushape, figure8 or star)");
}

void TrajectorySpec::validate() const {
    if (n_waypoints < 4) throw std::invalid_argument("need at least 4 waypoints");
    if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("scale must be in (0, 1]");
}

WorkspaceBox WorkspaceBox::from_dataset(const RawDataset& ds) {
    if (ds.frames.empty()) throw std::invalid_argument("empty dataset");
    WorkspaceBox box;
    box.lo = box.hi = ds.frames[0].p;
    for (const Frame& f : ds.frames) {
        box.lo.x = std::min(box.lo.x, f.p.x);
        box.lo.y = std::min(box.lo.y, f.p.y);
        box.lo.z = std::min(box.lo.z, f.p.z);
        box.hi.x = std::max(box.hi.x, f.p.x);
        box.hi.y = std::max(box.hi.y, f.p.y);
        box.hi.z = std::max(box.hi.z, f.p.z);
    }
    return box;
}

double WorkspaceBox::diagonal() const { return (hi - lo).norm(); }

bool WorkspaceBox::contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
}

double median_z(const RawDataset& ds) {
    std::vector<double> zs;
    zs.reserve(ds.frames.size());
    for (const Frame& f : ds.frames) zs.push_back(f.p.z);
    std::sort(zs.begin(), zs.end());
    const std::size_t n = zs.size();
    return n % 2 == 1 ? zs[n / 2] : 0.5 * (zs[n / 2 - 1] + zs[n / 2]);
}

namespace {

// Arclength-uniform resampling of a polyline; a closed loop omits the
// duplicate endpoint.
std::vector<std::array<double, 2>> sample_polyline(const std::vector<std::array<double, 2>>& verts,
                                                   int n, bool closed) {
    std::vector<double> cum{0.0};
    const std::size_t m = verts.size();
    const std::size_t segs = closed ? m : m - 1;
    for (std::size_t i = 0; i < segs; ++i) {
        const auto& a = verts[i];
        const auto& b = verts[(i + 1) % m];
        cum.push_back(cum.back() + std::hypot(b[0] - a[0], b[1] - a[1]));
    }
    const double total = cum.back();
    std::vector<std::array<double, 2>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double s = closed ? total * k / n : total * k / (n - 1);
        auto it = std::upper_bound(cum.begin(), cum.end(), s);
        std::size_t seg = it == cum.begin() ? 0 : static_cast<std::size_t>(it - cum.begin() - 1);
        seg = std::min(seg, segs - 1);
        const double frac = (s - cum[seg]) / std::max(cum[seg + 1] - cum[seg], 1e-300);
        const auto& a = verts[seg];
        const auto& b = verts[(seg + 1) % m];
        out.push_back({a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])});
    }
    return out;
}

}  // namespace

std::vector<std::array<double, 2>> gen_planar_trajectory(const TrajectorySpec& spec) {
    spec.validate();
    const int n = spec.n_waypoints;
    std::vector<std::array<double, 2>> out;
    out.reserve(static_cast<std::size_t>(n));
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    switch (spec.kind) {
        case TrajKind::circle:
            for (int k = 0; k < n; ++k) {
                const double t = kTwoPi * k / n;
                out.push_back({std::cos(t), std::sin(t)});
            }
            return out;
        case TrajKind::ushape:
            // Three sides of the square, traversed once, opening upward.
            return sample_polyline({{-1, 1}, {-1, -1}, {1, -1}, {1, 1}}, n, false);
        case TrajKind::figure8:
            // Gerono lemniscate with the y axis rescaled to fill the square.
            for (int k = 0; k < n; ++k) {
                const double t = kTwoPi * k / n;
                out.push_back({std::sin(t), 2.0 * std::sin(t) * std::cos(t)});
            }
            return out;
        case TrajKind::star: {
            // Five-point star: alternate outer/inner vertices of the pentagram.
            const double r_in = std::cos(kTwoPi / 5.0) / std::cos(kTwoPi / 10.0);
            std::vector<std::array<double, 2>> verts;
            for (int k = 0; k < 5; ++k) {
                const double ao = kTwoPi / 4.0 + kTwoPi * k / 5.0;
                const double ai = ao + kTwoPi / 10.0;
                verts.push_back({std::cos(ao), std::sin(ao)});
                verts.push_back({r_in * std::cos(ai), r_in * std::sin(ai)});
            }
            return sample_polyline(verts, n, true);
        }
    }
    throw std::invalid_argument("unknown trajectory kind");
}

std::vector<Vec3> map_to_workspace(const std::vector<std::array<double, 2>>& points,
                                   const WorkspaceBox& box, const TrajectorySpec& spec,
                                   double plane_z) {
    const double ex = box.hi.x - box.lo.x;
    const double ey = box.hi.y - box.lo.y;
    if (!(ex > 0.0 && ey > 0.0)) throw std::invalid_argument("degenerate workspace box");
    const double cx = 0.5 * (box.lo.x + box.hi.x);
    const double cy = 0.5 * (box.lo.y + box.hi.y);
    const double half = 0.5 * spec.scale * std::min(ex, ey);
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back({cx + half * p[0], cy + half * p[1], plane_z});
    return out;
}

TrackMetrics report_metrics(const TrackingReport& report) {
    if (report.rows.empty()) throw std::invalid_argument("empty tracking report");
    TrackMetrics m;
    double sum = 0.0;
    for (const auto& r : report.rows) {
        sum += r.err;
        m.max = std::max(m.max, r.err);
    }
    m.mean = sum / static_cast<double>(report.rows.size());
    double ss = 0.0;
    for (const auto& r : report.rows) ss += (r.err - m.mean) * (r.err - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(report.rows.size()));
    return m;
}

TrackingReport track(Plant& plant, const Checkpoint& inv_ckpt, const std::vector<Vec3>& waypoints,
                     int settle_frames) {
    if (inv_ckpt.model_kind != "inverse") {
        throw CompatibilityError("tracking requires an inverse checkpoint");
    }
    const std::string fp = plant_fingerprint(plant.params());
    if (fp != inv_ckpt.plant_fp) {
        throw CompatibilityError("plant fingerprint mismatch: checkpoint " + inv_ckpt.plant_fp +
                                 " vs plant " + fp);
    }
    if (settle_frames < 1) throw std::invalid_argument("settle_frames must be >= 1");
    if (waypoints.empty()) throw std::invalid_argument("empty waypoint list");

    InverseModel im = inverse_from_checkpoint(inv_ckpt);
    const NormStats& st = inv_ckpt.stats;

    plant.reset();
    // Prime the history with quiescent frames so the first window is complete.
    std::vector<std::array<double, 6>> hist_u;
    std::vector<Vec3> hist_p;
    for (int i = 0; i < kWindowLen + 1; ++i) {
        const std::array<double, 6> zero{};
        hist_p.push_back(plant.step(zero));
        hist_u.push_back(zero);
    }

    InversePass ws;
    TrackingReport report;
    report.variant = variant_label(inv_ckpt.cfg.variant);
    report.seed = inv_ckpt.cfg.seed;
    report.rows.reserve(waypoints.size());

    for (std::size_t wi = 0; wi < waypoints.size(); ++wi) {
        const Vec3& target = waypoints[wi];
        const std::size_t m = hist_p.size() - 1;  // latest executed step
        const Vec3 g = target - hist_p[m];

        std::array<std::array<double, kInverseInputDim>, kWindowLen> steps{};
        for (int k = 0; k < kWindowLen; ++k) {
            const std::size_t idx = m - 2 + static_cast<std::size_t>(k);
            auto& row = steps[static_cast<std::size_t>(k)];
            const Vec3 dp = hist_p[idx] - hist_p[idx - 1];
            for (int c = 0; c < 3; ++c) {
                row[static_cast<std::size_t>(c)] = g[c] / st.p_std[static_cast<std::size_t>(c)];
                row[static_cast<std::size_t>(3 + c)] = dp[c] / st.p_std[static_cast<std::size_t>(c)];
                row[static_cast<std::size_t>(12 + c)] =
                    (hist_p[idx][c] - st.p_mean[static_cast<std::size_t>(c)]) /
                    st.p_std[static_cast<std::size_t>(c)];
            }
            for (int c = 0; c < 6; ++c) {
                row[static_cast<std::size_t>(6 + c)] =
                    (hist_u[idx][static_cast<std::size_t>(c)] - st.u_mean[static_cast<std::size_t>(c)]) /
                    st.u_std[static_cast<std::size_t>(c)];
            }
        }
        const std::array<double, 3> target_z = {
            (target.x - st.p_mean[0]) / st.p_std[0],
            (target.y - st.p_mean[1]) / st.p_std[1],
            (target.z - st.p_mean[2]) / st.p_std[2],
        };

        const auto u_z = inverse_predict(im, steps, target_z, ws);
        for (double v : u_z) {
            if (!std::isfinite(v)) {
                throw NumericError("non-finite inverse prediction at waypoint " + std::to_string(wi));
            }
        }
        const auto u_kpa = pressures_from_z(st, u_z);

        Vec3 achieved;
        for (int s = 0; s < settle_frames; ++s) {
            achieved = plant.step(u_kpa);
            hist_u.push_back(u_kpa);
            hist_p.push_back(achieved);
        }
        TrackingRow row;
        row.target = target;
        row.achieved = achieved;
        row.err = (target - achieved).norm();
        report.rows.push_back(row);
    }

    const TrackMetrics metrics = report_metrics(report);
    report.mean = metrics.mean;
    report.stddev = metrics.stddev;
    report.max = metrics.max;
    return report;
}

void save_report(const std::string& path, const TrackingReport& report,
                 const PlantParams& plant, const TrajectorySpec& spec) {
    io::KvBlock kv;
    kv.set("format", std::string(io::kFormatTag));
    kv.set("kind", std::string("report"));
    kv.set("traj.kind", traj_label(report.kind));
    kv.set("traj.n_waypoints", static_cast<std::int64_t>(spec.n_waypoints));
    kv.set("traj.scale", spec.scale);
    if (spec.plane_z) kv.set("traj.plane_z", *spec.plane_z);
    kv.set("variant", report.variant);
    kv.set("seed", report.seed);
    const io::KvBlock plant_kv = io::KvBlock::parse_string(plant_params_kv(plant));
    for (const auto& [k, v] : plant_kv.entries()) kv.set(k, v);

    std::string out = kv.serialize();
    out += "data:\n";
    out += "idx,tx,ty,tz,ax,ay,az,err\n";
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& r = report.rows[i];
        out += io::fmt(static_cast<std::int64_t>(i));
        for (double v : {r.target.x, r.target.y, r.target.z, r.achieved.x, r.achieved.y,
                         r.achieved.z, r.err}) {
            out += ',';
            out += io::fmt(v);
        }
        out += '\n';
    }
    out += "summary:\n";
    out += "mean = " + io::fmt(report.mean) + "\n";
    out += "std = " + io::fmt(report.stddev) + "\n";
    out += "max = " + io::fmt(report.max) + "\n";
    io::write_file(path, out);
}

TrackingReport load_report(const std::string& path) {
    std::istringstream in(io::read_file(path));
    io::LineReader reader(in, path);

    io::KvBlock header;
    std::string line;
    bool saw_data = false;
    while (reader.next(line)) {
        const std::string t = io::trim(line);
        if (t.empty()) continue;
        if (t == "data:") {
            saw_data = true;
            break;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) reader.fail("expected 'key = value' or 'data:', got '" + t + "'");
        header.set(io::trim(t.substr(0, eq)), io::trim(t.substr(eq + 1)));
    }
    if (!saw_data) throw ParseError(path, reader.line_no(), "missing 'data:' section");
    io::check_format(header, path);
    if (header.get("kind") != "report") {
        throw ParseError(path, 2, "expected kind = report, got '" + header.get("kind") + "'");
    }

    TrackingReport report;
    report.kind = traj_from_label(header.get("traj.kind"));
    report.variant = header.get("variant");
    report.seed = static_cast<std::uint64_t>(header.get_int("seed"));

    if (!reader.next(line)) reader.fail("missing CSV column header");
    if (io::trim(line) != "idx,tx,ty,tz,ax,ay,az,err") reader.fail("unexpected CSV columns");

    bool in_summary = false;
    io::KvBlock summary;
    while (reader.next(line)) {
        const std::string t = io::trim(line);
        if (t.empty()) continue;
        if (t == "summary:") {
            in_summary = true;
            continue;
        }
        if (in_summary) {
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos) reader.fail("expected summary 'key = value'");
            summary.set(io::trim(t.substr(0, eq)), io::trim(t.substr(eq + 1)));
            continue;
        }
        const auto fields = io::split(t, ',');
        if (fields.size() != 8) reader.fail("expected 8 fields, got " + std::to_string(fields.size()));
        TrackingRow row;
        try {
            row.target = {io::parse_double(fields[1], "tx"), io::parse_double(fields[2], "ty"),
                          io::parse_double(fields[3], "tz")};
            row.achieved = {io::parse_double(fields[4], "ax"), io::parse_double(fields[5], "ay"),
                            io::parse_double(fields[6], "az")};
            row.err = io::parse_double(fields[7], "err");
        } catch (const std::invalid_argument& e) {
            reader.fail(e.what());
        }
        report.rows.push_back(row);
    }
    if (!in_summary) throw ParseError(path, reader.line_no(), "missing 'summary:' footer (truncated file?)");
    report.mean = summary.get_double("mean");
    report.stddev = summary.get_double("std");
    report.max = summary.get_double("max");
    return report;
}

namespace {

std::string polyline_svg(const std::vector<std::array<double, 2>>& pts, const std::string& color,
                         double width) {
    std::string out = "  <polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" +
                      io::fmt(width) + "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i) out += ' ';
        out += io::fmt(pts[i][0]) + "," + io::fmt(pts[i][1]);
    }
    out += "\"/>\n";
    return out;
}

}  // namespace

std::string render_tracking_svg(const TrackingReport& report,
                                const std::vector<std::array<double, 2>>& planar) {
    const double W = 640, H = 640, margin = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& r : report.rows) {
        for (const Vec3* p : {&r.target, &r.achieved}) {
            xmin = std::min(xmin, p->x);
            xmax = std::max(xmax, p->x);
            ymin = std::min(ymin, p->y);
            ymax = std::max(ymax, p->y);
        }
    }
    const double span = std::max({xmax - xmin, ymax - ymin, 1e-9});
    const double sc = (W - 2 * margin) / span;
    auto to_svg = [&](const Vec3& p) -> std::array<double, 2> {
        return {margin + (p.x - xmin) * sc, H - margin - (p.y - ymin) * sc};
    };

    std::vector<std::array<double, 2>> green, blue;
    for (const auto& r : report.rows) {
        green.push_back(to_svg(r.target));
        blue.push_back(to_svg(r.achieved));
    }

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + io::fmt(W) +
                      "\" height=\"" + io::fmt(H) + "\" viewBox=\"0 0 " + io::fmt(W) + " " +
                      io::fmt(H) + "\">\n";
    svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += polyline_svg(green, "#2ca02c", 1.5);
    svg += polyline_svg(blue, "#1f77b4", 1.5);

    // Original planar path as a small red inset, mirroring the three-curve convention.
    if (!planar.empty()) {
        const double inset = 110, ix = W - inset - 15, iy = 15;
        std::vector<std::array<double, 2>> red;
        for (const auto& p : planar) {
            red.push_back({ix + (p[0] + 1) * 0.5 * inset, iy + (1 - (p[1] + 1) * 0.5) * inset});
        }
        svg += "  <rect x=\"" + io::fmt(ix) + "\" y=\"" + io::fmt(iy) + "\" width=\"" +
               io::fmt(inset) + "\" height=\"" + io::fmt(inset) +
               "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
        svg += polyline_svg(red, "#d62728", 1.0);
    }

    std::ostringstream legend;
    legend << "  <text x=\"20\" y=\"28\" font-family=\"monospace\" font-size=\"14\">" << traj_label(report.kind)
           << "  " << report.variant << "  mean " << io::fmt(report.mean) << " mm, max "
           << io::fmt(report.max) << " mm</text>\n"
           << "  <text x=\"20\" y=\"46\" font-family=\"monospace\" font-size=\"12\" fill=\"#2ca02c\">mapped targets</text>\n"
           << "  <text x=\"160\" y=\"46\" font-family=\"monospace\" font-size=\"12\" fill=\"#1f77b4\">achieved</text>\n"
           << "  <text x=\"260\" y=\"46\" font-family=\"monospace\" font-size=\"12\" fill=\"#d62728\">planar path (inset)</text>\n";
    svg += legend.str();
    svg += "</svg>\n";
    return svg;
}

}  // namespace softarm
