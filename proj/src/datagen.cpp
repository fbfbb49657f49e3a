#include "softarm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "softarm/artifact_io.hpp"
#include "softarm/errors.hpp"

namespace softarm {

void DataGenConfig::validate() const {
    if (total_frames <= 0) throw std::invalid_argument("total_frames must be > 0");
    if (frames_per_target <= 0) throw std::invalid_argument("frames_per_target must be > 0");
    if (!(fixed_sum > 0.0 && fixed_sum <= 3.0 * kPressureMax)) {
        throw std::invalid_argument("fixed_sum must be in (0, 750]");
    }
    if (!(noise_sigma_u >= 0.0)) throw std::invalid_argument("noise_sigma_u must be >= 0");
    if (!(frame_dt > 0.0)) throw std::invalid_argument("frame_dt must be > 0");
}

std::int64_t RawDataset::n_train_frames() const {
    return static_cast<std::int64_t>(frames.size()) * 8 / 10;
}

std::array<double, 3> sample_fixed_sum_triple(rng::Engine& rng, double S) {
    if (!(S > 0.0 && S <= 3.0 * kPressureMax)) throw std::invalid_argument("fixed sum outside (0, 750]");
    // For S > 375 sample the reflected problem sum' = 750 - S and map back via
    // x -> 250 - x; keeps the rejection acceptance rate >= 2/3 everywhere.
    const bool reflect = S > 1.5 * kPressureMax;
    const double s = reflect ? 3.0 * kPressureMax - S : S;
    std::array<double, 3> y{};
    if (s > 0.0) {
        while (true) {
            double a = rng::u01(rng), b = rng::u01(rng);
            if (a > b) std::swap(a, b);
            y = {s * a, s * (b - a), s * (1.0 - b)};
            if (y[0] <= kPressureMax && y[1] <= kPressureMax && y[2] <= kPressureMax) break;
        }
    }
    // Force the sum exact; the third component absorbs rounding.
    y[2] = s - y[0] - y[1];
    if (reflect) {
        for (double& v : y) v = kPressureMax - v;
    }
    return y;
}

std::vector<std::array<double, 6>> build_control_sequence(rng::Engine& rng,
                                                          const DataGenConfig& cfg) {
    cfg.validate();
    const std::int64_t n = cfg.total_frames;
    const std::int64_t fpt = cfg.frames_per_target;
    const std::int64_t n_targets = (n - 1) / fpt + 2;

    std::vector<std::array<double, 6>> targets(static_cast<std::size_t>(n_targets));
    for (auto& tgt : targets) {
        const auto a = sample_fixed_sum_triple(rng, cfg.fixed_sum);
        const auto b = sample_fixed_sum_triple(rng, cfg.fixed_sum);
        tgt = {a[0], a[1], a[2], b[0], b[1], b[2]};
    }

    std::vector<std::array<double, 6>> seq(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t j = i / fpt;
        const double frac = static_cast<double>(i - j * fpt) / static_cast<double>(fpt);
        const auto& t0 = targets[static_cast<std::size_t>(j)];
        const auto& t1 = targets[static_cast<std::size_t>(j + 1)];
        auto& u = seq[static_cast<std::size_t>(i)];
        for (int k = 0; k < 6; ++k) {
            double v = t0[static_cast<std::size_t>(k)] +
                       frac * (t1[static_cast<std::size_t>(k)] - t0[static_cast<std::size_t>(k)]);
            if (cfg.noise_sigma_u > 0.0) v += rng::gaussian(rng, 0.0, cfg.noise_sigma_u);
            u[static_cast<std::size_t>(k)] = std::clamp(v, kPressureMin, kPressureMax);
        }
    }
    return seq;
}

RawDataset generate_dataset(const PlantParams& plant, const DataGenConfig& cfg) {
    plant.validate();
    cfg.validate();
    RawDataset ds;
    ds.plant = plant;
    ds.cfg = cfg;

    rng::Engine control_rng = rng::make_stream(cfg.seed, 1);
    const auto controls = build_control_sequence(control_rng, cfg);

    Plant arm(plant, cfg.seed, plant.noise_sigma > 0.0);
    ds.frames.resize(static_cast<std::size_t>(cfg.total_frames));
    for (std::int64_t i = 0; i < cfg.total_frames; ++i) {
        Frame& f = ds.frames[static_cast<std::size_t>(i)];
        f.t = static_cast<double>(i) * cfg.frame_dt;
        f.u = controls[static_cast<std::size_t>(i)];
        f.p = arm.step(f.u);
    }
    return ds;
}

namespace {

struct ChannelAcc {
    double mean = 0.0, std_ = 0.0, min = 0.0, max = 0.0;
};

ChannelAcc channel_stats(const RawDataset& ds, std::int64_t n, const std::string& name,
                         double (*pick)(const Frame&)) {
    ChannelAcc acc;
    acc.min = acc.max = pick(ds.frames[0]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = pick(ds.frames[static_cast<std::size_t>(i)]);
        sum += v;
        acc.min = std::min(acc.min, v);
        acc.max = std::max(acc.max, v);
    }
    acc.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = pick(ds.frames[static_cast<std::size_t>(i)]) - acc.mean;
        ss += d * d;
    }
    acc.std_ = std::sqrt(ss / static_cast<double>(n));
    if (acc.min == acc.max) {
        throw std::invalid_argument("degenerate channel '" + name + "': constant over the training split");
    }
    return acc;
}

// One pick function per channel keeps the stats loop branch-free.
template <int I>
double pick_u(const Frame& f) { return f.u[I]; }
double pick_x(const Frame& f) { return f.p.x; }
double pick_y(const Frame& f) { return f.p.y; }
double pick_z(const Frame& f) { return f.p.z; }

}  // namespace

NormStats compute_norm_stats(const RawDataset& ds) {
    const std::int64_t n = ds.n_train_frames();
    if (n < 2) throw std::invalid_argument("need at least 2 training frames for statistics");

    NormStats st;
    st.n_train = n;
    double (*u_picks[6])(const Frame&) = {pick_u<0>, pick_u<1>, pick_u<2>,
                                          pick_u<3>, pick_u<4>, pick_u<5>};
    static const char* u_names[6] = {"u1", "u2", "u3", "u4", "u5", "u6"};
    for (int c = 0; c < 6; ++c) {
        const auto acc = channel_stats(ds, n, u_names[c], u_picks[c]);
        st.u_mean[static_cast<std::size_t>(c)] = acc.mean;
        st.u_std[static_cast<std::size_t>(c)] = acc.std_;
    }
    double (*p_picks[3])(const Frame&) = {pick_x, pick_y, pick_z};
    static const char* p_names[3] = {"x", "y", "z"};
    for (int c = 0; c < 3; ++c) {
        const auto acc = channel_stats(ds, n, p_names[c], p_picks[c]);
        st.p_mean[static_cast<std::size_t>(c)] = acc.mean;
        st.p_std[static_cast<std::size_t>(c)] = acc.std_;
        st.p_min[static_cast<std::size_t>(c)] = acc.min;
        st.p_max[static_cast<std::size_t>(c)] = acc.max;
    }
    return st;
}

bool same_stats(const NormStats& a, const NormStats& b) {
    return a.u_mean == b.u_mean && a.u_std == b.u_std && a.p_mean == b.p_mean &&
           a.p_std == b.p_std && a.p_min == b.p_min && a.p_max == b.p_max &&
           a.n_train == b.n_train;
}

std::vector<double> apply_norm(const NormStats& stats, const std::vector<double>& values,
                               NormMode mode, NormDir dir) {
    std::vector<double> out(values.size());
    if (values.size() == 6) {
        if (mode != NormMode::zscore) {
            throw std::invalid_argument("minmax normalization is defined for position channels only");
        }
        for (std::size_t c = 0; c < 6; ++c) {
            out[c] = dir == NormDir::forward
                         ? (values[c] - stats.u_mean[c]) / stats.u_std[c]
                         : values[c] * stats.u_std[c] + stats.u_mean[c];
        }
        return out;
    }
    if (values.size() == 3) {
        for (std::size_t c = 0; c < 3; ++c) {
            if (mode == NormMode::zscore) {
                out[c] = dir == NormDir::forward
                             ? (values[c] - stats.p_mean[c]) / stats.p_std[c]
                             : values[c] * stats.p_std[c] + stats.p_mean[c];
            } else {
                const double span = stats.p_max[c] - stats.p_min[c];
                out[c] = dir == NormDir::forward
                             ? 0.05 + 0.9 * (values[c] - stats.p_min[c]) / span
                             : stats.p_min[c] + (values[c] - 0.05) / 0.9 * span;
            }
        }
        return out;
    }
    throw std::invalid_argument("unknown channel set: expected 6 pressures or 3 position values, got " +
                                std::to_string(values.size()));
}

namespace {

inline double z_u(const NormStats& st, const Frame& f, int c) {
    return (f.u[static_cast<std::size_t>(c)] - st.u_mean[static_cast<std::size_t>(c)]) /
           st.u_std[static_cast<std::size_t>(c)];
}

inline double z_p(const NormStats& st, double v, int c) {
    return (v - st.p_mean[static_cast<std::size_t>(c)]) / st.p_std[static_cast<std::size_t>(c)];
}

inline double sig_p(const NormStats& st, double v, int c) {
    const std::size_t i = static_cast<std::size_t>(c);
    return 0.05 + 0.9 * (v - st.p_min[i]) / (st.p_max[i] - st.p_min[i]);
}

void fill_forward_step(const NormStats& st, const RawDataset& ds, std::int64_t k,
                       std::array<double, kForwardInputDim>& row) {
    const Frame& fk = ds.frames[static_cast<std::size_t>(k)];
    const Frame& fp = ds.frames[static_cast<std::size_t>(k - 1)];
    for (int c = 0; c < 6; ++c) {
        row[static_cast<std::size_t>(c)] = z_u(st, fk, c);
        // Differences carry no mean shift: z(u_k) - z(u_{k-1}) = (u_k - u_{k-1}) / std.
        row[static_cast<std::size_t>(6 + c)] =
            (fk.u[static_cast<std::size_t>(c)] - fp.u[static_cast<std::size_t>(c)]) /
            st.u_std[static_cast<std::size_t>(c)];
    }
}

}  // namespace

std::vector<ForwardSample> make_forward_windows(const RawDataset& ds, const NormStats& stats) {
    const std::int64_t n = static_cast<std::int64_t>(ds.frames.size());
    if (n < 4) throw std::invalid_argument("dataset too short for forward windows (need >= 4 frames)");
    std::vector<ForwardSample> out;
    out.reserve(static_cast<std::size_t>(n - kForwardLookback));
    for (std::int64_t t = kForwardLookback; t < n; ++t) {
        ForwardSample s;
        s.t = t;
        for (int k = 0; k < kWindowLen; ++k) {
            fill_forward_step(stats, ds, t - 2 + k, s.steps[static_cast<std::size_t>(k)]);
        }
        const Vec3& p = ds.frames[static_cast<std::size_t>(t)].p;
        s.target_mm = {p.x, p.y, p.z};
        s.target_sig = {sig_p(stats, p.x, 0), sig_p(stats, p.y, 1), sig_p(stats, p.z, 2)};
        out.push_back(s);
    }
    return out;
}

std::vector<InverseSample> make_inverse_windows(const RawDataset& ds, const NormStats& stats) {
    const std::int64_t n = static_cast<std::int64_t>(ds.frames.size());
    if (n < 5) throw std::invalid_argument("dataset too short for inverse windows (need >= 5 frames)");
    std::vector<InverseSample> out;
    out.reserve(static_cast<std::size_t>(n - kInverseLookback));
    for (std::int64_t t = kInverseLookback; t < n; ++t) {
        InverseSample s;
        s.t = t;
        const Frame& ft = ds.frames[static_cast<std::size_t>(t)];
        const Frame& fprev = ds.frames[static_cast<std::size_t>(t - 1)];
        const double g[3] = {ft.p.x - fprev.p.x, ft.p.y - fprev.p.y, ft.p.z - fprev.p.z};
        for (int k = 0; k < kWindowLen; ++k) {
            const std::int64_t idx = t - 3 + k;
            const Frame& fk = ds.frames[static_cast<std::size_t>(idx)];
            const Frame& fkm = ds.frames[static_cast<std::size_t>(idx - 1)];
            auto& row = s.steps[static_cast<std::size_t>(k)];
            for (int c = 0; c < 3; ++c) {
                row[static_cast<std::size_t>(c)] =
                    g[c] / stats.p_std[static_cast<std::size_t>(c)];
                row[static_cast<std::size_t>(3 + c)] =
                    (fk.p[c] - fkm.p[c]) / stats.p_std[static_cast<std::size_t>(c)];
                row[static_cast<std::size_t>(12 + c)] = z_p(stats, fk.p[c], c);
            }
            for (int c = 0; c < 6; ++c) {
                row[static_cast<std::size_t>(6 + c)] = z_u(stats, fk, c);
            }
        }
        s.target_z = {z_p(stats, ft.p.x, 0), z_p(stats, ft.p.y, 1), z_p(stats, ft.p.z, 2)};
        s.target_sig = {sig_p(stats, ft.p.x, 0), sig_p(stats, ft.p.y, 1), sig_p(stats, ft.p.z, 2)};
        s.label_kpa = ft.u;
        for (int c = 0; c < 6; ++c) {
            s.label_z[static_cast<std::size_t>(c)] = z_u(stats, ft, c);
            s.u_prev_z[static_cast<std::size_t>(c)] = z_u(stats, fprev, c);
        }
        fill_forward_step(stats, ds, t - 2, s.fwd_hist[0]);
        fill_forward_step(stats, ds, t - 1, s.fwd_hist[1]);
        out.push_back(s);
    }
    return out;
}

void save_dataset(const std::string& path, const RawDataset& ds) {
    io::KvBlock header;
    header.set("format", std::string(io::kFormatTag));
    header.set("kind", std::string("dataset"));
    const io::KvBlock plant_kv = io::KvBlock::parse_string(plant_params_kv(ds.plant));
    for (const auto& [k, v] : plant_kv.entries()) header.set(k, v);
    header.set("gen.total_frames", ds.cfg.total_frames);
    header.set("gen.frames_per_target", ds.cfg.frames_per_target);
    header.set("gen.fixed_sum", ds.cfg.fixed_sum);
    header.set("gen.noise_sigma_u", ds.cfg.noise_sigma_u);
    header.set("gen.seed", ds.cfg.seed);
    header.set("gen.frame_dt", ds.cfg.frame_dt);

    std::string out = header.serialize();
    out += "data:\n";
    out += "t,u1,u2,u3,u4,u5,u6,x,y,z\n";
    for (const Frame& f : ds.frames) {
        out += io::fmt(f.t);
        for (double u : f.u) {
            out += ',';
            out += io::fmt(u);
        }
        out += ',';
        out += io::fmt(f.p.x);
        out += ',';
        out += io::fmt(f.p.y);
        out += ',';
        out += io::fmt(f.p.z);
        out += '\n';
    }
    io::write_file(path, out);
}

RawDataset load_dataset(const std::string& path) {
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
    if (header.get("kind") != "dataset") {
        throw ParseError(path, 2, "expected kind = dataset, got '" + header.get("kind") + "'");
    }

    RawDataset ds;
    ds.plant = plant_params_from_kv(header.serialize());
    ds.cfg.total_frames = header.get_int("gen.total_frames");
    ds.cfg.frames_per_target = header.get_int("gen.frames_per_target");
    ds.cfg.fixed_sum = header.get_double("gen.fixed_sum");
    ds.cfg.noise_sigma_u = header.get_double("gen.noise_sigma_u");
    ds.cfg.seed = static_cast<std::uint64_t>(header.get_int("gen.seed"));
    ds.cfg.frame_dt = header.get_double("gen.frame_dt");
    ds.cfg.validate();

    if (!reader.next(line)) reader.fail("missing CSV column header");
    if (io::trim(line) != "t,u1,u2,u3,u4,u5,u6,x,y,z") reader.fail("unexpected CSV columns: '" + line + "'");

    ds.frames.reserve(static_cast<std::size_t>(ds.cfg.total_frames));
    while (reader.next(line)) {
        if (io::trim(line).empty()) continue;
        const auto fields = io::split(line, ',');
        if (fields.size() != 10) reader.fail("expected 10 fields, got " + std::to_string(fields.size()));
        Frame f;
        try {
            f.t = io::parse_double(fields[0], "t");
            for (int c = 0; c < 6; ++c) {
                f.u[static_cast<std::size_t>(c)] =
                    io::parse_double(fields[static_cast<std::size_t>(1 + c)], "u");
            }
            f.p.x = io::parse_double(fields[7], "x");
            f.p.y = io::parse_double(fields[8], "y");
            f.p.z = io::parse_double(fields[9], "z");
        } catch (const std::invalid_argument& e) {
            reader.fail(e.what());
        }
        for (double u : f.u) {
            if (!(u >= kPressureMin && u <= kPressureMax)) reader.fail("pressure out of range");
        }
        if (!ds.frames.empty()) {
            const double expect = ds.frames.back().t + ds.cfg.frame_dt;
            if (!(f.t > ds.frames.back().t) || std::abs(f.t - expect) > 1e-9) {
                reader.fail("timestamps must increase by the frame interval");
            }
        }
        ds.frames.push_back(f);
    }
    if (static_cast<std::int64_t>(ds.frames.size()) != ds.cfg.total_frames) {
        throw ParseError(path, reader.line_no(),
                         "frame count " + std::to_string(ds.frames.size()) +
                             " does not match header total_frames " +
                             std::to_string(ds.cfg.total_frames) + " (truncated file?)");
    }
    return ds;
}

}  // namespace softarm
