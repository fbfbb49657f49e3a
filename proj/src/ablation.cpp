#include "softarm/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <future>
#include <sstream>

#include "softarm/artifact_io.hpp"
#include "softarm/errors.hpp"

namespace softarm {

namespace {

constexpr TrajKind kAllTrajectories[] = {TrajKind::circle, TrajKind::ushape, TrajKind::figure8,
                                         TrajKind::star};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct CellResult {
    AblationCell cell;
    bool ok = false;
    std::string error;
};

CellResult run_cell(const RawDataset& ds, const Checkpoint& fwd_ckpt, TrainConfig cfg,
                    Variant variant, std::uint64_t seed, const TrajectorySpec& traj_base,
                    const WorkspaceBox& box, double plane_z, const std::string& out_dir) {
    CellResult res;
    res.cell.variant = variant;
    res.cell.seed = seed;
    try {
        cfg.variant = variant;
        cfg.seed = seed;
        const InverseTrainResult trained = train_inverse(ds, fwd_ckpt, cfg);

        const std::string tag = variant_label(variant) + "_seed" + std::to_string(seed);
        std::string safe_tag = tag;
        std::replace(safe_tag.begin(), safe_tag.end(), '+', 'p');
        save_checkpoint(out_dir + "/inverse_" + safe_tag + ".ckpt", trained.checkpoint);

        std::vector<double> pooled;
        for (TrajKind kind : kAllTrajectories) {
            TrajectorySpec spec = traj_base;
            spec.kind = kind;
            const auto planar = gen_planar_trajectory(spec);
            const auto waypoints = map_to_workspace(planar, box, spec, plane_z);
            Plant plant(ds.plant, /*noise_seed=*/seed, /*noise_on=*/false);
            TrackingReport report = track(plant, trained.checkpoint, waypoints);
            report.kind = kind;
            save_report(out_dir + "/track_" + traj_label(kind) + "_" + safe_tag + ".csv", report,
                        ds.plant, spec);
            res.cell.per_traj_mean.push_back(report.mean);
            for (const auto& row : report.rows) pooled.push_back(row.err);
        }

        double sum = 0.0, mx = 0.0;
        for (double e : pooled) {
            sum += e;
            mx = std::max(mx, e);
        }
        const double mean = sum / static_cast<double>(pooled.size());
        double ss = 0.0;
        for (double e : pooled) ss += (e - mean) * (e - mean);
        res.cell.mean_err = mean;
        res.cell.std_err = std::sqrt(ss / static_cast<double>(pooled.size()));
        res.cell.max_err = mx;
        res.ok = true;
    } catch (const std::exception& e) {
        res.error = e.what();
    }
    return res;
}

}  // namespace

AblationTable run_ablation(const RawDataset& ds, const Checkpoint& fwd_ckpt,
                           const TrainConfig& base_cfg, const std::vector<std::uint64_t>& seeds,
                           const TrajectorySpec& traj_base, const std::string& out_dir,
                           int threads) {
    if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
    std::filesystem::create_directories(out_dir);

    const WorkspaceBox box = WorkspaceBox::from_dataset(ds);
    const double plane_z = traj_base.plane_z ? *traj_base.plane_z : median_z(ds);
    const Variant variants[] = {Variant::fi, Variant::fic, Variant::fc};

    struct Job {
        Variant variant;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (Variant v : variants) {
        for (std::uint64_t s : seeds) jobs.push_back({v, s});
    }

    std::vector<CellResult> results(jobs.size());
    const int n_workers = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
    std::size_t next = 0;
    while (next < jobs.size()) {
        std::vector<std::pair<std::size_t, std::future<CellResult>>> inflight;
        for (int w = 0; w < n_workers && next < jobs.size(); ++w, ++next) {
            const Job job = jobs[next];
            inflight.emplace_back(next, std::async(std::launch::async, [&, job] {
                                      return run_cell(ds, fwd_ckpt, base_cfg, job.variant, job.seed,
                                                      traj_base, box, plane_z, out_dir);
                                  }));
        }
        for (auto& [idx, fut] : inflight) results[idx] = fut.get();
    }

    AblationTable table;
    table.seeds = seeds;
    std::vector<std::string> failures;
    std::vector<std::string> completed;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const std::string tag = variant_label(jobs[i].variant) + "/seed " + std::to_string(jobs[i].seed);
        if (results[i].ok) {
            table.cells.push_back(results[i].cell);
            completed.push_back(tag);
        } else {
            failures.push_back(tag + ": " + results[i].error);
        }
    }
    if (!failures.empty()) {
        std::string msg = "ablation incomplete; failed cells:";
        for (const auto& f : failures) msg += "\n  " + f;
        msg += "\ncompleted cells:";
        for (const auto& c : completed) msg += "\n  " + c;
        throw PartialAblationError(msg);
    }

    for (Variant v : variants) {
        VariantSummary s;
        s.variant = v;
        std::vector<double> means, stds, maxes;
        for (const auto& c : table.cells) {
            if (c.variant == v) {
                means.push_back(c.mean_err);
                stds.push_back(c.std_err);
                maxes.push_back(c.max_err);
            }
        }
        s.median_mean = median(means);
        s.median_std = median(stds);
        s.median_max = median(maxes);
        table.summary.push_back(s);
    }

    save_ablation_csv(out_dir + "/ablation.csv", table);
    return table;
}

void save_ablation_csv(const std::string& path, const AblationTable& table) {
    io::KvBlock kv;
    kv.set("format", std::string(io::kFormatTag));
    kv.set("kind", std::string("ablation"));
    std::vector<std::string> seed_strs;
    for (std::uint64_t s : table.seeds) seed_strs.push_back(std::to_string(s));
    kv.set("seeds", io::join(seed_strs, ','));

    std::string out = kv.serialize();
    out += "data:\n";
    out += "variant,seed,mean_mm,std_mm,max_mm,circle_mm,ushape_mm,figure8_mm,star_mm\n";
    for (const auto& c : table.cells) {
        out += variant_label(c.variant);
        out += ',' + io::fmt(c.seed);
        out += ',' + io::fmt(c.mean_err);
        out += ',' + io::fmt(c.std_err);
        out += ',' + io::fmt(c.max_err);
        for (double m : c.per_traj_mean) out += ',' + io::fmt(m);
        out += '\n';
    }
    out += "summary:\n";
    out += "variant,median_mean_mm,median_std_mm,median_max_mm\n";
    for (const auto& s : table.summary) {
        out += variant_label(s.variant);
        out += ',' + io::fmt(s.median_mean);
        out += ',' + io::fmt(s.median_std);
        out += ',' + io::fmt(s.median_max);
        out += '\n';
    }
    io::write_file(path, out);
}

AblationTable load_ablation_csv(const std::string& path) {
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
        if (eq == std::string::npos) reader.fail("expected 'key = value' or 'data:'");
        header.set(io::trim(t.substr(0, eq)), io::trim(t.substr(eq + 1)));
    }
    if (!saw_data) throw ParseError(path, reader.line_no(), "missing 'data:' section");
    io::check_format(header, path);
    if (header.get("kind") != "ablation") {
        throw ParseError(path, 2, "expected kind = ablation");
    }

    AblationTable table;
    for (const auto& s : io::split(header.get("seeds"), ',')) {
        table.seeds.push_back(static_cast<std::uint64_t>(io::parse_int(io::trim(s), "seed")));
    }

    if (!reader.next(line)) reader.fail("missing CSV column header");
    bool in_summary = false;
    bool summary_header_skipped = false;
    while (reader.next(line)) {
        const std::string t = io::trim(line);
        if (t.empty()) continue;
        if (t == "summary:") {
            in_summary = true;
            continue;
        }
        const auto fields = io::split(t, ',');
        if (in_summary) {
            if (!summary_header_skipped) {
                summary_header_skipped = true;
                continue;
            }
            if (fields.size() != 4) reader.fail("expected 4 summary fields");
            VariantSummary s;
            s.variant = variant_from_label(fields[0]);
            s.median_mean = io::parse_double(fields[1], "median_mean");
            s.median_std = io::parse_double(fields[2], "median_std");
            s.median_max = io::parse_double(fields[3], "median_max");
            table.summary.push_back(s);
            continue;
        }
        if (fields.size() != 9) reader.fail("expected 9 fields, got " + std::to_string(fields.size()));
        AblationCell c;
        c.variant = variant_from_label(fields[0]);
        c.seed = static_cast<std::uint64_t>(io::parse_int(fields[1], "seed"));
        c.mean_err = io::parse_double(fields[2], "mean");
        c.std_err = io::parse_double(fields[3], "std");
        c.max_err = io::parse_double(fields[4], "max");
        for (int k = 0; k < 4; ++k) {
            c.per_traj_mean.push_back(io::parse_double(fields[static_cast<std::size_t>(5 + k)], "traj mean"));
        }
        table.cells.push_back(c);
    }
    return table;
}

namespace {

double median_mean_of(const AblationTable& table, Variant v) {
    std::vector<double> means;
    for (const auto& c : table.cells) {
        if (c.variant == v) means.push_back(c.mean_err);
    }
    if (means.empty()) throw std::invalid_argument("ablation CSV missing variant " + variant_label(v));
    return median(means);
}

}  // namespace

bool ablation_ordering_pass(const std::string& csv_path) {
    const AblationTable table = load_ablation_csv(csv_path);
    const double fi = median_mean_of(table, Variant::fi);
    const double fic = median_mean_of(table, Variant::fic);
    const double fc = median_mean_of(table, Variant::fc);
    return fc < fic && fic < fi;
}

double ablation_fc_improvement(const std::string& csv_path) {
    const AblationTable table = load_ablation_csv(csv_path);
    const double fi = median_mean_of(table, Variant::fi);
    const double fc = median_mean_of(table, Variant::fc);
    return (fi - fc) / fi;
}

std::string format_ablation_text(const AblationTable& table, bool ordering_pass) {
    std::ostringstream out;
    out << "Tracking accuracy by loss formulation (synthetic plant)\n";
    out << "variant   seed   mean(mm)   std(mm)   max(mm)\n";
    char buf[128];
    for (const auto& c : table.cells) {
        std::snprintf(buf, sizeof(buf), "%-9s %4llu %10.2f %9.2f %9.2f\n",
                      variant_label(c.variant).c_str(), static_cast<unsigned long long>(c.seed),
                      c.mean_err, c.std_err, c.max_err);
        out << buf;
    }
    out << "\nmedians over seeds\n";
    for (const auto& s : table.summary) {
        std::snprintf(buf, sizeof(buf), "%-9s      %10.2f %9.2f %9.2f\n",
                      variant_label(s.variant).c_str(), s.median_mean, s.median_std, s.median_max);
        out << buf;
    }
    out << "\nreference (hardware, not comparable to this plant):\n";
    out << "variant   mean(mm)   max(mm)   std(mm)\n";
    for (const auto& r : kPaperTable) {
        std::snprintf(buf, sizeof(buf), "%-9s %9.2f %9.2f %9.2f\n", r.variant, r.mean_mm, r.max_mm,
                      r.std_mm);
        out << buf;
    }
    out << "\nordering f+c < f+i+c < f+i: " << (ordering_pass ? "PASS" : "FAIL") << "\n";
    return out.str();
}

}  // namespace softarm
