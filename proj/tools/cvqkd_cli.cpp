// Command-line front end: one subcommand per reproduced artifact.
// Exit codes: 0 on pass, 2 when an acceptance-style check fails, 1 on error.

#include <CLI11.hpp>

#include <array>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cvqkd/cvqkd.hpp"

namespace {

using namespace cvqkd;

ExperimentConfig resolve_config(const std::string& config_path, const std::string& preset,
                                std::optional<std::uint64_t> seed, std::optional<std::size_t> pairs) {
    ExperimentConfig cfg;
    if (!config_path.empty())
        cfg = load_config(config_path);
    else
        cfg = load_preset(scenario_from_string(preset));
    if (seed) cfg.seed = *seed;
    if (pairs) cfg.n_pulses = *pairs;
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << text;
}

int cmd_simulate(const ExperimentConfig& cfg, const std::string& out_dir,
                 const std::vector<std::string>& formats) {
    std::vector<DatasetRow> rows;
    const bool want_csv =
        std::find(formats.begin(), formats.end(), "csv") != formats.end();
    RunRecord rec = run_experiment(cfg, want_csv ? &rows : nullptr);
    json j = run_record_to_json(rec);
    j["config"] = config_to_json(cfg);
    write_text(out_dir + "/run_record.json", j.dump(2) + "\n");
    if (want_csv) save_dataset(out_dir + "/dataset.csv", rows);
    std::printf("%s: T_raw=%.4f eps_raw=%.4f | T_eq=%.4f eps_eq=%.4f | suppression=%.3f\n",
                cfg.name.c_str(), rec.raw.T_hat, rec.raw.eps_hat, rec.equalized.T_hat,
                rec.equalized.eps_hat, rec.suppression_ratio);
    std::printf("key rates (bits/pulse): raw=%.5f equalized=%.5f theory=%.5f\n", rec.key_raw.k_rate,
                rec.key_eq.k_rate, rec.key_theory.k_rate);
    if (rec.classified)
        std::printf("classifier: accuracy=%.4f discard=%.3f pooled_R=%.4f\n", rec.class_report.accuracy,
                    rec.discard_fraction, rec.pooled_r);
    return 0;
}

int cmd_table1(const ExperimentConfig& cfg, const std::string& out_dir) {
    const Table1Report rep = reproduce_table1(cfg);
    const RunRecord& r = rep.run;
    std::printf("              %-22s %-22s %s\n", "without equalization", "with equalization",
                "theoretical value");
    std::printf("transmission  %-22.4f %-22.4f %.4f\n", r.raw.T_hat, r.equalized.T_hat, r.T_th);
    std::printf("excess noise  %-22.4f %-22.4f %.4f\n", r.raw.eps_hat, r.equalized.eps_hat, r.eps_th);
    std::printf("suppression ratio: %.3f\n", r.suppression_ratio);
    std::printf("[%s] raw T within +-%.3g of 0.5412 (got %.4f)\n", rep.pass_T_raw ? "PASS" : "FAIL",
                rep.tol_T_raw, r.raw.T_hat);
    std::printf("[%s] raw eps within +-%.3g of 0.0429 (got %.4f)\n", rep.pass_eps_raw ? "PASS" : "FAIL",
                rep.tol_eps_raw, r.raw.eps_hat);
    std::printf("[%s] equalized T >= %.3g (got %.4f)\n", rep.pass_T_eq ? "PASS" : "FAIL", rep.floor_T_eq,
                r.equalized.T_hat);
    std::printf("[%s] equalized eps <= %.3g (got %.4f)\n", rep.pass_eps_eq ? "PASS" : "FAIL",
                rep.ceil_eps_eq, r.equalized.eps_hat);
    std::printf("[%s] suppression >= %.3g (got %.3f)\n", rep.pass_suppression ? "PASS" : "FAIL",
                rep.floor_suppression, r.suppression_ratio);
    json j = run_record_to_json(r);
    j["pass"] = rep.pass();
    write_text(out_dir + "/table1.json", j.dump(2) + "\n");
    return rep.pass() ? 0 : 2;
}

int cmd_sweep(const std::vector<std::string>& presets, const std::string& config_path, double dmin,
              double dmax, std::size_t steps, std::optional<std::uint64_t> seed,
              const std::string& out_dir) {
    std::vector<ExperimentConfig> cfgs;
    if (!config_path.empty()) {
        cfgs.push_back(load_config(config_path));
    } else {
        for (const auto& p : presets) cfgs.push_back(load_preset(scenario_from_string(p)));
    }
    if (seed)
        for (auto& c : cfgs) c.seed = *seed;
    std::vector<double> distances;
    for (std::size_t i = 0; i < steps; ++i)
        distances.push_back(dmin + (dmax - dmin) * static_cast<double>(i) / static_cast<double>(steps - 1));

    std::vector<SweepPoint> all;
    bool ok = true;
    for (const auto& cfg : cfgs) {
        const auto pts = sweep_keyrate(cfg, distances);
        std::map<std::string, std::vector<const SweepPoint*>> by_tag;
        for (const auto& p : pts) by_tag[p.scenario_tag].push_back(&p);
        // per-curve monotonicity
        for (const auto& [tag, curve] : by_tag)
            for (std::size_t i = 1; i < curve.size(); ++i)
                if (curve[i]->k_clamped > curve[i - 1]->k_clamped + 1e-12) {
                    std::printf("[FAIL] %s not nonincreasing at %.2f km\n", tag.c_str(),
                                curve[i]->distance_km);
                    ok = false;
                }
        const auto& raw = by_tag[cfg.name + "/raw"];
        const auto& eq = by_tag[cfg.name + "/equalized"];
        const auto& ref = by_tag[cfg.name + "/reference"];
        bool crossing = false;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (eq[i]->k_clamped + 1e-12 < raw[i]->k_clamped) {
                std::printf("[FAIL] %s: equalized below raw at %.2f km\n", cfg.name.c_str(),
                            raw[i]->distance_km);
                ok = false;
            }
            if (ref[i]->k_clamped + 1e-12 < eq[i]->k_clamped) {
                std::printf("[FAIL] %s: reference below equalized at %.2f km\n", cfg.name.c_str(),
                            raw[i]->distance_km);
                ok = false;
            }
            if (eq[i]->k_raw > 0.0 && i + 1 < eq.size() && eq[i + 1]->k_raw <= 0.0) crossing = true;
        }
        if (eq.front()->k_raw > 0.0 && eq.back()->k_raw <= 0.0) crossing = true;
        if (!crossing) {
            std::printf("[WARN] %s: no zero crossing inside [%.2f, %.2f] km\n", cfg.name.c_str(), dmin,
                        dmax);
        }
        all.insert(all.end(), pts.begin(), pts.end());
    }
    save_sweep(out_dir + "/sweep.csv", all);
    std::printf("%zu sweep points -> %s/sweep.csv\n", all.size(), out_dir.c_str());
    return ok ? 0 : 2;
}

int cmd_classify(std::size_t pairs, std::optional<std::uint64_t> seed, const std::string& out_dir) {
    std::array<ExperimentConfig, 3> presets = {load_preset(Scenario::FreeSpaceWeak),
                                               load_preset(Scenario::FreeSpaceMedium),
                                               load_preset(Scenario::FreeSpaceStrong)};
    for (auto& p : presets) {
        p.n_pulses = pairs;
        p.stage_length = 1;
    }
    const std::uint64_t s = seed.value_or(presets[0].seed);
    const MixReport rep = classify_mix(presets, s, presets[0].zones, presets[0].knn_k,
                                       presets[0].holdout_fraction);

    json j;
    j["report"] = class_report_to_json(rep.holdout);
    j["routed_r"] = rep.routed_r;
    j["pooled_r"] = rep.pooled_r;
    j["mean_routed_r"] = rep.mean_routed_r;
    j["discard_fraction"] = rep.discard_fraction;
    j["n_pairs"] = rep.n_pairs;
    write_text(out_dir + "/classify_report.json", j.dump(2) + "\n");
    save_labels(out_dir + "/labels.csv", rep.labeled);

    bool ok = true;
    auto check = [&ok](bool cond, const char* msg, double got) {
        std::printf("[%s] %s (got %.4f)\n", cond ? "PASS" : "FAIL", msg, got);
        ok = ok && cond;
    };
    check(rep.holdout.accuracy >= 0.95, "held-out KNN accuracy >= 0.95", rep.holdout.accuracy);
    for (int c = 0; c < 3; ++c)
        check(rep.holdout.per_class_auc[c] >= 0.95, "per-class one-vs-rest AUC >= 0.95",
              rep.holdout.per_class_auc[c]);
    for (int p = 0; p < 3; ++p)
        check(rep.routed_r[p] >= 0.90,
              (rep.preset_names[p] + ": class-routed validation R >= 0.90").c_str(), rep.routed_r[p]);
    check(rep.pooled_r <= 0.85, "pooled-model R <= 0.85", rep.pooled_r);
    check(rep.pooled_r < rep.mean_routed_r, "pooled R strictly below mean routed R", rep.pooled_r);
    return ok ? 0 : 2;
}

int cmd_calibrate(const ExperimentConfig& base, double target_T, double target_eps, int iterations,
                  const std::string& out_file) {
    const ExperimentConfig cal = calibrate_fiber(base, target_T, target_eps, iterations);
    write_text(out_file, config_to_json(cal).dump(2) + "\n");
    std::printf("calibrated preset -> %s\n%s\n", out_file.c_str(), cal.calibration_note.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CVQKD pilot-tone equalization simulator"};
    app.require_subcommand(1);

    std::string config_path, preset = "fiber-10km", out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> pairs;
    std::vector<std::string> formats = {"json"};

    auto add_common = [&](CLI::App* sub, bool with_format = false) {
        sub->add_option("--config", config_path, "experiment config JSON");
        sub->add_option("--preset", preset, "preset name (fiber-10km, freespace-weak/medium/strong)");
        sub->add_option("--seed", seed, "override the master seed");
        sub->add_option("--pairs", pairs, "override the pulse-pair count");
        sub->add_option("--out", out_dir, "output directory");
        if (with_format) sub->add_option("--format", formats, "output formats (csv, json)");
    };

    auto* sim = app.add_subcommand("simulate", "run one end-to-end experiment");
    add_common(sim, true);

    auto* tab = app.add_subcommand("reproduce-table1", "calibrated fiber comparison");
    add_common(tab);

    auto* swp = app.add_subcommand("sweep-keyrate", "secret key rate vs distance");
    std::vector<std::string> sweep_presets = {"freespace-weak", "freespace-medium", "freespace-strong"};
    double dmin = 0.5, dmax = 60.0;
    std::size_t steps = 40;
    swp->add_option("--config", config_path, "experiment config JSON");
    swp->add_option("--presets", sweep_presets, "preset names to sweep");
    swp->add_option("--dmin", dmin, "shortest distance, km");
    swp->add_option("--dmax", dmax, "longest distance, km");
    swp->add_option("--steps", steps, "grid size");
    swp->add_option("--seed", seed, "override the master seed");
    swp->add_option("--out", out_dir, "output directory");

    auto* cls = app.add_subcommand("classify-report", "three-preset KNN + per-class equalization");
    std::size_t mix_pairs = 20000;
    cls->add_option("--pairs", mix_pairs, "pulse pairs per preset");
    cls->add_option("--seed", seed, "override the master seed");
    cls->add_option("--out", out_dir, "output directory");

    auto* cal = app.add_subcommand("calibrate", "fit the fiber preset's fading to the raw column");
    double target_T = 0.5412, target_eps = 0.044;
    int iterations = 3;
    std::string cal_out = "fiber-10km.json";
    add_common(cal);
    cal->add_option("--target-T", target_T, "raw transmittance target");
    cal->add_option("--target-eps", target_eps, "raw excess noise target");
    cal->add_option("--iterations", iterations, "correction rounds");
    cal->add_option("--out-file", cal_out, "output preset path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(resolve_config(config_path, preset, seed, pairs), out_dir, formats);
        if (tab->parsed()) return cmd_table1(resolve_config(config_path, preset, seed, pairs), out_dir);
        if (swp->parsed()) return cmd_sweep(sweep_presets, config_path, dmin, dmax, steps, seed, out_dir);
        if (cls->parsed()) return cmd_classify(mix_pairs, seed, out_dir);
        if (cal->parsed())
            return cmd_calibrate(resolve_config(config_path, preset, seed, pairs), target_T, target_eps,
                                 iterations, cal_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
