// casreg: command-line front-end for registration, multi-atlas segmentation and phantom sweeps.
//
// Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numeric failure,
// 5 every atlas registration failed, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "casreg/casreg.hpp"

namespace fs = std::filesystem;
using namespace casreg;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kUsage = 2, kIo = 3, kNumeric = 4, kAllFailed = 5 };

struct RegistrationFlags {
  int cascades = 5;
  double lambda = 1.0;
  std::string scales;
  std::string strategy = "accumulate";
  bool rigid_init = false;
  std::uint64_t seed = 0;
  int iters = 100;
  double step = 0.5;
  int window = 9;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--cascades", cascades, "Number of cascaded stages")->capture_default_str();
    cmd->add_option("--lambda", lambda, "Smoothness weight")->capture_default_str();
    cmd->add_option("--scales", scales, "Comma-separated downsampling factor per stage (default 8,4,2,1,1 truncated)");
    cmd->add_option("--strategy", strategy, "accumulate or successive")
        ->check(CLI::IsMember({"accumulate", "successive"}))
        ->capture_default_str();
    cmd->add_flag("--rigid-init", rigid_init, "Run a rigid pre-alignment first");
    cmd->add_option("--seed", seed, "Seed for the randomised parts (rigid multi-start)")->capture_default_str();
    cmd->add_option("--iters", iters, "Optimiser iterations per stage")->capture_default_str();
    cmd->add_option("--step", step, "Adam learning rate in voxels")->capture_default_str();
    cmd->add_option("--window", window, "Local NCC window (odd)")->capture_default_str();
  }

  RegistrationConfig config(const CLI::App* cmd) const {
    RegistrationConfig c = RegistrationConfig::with_cascades(cascades);
    if (!scales.empty()) {
      c.scales.clear();
      for (const auto& s : detail::split(scales, ',')) c.scales.push_back(detail::parse_int(s, "scale"));
      if (cmd->count("--cascades") == 0) c.n_cascades = static_cast<int>(c.scales.size());
    }
    c.lambda = lambda;
    c.strategy = parse_strategy(strategy);
    c.rigid_init = rigid_init;
    c.seed = seed;
    c.iters_per_stage = iters;
    c.step_size = step;
    c.window = window;
    c.validate();
    return c;
  }
};

Volume3 load_image(const fs::path& p) { return normalize(load_volume(p)); }

std::ofstream open_output(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out.precision(10);
  return out;
}

int cmd_register(const fs::path& moving, const fs::path& fixed, const fs::path& out_dir, const RegistrationConfig& cfg) {
  const Volume3 mv = load_image(moving);
  const Volume3 fx = load_image(fixed);
  require_same_dims(mv, fx, "moving vs fixed");
  fs::create_directories(out_dir);

  const RegistrationResult r = cascade_register(mv, fx, cfg);
  if (!r.status.empty()) std::cerr << r.status << '\n';
  Volume3 warped = r.warped;
  warped.spacing = fx.spacing;
  warped.orientation = fx.orientation;
  save_volume(warped, out_dir / "warped.nii.gz");
  save_field(r.total_field, out_dir / "field.f32");

  auto jac = open_output(out_dir / "jacobian.csv");
  jac << "folding_fraction,min_det,mean_det\n"
      << r.jacobian.folding_fraction << ',' << r.jacobian.min_det << ',' << r.jacobian.mean_det << '\n';
  auto trace = open_output(out_dir / "loss_trace.csv");
  trace << "stage,iteration,loss\n";
  for (std::size_t s = 0; s < r.loss_trace.size(); ++s)
    for (std::size_t i = 0; i < r.loss_trace[s].size(); ++i) trace << s << ',' << i << ',' << r.loss_trace[s][i] << '\n';
  if (!jac || !trace) throw IoError("failed writing registration reports in " + out_dir.string());

  std::cout << "local_ncc " << local_ncc(fx, r.warped, cfg.window) << '\n'
            << "folding_fraction " << r.jacobian.folding_fraction << '\n'
            << "max_displacement " << max_norm(r.total_field) << '\n';
  return kOk;
}

int cmd_segment(const fs::path& target_path, const fs::path& bank, const fs::path& out, int k,
                const FusionConfig& fusion, const RegistrationConfig& cfg) {
  const Volume3 target = load_image(target_path);
  const std::vector<Atlas> atlases = load_atlas_bank(bank);
  Segmentation seg = segment(target, atlases, cfg, k, fusion);
  seg.labels.spacing = target.spacing;
  seg.labels.orientation = target.orientation;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_labels(seg.labels, out);

  const fs::path report_path = (out.has_parent_path() ? out.parent_path() : fs::path(".")) / "report.csv";
  auto rep = open_output(report_path);
  rep << "atlas_id,ncc,selected,status,folding,seconds\n";
  for (const auto& row : seg.report.atlases)
    rep << row.atlas_id << ',' << row.score << ',' << (row.selected ? 1 : 0) << ',' << (row.failed ? "failed" : "ok")
        << ',' << row.folding_fraction << ',' << row.seconds << '\n';
  rep << "# fusion=" << to_string(fusion.method) << " patch=" << fusion.patch_size << " gain=" << fusion.gain
      << " k_requested=" << seg.report.k_requested << " k_used=" << seg.report.k_used << '\n';
  for (const auto& w : seg.report.warnings) {
    rep << "# warning: " << w << '\n';
    std::cerr << "warning: " << w << '\n';
  }
  if (!rep) throw IoError("failed writing " + report_path.string());

  std::cout << "selected";
  for (const auto& row : seg.report.atlases)
    if (row.selected) std::cout << ' ' << row.atlas_id;
  std::cout << '\n';
  return kOk;
}

int cmd_eval(const fs::path& pred, const fs::path& truth, const std::string& label_csv, const std::string& csv_out) {
  const LabelVolume p = load_labels(pred);
  const LabelVolume t = load_labels(truth);
  std::vector<Label> labels;
  for (const auto& s : detail::split(label_csv, ',')) {
    const int l = detail::parse_int(s, "label");
    if (l < 0 || l > 65535) throw std::invalid_argument("label out of range: " + s);
    labels.push_back(static_cast<Label>(l));
  }
  const DiceReport r = dice_report(p, t, labels);
  std::cout.precision(6);
  std::cout << "label,dice\n";
  for (const auto& [l, d] : r.per_label) std::cout << l << ',' << d << '\n';
  std::cout << "mean " << r.mean << " +- " << r.standard_error << " (n=" << r.n << ")\n";
  if (!csv_out.empty()) {
    auto out = open_output(csv_out);
    out << "label,dice\n";
    for (const auto& [l, d] : r.per_label) out << l << ',' << d << '\n';
    out << "mean," << r.mean << "\nse," << r.standard_error << '\n';
    if (!out) throw IoError("failed writing " + csv_out);
  }
  return kOk;
}

Dims parse_dims(const std::string& s) {
  const auto parts = detail::split(s, 'x');
  if (parts.size() == 1) {
    const int n = detail::parse_int(parts[0], "dims");
    return {n, n, n};
  }
  if (parts.size() != 3) throw std::invalid_argument("dims must be N or HxWxL");
  return {detail::parse_int(parts[0], "dims"), detail::parse_int(parts[1], "dims"), detail::parse_int(parts[2], "dims")};
}

int cmd_synth(const fs::path& out_dir, const PhantomBankSpec& spec) {
  const PhantomBank bank = make_phantom_bank(spec);
  write_phantom_bank(out_dir, bank);
  std::cout << "wrote " << bank.atlases.size() << " atlases and target (source " << bank.target.meta.at("source")
            << ") to " << out_dir.string() << '\n';
  return kOk;
}

int cmd_sweep(const fs::path& bank, const fs::path& out, const std::string& grid_text, const RegistrationConfig& base) {
  const ConfigGrid grid = parse_grid(grid_text, base);
  const auto rows = experiment_suite(bank, grid, out);
  std::cout.precision(6);
  std::cout << "config_id,targets,dice_mean,dice_se,folding_mean\n";
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    const std::string id = grid_config_id(grid, i);
    std::vector<double> dice, folding;
    for (const auto& r : rows)
      if (r.config_id == id) {
        dice.push_back(r.dice.mean);
        folding.push_back(r.folding);
      }
    const MeanSe d = mean_se(dice);
    std::cout << id << ',' << d.n << ',' << d.mean << ',' << d.standard_error << ',' << mean_se(folding).mean << '\n';
  }
  return kOk;
}

/// casreg.cfg: `key=value` lines. A bare key applies to every command that has `--key`;
/// `command.key` applies to one command only. Command-line flags win.
std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, v] : read_meta(path)) out.emplace_back(k, v);
  return out;
}

void apply_config(CLI::App& app, const std::vector<std::pair<std::string, std::string>>& entries) {
  CLI::App* active = nullptr;
  for (auto* sub : app.get_subcommands()) active = sub;
  for (const auto& [key, value] : entries) {
    std::string name = key;
    std::string scope;
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      scope = key.substr(0, dot);
      name = key.substr(dot + 1);
    }
    bool known = false;
    for (auto* sub : app.get_subcommands({})) {
      if (!scope.empty() && sub->get_name() != scope) continue;
      try {
        sub->get_option("--" + name);
        known = true;
      } catch (const CLI::OptionNotFound&) {
      }
    }
    if (!known) throw std::invalid_argument("casreg.cfg: unknown key '" + key + "'");
    if (!active || (!scope.empty() && active->get_name() != scope)) continue;
    CLI::Option* opt = nullptr;
    try {
      opt = active->get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      continue;
    }
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Cascaded deformable registration and multi-atlas segmentation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  int threads = 0;
  std::string config_path = "casreg.cfg";
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", config_path, "Defaults file of key=value lines")->capture_default_str();

  auto subcommand = [&](const std::string& name, const std::string& description) {
    CLI::App* c = app.add_subcommand(name, description);
    c->set_version_flag("--version", kVersion);
    c->fallthrough();
    return c;
  };

  RegistrationFlags reg_flags;
  std::string moving, fixed, out_dir;
  CLI::App* reg = subcommand("register", "Register a moving image onto a fixed image");
  reg->add_option("--moving", moving, "Moving image")->required();
  reg->add_option("--fixed", fixed, "Fixed image")->required();
  reg->add_option("--out-dir", out_dir, "Output directory")->required();
  reg_flags.add_to(reg);

  RegistrationFlags seg_flags;
  std::string target, bank, out;
  int k = 10;
  std::string fusion = "lwv";
  FusionConfig fusion_cfg;
  CLI::App* seg = subcommand("segment", "Segment a target with an atlas bank");
  seg->add_option("--target", target, "Target image")->required();
  seg->add_option("--bank", bank, "Atlas bank directory")->required();
  seg->add_option("--out", out, "Output label file (report.csv is written alongside)")->required();
  seg->add_option("--k", k, "Atlases kept after NCC selection")->check(CLI::PositiveNumber)->capture_default_str();
  seg->add_option("--fusion", fusion, "lwv or majority")->check(CLI::IsMember({"lwv", "majority"}))->capture_default_str();
  seg->add_option("--patch", fusion_cfg.patch_size, "LWV window size (odd)")->capture_default_str();
  seg->add_option("--gain", fusion_cfg.gain, "LWV gain")->capture_default_str();
  seg_flags.add_to(seg);

  std::string pred, truth, labels = "1,2,3,4,5,6,7", csv_out;
  CLI::App* ev = subcommand("eval", "Dice scores of a predicted label map");
  ev->add_option("--pred", pred, "Predicted labels")->required();
  ev->add_option("--truth", truth, "Reference labels")->required();
  ev->add_option("--labels", labels, "Comma-separated labels to score")->capture_default_str();
  ev->add_option("--csv", csv_out, "Also write the scores to this CSV file");

  PhantomBankSpec synth_spec;
  std::string synth_dir, dims = "64";
  CLI::App* syn = subcommand("synth", "Write a synthetic phantom atlas bank with one warped target");
  syn->add_option("--out-dir", synth_dir, "Output bank directory")->required();
  syn->add_option("--seed", synth_spec.seed, "Seed")->required();
  syn->add_option("--dims", dims, "N or HxWxL")->capture_default_str();
  syn->add_option("--n-atlases", synth_spec.n_atlases, "Atlas count")->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--amplitude", synth_spec.amplitude, "Target deformation amplitude (voxels)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  syn->add_option("--smoothness", synth_spec.smoothness, "Target deformation smoothness (voxels)")
      ->check(CLI::Range(1.0, 1e9))
      ->capture_default_str();
  syn->add_option("--labels", synth_spec.n_labels, "Foreground labels per phantom")->check(CLI::Range(2, 8))->capture_default_str();

  RegistrationFlags sweep_flags;
  std::string sweep_bank, sweep_out, grid;
  CLI::App* sw = subcommand("sweep", "Run a configuration grid over the targets of a bank");
  sw->add_option("--bank", sweep_bank, "Bank directory with target entries")->required();
  sw->add_option("--out", sweep_out, "CSV report")->required();
  sw->add_option("--grid", grid, "lambda=1e-4,1,2 | cascades=1..5 | strategy=accumulate,successive")->required();
  sweep_flags.add_to(sw);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    const bool explicit_config = app.get_option("--config")->count() > 0;
    if (explicit_config && !fs::exists(config_path)) throw IoError("config file not found: " + config_path);
    if (fs::exists(config_path)) apply_config(app, read_config(config_path));
    set_num_threads(threads);

    if (reg->parsed()) return cmd_register(moving, fixed, out_dir, reg_flags.config(reg));
    if (seg->parsed()) {
      fusion_cfg.method = fusion == "majority" ? FusionMethod::majority : FusionMethod::lwv;
      fusion_cfg.validate();
      return cmd_segment(target, bank, out, k, fusion_cfg, seg_flags.config(seg));
    }
    if (ev->parsed()) return cmd_eval(pred, truth, labels, csv_out);
    if (syn->parsed()) {
      synth_spec.dims = parse_dims(dims);
      return cmd_synth(synth_dir, synth_spec);
    }
    if (sw->parsed()) return cmd_sweep(sweep_bank, sweep_out, grid, sweep_flags.config(sw));
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const AllRegistrationsFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kAllFailed;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
