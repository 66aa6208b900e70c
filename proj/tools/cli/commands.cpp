/* Copyright 2026 The AOD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cli/commands.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <fstream>
#include <optional>

#include "aod/aod.hpp"
#include "cli/manifest.hpp"

namespace aod::cli {
namespace {

namespace fs = std::filesystem;

#ifndef AOD_VERSION
#define AOD_VERSION "dev"
#endif

// Bad flag values discovered after parsing; mapped to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("AOD_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("AOD_SEED is not an unsigned integer: ") + env);
    }
  }
  return 42;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

std::pair<std::string, std::string> split_once(const std::string& text, char sep,
                                               const char* flag) {
  const auto pos = text.find(sep);
  if (pos == std::string::npos || pos == 0 || pos + 1 == text.size()) {
    throw UsageError(std::string(flag) + " expects NAME" + sep + "VALUE, got \"" + text + "\"");
  }
  return {text.substr(0, pos), text.substr(pos + 1)};
}

// Accepts either a head file or a world file that embeds one.
LanguageHead load_head(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail(ErrorKind::kBadSchema, "bad head schema: invalid JSON");
  if (j.value("format", "") == "aod-world") return world_from_json(j).head;
  return head_from_json(j);
}

ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json") return ReportFormat::kJson;
  throw UsageError("--format must be csv or json");
}

struct InterventionFlags {
  InterventionConfig cfg;
  std::string mode = "contrastive";

  void add(CLI::App& cmd) {
    cmd.add_option("--gamma,--aod-alpha", cfg.gamma, "Steering strength")->capture_default_str();
    cmd.add_option("--beta", cfg.beta, "Contrastive weight")->capture_default_str();
    cmd.add_option("--apc-alpha", cfg.apc_alpha, "Plausibility threshold in [0,1]")
        ->capture_default_str();
    cmd.add_option("--mode", mode, "none | direct | contrastive")->capture_default_str();
    cmd.add_flag("--calibrate-gamma", cfg.calibrate_gamma,
                 "Scale gamma by median/mean of |x.v| over the data");
  }

  InterventionConfig resolve() {
    try {
      cfg.mode = parse_decode_mode(mode);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (cfg.gamma < 0.0 || cfg.beta < 0.0) throw UsageError("--gamma and --beta must be >= 0");
    if (cfg.apc_alpha < 0.0 || cfg.apc_alpha > 1.0) throw UsageError("--apc-alpha must be in [0,1]");
    return cfg;
  }
};

struct TrainFlags {
  TrainConfig cfg;
  std::optional<std::uint64_t> seed;
  std::string preprocess = "none";

  void add(CLI::App& cmd) {
    cmd.add_option("--lambda", cfg.lambda, "Adversarial weight")->capture_default_str();
    cmd.add_option("--lr", cfg.lr, "AdamW learning rate")->capture_default_str();
    cmd.add_option("--batch-size", cfg.batch_size)->capture_default_str();
    cmd.add_option("--epochs", cfg.epochs)->capture_default_str();
    cmd.add_option("--hidden-size", cfg.hidden_width, "Probe hidden width")->capture_default_str();
    cmd.add_option("--val-ratio", cfg.val_ratio)->capture_default_str();
    cmd.add_option("--seed", seed, "Seed (falls back to AOD_SEED, then 42)");
    cmd.add_option("--preprocess", preprocess, "none | unit-norm")->capture_default_str();
  }

  TrainConfig resolve() {
    cfg.seed = seed.value_or(default_seed());
    if (preprocess == "none") {
      cfg.preprocess = Preprocess::kNone;
    } else if (preprocess == "unit-norm") {
      cfg.preprocess = Preprocess::kUnitNorm;
    } else {
      throw UsageError("--preprocess must be none or unit-norm");
    }
    if (cfg.lambda < 0.0) throw UsageError("--lambda must be >= 0");
    if (cfg.lr <= 0.0 || cfg.batch_size <= 0 || cfg.epochs <= 0 || cfg.hidden_width <= 0) {
      throw UsageError("--lr, --batch-size, --epochs and --hidden-size must be positive");
    }
    if (!(cfg.val_ratio > 0.0 && cfg.val_ratio < 1.0)) throw UsageError("--val-ratio must be in (0,1)");
    return cfg;
  }
};

RunManifest start_manifest(const std::string& command) {
  RunManifest m;
  m.command = command;
  m.version = AOD_VERSION;
  return m;
}

// ---- synth-gen -------------------------------------------------------------

struct SynthGen {
  SyntheticSpec spec;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_eval;
  std::string out;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("synth-gen", "Generate a synthetic world and datasets");
    cmd->add_option("--d", spec.d, "Hidden dimension")->capture_default_str();
    cmd->add_option("--n", spec.n, "Training samples")->capture_default_str();
    cmd->add_option("--n-eval", n_eval, "Evaluation samples (default: --n)");
    cmd->add_option("--mu0", spec.mu0, "Coefficient mean, label 0")->capture_default_str();
    cmd->add_option("--mu1", spec.mu1, "Coefficient mean, label 1")->capture_default_str();
    cmd->add_option("--sigma-signal", spec.sigma_signal)->capture_default_str();
    cmd->add_option("--sigma-res", spec.sigma_res)->capture_default_str();
    cmd->add_option("--leakage", spec.leakage)->capture_default_str();
    cmd->add_option("--vocab", spec.vocab_size)->capture_default_str();
    cmd->add_option("--kappa", spec.kappa)->capture_default_str();
    cmd->add_option("--head-scale", spec.head_scale)->capture_default_str();
    cmd->add_option("--hallucination-row-noise", spec.hallucination_row_noise)
        ->capture_default_str();
    cmd->add_option("--layer", spec.layer)->capture_default_str();
    cmd->add_option("--seed", seed, "Seed (falls back to AOD_SEED, then 42)");
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->callback([this] { pending = true; });
  }

  bool pending = false;

  int execute(std::ostream& os) {
    Stopwatch clock;
    spec.seed = seed.value_or(default_seed());
    const int eval_n = n_eval.value_or(spec.n);
    try {
      validate(spec);
      require(eval_n >= 2, ErrorKind::kInvalidArgument, "n-eval must be >= 2");
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    const fs::path dir(out);
    ensure_dir(dir);

    const auto world = generate_world(spec, spec.seed);
    auto train = generate_dataset(world, spec.n, derive_seed(spec.seed, 100));
    auto eval = generate_dataset(world, eval_n, derive_seed(spec.seed, 200));
    train.meta["split"] = "train";
    eval.meta["split"] = "eval";
    save_world(world, dir / "world.json");
    save_dataset(train, dir / "train.aoda");
    save_dataset(eval, dir / "eval.aoda");

    auto m = start_manifest("synth-gen");
    m.config = to_json(spec);
    m.config["n_eval"] = eval_n;
    m.config["train_data_seed"] = derive_seed(spec.seed, 100);
    m.config["eval_data_seed"] = derive_seed(spec.seed, 200);
    m.seed = spec.seed;
    m.outputs = {{"world", (dir / "world.json").string()},
                 {"train", (dir / "train.aoda").string()},
                 {"eval", (dir / "eval.aoda").string()}};
    m.duration_seconds = clock.seconds();
    write_manifest(m, dir);
    os << "wrote " << dir.string() << " (d=" << spec.d << ", n=" << spec.n << ", n_eval=" << eval_n
       << ")\n";
    return kExitOk;
  }
};

// ---- train -----------------------------------------------------------------

struct Train {
  TrainFlags flags;
  std::string data, out, world_path;
  bool pending = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "Learn a hallucination direction");
    cmd->add_option("--data", data, "Training AODA file")->required();
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_option("--world", world_path, "Synthetic world.json for recovery diagnostics");
    flags.add(*cmd);
    cmd->callback([this] { pending = true; });
  }

  int execute(std::ostream& os) {
    Stopwatch clock;
    const TrainConfig cfg = flags.resolve();
    const auto ds = load_dataset(data);
    const fs::path dir(out);
    ensure_dir(dir);

    const auto [model, report] = train_direction(ds, cfg);
    save_direction(model.direction, dir / "direction.json");

    nlohmann::json rep = to_json(report);
    rep["lambda"] = cfg.lambda;
    if (!world_path.empty()) {
      const auto world = load_world(world_path);
      const auto oracle = mean_diff_oracle(ds);
      rep["world"] = {{"cos_learned_vs_planted", direction_recovery(model.direction, world)},
                      {"cos_mean_diff_vs_planted", direction_recovery(oracle, world)}};
    }
    write_json(rep, dir / "report.json");

    auto m = start_manifest("train");
    m.config = to_json(cfg);
    m.config["mode"] = cfg.lambda == 0.0 ? "probe-degeneration" : "adversarial";
    m.seed = cfg.seed;
    m.inputs = {{"data", data}};
    if (!world_path.empty()) m.inputs["world"] = world_path;
    m.outputs = {{"direction", (dir / "direction.json").string()},
                 {"report", (dir / "report.json").string()}};
    m.duration_seconds = clock.seconds();
    write_manifest(m, dir);

    os << "trained on " << ds.size() << " records: val acc cls=" << report.val_cls_accuracy
       << " adv=" << report.val_adv_accuracy;
    if (rep.contains("world")) os << " |cos|=" << rep["world"]["cos_learned_vs_planted"].get<double>();
    os << "\n";
    return kExitOk;
  }
};

// ---- intervene -------------------------------------------------------------

struct Intervene {
  InterventionFlags flags;
  std::string data, direction_path, head_path, out;
  bool pending = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("intervene", "Decode every record with steering applied");
    cmd->add_option("--data", data, "AODA file of hidden states")->required();
    cmd->add_option("--direction", direction_path, "direction.json (not needed for --mode none)");
    cmd->add_option("--head", head_path, "Head JSON or world.json")->required();
    cmd->add_option("--out", out, "Output directory")->required();
    flags.add(*cmd);
    cmd->callback([this] { pending = true; });
  }

  int execute(std::ostream& os) {
    Stopwatch clock;
    InterventionConfig cfg = flags.resolve();
    if (cfg.mode != DecodeMode::kNone && direction_path.empty()) {
      throw UsageError("--direction is required unless --mode none");
    }
    const auto ds = load_dataset(data);
    const auto head = load_head(head_path);
    Direction dir;
    if (!direction_path.empty()) dir = load_direction(direction_path);
    if (ds.dim != head.dim() || (!direction_path.empty() && dir.dim() != ds.dim)) {
      fail(ErrorKind::kDimensionMismatch,
           "dimension mismatch: data " + std::to_string(ds.dim) + ", head " +
               std::to_string(head.dim()) +
               (direction_path.empty() ? "" : ", direction " + std::to_string(dir.dim())));
    }
    const fs::path dir_out(out);
    ensure_dir(dir_out);

    const auto calibration = cfg.mode == DecodeMode::kNone
                                 ? GammaCalibration{cfg.gamma, 1.0, "none"}
                                 : calibrate_gamma(ds, dir, cfg.gamma, cfg.calibrate_gamma);
    InterventionConfig effective = cfg;
    effective.gamma = calibration.gamma;

    nlohmann::json decisions = nlohmann::json::array();
    std::size_t hall = 0, hall_baseline = 0;
    std::vector<double> z(ds.dim);
    for (const auto& r : ds.records) {
      std::copy(r.vector.begin(), r.vector.end(), z.begin());
      const auto [token, diag] = decode_step(head, z, dir, effective);
      const std::size_t base = decode_baseline(head, z);
      if (head.hallucination_token) {
        hall += token == *head.hallucination_token ? 1 : 0;
        hall_baseline += base == *head.hallucination_token ? 1 : 0;
      }
      decisions.push_back({{"sample_id", r.sample_id},
                           {"label", r.label},
                           {"token", token},
                           {"baseline_token", base},
                           {"coefficient", diag.coefficient},
                           {"apc_admitted", diag.apc_admitted},
                           {"top_plus", diag.top_plus},
                           {"top_minus", diag.top_minus}});
    }

    nlohmann::json summary = {{"records", ds.size()}};
    if (head.hallucination_token && !ds.empty()) {
      const double n = static_cast<double>(ds.size());
      const double rate = static_cast<double>(hall) / n;
      const double base_rate = static_cast<double>(hall_baseline) / n;
      summary["hallucination_token"] = *head.hallucination_token;
      summary["hallucination_rate"] = rate;
      summary["baseline_hallucination_rate"] = base_rate;
      summary["relative_reduction"] = nullptr;
      if (base_rate > 0.0) summary["relative_reduction"] = (base_rate - rate) / base_rate;
    }
    const nlohmann::json result = {
        {"config", to_json(cfg)},
        {"gamma_effective", calibration.gamma},
        {"gamma_calibration", {{"factor", calibration.factor}, {"formula", calibration.formula}}},
        {"summary", summary},
        {"decisions", decisions}};
    write_json(result, dir_out / "decisions.json");

    auto m = start_manifest("intervene");
    m.config = to_json(cfg);
    m.config["gamma_effective"] = calibration.gamma;
    m.inputs = {{"data", data}, {"head", head_path}};
    if (!direction_path.empty()) m.inputs["direction"] = direction_path;
    m.outputs = {{"decisions", (dir_out / "decisions.json").string()}};
    m.duration_seconds = clock.seconds();
    write_manifest(m, dir_out);

    os << "decoded " << ds.size() << " records (mode=" << to_string(cfg.mode) << ")";
    if (summary.contains("hallucination_rate")) {
      os << " hallucination rate " << summary["baseline_hallucination_rate"].get<double>()
         << " -> " << summary["hallucination_rate"].get<double>();
    }
    os << "\n";
    return kExitOk;
  }
};

// ---- layers ----------------------------------------------------------------

struct Layers {
  std::vector<std::string> data;
  std::string out, format = "csv";
  bool pending = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("layers", "Max-activation statistics per layer and label");
    cmd->add_option("--data", data, "AODA files, one per layer")->required();
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_option("--format", format, "csv | json")->capture_default_str();
    cmd->callback([this] { pending = true; });
  }

  int execute(std::ostream& os) {
    Stopwatch clock;
    const ReportFormat fmt = parse_format(format);
    std::map<int, ActivationDataset> by_layer;
    for (const auto& path : data) {
      auto ds = load_dataset(path);
      const int layer = ds.layer();
      if (!by_layer.emplace(layer, std::move(ds)).second) {
        fail(ErrorKind::kInvalidArgument, "two inputs claim layer " + std::to_string(layer));
      }
    }
    const fs::path dir(out);
    ensure_dir(dir);
    const auto result = layerwise_max_stats(by_layer);
    const fs::path file = dir / (fmt == ReportFormat::kCsv ? "layers.csv" : "layers.json");
    emit_report(result.stats, file, fmt);

    auto m = start_manifest("layers");
    m.config = {{"format", format}, {"skipped_zero_vectors", result.skipped_zero_vectors}};
    for (std::size_t i = 0; i < data.size(); ++i) m.inputs["data" + std::to_string(i)] = data[i];
    m.outputs = {{"report", file.string()}};
    m.duration_seconds = clock.seconds();
    write_manifest(m, dir);
    if (result.skipped_zero_vectors > 0) {
      os << "warning: skipped " << result.skipped_zero_vectors << " zero vectors\n";
    }
    os << "wrote " << result.stats.size() << " rows to " << file.string() << "\n";
    return kExitOk;
  }
};

// ---- transfer --------------------------------------------------------------

struct Transfer {
  InterventionFlags flags;
  std::vector<std::string> sources, targets;
  std::string out, format = "csv";
  bool pending = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("transfer", "Cross-split transfer matrix of directions");
    cmd->add_option("--source", sources, "NAME=direction.json")->required();
    cmd->add_option("--target", targets, "NAME=data.aoda,head.json")->required();
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_option("--format", format, "csv | json")->capture_default_str();
    flags.add(*cmd);
    cmd->callback([this] { pending = true; });
  }

  int execute(std::ostream& os) {
    Stopwatch clock;
    const InterventionConfig cfg = flags.resolve();
    const ReportFormat fmt = parse_format(format);
    std::map<std::string, Direction> dirs;
    std::map<std::string, TransferTarget> sets;
    RunManifest m = start_manifest("transfer");
    for (const auto& s : sources) {
      const auto [name, path] = split_once(s, '=', "--source");
      dirs[name] = load_direction(path);
      m.inputs["source:" + name] = path;
    }
    for (const auto& t : targets) {
      const auto [name, rest] = split_once(t, '=', "--target");
      const auto [data_path, head_path] = split_once(rest, ',', "--target");
      sets[name] = TransferTarget{load_dataset(data_path), load_head(head_path)};
      m.inputs["target:" + name] = rest;
    }
    const fs::path dir(out);
    ensure_dir(dir);
    const auto cells = transfer_matrix(dirs, sets, cfg);
    const fs::path file = dir / (fmt == ReportFormat::kCsv ? "transfer.csv" : "transfer.json");
    emit_report(cells, file, fmt);

    m.config = to_json(cfg);
    m.config["format"] = format;
    m.config["metric"] = "factual_rate";
    m.outputs = {{"report", file.string()}};
    m.duration_seconds = clock.seconds();
    write_manifest(m, dir);
    os << "wrote " << cells.size() << " cells to " << file.string() << "\n";
    return kExitOk;
  }
};

// ---- audit -----------------------------------------------------------------

struct Audit {
  TrainFlags flags;
  std::string data, direction_path, out;
  bool pending = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("audit", "Residual leakage audit of a direction");
    cmd->add_option("--data", data, "AODA file")->required();
    cmd->add_option("--direction", direction_path, "direction.json")->required();
    cmd->add_option("--out", out, "Output directory")->required();
    flags.add(*cmd);
    cmd->callback([this] { pending = true; });
  }

  int execute(std::ostream& os) {
    Stopwatch clock;
    const TrainConfig cfg = flags.resolve();
    const auto ds = load_dataset(data);
    const auto dir = load_direction(direction_path);
    const fs::path dir_out(out);
    ensure_dir(dir_out);
    const double auc = residual_leakage_audit(dir, ds, cfg);
    write_json({{"auc", auc}, {"records", ds.size()}, {"probe", to_json(cfg)}},
               dir_out / "audit.json");

    auto m = start_manifest("audit");
    m.config = to_json(cfg);
    m.seed = cfg.seed;
    m.inputs = {{"data", data}, {"direction", direction_path}};
    m.outputs = {{"audit", (dir_out / "audit.json").string()}};
    m.duration_seconds = clock.seconds();
    write_manifest(m, dir_out);
    os << "residual leakage AUC " << auc << "\n";
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial orthogonal disentanglement toolkit", "aod"};
  app.set_version_flag("--version", AOD_VERSION);
  app.require_subcommand(1);

  SynthGen synth;
  Train train;
  Intervene intervene;
  Layers layers;
  Transfer transfer;
  Audit audit;
  synth.add(app);
  train.add(app);
  intervene.add(app);
  layers.add(app);
  transfer.add(app);
  audit.add(app);

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  if (args.empty()) argv.push_back("aod");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << AOD_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (synth.pending) return synth.execute(out);
    if (train.pending) return train.execute(out);
    if (intervene.pending) return intervene.execute(out);
    if (layers.pending) return layers.execute(out);
    if (transfer.pending) return transfer.execute(out);
    if (audit.pending) return audit.execute(out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << "usage error: no command given\n";
  return kExitUsage;
}

}  // namespace aod::cli
