#include "relmap/runner.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relmap/checkpoint.hpp"

namespace relmap {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (experiment != "split-mnist" && experiment != "permuted-mnist") {
    throw ConfigError("unknown experiment '" + experiment + "'");
  }
  if (mode != "supervised" && mode != "unsupervised" && mode != "fuzzy") {
    throw ConfigError("unknown mode '" + mode + "'");
  }
  if (experiment == "permuted-mnist" && tasks == 0) {
    throw ConfigError("permuted-mnist needs at least one task");
  }
  if (seeds == 0) throw ConfigError("need at least one seed");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  if (mode == "fuzzy" && ramp == 0) {
    throw ConfigError("fuzzy mode needs ramp >= 1");
  }
  train.validate();
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "experiment=" << experiment << "\nmode=" << mode
     << "\ntasks=" << tasks << "\nepochs=" << train.epochs
     << "\nfull_scale_epochs=" << train.full_scale_epochs
     << "\nbatch=" << train.batch << "\nlr_w=" << train.lr_weights
     << "\nlr_m=" << train.lr_maps << "\nmu=" << train.mu
     << "\nmap_mean=" << train.map_init.mean << "\nmap_sd=" << train.map_init.sd
     << "\nbeta=" << train.map_init.beta
     << "\nlearn_beta=" << (train.learn_beta ? 1 : 0) << "\nsparsity="
     << (train.sparsity == SparsityKind::kNone  ? "none"
         : train.sparsity == SparsityKind::kL1 ? "l1"
                                               : "l0")
     << "\nsparsity_coeff=" << train.sparsity_coeff
     << "\npatience=" << train.patience << "\nwindow=" << detector.window
     << "\np_threshold=" << detector.p_threshold
     << "\ndwell=" << detector.dwell << "\nmin_rise=" << detector.min_rise
     << "\ntau=" << tau
     << "\ngaussian_coeff=" << gaussian_coeff << "\nramp=" << ramp
     << "\nmax_detections=" << max_detections << "\nseeds=" << seeds
     << "\nbase_seed=" << base_seed << "\n";
  return os.str();
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : canonical()) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void apply_config_entry(RunConfig& config, const std::string& key,
                        const std::string& value) {
  auto to_u = [&](const std::string& v) -> std::uint64_t {
    return std::stoull(v);
  };
  auto to_d = [&](const std::string& v) -> double { return std::stod(v); };
  if (key == "experiment") {
    config.experiment = value;
  } else if (key == "mode") {
    config.mode = value;
  } else if (key == "tasks") {
    config.tasks = to_u(value);
  } else if (key == "epochs") {
    config.train.epochs = to_u(value);
  } else if (key == "full_scale_epochs") {
    config.train.full_scale_epochs = to_u(value);
  } else if (key == "batch") {
    config.train.batch = to_u(value);
  } else if (key == "lr_w") {
    config.train.lr_weights = to_d(value);
  } else if (key == "lr_m") {
    config.train.lr_maps = to_d(value);
  } else if (key == "mu") {
    config.train.mu = to_d(value);
  } else if (key == "map_mean") {
    config.train.map_init.mean = to_d(value);
  } else if (key == "map_sd") {
    config.train.map_init.sd = to_d(value);
  } else if (key == "beta") {
    config.train.map_init.beta = to_d(value);
  } else if (key == "learn_beta") {
    config.train.learn_beta = value == "1" || value == "true";
  } else if (key == "sparsity") {
    if (value == "none") {
      config.train.sparsity = SparsityKind::kNone;
    } else if (value == "l1") {
      config.train.sparsity = SparsityKind::kL1;
    } else if (value == "l0") {
      config.train.sparsity = SparsityKind::kL0;
    } else {
      throw ConfigError("sparsity must be none|l1|l0, got '" + value + "'");
    }
  } else if (key == "sparsity_coeff") {
    config.train.sparsity_coeff = to_d(value);
  } else if (key == "patience") {
    config.train.patience = to_u(value);
  } else if (key == "window") {
    config.detector.window = to_u(value);
  } else if (key == "p_threshold") {
    config.detector.p_threshold = to_d(value);
  } else if (key == "dwell") {
    config.detector.dwell = to_u(value);
  } else if (key == "min_rise") {
    config.detector.min_rise = to_d(value);
  } else if (key == "tau") {
    config.tau = to_d(value);
  } else if (key == "gaussian_coeff") {
    config.gaussian_coeff = to_d(value);
  } else if (key == "ramp") {
    config.ramp = to_u(value);
  } else if (key == "max_detections") {
    config.max_detections = to_u(value);
  } else if (key == "seeds") {
    config.seeds = to_u(value);
  } else if (key == "base_seed") {
    config.base_seed = to_u(value);
  } else if (key == "data_dir") {
    config.data_dir = value;
  } else if (key == "out") {
    config.out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    // trim
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream os;
      os << path << ":" << lineno << ": expected key=value";
      throw ConfigError(os.str());
    }
    auto strip = [](std::string s) {
      const auto sb = s.find_first_not_of(" \t");
      if (sb == std::string::npos) return std::string();
      const auto se = s.find_last_not_of(" \t");
      return s.substr(sb, se - sb + 1);
    };
    apply_config_entry(base, strip(line.substr(0, eq)),
                       strip(line.substr(eq + 1)));
  }
  return base;
}

std::string resolve_data_dir(const RunConfig& config) {
  if (!config.data_dir.empty()) return config.data_dir;
  if (const char* env = std::getenv("RELMAP_DATA_DIR")) return env;
  throw ConfigError(
      "no data directory: pass --data-dir or set RELMAP_DATA_DIR");
}

namespace {

std::string find_idx_file(const std::string& dir, const std::string& stem) {
  for (const char* suffix : {"", ".gz"}) {
    const std::string p = dir + "/" + stem + suffix;
    if (fs::exists(p)) return p;
  }
  throw IoError("missing " + stem + "[.gz] under " + dir);
}

}  // namespace

LabeledDataset load_mnist_train(const std::string& dir) {
  return load_idx(find_idx_file(dir, "train-images-idx3-ubyte"),
                  find_idx_file(dir, "train-labels-idx1-ubyte"));
}

LabeledDataset load_mnist_test(const std::string& dir) {
  return load_idx(find_idx_file(dir, "t10k-images-idx3-ubyte"),
                  find_idx_file(dir, "t10k-labels-idx1-ubyte"));
}

TaskStream build_stream(const RunConfig& config, std::uint64_t seed) {
  const std::string dir = resolve_data_dir(config);
  LabeledDataset train = load_mnist_train(dir);
  LabeledDataset test = load_mnist_test(dir);
  TaskStream stream =
      config.experiment == "split-mnist"
          ? TaskStream::make_split(std::move(train), std::move(test), seed,
                                   config.train.batch)
          : TaskStream::make_permuted(std::move(train), std::move(test),
                                      config.tasks, seed, config.train.batch);
  if (config.mode == "fuzzy") stream.set_fuzzy(config.ramp);
  return stream;
}

SeedOutcome run_single(const RunConfig& config, std::uint64_t seed) {
  config.validate();
  SeedOutcome outcome;
  outcome.seed = seed;
  {
    std::ostringstream os;
    os << config.experiment << "-" << config.mode << "-s" << seed;
    outcome.run_id = os.str();
  }
  const fs::path run_dir = fs::path(config.out_dir) / outcome.run_id;
  if (fs::exists(run_dir)) {
    if (!config.force) {
      throw IoError("output " + run_dir.string() +
                    " already exists (use --force to overwrite)");
    }
    fs::remove_all(run_dir);
  }
  fs::create_directories(run_dir);
  outcome.record_path = (run_dir / "record.jsonl").string();
  outcome.checkpoint_path = (run_dir / "checkpoint.bin").string();

  const auto t0 = std::chrono::steady_clock::now();
  RunRecord record(outcome.record_path);
  record.append({{"event", "run_start"},
                 {"run_id", outcome.run_id},
                 {"experiment", config.experiment},
                 {"mode", config.mode},
                 {"seed", seed},
                 {"config_hash", config.hash()},
                 {"config", config.canonical()}});

  TaskStream stream = build_stream(config, seed);
  Rng rng(seed);
  MaskedNetwork net = MaskedNetwork::standard_mlp(rng);

  TrainConfig train = config.train;
  train.seed = seed;

  if (config.mode == "supervised") {
    RunSummary summary = run_supervised(net, stream, train, &record);
    outcome.task_accuracy = summary.task_accuracy;
    outcome.mean_accuracy = summary.mean_accuracy;
  } else {
    UnsupervisedConfig ucfg;
    ucfg.train = train;
    ucfg.detector = config.detector;
    ucfg.tau = config.tau;
    ucfg.gaussian_coeff = config.gaussian_coeff;
    if (config.mode == "fuzzy") ucfg.ramp = config.ramp;
    ucfg.epochs_per_task = train.epochs;
    ucfg.max_detections = config.max_detections;
    UnsupervisedReport report = run_unsupervised(net, stream, ucfg, &record);
    outcome.task_accuracy = report.task_accuracy;
    outcome.mean_accuracy = report.mean_accuracy;
    outcome.detections = report.detections;
    outcome.boundaries = report.boundaries;
    for (std::size_t i = 0; i < report.boundaries.size(); ++i) {
      record.append({{"event", "boundary"},
                     {"task", i + 1},
                     {"batch", report.boundaries[i]}});
    }
  }
  record.append({{"event", "run_done"},
                 {"mean_accuracy", outcome.mean_accuracy},
                 {"tasks", net.completed_tasks()},
                 {"sparsity", net.model_sparsity()},
                 {"frozen", net.frozen_count()},
                 {"mask_bytes_per_task", net.footprint().mask_bytes_per_task}});
  save_checkpoint(outcome.checkpoint_path, net, nullptr, &rng, config.hash());

  // wall-clock lives outside the record so replays stay byte-identical
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
  std::ofstream timing(run_dir / "timing.json", std::ios::trunc);
  timing << "{\"wall_seconds\": " << secs << "}\n";
  return outcome;
}

std::vector<SeedOutcome> run_experiment(const RunConfig& config) {
  config.validate();
  std::vector<SeedOutcome> outcomes;
  for (std::size_t i = 0; i < config.seeds; ++i) {
    outcomes.push_back(run_single(config, config.base_seed + i));
  }
  return outcomes;
}

}  // namespace relmap
