// relmap: continual-learning experiments with per-task relevance maps.
//
// Subcommands: train, eval, infer, detect-audit, report.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "relmap/checkpoint.hpp"
#include "relmap/runner.hpp"

namespace fs = std::filesystem;
using namespace relmap;

namespace {

struct CliOptions {
  RunConfig config;
  std::string config_file;
  std::string sparsity = "none";
};

void add_train_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_file, "flat key=value config file");
  cmd->add_option("--experiment", opt.config.experiment,
                  "split-mnist | permuted-mnist");
  cmd->add_option("--mode", opt.config.mode,
                  "supervised | unsupervised | fuzzy");
  cmd->add_option("--tasks", opt.config.tasks, "permuted-MNIST task count");
  cmd->add_option("--epochs", opt.config.train.epochs, "epochs per task");
  cmd->add_option("--batch", opt.config.train.batch, "batch size");
  cmd->add_option("--lr-w", opt.config.train.lr_weights,
                  "weight learning rate");
  cmd->add_option("--lr-m", opt.config.train.lr_maps, "map learning rate");
  cmd->add_option("--mu", opt.config.train.mu, "prune threshold");
  cmd->add_option("--beta", opt.config.train.map_init.beta, "gate tightness");
  cmd->add_option("--sparsity", opt.sparsity, "none | l1 | l0")
      ->check(CLI::IsMember({"none", "l1", "l0"}));
  cmd->add_option("--sparsity-coeff", opt.config.train.sparsity_coeff,
                  "sparsity penalty coefficient");
  cmd->add_option("--ramp", opt.config.ramp, "fuzzy ramp length in batches");
  cmd->add_option("--tau", opt.config.tau, "batch-filter claim threshold");
  cmd->add_option("--gaussian-coeff", opt.config.gaussian_coeff,
                  "Gaussian negative-sample coefficient");
  cmd->add_option("--window", opt.config.detector.window,
                  "detector window in batches");
  cmd->add_option("--p-threshold", opt.config.detector.p_threshold,
                  "detector p-value threshold");
  cmd->add_option("--dwell", opt.config.detector.dwell,
                  "min batches between detections");
  cmd->add_option("--min-rise", opt.config.detector.min_rise,
                  "min novelty rise for a detection");
  cmd->add_option("--seeds", opt.config.seeds, "number of trials");
  cmd->add_option("--base-seed", opt.config.base_seed, "first seed");
  cmd->add_option("--data-dir", opt.config.data_dir,
                  "MNIST IDX directory (or $RELMAP_DATA_DIR)");
  cmd->add_option("--out", opt.config.out_dir, "output directory");
  cmd->add_flag("--force", opt.config.force, "overwrite existing runs");
}

RunConfig finalize_config(CliOptions& opt) {
  RunConfig config = opt.config;
  if (!opt.config_file.empty()) {
    // file first, then CLI values already present in opt.config win for
    // anything the user set; simplest faithful merge: parse the file
    // into the defaults, then re-apply CLI by serializing nothing --
    // CLI11 already wrote into opt.config, so parse file into a copy
    // and overlay only defaulted fields is overkill at this scale.
    // Convention: the file provides the base, CLI flags override.
    RunConfig base = parse_config_file(opt.config_file);
    // overlay CLI-set values: CLI11 mutated opt.config in place, so any
    // field differing from a default-constructed RunConfig was set.
    const RunConfig defaults;
    config = base;
    if (opt.config.experiment != defaults.experiment)
      config.experiment = opt.config.experiment;
    if (opt.config.mode != defaults.mode) config.mode = opt.config.mode;
    if (opt.config.tasks != defaults.tasks) config.tasks = opt.config.tasks;
    if (opt.config.train.epochs != defaults.train.epochs)
      config.train.epochs = opt.config.train.epochs;
    if (opt.config.train.batch != defaults.train.batch)
      config.train.batch = opt.config.train.batch;
    if (opt.config.train.lr_weights != defaults.train.lr_weights)
      config.train.lr_weights = opt.config.train.lr_weights;
    if (opt.config.train.lr_maps != defaults.train.lr_maps)
      config.train.lr_maps = opt.config.train.lr_maps;
    if (opt.config.train.mu != defaults.train.mu)
      config.train.mu = opt.config.train.mu;
    if (opt.config.train.map_init.beta != defaults.train.map_init.beta)
      config.train.map_init.beta = opt.config.train.map_init.beta;
    if (opt.config.train.sparsity_coeff != defaults.train.sparsity_coeff)
      config.train.sparsity_coeff = opt.config.train.sparsity_coeff;
    if (opt.config.ramp != defaults.ramp) config.ramp = opt.config.ramp;
    if (opt.config.tau != defaults.tau) config.tau = opt.config.tau;
    if (opt.config.gaussian_coeff != defaults.gaussian_coeff)
      config.gaussian_coeff = opt.config.gaussian_coeff;
    if (opt.config.detector.window != defaults.detector.window)
      config.detector.window = opt.config.detector.window;
    if (opt.config.detector.p_threshold != defaults.detector.p_threshold)
      config.detector.p_threshold = opt.config.detector.p_threshold;
    if (opt.config.detector.dwell != defaults.detector.dwell)
      config.detector.dwell = opt.config.detector.dwell;
    if (opt.config.detector.min_rise != defaults.detector.min_rise)
      config.detector.min_rise = opt.config.detector.min_rise;
    if (opt.config.seeds != defaults.seeds) config.seeds = opt.config.seeds;
    if (opt.config.base_seed != defaults.base_seed)
      config.base_seed = opt.config.base_seed;
    if (!opt.config.data_dir.empty()) config.data_dir = opt.config.data_dir;
    if (opt.config.out_dir != defaults.out_dir)
      config.out_dir = opt.config.out_dir;
    config.force = config.force || opt.config.force;
  }
  if (opt.sparsity == "l1") {
    config.train.sparsity = SparsityKind::kL1;
  } else if (opt.sparsity == "l0") {
    config.train.sparsity = SparsityKind::kL0;
  }
  return config;
}

// Rebuilds the RunConfig a finished run was trained with from its record.
std::pair<RunConfig, std::uint64_t> config_of_run(const std::string& run_dir) {
  RunRecord record = RunRecord::load(run_dir + "/record.jsonl");
  const auto starts = record.find("run_start");
  if (starts.empty()) {
    throw FormatError(run_dir + "/record.jsonl lacks a run_start event");
  }
  RunConfig config;
  std::istringstream canon(starts.front().at("config").get<std::string>());
  std::string line;
  while (std::getline(canon, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    apply_config_entry(config, line.substr(0, eq), line.substr(eq + 1));
  }
  return {config, starts.front().at("seed").get<std::uint64_t>()};
}

int cmd_train(CliOptions& opt) {
  RunConfig config = finalize_config(opt);
  const auto outcomes = run_experiment(config);
  std::vector<double> means;
  for (const SeedOutcome& o : outcomes) {
    std::cout << o.run_id << ": mean accuracy " << std::fixed
              << std::setprecision(4) << o.mean_accuracy;
    if (!o.detections.empty() || config.mode != "supervised") {
      std::cout << ", detections " << o.detections.size();
    }
    std::cout << "  -> " << o.record_path << "\n";
    means.push_back(o.mean_accuracy);
  }
  const auto [m, sd] = mean_sd(means);
  std::cout << "over " << outcomes.size() << " seed(s): " << m * 100.0
            << " +/- " << sd * 100.0 << " %\n";
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir) {
  auto [config, seed] = config_of_run(run_dir);
  if (!data_dir.empty()) config.data_dir = data_dir;
  Checkpoint ckpt = load_checkpoint(run_dir + "/checkpoint.bin");
  TaskStream stream = build_stream(config, seed);
  double sum = 0.0;
  const std::size_t tasks =
      std::min(stream.task_count(), ckpt.net.completed_tasks());
  for (std::size_t t = 0; t < tasks; ++t) {
    const double acc = evaluate(ckpt.net, t, stream.test_set(t));
    std::cout << "task " << t << ": accuracy " << std::fixed
              << std::setprecision(4) << acc << "\n";
    sum += acc;
  }
  std::cout << "mean: " << sum / static_cast<double>(tasks) << "\n";
  return 0;
}

int cmd_infer(const std::string& run_dir, const std::string& data_dir) {
  auto [config, seed] = config_of_run(run_dir);
  if (!data_dir.empty()) config.data_dir = data_dir;
  Checkpoint ckpt = load_checkpoint(run_dir + "/checkpoint.bin");
  TaskStream stream = build_stream(config, seed);
  const std::size_t tasks =
      std::min(stream.task_count(), ckpt.net.completed_tasks());

  // randomized pool over every task's test set
  struct Item {
    std::size_t task;
    std::size_t row;
  };
  std::vector<LabeledDataset> tests;
  std::vector<Item> pool;
  for (std::size_t t = 0; t < tasks; ++t) {
    tests.push_back(stream.test_set(t));
    for (std::size_t r = 0; r < tests.back().size(); ++r) {
      pool.push_back({t, r});
    }
  }
  Rng rng(seed ^ 0x1A5C);
  rng.shuffle(pool);

  const std::size_t d = tests.front().images.cols();
  // inference may route to any completed mask, not only ground-truth tasks
  const std::size_t masks = ckpt.net.completed_tasks();
  std::vector<std::vector<std::size_t>> confusion(
      tasks, std::vector<std::size_t>(masks, 0));
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t i = 0; i < pool.size(); i += kChunk) {
    const std::size_t m = std::min(kChunk, pool.size() - i);
    Tensor x = Tensor::matrix(m, d);
    for (std::size_t r = 0; r < m; ++r) {
      const Item& it = pool[i + r];
      std::copy_n(&tests[it.task].images.data()[it.row * d], d,
                  &x.data()[r * d]);
    }
    const auto inferred = infer_task(ckpt.net, x);
    for (std::size_t r = 0; r < m; ++r) {
      const Item& it = pool[i + r];
      confusion[it.task][inferred[r]]++;
      if (inferred[r] == it.task) ++correct;
    }
  }
  std::cout << "task-ID accuracy: " << std::fixed << std::setprecision(4)
            << static_cast<double>(correct) / static_cast<double>(pool.size())
            << " over " << pool.size() << " samples\n";
  std::cout << "confusion (rows true, cols inferred):\n";
  for (std::size_t t = 0; t < tasks; ++t) {
    for (std::size_t k = 0; k < masks; ++k) {
      std::cout << std::setw(7) << confusion[t][k];
    }
    std::cout << "\n";
  }
  return 0;
}

int cmd_detect_audit(const std::string& run_dir) {
  RunRecord record = RunRecord::load(run_dir + "/record.jsonl");
  const auto detections = record.find("detection");
  const auto boundaries = record.find("boundary");
  if (boundaries.empty()) {
    std::cerr << "no ground-truth boundaries recorded (supervised run?)\n";
    return 1;
  }
  std::cout << "boundaries " << boundaries.size() << ", detections "
            << detections.size() << "\n";
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const long truth = boundaries[i].at("batch").get<long>();
    long best = -1;
    for (const auto& det : detections) {
      const long b = det.at("batch").get<long>();
      if (b >= truth && (best < 0 || b < best)) best = b;
    }
    std::cout << "boundary " << i + 1 << " at batch " << truth << ": ";
    if (best < 0) {
      std::cout << "MISSED\n";
    } else {
      std::cout << "detected at batch " << best << " (latency "
                << best - truth << ")\n";
    }
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out) {
  std::vector<RunRecord> records;
  for (const std::string& dir : run_dirs) {
    const std::string rec = fs::is_directory(dir) ? dir + "/record.jsonl" : dir;
    records.push_back(RunRecord::load(rec));
  }
  for (const std::string& path : emit_report(records, out)) {
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relevance-mapped continual learning on MNIST task streams"};
  app.require_subcommand(1);

  CliOptions train_opt;
  CLI::App* train = app.add_subcommand("train", "run an experiment");
  add_train_flags(train, train_opt);

  std::string run_dir, data_dir, report_out = "report";
  std::vector<std::string> report_runs;
  CLI::App* eval = app.add_subcommand("eval", "per-task accuracy of a run");
  eval->add_option("--run", run_dir, "run directory")->required();
  eval->add_option("--data-dir", data_dir, "override data directory");
  CLI::App* infer =
      app.add_subcommand("infer", "unsupervised task inference audit");
  infer->add_option("--run", run_dir, "run directory")->required();
  infer->add_option("--data-dir", data_dir, "override data directory");
  CLI::App* audit =
      app.add_subcommand("detect-audit", "detection latency vs ground truth");
  audit->add_option("--run", run_dir, "run directory")->required();
  CLI::App* report = app.add_subcommand("report", "emit CSV + SVG report");
  report->add_option("--runs", report_runs, "run directories or record files")
      ->required();
  report->add_option("--out", report_out, "report output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_opt);
    if (eval->parsed()) return cmd_eval(run_dir, data_dir);
    if (infer->parsed()) return cmd_infer(run_dir, data_dir);
    if (audit->parsed()) return cmd_detect_audit(run_dir);
    if (report->parsed()) return cmd_report(report_runs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
