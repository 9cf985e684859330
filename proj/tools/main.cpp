#include "reflex/io_util.hpp"
#include "reflex/mlp.hpp"
#include "reflex/robot_model.hpp"
#include "reflex/sim.hpp"
#include "reflex/surrogate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>

namespace {

using namespace reflex;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

json file_fingerprint(const std::string& path) {
  const std::string bytes = read_text_file(path);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a_hash(bytes)));
  return {{"path", path}, {"fnv1a", std::string(buf)}, {"bytes", bytes.size()}};
}

json manifest_header(const std::string& subcommand) {
  json m;
  m["tool"] = "reflex";
  m["version"] = kVersion;
  m["subcommand"] = subcommand;
  return m;
}

void write_manifest(const json& m, const std::string& dir) {
  write_text_file(dir + "/manifest.json", m.dump(2) + "\n");
}

FilterMethod parse_method(const std::string& name) {
  if (name == "barrier") return FilterMethod::Barrier;
  if (name == "cbf") return FilterMethod::Cbf;
  if (name == "none") return FilterMethod::None;
  throw ConfigError("unknown method: " + name);
}

struct TrainArgs {
  std::string which;
  std::string robot;
  int samples = 0;  // 0: generator default
  int epochs = 0;  // 0: per-model default (env 150, self 200)
  int hidden_layers = 4;
  int hidden_width = 256;
  double learning_rate = 3e-3;
  std::uint64_t seed = 1;
  std::string out;
};

int run_train(const TrainArgs& args) {
  std::filesystem::create_directories(args.out);
  const DualArmSystem system = load_dual_arm(args.robot);

  SampleConfig samples;
  samples.seed = args.seed;
  if (args.samples > 0) {
    samples.env_rows = args.samples;
    samples.self_rows = args.samples;
  }
  const bool env = args.which == "env";
  TrainHyper hyper = surrogate_train_hyper(args.seed);
  hyper.epochs = args.epochs > 0 ? args.epochs : (env ? 150 : 200);
  hyper.learning_rate = args.learning_rate;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainingSet set = env ? generate_env_training_data(system.left, samples)
                              : generate_self_training_data(system, samples);
  Mlp<float> model = cast_mlp<float>(
      env ? make_env_model(system.left, args.hidden_layers, args.hidden_width, args.seed)
          : make_self_model(system, args.hidden_layers, args.hidden_width, args.seed));
  const LossHistory history = mlp_train(model, set, hyper);
  const double train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // validation MAE of the distance actually consumed downstream (min over
  // capsules for the environment model)
  const Mlp<double> as_double = cast_mlp<double>(model);
  double val_mae = 0.0;
  for (const int row : set.val_indices) {
    const VecX x = set.inputs.row(row).transpose();
    const VecX pred = mlp_forward(as_double, x);
    val_mae += std::abs(pred.minCoeff() - set.targets.row(row).minCoeff());
  }
  if (!set.val_indices.empty()) val_mae /= static_cast<double>(set.val_indices.size());

  const std::string model_name = env ? "model_env.bin" : "model_self.bin";
  const std::string loss_name = env ? "loss_env.csv" : "loss_self.csv";
  save_mlp(model, args.out + "/" + model_name);
  save_loss_csv(history, args.out + "/" + loss_name);

  json m = manifest_header("train-surrogate");
  m["which"] = args.which;
  m["seed"] = args.seed;
  m["samples"] = env ? samples.env_rows : samples.self_rows;
  m["hyper"] = {{"learning_rate", hyper.learning_rate},
                {"final_lr_fraction", hyper.final_lr_fraction},
                {"batch_size", hyper.batch_size},
                {"epochs", hyper.epochs}};
  m["model"] = {{"hidden_layers", args.hidden_layers}, {"hidden_width", args.hidden_width}};
  m["robot_config"] = json::parse(read_text_file(args.robot));
  m["robot_file"] = file_fingerprint(args.robot);
  m["train_seconds"] = train_seconds;
  m["final_train_mse"] = history.train_mse.back();
  m["final_val_mse"] = history.val_mse.back();
  m["val_mae"] = val_mae;
  m["outputs"] = {model_name, loss_name};
  write_manifest(m, args.out);
  std::printf("trained %s: %.1f s, val mse %.3e, val mae %.4f m\n", args.which.c_str(),
              train_seconds, history.val_mse.back(), val_mae);
  return 0;
}

struct RunArgs {
  std::string robot;
  std::string scenario;
  std::string method = "barrier";
  std::string model_env;
  std::string model_self;
  std::uint64_t seed = 1;
  std::string out;
};

RunLog execute_run(const RunArgs& args, ScenarioConfig& config) {
  const DualArmSystem system = load_dual_arm(args.robot);
  config = load_scenario(args.scenario);
  config.method = parse_method(args.method);
  config.seed = args.seed;

  std::optional<SurrogateModels> models;
  if (config.method != FilterMethod::None) {
    if (args.model_env.empty() || args.model_self.empty())
      throw ConfigError("method " + args.method + " needs --model-env and --model-self");
    SurrogateModels m;
    m.env = load_mlp<float>(args.model_env);
    m.self_arm = load_mlp<float>(args.model_self);
    models = std::move(m);
  }
  return run_scenario(system, models, config);
}

json run_manifest(const RunArgs& args, const ScenarioConfig& config) {
  json m = manifest_header("run");
  m["seed"] = args.seed;
  m["method"] = args.method;
  m["robot_config"] = json::parse(read_text_file(args.robot));
  m["robot_file"] = file_fingerprint(args.robot);
  json scenario_json;
  {
    // effective scenario (seed and method folded in)
    const std::string tmp = args.out + "/.scenario_effective.json";
    save_scenario(config, tmp);
    scenario_json = json::parse(read_text_file(tmp));
    std::filesystem::remove(tmp);
  }
  m["scenario"] = scenario_json;
  m["scenario_file"] = file_fingerprint(args.scenario);
  if (!args.model_env.empty()) m["model_env"] = file_fingerprint(args.model_env);
  if (!args.model_self.empty()) m["model_self"] = file_fingerprint(args.model_self);
  m["outputs"] = {"log.csv", "timing.csv"};
  return m;
}

int run_run(const RunArgs& args) {
  std::filesystem::create_directories(args.out);
  ScenarioConfig config;
  const RunLog log = execute_run(args, config);
  write_text_file(args.out + "/log.csv", run_log_to_csv(log));
  write_text_file(args.out + "/timing.csv", timing_to_csv(log));
  write_manifest(run_manifest(args, config), args.out);
  const MetricsReport metrics = compute_metrics(log);
  std::printf("%s seed %llu: %zu ticks, min env %.4f m, min self %.4f m, mean err %.4f m\n",
              args.method.c_str(), static_cast<unsigned long long>(args.seed), log.ticks.size(),
              metrics.min_env_oracle, metrics.min_self_oracle, metrics.mean_pos_error);
  return 0;
}

struct MetricsArgs {
  std::string log;
  std::string timing;
  std::string out;
};

int run_metrics(const MetricsArgs& args) {
  std::filesystem::create_directories(args.out);
  RunLog log = run_log_from_csv(read_text_file(args.log));
  if (!args.timing.empty()) {
    std::istringstream in(read_text_file(args.timing));
    std::string line;
    std::getline(in, line);  // header
    std::size_t k = 0;
    while (std::getline(in, line) && k < log.ticks.size()) {
      if (line.empty()) continue;
      const auto fields = split(line, ',');
      if (fields.size() != 2) throw ConfigError("bad timing row: " + line);
      log.ticks[k++].solve_time = parse_double(fields[1]);
    }
  }
  const MetricsReport m = compute_metrics(log);
  write_text_file(args.out + "/metrics.csv", metrics_to_csv(m));
  write_text_file(args.out + "/metrics.txt", metrics_to_text(m));
  json manifest = manifest_header("metrics");
  manifest["log_file"] = file_fingerprint(args.log);
  if (!args.timing.empty()) manifest["timing_file"] = file_fingerprint(args.timing);
  manifest["outputs"] = {"metrics.csv", "metrics.txt"};
  write_manifest(manifest, args.out);
  std::fputs(metrics_to_text(m).c_str(), stdout);
  return 0;
}

struct CompareArgs {
  std::string robot;
  std::string scenario;
  std::string model_env;
  std::string model_self;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

int run_compare(const CompareArgs& args) {
  std::filesystem::create_directories(args.out);
  const char* methods[2] = {"barrier", "cbf"};
  std::vector<MetricsReport> reports[2];
  std::vector<std::vector<double>> tick_times[2];

  for (int mi = 0; mi < 2; ++mi) {
    for (const std::uint64_t seed : args.seeds) {
      RunArgs run;
      run.robot = args.robot;
      run.scenario = args.scenario;
      run.method = methods[mi];
      run.model_env = args.model_env;
      run.model_self = args.model_self;
      run.seed = seed;
      run.out = args.out + "/" + methods[mi] + "_seed" + std::to_string(seed);
      std::filesystem::create_directories(run.out);
      ScenarioConfig config;
      const RunLog log = execute_run(run, config);
      write_text_file(run.out + "/log.csv", run_log_to_csv(log));
      write_text_file(run.out + "/timing.csv", timing_to_csv(log));
      write_manifest(run_manifest(run, config), run.out);
      reports[mi].push_back(compute_metrics(log));
      std::vector<double> times;
      for (const auto& rec : log.ticks) times.push_back(rec.solve_time);
      tick_times[mi].push_back(std::move(times));
    }
  }

  const auto method_summary = [&](int mi) {
    std::vector<double> all_times;
    double err = 0.0, accel = 0.0;
    for (std::size_t s = 0; s < reports[mi].size(); ++s) {
      all_times.insert(all_times.end(), tick_times[mi][s].begin(), tick_times[mi][s].end());
      err += reports[mi][s].mean_pos_error;
      accel += reports[mi][s].max_accel;
    }
    std::sort(all_times.begin(), all_times.end());
    const double median = all_times.empty() ? 0.0 : all_times[all_times.size() / 2];
    const double n = static_cast<double>(reports[mi].size());
    return std::array<double, 3>{median, err / n, accel / n};
  };

  std::string csv = "method,median_opt_time_s,mean_pos_error_m,max_accel_mps2\n";
  std::array<double, 3> summary[2];
  for (int mi = 0; mi < 2; ++mi) {
    summary[mi] = method_summary(mi);
    csv += std::string(methods[mi]) + "," + format_double(summary[mi][0]) + "," +
           format_double(summary[mi][1]) + "," + format_double(summary[mi][2]) + "\n";
  }
  write_text_file(args.out + "/comparison.csv", csv);

  std::string per_seed = "method,seed,median_opt_time_s,mean_pos_error_m,max_accel_mps2\n";
  int accel_ordering = 0, time_ordering = 0;
  for (std::size_t s = 0; s < args.seeds.size(); ++s) {
    double medians[2];
    for (int mi = 0; mi < 2; ++mi) {
      std::vector<double> times = tick_times[mi][s];
      std::sort(times.begin(), times.end());
      medians[mi] = times.empty() ? 0.0 : times[times.size() / 2];
      per_seed += std::string(methods[mi]) + "," + std::to_string(args.seeds[s]) + "," +
                  format_double(medians[mi]) + "," +
                  format_double(reports[mi][s].mean_pos_error) + "," +
                  format_double(reports[mi][s].max_accel) + "\n";
    }
    if (reports[0][s].max_accel <= reports[1][s].max_accel) ++accel_ordering;
    if (medians[0] < medians[1]) ++time_ordering;
  }
  write_text_file(args.out + "/comparison_per_seed.csv", per_seed);

  json m = manifest_header("compare");
  json seeds_json = json::array();
  for (const auto seed : args.seeds) seeds_json.push_back(seed);
  m["seeds"] = seeds_json;
  m["robot_file"] = file_fingerprint(args.robot);
  m["scenario_file"] = file_fingerprint(args.scenario);
  m["model_env"] = file_fingerprint(args.model_env);
  m["model_self"] = file_fingerprint(args.model_self);
  m["robot_config"] = json::parse(read_text_file(args.robot));
  m["scenario"] = json::parse(read_text_file(args.scenario));
  m["barrier_max_accel_leq_cbf_seeds"] = accel_ordering;
  m["barrier_median_time_lt_cbf_seeds"] = time_ordering;
  m["outputs"] = {"comparison.csv", "comparison_per_seed.csv"};
  write_manifest(m, args.out);

  std::fputs(csv.c_str(), stdout);
  std::printf("barrier max-accel <= cbf in %d/%zu seeds; barrier median time < cbf in %d/%zu\n",
              accel_ordering, args.seeds.size(), time_ordering, args.seeds.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-arm reactive collision avoidance: surrogate training, scenario runs, metrics"};
  app.require_subcommand(1);

  TrainArgs train;
  CLI::App* train_cmd =
      app.add_subcommand("train-surrogate", "train a distance surrogate against the oracle");
  train_cmd->add_option("which", train.which, "env or self")
      ->required()
      ->check(CLI::IsMember({"env", "self"}));
  train_cmd->add_option("--robot", train.robot, "robot config file")->required();
  train_cmd->add_option("--samples", train.samples, "training rows (default: generator default)");
  train_cmd->add_option("--epochs", train.epochs, "training epochs");
  train_cmd->add_option("--hidden-layers", train.hidden_layers, "hidden layer count");
  train_cmd->add_option("--hidden-width", train.hidden_width, "hidden layer width");
  train_cmd->add_option("--learning-rate", train.learning_rate, "initial learning rate");
  train_cmd->add_option("--seed", train.seed, "seed")->required();
  train_cmd->add_option("--out", train.out, "output directory")->required();

  RunArgs run;
  CLI::App* run_cmd = app.add_subcommand("run", "run one closed-loop scenario");
  run_cmd->add_option("--robot", run.robot, "robot config file")->required();
  run_cmd->add_option("--scenario", run.scenario, "scenario config file")->required();
  run_cmd->add_option("--method", run.method, "barrier|cbf|none")
      ->check(CLI::IsMember({"barrier", "cbf", "none"}));
  run_cmd->add_option("--model-env", run.model_env, "environment distance model");
  run_cmd->add_option("--model-self", run.model_self, "self distance model");
  run_cmd->add_option("--seed", run.seed, "seed")->required();
  run_cmd->add_option("--out", run.out, "output directory")->required();

  MetricsArgs metrics;
  CLI::App* metrics_cmd =
      app.add_subcommand("metrics", "recompute the metrics report from a stored log");
  metrics_cmd->add_option("--log", metrics.log, "log.csv from a run")->required();
  metrics_cmd->add_option("--timing", metrics.timing, "timing.csv from the same run");
  metrics_cmd->add_option("--out", metrics.out, "output directory")->required();

  CompareArgs compare;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "paired barrier/cbf runs over a seed list");
  compare_cmd->add_option("--robot", compare.robot, "robot config file")->required();
  compare_cmd->add_option("--scenario", compare.scenario, "scenario config file")->required();
  compare_cmd->add_option("--model-env", compare.model_env, "environment distance model")
      ->required();
  compare_cmd->add_option("--model-self", compare.model_self, "self distance model")->required();
  compare_cmd->add_option("--seeds", compare.seeds, "seed list")->required()->delimiter(',');
  compare_cmd->add_option("--out", compare.out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (*train_cmd) return run_train(train);
    if (*run_cmd) return run_run(run);
    if (*metrics_cmd) return run_metrics(metrics);
    if (*compare_cmd) return run_compare(compare);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
