// Command-line front end. Uses only the C interface of the library.
#include <trajfusion.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// A failed library call, carrying its status and message.
struct CallError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(tfn_status s) {
  if (s != TFN_OK) throw CallError(std::string(tfn_status_name(s)) + ": " + tfn_last_error());
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Config = Handle<tfn_config, tfn_config_free>;
using Dataset = Handle<tfn_dataset, tfn_dataset_free>;
using Model = Handle<tfn_model, tfn_model_free>;

/// Takes ownership of a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  tfn_string_free(s);
  return out;
}

json take_json(char* s) { return json::parse(take(s)); }

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Options shared by the commands that build a training configuration.
struct ConfigOptions {
  std::string config_file;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::optional<int> scenario;
  bool deterministic = false;
  std::vector<std::string> overrides;

  void add_to(CLI::App* app, bool with_preset = true) {
    app->add_option("--config", config_file, "key=value configuration file (see README)")->check(CLI::ExistingFile);
    if (with_preset) {
      app->add_option("--preset", preset, "base settings: reference (full-scale schedule) or desk (small synthetic runs)")
          ->check(CLI::IsMember({"reference", "desk"}));
    }
    app->add_option("--seed", seed, "random seed");
    app->add_option("--variant", variant, "model size: full or small")->check(CLI::IsMember({"full", "small"}));
    app->add_option("--scenario", scenario, "ablation scenario 1-6 (omit for the base model)")
        ->check(CLI::Range(1, 6));
    app->add_flag("--deterministic", deterministic, "single-threaded BLAS for bitwise reproducible runs");
    app->add_option("--set", overrides, "extra key=value setting, repeatable; overrides the file");
  }

  /// Defaults, then the file, then the command line.
  void apply(Config& cfg, const char* base_preset = "reference") const {
    if (cfg.get() == nullptr) check(tfn_config_create(preset.empty() ? base_preset : preset.c_str(), cfg.out()));
    if (!config_file.empty()) {
      check(preset.empty() ? tfn_config_apply_file(cfg.get(), config_file.c_str())
                           : tfn_config_apply_file_keys(cfg.get(), config_file.c_str()));
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw CallError("--set expects key=value, got '" + kv + "'");
      check(tfn_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    if (seed) check(tfn_config_set(cfg.get(), "seed", std::to_string(*seed).c_str()));
    if (!variant.empty()) check(tfn_config_set(cfg.get(), "variant", variant.c_str()));
    if (scenario) check(tfn_config_set(cfg.get(), "scenario", std::to_string(*scenario).c_str()));
    if (deterministic) check(tfn_config_set(cfg.get(), "deterministic", "true"));
  }
};

json config_json(const Config& cfg) {
  char* s = nullptr;
  check(tfn_config_to_json(cfg.get(), &s));
  return take_json(s);
}

/// Records what a run did: command line, resolved configuration and seed.
void write_run_manifest(const std::string& out, const std::string& command, const std::vector<std::string>& args,
                        json resolved) {
  json j = {{"tool", "trajfusion"}, {"version", tfn_version()}, {"command", command}, {"args", args}};
  for (auto it = resolved.begin(); it != resolved.end(); ++it) j[it.key()] = it.value();
  write_text(fs::path(out) / "run.json", j.dump(2) + "\n");
}

void print_progress(const char* stage, int epoch, void*) {
  std::fprintf(stderr, "  %s epoch %d done\n", stage, epoch);
}

void open_dataset(Dataset& d, const std::string& dir, const Config& cfg) {
  check(tfn_dataset_open(absolute(dir).c_str(), cfg.get(), d.out()));
}

std::string metrics_line(const json& m) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << "accuracy " << m.at("accuracy").get<double>() << "  f1 " << m.at("f1").get<double>()
     << "  precision " << m.at("precision").get<double>() << "  recall " << m.at("recall").get<double>() << "  auc ";
  if (m.at("auc").is_null()) {
    os << "undefined";
  } else {
    os << m.at("auc").get<double>();
  }
  return os.str();
}

/// Dataset directory recorded in a manifest unless one is given.
std::string data_dir_for(const std::string& given, const json& manifest) {
  if (!given.empty()) return given;
  const auto dir = manifest.value("data_dir", "");
  if (dir.empty()) throw CallError("the manifest does not record a dataset; pass --data");
  return dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TrajFusionNet: pedestrian crossing-intention prediction from trajectories and scene images"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tfn_version()));
  const std::vector<std::string> args(argv + 1, argv + argc);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a seeded synthetic dataset");
  int gen_tracks = 500;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data/synthetic";
  bool gen_frames = false;
  gen->add_option("--tracks", gen_tracks, "number of pedestrian tracks")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--out", gen_out, "dataset directory")->capture_default_str();
  gen->add_flag("--frames", gen_frames, "also render every frame to PPM files");

  // train
  auto* train = app.add_subcommand("train", "run every training stage and evaluate on the test split");
  ConfigOptions train_cfg;
  std::string train_data, train_out = "runs/train";
  train_cfg.add_to(train);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->capture_default_str();

  // train-stage
  auto* stage = app.add_subcommand("train-stage", "train one stage, resuming earlier stages from --out");
  ConfigOptions stage_cfg;
  std::string stage_data, stage_out = "runs/train", stage_name;
  stage_cfg.add_to(stage);
  stage->add_option("--data", stage_data, "dataset directory")->required();
  stage->add_option("--out", stage_out, "output directory holding the manifest")->capture_default_str();
  stage->add_option("--stage", stage_name, "trajpred, sam, van1, van2 or fusion")
      ->required()
      ->check(CLI::IsMember({"trajpred", "sam", "van1", "van2", "fusion"}));

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a trained model");
  std::string eval_manifest, eval_data, eval_split = "test", eval_out = "runs/eval";
  eval->add_option("--manifest", eval_manifest, "manifest.json of a trained model")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "dataset directory (default: the one recorded in the manifest)");
  eval->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", eval_out, "output directory")->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "per-sample latency of the model (M) and the whole pipeline (M+D)");
  std::string bench_variant = "both", bench_data, bench_manifest, bench_out = "runs/bench";
  int bench_runs = 100, bench_warmup = 5;
  std::int64_t bench_size = 224;
  std::uint64_t bench_seed = 0;
  bench->add_option("--variant", bench_variant, "full, small or both")->check(CLI::IsMember({"full", "small", "both"}));
  bench->add_option("--runs", bench_runs, "measured runs per model (at least 10)")->capture_default_str();
  bench->add_option("--warmup", bench_warmup, "unmeasured warmup runs")->capture_default_str();
  bench->add_option("--image-size", bench_size, "VAN input resolution")->capture_default_str();
  bench->add_option("--seed", bench_seed, "seed for weights and the generated inputs");
  bench->add_option("--data", bench_data, "dataset supplying the inputs (default: a small generated one)");
  bench->add_option("--manifest", bench_manifest, "benchmark this trained model instead of fresh ones")
      ->check(CLI::ExistingFile);
  bench->add_option("--out", bench_out, "output directory")->capture_default_str();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "retrain and evaluate ablation scenarios against a base model");
  std::string ablate_manifest, ablate_data, ablate_out = "runs/ablate", ablate_config;
  std::vector<int> ablate_scenarios;
  std::optional<std::uint64_t> ablate_seed;
  bool ablate_det = false;
  ablate->add_option("--manifest", ablate_manifest, "manifest.json of the trained base model")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--scenario", ablate_scenarios, "scenario id 1-6, repeatable (default: all)")
      ->check(CLI::Range(1, 6));
  ablate->add_option("--data", ablate_data, "dataset directory (default: the one recorded in the manifest)");
  ablate->add_option("--config", ablate_config, "key=value file applied over the base model's settings")
      ->check(CLI::ExistingFile);
  ablate->add_option("--seed", ablate_seed, "random seed (default: the base model's)");
  ablate->add_flag("--deterministic", ablate_det, "single-threaded BLAS for bitwise reproducible runs");
  ablate->add_option("--out", ablate_out, "output directory")->capture_default_str();

  // predict
  auto* predict = app.add_subcommand("predict", "crossing probability for one sample");
  std::string pred_manifest, pred_sample, pred_data, pred_out = "runs/predict";
  predict->add_option("--manifest", pred_manifest, "manifest.json of a trained model")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--sample", pred_sample, "<split>:<index> or <pedestrian id>@<last observed frame>")
      ->required();
  predict->add_option("--data", pred_data, "dataset directory (default: the one recorded in the manifest)");
  predict->add_option("--out", pred_out, "output directory")->capture_default_str();

  // grad-check
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient checks of every operator and block");
  int grad_seeds = 20;
  std::string grad_group, grad_out = "runs/grad-check";
  grad->add_option("--seeds", grad_seeds, "random draws per case")->capture_default_str()->check(CLI::PositiveNumber);
  grad->add_option("--group", grad_group, "run one group only, e.g. \"composed blocks\"");
  grad->add_option("--out", grad_out, "output directory")->capture_default_str();

  // count-params
  auto* count = app.add_subcommand("count-params", "count trainable parameters");
  std::string count_variant = "full", count_out = "runs/count-params";
  std::optional<int> count_scenario;
  std::int64_t count_size = 224;
  count->add_option("--variant", count_variant, "full or small")->check(CLI::IsMember({"full", "small"}));
  count->add_option("--scenario", count_scenario, "ablation scenario 1-6 (omit for the base model)")
      ->check(CLI::Range(1, 6));
  count->add_option("--image-size", count_size, "VAN input resolution")->capture_default_str();
  count->add_option("--out", count_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    std::cerr << failed->help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      check(tfn_dataset_generate(gen_out.c_str(), gen_tracks, gen_seed, gen_frames ? 1 : 0));
      write_run_manifest(gen_out, "gen-data", args,
                         {{"seed", gen_seed}, {"config", {{"tracks", gen_tracks}, {"frames", gen_frames}}}});
      std::cout << "wrote " << gen_tracks << " synthetic tracks to " << gen_out << "\n";
    } else if (train->parsed()) {
      Config cfg;
      train_cfg.apply(cfg);
      Dataset data;
      open_dataset(data, train_data, cfg);
      const json resolved = config_json(cfg);
      write_run_manifest(train_out, "train", args, {{"seed", resolved.at("seed")}, {"config", resolved}});
      char* out = nullptr;
      check(tfn_train_all(cfg.get(), data.get(), train_out.c_str(), print_progress, nullptr, &out));
      const json r = take_json(out);
      write_text(fs::path(train_out) / "records.json", r.at("records").dump(2) + "\n");
      std::cout << "test " << metrics_line(r.at("manifest").at("test_metrics")) << "\n";
      const auto& t = r.at("manifest").at("trajectory");
      std::cout << "trajectory mean error " << t.at("model_mae_px").get<double>() << " px, persistence "
                << t.at("persistence_mae_px").get<double>() << " px\n";
      std::cout << "manifest " << (fs::path(train_out) / "manifest.json").string() << "\n";
    } else if (stage->parsed()) {
      Config cfg;
      stage_cfg.apply(cfg);
      Dataset data;
      open_dataset(data, stage_data, cfg);
      const json resolved = config_json(cfg);
      write_run_manifest(stage_out, "train-stage", args,
                         {{"seed", resolved.at("seed")}, {"config", resolved}, {"stage", stage_name}});
      char* out = nullptr;
      check(tfn_train_stage(cfg.get(), data.get(), stage_out.c_str(), stage_name.c_str(), print_progress, nullptr,
                            &out));
      const json r = take_json(out);
      const auto& rec = r.at("record");
      std::cout << rec.at("stage").get<std::string>() << ": best epoch " << rec.at("best_epoch") << ", checkpoint "
                << rec.at("checkpoint_hash").get<std::string>() << "\n";
    } else if (eval->parsed()) {
      const json manifest = read_json(eval_manifest);
      Config cfg;
      check(tfn_config_from_manifest(eval_manifest.c_str(), cfg.out()));
      Model model;
      check(tfn_model_load(eval_manifest.c_str(), model.out()));
      Dataset data;
      open_dataset(data, data_dir_for(eval_data, manifest), cfg);
      char* out = nullptr;
      check(tfn_model_evaluate(model.get(), data.get(), eval_split.c_str(), &out));
      const json r = take_json(out);
      write_run_manifest(eval_out, "eval", args,
                         {{"seed", manifest.value("seed", 0)}, {"config", config_json(cfg)}, {"manifest", absolute(eval_manifest)}});
      write_text(fs::path(eval_out) / "eval.json", r.dump(2) + "\n");
      std::cout << eval_split << " " << metrics_line(r.at("metrics")) << "\n";
    } else if (bench->parsed()) {
      if (bench_runs < 10) throw CallError("--runs must be at least 10");
      Config cfg;
      check(tfn_config_create("desk", cfg.out()));
      std::string data_dir = bench_data;
      if (data_dir.empty()) {
        data_dir = (fs::path(bench_out) / "inputs").string();
        check(tfn_dataset_generate(data_dir.c_str(), 24, bench_seed, 0));
      }
      Dataset data;
      open_dataset(data, data_dir, cfg);
      std::vector<std::pair<std::string, std::unique_ptr<Model>>> models;
      if (!bench_manifest.empty()) {
        models.emplace_back("trained", std::make_unique<Model>());
        check(tfn_model_load(bench_manifest.c_str(), models.back().second->out()));
      } else {
        for (const char* v : {"small", "full"}) {
          if (bench_variant != "both" && bench_variant != v) continue;
          models.emplace_back(v, std::make_unique<Model>());
          check(tfn_model_create(v, 0, bench_size, bench_seed, models.back().second->out()));
        }
      }
      json reports = json::array();
      for (auto& [name, m] : models) {
        std::cerr << "  timing " << name << " (" << bench_runs << " runs)\n";
        char* out = nullptr;
        check(tfn_model_benchmark(m->get(), data.get(), bench_warmup, bench_runs, &out));
        reports.push_back(take_json(out));
      }
      char* csv = nullptr;
      check(tfn_latency_csv(reports.dump().c_str(), &csv));
      const std::string table = take(csv);
      write_run_manifest(bench_out, "bench", args,
                         {{"seed", bench_seed},
                          {"config",
                           {{"variant", bench_variant},
                            {"runs", bench_runs},
                            {"warmup", bench_warmup},
                            {"image_size", bench_size},
                            {"data", absolute(data_dir)},
                            {"manifest", bench_manifest}}}});
      write_text(fs::path(bench_out) / "latency.csv", table);
      write_text(fs::path(bench_out) / "latency.json", reports.dump(2) + "\n");
      std::cout << table << tfn_latency_footer() << "\n";
      if (reports.size() == 2) {
        const double small = reports[0].at("model_ms").at("median").get<double>();
        const double full = reports[1].at("model_ms").at("median").get<double>();
        std::cout << "median M: small " << small << " ms, full " << full << " ms\n";
      }
    } else if (ablate->parsed()) {
      const json manifest = read_json(ablate_manifest);
      Config cfg;
      check(tfn_config_from_manifest(ablate_manifest.c_str(), cfg.out()));
      if (!ablate_config.empty()) check(tfn_config_apply_file_keys(cfg.get(), ablate_config.c_str()));
      if (ablate_seed) check(tfn_config_set(cfg.get(), "seed", std::to_string(*ablate_seed).c_str()));
      if (ablate_det) check(tfn_config_set(cfg.get(), "deterministic", "true"));
      if (ablate_scenarios.empty()) ablate_scenarios = {1, 2, 3, 4, 5, 6};
      Dataset data;
      open_dataset(data, data_dir_for(ablate_data, manifest), cfg);
      const json resolved = config_json(cfg);
      write_run_manifest(ablate_out, "ablate", args,
                         {{"seed", resolved.at("seed")},
                          {"config", resolved},
                          {"scenarios", ablate_scenarios},
                          {"manifest", absolute(ablate_manifest)}});
      char* out = nullptr;
      check(tfn_run_ablation(cfg.get(), data.get(), ablate_manifest.c_str(), ablate_scenarios.data(),
                             ablate_scenarios.size(), ablate_out.c_str(), &out));
      const json r = take_json(out);
      write_text(fs::path(ablate_out) / "ablation.json", r.dump(2) + "\n");
      std::cout << "base        " << metrics_line(r.at("base")) << "\n";
      for (const auto& s : r.at("scenarios")) {
        std::cout << "scenario " << s.at("scenario").get<int>() << "  " << metrics_line(s.at("test_metrics")) << "  ("
                  << s.at("description").get<std::string>() << ")\n";
      }
      std::cout << "table " << (fs::path(ablate_out) / "ablation.csv").string() << "\n";
    } else if (predict->parsed()) {
      const json manifest = read_json(pred_manifest);
      Config cfg;
      check(tfn_config_from_manifest(pred_manifest.c_str(), cfg.out()));
      Model model;
      check(tfn_model_load(pred_manifest.c_str(), model.out()));
      Dataset data;
      open_dataset(data, data_dir_for(pred_data, manifest), cfg);
      double p = 0.0;
      int label = 0;
      check(tfn_model_predict(model.get(), data.get(), pred_sample.c_str(), &p, &label));
      write_run_manifest(pred_out, "predict", args,
                         {{"seed", manifest.value("seed", 0)},
                          {"config", config_json(cfg)},
                          {"manifest", absolute(pred_manifest)},
                          {"sample", pred_sample},
                          {"probability", p},
                          {"label", label}});
      std::printf("probability %.6f label %d (%s)\n", p, label, label ? "crossing" : "not crossing");
    } else if (grad->parsed()) {
      int all_passed = 0;
      char* out = nullptr;
      auto report = [](const char* js, void*) {
        const json r = json::parse(js);
        std::printf("%-4s %-40s %-4s max rel error %.3e (tol %.0e)\n", r.at("passed").get<bool>() ? "ok" : "FAIL",
                    r.at("name").get<std::string>().c_str(), r.at("dtype").get<std::string>().c_str(),
                    r.at("max_rel_error").get<double>(), r.at("tol").get<double>());
        if (!r.at("passed").get<bool>()) std::printf("     %s\n", r.at("diagnostic").get<std::string>().c_str());
        std::fflush(stdout);
      };
      check(tfn_grad_check(grad_seeds, grad_group.empty() ? nullptr : grad_group.c_str(), report, nullptr,
                           &all_passed, &out));
      const json r = take_json(out);
      write_run_manifest(grad_out, "grad-check", args,
                         {{"seed", 1000}, {"config", {{"seeds", grad_seeds}, {"group", grad_group}}}});
      write_text(fs::path(grad_out) / "grad_check.json", r.dump(2) + "\n");
      std::cout << (all_passed ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
      return all_passed ? 0 : 1;
    } else if (count->parsed()) {
      Model model;
      check(tfn_model_create(count_variant.c_str(), count_scenario.value_or(0), count_size, 0, model.out()));
      char* out = nullptr;
      check(tfn_model_info(model.get(), &out));
      const json info = take_json(out);
      write_run_manifest(count_out, "count-params", args,
                         {{"seed", 0},
                          {"config",
                           {{"variant", count_variant},
                            {"scenario", count_scenario.value_or(0)},
                            {"image_size", count_size}}},
                          {"counts", info}});
      const auto total = info.at("total").get<std::int64_t>();
      std::printf("%lld parameters (%.2fM)\n", static_cast<long long>(total), static_cast<double>(total) / 1e6);
      std::printf("  trajpred %lld\n  sam      %lld\n  vam      %lld\n", info.at("trajpred").get<long long>(),
                  info.at("sam").get<long long>(), info.at("vam").get<long long>());
      for (std::size_t i = 0; i < info.at("vans").size(); ++i) {
        std::printf("    van%zu   %lld\n", i + 1, info.at("vans")[i].get<long long>());
      }
      std::printf("  fusion   %lld\n", info.at("fusion").get<long long>());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
