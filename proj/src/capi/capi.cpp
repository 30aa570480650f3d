#include "trajfusion.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "tfn/ablation.hpp"
#include "tfn/eval.hpp"
#include "tfn/gradsuite.hpp"
#include "tfn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

struct tfn_config {
  tfn::TrainConfig cfg;
};

struct tfn_dataset {
  tfn::Dataset data;
};

struct tfn_model {
  std::unique_ptr<tfn::TrajFusionNet> net;
  std::optional<tfn::NormStats> stats;  // from the manifest of a trained model
  json manifest;
};

namespace {

thread_local std::string g_last_error;

tfn_status fail(tfn_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

/// Runs `body` and converts exceptions into status codes.
template <class F>
tfn_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return TFN_OK;
  } catch (const tfn::IoError& e) {
    return fail(TFN_ERR_IO, e.what());
  } catch (const tfn::DataError& e) {
    return fail(TFN_ERR_DATA, e.what());
  } catch (const tfn::DimensionError& e) {
    return fail(TFN_ERR_DIMENSION, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(TFN_ERR_INVALID_ARGUMENT, e.what());
  } catch (const json::exception& e) {
    return fail(TFN_ERR_DATA, e.what());
  } catch (const std::logic_error& e) {
    return fail(TFN_ERR_STATE, e.what());
  } catch (const std::exception& e) {
    return fail(TFN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(TFN_ERR_INTERNAL, "unknown error");
  }
}

template <class T>
T& need(T* p, const char* what) {
  if (p == nullptr) throw std::invalid_argument(std::string(what) + " is null");
  return *p;
}

const char* need_str(const char* s, const char* what) {
  if (s == nullptr) throw std::invalid_argument(std::string(what) + " is null");
  return s;
}

void put_string(char** out, const std::string& s) {
  if (out == nullptr) return;
  *out = static_cast<char*>(std::malloc(s.size() + 1));
  if (*out == nullptr) throw std::bad_alloc();
  std::memcpy(*out, s.c_str(), s.size() + 1);
}

tfn::EpochHook make_hook(tfn_progress_fn progress, void* user) {
  if (progress == nullptr) return {};
  return [progress, user](tfn::Stage s, int epoch, const tfn::TrajFusionNet&) {
    progress(tfn::stage_name(s), epoch, user);
  };
}

json records_json(const std::vector<tfn::TrainingRunRecord>& records) {
  json out = json::array();
  for (const auto& r : records) out.push_back(r.to_json());
  return out;
}

const tfn::NormStats& stats_for(const tfn_model& m, const tfn_dataset& d) {
  return m.stats ? *m.stats : d.data.stats;
}

const tfn::Sample& find_sample(const tfn::Dataset& data, const std::string& ref) {
  const auto colon = ref.find(':');
  if (colon != std::string::npos) {
    const auto& split = data.split(tfn::parse_split(ref.substr(0, colon)));
    std::size_t pos = 0;
    long long idx = -1;
    try {
      idx = std::stoll(ref.substr(colon + 1), &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != ref.size() - colon - 1 || idx < 0) {
      throw std::invalid_argument("bad sample index in '" + ref + "'");
    }
    if (static_cast<std::size_t>(idx) >= split.size()) {
      throw std::invalid_argument("sample index " + std::to_string(idx) + " out of range, the split has " +
                                  std::to_string(split.size()) + " samples");
    }
    return split[static_cast<std::size_t>(idx)];
  }
  const auto at = ref.rfind('@');
  if (at == std::string::npos) {
    throw std::invalid_argument("sample must be <split>:<index> or <pedestrian>@<frame>, got '" + ref + "'");
  }
  const std::string ped = ref.substr(0, at);
  const std::string frame = ref.substr(at + 1);
  for (const auto& split : data.samples) {
    for (const auto& s : split) {
      if (s.ped_id == ped && std::to_string(s.frame_t) == frame) return s;
    }
  }
  throw std::invalid_argument("no sample for pedestrian " + ped + " ending at frame " + frame);
}

json model_info(const tfn::TrajFusionNet& net) {
  json vans = json::array();
  for (int i = 0; i < net.vam().van_count(); ++i) vans.push_back(tfn::count_parameters(net.vam().van(i)));
  return {{"total", tfn::count_parameters(net)},
          {"trajpred", tfn::count_parameters(net.trajpred())},
          {"sam", tfn::count_parameters(net.sam())},
          {"vam", tfn::count_parameters(net.vam())},
          {"vans", vans},
          {"fusion", tfn::count_parameters(net.fusion())},
          {"config", net.config().to_json()}};
}

tfn::LatencyReport report_from_json(const json& j) {
  tfn::LatencyReport r;
  r.variant = j.at("variant").get<std::string>();
  r.params = j.at("params").get<std::int64_t>();
  r.n_warmup = j.at("n_warmup").get<int>();
  r.n_runs = j.at("n_runs").get<int>();
  auto stats = [](const json& s) {
    return tfn::LatencyStats{s.at("mean").get<double>(), s.at("std").get<double>(), s.at("median").get<double>(),
                             s.at("min").get<double>(), s.at("max").get<double>()};
  };
  r.model_ms = stats(j.at("model_ms"));
  r.total_ms = stats(j.at("total_ms"));
  r.hardware = j.value("hardware", "");
  return r;
}

}  // namespace

extern "C" {

const char* tfn_version(void) { return "1.0.0"; }

const char* tfn_status_name(tfn_status s) {
  switch (s) {
    case TFN_OK: return "ok";
    case TFN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case TFN_ERR_IO: return "i/o error";
    case TFN_ERR_DATA: return "data error";
    case TFN_ERR_DIMENSION: return "dimension error";
    case TFN_ERR_STATE: return "state error";
    case TFN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* tfn_last_error(void) { return g_last_error.c_str(); }

void tfn_string_free(char* s) { std::free(s); }

// ---- configuration ----------------------------------------------------------

tfn_status tfn_config_create(const char* preset, tfn_config** out) {
  return guarded([&] {
    need(out, "output pointer");
    *out = new tfn_config{tfn::TrainConfig::from_preset(preset ? preset : "reference")};
  });
}

tfn_status tfn_config_set(tfn_config* cfg, const char* key, const char* value) {
  return guarded([&] { need(cfg, "config").cfg.set(need_str(key, "key"), need_str(value, "value")); });
}

tfn_status tfn_config_apply_file(tfn_config* cfg, const char* path) {
  return guarded([&] { need(cfg, "config").cfg.apply_file(need_str(path, "path")); });
}

tfn_status tfn_config_apply_file_keys(tfn_config* cfg, const char* path) {
  return guarded([&] { need(cfg, "config").cfg.apply_file(need_str(path, "path"), true); });
}

tfn_status tfn_config_from_manifest(const char* manifest_path, tfn_config** out) {
  return guarded([&] {
    need(out, "output pointer");
    std::ifstream in(need_str(manifest_path, "manifest path"));
    if (!in) throw tfn::IoError(std::string("cannot open manifest ") + manifest_path);
    const json j = json::parse(in);
    *out = new tfn_config{tfn::TrainConfig::from_json(j.at("train_config"))};
  });
}

tfn_status tfn_config_to_json(const tfn_config* cfg, char** out_json) {
  return guarded([&] { put_string(out_json, need(cfg, "config").cfg.to_json().dump(2)); });
}

void tfn_config_free(tfn_config* cfg) { delete cfg; }

// ---- datasets ---------------------------------------------------------------

tfn_status tfn_dataset_generate(const char* dir, int n_tracks, uint64_t seed, int write_frames) {
  return guarded([&] {
    tfn::SyntheticConfig sc;
    sc.n_tracks = n_tracks;
    tfn::write_synthetic_dataset(need_str(dir, "directory"), sc, seed, write_frames != 0);
  });
}

tfn_status tfn_dataset_open(const char* dir, const tfn_config* cfg, tfn_dataset** out) {
  return guarded([&] {
    need(out, "output pointer");
    const auto opts = cfg ? cfg->cfg.dataset_options() : tfn::DatasetOptions{};
    *out = new tfn_dataset{tfn::load_dataset(need_str(dir, "directory"), opts)};
  });
}

tfn_status tfn_dataset_summary(const tfn_dataset* data, char** out_json) {
  return guarded([&] {
    const auto& d = need(data, "dataset").data;
    json j = {{"root", d.root}, {"description", d.description}, {"tracks", d.tracks.tracks.size()}};
    for (auto sp : {tfn::Split::Train, tfn::Split::Val, tfn::Split::Test}) {
      int pos = 0;
      for (const auto& s : d.split(sp)) pos += s.label;
      j["splits"][tfn::split_name(sp)] = {{"samples", d.split(sp).size()},
                                           {"positives", pos},
                                           {"trajectory_windows", d.split_windows(sp).size()}};
    }
    j["norm_stats"] = tfn::to_json(d.stats);
    put_string(out_json, j.dump(2));
  });
}

void tfn_dataset_free(tfn_dataset* data) { delete data; }

// ---- training ---------------------------------------------------------------

tfn_status tfn_train_all(const tfn_config* cfg, const tfn_dataset* data, const char* out_dir,
                         tfn_progress_fn progress, void* user, char** out_json) {
  return guarded([&] {
    const auto r = tfn::train_all(need(cfg, "config").cfg, need(data, "dataset").data, out_dir ? out_dir : "",
                                  make_hook(progress, user));
    put_string(out_json, json{{"manifest", r.manifest}, {"records", records_json(r.records)}}.dump(2));
  });
}

tfn_status tfn_train_stage(const tfn_config* cfg, const tfn_dataset* data, const char* out_dir, const char* stage,
                           tfn_progress_fn progress, void* user, char** out_json) {
  return guarded([&] {
    const std::string dir = need_str(out_dir, "output directory");
    const tfn::Stage s = tfn::parse_stage(need_str(stage, "stage"));
    tfn::Trainer trainer(need(cfg, "config").cfg, need(data, "dataset").data, dir);
    const fs::path manifest = fs::path(dir) / tfn::kManifestFile;
    if (fs::exists(manifest)) {
      std::ifstream in(manifest);
      trainer.resume(json::parse(in), dir);
    }
    const auto rec = trainer.train_stage(s, make_hook(progress, user));
    put_string(out_json, json{{"manifest", trainer.manifest_json()}, {"record", rec.to_json()}}.dump(2));
  });
}

tfn_status tfn_run_ablation(const tfn_config* cfg, const tfn_dataset* data, const char* base_manifest,
                            const int* scenarios, size_t n_scenarios, const char* out_dir, char** out_json) {
  return guarded([&] {
    const std::string base_path = need_str(base_manifest, "base manifest");
    const std::string dir = need_str(out_dir, "output directory");
    if (n_scenarios == 0 || scenarios == nullptr) throw std::invalid_argument("no ablation scenarios given");
    for (std::size_t i = 0; i < n_scenarios; ++i) (void)tfn::scenario_toggles(scenarios[i]);
    std::ifstream in(base_path);
    if (!in) throw tfn::IoError("cannot open base manifest " + base_path);
    const json base = json::parse(in);
    if (!base.contains("test_metrics")) throw std::invalid_argument("base manifest has no test metrics");
    const auto& bm = base.at("test_metrics");
    tfn::MetricsReport base_metrics = tfn::metrics_from_counts(
        {bm.at("tp").get<std::int64_t>(), bm.at("fp").get<std::int64_t>(), bm.at("tn").get<std::int64_t>(),
         bm.at("fn").get<std::int64_t>()});
    if (bm.contains("auc") && !bm.at("auc").is_null()) base_metrics.auc = bm.at("auc").get<double>();

    std::vector<tfn::AblationResult> rows;
    json results = json::array();
    for (std::size_t i = 0; i < n_scenarios; ++i) {
      const int sc = scenarios[i];
      const std::string sub = (fs::path(dir) / ("scenario_" + std::to_string(sc))).string();
      rows.push_back(tfn::run_ablation(sc, need(cfg, "config").cfg, need(data, "dataset").data, base_path, sub));
      json stages = json::array();
      for (auto s : rows.back().retrained) stages.push_back(tfn::stage_name(s));
      results.push_back({{"scenario", sc},
                         {"description", rows.back().description},
                         {"retrained", stages},
                         {"test_metrics", rows.back().test.to_json()}});
    }
    fs::create_directories(dir);
    std::ofstream(fs::path(dir) / "ablation.csv") << tfn::ablation_csv(base_metrics, rows);
    put_string(out_json, json{{"base", base_metrics.to_json()}, {"scenarios", results}}.dump(2));
  });
}

// ---- models -----------------------------------------------------------------

tfn_status tfn_model_create(const char* variant, int scenario, int64_t image_size, uint64_t seed, tfn_model** out) {
  return guarded([&] {
    need(out, "output pointer");
    const tfn::Toggles t = scenario == 0 ? tfn::Toggles{} : tfn::scenario_toggles(scenario);
    const auto cfg = tfn::ModelConfig::make(tfn::parse_variant(need_str(variant, "variant")), t, image_size);
    cfg.validate();
    auto m = std::make_unique<tfn_model>();
    m->net = std::make_unique<tfn::TrajFusionNet>(cfg, seed);
    m->net->train(false);
    m->net->set_requires_grad(false);
    *out = m.release();
  });
}

tfn_status tfn_model_load(const char* manifest_path, tfn_model** out) {
  return guarded([&] {
    need(out, "output pointer");
    auto lm = tfn::load_model(need_str(manifest_path, "manifest path"));
    *out = new tfn_model{std::move(lm.net), lm.stats, std::move(lm.manifest)};
  });
}

tfn_status tfn_model_param_count(const tfn_model* model, int64_t* out) {
  return guarded([&] { need(out, "output pointer") = tfn::count_parameters(*need(model, "model").net); });
}

tfn_status tfn_model_info(const tfn_model* model, char** out_json) {
  return guarded([&] { put_string(out_json, model_info(*need(model, "model").net).dump(2)); });
}

tfn_status tfn_model_evaluate(const tfn_model* model, const tfn_dataset* data, const char* split, char** out_json) {
  return guarded([&] {
    const auto& m = need(model, "model");
    const auto& d = need(data, "dataset");
    const tfn::Split sp = tfn::parse_split(need_str(split, "split"));
    const auto ev = tfn::evaluate_split(*m.net, d.data, sp, stats_for(m, d), tfn::default_palette());
    const auto traj = tfn::evaluate_trajectory(m.net->trajpred(), d.data.split_windows(sp), stats_for(m, d));
    put_string(out_json, json{{"split", tfn::split_name(sp)},
                              {"metrics", ev.metrics.to_json()},
                              {"trajectory", traj.to_json()}}
                             .dump(2));
  });
}

tfn_status tfn_model_predict(const tfn_model* model, const tfn_dataset* data, const char* sample,
                             double* probability, int* label) {
  return guarded([&] {
    const auto& m = need(model, "model");
    const auto& d = need(data, "dataset");
    const tfn::Sample& s = find_sample(d.data, need_str(sample, "sample"));
    const auto first = d.data.frames->frame(s.video, s.frame_first);
    const auto last = d.data.frames->frame(s.video, s.frame_t);
    const auto p = tfn::predict_crossing(*m.net, s, first, last, stats_for(m, d), tfn::default_palette());
    need(probability, "probability") = p.probability;
    need(label, "label") = p.label;
  });
}

tfn_status tfn_model_benchmark(const tfn_model* model, const tfn_dataset* data, int n_warmup, int n_runs,
                               char** out_json) {
  return guarded([&] {
    const auto& m = need(model, "model");
    const auto& d = need(data, "dataset");
    if (n_runs < tfn::kMinBenchmarkRuns) {
      throw std::invalid_argument("benchmark needs at least " + std::to_string(tfn::kMinBenchmarkRuns) +
                                  " runs, got " + std::to_string(n_runs));
    }
    const auto staged = tfn::stage_samples(d.data, tfn::Split::Test, 16);
    const auto r = tfn::benchmark_latency(*m.net, staged, stats_for(m, d), tfn::default_palette(), n_warmup, n_runs,
                                          d.data.frames.get());
    json j = r.to_json();
    j["model_runs_ms"] = r.model_runs;
    j["total_runs_ms"] = r.total_runs;
    put_string(out_json, j.dump(2));
  });
}

void tfn_model_free(tfn_model* model) { delete model; }

const char* tfn_latency_footer(void) {
  static const std::string footer = tfn::latency_footer();
  return footer.c_str();
}

tfn_status tfn_latency_csv(const char* reports_json, char** out_csv) {
  return guarded([&] {
    const json j = json::parse(need_str(reports_json, "reports"));
    std::vector<tfn::LatencyReport> reports;
    for (const auto& r : j) reports.push_back(report_from_json(r));
    put_string(out_csv, tfn::latency_csv(reports));
  });
}

// ---- gradient checks --------------------------------------------------------

tfn_status tfn_grad_check(int seeds, const char* group, tfn_report_fn report, void* user, int* all_passed,
                          char** out_json) {
  return guarded([&] {
    auto to_json = [](const tfn::GradSuiteResult& r) {
      return json{{"group", r.group},         {"name", r.name},
                  {"dtype", tfn::dtype_name(r.dtype)}, {"tol", r.tol},
                  {"seeds", r.seeds},         {"max_rel_error", r.max_rel_error},
                  {"passed", r.passed},       {"diagnostic", r.diagnostic}};
    };
    tfn::GradSuiteOptions opts;
    opts.seeds = seeds;
    opts.group = group ? group : "";
    if (report) opts.progress = [&](const tfn::GradSuiteResult& r) { report(to_json(r).dump().c_str(), user); };
    const auto results = tfn::run_gradient_suite(opts);
    bool ok = true;
    json arr = json::array();
    for (const auto& r : results) {
      ok = ok && r.passed;
      arr.push_back(to_json(r));
    }
    need(all_passed, "all_passed") = ok ? 1 : 0;
    put_string(out_json, arr.dump(2));
  });
}

}  // extern "C"
