#include "tfn/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;

namespace tfn {

Dataset make_dataset(TrackSet tracks, std::shared_ptr<const FrameSource> frames, const DatasetOptions& opts) {
  Dataset d;
  d.tracks = std::move(tracks);
  d.frames = std::move(frames);
  for (auto& s : extract_classification_samples(d.tracks, opts.classification, &d.extraction)) {
    d.samples[static_cast<std::size_t>(s.split)].push_back(std::move(s));
  }
  for (auto& w : extract_trajectory_samples(d.tracks, opts.trajectory)) {
    d.windows[static_cast<std::size_t>(w.split)].push_back(std::move(w));
  }
  if (d.split(Split::Train).empty()) throw DataError("dataset has no training samples");
  if (d.split_windows(Split::Train).empty()) throw DataError("dataset has no training trajectory windows");
  d.stats = compute_norm_stats(d.split_windows(Split::Train));
  return d;
}

nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"n_tracks", c.n_tracks},         {"image_width", c.image_width},     {"image_height", c.image_height},
          {"road_x0", c.road_x0},           {"road_x1", c.road_x1},             {"box_width", c.box_width},
          {"box_height", c.box_height},     {"noise", c.noise},                 {"pos_fraction", c.pos_fraction},
          {"val_fraction", c.val_fraction}, {"test_fraction", c.test_fraction}, {"min_speed_pos", c.min_speed_pos},
          {"max_speed_pos", c.max_speed_pos}, {"event_min", c.event_min},       {"event_max", c.event_max}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_tracks", c.n_tracks);
  get("image_width", c.image_width);
  get("image_height", c.image_height);
  get("road_x0", c.road_x0);
  get("road_x1", c.road_x1);
  get("box_width", c.box_width);
  get("box_height", c.box_height);
  get("noise", c.noise);
  get("pos_fraction", c.pos_fraction);
  get("val_fraction", c.val_fraction);
  get("test_fraction", c.test_fraction);
  get("min_speed_pos", c.min_speed_pos);
  get("max_speed_pos", c.max_speed_pos);
  get("event_min", c.event_min);
  get("event_max", c.event_max);
  validate(c);
  return c;
}

nlohmann::json to_json(const NormStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mean = j.at("mean").get<Row>();
  s.std = j.at("std").get<Row>();
  validate(s);
  return s;
}

Dataset load_dataset(const std::string& dir, const DatasetOptions& opts) {
  const fs::path root(dir);
  const fs::path desc_path = root / kDatasetFile;
  std::ifstream in(desc_path);
  if (!in) throw IoError("cannot open " + desc_path.string());
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(desc_path.string() + ": " + e.what());
  }
  TrackSet tracks = load_tracks((root / kTracksFile).string());

  std::shared_ptr<const FrameSource> frames;
  const std::string kind = desc.value("kind", "");
  if (kind == "synthetic") {
    const auto cfg = synthetic_config_from_json(desc.at("config"));
    frames = std::make_shared<SyntheticFrameSource>(tracks, cfg, desc.at("seed").get<std::uint64_t>());
  } else if (kind == "frames") {
    frames = std::make_shared<DirectoryFrameSource>((root / kFramesDir).string(), desc.at("height").get<int>(),
                                                    desc.at("width").get<int>());
  } else {
    throw DataError(desc_path.string() + ": unknown dataset kind '" + kind + "' (expected synthetic or frames)");
  }
  Dataset d = make_dataset(std::move(tracks), std::move(frames), opts);
  d.root = fs::absolute(root).lexically_normal().string();
  d.description = desc;
  return d;
}

void write_synthetic_dataset(const std::string& dir, const SyntheticConfig& cfg, std::uint64_t seed,
                             bool write_frames) {
  validate(cfg);
  const fs::path root(dir);
  fs::create_directories(root);
  const TrackSet tracks = generate_synthetic_tracks(cfg, seed);
  save_tracks((root / kTracksFile).string(), tracks);

  nlohmann::json desc = {{"kind", "synthetic"}, {"seed", seed}, {"config", to_json(cfg)}};
  if (write_frames) {
    const SyntheticFrameSource source(tracks, cfg, seed);
    std::set<std::pair<std::string, std::int64_t>> done;
    for (const auto& t : tracks.tracks) {
      const fs::path vdir = root / kFramesDir / t.video();
      fs::create_directories(vdir);
      for (const auto& f : t.frames) {
        if (!done.emplace(t.video(), f.frame).second) continue;
        write_ppm((vdir / (std::to_string(f.frame) + ".ppm")).string(), source.frame(t.video(), f.frame));
      }
    }
    desc = {{"kind", "frames"},
            {"height", cfg.image_height},
            {"width", cfg.image_width},
            {"generator", {{"seed", seed}, {"config", to_json(cfg)}}}};
  }
  std::ofstream out(root / kDatasetFile);
  if (!out) throw DataError("cannot write " + (root / kDatasetFile).string());
  out << desc.dump(2) << "\n";
}

}  // namespace tfn
