#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfn/data.hpp"
#include "tfn/image.hpp"

namespace tfn {

struct DatasetOptions {
  ClassificationOptions classification;
  TrajectoryOptions trajectory;
};

/// Tracks, frame access and the per-split samples derived from them.
/// Normalization statistics come from the training windows only.
struct Dataset {
  TrackSet tracks;
  std::shared_ptr<const FrameSource> frames;
  std::array<std::vector<Sample>, 3> samples;
  std::array<std::vector<TrajWindow>, 3> windows;
  NormStats stats;
  ExtractionStats extraction;
  std::string root;  // directory the dataset was loaded from, if any
  nlohmann::json description;

  const std::vector<Sample>& split(Split s) const { return samples[static_cast<std::size_t>(s)]; }
  const std::vector<TrajWindow>& split_windows(Split s) const { return windows[static_cast<std::size_t>(s)]; }
};

Dataset make_dataset(TrackSet tracks, std::shared_ptr<const FrameSource> frames, const DatasetOptions& opts = {});

// Dataset directory layout:
//   tracks.tsv     one line per (pedestrian, frame), see parse_tracks
//   dataset.json   {"kind":"synthetic","seed":S,"config":{...}} to render frames on demand, or
//                  {"kind":"frames","height":H,"width":W} with images in frames/<video>/<frame>.ppm
inline constexpr const char* kTracksFile = "tracks.tsv";
inline constexpr const char* kDatasetFile = "dataset.json";
inline constexpr const char* kFramesDir = "frames";

Dataset load_dataset(const std::string& dir, const DatasetOptions& opts = {});

/// Writes a synthetic dataset. With `write_frames` every annotated frame is
/// rendered to PPM and the description switches to the frames kind.
void write_synthetic_dataset(const std::string& dir, const SyntheticConfig& cfg, std::uint64_t seed,
                             bool write_frames = false);

nlohmann::json to_json(const SyntheticConfig& cfg);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace tfn
