#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tfn {

inline constexpr int kFeatures = 5;  // x1, y1, x2, y2, ego speed
inline constexpr int kPastLen = 15;
inline constexpr int kPredLen = 60;
inline constexpr int kSeqLen = kPastLen + kPredLen;

using Row = std::array<double, kFeatures>;
using Rows = std::vector<Row>;
using Box = std::array<double, 4>;

/// Malformed input data (track files, palettes, images). Carries the line
/// number when the source is line oriented.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file that is missing or cannot be read.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

enum class Split : std::uint8_t { Train, Val, Test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct TrackFrame {
  std::int64_t frame = 0;
  Box box{};
  double speed = 0.0;
};

struct Track {
  std::string ped_id;
  Split split = Split::Train;
  std::vector<TrackFrame> frames;
  std::optional<std::int64_t> event_frame;
  int label = 0;

  /// Part of the id before '/', or the whole id.
  std::string video() const;
};

struct TrackSet {
  std::vector<Track> tracks;
};

/// Speed column accepts a real (km/h) or one of the five ordinal names.
int encode_speed_ordinal(const std::string& category);

/// Line format: ped_id TAB split TAB frame TAB x1,y1,x2,y2 TAB speed TAB event|- TAB label.
/// Consecutive lines with the same ped_id form one track.
TrackSet load_tracks(const std::string& path);
TrackSet parse_tracks(const std::string& text, const std::string& source = "<memory>");
void save_tracks(const std::string& path, const TrackSet& set);
std::string format_tracks(const TrackSet& set);

/// One classification instance. Frame images are referenced by
/// (video, frame) and fetched from a FrameSource when needed.
struct Sample {
  std::string ped_id;
  std::string video;
  Split split = Split::Train;
  std::int64_t frame_t = 0;      // last observed frame
  std::int64_t frame_first = 0;  // frame t-15, first scene image
  std::array<Row, kPastLen> observed{};  // raw rows for frames t-14..t
  int label = 0;
  int tte = 0;

  std::vector<Box> obs_boxes() const;
};

struct ClassificationOptions {
  int obs_len = 16;
  int tte_min = 30;
  int tte_max = 60;
  int stride = 1;
};

struct ExtractionStats {
  std::int64_t skipped_short = 0;
  std::int64_t skipped_gap = 0;
};

std::vector<Sample> extract_classification_samples(const TrackSet& tracks, const ClassificationOptions& opts = {},
                                                   ExtractionStats* stats = nullptr);

struct TrajWindow {
  std::string ped_id;
  Split split = Split::Train;
  std::int64_t start_frame = 0;
  std::array<Row, kSeqLen> rows{};  // raw, first 15 past, last 60 future
};

struct TrajectoryOptions {
  double overlap = 0.6;
};

/// Window step used for a given overlap: max(1, round((1 - overlap) * 75)).
int trajectory_step(double overlap);
std::vector<TrajWindow> extract_trajectory_samples(const TrackSet& tracks, const TrajectoryOptions& opts = {});

struct NormStats {
  Row mean{};
  Row std{};
};

/// Statistics of the offset features over every row of the given windows.
/// Throws DataError when a feature has zero spread.
NormStats compute_norm_stats(const std::vector<TrajWindow>& windows);
void validate(const NormStats& stats);

/// Subtracts the first row's box from every row's box, then z-scores all five features.
Rows offset_and_zscore(const Rows& seq, const NormStats& stats);
/// Same transform with an explicit reference row for the box offset.
Rows normalize_relative(const Rows& seq, const Row& ref, const NormStats& stats);
Rows denormalize_relative(const Rows& norm, const Row& ref, const NormStats& stats);

/// Fraction of negatives, used as the positive-class weight.
double compute_class_weight(const std::vector<int>& labels);

struct SyntheticConfig {
  int n_tracks = 500;
  int image_width = 160;
  int image_height = 96;
  double road_x0 = 96.0;  // road band columns [road_x0, road_x1)
  double road_x1 = 136.0;
  double box_width = 8.0;
  double box_height = 24.0;
  double noise = 0.3;  // jitter stddev in pixels
  double pos_fraction = 0.5;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  double min_speed_pos = 0.4;  // pixels per frame toward the road
  double max_speed_pos = 0.95;
  int event_min = 75;
  int event_max = 95;
};

void validate(const SyntheticConfig& cfg);

/// Frames until the right box edge reaches the road band when moving at `vx`
/// pixels per frame, or nullopt if that does not happen within `horizon`.
std::optional<int> frames_to_road(const SyntheticConfig& cfg, double x2, double vx, int horizon);
/// 1 iff the constant-velocity extrapolation enters the road band within `horizon` frames.
int synthetic_label(const SyntheticConfig& cfg, double x2, double vx, int horizon = 60);

TrackSet generate_synthetic_tracks(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace tfn
