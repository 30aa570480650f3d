#include <cmath>

#include "tfn/data.hpp"

namespace tfn {

namespace {

Row row_of(const TrackFrame& f) { return {f.box[0], f.box[1], f.box[2], f.box[3], f.speed}; }

}  // namespace

std::vector<Box> Sample::obs_boxes() const {
  std::vector<Box> out;
  out.reserve(kPastLen);
  for (const auto& r : observed) out.push_back({r[0], r[1], r[2], r[3]});
  return out;
}

std::vector<Sample> extract_classification_samples(const TrackSet& tracks, const ClassificationOptions& opts,
                                                   ExtractionStats* stats) {
  if (opts.obs_len != kPastLen + 1) {
    throw std::invalid_argument("observation length must be " + std::to_string(kPastLen + 1) + " frames");
  }
  if (opts.stride < 1 || opts.tte_min > opts.tte_max) throw std::invalid_argument("bad extraction options");
  ExtractionStats local;
  std::vector<Sample> out;
  for (const auto& track : tracks.tracks) {
    const auto n = static_cast<std::int64_t>(track.frames.size());
    if (n < opts.obs_len) {
      ++local.skipped_short;
      continue;
    }
    const std::int64_t anchor = track.event_frame.value_or(track.frames.back().frame);
    std::int64_t valid_index = 0;
    for (std::int64_t p = opts.obs_len - 1; p < n; ++p) {
      const auto& last = track.frames[static_cast<std::size_t>(p)];
      const auto tte = anchor - last.frame;
      if (tte < opts.tte_min || tte > opts.tte_max) continue;
      const auto& first = track.frames[static_cast<std::size_t>(p - kPastLen)];
      if (last.frame - first.frame != kPastLen) {
        ++local.skipped_gap;
        continue;
      }
      if (valid_index++ % opts.stride != 0) continue;
      Sample s;
      s.ped_id = track.ped_id;
      s.video = track.video();
      s.split = track.split;
      s.frame_t = last.frame;
      s.frame_first = first.frame;
      for (int k = 0; k < kPastLen; ++k) {
        s.observed[static_cast<std::size_t>(k)] = row_of(track.frames[static_cast<std::size_t>(p - kPastLen + 1 + k)]);
      }
      s.label = track.label;
      s.tte = static_cast<int>(tte);
      out.push_back(std::move(s));
    }
  }
  if (stats) *stats = local;
  return out;
}

int trajectory_step(double overlap) {
  return std::max(1, static_cast<int>(std::lround((1.0 - overlap) * kSeqLen)));
}

std::vector<TrajWindow> extract_trajectory_samples(const TrackSet& tracks, const TrajectoryOptions& opts) {
  if (!(opts.overlap >= 0.0 && opts.overlap < 1.0)) throw std::invalid_argument("overlap must lie in [0, 1)");
  const int step = trajectory_step(opts.overlap);
  std::vector<TrajWindow> out;
  for (const auto& track : tracks.tracks) {
    const auto n = static_cast<std::int64_t>(track.frames.size());
    for (std::int64_t p = 0; p + kSeqLen <= n; p += step) {
      const auto& f0 = track.frames[static_cast<std::size_t>(p)];
      if (track.frames[static_cast<std::size_t>(p + kSeqLen - 1)].frame - f0.frame != kSeqLen - 1) continue;
      TrajWindow w;
      w.ped_id = track.ped_id;
      w.split = track.split;
      w.start_frame = f0.frame;
      for (int k = 0; k < kSeqLen; ++k) w.rows[static_cast<std::size_t>(k)] = row_of(track.frames[static_cast<std::size_t>(p + k)]);
      out.push_back(w);
    }
  }
  return out;
}

void validate(const NormStats& stats) {
  for (int j = 0; j < kFeatures; ++j) {
    const double s = stats.std[static_cast<std::size_t>(j)];
    if (!(s > 0.0) || !std::isfinite(s) || !std::isfinite(stats.mean[static_cast<std::size_t>(j)])) {
      throw DataError("degenerate normalization statistics for feature " + std::to_string(j) +
                      " (std must be positive and finite)");
    }
  }
}

NormStats compute_norm_stats(const std::vector<TrajWindow>& windows) {
  if (windows.empty()) throw DataError("no trajectory windows to compute normalization statistics from");
  Row sum{}, sq{};
  double count = 0.0;
  for (const auto& w : windows) {
    const Row& ref = w.rows[0];
    for (const auto& r : w.rows) {
      for (int j = 0; j < kFeatures; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double v = j < 4 ? r[ju] - ref[ju] : r[ju];
        sum[ju] += v;
        sq[ju] += v * v;
      }
      count += 1.0;
    }
  }
  NormStats st;
  for (std::size_t j = 0; j < kFeatures; ++j) {
    st.mean[j] = sum[j] / count;
    st.std[j] = std::sqrt(std::max(0.0, sq[j] / count - st.mean[j] * st.mean[j]));
  }
  validate(st);
  return st;
}

Rows normalize_relative(const Rows& seq, const Row& ref, const NormStats& stats) {
  validate(stats);
  Rows out(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (std::size_t j = 0; j < kFeatures; ++j) {
      const double v = j < 4 ? seq[i][j] - ref[j] : seq[i][j];
      out[i][j] = (v - stats.mean[j]) / stats.std[j];
    }
  }
  return out;
}

Rows offset_and_zscore(const Rows& seq, const NormStats& stats) {
  if (seq.empty()) throw std::invalid_argument("offset_and_zscore needs at least one row");
  return normalize_relative(seq, seq.front(), stats);
}

Rows denormalize_relative(const Rows& norm, const Row& ref, const NormStats& stats) {
  validate(stats);
  Rows out(norm.size());
  for (std::size_t i = 0; i < norm.size(); ++i) {
    for (std::size_t j = 0; j < kFeatures; ++j) {
      const double v = norm[i][j] * stats.std[j] + stats.mean[j];
      out[i][j] = j < 4 ? v + ref[j] : v;
    }
  }
  return out;
}

double compute_class_weight(const std::vector<int>& labels) {
  std::int64_t neg = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError("labels must be 0 or 1");
    neg += l == 0;
  }
  const auto n = static_cast<std::int64_t>(labels.size());
  if (neg == 0 || neg == n) throw DataError("class weight needs both classes in the training labels");
  return static_cast<double>(neg) / static_cast<double>(n);
}

}  // namespace tfn
