#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tfn/data.hpp"
#include "tfn/random.hpp"

namespace tfn {

namespace {

enum class Motion { Approach, Away, Parallel, Stationary, Slow, ApproachThenStop };

// True (jitter-free) kinematics of one pedestrian: piecewise-constant velocity
// with at most one change, at frame `change`.
struct Path {
  double x2_0 = 0.0;
  double bottom_0 = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  std::int64_t change = -1;  // frame from which velocity is (vx2, vy2)
  double vx2 = 0.0;
  double vy2 = 0.0;

  double x2(std::int64_t f) const {
    if (change < 0 || f <= change) return x2_0 + vx * static_cast<double>(f);
    return x2_0 + vx * static_cast<double>(change) + vx2 * static_cast<double>(f - change);
  }
  double bottom(std::int64_t f) const {
    if (change < 0 || f <= change) return bottom_0 + vy * static_cast<double>(f);
    return bottom_0 + vy * static_cast<double>(change) + vy2 * static_cast<double>(f - change);
  }
  double vx_at(std::int64_t f) const { return change < 0 || f < change ? vx : vx2; }
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  }
}

double bottom_start(const SyntheticConfig& cfg, Rng& rng, double vy, std::int64_t len) {
  const double lo = cfg.box_height + 2.0;
  const double hi = cfg.image_height - 2.0;
  const double travel = vy * static_cast<double>(len - 1);
  const double a = std::max(lo, lo - travel);
  const double b = std::min(hi, hi - travel);
  return rng.uniform(a, std::max(a, b));
}

Path sample_path(const SyntheticConfig& cfg, Motion kind, std::int64_t len, std::int64_t event, Rng& rng) {
  Path p;
  const double w = cfg.box_width;
  const double left_room = cfg.road_x0 - w - 4.0;  // usable sidewalk travel
  const double last = static_cast<double>(len - 1);
  switch (kind) {
    case Motion::Approach: {
      const double vmax = std::min(cfg.max_speed_pos, left_room / static_cast<double>(event));
      p.vx = rng.uniform(cfg.min_speed_pos, std::max(cfg.min_speed_pos, vmax));
      p.x2_0 = cfg.road_x0 - p.vx * static_cast<double>(event);
      p.vy = rng.uniform(-0.05, 0.05);
      break;
    }
    case Motion::Away: {
      const double vmax = std::min(0.8, left_room / last);
      p.vx = -rng.uniform(0.2, std::max(0.2, vmax));
      const double x2_end = rng.uniform(w + 2.0, std::max(w + 2.0, cfg.road_x0 - 4.0 + p.vx * last));
      p.x2_0 = x2_end - p.vx * last;
      p.vy = rng.uniform(-0.05, 0.05);
      break;
    }
    case Motion::Parallel: {
      p.vx = rng.uniform(-0.05, 0.05);
      p.vy = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 0.3);
      p.x2_0 = rng.uniform(w + 6.0, cfg.road_x0 - 12.0);
      break;
    }
    case Motion::Stationary: {
      p.x2_0 = rng.uniform(w + 2.0, cfg.road_x0 - 6.0);
      break;
    }
    case Motion::Slow: {
      p.vx = rng.uniform(0.05, 0.15);
      // keep the distance left at the track end beyond the 60-frame reach
      const double end_gap = rng.uniform(60.0 * p.vx + 6.0, 60.0 * p.vx + 20.0);
      p.x2_0 = cfg.road_x0 - end_gap - p.vx * last;
      break;
    }
    case Motion::ApproachThenStop: {
      p.change = rng.uniform_int(5, len - 1 - kSeqLen);
      p.vx = rng.uniform(cfg.min_speed_pos, cfg.max_speed_pos);
      const double stop_gap = rng.uniform(6.0, 30.0);
      p.x2_0 = cfg.road_x0 - stop_gap - p.vx * static_cast<double>(p.change);
      break;
    }
  }
  p.vy2 = p.change >= 0 ? 0.0 : p.vy;
  p.bottom_0 = bottom_start(cfg, rng, p.vy, len);
  return p;
}

bool inside_image(const SyntheticConfig& cfg, const Path& p, std::int64_t len) {
  for (std::int64_t f = 0; f < len; ++f) {
    const double x2 = p.x2(f);
    const double b = p.bottom(f);
    if (x2 - cfg.box_width < 0.0 || x2 > cfg.image_width || b - cfg.box_height < 0.0 || b > cfg.image_height) {
      return false;
    }
  }
  return true;
}

// The track label must agree with the constant-velocity extrapolation at every
// frame that can become a classification sample.
bool consistent(const SyntheticConfig& cfg, const Path& p, std::int64_t anchor, int label) {
  for (std::int64_t t = std::max<std::int64_t>(kPastLen, anchor - 60); t <= anchor - 30; ++t) {
    if (synthetic_label(cfg, p.x2(t), p.vx_at(t), 60) != label) return false;
  }
  return true;
}

}  // namespace

void validate(const SyntheticConfig& cfg) {
  if (cfg.n_tracks < 0) throw std::invalid_argument("n_tracks must be non-negative");
  if (cfg.image_width < 16 || cfg.image_height < 16) throw std::invalid_argument("image must be at least 16x16");
  if (!(cfg.road_x0 >= 0.0 && cfg.road_x0 < cfg.road_x1 && cfg.road_x1 <= cfg.image_width)) {
    throw std::invalid_argument("road band [" + std::to_string(cfg.road_x0) + ", " + std::to_string(cfg.road_x1) +
                                ") lies outside the image width " + std::to_string(cfg.image_width));
  }
  if (cfg.road_x0 < cfg.box_width + 40.0) throw std::invalid_argument("sidewalk left of the road band is too narrow");
  if (cfg.box_height + 4.0 > cfg.image_height) throw std::invalid_argument("box taller than the image");
  if (!(cfg.pos_fraction > 0.0 && cfg.pos_fraction < 1.0)) throw std::invalid_argument("pos_fraction must lie in (0,1)");
  if (cfg.val_fraction < 0 || cfg.test_fraction < 0 || cfg.val_fraction + cfg.test_fraction >= 1.0) {
    throw std::invalid_argument("split fractions must leave a training split");
  }
  if (cfg.event_min < kPastLen + 60 || cfg.event_max < cfg.event_min) {
    throw std::invalid_argument("event frame range must start at or after frame 75");
  }
  if (!(cfg.min_speed_pos > 0.0 && cfg.min_speed_pos <= cfg.max_speed_pos)) {
    throw std::invalid_argument("bad positive speed range");
  }
  if (cfg.min_speed_pos * cfg.event_max > cfg.road_x0 - cfg.box_width - 4.0) {
    throw std::invalid_argument("slowest approach cannot reach the road band from inside the image");
  }
}

std::optional<int> frames_to_road(const SyntheticConfig& cfg, double x2, double vx, int horizon) {
  if (x2 >= cfg.road_x0) return 0;
  if (vx <= 0.0) return std::nullopt;
  const double k = std::ceil((cfg.road_x0 - x2) / vx - 1e-9);
  if (k > horizon) return std::nullopt;
  return static_cast<int>(k);
}

int synthetic_label(const SyntheticConfig& cfg, double x2, double vx, int horizon) {
  return frames_to_road(cfg, x2, vx, horizon).has_value() ? 1 : 0;
}

TrackSet generate_synthetic_tracks(const SyntheticConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng master(seed);
  const int n = cfg.n_tracks;
  const int n_pos = static_cast<int>(std::lround(cfg.pos_fraction * n));

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  std::fill(labels.begin(), labels.begin() + n_pos, 1);
  shuffle(labels, master);

  // stratified split assignment
  std::vector<Split> splits(static_cast<std::size_t>(n), Split::Train);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(i);
    }
    shuffle(idx, master);
    const auto m = static_cast<double>(idx.size());
    const auto n_test = static_cast<std::size_t>(std::lround(cfg.test_fraction * m));
    const auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * m));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      splits[idx[k]] = k < n_test ? Split::Test : (k < n_test + n_val ? Split::Val : Split::Train);
    }
  }

  TrackSet set;
  set.tracks.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = master.split();
    const int label = labels[static_cast<std::size_t>(i)];
    Track t;
    char id[32];
    std::snprintf(id, sizeof(id), "v%04d/p0", i);
    t.ped_id = id;
    t.split = splits[static_cast<std::size_t>(i)];
    t.label = label;

    Path path;
    std::int64_t len = 0;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw std::runtime_error("synthetic generator could not place track " + t.ped_id);
      Motion kind = Motion::Approach;
      std::int64_t event = -1;
      if (label == 1) {
        event = rng.uniform_int(cfg.event_min, cfg.event_max);
        len = event + 1 + rng.uniform_int(0, 10);
      } else {
        static constexpr Motion kNeg[] = {Motion::Away, Motion::Parallel, Motion::Stationary, Motion::Slow,
                                          Motion::ApproachThenStop};
        kind = kNeg[rng.uniform_int(0, 4)];
        len = rng.uniform_int(kSeqLen + 16, kSeqLen + 35);
      }
      path = sample_path(cfg, kind, len, event, rng);
      const std::int64_t anchor = label == 1 ? event : len - 1;
      if (inside_image(cfg, path, len) && consistent(cfg, path, anchor, label)) {
        if (label == 1) t.event_frame = event;
        break;
      }
    }

    double speed = rng.uniform(10.0, 40.0);
    double accel = 0.0;
    for (std::int64_t f = 0; f < len; ++f) {
      TrackFrame tf;
      tf.frame = f;
      const double x2 = path.x2(f);
      const double b = path.bottom(f);
      tf.box = {x2 - cfg.box_width + rng.normal(0.0, cfg.noise), b - cfg.box_height + rng.normal(0.0, cfg.noise),
                x2 + rng.normal(0.0, cfg.noise), b + rng.normal(0.0, cfg.noise)};
      tf.speed = speed;
      accel = 0.9 * accel + rng.normal(0.0, 0.2);
      speed = std::clamp(speed + accel, 0.0, 60.0);
      t.frames.push_back(tf);
    }
    set.tracks.push_back(std::move(t));
  }
  return set;
}

}  // namespace tfn
