#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "tfn/data.hpp"
#include "tfn/image.hpp"
#include "tfn/random.hpp"

using namespace tfn;

namespace {

Track straight_track(const std::string& id, int n, std::optional<std::int64_t> event, int label,
                     Split split = Split::Train) {
  Track t;
  t.ped_id = id;
  t.split = split;
  t.event_frame = event;
  t.label = label;
  for (int f = 0; f < n; ++f) t.frames.push_back({f, {10.0 + f, 20.0, 18.0 + f, 44.0}, 30.0});
  return t;
}

}  // namespace

TEST_CASE("load_tracks: empty input, well-formed track, invalid box") {
  CHECK(parse_tracks("").tracks.empty());

  TrackSet one;
  one.tracks.push_back(straight_track("vid/p1", 80, 70, 1));
  const auto parsed = parse_tracks(format_tracks(one));
  REQUIRE(parsed.tracks.size() == 1);
  CHECK(parsed.tracks[0].frames.size() == 80);
  CHECK(parsed.tracks[0].video() == "vid");
  CHECK(parsed.tracks[0].event_frame == 70);
  CHECK(format_tracks(parsed) == format_tracks(one));

  const std::string bad = "a\ttrain\t0\t1,2,3,4\t5\t-\t0\n"
                          "a\ttrain\t1\t9,2,3,4\t5\t-\t0\n";
  try {
    (void)parse_tracks(bad, "f.tsv");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("f.tsv:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_tracks("a\ttrain\t3\t1,2,3,4\t5\t-\t0\na\ttrain\t3\t1,2,3,4\t5\t-\t0\n"), DataError);
  CHECK_THROWS_AS(parse_tracks("a\ttrain\t3\t1,2,3,4\t5\t-\n"), DataError);
}

TEST_CASE("load_tracks: ordinal speeds and split tags") {
  const auto set = parse_tracks("p\tval\t0\t1,2,3,4\tstopped\t-\t0\np\tval\t1\t1,2,3,4\taccelerating\t-\t0\n");
  CHECK(set.tracks[0].split == Split::Val);
  CHECK(set.tracks[0].frames[0].speed == 0.0);
  CHECK(set.tracks[0].frames[1].speed == 4.0);
}

TEST_CASE("encode_speed_ordinal") {
  CHECK(encode_speed_ordinal("stopped") == 0);
  CHECK(encode_speed_ordinal("decelerating") == 1);
  CHECK(encode_speed_ordinal("moving slow") == 2);
  CHECK(encode_speed_ordinal("moving fast") == 3);
  CHECK(encode_speed_ordinal("accelerating") == 4);
  try {
    (void)encode_speed_ordinal("reversing");
    FAIL("expected error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("moving slow") != std::string::npos);
  }
}

TEST_CASE("classification samples: 100-frame track, event at 90") {
  TrackSet set;
  set.tracks.push_back(straight_track("a", 100, 90, 1));
  const auto samples = extract_classification_samples(set);
  REQUIRE(samples.size() == 31);
  CHECK(samples.front().frame_t == 30);
  CHECK(samples.back().frame_t == 60);
  for (const auto& s : samples) {
    CHECK(s.tte >= 30);
    CHECK(s.tte <= 60);
    CHECK(s.frame_first == s.frame_t - 15);
    CHECK(s.observed[14][0] == 10.0 + s.frame_t);
    CHECK(s.observed[0][0] == 10.0 + s.frame_t - 14);
  }
  ClassificationOptions strided;
  strided.stride = 4;
  CHECK(extract_classification_samples(set, strided).size() == 8);
}

TEST_CASE("classification samples: negatives anchor at the track end, short tracks skipped") {
  TrackSet set;
  set.tracks.push_back(straight_track("neg", 46, std::nullopt, 0));
  set.tracks.push_back(straight_track("short", 10, std::nullopt, 0));
  ExtractionStats st;
  const auto samples = extract_classification_samples(set, {}, &st);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].label == 0);
  CHECK(samples[0].frame_t == 15);
  CHECK(samples[0].tte == 30);
  CHECK(st.skipped_short == 1);
}

TEST_CASE("trajectory windows") {
  TrackSet set;
  set.tracks.push_back(straight_track("a", 75, std::nullopt, 0));
  CHECK(extract_trajectory_samples(set, {0.0}).size() == 1);
  CHECK(extract_trajectory_samples(set, {0.9}).size() == 1);
  TrackSet longer;
  longer.tracks.push_back(straight_track("b", 149, std::nullopt, 0));
  CHECK(trajectory_step(0.6) == 30);
  const auto w = extract_trajectory_samples(longer, {0.6});
  REQUIRE(w.size() == 3);
  CHECK(w[0].start_frame == 0);
  CHECK(w[1].start_frame == 30);
  CHECK(w[2].start_frame == 60);
  CHECK(trajectory_step(0.999) == 1);
}

TEST_CASE("offset_and_zscore") {
  NormStats st{{1, 2, 3, 4, 5}, {2, 2, 2, 2, 2}};
  Rows same(6, Row{5, 6, 7, 8, 9});
  const auto n = offset_and_zscore(same, st);
  for (const auto& r : n) {
    CHECK(r[0] == -0.5);
    CHECK(r[1] == -1.0);
    CHECK(r[3] == -2.0);
  }
  Rng rng(3);
  Rows seq(15);
  for (auto& r : seq) {
    for (auto& v : r) v = rng.uniform(0, 200);
  }
  const auto z = offset_and_zscore(seq, st);
  for (int j = 0; j < 4; ++j) CHECK(z[0][static_cast<std::size_t>(j)] == (0.0 - st.mean[static_cast<std::size_t>(j)]) / 2.0);
  const auto back = denormalize_relative(z, seq[0], st);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(back[i][j] - seq[i][j]) <= 1e-5 * std::max(1.0, std::abs(seq[i][j])));
  }
  NormStats bad = st;
  bad.std[2] = 0.0;
  CHECK_THROWS_AS(offset_and_zscore(seq, bad), DataError);
}

TEST_CASE("compute_class_weight") {
  CHECK(compute_class_weight({0, 1, 0, 1}) == 0.5);
  std::vector<int> l(100, 0);
  std::fill(l.begin(), l.begin() + 30, 1);
  CHECK(compute_class_weight(l) == doctest::Approx(0.7));
  CHECK_THROWS_AS(compute_class_weight({1, 1, 1}), DataError);
}

TEST_CASE("synthetic generator: determinism, balance, splits, labels") {
  SyntheticConfig cfg;
  cfg.n_tracks = 60;
  const auto a = format_tracks(generate_synthetic_tracks(cfg, 7));
  const auto b = format_tracks(generate_synthetic_tracks(cfg, 7));
  CHECK(a == b);
  CHECK(a != format_tracks(generate_synthetic_tracks(cfg, 8)));

  cfg.n_tracks = 1000;
  const auto set = generate_synthetic_tracks(cfg, 1);
  int pos = 0;
  std::set<std::string> ids;
  for (const auto& t : set.tracks) {
    pos += t.label;
    CHECK(ids.insert(t.ped_id).second);
    for (const auto& f : t.frames) {
      CHECK(f.box[0] < f.box[2]);
      CHECK(f.box[0] > -2.0);
      CHECK(f.box[2] < cfg.image_width + 2.0);
    }
  }
  CHECK(std::abs(pos / 1000.0 - cfg.pos_fraction) <= 0.05);
  const auto samples = extract_classification_samples(set);
  CHECK(samples.size() > 20000);

  CHECK(synthetic_label(cfg, cfg.road_x0 - 40 * 0.5, 0.5) == 1);  // zero noise, tte 40
  CHECK(synthetic_label(cfg, cfg.road_x0 - 40 * 0.5, -0.5) == 0);
  CHECK(synthetic_label(cfg, cfg.road_x0 - 70 * 0.5, 0.5) == 0);

  SyntheticConfig off = cfg;
  off.road_x1 = cfg.image_width + 10.0;
  CHECK_THROWS_AS(generate_synthetic_tracks(off, 1), std::invalid_argument);
}

TEST_CASE("synthetic frames: deterministic and consistent with boxes") {
  SyntheticConfig cfg;
  cfg.n_tracks = 4;
  const auto set = generate_synthetic_tracks(cfg, 5);
  SyntheticFrameSource src(set, cfg, 5);
  const auto& t = set.tracks[0];
  const auto img = src.frame(t.video(), 20);
  CHECK(img == src.frame(t.video(), 20));
  CHECK(src.load_count() == 2);
  CHECK(img.height == cfg.image_height);
  CHECK(img.width == cfg.image_width);
  CHECK_THROWS_AS(src.frame("nope", 0), DataError);
}

TEST_CASE("ppm round trip keeps B,G,R order") {
  SceneImage img(3, 4);
  for (std::size_t i = 0; i < img.bgr.size(); ++i) img.bgr[i] = static_cast<std::uint8_t>(i * 7);
  const auto path = (std::filesystem::temp_directory_path() / "tfn_test.ppm").string();
  write_ppm(path, img);
  CHECK(read_ppm(path) == img);
  std::filesystem::remove(path);
}

TEST_CASE("resize and tensor conversion") {
  SceneImage img(4, 4, 100);
  const auto r = resize_bilinear(img, 2, 3);
  for (auto v : r.bgr) CHECK(v == 100);
  ImageNorm norm;
  const auto t = image_to_tensor(r, norm);
  CHECK(t.shape() == Shape{3, 2, 3});
  CHECK(t.at(0) == doctest::Approx((100.0 / 255 - norm.mean[0]) / norm.std[0]).epsilon(1e-6));
}

TEST_CASE("palette file") {
  const auto& p = default_palette();
  REQUIRE(p.rgb.size() == 80);
  CHECK(p.rgb[0] == std::array<std::uint8_t, 3>{120, 120, 120});
  CHECK(p.rgb[2] == std::array<std::uint8_t, 3>{6, 230, 230});
  std::set<std::array<std::uint8_t, 3>> distinct(p.rgb.begin(), p.rgb.end());
  CHECK(distinct.size() >= 75);
  CHECK_THROWS_AS(parse_palette("1,2\n"), DataError);
  CHECK_THROWS_AS(parse_palette("1,2,300\n"), DataError);
}

TEST_CASE("render_overlay examples") {
  const auto& pal = default_palette();
  SceneImage img(20, 20);
  Rng rng(1);
  for (auto& v : img.bgr) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  CHECK(render_overlay(img, {}, pal) == img);

  const std::vector<Box> boxes{{2, 2, 10, 10}, {6, 6, 14, 14}};
  const auto out = render_overlay(img, boxes, pal);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) CHECK(out.at(y, x, 2) == img.at(y, x, 2));
  }
  // overlap carries the later box colour
  CHECK(out.at(8, 8, 0) == pal.rgb[1][2]);
  CHECK(out.at(8, 8, 1) == pal.rgb[1][1]);
  CHECK(out.at(3, 3, 0) == pal.rgb[0][2]);
  CHECK(out.at(3, 3, 1) == pal.rgb[0][1]);
  // outside both boxes unchanged; box right edge is exclusive
  CHECK(out.at(0, 0, 0) == img.at(0, 0, 0));
  CHECK(out.at(3, 14, 0) == img.at(3, 14, 0));
  CHECK(render_overlay(out, boxes, pal) == out);

  CHECK_THROWS_AS(render_overlay(img, boxes, Palette{}), DataError);
  // clipping
  const auto clipped = render_overlay(img, {{-5, -5, 3, 3}}, pal, 15);
  CHECK(clipped.at(0, 0, 0) == pal.rgb[15][2]);
}
