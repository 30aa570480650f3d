#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "tfn/data.hpp"

namespace tfn {

namespace {

constexpr std::array<const char*, 5> kSpeedNames = {"stopped", "decelerating", "moving slow", "moving fast",
                                                   "accelerating"};

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "' (expected train, val or test)");
}

std::string Track::video() const {
  const auto slash = ped_id.find('/');
  return slash == std::string::npos ? ped_id : ped_id.substr(0, slash);
}

int encode_speed_ordinal(const std::string& category) {
  for (std::size_t i = 0; i < kSpeedNames.size(); ++i) {
    if (category == kSpeedNames[i]) return static_cast<int>(i);
  }
  std::string valid;
  for (const char* n : kSpeedNames) valid += std::string(valid.empty() ? "" : ", ") + "'" + n + "'";
  throw DataError("unknown speed category '" + category + "'; valid names: " + valid);
}

TrackSet parse_tracks(const std::string& text, const std::string& source) {
  TrackSet set;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string line;
  std::int64_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(source + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_on(line, '\t');
    if (f.size() != 7) fail("expected 7 tab-separated fields, got " + std::to_string(f.size()));

    TrackFrame tf;
    if (!parse_number(f[2], tf.frame) || tf.frame < 0) fail("bad frame index '" + f[2] + "'");
    const auto coords = split_on(f[3], ',');
    if (coords.size() != 4) fail("bbox must be x1,y1,x2,y2");
    for (int i = 0; i < 4; ++i) {
      if (!parse_number(coords[static_cast<std::size_t>(i)], tf.box[static_cast<std::size_t>(i)])) {
        fail("bad bbox value '" + coords[static_cast<std::size_t>(i)] + "'");
      }
    }
    if (!(tf.box[0] < tf.box[2]) || !(tf.box[1] < tf.box[3])) fail("bbox violates x1<x2, y1<y2: " + f[3]);
    if (!parse_number(f[4], tf.speed)) {
      try {
        tf.speed = encode_speed_ordinal(f[4]);
      } catch (const DataError& e) {
        fail(e.what());
      }
    }
    std::optional<std::int64_t> event;
    if (f[5] != "-") {
      std::int64_t ev = 0;
      if (!parse_number(f[5], ev)) fail("bad event frame '" + f[5] + "'");
      event = ev;
    }
    int label = 0;
    if (!parse_number(f[6], label) || (label != 0 && label != 1)) fail("label must be 0 or 1");

    Split split{};
    try {
      split = parse_split(f[1]);
    } catch (const DataError& e) {
      fail(e.what());
    }

    const bool continues = !set.tracks.empty() && set.tracks.back().ped_id == f[0];
    if (!continues) {
      if (seen.count(f[0])) fail("track '" + f[0] + "' is not contiguous in the file");
      seen[f[0]] = set.tracks.size();
      Track t;
      t.ped_id = f[0];
      t.split = split;
      t.event_frame = event;
      t.label = label;
      set.tracks.push_back(std::move(t));
    }
    Track& t = set.tracks.back();
    if (t.split != split || t.event_frame != event || t.label != label) {
      fail("split, event and label must be constant within track '" + t.ped_id + "'");
    }
    if (!t.frames.empty() && tf.frame <= t.frames.back().frame) {
      fail("overlapping frame index " + std::to_string(tf.frame) + " in track '" + t.ped_id + "'");
    }
    t.frames.push_back(tf);
  }
  return set;
}

TrackSet load_tracks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open track file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_tracks(ss.str(), path);
}

std::string format_tracks(const TrackSet& set) {
  std::string out;
  for (const auto& t : set.tracks) {
    const std::string event = t.event_frame ? std::to_string(*t.event_frame) : "-";
    for (const auto& f : t.frames) {
      out += t.ped_id;
      out += '\t';
      out += split_name(t.split);
      out += '\t' + std::to_string(f.frame) + '\t';
      out += fmt(f.box[0]) + ',' + fmt(f.box[1]) + ',' + fmt(f.box[2]) + ',' + fmt(f.box[3]);
      out += '\t' + fmt(f.speed) + '\t' + event + '\t' + std::to_string(t.label) + '\n';
    }
  }
  return out;
}

void save_tracks(const std::string& path, const TrackSet& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write track file " + path);
  out << format_tracks(set);
}

}  // namespace tfn
