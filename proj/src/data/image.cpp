#include "tfn/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tfn/checkpoint.hpp"

#ifndef TFN_DATA_DIR
#define TFN_DATA_DIR "data"
#endif

namespace tfn {

SceneImage::SceneImage(int h, int w, std::uint8_t fill)
    : height(h), width(w), bgr(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {
  if (h < 0 || w < 0) throw std::invalid_argument("negative image size");
}

namespace {

// Reads the next header token of a PPM, skipping whitespace and comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

}  // namespace

SceneImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  if (ppm_token(in) != "P6") throw DataError(path + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw DataError(path + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError(path + ": only 8-bit PPM images are supported");
  SceneImage img(h, w);
  std::vector<char> raw(img.bgr.size());
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw DataError(path + ": truncated pixel data");
  for (std::size_t i = 0; i < raw.size(); i += 3) {
    img.bgr[i] = static_cast<std::uint8_t>(raw[i + 2]);
    img.bgr[i + 1] = static_cast<std::uint8_t>(raw[i + 1]);
    img.bgr[i + 2] = static_cast<std::uint8_t>(raw[i]);
  }
  return img;
}

void write_ppm(const std::string& path, const SceneImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> raw(img.bgr.size());
  for (std::size_t i = 0; i < raw.size(); i += 3) {
    raw[i] = static_cast<char>(img.bgr[i + 2]);
    raw[i + 1] = static_cast<char>(img.bgr[i + 1]);
    raw[i + 2] = static_cast<char>(img.bgr[i]);
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
}

SceneImage resize_bilinear(const SceneImage& img, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("resize target must be positive");
  if (img.height == 0 || img.width == 0) throw EmptyTensorError("cannot resize an empty image");
  if (img.height == height && img.width == width) return img;
  SceneImage out(height, width);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  std::vector<int> x0(static_cast<std::size_t>(width)), x1(static_cast<std::size_t>(width));
  std::vector<double> fx(static_cast<std::size_t>(width));
  for (int x = 0; x < width; ++x) {
    const double src = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
    const auto xu = static_cast<std::size_t>(x);
    x0[xu] = static_cast<int>(src);
    x1[xu] = std::min(x0[xu] + 1, img.width - 1);
    fx[xu] = src - x0[xu];
  }
  for (int y = 0; y < height; ++y) {
    const double src = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(src);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = src - y0;
    for (int x = 0; x < width; ++x) {
      const auto xu = static_cast<std::size_t>(x);
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0[xu], c) * (1.0 - fx[xu]) + img.at(y0, x1[xu], c) * fx[xu];
        const double bot = img.at(y1, x0[xu], c) * (1.0 - fx[xu]) + img.at(y1, x1[xu], c) * fx[xu];
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(top * (1.0 - fy) + bot * fy));
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const SceneImage& img, const ImageNorm& norm) {
  Tensor t = Tensor::empty({3, img.height, img.width}, DType::F32);
  auto d = t.data<float>();
  const std::size_t plane = static_cast<std::size_t>(img.height) * static_cast<std::size_t>(img.width);
  for (int c = 0; c < 3; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const double scale = 1.0 / (255.0 * norm.std[cu]);
    const double shift = norm.mean[cu] / norm.std[cu];
    for (std::size_t i = 0; i < plane; ++i) {
      d[cu * plane + i] = static_cast<float>(img.bgr[i * 3 + cu] * scale - shift);
    }
  }
  return t;
}

Palette parse_palette(const std::string& text, const std::string& source) {
  Palette p;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::array<std::uint8_t, 3> rgb{};
    std::istringstream ls(line);
    for (int c = 0; c < 3; ++c) {
      std::string part;
      if (!std::getline(ls, part, ',')) throw DataError(source + ":" + std::to_string(lineno) + ": expected R,G,B");
      char* end = nullptr;
      const long v = std::strtol(part.c_str(), &end, 10);
      if (part.empty() || *end != '\0' || v < 0 || v > 255) {
        throw DataError(source + ":" + std::to_string(lineno) + ": colour component out of range: '" + part + "'");
      }
      rgb[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v);
    }
    p.rgb.push_back(rgb);
  }
  return p;
}

Palette load_palette(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open palette " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_palette(ss.str(), path);
}

std::string default_palette_path() {
  if (const char* dir = std::getenv("TFN_DATA_DIR")) return std::string(dir) + "/ade20k_palette.txt";
  return std::string(TFN_DATA_DIR) + "/ade20k_palette.txt";
}

const Palette& default_palette() {
  static const Palette p = load_palette(default_palette_path());
  return p;
}

std::string palette_hash(const Palette& p) {
  std::string text;
  for (const auto& c : p.rgb) {
    text += std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + "\n";
  }
  return fnv1a_hex(text.data(), text.size());
}

std::pair<int, int> box_span(double a, double b, int extent) {
  if (!std::isfinite(a) || !std::isfinite(b)) return {0, 0};
  const double lo = std::floor(std::min(a, b));
  const double hi = std::ceil(std::max(a, b));
  const int l = static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(extent)));
  const int h = static_cast<int>(std::clamp(hi, 0.0, static_cast<double>(extent)));
  return {l, std::max(l, h)};
}

void render_overlay_inplace(SceneImage& img, const std::vector<Box>& boxes, const Palette& palette, int first_index) {
  if (palette.rgb.empty()) throw DataError("overlay palette is empty");
  if (first_index < 0 || static_cast<std::size_t>(first_index) + boxes.size() > palette.rgb.size()) {
    throw DataError("palette has " + std::to_string(palette.rgb.size()) + " colours, overlay needs indices up to " +
                    std::to_string(first_index + static_cast<int>(boxes.size()) - 1));
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& rgb = palette.rgb[static_cast<std::size_t>(first_index) + i];
    const auto [x0, x1] = box_span(boxes[i][0], boxes[i][2], img.width);
    const auto [y0, y1] = box_span(boxes[i][1], boxes[i][3], img.height);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        img.at(y, x, 0) = rgb[2];
        img.at(y, x, 1) = rgb[1];
      }
    }
  }
}

SceneImage render_overlay(const SceneImage& img, const std::vector<Box>& boxes, const Palette& palette,
                          int first_index) {
  SceneImage out = img;
  render_overlay_inplace(out, boxes, palette, first_index);
  return out;
}

DirectoryFrameSource::DirectoryFrameSource(std::string root, int height, int width)
    : root_(std::move(root)), height_(height), width_(width) {}

SceneImage DirectoryFrameSource::load(const std::string& video, std::int64_t index) const {
  return read_ppm(root_ + "/" + video + "/" + std::to_string(index) + ".ppm");
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

}  // namespace

SyntheticFrameSource::SyntheticFrameSource(const TrackSet& tracks, const SyntheticConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  for (const auto& t : tracks.tracks) {
    Ped ped;
    const auto h = mix(seed ^ hash_str(t.ped_id));
    ped.colour = {static_cast<std::uint8_t>(30 + h % 80), static_cast<std::uint8_t>(30 + (h >> 8) % 80),
                  static_cast<std::uint8_t>(30 + (h >> 16) % 80)};
    for (const auto& f : t.frames) ped.boxes.emplace(f.frame, f.box);
    videos_[t.video()].push_back(std::move(ped));
  }
}

SceneImage SyntheticFrameSource::load(const std::string& video, std::int64_t index) const {
  auto it = videos_.find(video);
  if (it == videos_.end()) throw DataError("unknown video '" + video + "'");
  const int h = cfg_.image_height;
  const int w = cfg_.image_width;
  SceneImage img(h, w);
  const std::uint64_t vseed = mix(seed_ ^ hash_str(video));
  const int lane = static_cast<int>((cfg_.road_x0 + cfg_.road_x1) / 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto n = mix(vseed ^ (static_cast<std::uint64_t>(y) << 20) ^ static_cast<std::uint64_t>(x));
      const bool road = x >= cfg_.road_x0 && x < cfg_.road_x1;
      int b, g, r;
      if (road) {
        const int tex = static_cast<int>(n % 13) - 6;
        b = g = r = 85 + tex;
        if ((x == lane || x == lane + 1) && (y / 8) % 2 == 0) b = g = r = 230;
      } else {
        const int tex = static_cast<int>(n % 25) - 12;
        b = 120 + tex;
        g = 140 + tex;
        r = 150 + tex;
      }
      img.at(y, x, 0) = clamp_u8(b);
      img.at(y, x, 1) = clamp_u8(g);
      img.at(y, x, 2) = clamp_u8(r);
    }
  }
  for (const auto& ped : it->second) {
    auto f = ped.boxes.find(index);
    if (f == ped.boxes.end()) continue;
    const auto [x0, x1] = box_span(f->second[0], f->second[2], w);
    const auto [y0, y1] = box_span(f->second[1], f->second[3], h);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        img.at(y, x, 0) = ped.colour[0];
        img.at(y, x, 1) = ped.colour[1];
        img.at(y, x, 2) = ped.colour[2];
      }
    }
  }
  return img;
}

}  // namespace tfn
