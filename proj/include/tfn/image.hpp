#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tfn/data.hpp"
#include "tfn/tensor.hpp"

namespace tfn {

/// 8-bit image, interleaved, channel 0 = blue, 1 = green, 2 = red.
struct SceneImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bgr;

  SceneImage() = default;
  SceneImage(int h, int w, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x, int c) { return bgr[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return bgr[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const SceneImage& o) const = default;
};

/// Binary PPM (P6). PPM stores R,G,B; the channels are swapped on the way in
/// and out so that SceneImage stays B,G,R in memory.
SceneImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const SceneImage& img);

/// Bilinear resize with half-pixel centres (aspect ratio is not preserved).
SceneImage resize_bilinear(const SceneImage& img, int height, int width);

/// Per-channel mean/std in B,G,R order, applied to values scaled to [0,1].
struct ImageNorm {
  std::array<double, 3> mean{0.406, 0.456, 0.485};
  std::array<double, 3> std{0.225, 0.224, 0.229};
};

/// [3,H,W] float tensor in B,G,R channel order.
Tensor image_to_tensor(const SceneImage& img, const ImageNorm& norm = {});

struct Palette {
  std::vector<std::array<std::uint8_t, 3>> rgb;
};

Palette load_palette(const std::string& path);
Palette parse_palette(const std::string& text, const std::string& source = "<memory>");
/// The checked-in ADE20k palette (first 80 colours).
const Palette& default_palette();
std::string default_palette_path();
std::string palette_hash(const Palette& p);

/// Fills each box's interior, in list order, writing only the blue and green
/// channels from palette[first_index + i]. Red is never touched. Boxes are
/// clipped to the image; degenerate boxes draw nothing.
void render_overlay_inplace(SceneImage& img, const std::vector<Box>& boxes, const Palette& palette,
                            int first_index = 0);
SceneImage render_overlay(const SceneImage& img, const std::vector<Box>& boxes, const Palette& palette,
                          int first_index = 0);

/// Pixel span [lo, hi) covered by a box edge pair after clipping to [0, extent).
std::pair<int, int> box_span(double a, double b, int extent);

/// Source of scene frames. Every load is counted so callers can assert that
/// a timed region performs no frame I/O.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  SceneImage frame(const std::string& video, std::int64_t index) const {
    loads_.fetch_add(1, std::memory_order_relaxed);
    return load(video, index);
  }
  std::int64_t load_count() const { return loads_.load(std::memory_order_relaxed); }
  virtual int height() const = 0;
  virtual int width() const = 0;

 protected:
  virtual SceneImage load(const std::string& video, std::int64_t index) const = 0;

 private:
  mutable std::atomic<std::int64_t> loads_{0};
};

/// Reads `<root>/<video>/<frame>.ppm`.
class DirectoryFrameSource : public FrameSource {
 public:
  explicit DirectoryFrameSource(std::string root, int height, int width);
  int height() const override { return height_; }
  int width() const override { return width_; }

 protected:
  SceneImage load(const std::string& video, std::int64_t index) const override;

 private:
  std::string root_;
  int height_;
  int width_;
};

/// Renders synthetic scenes on demand: textured sidewalk, a grey road band and
/// every pedestrian of the video drawn as a solid rectangle at its annotated box.
class SyntheticFrameSource : public FrameSource {
 public:
  SyntheticFrameSource(const TrackSet& tracks, const SyntheticConfig& cfg, std::uint64_t seed);
  int height() const override { return cfg_.image_height; }
  int width() const override { return cfg_.image_width; }

 protected:
  SceneImage load(const std::string& video, std::int64_t index) const override;

 private:
  struct Ped {
    std::array<std::uint8_t, 3> colour;
    std::map<std::int64_t, Box> boxes;
  };
  SyntheticConfig cfg_;
  std::uint64_t seed_;
  std::map<std::string, std::vector<Ped>> videos_;
};

}  // namespace tfn
