#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stde {

/// Raised when two videos (or a video and a mask) disagree on an axis.
class CompositionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed ".stv" or pixmap input. `offset()` is the byte position at which
/// parsing stopped.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t cells() const noexcept { return frames * height * width; }
  std::size_t elements() const noexcept { return cells() * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// T x H x W x C unsigned 8-bit video, row-major in (t, i, j, c).
class VideoTensor {
public:
  VideoTensor() = default;
  /// Zero-filled tensor. Throws std::invalid_argument on a zero axis.
  explicit VideoTensor(Shape shape, std::uint8_t fill = 0);
  VideoTensor(Shape shape, std::vector<std::uint8_t> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t frames() const noexcept { return shape_.frames; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t channels() const noexcept { return shape_.channels; }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  std::size_t index(std::size_t t, std::size_t i, std::size_t j, std::size_t c) const noexcept {
    return ((t * shape_.height + i) * shape_.width + j) * shape_.channels + c;
  }
  std::uint8_t at(std::size_t t, std::size_t i, std::size_t j, std::size_t c) const noexcept {
    return data_[index(t, i, j, c)];
  }
  std::uint8_t& at(std::size_t t, std::size_t i, std::size_t j, std::size_t c) noexcept {
    return data_[index(t, i, j, c)];
  }

  friend bool operator==(const VideoTensor&, const VideoTensor&) = default;

private:
  Shape shape_;
  std::vector<std::uint8_t> data_;
};

/// Binary T x H x W occupancy. Bit (t, i, j) set means the cell is patched.
class MaskVolume {
public:
  MaskVolume() = default;
  MaskVolume(std::size_t frames, std::size_t height, std::size_t width);

  std::size_t frames() const noexcept { return frames_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }

  std::size_t index(std::size_t t, std::size_t i, std::size_t j) const noexcept {
    return (t * height_ + i) * width_ + j;
  }
  bool test(std::size_t t, std::size_t i, std::size_t j) const noexcept {
    return bits_[index(t, i, j)] != 0;
  }
  void set(std::size_t t, std::size_t i, std::size_t j, bool value = true) noexcept {
    bits_[index(t, i, j)] = value ? 1 : 0;
  }
  bool test_flat(std::size_t k) const noexcept { return bits_[k] != 0; }

  /// Set bits in frame t over rows [y0, y1) and columns [x0, x1). Caller clips.
  void fill_rect(std::size_t t, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1);

  friend bool operator==(const MaskVolume&, const MaskVolume&) = default;

private:
  std::size_t frames_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Pixel (t,i,j,c) is taken from `target` where the mask is set, else from
/// `source`. No blending.
VideoTensor compose(const VideoTensor& source, const VideoTensor& target, const MaskVolume& mask);

/// Number of set cells across all frames.
std::size_t mask_area(const MaskVolume& mask);

/// Number of (t,i,j,c) positions at which the two videos differ.
std::size_t l0_diff(const VideoTensor& a, const VideoTensor& b);

/// Euclidean distance over raw sample differences.
double l2_diff(const VideoTensor& a, const VideoTensor& b);

/// Cell (t,i,j) is set iff any channel differs between the two videos.
MaskVolume diff_mask(const VideoTensor& a, const VideoTensor& b);

// ".stv" container: "STV1", then little-endian u32 T, H, W, C, reserved(0),
// then T*H*W*C raw bytes.
std::vector<std::uint8_t> encode_stv(const VideoTensor& video);
VideoTensor decode_stv(std::span<const std::uint8_t> bytes);
VideoTensor load_video(const std::filesystem::path& path);
void save_video(const VideoTensor& video, const std::filesystem::path& path);

/// Writes frame_NNN.ppm (C=3) or .pgm (C=1) per frame. With a mask, also
/// writes overlay_NNN with the patch outline drawn on top of the frame.
std::vector<std::filesystem::path> export_frames(const VideoTensor& video,
                                                 const std::optional<MaskVolume>& mask,
                                                 const std::filesystem::path& dir);

/// Reads every frame_*.ppm / frame_*.pgm in `dir` (sorted by name) into one
/// tensor. All frames must share size and format.
VideoTensor import_frames(const std::filesystem::path& dir);

/// Patch texture sources used by the texture-type ablation.
enum class TextureKind { TargetVideo, GaussianNoise, Monochrome };

TextureKind parse_texture_kind(const std::string& name);
std::string to_string(TextureKind kind);

/// Gaussian noise around mid-gray (clipped to [0,255]) or a single random
/// color repeated over the whole volume.
VideoTensor synthesize_texture(TextureKind kind, const Shape& shape, std::uint64_t seed);

}  // namespace stde
