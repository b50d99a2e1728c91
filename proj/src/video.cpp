#include "stde/video.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "stde/rng.hpp"

namespace stde {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'S', 'T', 'V', '1'};
constexpr std::size_t kHeaderSize = 4 + 5 * 4;

void validate_shape(const Shape& s) {
  if (s.frames == 0 || s.height == 0 || s.width == 0 || s.channels == 0) {
    throw std::invalid_argument("video shape has a zero axis: " + to_string(s));
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes[offset + k]) << (8 * k);
  return v;
}

void check_same_shape(const VideoTensor& a, const VideoTensor& b) {
  if (a.shape() != b.shape()) {
    throw CompositionError("shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string frame_name(const char* stem, std::size_t t, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu.%s", stem, t, ext);
  return buf;
}

void write_pnm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               std::size_t channels, std::span<const std::uint8_t> pixels) {
  std::ostringstream header;
  header << (channels == 3 ? "P6" : "P5") << "\n" << width << " " << height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_file(path, bytes);
}

// Parses one binary PNM (P5/P6, maxval 255).
struct Pnm {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::span<const std::uint8_t> pixels;
};

Pnm parse_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ParseError("expected integer in pixmap header", pos);
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1u << 24)) throw ParseError("pixmap dimension too large", pos);
      ++pos;
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("not a binary P5/P6 pixmap", 0);
  }
  Pnm pnm;
  pnm.channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  pnm.width = read_uint();
  pnm.height = read_uint();
  const std::size_t maxval = read_uint();
  if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval), pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ParseError("missing header terminator", pos);
  ++pos;
  const std::size_t need = pnm.width * pnm.height * pnm.channels;
  if (pnm.width == 0 || pnm.height == 0) throw ParseError("zero pixmap dimension", pos);
  if (bytes.size() - pos < need) throw ParseError("truncated pixmap payload", bytes.size());
  pnm.pixels = bytes.subspan(pos, need);
  return pnm;
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.frames << "x" << s.height << "x" << s.width << "x" << s.channels;
  return os.str();
}

VideoTensor::VideoTensor(Shape shape, std::uint8_t fill) : shape_(shape) {
  validate_shape(shape_);
  data_.assign(shape_.elements(), fill);
}

VideoTensor::VideoTensor(Shape shape, std::vector<std::uint8_t> data) : shape_(shape), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_.elements()) {
    throw std::invalid_argument("video data length " + std::to_string(data_.size()) + " does not match shape " +
                                to_string(shape_));
  }
}

MaskVolume::MaskVolume(std::size_t frames, std::size_t height, std::size_t width)
    : frames_(frames), height_(height), width_(width), bits_(frames * height * width, 0) {}

void MaskVolume::fill_rect(std::size_t t, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  for (std::size_t i = y0; i < y1; ++i) {
    auto row = bits_.begin() + static_cast<std::ptrdiff_t>(index(t, i, 0));
    std::fill(row + static_cast<std::ptrdiff_t>(x0), row + static_cast<std::ptrdiff_t>(x1), 1);
  }
}

VideoTensor compose(const VideoTensor& source, const VideoTensor& target, const MaskVolume& mask) {
  const Shape& s = source.shape();
  const Shape& t = target.shape();
  auto axis_error = [&](const char* axis, std::size_t a, std::size_t b) {
    return CompositionError(std::string("compose: ") + axis + " mismatch (" + std::to_string(a) + " vs " +
                            std::to_string(b) + ")");
  };
  if (s.frames != t.frames) throw axis_error("frames", s.frames, t.frames);
  if (s.height != t.height) throw axis_error("height", s.height, t.height);
  if (s.width != t.width) throw axis_error("width", s.width, t.width);
  if (s.channels != t.channels) throw axis_error("channels", s.channels, t.channels);
  if (mask.frames() != s.frames) throw axis_error("mask frames", mask.frames(), s.frames);
  if (mask.height() != s.height) throw axis_error("mask height", mask.height(), s.height);
  if (mask.width() != s.width) throw axis_error("mask width", mask.width(), s.width);

  VideoTensor out = source;
  auto dst = out.data();
  auto src = target.data();
  const std::size_t c = s.channels;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask.test_flat(k)) std::copy_n(src.begin() + k * c, c, dst.begin() + k * c);
  }
  return out;
}

std::size_t mask_area(const MaskVolume& mask) {
  std::size_t n = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) n += mask.test_flat(k) ? 1 : 0;
  return n;
}

std::size_t l0_diff(const VideoTensor& a, const VideoTensor& b) {
  check_same_shape(a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::size_t n = 0;
  for (std::size_t k = 0; k < x.size(); ++k) n += x[k] != y[k] ? 1 : 0;
  return n;
}

double l2_diff(const VideoTensor& a, const VideoTensor& b) {
  check_same_shape(a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::uint64_t sum = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::int64_t d = static_cast<std::int64_t>(x[k]) - static_cast<std::int64_t>(y[k]);
    sum += static_cast<std::uint64_t>(d * d);
  }
  return std::sqrt(static_cast<double>(sum));
}

MaskVolume diff_mask(const VideoTensor& a, const VideoTensor& b) {
  check_same_shape(a, b);
  const Shape& s = a.shape();
  MaskVolume m(s.frames, s.height, s.width);
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!std::equal(x.begin() + k * s.channels, x.begin() + (k + 1) * s.channels, y.begin() + k * s.channels)) {
      m.set(k / (s.height * s.width), (k / s.width) % s.height, k % s.width);
    }
  }
  return m;
}

std::vector<std::uint8_t> encode_stv(const VideoTensor& video) {
  const Shape& s = video.shape();
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (s.frames > kMax || s.height > kMax || s.width > kMax || s.channels > kMax) {
    throw std::invalid_argument("video axis exceeds 32-bit container limit");
  }
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.reserve(kHeaderSize + s.elements());
  put_u32(out, static_cast<std::uint32_t>(s.frames));
  put_u32(out, static_cast<std::uint32_t>(s.height));
  put_u32(out, static_cast<std::uint32_t>(s.width));
  put_u32(out, static_cast<std::uint32_t>(s.channels));
  put_u32(out, 0);
  out.insert(out.end(), video.data().begin(), video.data().end());
  return out;
}

VideoTensor decode_stv(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size()) throw ParseError("truncated magic", bytes.size());
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw ParseError("bad magic, expected STV1", 0);
  if (bytes.size() < kHeaderSize) throw ParseError("truncated header", bytes.size());
  Shape s{get_u32(bytes, 4), get_u32(bytes, 8), get_u32(bytes, 12), get_u32(bytes, 16)};
  const std::uint32_t reserved = get_u32(bytes, 20);
  if (reserved != 0) throw ParseError("reserved header field must be 0", 20);
  if (s.frames == 0 || s.height == 0 || s.width == 0 || s.channels == 0) {
    throw ParseError("zero dimension in header", 4);
  }
  // Dimensions are each < 2^32, so overflow needs a checked product.
  std::uint64_t need = 1;
  for (std::uint64_t d : {std::uint64_t{s.frames}, std::uint64_t{s.height}, std::uint64_t{s.width},
                          std::uint64_t{s.channels}}) {
    if (need > std::numeric_limits<std::uint64_t>::max() / d) throw ParseError("dimension product overflows", 4);
    need *= d;
  }
  const std::uint64_t have = bytes.size() - kHeaderSize;
  if (need > have) {
    throw ParseError("payload truncated: header declares " + std::to_string(need) + " bytes, " +
                         std::to_string(have) + " present",
                     bytes.size());
  }
  if (need < have) throw ParseError("trailing bytes after payload", kHeaderSize + need);
  std::vector<std::uint8_t> data(bytes.begin() + kHeaderSize, bytes.end());
  return VideoTensor(s, std::move(data));
}

VideoTensor load_video(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_stv(bytes);
}

void save_video(const VideoTensor& video, const std::filesystem::path& path) {
  write_file(path, encode_stv(video));
}

std::vector<std::filesystem::path> export_frames(const VideoTensor& video, const std::optional<MaskVolume>& mask,
                                                 const std::filesystem::path& dir) {
  const Shape& s = video.shape();
  if (s.channels != 1 && s.channels != 3) {
    throw std::invalid_argument("export_frames: unsupported channel count " + std::to_string(s.channels));
  }
  if (mask && (mask->frames() != s.frames || mask->height() != s.height || mask->width() != s.width)) {
    throw CompositionError("export_frames: mask does not match video " + to_string(s));
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const char* ext = s.channels == 3 ? "ppm" : "pgm";
  const std::size_t frame_size = s.height * s.width * s.channels;
  std::vector<std::filesystem::path> written;
  for (std::size_t t = 0; t < s.frames; ++t) {
    auto frame = video.data().subspan(t * frame_size, frame_size);
    auto path = dir / frame_name("frame", t, ext);
    write_pnm(path, s.height, s.width, s.channels, frame);
    written.push_back(path);
  }
  if (!mask) return written;

  // Outline: a masked cell with at least one unmasked 4-neighbour (or the
  // frame border) is painted red (white for grayscale).
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::vector<std::uint8_t> pixels(video.data().begin() + static_cast<std::ptrdiff_t>(t * frame_size),
                                     video.data().begin() + static_cast<std::ptrdiff_t>((t + 1) * frame_size));
    auto inside = [&](std::ptrdiff_t i, std::ptrdiff_t j) {
      return i >= 0 && j >= 0 && i < static_cast<std::ptrdiff_t>(s.height) &&
             j < static_cast<std::ptrdiff_t>(s.width) && mask->test(t, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    };
    for (std::size_t i = 0; i < s.height; ++i) {
      for (std::size_t j = 0; j < s.width; ++j) {
        const auto si = static_cast<std::ptrdiff_t>(i);
        const auto sj = static_cast<std::ptrdiff_t>(j);
        if (!inside(si, sj)) continue;
        if (inside(si - 1, sj) && inside(si + 1, sj) && inside(si, sj - 1) && inside(si, sj + 1)) continue;
        std::uint8_t* px = pixels.data() + (i * s.width + j) * s.channels;
        if (s.channels == 3) {
          px[0] = 255;
          px[1] = 0;
          px[2] = 0;
        } else {
          px[0] = 255;
        }
      }
    }
    auto path = dir / frame_name("overlay", t, ext);
    write_pnm(path, s.height, s.width, s.channels, pixels);
    written.push_back(path);
  }
  return written;
}

VideoTensor import_frames(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    const auto name = entry.path().filename().string();
    const auto ext = entry.path().extension().string();
    if (name.rfind("frame_", 0) == 0 && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
  }
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  if (files.empty()) throw IoError("no frame_* pixmaps in " + dir.string());
  std::sort(files.begin(), files.end());

  std::vector<std::uint8_t> data;
  Shape shape;
  for (const auto& path : files) {
    const auto bytes = read_file(path);
    Pnm pnm;
    try {
      pnm = parse_pnm(bytes);
    } catch (const ParseError& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), e.offset());
    }
    if (shape.frames == 0) {
      shape = Shape{0, pnm.height, pnm.width, pnm.channels};
    } else if (pnm.height != shape.height || pnm.width != shape.width || pnm.channels != shape.channels) {
      throw ParseError(path.filename().string() + ": frame size or format differs from first frame", 0);
    }
    data.insert(data.end(), pnm.pixels.begin(), pnm.pixels.end());
    ++shape.frames;
  }
  return VideoTensor(shape, std::move(data));
}

TextureKind parse_texture_kind(const std::string& name) {
  if (name == "target") return TextureKind::TargetVideo;
  if (name == "gaussian") return TextureKind::GaussianNoise;
  if (name == "monochrome") return TextureKind::Monochrome;
  throw std::invalid_argument("unknown texture kind '" + name + "' (expected target, gaussian or monochrome)");
}

std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::TargetVideo: return "target";
    case TextureKind::GaussianNoise: return "gaussian";
    case TextureKind::Monochrome: return "monochrome";
  }
  return "unknown";
}

VideoTensor synthesize_texture(TextureKind kind, const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  VideoTensor out(shape);
  auto data = out.data();
  switch (kind) {
    case TextureKind::TargetVideo:
      throw std::invalid_argument("target-video texture comes from the target file, not a generator");
    case TextureKind::GaussianNoise:
      for (auto& v : data) v = static_cast<std::uint8_t>(std::clamp(std::lround(128.0 + 64.0 * rng.normal()), 0L, 255L));
      break;
    case TextureKind::Monochrome: {
      std::vector<std::uint8_t> color(shape.channels);
      for (auto& c : color) c = static_cast<std::uint8_t>(rng.below(256));
      for (std::size_t k = 0; k < data.size(); ++k) data[k] = color[k % shape.channels];
      break;
    }
  }
  return out;
}

}  // namespace stde
