#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "stde/encoding.hpp"
#include "stde/video.hpp"

namespace stde {

/// Top-1 class id returned by a model.
struct Label {
  std::uint32_t id = 0;
  friend auto operator<=>(const Label&, const Label&) = default;
};

/// Video shape does not match what the oracle was built for.
class OracleShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// External model unreachable, crashed, timed out or spoke out of protocol.
class TransportError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Monotone count of completed model decisions.
class QueryCounter {
public:
  std::uint64_t count() const noexcept { return count_; }
  void increment() noexcept { ++count_; }

private:
  std::uint64_t count_ = 0;
};

/// Hard-label query interface. `query` is the only way to reach a model and
/// counts exactly one query per completed decision. Instances are
/// single-consumer; use `clone` to get an independent one per worker.
class DecisionOracle {
public:
  virtual ~DecisionOracle() = default;
  DecisionOracle(const DecisionOracle&) = delete;
  DecisionOracle& operator=(const DecisionOracle&) = delete;

  Label query(const VideoTensor& video);

  std::uint64_t queries() const noexcept { return counter_.count(); }
  const Shape& expected_shape() const noexcept { return shape_; }

  /// Fresh instance with the same model and a zeroed counter.
  virtual std::unique_ptr<DecisionOracle> clone() const = 0;

protected:
  explicit DecisionOracle(Shape shape) : shape_(shape) {}
  virtual Label classify(const VideoTensor& video) = 0;

private:
  Shape shape_;
  QueryCounter counter_;
};

/// Synthetic classifier: answers `trigger` once at least `frames_required`
/// frames have `coverage * area(region)` or more of `region` altered
/// relative to the registered clean video; `base` otherwise.
struct RegionTriggerSpec {
  Label base;
  Label trigger;
  Rect region;
  double coverage = 0.5;
  std::size_t frames_required = 1;

  /// Throws std::invalid_argument if the spec is unusable on `shape`.
  void validate(const Shape& shape) const;
  /// Smallest per-frame altered-cell count that qualifies a frame.
  std::size_t cells_needed() const;
};

/// Label the region-trigger rule assigns to a per-cell difference mask.
Label region_trigger_eval(const RegionTriggerSpec& spec, const MaskVolume& diff);

class RegionTriggerOracle final : public DecisionOracle {
public:
  RegionTriggerOracle(RegionTriggerSpec spec, VideoTensor clean);

  const RegionTriggerSpec& spec() const noexcept { return spec_; }
  std::unique_ptr<DecisionOracle> clone() const override;

protected:
  Label classify(const VideoTensor& video) override;

private:
  RegionTriggerSpec spec_;
  VideoTensor clean_;
};

/// argmax_k (w_k . x/255 + b_k), ties to the smaller class id.
class LinearPixelOracle final : public DecisionOracle {
public:
  LinearPixelOracle(Shape shape, std::vector<std::vector<float>> weights, std::vector<float> bias);

  /// Weights drawn N(0, scale^2) from `seed`, zero bias.
  static std::unique_ptr<LinearPixelOracle> random(Shape shape, std::size_t classes, std::uint64_t seed, float scale = 1.0f);

  std::size_t classes() const noexcept { return bias_.size(); }
  std::vector<double> scores(const VideoTensor& video) const;
  std::unique_ptr<DecisionOracle> clone() const override;

protected:
  Label classify(const VideoTensor& video) override;

private:
  std::vector<std::vector<float>> weights_;
  std::vector<float> bias_;
};

struct SubprocessOptions {
  std::string command;
  std::filesystem::path workdir;
  std::chrono::milliseconds timeout{60'000};
};

/// Talks to a child process over newline-delimited JSON:
///   request  {"id": <u64>, "video_path": "<abs path>"}
///   response {"id": <u64>, "label": <u32>}
/// The video is written to a ".stv" file in `workdir` before each request.
class SubprocessOracle final : public DecisionOracle {
public:
  SubprocessOracle(Shape shape, SubprocessOptions options);
  ~SubprocessOracle() override;

  std::unique_ptr<DecisionOracle> clone() const override;

protected:
  Label classify(const VideoTensor& video) override;

private:
  void spawn();
  void shutdown() noexcept;
  std::string read_line();

  SubprocessOptions options_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::uint64_t next_id_ = 0;
  std::string buffer_;
  std::filesystem::path video_path_;
};

}  // namespace stde
