#pragma once

#include <filesystem>
#include <string>

#include "stde/oracle.hpp"
#include "stde/rng.hpp"
#include "stde/video.hpp"

namespace stde::testing {

inline VideoTensor random_video(Rng& rng, Shape shape) {
  VideoTensor v(shape);
  for (auto& x : v.data()) x = static_cast<std::uint8_t>(rng.below(256));
  return v;
}

/// Same video with every sample shifted by 128, so it differs everywhere.
inline VideoTensor shifted(const VideoTensor& v) {
  VideoTensor out = v;
  for (auto& x : out.data()) x = static_cast<std::uint8_t>(x + 128);
  return out;
}

/// Clean video gets `clean`; anything else gets `other`.
class ConstantOracle final : public DecisionOracle {
public:
  ConstantOracle(VideoTensor clean_video, Label clean, Label other)
      : DecisionOracle(clean_video.shape()), clean_video_(std::move(clean_video)), clean_(clean), other_(other) {}
  std::unique_ptr<DecisionOracle> clone() const override {
    return std::make_unique<ConstantOracle>(clean_video_, clean_, other_);
  }

protected:
  Label classify(const VideoTensor& video) override { return video == clean_video_ ? clean_ : other_; }

private:
  VideoTensor clean_video_;
  Label clean_;
  Label other_;
};

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("stde_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace stde::testing
