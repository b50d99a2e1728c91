#include "stde/oracle.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "stde/rng.hpp"

namespace stde {

Label DecisionOracle::query(const VideoTensor& video) {
  if (video.shape() != shape_) {
    throw OracleShapeError("oracle expects " + to_string(shape_) + ", got " + to_string(video.shape()));
  }
  const Label label = classify(video);
  counter_.increment();
  return label;
}

// ---------------------------------------------------------------------------
// Region trigger

void RegionTriggerSpec::validate(const Shape& shape) const {
  if (base == trigger) throw std::invalid_argument("region trigger: base and trigger labels must differ");
  if (region.area() == 0) throw std::invalid_argument("region trigger: hidden rect is degenerate");
  if (!is_repaired(Individual{{region}, {true}}, shape.height, shape.width)) {
    throw std::invalid_argument("region trigger: hidden rect lies outside the frame");
  }
  if (!(coverage > 0.0 && coverage <= 1.0)) throw std::invalid_argument("region trigger: coverage must be in (0, 1]");
  if (frames_required < 1 || frames_required > shape.frames) {
    throw std::invalid_argument("region trigger: required frame count must be in [1, T]");
  }
}

std::size_t RegionTriggerSpec::cells_needed() const {
  return static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(region.area()) - 1e-9));
}

Label region_trigger_eval(const RegionTriggerSpec& spec, const MaskVolume& diff) {
  const std::size_t need = spec.cells_needed();
  std::size_t qualifying = 0;
  for (std::size_t t = 0; t < diff.frames(); ++t) {
    std::size_t covered = 0;
    for (int i = spec.region.y0; i < spec.region.y1; ++i) {
      for (int j = spec.region.x0; j < spec.region.x1; ++j) {
        covered += diff.test(t, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) ? 1 : 0;
      }
    }
    if (covered >= need && ++qualifying >= spec.frames_required) return spec.trigger;
  }
  return spec.base;
}

RegionTriggerOracle::RegionTriggerOracle(RegionTriggerSpec spec, VideoTensor clean)
    : DecisionOracle(clean.shape()), spec_(spec), clean_(std::move(clean)) {
  spec_.validate(clean_.shape());
}

std::unique_ptr<DecisionOracle> RegionTriggerOracle::clone() const {
  return std::make_unique<RegionTriggerOracle>(spec_, clean_);
}

Label RegionTriggerOracle::classify(const VideoTensor& video) {
  // Same rule as region_trigger_eval(spec_, diff_mask(video, clean_)), but
  // only the cells inside the hidden rect are inspected.
  const Shape& s = clean_.shape();
  const std::size_t need = spec_.cells_needed();
  const auto a = video.data();
  const auto b = clean_.data();
  std::size_t qualifying = 0;
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::size_t covered = 0;
    for (int i = spec_.region.y0; i < spec_.region.y1; ++i) {
      const std::size_t row = clean_.index(t, static_cast<std::size_t>(i), 0, 0);
      for (int j = spec_.region.x0; j < spec_.region.x1; ++j) {
        const std::size_t k = row + static_cast<std::size_t>(j) * s.channels;
        covered += std::equal(a.begin() + k, a.begin() + k + s.channels, b.begin() + k) ? 0 : 1;
      }
    }
    if (covered >= need && ++qualifying >= spec_.frames_required) return spec_.trigger;
  }
  return spec_.base;
}

// ---------------------------------------------------------------------------
// Linear pixel classifier

LinearPixelOracle::LinearPixelOracle(Shape shape, std::vector<std::vector<float>> weights, std::vector<float> bias)
    : DecisionOracle(shape), weights_(std::move(weights)), bias_(std::move(bias)) {
  if (bias_.empty()) throw std::invalid_argument("linear oracle needs at least one class");
  if (weights_.size() != bias_.size()) throw std::invalid_argument("linear oracle: weights/bias class count differs");
  for (const auto& w : weights_) {
    if (w.size() != shape.elements()) {
      throw OracleShapeError("linear oracle: weight vector length " + std::to_string(w.size()) +
                             " does not match " + to_string(shape));
    }
  }
}

std::unique_ptr<LinearPixelOracle> LinearPixelOracle::random(Shape shape, std::size_t classes, std::uint64_t seed, float scale) {
  Rng rng(seed);
  std::vector<std::vector<float>> weights(classes, std::vector<float>(shape.elements()));
  for (auto& w : weights) {
    for (auto& v : w) v = scale * static_cast<float>(rng.normal());
  }
  return std::make_unique<LinearPixelOracle>(shape, std::move(weights), std::vector<float>(classes, 0.0f));
}

std::vector<double> LinearPixelOracle::scores(const VideoTensor& video) const {
  const auto x = video.data();
  std::vector<double> out(bias_.size());
  for (std::size_t k = 0; k < bias_.size(); ++k) {
    double s = bias_[k];
    const auto& w = weights_[k];
    for (std::size_t e = 0; e < x.size(); ++e) s += static_cast<double>(w[e]) * (x[e] / 255.0);
    out[k] = s;
  }
  return out;
}

std::unique_ptr<DecisionOracle> LinearPixelOracle::clone() const {
  return std::make_unique<LinearPixelOracle>(expected_shape(), weights_, bias_);
}

Label LinearPixelOracle::classify(const VideoTensor& video) {
  const auto s = scores(video);
  // max_element returns the first maximum, i.e. the smaller class id on ties.
  return Label{static_cast<std::uint32_t>(std::max_element(s.begin(), s.end()) - s.begin())};
}

// ---------------------------------------------------------------------------
// Subprocess client

namespace {

std::atomic<std::uint64_t> g_instance{0};

void ignore_sigpipe() {
  static const bool once = [] {
    struct sigaction sa {};
    sa.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &sa, nullptr);
    return true;
  }();
  (void)once;
}

void write_all(int fd, const std::string& text) {
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("write to model process failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

SubprocessOracle::SubprocessOracle(Shape shape, SubprocessOptions options)
    : DecisionOracle(shape), options_(std::move(options)) {
  if (options_.command.empty()) throw std::invalid_argument("subprocess oracle: empty command");
  if (options_.workdir.empty()) options_.workdir = std::filesystem::temp_directory_path();
  options_.workdir = std::filesystem::absolute(options_.workdir);
  std::filesystem::create_directories(options_.workdir);
  video_path_ = options_.workdir / ("stde_query_" + std::to_string(::getpid()) + "_" +
                                    std::to_string(g_instance.fetch_add(1)) + ".stv");
  ignore_sigpipe();
  spawn();
}

SubprocessOracle::~SubprocessOracle() {
  shutdown();
  std::error_code ec;
  std::filesystem::remove(video_path_, ec);
}

std::unique_ptr<DecisionOracle> SubprocessOracle::clone() const {
  return std::make_unique<SubprocessOracle>(expected_shape(), options_);
}

void SubprocessOracle::spawn() {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw TransportError("pipe failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw TransportError("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw TransportError("fork failed");
  }
  if (pid == 0) {
    // Own process group, so shutdown also reaches anything the shell forks.
    ::setpgid(0, 0);
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", options_.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

void SubprocessOracle::shutdown() noexcept {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    // Closing stdin lets a well-behaved child exit; give it a moment.
    int status = 0;
    for (int k = 0; k < 50; ++k) {
      if (::waitpid(pid_, &status, WNOHANG) != 0) {
        ::kill(-pid_, SIGKILL);
        pid_ = -1;
        return;
      }
      ::usleep(2000);
    }
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

std::string SubprocessOracle::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  for (;;) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TransportError("model process timed out");
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw TransportError("poll failed");
    }
    if (ready == 0) throw TransportError("model process timed out");
    char chunk[4096];
    const ssize_t n = ::read(from_child_, chunk, sizeof(chunk));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("read from model process failed: ") + std::strerror(errno));
    }
    if (n == 0) throw TransportError("model process exited");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

Label SubprocessOracle::classify(const VideoTensor& video) {
  if (pid_ < 0) throw TransportError("model process is not running");
  try {
    save_video(video, video_path_);
    const std::uint64_t id = next_id_++;
    const nlohmann::json request{{"id", id}, {"video_path", video_path_.string()}};
    write_all(to_child_, request.dump() + "\n");
    const std::string line = read_line();
    nlohmann::json response;
    try {
      response = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw TransportError("malformed response line: " + line);
    }
    if (!response.is_object() || !response.contains("id") || !response.contains("label") ||
        !response["id"].is_number_unsigned() || !response["label"].is_number_unsigned()) {
      throw TransportError("response missing unsigned 'id'/'label': " + line);
    }
    if (response["id"].get<std::uint64_t>() != id) {
      throw TransportError("response id " + response["id"].dump() + " does not match request id " +
                           std::to_string(id));
    }
    const auto label = response["label"].get<std::uint64_t>();
    if (label > 0xFFFFFFFFull) throw TransportError("label out of range: " + line);
    return Label{static_cast<std::uint32_t>(label)};
  } catch (const TransportError&) {
    shutdown();
    throw;
  } catch (const IoError& e) {
    throw TransportError(std::string("cannot stage query video: ") + e.what());
  }
}

}  // namespace stde
