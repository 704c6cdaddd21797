#pragma once

#include <cerrno>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "eggscan/classifier.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"

namespace eggscan {

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v =
        (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0)
    throw invalid_input("base64: length must be a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2)
          throw invalid_input("base64: misplaced padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw invalid_input("base64: data after padding");
        vals[k] = value_of(c);
        if (vals[k] < 0) throw invalid_input("base64: invalid character");
      }
    }
    const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) |
                            vals[3];
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  return out;
}

// A classifier the pipeline can call. Patches handed to classify() are
// already resized to input_side() and single-channel.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual int input_side() const = 0;
  virtual std::vector<ClassProbabilities> classify(
      const std::vector<ImageBuffer>& patches) = 0;
};

class ReferenceBackend : public Backend {
 public:
  explicit ReferenceBackend(ReferenceModel model) : model_(std::move(model)) {}

  int input_side() const override { return model_.input_side; }

  std::vector<ClassProbabilities> classify(
      const std::vector<ImageBuffer>& patches) override {
    if (patches.empty()) return {};
    const std::size_t dim =
        static_cast<std::size_t>(model_.input_side) * model_.input_side;
    std::vector<std::uint8_t> bytes;
    bytes.reserve(dim * patches.size());
    for (const ImageBuffer& p : patches) {
      if (p.channels != 1 || p.width != model_.input_side ||
          p.height != model_.input_side)
        throw invalid_input("backend: patch size does not match model input");
      bytes.insert(bytes.end(), p.pixels.begin(), p.pixels.end());
    }
    return model_.classify_raw(bytes, static_cast<int>(patches.size()));
  }

  const ReferenceModel& model() const { return model_; }

 private:
  ReferenceModel model_;
};

// Talks line-delimited JSON to a child process over its standard streams.
// The child sends a hello line first; each classify request carries the
// patch bytes base64-encoded, patch-major then row-major.
class ExternalBackend : public Backend {
 public:
  explicit ExternalBackend(const std::string& command_line) {
    // a dead child must surface as EPIPE, not kill this process
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });

    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw backend_error("cannot create pipes for backend process");
    pid_ = fork();
    if (pid_ < 0) throw backend_error("cannot fork backend process");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command_line.c_str(),
            static_cast<char*>(nullptr));
      std::fprintf(stderr, "backend exec failed: %s\n", std::strerror(errno));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_fd_ = to_child[1];
    out_ = fdopen(from_child[0], "r");
    if (!out_) {
      close(from_child[0]);
      throw backend_error("cannot open backend output stream");
    }

    nlohmann::json hello = read_message();
    if (hello.value("kind", "") != "hello")
      throw backend_error("backend handshake: expected kind \"hello\", got: " +
                          hello.dump());
    if (!hello.contains("input_side") ||
        !hello["input_side"].is_number_integer() ||
        hello["input_side"].get<int>() < 1)
      throw backend_error("backend handshake: bad input_side: " + hello.dump());
    input_side_ = hello["input_side"].get<int>();
    const nlohmann::json expected =
        nlohmann::json::array({"AL", "HD", "FB", "Tn", "BG"});
    if (!hello.contains("classes") || hello["classes"] != expected)
      throw backend_error("backend handshake: class list mismatch: " +
                          hello.dump());
  }

  ExternalBackend(const ExternalBackend&) = delete;
  ExternalBackend& operator=(const ExternalBackend&) = delete;

  ~ExternalBackend() override {
    if (in_fd_ >= 0) close(in_fd_);
    if (out_) fclose(out_);
    if (pid_ > 0) waitpid(pid_, nullptr, 0);
  }

  int input_side() const override { return input_side_; }

  std::vector<ClassProbabilities> classify(
      const std::vector<ImageBuffer>& patches) override {
    if (patches.empty()) return {};
    const std::size_t dim =
        static_cast<std::size_t>(input_side_) * input_side_;
    std::vector<std::uint8_t> bytes;
    bytes.reserve(dim * patches.size());
    for (const ImageBuffer& p : patches) {
      if (p.channels != 1 || p.width != input_side_ || p.height != input_side_)
        throw invalid_input("backend: patch size does not match input_side");
      bytes.insert(bytes.end(), p.pixels.begin(), p.pixels.end());
    }

    const std::uint64_t id = next_id_++;
    nlohmann::json request = {{"kind", "classify"},
                              {"id", id},
                              {"count", patches.size()},
                              {"side", input_side_},
                              {"pixels", base64_encode(bytes)}};
    write_line(request.dump());

    const nlohmann::json reply = read_message();
    if (reply.value("kind", "") == "error")
      throw backend_error("backend reported error: " +
                          reply.value("message", std::string("(no message)")));
    if (reply.value("kind", "") != "probs")
      throw backend_error("backend reply: expected kind \"probs\", got: " +
                          reply.dump());
    if (!reply.contains("id") || reply["id"] != id)
      throw backend_error("backend reply: id mismatch: " + reply.dump());
    if (!reply.contains("probs") || !reply["probs"].is_array() ||
        reply["probs"].size() != patches.size())
      throw backend_error("backend reply: probs row count mismatch");

    std::vector<ClassProbabilities> out(patches.size());
    for (std::size_t s = 0; s < patches.size(); ++s) {
      const nlohmann::json& row = reply["probs"][s];
      if (!row.is_array() || row.size() != kNumClasses)
        throw backend_error("backend reply: probs row must have 5 entries");
      for (int c = 0; c < kNumClasses; ++c) {
        if (!row[c].is_number())
          throw backend_error("backend reply: non-numeric probability");
        out[s].p[c] = row[c].get<double>();
      }
      try {
        out[s].check_valid();
      } catch (const error& e) {
        throw backend_error(std::string("backend reply: ") + e.what());
      }
    }
    return out;
  }

 private:
  void write_line(const std::string& line) {
    std::string buf = line;
    buf.push_back('\n');
    std::size_t done = 0;
    while (done < buf.size()) {
      const ssize_t n = write(in_fd_, buf.data() + done, buf.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw backend_error(std::string("cannot write to backend: ") +
                            std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  nlohmann::json read_message() {
    char* line = nullptr;
    std::size_t cap = 0;
    const ssize_t n = getline(&line, &cap, out_);
    if (n < 0) {
      free(line);
      throw backend_error("backend closed its output stream");
    }
    std::string text(line, static_cast<std::size_t>(n));
    free(line);
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw backend_error("backend sent malformed JSON: " + text);
    }
  }

  pid_t pid_ = -1;
  int in_fd_ = -1;
  std::FILE* out_ = nullptr;
  int input_side_ = 0;
  std::uint64_t next_id_ = 1;
};

// Resizes each patch to the backend's input size, preserving order.
inline std::vector<ClassProbabilities> classify_batch(
    Backend& backend, const std::vector<ImageBuffer>& patches) {
  if (patches.empty()) return {};
  const int side = backend.input_side();
  std::vector<ImageBuffer> resized;
  resized.reserve(patches.size());
  for (const ImageBuffer& p : patches) {
    if (p.channels != 1)
      throw invalid_input("classify_batch: patches must be single-channel");
    resized.push_back((p.width == side && p.height == side)
                          ? p
                          : resize_patch(p, side));
  }
  return backend.classify(resized);
}

// selector: "reference" (load model_path) or cmd:"shell command".
inline std::unique_ptr<Backend> open_backend(const std::string& selector,
                                             const std::string& model_path) {
  if (selector == "reference") {
    if (model_path.empty())
      throw config_error("reference backend needs a model file (--model)");
    return std::make_unique<ReferenceBackend>(load_model(model_path));
  }
  if (selector.rfind("cmd:", 0) == 0) {
    const std::string cmd = selector.substr(4);
    if (cmd.empty()) throw config_error("backend command line is empty");
    return std::make_unique<ExternalBackend>(cmd);
  }
  throw config_error("backend must be \"reference\" or \"cmd:...\"");
}

}  // namespace eggscan
