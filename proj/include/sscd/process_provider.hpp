#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sscd/embed.hpp"
#include "sscd/error.hpp"
#include "sscd/remote.hpp"

namespace sscd {

/// Embedding provider backed by a long-lived child process speaking
/// newline-delimited JSON on stdin/stdout. Each request is one line,
///   {"model": "<provider id>", "input": ["text", ...]}
/// answered by one line in the remote wire shape,
///   {"data": [{"index": 0, "embedding": [...]}, ...]}
/// so a locally hosted model only needs a small stdin/stdout loop.
class ProcessProvider final : public EmbeddingProvider {
 public:
  ProcessProvider(std::string id, std::size_t dimension, std::vector<std::string> argv,
                  std::size_t batch_size = 32)
      : id_(std::move(id)), dimension_(dimension), argv_(std::move(argv)), batch_size_(batch_size) {
    if (argv_.empty()) throw UsageError("process provider '" + id_ + "' needs a command");
    if (dimension_ == 0) throw UsageError("process provider '" + id_ + "' needs a dimension");
  }

  ~ProcessProvider() override { stop(); }
  ProcessProvider(const ProcessProvider&) = delete;
  ProcessProvider& operator=(const ProcessProvider&) = delete;

  const std::string& id() const override { return id_; }
  std::size_t dimension() const override { return dimension_; }
  ProviderKind kind() const override { return ProviderKind::kExternalProcess; }
  std::size_t batch_size() const override { return batch_size_; }

  std::vector<Vector> embed(std::span<const std::string> texts) override {
    std::lock_guard lock(mutex_);
    if (pid_ <= 0) start();
    nlohmann::json req;
    req["model"] = id_;
    req["input"] = std::vector<std::string>(texts.begin(), texts.end());
    std::string line = req.dump();
    line.push_back('\n');
    write_all(line);
    std::string reply = read_line();
    return parse_embedding_response(reply, texts.size(), dimension_);
  }

 private:
  void start() {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw StageError("pipe: " + std::string(std::strerror(errno)));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw StageError("pipe: " + std::string(std::strerror(errno)));
    }
    std::vector<char*> args;
    for (auto& a : argv_) args.push_back(a.data());
    args.push_back(nullptr);
    pid_t pid = ::fork();
    if (pid < 0) throw StageError("fork: " + std::string(std::strerror(errno)));
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execvp(args[0], args.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    pid_ = pid;
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
    ::fcntl(in_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(out_fd_, F_SETFD, FD_CLOEXEC);
  }

  void stop() {
    if (in_fd_ >= 0) ::close(in_fd_);
    if (out_fd_ >= 0) ::close(out_fd_);
    in_fd_ = out_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
    pid_ = -1;
    buffer_.clear();
  }

  void write_all(std::string_view data) {
    // A dead child would raise SIGPIPE; report it as a stage error instead.
    struct sigaction ignore {}, previous{};
    ignore.sa_handler = SIG_IGN;
    ::sigaction(SIGPIPE, &ignore, &previous);
    std::size_t done = 0;
    while (done < data.size()) {
      ssize_t n = ::write(in_fd_, data.data() + done, data.size() - done);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        ::sigaction(SIGPIPE, &previous, nullptr);
        stop();
        throw StageError("process provider '" + id_ + "': write to child failed");
      }
      done += static_cast<std::size_t>(n);
    }
    ::sigaction(SIGPIPE, &previous, nullptr);
  }

  std::string read_line() {
    for (;;) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[65536];
      ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        stop();
        throw StageError("process provider '" + id_ + "': child closed its output");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::string id_;
  std::size_t dimension_;
  std::vector<std::string> argv_;
  std::size_t batch_size_;
  std::mutex mutex_;
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
};

}  // namespace sscd
