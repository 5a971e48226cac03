// Runs an external controller as a child process and speaks a
// line-delimited JSON protocol over its stdio: one request
// {"v":1,"obs":{"speed":..,"gap":..,"lead_speed":..}} per step, one
// response {"accel":..} per request. A slow, dead, or malformed peer
// becomes a PolicyFaultError; it never corrupts the run silently.
//
// External processes are inherently outside the bit-determinism guarantee;
// runs using them are flagged in reports.
#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "policy.hpp"

namespace accel_eval {

class PluginPolicy : public EgoPolicy {
 public:
  // argv[0] is the program; the child is spawned lazily on first decide().
  PluginPolicy(std::vector<std::string> argv, std::string id,
               double step_timeout_s = 0.1)
      : argv_(std::move(argv)), id_(std::move(id)), timeout_s_(step_timeout_s) {
    if (argv_.empty()) throw ConfigError("plugin policy: empty command line");
    if (!(timeout_s_ > 0.0)) {
      throw ConfigError("plugin policy: timeout must be > 0");
    }
  }

  PluginPolicy(const PluginPolicy&) = delete;
  PluginPolicy& operator=(const PluginPolicy&) = delete;

  ~PluginPolicy() override { shutdown(); }

  const std::string& policy_id() const override { return id_; }

  double decide(const Observation& obs) const override {
    if (pid_ < 0) start();
    char req[256];
    std::snprintf(req, sizeof(req),
                  "{\"v\":1,\"obs\":{\"speed\":%.17g,\"gap\":%.17g,"
                  "\"lead_speed\":%.17g}}\n",
                  obs.speed, obs.gap, obs.lead_speed);
    write_all(req, std::strlen(req));
    const std::string line = read_line();
    double accel = 0.0;
    try {
      const auto j = nlohmann::json::parse(line);
      accel = j.at("accel").get<double>();
    } catch (const nlohmann::json::exception& e) {
      fault(std::string("malformed response '") + line + "': " + e.what());
    }
    if (!std::isfinite(accel)) {
      fault("non-finite accel in response");
    }
    return accel;
  }

 private:
  [[noreturn]] void fault(const std::string& detail) const {
    const_cast<PluginPolicy*>(this)->shutdown();
    throw PolicyFaultError(id_, detail);
  }

  void start() const {
    // A dead child must surface as EPIPE on write, not kill this process.
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });

    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
      throw IoError("plugin policy: pipe() failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw IoError("plugin policy: fork() failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      std::vector<char*> cargv;
      cargv.reserve(argv_.size() + 1);
      for (const std::string& a : argv_) {
        cargv.push_back(const_cast<char*>(a.c_str()));
      }
      cargv.push_back(nullptr);
      ::execvp(cargv[0], cargv.data());
      std::fprintf(stderr, "plugin exec failed: %s\n", std::strerror(errno));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    pid_ = pid;
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
    buf_.clear();
  }

  void write_all(const char* data, std::size_t len) const {
    std::size_t off = 0;
    while (off < len) {
      const ssize_t k = ::write(in_fd_, data + off, len - off);
      if (k < 0) {
        if (errno == EINTR) continue;
        fault(std::string("write to plugin failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(k);
    }
  }

  std::string read_line() const {
    const int timeout_ms = static_cast<int>(timeout_s_ * 1000.0);
    for (;;) {
      if (const auto nl = buf_.find('\n'); nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      struct pollfd pfd{out_fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, timeout_ms);
      if (pr == 0) {
        fault("no response within " + std::to_string(timeout_ms) + " ms");
      }
      if (pr < 0) {
        if (errno == EINTR) continue;
        fault(std::string("poll failed: ") + std::strerror(errno));
      }
      char chunk[4096];
      const ssize_t k = ::read(out_fd_, chunk, sizeof(chunk));
      if (k == 0) fault("plugin closed its output");
      if (k < 0) {
        if (errno == EINTR) continue;
        fault(std::string("read from plugin failed: ") + std::strerror(errno));
      }
      buf_.append(chunk, static_cast<std::size_t>(k));
    }
  }

  void shutdown() {
    if (in_fd_ >= 0) ::close(in_fd_);
    if (out_fd_ >= 0) ::close(out_fd_);
    in_fd_ = out_fd_ = -1;
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  std::vector<std::string> argv_;
  std::string id_;
  double timeout_s_;
  mutable pid_t pid_ = -1;
  mutable int in_fd_ = -1;
  mutable int out_fd_ = -1;
  mutable std::string buf_;
};

inline std::shared_ptr<EgoPolicy> plugin_policy(std::vector<std::string> argv,
                                                std::string id,
                                                double step_timeout_s = 0.1) {
  return std::make_shared<PluginPolicy>(std::move(argv), std::move(id),
                                        step_timeout_s);
}

}  // namespace accel_eval
