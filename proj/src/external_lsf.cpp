#include "sser/external_lsf.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include "sser/io.hpp"

namespace sser {

namespace {

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

bool parse_single_number(const std::string& line, double& out) {
  const char* begin = line.c_str();
  while (*begin == ' ' || *begin == '\t') ++begin;
  if (*begin == '\0') return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

}  // namespace

ExternalLsf::ExternalLsf(ExternalLsfSpec spec) : spec_(std::move(spec)) {
  if (spec_.command.empty()) throw ExternalLsfError("external limit state: empty command");
  if (spec_.batch_size == 0) throw ExternalLsfError("external limit state: batch size must be positive");
  if (!(spec_.timeout_seconds > 0.0)) throw ExternalLsfError("external limit state: timeout must be positive");
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2], out_pipe[2], exec_pipe[2];
  if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0 || ::pipe2(exec_pipe, O_CLOEXEC) != 0) {
    throw ExternalLsfError(std::string("external limit state: pipe failed: ") + std::strerror(errno));
  }
  pid_ = ::fork();
  if (pid_ < 0) throw ExternalLsfError(std::string("external limit state: fork failed: ") + std::strerror(errno));
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::close(exec_pipe[0]);
    std::vector<char*> argv;
    for (auto& a : spec_.command) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    const int err = errno;
    [[maybe_unused]] auto n = ::write(exec_pipe[1], &err, sizeof(err));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(exec_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  ::fcntl(to_child_, F_SETFL, ::fcntl(to_child_, F_GETFL) | O_NONBLOCK);

  // Handshake: the exec pipe closes on successful exec and carries errno otherwise.
  int err = 0;
  ssize_t got;
  do {
    got = ::read(exec_pipe[0], &err, sizeof(err));
  } while (got < 0 && errno == EINTR);
  ::close(exec_pipe[0]);
  if (got > 0) {
    shutdown();
    throw ExternalLsfError("external limit state: cannot execute '" + spec_.command[0] + "': " + std::strerror(err));
  }
}

ExternalLsf::~ExternalLsf() { shutdown(); }

void ExternalLsf::shutdown() {
  if (to_child_ >= 0 && !broken_) {
    const char quit[] = "QUIT\n";
    [[maybe_unused]] auto n = ::write(to_child_, quit, sizeof(quit) - 1);
  }
  close_fd(to_child_);
  close_fd(from_child_);
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void ExternalLsf::fail(const std::string& what) {
  broken_ = true;
  if (pid_ > 0) ::kill(pid_, SIGKILL);
  throw ExternalLsfError("external limit state: " + what);
}

std::vector<double> ExternalLsf::evaluate(const PointMatrix& x) {
  if (broken_) throw ExternalLsfError("external limit state: child is no longer usable");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  const auto batch = static_cast<Eigen::Index>(spec_.batch_size);
  for (Eigen::Index first = 0; first < x.rows(); first += batch) {
    const auto part = evaluate_batch(x, first, std::min(batch, x.rows() - first));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<double> ExternalLsf::evaluate_batch(const PointMatrix& x, Eigen::Index first, Eigen::Index count) {
  const std::string context = "batch of " + std::to_string(count) + " points starting at row " + std::to_string(first);
  std::string request = "EVAL " + std::to_string(count) + " " + std::to_string(x.cols()) + "\n";
  for (Eigen::Index r = first; r < first + count; ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (c > 0) request += ' ';
      request += format_double(x(r, c));
    }
    request += '\n';
  }

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(spec_.timeout_seconds);
  std::size_t written = 0;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(count));
  char buf[65536];

  // Write the request and read replies concurrently so neither pipe can fill up.
  while (values.size() < static_cast<std::size_t>(count)) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) fail("timeout after " + format_double(spec_.timeout_seconds) + " s (" + context + ")");
    pollfd fds[2];
    int nfds = 0;
    fds[nfds++] = {from_child_, POLLIN, 0};
    if (written < request.size()) fds[nfds++] = {to_child_, POLLOUT, 0};
    const int ready = ::poll(fds, static_cast<nfds_t>(nfds), static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      fail(std::string("poll failed: ") + std::strerror(errno));
    }
    if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t n = ::write(to_child_, request.data() + written, std::min<std::size_t>(request.size() - written, 65536));
      if (n < 0 && errno != EAGAIN && errno != EINTR) fail("child closed its input (" + context + ")");
      if (n > 0) written += static_cast<std::size_t>(n);
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t n = ::read(from_child_, buf, sizeof(buf));
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) fail("child exited (" + context + ")");
      pending_.append(buf, static_cast<std::size_t>(n));
      std::size_t pos;
      while ((pos = pending_.find('\n')) != std::string::npos) {
        const std::string line = pending_.substr(0, pos);
        pending_.erase(0, pos + 1);
        if (values.size() >= static_cast<std::size_t>(count)) fail("unexpected extra reply line (" + context + ")");
        double v = 0.0;
        if (!parse_single_number(line, v)) fail("malformed reply line '" + line + "' (" + context + ")");
        if (!std::isfinite(v)) fail("non-finite limit-state value (" + context + ")");
        values.push_back(v);
      }
    }
  }
  if (!pending_.empty()) fail("unexpected trailing reply data (" + context + ")");
  return values;
}

}  // namespace sser
