#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <sys/types.h>
#include <vector>

#include "sser/types.hpp"

namespace sser {

struct ExternalLsfSpec {
  std::vector<std::string> command;  // argv; command[0] is looked up on PATH
  std::size_t batch_size = 1000;
  double timeout_seconds = 60.0;  // per batch
};

class ExternalLsfError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Child process speaking the line protocol on its standard streams:
///   parent -> child:  "EVAL n M", then n lines of M space-separated numbers
///   child -> parent:  n lines with one number each
///   parent -> child:  "QUIT" on shutdown
/// Any timeout, malformed or non-finite reply, or child exit raises
/// ExternalLsfError; the instance is unusable afterwards.
class ExternalLsf {
public:
  explicit ExternalLsf(ExternalLsfSpec spec);
  ~ExternalLsf();

  ExternalLsf(const ExternalLsf&) = delete;
  ExternalLsf& operator=(const ExternalLsf&) = delete;

  /// Evaluates all rows of x, split into batches of spec.batch_size.
  std::vector<double> evaluate(const PointMatrix& x);

  const ExternalLsfSpec& spec() const { return spec_; }

private:
  std::vector<double> evaluate_batch(const PointMatrix& x, Eigen::Index first, Eigen::Index count);
  [[noreturn]] void fail(const std::string& what);
  void shutdown();

  ExternalLsfSpec spec_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string pending_;  // bytes read past the last complete line
  bool broken_ = false;
};

}  // namespace sser
