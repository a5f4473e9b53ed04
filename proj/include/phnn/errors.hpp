#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace phnn {

// Error categories; the CLI maps them onto process exit codes.
enum class errc {
  config,    // bad names, malformed configs, invalid parameter combinations
  shape,     // array shape mismatch at record time
  numeric,   // NaN/Inf states, diverged losses
  io,        // unreadable, corrupt or mis-versioned files
  missing,   // a pipeline stage ran before its predecessor
};

class error : public std::runtime_error {
 public:
  error(errc code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw error(code, msg); }

}  // namespace phnn
