#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tracehound {

// Failure taxonomy follows the CLI exit-code contract:
// InputError -> exit 2 (bad input / usage), RunError -> exit 1 (runtime).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputError : Error {
  using Error::Error;
};

struct RunError : Error {
  using Error::Error;
};

// Line-oriented parse failures (trace JSONL, symbol maps, folded text).
struct ParseError : InputError {
  enum class Code {
    malformed_line,
    schema_violation,
    non_monotone_timestamp,
    overlapping_range,
  };

  ParseError(Code code, std::size_t line, std::string field, const std::string& what)
      : InputError(what), code(code), line(line), field(std::move(field)) {}

  Code code;
  std::size_t line = 0;
  std::string field;
  // Populated for overlapping_range only.
  std::uint64_t range_a = 0;
  std::uint64_t range_b = 0;
};

struct TreeError : InputError {
  enum class Code {
    exit_without_spawn,
    duplicate_live_tid,
    unknown_node,
  };

  TreeError(Code code, std::uint64_t tid, const std::string& what)
      : InputError(what), code(code), tid(tid) {}

  Code code;
  std::uint64_t tid = 0;
};

struct StatsError : InputError {
  enum class Code {
    insufficient_runs,
    zero_baseline,
    invalid_range,
  };

  StatsError(Code code, const std::string& what) : InputError(what), code(code) {}

  Code code;
};

struct BenchRunError : RunError {
  enum class Code {
    spawn_failure,
    non_zero_exit,
    pin_unsupported,
  };

  BenchRunError(Code code, std::string config, std::uint32_t run, int exit_code,
                const std::string& what)
      : RunError(what), code(code), config(std::move(config)), run(run), exit_code(exit_code) {}

  Code code;
  std::string config;
  std::uint32_t run = 0;
  int exit_code = 0;
};

struct LiveError : RunError {
  enum class Code {
    capability_denied,
    attach_failure,
    child_spawn_failure,
  };

  LiveError(Code code, std::string mechanism, const std::string& what)
      : RunError(what), code(code), mechanism(std::move(mechanism)) {}

  Code code;
  std::string mechanism;
};

}  // namespace tracehound
