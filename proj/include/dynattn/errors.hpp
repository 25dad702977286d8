#pragma once

#include <stdexcept>
#include <string>

namespace dynattn {

// Shape mismatch in a linear-algebra operation (dimensions are part of the message).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Argument outside its documented domain (empty range, negative rate, ...).
struct RangeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid experiment/model configuration (bad value, unknown key, violated invariant).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the offending line number where applicable.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corrupt or mismatched binary artifact (checkpoint magic, truncated tensor, ...).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Referenced artifact file does not exist.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation applied to a model of the wrong task kind.
struct TaskError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Recorded attention stack does not fit the target model/input.
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Optimization diverged (non-finite loss); message carries the epoch.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Evaluation precondition failed (empty eligible set, no aligned pairs, ...).
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dynattn
