#pragma once

#include <stdexcept>
#include <string>

namespace cdvg {

// Invalid user-supplied configuration (bad ratio, palette size, flag value...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On-disk artifact failed an integrity check or could not be decoded.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An artifact was produced from the wrong upstream input (e.g. a biased split
// handed to an oracle that must only see unbiased data).
class ProvenanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A stage was asked to run before the stage that produces its input.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss went NaN/Inf during training. The message carries the diagnostic
// snapshot (iteration and every loss component).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cdvg
