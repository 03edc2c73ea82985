#pragma once

#include <stdexcept>
#include <string>

namespace metts {

/// Malformed arguments: shape mismatches, out-of-range labels, bad config keys.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Non-finite or empty numerical input to a decomposition.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// A contraction produced a value that is inconsistent beyond round-off,
/// e.g. a clearly negative norm or outcome probability.
class ContractionAccuracyError : public std::runtime_error {
 public:
  explicit ContractionAccuracyError(const std::string& what) : std::runtime_error(what) {}
};

/// The state (or a boundary of it) has vanishing norm.
class ZeroNormError : public std::runtime_error {
 public:
  explicit ZeroNormError(const std::string& what) : std::runtime_error(what) {}
};

class UnsupportedModelError : public std::invalid_argument {
 public:
  explicit UnsupportedModelError(const std::string& what) : std::invalid_argument(what) {}
};

/// Oracle called on a system larger than the dense cap.
class SizeCapError : public std::length_error {
 public:
  explicit SizeCapError(const std::string& what) : std::length_error(what) {}
};

}  // namespace metts
