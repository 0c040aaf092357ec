#pragma once

#include <stdexcept>
#include <string>

namespace sciflow {

// Shape/axis mismatches between tensors or against an op contract.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values (negative radius, empty sequence, unknown variant, ...).
class ArgumentError : public std::runtime_error {
 public:
  explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite or otherwise invalid numeric content.
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of stateful machinery (e.g. double backward without retention).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// File IO failures (open/read/write).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file content: wrong magic, bit depth, channel count.
class FormatError : public IoError {
 public:
  explicit FormatError(const std::string& msg) : IoError(msg) {}
};

// File shorter or longer than its header promises.
class LengthError : public IoError {
 public:
  explicit LengthError(const std::string& msg) : IoError(msg) {}
};

// Dataset directory does not follow the declared layout.
class LayoutError : public IoError {
 public:
  explicit LayoutError(const std::string& msg) : IoError(msg) {}
};

// Masked reduction over a mask with no valid pixels.
class NoValidPixelsError : public std::runtime_error {
 public:
  explicit NoValidPixelsError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sciflow
