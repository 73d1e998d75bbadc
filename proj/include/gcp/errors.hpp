#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gcp {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No calibration index reaches the requested level: (sum w) / (sum w + 1) < alpha.
class InsufficientCalibrationMass : public Error {
 public:
  InsufficientCalibrationMass(double alpha, double reachable)
      : Error("insufficient calibration mass: alpha=" + std::to_string(alpha) +
              " but the largest cumulative fraction is " + std::to_string(reachable)),
        alpha_(alpha),
        reachable_(reachable) {}

  double alpha() const noexcept { return alpha_; }
  double reachable() const noexcept { return reachable_; }

 private:
  double alpha_;
  double reachable_;
};

/// Beta coverage law is undefined for the requested (n, alpha).
class DegenerateLaw : public Error {
 public:
  using Error::Error;
};

/// Arguments outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A node was referenced that is not active in the view.
class InactiveNode : public Error {
 public:
  explicit InactiveNode(std::size_t node)
      : Error("node " + std::to_string(node) + " is not active in this view"), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// The arrival schedule is inconsistent with the engine's assumptions.
class ScheduleCorruption : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace gcp
