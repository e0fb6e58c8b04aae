#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tmclass {

/// Bad argument values, bad dimensions, violated preconditions.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Codebook dimension too small for the number of classes (B >= L/2).
class DimensionTooSmall : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// A time or other scalar outside the domain where the math is defined.
class OutOfDomain : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Input that has no meaningful answer, e.g. a zero-norm vector to classify.
class DegenerateInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values produced somewhere in a numeric pipeline.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed binary file; carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tmclass
