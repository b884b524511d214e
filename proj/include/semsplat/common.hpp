// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace semsplat {

enum class ErrorKind {
    InvalidParameter,
    InsufficientData,
    UnsupportedModel,
    CorruptFile,
    SizeMismatch,
    LabelOutOfRange,
    InvalidState,
    Io,
    Usage,
    Numerical,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so the CLI can map it
/// onto an exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

namespace log {

using Sink = std::function<void(std::string_view)>;

void warn(std::string_view message);
void info(std::string_view message);

/// Replaces the warning sink (stderr by default). Returns the previous sink.
Sink set_warning_sink(Sink sink);

/// Collects warnings for the lifetime of the object; used by tests and by
/// callers that want to surface warnings in a report.
class ScopedCapture {
public:
    ScopedCapture();
    ~ScopedCapture();
    ScopedCapture(const ScopedCapture&) = delete;
    ScopedCapture& operator=(const ScopedCapture&) = delete;

    [[nodiscard]] const std::vector<std::string>& messages() const { return messages_; }
    [[nodiscard]] bool contains(std::string_view needle) const;

private:
    std::vector<std::string> messages_;
    Sink previous_;
};

void set_quiet(bool quiet);

}  // namespace log

/// Worker count: SPLAT_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; callers
/// must only write to state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Portable deterministic generator. std distributions are implementation
/// defined, so sampling is done here from raw mt19937_64 output.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace semsplat
