// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <numbers>
#include <thread>

namespace semsplat {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidParameter: return "invalid parameter";
        case ErrorKind::InsufficientData: return "insufficient data";
        case ErrorKind::UnsupportedModel: return "unsupported model";
        case ErrorKind::CorruptFile: return "corrupt file";
        case ErrorKind::SizeMismatch: return "size mismatch";
        case ErrorKind::LabelOutOfRange: return "label out of range";
        case ErrorKind::InvalidState: return "invalid state";
        case ErrorKind::Io: return "i/o error";
        case ErrorKind::Usage: return "usage error";
        case ErrorKind::Numerical: return "numerical failure";
    }
    return "error";
}

namespace log {
namespace {

std::mutex g_mutex;
bool g_quiet = false;

Sink& sink() {
    static Sink s = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
    return s;
}

}  // namespace

void warn(std::string_view message) {
    std::lock_guard lock(g_mutex);
    if (sink()) sink()(message);
}

void info(std::string_view message) {
    std::lock_guard lock(g_mutex);
    if (!g_quiet) std::cerr << message << '\n';
}

void set_quiet(bool quiet) {
    std::lock_guard lock(g_mutex);
    g_quiet = quiet;
}

Sink set_warning_sink(Sink s) {
    std::lock_guard lock(g_mutex);
    Sink previous = std::move(sink());
    sink() = std::move(s);
    return previous;
}

ScopedCapture::ScopedCapture() {
    previous_ = set_warning_sink([this](std::string_view msg) { messages_.emplace_back(msg); });
}

ScopedCapture::~ScopedCapture() { set_warning_sink(std::move(previous_)); }

bool ScopedCapture::contains(std::string_view needle) const {
    return std::any_of(messages_.begin(), messages_.end(),
                       [&](const std::string& m) { return m.find(needle) != std::string::npos; });
}

}  // namespace log

std::size_t worker_count() {
    if (const char* env = std::getenv("SPLAT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&](std::size_t begin, std::size_t end) {
        try {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin < end) threads.emplace_back(run, begin, end);
    }
    run(0, std::min(n, chunk));
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection keeps the result unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

}  // namespace semsplat
