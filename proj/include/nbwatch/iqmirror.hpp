#pragma once

// Single-producer / single-consumer IQ stream buffer that hands out
// fixed-size windows at a configurable stride.
//
// Positions are absolute sample counts since construction. The producer owns
// write_pos_; read_pos_ (start of the next window) is advanced by the consumer
// after each window and by the producer when it has to drop old samples.
// Both sides move read_pos_ with compare-exchange, so a window whose samples
// were overwritten while it was being copied is detected and discarded.
// Samples are stored as packed float pairs in 64-bit atomics: a concurrent
// overwrite is a well-defined (and detected) event rather than a data race.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <vector>

#include "nbwatch/dataset.hpp"
#include "nbwatch/error.hpp"

namespace nbwatch {

struct MirrorConfig {
    std::size_t window_size = 128;
    /// Samples between consecutive window starts. Defaults to window_size
    /// (back-to-back windows) when zero.
    std::size_t extraction_stride = 0;
    std::size_t capacity = 4096;

    std::size_t stride() const { return extraction_stride == 0 ? window_size : extraction_stride; }

    void validate() const {
        detail::require(window_size >= 1, "window_size must be positive");
        detail::require(capacity >= window_size, "capacity must be >= window_size");
    }
};

struct MirrorStats {
    std::uint64_t samples_accepted = 0;
    std::uint64_t windows_emitted = 0;
    std::uint64_t samples_dropped = 0;
    std::uint64_t high_water_mark = 0;
};

struct StreamWindow {
    /// Absolute stream position of the first sample.
    std::uint64_t start = 0;
    IqWindow window;
};

class IqMirror {
public:
    explicit IqMirror(const MirrorConfig& config) : cfg_(config), slots_(config.capacity) {
        config.validate();
        for (auto& s : slots_) s.store(0, std::memory_order_relaxed);
    }

    IqMirror(const IqMirror&) = delete;
    IqMirror& operator=(const IqMirror&) = delete;

    const MirrorConfig& config() const { return cfg_; }

    /// Producer side. Never blocks; if the chunk does not fit, the oldest
    /// unread samples are dropped. Returns the number of samples taken (all of them).
    std::size_t push(std::span<const Complex> chunk) {
        const std::size_t n = chunk.size();
        if (n == 0) return 0;
        const std::uint64_t cap = cfg_.capacity;
        const std::uint64_t w = write_pos_.load(std::memory_order_relaxed);
        const std::uint64_t new_w = w + n;

        std::uint64_t r = read_pos_.load(std::memory_order_acquire);
        while (new_w > r + cap) {
            const std::uint64_t target = new_w - cap;
            if (read_pos_.compare_exchange_weak(r, target, std::memory_order_acq_rel, std::memory_order_acquire)) {
                dropped_.fetch_add(target - r, std::memory_order_relaxed);
                r = target;
                break;
            }
        }

        // Only the last `cap` samples of an oversized chunk can survive.
        const std::uint64_t first = std::max(w, new_w > cap ? new_w - cap : 0);
        for (std::uint64_t p = first; p < new_w; ++p) slots_[p % cap].store(pack(chunk[p - w]), std::memory_order_relaxed);
        write_pos_.store(new_w, std::memory_order_release);
        accepted_.fetch_add(n, std::memory_order_relaxed);

        const std::uint64_t occupancy = new_w > r ? std::min(new_w - r, cap) : 0;
        std::uint64_t hwm = high_water_.load(std::memory_order_relaxed);
        while (occupancy > hwm && !high_water_.compare_exchange_weak(hwm, occupancy, std::memory_order_relaxed)) {}
        return n;
    }

    std::size_t push(const ComplexBuffer& buf) { return push(buf.view()); }

    /// Consumer side. Returns the next window, or nothing if fewer than
    /// window_size samples are available past the current read position.
    std::optional<StreamWindow> next_window() {
        const std::uint64_t cap = cfg_.capacity;
        const std::size_t I = cfg_.window_size;
        StreamWindow out;
        out.window.iq.resize(2 * I);
        for (;;) {
            std::uint64_t r = read_pos_.load(std::memory_order_acquire);
            const std::uint64_t w = write_pos_.load(std::memory_order_acquire);
            if (w < r + I) return std::nullopt;
            for (std::size_t i = 0; i < I; ++i) {
                const auto v = slots_[(r + i) % cap].load(std::memory_order_relaxed);
                unpack(v, out.window.iq[2 * i], out.window.iq[2 * i + 1]);
            }
            // Fails if the producer dropped past r while we were copying.
            if (read_pos_.compare_exchange_strong(r, r + cfg_.stride(), std::memory_order_acq_rel,
                                                  std::memory_order_acquire)) {
                out.start = r;
                emitted_.fetch_add(1, std::memory_order_relaxed);
                return out;
            }
        }
    }

    MirrorStats stats() const {
        MirrorStats s;
        s.samples_accepted = accepted_.load(std::memory_order_relaxed);
        s.windows_emitted = emitted_.load(std::memory_order_relaxed);
        s.samples_dropped = dropped_.load(std::memory_order_relaxed);
        s.high_water_mark = high_water_.load(std::memory_order_relaxed);
        return s;
    }

    /// Samples accepted but not yet covered by an emitted window's stride.
    /// Negative when the stride has skipped past the last written sample.
    std::int64_t residual() const {
        return static_cast<std::int64_t>(write_pos_.load(std::memory_order_acquire)) -
               static_cast<std::int64_t>(read_pos_.load(std::memory_order_acquire));
    }

private:
    static std::uint64_t pack(Complex c) {
        const auto re = std::bit_cast<std::uint32_t>(static_cast<float>(c.real()));
        const auto im = std::bit_cast<std::uint32_t>(static_cast<float>(c.imag()));
        return (static_cast<std::uint64_t>(im) << 32) | re;
    }
    static void unpack(std::uint64_t v, float& re, float& im) {
        re = std::bit_cast<float>(static_cast<std::uint32_t>(v));
        im = std::bit_cast<float>(static_cast<std::uint32_t>(v >> 32));
    }

    MirrorConfig cfg_;
    std::vector<std::atomic<std::uint64_t>> slots_;
    alignas(64) std::atomic<std::uint64_t> write_pos_{0};
    alignas(64) std::atomic<std::uint64_t> read_pos_{0};
    std::atomic<std::uint64_t> accepted_{0};
    std::atomic<std::uint64_t> emitted_{0};
    std::atomic<std::uint64_t> dropped_{0};
    std::atomic<std::uint64_t> high_water_{0};
};

} // namespace nbwatch
