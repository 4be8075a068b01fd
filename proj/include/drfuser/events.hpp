#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "drfuser/tensor.hpp"

namespace drfuser::events {

// One brightness change: pixel column x, row y, timestamp in microseconds,
// polarity +1 (brighter) or -1 (darker).
struct Event {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int64_t t_us = 0;
    std::int8_t p = 1;

    friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<Event> events;  // non-decreasing t_us

    // Throws DataError naming the first offending event index.
    void validate() const;
};

// Contrast-threshold sensor model. eta is in log-brightness units.
struct EventCameraModel {
    double eta = 0.2;
};

// A grayscale brightness image sampled at t_us. Values must be > 0.
struct BrightnessFrame {
    std::int64_t t_us = 0;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> values;  // row-major
};

// Emits floor(|log L - L_ref| / eta) events per pixel and frame gap, with
// polarity sign(log L - L_ref); the reference moves by k * p * eta. Each
// crossing is timestamped where the log-brightness, interpolated linearly
// across the gap, reaches the crossing level. Output is sorted by
// (t, y, x) with per-pixel emission order preserved.
EventStream simulate_events(std::span<const BrightnessFrame> video, const EventCameraModel& model);

// Crossings closer than this to the threshold count as reached, so a log
// step of exactly eta yields one event despite rounding in log().
inline constexpr double kThresholdSlack = 1e-9;

enum class RenderMode { count, time_window };

struct RenderConfig {
    RenderMode mode = RenderMode::count;
    std::size_t events_per_frame = 100000;
    std::int64_t window_us = 50000;
    // Time-window alignment. Defaults: first event timestamp / last + 1.
    std::optional<std::int64_t> window_origin_us;
    std::optional<std::int64_t> window_end_us;
    std::size_t width = 0;
    std::size_t height = 0;

    // Fixed-count accumulation as used for the collected recordings.
    static RenderConfig fixed_count(std::size_t width, std::size_t height,
                                    std::size_t events = 100000);
    // 50 ms windows (DAVIS driving recordings).
    static RenderConfig ddd(std::size_t width, std::size_t height);
    // ~2 ms windows (simulator recordings).
    static RenderConfig eventscape(std::size_t width, std::size_t height);

    void validate() const;
};

// Per-pixel polarity histogram for one accumulation window.
struct EventFrame {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint32_t> positive;
    std::vector<std::uint32_t> negative;
    std::int64_t start_us = 0;
    std::int64_t end_us = 0;

    std::uint64_t event_count() const;
};

// Count mode: every full group of events_per_frame events becomes a frame and
// the trailing partial group is dropped. Time mode: one frame per complete
// window [origin + i*dt, origin + (i+1)*dt) inside [origin, end).
std::vector<EventFrame> render_frames(const EventStream& stream, const RenderConfig& config);

// [2,H,W] tensor: both channels divided by the frame's largest count. An empty
// frame stays all zero.
TensorF normalize_frame(const EventFrame& frame);

// For every base timestamp, the index in each other sequence with minimal
// |t_other - t_base|; ties go to the earlier timestamp (lowest index).
// Result[i][j] is the match of base[i] in others[j].
std::vector<std::vector<std::size_t>> synchronize(
    std::span<const std::int64_t> base, const std::vector<std::span<const std::int64_t>>& others);

// ---------------------------------------------------------------------------
// files

// Binary layout, little-endian:
//   "DRFE" | u32 version | u32 width | u32 height | u64 count
//   count x { u32 t_us | u16 x | u16 y | u8 polarity (0 = -1, 1 = +1) }
inline constexpr std::uint32_t kEventFileVersion = 1;

void write_event_file(const std::filesystem::path& path, const EventStream& stream);
EventStream read_event_file(const std::filesystem::path& path);

// Debug text form: header line "t,x,y,p", polarity written as -1/1. The text
// form has no extents, so they are supplied on import.
void write_event_csv(const std::filesystem::path& path, const EventStream& stream);
EventStream read_event_csv(const std::filesystem::path& path, std::size_t width,
                           std::size_t height);

}  // namespace drfuser::events
