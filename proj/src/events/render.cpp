#include <algorithm>
#include <string>

#include "drfuser/events.hpp"

namespace drfuser::events {

RenderConfig RenderConfig::fixed_count(std::size_t width, std::size_t height, std::size_t events) {
    RenderConfig c;
    c.mode = RenderMode::count;
    c.events_per_frame = events;
    c.width = width;
    c.height = height;
    return c;
}

RenderConfig RenderConfig::ddd(std::size_t width, std::size_t height) {
    RenderConfig c;
    c.mode = RenderMode::time_window;
    c.window_us = 50000;
    c.width = width;
    c.height = height;
    return c;
}

RenderConfig RenderConfig::eventscape(std::size_t width, std::size_t height) {
    RenderConfig c = ddd(width, height);
    c.window_us = 2000;
    return c;
}

void RenderConfig::validate() const {
    if (mode == RenderMode::count && events_per_frame < 1)
        throw ConfigError("events_per_frame must be >= 1");
    if (mode == RenderMode::time_window && window_us < 1)
        throw ConfigError("window_us must be >= 1");
    if (width == 0 || height == 0) throw ConfigError("render extents must be nonzero");
}

std::uint64_t EventFrame::event_count() const {
    std::uint64_t n = 0;
    for (auto v : positive) n += v;
    for (auto v : negative) n += v;
    return n;
}

namespace {

EventFrame blank(const RenderConfig& c) {
    EventFrame f;
    f.width = c.width;
    f.height = c.height;
    f.positive.assign(c.width * c.height, 0);
    f.negative.assign(c.width * c.height, 0);
    return f;
}

void check_event(const EventStream& s, std::size_t i) {
    const auto& e = s.events[i];
    if (e.x >= s.width || e.y >= s.height)
        throw DataError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                        std::to_string(e.y) + ") outside " + std::to_string(s.width) + "x" +
                        std::to_string(s.height) + " sensor");
    if (e.p != 1 && e.p != -1)
        throw DataError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
    if (i > 0 && e.t_us < s.events[i - 1].t_us)
        throw ContractError("event " + std::to_string(i) + " is out of time order");
}

void count_into(EventFrame& f, const Event& e) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * f.width + e.x;
    if (e.p > 0)
        ++f.positive[idx];
    else
        ++f.negative[idx];
}

}  // namespace

std::vector<EventFrame> render_frames(const EventStream& stream, const RenderConfig& config) {
    config.validate();
    if (config.width != stream.width || config.height != stream.height)
        throw DimensionError("render extents " + std::to_string(config.width) + "x" +
                             std::to_string(config.height) + " differ from stream extents " +
                             std::to_string(stream.width) + "x" + std::to_string(stream.height));
    for (std::size_t i = 0; i < stream.events.size(); ++i) check_event(stream, i);

    std::vector<EventFrame> frames;
    const auto& ev = stream.events;
    if (config.mode == RenderMode::count) {
        const std::size_t n = config.events_per_frame;
        const std::size_t full = ev.size() / n;
        frames.reserve(full);
        for (std::size_t g = 0; g < full; ++g) {
            EventFrame f = blank(config);
            f.start_us = ev[g * n].t_us;
            f.end_us = ev[g * n + n - 1].t_us;
            for (std::size_t i = g * n; i < (g + 1) * n; ++i) count_into(f, ev[i]);
            frames.push_back(std::move(f));
        }
        return frames;
    }

    if (ev.empty() && !(config.window_origin_us && config.window_end_us)) return frames;
    const std::int64_t origin = config.window_origin_us.value_or(ev.empty() ? 0 : ev.front().t_us);
    const std::int64_t end = config.window_end_us.value_or(ev.empty() ? 0 : ev.back().t_us + 1);
    if (end <= origin) return frames;
    const auto windows = static_cast<std::size_t>((end - origin) / config.window_us);
    frames.reserve(windows);
    for (std::size_t w = 0; w < windows; ++w) {
        EventFrame f = blank(config);
        f.start_us = origin + static_cast<std::int64_t>(w) * config.window_us;
        f.end_us = f.start_us + config.window_us;
        frames.push_back(std::move(f));
    }
    for (const auto& e : ev) {
        if (e.t_us < origin) continue;
        const auto w = static_cast<std::size_t>((e.t_us - origin) / config.window_us);
        if (w >= windows) break;
        count_into(frames[w], e);
    }
    return frames;
}

TensorF normalize_frame(const EventFrame& frame) {
    const std::size_t hw = frame.width * frame.height;
    std::uint32_t peak = 0;
    for (auto v : frame.positive) peak = std::max(peak, v);
    for (auto v : frame.negative) peak = std::max(peak, v);
    std::vector<float> data(2 * hw, 0.0f);
    if (peak > 0) {
        const float inv = 1.0f / static_cast<float>(peak);
        for (std::size_t i = 0; i < hw; ++i) {
            data[i] = static_cast<float>(frame.positive[i]) * inv;
            data[hw + i] = static_cast<float>(frame.negative[i]) * inv;
        }
        // exact 1.0 at the peak regardless of rounding in the reciprocal
        for (std::size_t i = 0; i < hw; ++i) {
            if (frame.positive[i] == peak) data[i] = 1.0f;
            if (frame.negative[i] == peak) data[hw + i] = 1.0f;
        }
    }
    return TensorF::from_data({2, frame.height, frame.width}, std::move(data));
}

std::vector<std::vector<std::size_t>> synchronize(
    std::span<const std::int64_t> base, const std::vector<std::span<const std::int64_t>>& others) {
    auto check_sorted = [](std::span<const std::int64_t> s, const std::string& what) {
        for (std::size_t i = 1; i < s.size(); ++i)
            if (s[i] < s[i - 1])
                throw ContractError(what + " is not time-sorted at index " + std::to_string(i));
    };
    check_sorted(base, "base sequence");
    for (std::size_t j = 0; j < others.size(); ++j) {
        if (others[j].empty())
            throw ContractError("sequence " + std::to_string(j) + " to synchronise is empty");
        check_sorted(others[j], "sequence " + std::to_string(j));
    }
    std::vector<std::vector<std::size_t>> out(base.size(), std::vector<std::size_t>(others.size()));
    for (std::size_t i = 0; i < base.size(); ++i) {
        const std::int64_t t = base[i];
        for (std::size_t j = 0; j < others.size(); ++j) {
            const auto& o = others[j];
            auto it = std::lower_bound(o.begin(), o.end(), t);
            std::size_t best;
            if (it == o.end()) {
                best = o.size() - 1;
            } else {
                best = static_cast<std::size_t>(it - o.begin());
                if (it != o.begin()) {
                    const std::int64_t before = *(it - 1);
                    if (t - before <= *it - t) best = static_cast<std::size_t>(it - 1 - o.begin());
                }
            }
            // first index carrying that timestamp
            best = static_cast<std::size_t>(std::lower_bound(o.begin(), o.end(), o[best]) - o.begin());
            out[i][j] = best;
        }
    }
    return out;
}

}  // namespace drfuser::events
