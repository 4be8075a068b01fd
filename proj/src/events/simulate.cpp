#include <algorithm>
#include <cmath>
#include <string>

#include "drfuser/events.hpp"

namespace drfuser::events {

void EventStream::validate() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.x >= width || e.y >= height)
            throw DataError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                            std::to_string(e.y) + ") outside " + std::to_string(width) + "x" +
                            std::to_string(height) + " sensor");
        if (e.p != 1 && e.p != -1)
            throw DataError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
        if (e.t_us < 0) throw DataError("event " + std::to_string(i) + " has negative timestamp");
        if (i > 0 && e.t_us < events[i - 1].t_us)
            throw DataError("event " + std::to_string(i) + " is out of time order");
    }
}

EventStream simulate_events(std::span<const BrightnessFrame> video, const EventCameraModel& model) {
    if (!(model.eta > 0.0)) throw ConfigError("eta must be > 0");
    EventStream out;
    if (video.empty()) return out;
    const std::size_t w = video[0].width, h = video[0].height;
    out.width = w;
    out.height = h;
    const std::size_t npix = w * h;

    for (std::size_t f = 0; f < video.size(); ++f) {
        const auto& fr = video[f];
        if (fr.width != w || fr.height != h || fr.values.size() != npix)
            throw DimensionError("frame " + std::to_string(f) + " extents differ from frame 0");
        if (f > 0 && fr.t_us < video[f - 1].t_us)
            throw ContractError("frame " + std::to_string(f) + " is out of time order");
        for (std::size_t i = 0; i < npix; ++i)
            if (!(fr.values[i] > 0.0f))
                throw DomainError("frame " + std::to_string(f) + " pixel " + std::to_string(i) +
                                  " has non-positive brightness");
    }

    std::vector<double> ref(npix), prev(npix);
    for (std::size_t i = 0; i < npix; ++i) ref[i] = prev[i] = std::log(static_cast<double>(video[0].values[i]));

    struct Pending {
        Event e;
        std::size_t order;
    };
    std::vector<Pending> gap;
    for (std::size_t f = 1; f < video.size(); ++f) {
        const std::int64_t t0 = video[f - 1].t_us, t1 = video[f].t_us;
        const double span = static_cast<double>(t1 - t0);
        gap.clear();
        for (std::size_t i = 0; i < npix; ++i) {
            const double now = std::log(static_cast<double>(video[f].values[i]));
            const double delta = now - ref[i];
            const auto k = static_cast<long>(std::floor(std::abs(delta) / model.eta + kThresholdSlack));
            if (k > 0) {
                const int p = delta > 0 ? 1 : -1;
                const double path = now - prev[i];
                for (long j = 1; j <= k; ++j) {
                    const double level = ref[i] + static_cast<double>(j * p) * model.eta;
                    double frac = path != 0.0 ? (level - prev[i]) / path : 1.0;
                    frac = std::clamp(frac, 0.0, 1.0);
                    Event e;
                    e.x = static_cast<std::uint16_t>(i % w);
                    e.y = static_cast<std::uint16_t>(i / w);
                    e.t_us = t0 + static_cast<std::int64_t>(std::floor(frac * span));
                    e.p = static_cast<std::int8_t>(p);
                    gap.push_back({e, gap.size()});
                }
                ref[i] += static_cast<double>(k * p) * model.eta;
            }
            prev[i] = now;
        }
        std::sort(gap.begin(), gap.end(), [](const Pending& a, const Pending& b) {
            if (a.e.t_us != b.e.t_us) return a.e.t_us < b.e.t_us;
            if (a.e.y != b.e.y) return a.e.y < b.e.y;
            if (a.e.x != b.e.x) return a.e.x < b.e.x;
            return a.order < b.order;
        });
        for (const auto& pe : gap) out.events.push_back(pe.e);
    }
    return out;
}

}  // namespace drfuser::events
