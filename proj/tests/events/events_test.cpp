#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "drfuser/errors.hpp"
#include "drfuser/events.hpp"
#include "drfuser/rng.hpp"
#include "oracles.hpp"

using namespace drfuser;
using namespace drfuser::events;

namespace {

BrightnessFrame uniform_frame(std::int64_t t, std::size_t w, std::size_t h, float v) {
    return {t, w, h, std::vector<float>(w * h, v)};
}

// Runs one pixel on its own, one crossing at a time.
struct PixelEvent {
    std::int64_t t;
    int p;
    std::size_t seq;
};

std::vector<PixelEvent> reference_pixel(const std::vector<double>& brightness,
                                        const std::vector<std::int64_t>& times, double eta) {
    std::vector<PixelEvent> out;
    double ref = std::log(brightness[0]);
    double prev = ref;
    for (std::size_t f = 1; f < brightness.size(); ++f) {
        const double now = std::log(brightness[f]);
        const double d = now - ref;
        const int p = d > 0 ? 1 : -1;
        const long k = static_cast<long>(std::floor(std::fabs(d) / eta + 1e-9));
        for (long j = 1; j <= k; ++j) {
            const double level = ref + static_cast<double>(j * p) * eta;
            double frac = (now != prev) ? (level - prev) / (now - prev) : 1.0;
            if (frac < 0) frac = 0;
            if (frac > 1) frac = 1;
            const auto t = times[f - 1] +
                           static_cast<std::int64_t>(std::floor(frac * static_cast<double>(times[f] - times[f - 1])));
            out.push_back({t, p, out.size()});
        }
        ref += static_cast<double>(k * p) * eta;
        prev = now;
    }
    return out;
}

EventStream random_stream(Rng& rng, std::size_t n, std::size_t w, std::size_t h) {
    EventStream s;
    s.width = w;
    s.height = h;
    std::int64_t t = 0;
    for (std::size_t i = 0; i < n; ++i) {
        t += static_cast<std::int64_t>(rng.below(5));
        s.events.push_back({static_cast<std::uint16_t>(rng.below(w)),
                            static_cast<std::uint16_t>(rng.below(h)), t,
                            static_cast<std::int8_t>(rng.bernoulli(0.5) ? 1 : -1)});
    }
    return s;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("drfuser_events_" + name);
}

}  // namespace

TEST(Simulate, ConstantVideoIsSilent) {
    std::vector<BrightnessFrame> video;
    for (int f = 0; f < 5; ++f) video.push_back(uniform_frame(f * 1000, 4, 3, 0.7f));
    const auto s = simulate_events(video, {});
    EXPECT_TRUE(s.events.empty());
    EXPECT_EQ(s.width, 4u);
    EXPECT_EQ(s.height, 3u);
}

TEST(Simulate, SingleThresholdStep) {
    const double eta = 0.2;
    std::vector<BrightnessFrame> video{uniform_frame(0, 3, 3, 1.0f), uniform_frame(1000, 3, 3, 1.0f)};
    video[1].values[4] = static_cast<float>(std::exp(eta));
    const auto s = simulate_events(video, {eta});
    ASSERT_EQ(s.events.size(), 1u);
    EXPECT_EQ(s.events[0].x, 1);
    EXPECT_EQ(s.events[0].y, 1);
    EXPECT_EQ(s.events[0].p, 1);
}

TEST(Simulate, MultipleCrossingsAreInterpolated) {
    std::vector<BrightnessFrame> video{uniform_frame(0, 1, 1, 1.0f), uniform_frame(1000, 1, 1, 1.0f)};
    video[1].values[0] = static_cast<float>(std::exp(-0.65));
    const auto s = simulate_events(video, {0.2});
    ASSERT_EQ(s.events.size(), 3u);
    for (const auto& e : s.events) EXPECT_EQ(e.p, -1);
    EXPECT_LT(s.events[0].t_us, s.events[1].t_us);
    EXPECT_LT(s.events[1].t_us, s.events[2].t_us);
    EXPECT_NEAR(static_cast<double>(s.events[0].t_us), 1000 * 0.2 / 0.65, 1.0);
}

TEST(Simulate, MatchesPerPixelReference) {
    Rng rng(11);
    const std::size_t w = 8, h = 8, frames = 10;
    std::vector<BrightnessFrame> video;
    std::vector<std::int64_t> times;
    std::int64_t t = 0;
    for (std::size_t f = 0; f < frames; ++f) {
        BrightnessFrame fr{t, w, h, {}};
        for (std::size_t i = 0; i < w * h; ++i) fr.values.push_back(static_cast<float>(rng.uniform(0.05, 1.0)));
        video.push_back(fr);
        times.push_back(t);
        t += 500 + static_cast<std::int64_t>(rng.below(2000));
    }
    const double eta = 0.15;
    const auto got = simulate_events(video, {eta});

    // Merge per-pixel streams: within a gap, order by (t, y, x, per-pixel order).
    std::vector<std::tuple<std::size_t, std::int64_t, std::size_t, std::size_t, std::size_t, int>> all;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::vector<double> b;
            for (const auto& fr : video) b.push_back(fr.values[y * w + x]);
            for (const auto& pe : reference_pixel(b, times, eta)) {
                const auto gap = static_cast<std::size_t>(
                    std::upper_bound(times.begin(), times.end(), pe.t) - times.begin());
                all.emplace_back(gap, pe.t, y, x, pe.seq, pe.p);
            }
        }
    std::sort(all.begin(), all.end());
    ASSERT_EQ(got.events.size(), all.size());
    ASSERT_GT(all.size(), 100u);
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto& [gap, tt, y, x, seq, p] = all[i];
        EXPECT_EQ(got.events[i].t_us, tt) << i;
        EXPECT_EQ(got.events[i].x, x) << i;
        EXPECT_EQ(got.events[i].y, y) << i;
        EXPECT_EQ(got.events[i].p, p) << i;
    }
}

TEST(Simulate, PolarityFollowsBrightnessDelta) {
    Rng rng(5);
    std::vector<BrightnessFrame> video;
    for (int f = 0; f < 6; ++f) {
        BrightnessFrame fr{f * 1000, 4, 4, {}};
        for (int i = 0; i < 16; ++i) fr.values.push_back(static_cast<float>(rng.uniform(0.1, 1.0)));
        video.push_back(fr);
    }
    const auto s = simulate_events(video, {0.1});
    for (const auto& e : s.events) {
        const auto gap = static_cast<std::size_t>(e.t_us / 1000) + 1;
        const auto i = static_cast<std::size_t>(e.y) * 4 + e.x;
        const double delta = std::log(video[std::min<std::size_t>(gap, 5)].values[i]) -
                             std::log(video[gap - 1].values[i]);
        if (e.t_us % 1000 != 0) {
            EXPECT_EQ(e.p > 0, delta > 0);
        }
    }
}

TEST(Simulate, Errors) {
    std::vector<BrightnessFrame> bad{uniform_frame(0, 2, 2, 1.0f), uniform_frame(10, 2, 2, 0.0f)};
    EXPECT_THROW(simulate_events(bad, {}), DomainError);
    std::vector<BrightnessFrame> unordered{uniform_frame(10, 2, 2, 1.0f), uniform_frame(0, 2, 2, 1.0f)};
    EXPECT_THROW(simulate_events(unordered, {}), ContractError);
    std::vector<BrightnessFrame> mixed{uniform_frame(0, 2, 2, 1.0f), uniform_frame(10, 3, 2, 1.0f)};
    EXPECT_THROW(simulate_events(mixed, {}), DimensionError);
}

TEST(Simulate, LinearRampMatchesTotalLogIncrease) {
    const std::size_t w = 6, h = 5;
    const double eta = 0.05;
    std::vector<BrightnessFrame> video;
    for (int f = 0; f <= 40; ++f) video.push_back(uniform_frame(f * 2000, w, h, 0.2f + 0.02f * f));
    const auto s = simulate_events(video, {eta});
    RenderConfig cfg;
    cfg.mode = RenderMode::time_window;
    cfg.width = w;
    cfg.height = h;
    cfg.window_us = 10001;
    cfg.window_origin_us = 0;
    cfg.window_end_us = 80008;
    const auto frames = render_frames(s, cfg);
    std::uint64_t pos = 0, neg = 0;
    for (const auto& f : frames) {
        for (auto v : f.positive) pos += v;
        for (auto v : f.negative) neg += v;
    }
    const double expected = static_cast<double>(w * h) *
                            (std::log(static_cast<double>(video.back().values[0])) - std::log(0.2)) / eta;
    EXPECT_EQ(neg, 0u);
    EXPECT_LE(std::fabs(static_cast<double>(pos) - expected), static_cast<double>(w * h));
}

TEST(Render, ThreeEventsOneFrame) {
    EventStream s{4, 4, {{1, 2, 0, 1}, {1, 2, 5, 1}, {1, 2, 9, 1}}};
    const auto frames = render_frames(s, RenderConfig::fixed_count(4, 4, 3));
    ASSERT_EQ(frames.size(), 1u);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(frames[0].positive[i], i == 2 * 4 + 1 ? 3u : 0u);
        EXPECT_EQ(frames[0].negative[i], 0u);
    }
    EXPECT_EQ(frames[0].start_us, 0);
    EXPECT_EQ(frames[0].end_us, 9);
}

TEST(Render, PartialGroupDropped) {
    EventStream s{2, 2, {{0, 0, 0, 1}, {1, 0, 1, -1}, {0, 1, 2, 1}, {1, 1, 3, 1}, {0, 0, 4, -1}}};
    const auto frames = render_frames(s, RenderConfig::fixed_count(2, 2, 3));
    ASSERT_EQ(frames.size(), 1u);
    EXPECT_EQ(frames[0].event_count(), 3u);
}

TEST(Render, MatchesHistogramOracle) {
    Rng rng(3);
    const std::size_t w = 12, h = 9, n = 1000;
    const auto s = random_stream(rng, 10000, w, h);
    const auto frames = render_frames(s, RenderConfig::fixed_count(w, h, n));
    ASSERT_EQ(frames.size(), 10u);
    for (std::size_t g = 0; g < frames.size(); ++g) {
        const auto [pos, neg] = oracle::event_histogram(s.events, g * n, (g + 1) * n, w, h);
        EXPECT_EQ(frames[g].positive, pos) << "frame " << g;
        EXPECT_EQ(frames[g].negative, neg) << "frame " << g;
        EXPECT_EQ(frames[g].event_count(), n);
    }
}

TEST(Render, TimeWindowMode) {
    EventStream s{2, 1, {{0, 0, 100, 1}, {1, 0, 120, -1}, {0, 0, 160, 1}, {1, 0, 199, 1}, {0, 0, 250, 1}}};
    auto cfg = RenderConfig::ddd(2, 1);
    cfg.window_us = 50;
    const auto frames = render_frames(s, cfg);
    // origin 100, end 251: three complete windows; t=250 falls in the incomplete fourth.
    ASSERT_EQ(frames.size(), 3u);
    EXPECT_EQ(frames[0].event_count(), 2u);
    EXPECT_EQ(frames[1].event_count(), 2u);
    EXPECT_EQ(frames[2].event_count(), 0u);
    EXPECT_EQ(frames[1].start_us, 150);
    EXPECT_EQ(frames[1].end_us, 200);
}

TEST(Render, Presets) {
    EXPECT_EQ(RenderConfig::fixed_count(8, 8).events_per_frame, 100000u);
    EXPECT_EQ(RenderConfig::ddd(8, 8).window_us, 50000);
    EXPECT_EQ(RenderConfig::eventscape(8, 8).window_us, 2000);
}

TEST(Render, OutOfBoundsNamesIndex) {
    EventStream s{4, 4, {{0, 0, 0, 1}, {4, 0, 1, 1}}};
    try {
        render_frames(s, RenderConfig::fixed_count(4, 4, 1));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("event 1"), std::string::npos);
    }
    EXPECT_THROW(render_frames(s, RenderConfig::fixed_count(5, 4, 1)), DimensionError);
    EXPECT_THROW(render_frames({4, 4, {}}, RenderConfig::fixed_count(4, 4, 0)), ConfigError);
}

TEST(Normalize, EmptyFrameIsZero) {
    EventFrame f{3, 2, std::vector<std::uint32_t>(6, 0), std::vector<std::uint32_t>(6, 0), 0, 0};
    const auto t = normalize_frame(f);
    EXPECT_EQ(t.shape(), (Shape{2, 2, 3}));
    for (float v : t.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, SingleEvent) {
    EventStream s{3, 3, {{2, 1, 0, -1}}};
    const auto frames = render_frames(s, RenderConfig::fixed_count(3, 3, 1));
    const auto t = normalize_frame(frames.at(0));
    int ones = 0;
    for (float v : t.values()) {
        if (v == 1.0f) {
            ++ones;
        } else {
            EXPECT_EQ(v, 0.0f);
        }
    }
    EXPECT_EQ(ones, 1);
    EXPECT_EQ(t.values()[9 + 1 * 3 + 2], 1.0f);
}

TEST(Normalize, RandomFramesPeakAtOne) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = random_stream(rng, 1 + rng.below(500), 7, 5);
        const auto frames = render_frames(s, RenderConfig::fixed_count(7, 5, s.events.size()));
        const auto t = normalize_frame(frames.at(0));
        float peak = 0.0f;
        for (float v : t.values()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
            peak = std::max(peak, v);
        }
        EXPECT_EQ(peak, 1.0f);
    }
}

TEST(Synchronize, NearestNeighbour) {
    const std::vector<std::int64_t> base{0, 100, 200}, other{10, 90, 205};
    const auto m = synchronize(base, {std::span<const std::int64_t>(other)});
    ASSERT_EQ(m.size(), 3u);
    EXPECT_EQ(m[0][0], 0u);
    EXPECT_EQ(m[1][0], 1u);
    EXPECT_EQ(m[2][0], 2u);
}

TEST(Synchronize, IdentityAndTies) {
    const std::vector<std::int64_t> a{3, 8, 20, 21};
    const auto m = synchronize(a, {std::span<const std::int64_t>(a)});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(m[i][0], i);
    const std::vector<std::int64_t> base{10}, other{5, 15};
    EXPECT_EQ(synchronize(base, {std::span<const std::int64_t>(other)})[0][0], 0u);
    const std::vector<std::int64_t> dup{4, 7, 7, 7};
    EXPECT_EQ(synchronize(base, {std::span<const std::int64_t>(dup)})[0][0], 1u);
}

TEST(Synchronize, MatchesExhaustiveArgmin) {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        auto make = [&](std::size_t n) {
            std::vector<std::int64_t> v(n);
            for (auto& x : v) x = static_cast<std::int64_t>(rng.below(1000));
            std::sort(v.begin(), v.end());
            return v;
        };
        const auto base = make(1 + rng.below(20));
        const auto o1 = make(1 + rng.below(40));
        const auto o2 = make(1 + rng.below(40));
        const auto m = synchronize(base, {std::span<const std::int64_t>(o1), std::span<const std::int64_t>(o2)});
        for (std::size_t i = 0; i < base.size(); ++i) {
            const std::vector<const std::vector<std::int64_t>*> others{&o1, &o2};
            for (std::size_t j = 0; j < 2; ++j) {
                EXPECT_EQ(m[i][j], oracle::nearest_index(*others[j], base[i])) << "trial " << trial;
            }
        }
        for (std::size_t i = 1; i < base.size(); ++i) EXPECT_LE(o1[m[i - 1][0]], o1[m[i][0]]);
    }
}

TEST(Synchronize, Errors) {
    const std::vector<std::int64_t> base{1, 2}, empty, unsorted{5, 3};
    EXPECT_THROW(synchronize(base, {std::span<const std::int64_t>(empty)}), ContractError);
    EXPECT_THROW(synchronize(base, {std::span<const std::int64_t>(unsorted)}), ContractError);
}

TEST(EventFile, RoundTrip) {
    Rng rng(2);
    const auto s = random_stream(rng, 777, 31, 17);
    const auto path = temp_path("roundtrip.bin");
    write_event_file(path, s);
    EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 + 4 + 4 + 8 + 777u * 9);
    const auto back = read_event_file(path);
    EXPECT_EQ(back.width, 31u);
    EXPECT_EQ(back.height, 17u);
    EXPECT_EQ(back.events, s.events);
    std::filesystem::remove(path);
}

TEST(EventFile, TruncatedIsRejected) {
    Rng rng(4);
    const auto s = random_stream(rng, 50, 8, 8);
    const auto path = temp_path("truncated.bin");
    write_event_file(path, s);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    EXPECT_THROW(read_event_file(path), DataError);
    std::filesystem::resize_file(path, 10);
    EXPECT_THROW(read_event_file(path), DataError);
    std::filesystem::remove(path);
}

TEST(EventFile, BadMagic) {
    const auto path = temp_path("magic.bin");
    std::ofstream(path) << "NOPE0000000000000000000000";
    EXPECT_THROW(read_event_file(path), DataError);
    std::filesystem::remove(path);
}

TEST(EventFile, CsvRoundTrip) {
    Rng rng(6);
    const auto s = random_stream(rng, 200, 10, 10);
    const auto path = temp_path("events.csv");
    write_event_csv(path, s);
    const auto back = read_event_csv(path, 10, 10);
    EXPECT_EQ(back.events, s.events);
    std::ofstream(path) << "t,x,y,p\n1,2,3\n";
    EXPECT_THROW(read_event_csv(path, 10, 10), DataError);
    std::filesystem::remove(path);
}
