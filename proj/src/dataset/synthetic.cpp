#include "drfuser/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "drfuser/errors.hpp"
#include "drfuser/image_io.hpp"
#include "drfuser/rng.hpp"
#include "json.hpp"

namespace drfuser::data {

namespace fs = std::filesystem;

ScenarioConfig ScenarioConfig::straight() {
    ScenarioConfig c;
    c.profile = {{100.0, 0.0, 0.0}};
    return c;
}

ScenarioConfig ScenarioConfig::constant_curvature(double curvature) {
    ScenarioConfig c;
    c.profile = {{100.0, curvature, curvature}};
    return c;
}

std::size_t ScenarioConfig::sample_count() const {
    return static_cast<std::size_t>(std::llround(duration_s * frame_rate_hz));
}

std::int64_t ScenarioConfig::frame_interval_us() const { return std::llround(1e6 / frame_rate_hz); }

double ScenarioConfig::curvature_at(double arc_m) const {
    double start = 0.0;
    for (const auto& seg : profile) {
        if (arc_m < start + seg.length_m) {
            const double f = std::max(0.0, arc_m - start) / seg.length_m;
            return seg.curvature_start + f * (seg.curvature_end - seg.curvature_start);
        }
        start += seg.length_m;
    }
    return profile.back().curvature_end;
}

double steering_for_curvature(double curvature, double wheelbase_m) {
    return std::atan(wheelbase_m * curvature);
}

void ScenarioConfig::validate() const {
    if (profile.empty()) throw ConfigError("scenario.profile: need at least one segment");
    for (const auto& seg : profile) {
        if (!(seg.length_m > 0.0) || !std::isfinite(seg.length_m))
            throw ConfigError("scenario.profile: segment lengths must be positive");
        if (!std::isfinite(seg.curvature_start) || !std::isfinite(seg.curvature_end))
            throw ConfigError("scenario.profile: curvature must be finite");
    }
    if (!(speed_mps > 0.0)) throw ConfigError("scenario.speed_mps: must be > 0");
    if (!(frame_rate_hz > 0.0) || frame_rate_hz > 1e6) throw ConfigError("scenario.frame_rate_hz: must lie in (0, 1e6]");
    if (!(duration_s > 0.0)) throw ConfigError("scenario.duration_s: must be > 0");
    if (sample_count() == 0) throw ConfigError("scenario.duration_s: shorter than one frame interval");
    if (width < 8 || height < 8 || width > 4096 || height > 4096)
        throw ConfigError("scenario.width/scenario.height: extents must lie in [8, 4096]");
    if (substeps == 0) throw ConfigError("scenario.substeps: must be >= 1");
    if (frame_interval_us() % static_cast<std::int64_t>(substeps) != 0)
        throw ConfigError("scenario.substeps: must divide the frame interval of " +
                          std::to_string(frame_interval_us()) + " us");
    if (!(texture_contrast >= 0.0 && texture_contrast <= 1.0))
        throw ConfigError("scenario.texture_contrast: must lie in [0, 1]");
    if (!(wheelbase_m > 0.0)) throw ConfigError("scenario.wheelbase_m: must be > 0");
    if (!(steering_bound_rad > 0.0 && steering_bound_rad < M_PI / 2))
        throw ConfigError("scenario.steering_bound_rad: must lie in (0, pi/2)");
    if (!(event_threshold > 0.0)) throw ConfigError("scenario.event_threshold: must be > 0");
    if (window_us < 0) throw ConfigError("scenario.window_us: must be >= 0");
    // curvature is piecewise linear, so its extremes sit at segment ends
    for (const auto& seg : profile)
        for (double k : {seg.curvature_start, seg.curvature_end}) {
            const double s = steering_for_curvature(k, wheelbase_m);
            if (std::abs(s) > steering_bound_rad) {
                std::ostringstream msg;
                msg << "scenario.profile: curvature " << k << " gives steering " << s
                    << " rad beyond steering_bound_rad " << steering_bound_rad;
                throw ConfigError(msg.str());
            }
        }
}

ScenarioConfig ScenarioConfig::from_config(const KeyValueConfig& cfg) {
    ScenarioConfig c;
    if (cfg.has("scenario.profile")) {
        c.profile.clear();
        std::istringstream in(cfg.get_string("scenario.profile", ""));
        std::string item;
        while (std::getline(in, item, ',')) {
            CurvatureSegment seg;
            char sep1 = 0, sep2 = 0;
            std::istringstream is(item);
            if (!(is >> seg.length_m >> sep1 >> seg.curvature_start >> sep2 >> seg.curvature_end) || sep1 != ':' ||
                sep2 != ':' || !(is >> std::ws).eof())
                throw ConfigError("scenario.profile: expected length:start:end entries, got '" + item + "'");
            c.profile.push_back(seg);
        }
    }
    c.speed_mps = cfg.get_double("scenario.speed_mps", c.speed_mps);
    c.width = cfg.get_uint("scenario.width", c.width);
    c.height = cfg.get_uint("scenario.height", c.height);
    c.frame_rate_hz = cfg.get_double("scenario.frame_rate_hz", c.frame_rate_hz);
    c.duration_s = cfg.get_double("scenario.duration_s", c.duration_s);
    c.substeps = cfg.get_uint("scenario.substeps", c.substeps);
    c.texture_contrast = cfg.get_double("scenario.texture_contrast", c.texture_contrast);
    c.seed = cfg.get_uint("scenario.seed", c.seed);
    c.wheelbase_m = cfg.get_double("scenario.wheelbase_m", c.wheelbase_m);
    c.steering_bound_rad = cfg.get_double("scenario.steering_bound_rad", c.steering_bound_rad);
    c.event_threshold = cfg.get_double("scenario.event_threshold", c.event_threshold);
    c.events_per_frame = cfg.get_uint("scenario.events_per_frame", c.events_per_frame);
    c.window_us = cfg.get_int("scenario.window_us", c.window_us);
    c.validate();
    return c;
}

namespace {

std::string num(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

void ScenarioConfig::write_to(KeyValueConfig& cfg) const {
    std::string p;
    for (std::size_t i = 0; i < profile.size(); ++i)
        p += (i ? ", " : "") + num(profile[i].length_m) + ":" + num(profile[i].curvature_start) + ":" +
             num(profile[i].curvature_end);
    cfg.set("scenario.profile", p);
    cfg.set("scenario.speed_mps", num(speed_mps));
    cfg.set("scenario.width", std::to_string(width));
    cfg.set("scenario.height", std::to_string(height));
    cfg.set("scenario.frame_rate_hz", num(frame_rate_hz));
    cfg.set("scenario.duration_s", num(duration_s));
    cfg.set("scenario.substeps", std::to_string(substeps));
    cfg.set("scenario.texture_contrast", num(texture_contrast));
    cfg.set("scenario.seed", std::to_string(seed));
    cfg.set("scenario.wheelbase_m", num(wheelbase_m));
    cfg.set("scenario.steering_bound_rad", num(steering_bound_rad));
    cfg.set("scenario.event_threshold", num(event_threshold));
    cfg.set("scenario.events_per_frame", std::to_string(events_per_frame));
    cfg.set("scenario.window_us", std::to_string(window_us));
}

std::string ScenarioConfig::to_json() const {
    nlohmann::json j;
    auto segs = nlohmann::json::array();
    for (const auto& s : profile) segs.push_back({s.length_m, s.curvature_start, s.curvature_end});
    j["profile"] = segs;
    j["speed_mps"] = speed_mps;
    j["frame_rate_hz"] = frame_rate_hz;
    j["duration_s"] = duration_s;
    j["substeps"] = substeps;
    j["texture_contrast"] = texture_contrast;
    j["events_per_frame"] = events_per_frame;
    j["window_us"] = window_us;
    return j.dump();
}

// ---------------------------------------------------------------------------
// scene

namespace {

struct Rgb {
    double r, g, b;
};

Rgb mix(const Rgb& a, const Rgb& b, double t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

// Texture parameters drawn once per seed.
struct Look {
    double stripe_period = 2.0;
    double stripe_phase = 0.0;
    double check_period = 1.5;
    double dash_phase = 0.0;
    double hill_phase[3] = {0, 0, 0};
    double hill_amp[3] = {0, 0, 0};
    Rgb grass{0.25, 0.5, 0.2};
    Rgb sky{0.55, 0.7, 0.95};
    std::uint64_t noise_seed = 0;
};

Look draw_look(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 11));
    Look l;
    l.stripe_period = rng.uniform(1.5, 2.5);
    l.stripe_phase = rng.uniform(0.0, l.stripe_period);
    l.check_period = rng.uniform(1.0, 2.0);
    l.dash_phase = rng.uniform(0.0, 6.0);
    for (int k = 0; k < 3; ++k) {
        l.hill_phase[k] = rng.uniform(0.0, 2 * M_PI);
        l.hill_amp[k] = rng.uniform(0.02, 0.06);
    }
    l.grass = {rng.uniform(0.18, 0.3), rng.uniform(0.42, 0.58), rng.uniform(0.12, 0.25)};
    l.sky = {rng.uniform(0.5, 0.6), rng.uniform(0.65, 0.75), rng.uniform(0.9, 1.0)};
    l.noise_seed = rng.next_u64();
    return l;
}

double cell_noise(std::int64_t a, std::int64_t b, std::uint64_t seed) {
    const auto h = mix_seed(seed ^ static_cast<std::uint64_t>(a) * 0x9E3779B97F4A7C15ULL, static_cast<std::uint64_t>(b));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

class Scene {
public:
    Scene(const ScenarioConfig& c) : c_(c), look_(draw_look(c.seed)) {}

    double heading_at(double s) const {
        double start = 0.0, h = 0.0;
        for (const auto& seg : c_.profile) {
            const double x = std::min(std::max(0.0, s - start), seg.length_m);
            h += x * seg.curvature_start + (seg.curvature_end - seg.curvature_start) * x * x / (2 * seg.length_m);
            start += seg.length_m;
            if (s <= start) return h;
        }
        return h + (s - start) * c_.profile.back().curvature_end;
    }

    // Linear RGB in [0,1], planar [3,H,W].
    std::vector<double> render(double s_vehicle) const {
        const std::size_t W = c_.width, H = c_.height;
        // centerline ahead, in the vehicle frame (x forward, y left)
        constexpr double du = 0.2, kAhead = 80.0;
        const double h0 = heading_at(s_vehicle);
        std::vector<double> px{0.0}, py{0.0}, pt{0.0};
        double x = 0, y = 0;
        for (double u = du; u <= kAhead; u += du) {
            const double th = heading_at(s_vehicle + u - du / 2) - h0;
            x += du * std::cos(th);
            y += du * std::sin(th);
            px.push_back(x);
            py.push_back(y);
            pt.push_back(heading_at(s_vehicle + u) - h0);
        }
        const double f = 0.5 * static_cast<double>(W);
        const double horizon = 0.3 * static_cast<double>(H);
        constexpr double kCamHeight = 1.4, kHaze = 60.0;
        std::vector<double> out(3 * H * W, 0.0);
        constexpr int kSs = 2;
        for (std::size_t r = 0; r < H; ++r) {
            for (std::size_t col = 0; col < W; ++col) {
                Rgb acc{0, 0, 0};
                for (int sy = 0; sy < kSs; ++sy) {
                    for (int sx = 0; sx < kSs; ++sx) {
                        const double v = static_cast<double>(r) + (sy + 0.5) / kSs;
                        const double u = static_cast<double>(col) + (sx + 0.5) / kSs;
                        const double lateral_px = u - 0.5 * static_cast<double>(W);
                        Rgb c;
                        if (v <= horizon + 0.05) {
                            c = sky(v, lateral_px, f, horizon, h0);
                        } else {
                            const double d = kCamHeight * f / (v - horizon);
                            const double lat = lateral_px * d / f;  // right positive
                            c = ground(d, lat, s_vehicle, px, py, pt);
                            c = mix(c, look_.sky, std::min(1.0, d / kHaze));
                        }
                        acc.r += c.r;
                        acc.g += c.g;
                        acc.b += c.b;
                    }
                }
                const double n = kSs * kSs;
                out[0 * H * W + r * W + col] = acc.r / n;
                out[1 * H * W + r * W + col] = acc.g / n;
                out[2 * H * W + r * W + col] = acc.b / n;
            }
        }
        return out;
    }

private:
    Rgb sky(double v, double lateral_px, double f, double horizon, double heading) const {
        const double az = heading - std::atan2(lateral_px, f);
        double hill = 0.0;
        for (int k = 0; k < 3; ++k) hill += look_.hill_amp[k] * std::sin((k + 2) * az + look_.hill_phase[k]);
        const double elev = std::atan2(horizon - v, f);
        if (elev < 0.06 + hill) return {0.3, 0.38, 0.32};
        return mix(look_.sky, {0.82, 0.9, 1.0}, std::min(1.0, elev / 0.8));
    }

    Rgb ground(double d, double lat, double s_vehicle, const std::vector<double>& px, const std::vector<double>& py,
               const std::vector<double>& pt) const {
        // first centerline sample at or beyond forward distance d
        const auto it = std::lower_bound(px.begin(), px.end(), d);
        double center_left, theta, u;
        if (it == px.end()) {
            center_left = py.back();
            theta = pt.back();
            u = 0.2 * static_cast<double>(px.size() - 1);
        } else {
            const std::size_t i = static_cast<std::size_t>(it - px.begin());
            const std::size_t j = i == 0 ? 0 : i - 1;
            const double span = px[i] - px[j];
            const double t = span > 0 ? (d - px[j]) / span : 0.0;
            center_left = py[j] + t * (py[i] - py[j]);
            theta = pt[j] + t * (pt[i] - pt[j]);
            u = 0.2 * (static_cast<double>(j) + t);
        }
        const double off = (lat + center_left) * std::cos(theta);  // right of the lane centre
        const double s = s_vehicle + u;
        const double contrast = c_.texture_contrast;
        if (off > -5.4 && off < 2.1) {
            if (std::abs(off - 1.8) < 0.12) return {0.95, 0.95, 0.92};
            if (std::abs(off + 1.8) < 0.12 && std::fmod(s + look_.dash_phase, 6.0) < 3.0) return {0.95, 0.9, 0.4};
            const double n = cell_noise(std::llround(std::floor(s * 2)), std::llround(std::floor(off * 2)),
                                        look_.noise_seed);
            const double g = 0.32 + 0.12 * contrast * (n - 0.5);
            return {g, g, g * 1.02};
        }
        const bool stripe = std::fmod(s + look_.stripe_phase, look_.stripe_period) < 0.5 * look_.stripe_period;
        const bool check = static_cast<std::int64_t>(std::floor(off / look_.check_period)) % 2 == 0;
        double k = stripe ? 1.0 + 0.5 * contrast : 1.0 - 0.5 * contrast;
        if (check) k *= 1.0 - 0.25 * contrast;
        return {std::min(1.0, look_.grass.r * k), std::min(1.0, look_.grass.g * k), std::min(1.0, look_.grass.b * k)};
    }

    const ScenarioConfig& c_;
    Look look_;
};

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

struct Frame8 {
    std::vector<std::uint8_t> rgb;   // interleaved
    std::vector<std::uint8_t> gray;  // luminance
};

Frame8 quantize(const std::vector<double>& planar, std::size_t hw) {
    Frame8 f;
    f.rgb.resize(3 * hw);
    f.gray.resize(hw);
    for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t c = 0; c < 3; ++c) f.rgb[3 * p + c] = to_byte(planar[c * hw + p]);
        f.gray[p] = static_cast<std::uint8_t>(
            (299 * f.rgb[3 * p] + 587 * f.rgb[3 * p + 1] + 114 * f.rgb[3 * p + 2] + 500) / 1000);
    }
    return f;
}

events::BrightnessFrame brightness_from_gray(const std::vector<std::uint8_t>& gray, std::size_t w, std::size_t h,
                                             std::int64_t t_us) {
    events::BrightnessFrame b;
    b.t_us = t_us;
    b.width = w;
    b.height = h;
    b.values.resize(gray.size());
    for (std::size_t p = 0; p < gray.size(); ++p) b.values[p] = (static_cast<float>(gray[p]) + 1.0f) / 256.0f;
    return b;
}

std::string frame_name(std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.%s", i, ext);
    return buf;
}

void prepare_output(const fs::path& dir) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw DataError(dir.string() + " exists and is not a directory");
        const bool empty = fs::directory_iterator(dir) == fs::directory_iterator();
        if (!empty && !fs::exists(dir / kManifestFile))
            throw DataError(dir.string() + " is not empty and holds no dataset; refusing to write into it");
        // regenerate into a clean layout so stale frames cannot survive
        fs::remove_all(dir / kFramesDir);
        fs::remove_all(dir / "video");
    }
    fs::create_directories(dir / kFramesDir);
}

}  // namespace

GeneratedDataset generate_synthetic_driving(const ScenarioConfig& config, const fs::path& out_dir, bool keep_video) {
    config.validate();
    const std::size_t n = config.sample_count();
    const std::size_t W = config.width, H = config.height, hw = W * H;
    const std::int64_t T = config.frame_interval_us();
    const std::int64_t dt = T / static_cast<std::int64_t>(config.substeps);
    Scene scene(config);

    std::vector<events::BrightnessFrame> video;
    std::vector<Frame8> rgb_frames;
    const std::size_t total = n * config.substeps;
    for (std::size_t j = 0; j <= total; ++j) {
        const std::int64_t t = static_cast<std::int64_t>(j) * dt;
        const double s = config.speed_mps * static_cast<double>(t) * 1e-6;
        auto frame = quantize(scene.render(s), hw);
        video.push_back(brightness_from_gray(frame.gray, W, H, t));
        if (j > 0 && j % config.substeps == 0) rgb_frames.push_back(std::move(frame));
    }

    events::EventCameraModel cam;
    cam.eta = config.event_threshold;
    auto stream = events::simulate_events(video, cam);

    events::RenderConfig rc;
    if (config.events_per_frame > 0) {
        rc = events::RenderConfig::fixed_count(W, H, config.events_per_frame);
    } else {
        rc.mode = events::RenderMode::time_window;
        rc.width = W;
        rc.height = H;
        rc.window_us = config.window_us > 0 ? config.window_us : T;
        rc.window_origin_us = 0;
        rc.window_end_us = static_cast<std::int64_t>(n) * T;
    }
    const auto frames = events::render_frames(stream, rc);
    if (frames.empty())
        throw ConfigError("scenario.events_per_frame: the scenario produced " + std::to_string(stream.events.size()) +
                          " events, fewer than one frame");

    std::vector<std::int64_t> sample_t(n), frame_t;
    for (std::size_t i = 0; i < n; ++i) sample_t[i] = static_cast<std::int64_t>(i + 1) * T;
    for (const auto& f : frames) frame_t.push_back(f.end_us);
    const auto match = events::synchronize(sample_t, {std::span<const std::int64_t>(frame_t)});

    prepare_output(out_dir);
    std::vector<Sample> samples;
    std::vector<SampleIndexRow> rows;
    std::vector<ControlRecord> control;
    for (std::size_t i = 0; i < n; ++i) {
        const double s_vehicle = config.speed_mps * static_cast<double>(sample_t[i]) * 1e-6;
        const double steer = steering_for_curvature(config.curvature_at(s_vehicle), config.wheelbase_m);
        const auto name = std::string(kFramesDir) + "/" + frame_name(i, "ppm");
        write_netpbm(out_dir / name, Image8{W, H, 3, rgb_frames[i].rgb});

        std::vector<float> rgb(3 * hw);
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t c = 0; c < 3; ++c)
                rgb[c * hw + p] = static_cast<float>(rgb_frames[i].rgb[3 * p + c]) / 255.0f;
        Sample smp;
        smp.rgb = TensorF::from_data({3, H, W}, std::move(rgb));
        smp.event = events::normalize_frame(frames[match[i][0]]);
        smp.steering_rad = steer;
        smp.timestamp_us = sample_t[i];
        samples.push_back(std::move(smp));
        rows.push_back({sample_t[i], name, match[i][0], i});
        control.push_back({sample_t[i], steer, config.speed_mps, std::nullopt, std::nullopt, std::nullopt});
    }

    DatasetManifest m;
    m.width = W;
    m.height = H;
    m.sample_count = n;
    m.steering_bound_rad = config.steering_bound_rad;
    m.wheelbase_m = config.wheelbase_m;
    m.event_threshold = config.event_threshold;
    m.render = rc;
    m.source_kind = "synthetic";
    m.seed = config.seed;
    m.scenario_json = config.to_json();
    write_dataset_tables(out_dir, m, rows, control, stream);
    if (keep_video) write_video(out_dir / "video", video);

    return {MemoryDataset(W, H, std::move(samples)), std::move(m), std::move(stream)};
}

// ---------------------------------------------------------------------------
// video files

void write_video(const fs::path& dir, std::span<const events::BrightnessFrame> video) {
    fs::create_directories(dir);
    std::ofstream index(dir / "video.csv", std::ios::binary | std::ios::trunc);
    if (!index) throw DataError("cannot open " + (dir / "video.csv").string() + " for writing");
    index << "t_us,file\n";
    for (std::size_t i = 0; i < video.size(); ++i) {
        const auto& f = video[i];
        Image8 img{f.width, f.height, 1, std::vector<std::uint8_t>(f.values.size())};
        for (std::size_t p = 0; p < f.values.size(); ++p)
            img.pixels[p] = static_cast<std::uint8_t>(
                std::clamp(std::lround(f.values[p] * 256.0f - 1.0f), 0L, 255L));
        const auto name = frame_name(i, "pgm");
        write_netpbm(dir / name, img);
        index << f.t_us << "," << name << "\n";
    }
    if (!index) throw DataError("short write to " + (dir / "video.csv").string());
}

std::vector<events::BrightnessFrame> read_video(const fs::path& dir) {
    const auto index_path = dir / "video.csv";
    std::ifstream in(index_path);
    if (!in) throw DataError("cannot open " + index_path.string());
    std::string line;
    if (!std::getline(in, line) || line != "t_us,file")
        throw DataError(index_path.string() + ": expected header 't_us,file'");
    std::vector<events::BrightnessFrame> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError(index_path.string() + ":" + std::to_string(lineno) + ": expected t_us,file");
        std::int64_t t = 0;
        try {
            std::size_t used = 0;
            t = std::stoll(line.substr(0, comma), &used);
            if (used != comma) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DataError(index_path.string() + ":" + std::to_string(lineno) + ": bad timestamp");
        }
        const auto img = read_netpbm(dir / line.substr(comma + 1));
        if (img.channels != 1) throw DataError((dir / line.substr(comma + 1)).string() + ": expected a PGM frame");
        std::vector<std::uint8_t> gray = img.pixels;
        out.push_back(brightness_from_gray(gray, img.width, img.height, t));
    }
    return out;
}

}  // namespace drfuser::data
