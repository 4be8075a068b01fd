#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "drfuser/config_file.hpp"
#include "drfuser/dataset.hpp"
#include "drfuser/events.hpp"

namespace drfuser::data {

// Curvature (1/m) varying linearly from start to end over length_m of road.
struct CurvatureSegment {
    double length_m = 0.0;
    double curvature_start = 0.0;
    double curvature_end = 0.0;
};

struct ScenarioConfig {
    // Piecewise-linear curvature against arc length; beyond the last segment
    // the final curvature continues.
    std::vector<CurvatureSegment> profile{
        {6.0, 0.0, 0.0},     {8.0, 0.0, 0.04},  {8.0, 0.04, -0.03}, {8.0, -0.03, -0.03},
        {8.0, -0.03, 0.02},  {40.0, 0.02, 0.0},
    };
    double speed_mps = 10.0;
    std::size_t width = 64;
    std::size_t height = 64;
    double frame_rate_hz = 10.0;
    double duration_s = 3.2;
    // Brightness frames fed to the event simulator per RGB frame interval.
    std::size_t substeps = 8;
    double texture_contrast = 0.8;
    std::uint64_t seed = 7;
    double wheelbase_m = 2.7;
    double steering_bound_rad = 0.5;
    double event_threshold = 0.2;
    // 0 selects time windows of one RGB frame interval; otherwise fixed-count frames.
    std::size_t events_per_frame = 0;
    std::int64_t window_us = 0;  // 0: one frame interval

    static ScenarioConfig straight();
    static ScenarioConfig constant_curvature(double curvature);

    std::size_t sample_count() const;
    std::int64_t frame_interval_us() const;
    double curvature_at(double arc_m) const;
    // Throws ConfigError naming the field; curvature beyond the steering bound included.
    void validate() const;

    // [scenario] section. The profile is written as
    // profile = length:start:end, length:start:end, ...
    static ScenarioConfig from_config(const KeyValueConfig& cfg);
    void write_to(KeyValueConfig& cfg) const;
    std::string to_json() const;
};

// Steering label for a curvature: atan(wheelbase * curvature).
double steering_for_curvature(double curvature, double wheelbase_m);

struct GeneratedDataset {
    MemoryDataset samples;
    DatasetManifest manifest;
    events::EventStream events;
};

// Renders the lane scene, simulates and renders events, synchronises them with
// the RGB frames and writes the dataset into out_dir. With keep_video the
// brightness video is also written under out_dir/video for `simulate`.
GeneratedDataset generate_synthetic_driving(const ScenarioConfig& config, const std::filesystem::path& out_dir,
                                            bool keep_video = false);

// Brightness video on disk: video.csv ("t_us,file") plus 8-bit PGM frames.
// Pixel value b maps to brightness (b + 1) / 256.
void write_video(const std::filesystem::path& dir, std::span<const events::BrightnessFrame> video);
std::vector<events::BrightnessFrame> read_video(const std::filesystem::path& dir);

}  // namespace drfuser::data
