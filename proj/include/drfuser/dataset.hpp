#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drfuser/events.hpp"
#include "drfuser/tensor.hpp"

namespace drfuser::data {

struct Sample {
    TensorF rgb;    // [3,H,W] in [0,1]
    TensorF event;  // [2,H,W], normalised counts
    double steering_rad = 0.0;
    std::int64_t timestamp_us = 0;
};

// Random-access, read-only collection of samples in timestamp order.
class Dataset {
public:
    virtual ~Dataset() = default;
    virtual std::size_t size() const = 0;
    virtual Sample get(std::size_t i) const = 0;
    // Label and timestamp without decoding images.
    virtual double steering(std::size_t i) const = 0;
    virtual std::int64_t timestamp(std::size_t i) const = 0;
    virtual std::size_t width() const = 0;
    virtual std::size_t height() const = 0;
};

class MemoryDataset final : public Dataset {
public:
    MemoryDataset() = default;
    MemoryDataset(std::size_t width, std::size_t height, std::vector<Sample> samples);
    // Decodes every sample of another dataset.
    static MemoryDataset materialize(const Dataset& source);

    std::size_t size() const override { return samples_.size(); }
    Sample get(std::size_t i) const override;
    double steering(std::size_t i) const override;
    std::int64_t timestamp(std::size_t i) const override;
    std::size_t width() const override { return width_; }
    std::size_t height() const override { return height_; }

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<Sample> samples_;
};

// Contiguous range [begin, end) of another dataset.
class DatasetSlice final : public Dataset {
public:
    DatasetSlice(std::shared_ptr<const Dataset> base, std::size_t begin, std::size_t end);

    std::size_t size() const override { return end_ - begin_; }
    Sample get(std::size_t i) const override;
    double steering(std::size_t i) const override;
    std::int64_t timestamp(std::size_t i) const override;
    std::size_t width() const override { return base_->width(); }
    std::size_t height() const override { return base_->height(); }

    std::size_t begin() const { return begin_; }
    std::size_t end() const { return end_; }

private:
    std::size_t check(std::size_t i) const;
    std::shared_ptr<const Dataset> base_;
    std::size_t begin_ = 0;
    std::size_t end_ = 0;
};

// Consecutive, non-overlapping segments in dataset order. Boundary k sits at
// round(n * (f_0 + ... + f_k)). Fractions must be >= 0 and sum to 1; an empty
// segment raises ContractError.
std::vector<DatasetSlice> split_dataset(std::shared_ptr<const Dataset> dataset,
                                        std::span<const double> fractions);

struct SplitRecord {
    std::string name;
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct DatasetManifest {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t sample_count = 0;
    double steering_bound_rad = 0.0;
    double wheelbase_m = 0.0;
    double event_threshold = 0.0;
    events::RenderConfig render;
    std::string source_kind = "synthetic";  // or "external"
    std::optional<std::uint64_t> seed;
    std::string source_path;
    std::string scenario_json;  // generator settings, serialised JSON object
    std::vector<SplitRecord> splits;

    // Throws DataError naming the file and key.
    static DatasetManifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    std::string to_json() const;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kSamplesFile = "samples.csv";
inline constexpr const char* kControlFile = "control.csv";
inline constexpr const char* kEventsFile = "events.bin";
inline constexpr const char* kFramesDir = "frames";

// One CAN-style control record. Only steering is used by the model.
struct ControlRecord {
    std::int64_t timestamp_us = 0;
    double steering_rad = 0.0;
    std::optional<double> speed;
    std::optional<double> throttle;
    std::optional<double> brake;
    std::optional<double> torque;
};

struct SampleIndexRow {
    std::int64_t timestamp_us = 0;
    std::string rgb_file;  // relative to the dataset directory
    std::size_t event_frame = 0;
    std::size_t control_row = 0;
};

// Writes manifest, samples.csv, control.csv and events.bin. RGB frames are
// written by the caller under frames/.
void write_dataset_tables(const std::filesystem::path& dir, const DatasetManifest& manifest,
                          const std::vector<SampleIndexRow>& rows,
                          const std::vector<ControlRecord>& control, const events::EventStream& stream);

// Lazily decodes samples of an on-disk dataset. Opening checks the manifest
// against the tables and event file; get() checks image extents and label
// bounds. Errors are DataError naming the offending file.
class DiskDataset final : public Dataset {
public:
    explicit DiskDataset(const std::filesystem::path& dir);

    std::size_t size() const override { return rows_.size(); }
    Sample get(std::size_t i) const override;
    double steering(std::size_t i) const override;
    std::int64_t timestamp(std::size_t i) const override;
    std::size_t width() const override { return manifest_.width; }
    std::size_t height() const override { return manifest_.height; }

    const DatasetManifest& manifest() const { return manifest_; }
    const std::filesystem::path& directory() const { return dir_; }

private:
    std::filesystem::path dir_;
    DatasetManifest manifest_;
    std::vector<SampleIndexRow> rows_;
    std::vector<ControlRecord> control_;
    std::vector<events::EventFrame> frames_;
};

std::shared_ptr<DiskDataset> load_dataset(const std::filesystem::path& dir);

// Rewrites the manifest's split list.
void record_splits(const std::filesystem::path& dir, const std::vector<SplitRecord>& splits);

// Stacks samples into batch tensors [N,3,H,W], [N,2,H,W] and targets [N,1].
struct Batch {
    TensorF rgb;
    TensorF event;
    TensorF target;
};
Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace drfuser::data
