#include "drfuser/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "drfuser/errors.hpp"
#include "drfuser/image_io.hpp"
#include "json.hpp"

namespace drfuser::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

MemoryDataset::MemoryDataset(std::size_t width, std::size_t height, std::vector<Sample> samples)
    : width_(width), height_(height), samples_(std::move(samples)) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (s.rgb.shape() != Shape{3, height, width} || s.event.shape() != Shape{2, height, width})
            throw DimensionError("sample " + std::to_string(i) + ": expected rgb [3," +
                                 std::to_string(height) + "," + std::to_string(width) + "] and event [2," +
                                 std::to_string(height) + "," + std::to_string(width) + "]");
    }
}

MemoryDataset MemoryDataset::materialize(const Dataset& source) {
    std::vector<Sample> out;
    out.reserve(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) out.push_back(source.get(i));
    return MemoryDataset(source.width(), source.height(), std::move(out));
}

Sample MemoryDataset::get(std::size_t i) const {
    if (i >= samples_.size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    return samples_[i];
}

double MemoryDataset::steering(std::size_t i) const { return get(i).steering_rad; }
std::int64_t MemoryDataset::timestamp(std::size_t i) const { return get(i).timestamp_us; }

DatasetSlice::DatasetSlice(std::shared_ptr<const Dataset> base, std::size_t begin, std::size_t end)
    : base_(std::move(base)), begin_(begin), end_(end) {
    if (!base_) throw ContractError("slice of a null dataset");
    if (begin > end || end > base_->size())
        throw ContractError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") outside dataset of size " + std::to_string(base_->size()));
}

std::size_t DatasetSlice::check(std::size_t i) const {
    if (i >= size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    return begin_ + i;
}

Sample DatasetSlice::get(std::size_t i) const { return base_->get(check(i)); }
double DatasetSlice::steering(std::size_t i) const { return base_->steering(check(i)); }
std::int64_t DatasetSlice::timestamp(std::size_t i) const { return base_->timestamp(check(i)); }

std::vector<DatasetSlice> split_dataset(std::shared_ptr<const Dataset> dataset,
                                        std::span<const double> fractions) {
    if (!dataset) throw ContractError("split of a null dataset");
    if (fractions.size() < 2) throw ContractError("split needs at least two fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ContractError("split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");
    const std::size_t n = dataset->size();
    std::vector<DatasetSlice> out;
    std::size_t begin = 0;
    double cumulative = 0.0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        cumulative += fractions[k];
        const std::size_t end = k + 1 == fractions.size()
                                    ? n
                                    : std::min(n, static_cast<std::size_t>(std::llround(cumulative * n)));
        if (end <= begin)
            throw ContractError("too few samples: segment " + std::to_string(k) + " of the split is empty (" +
                                std::to_string(n) + " samples)");
        out.emplace_back(dataset, begin, end);
        begin = end;
    }
    return out;
}

// ---------------------------------------------------------------------------
// manifest

namespace {

template <typename T>
T required(const json& j, const char* key, const std::string& origin) {
    if (!j.contains(key)) throw DataError(origin + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(origin + ": key '" + key + "' has the wrong type");
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError(where + ": expected a number, got '" + s + "'");
    }
}

std::int64_t parse_int(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError(where + ": expected an integer, got '" + s + "'");
    }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw DataError(path.string() + ": expected header '" + header + "'");
    const auto columns = split_csv(header).size();
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != columns)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(columns) + " columns, found " + std::to_string(cells.size()));
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

std::string DatasetManifest::to_json() const {
    json j;
    j["format"] = "drfuser-dataset";
    j["version"] = 1;
    j["width"] = width;
    j["height"] = height;
    j["sample_count"] = sample_count;
    j["steering_bound_rad"] = steering_bound_rad;
    j["wheelbase_m"] = wheelbase_m;
    j["event_threshold"] = event_threshold;
    json r;
    if (render.mode == events::RenderMode::count) {
        r["mode"] = "count";
        r["events_per_frame"] = render.events_per_frame;
    } else {
        r["mode"] = "time_window";
        r["window_us"] = render.window_us;
        if (render.window_origin_us) r["origin_us"] = *render.window_origin_us;
        if (render.window_end_us) r["end_us"] = *render.window_end_us;
    }
    j["render"] = r;
    json src;
    src["kind"] = source_kind;
    if (seed) src["seed"] = *seed;
    if (!source_path.empty()) src["path"] = source_path;
    if (!scenario_json.empty()) src["scenario"] = json::parse(scenario_json);
    j["source"] = src;
    j["files"] = {{"events", kEventsFile}, {"samples", kSamplesFile}, {"control", kControlFile},
                  {"frames", kFramesDir}};
    json splits_j = json::array();
    for (const auto& s : splits) splits_j.push_back({{"name", s.name}, {"begin", s.begin}, {"end", s.end}});
    j["splits"] = splits_j;
    return j.dump(2) + "\n";
}

void DatasetManifest::save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << to_json();
    if (!out) throw DataError("short write to " + path.string());
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    const std::string origin = path.string();
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + origin);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(origin + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object() || j.value("format", "") != "drfuser-dataset")
        throw DataError(origin + ": not a dataset manifest");
    if (required<int>(j, "version", origin) != 1) throw DataError(origin + ": unsupported manifest version");
    DatasetManifest m;
    m.width = required<std::size_t>(j, "width", origin);
    m.height = required<std::size_t>(j, "height", origin);
    m.sample_count = required<std::size_t>(j, "sample_count", origin);
    m.steering_bound_rad = required<double>(j, "steering_bound_rad", origin);
    m.wheelbase_m = required<double>(j, "wheelbase_m", origin);
    m.event_threshold = required<double>(j, "event_threshold", origin);
    const auto r = required<json>(j, "render", origin);
    const auto mode = required<std::string>(r, "mode", origin + " render");
    m.render.width = m.width;
    m.render.height = m.height;
    if (mode == "count") {
        m.render.mode = events::RenderMode::count;
        m.render.events_per_frame = required<std::size_t>(r, "events_per_frame", origin + " render");
    } else if (mode == "time_window") {
        m.render.mode = events::RenderMode::time_window;
        m.render.window_us = required<std::int64_t>(r, "window_us", origin + " render");
        if (r.contains("origin_us")) m.render.window_origin_us = required<std::int64_t>(r, "origin_us", origin);
        if (r.contains("end_us")) m.render.window_end_us = required<std::int64_t>(r, "end_us", origin);
    } else {
        throw DataError(origin + ": render mode must be count or time_window");
    }
    try {
        m.render.validate();
    } catch (const ConfigError& e) {
        throw DataError(origin + ": " + e.what());
    }
    const auto src = required<json>(j, "source", origin);
    m.source_kind = required<std::string>(src, "kind", origin + " source");
    if (src.contains("seed")) m.seed = required<std::uint64_t>(src, "seed", origin);
    if (src.contains("path")) m.source_path = required<std::string>(src, "path", origin);
    if (src.contains("scenario")) m.scenario_json = src.at("scenario").dump();
    if (j.contains("splits")) {
        for (const auto& s : j.at("splits")) {
            SplitRecord rec{required<std::string>(s, "name", origin), required<std::size_t>(s, "begin", origin),
                            required<std::size_t>(s, "end", origin)};
            const std::size_t prev_end = m.splits.empty() ? 0 : m.splits.back().end;
            if (rec.begin != prev_end || rec.end <= rec.begin || rec.end > m.sample_count)
                throw DataError(origin + ": split '" + rec.name +
                                "' is not a contiguous, ordered, nonempty segment");
            m.splits.push_back(rec);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// tables

void write_dataset_tables(const fs::path& dir, const DatasetManifest& manifest,
                          const std::vector<SampleIndexRow>& rows, const std::vector<ControlRecord>& control,
                          const events::EventStream& stream) {
    fs::create_directories(dir);
    manifest.save(dir / kManifestFile);
    {
        std::ofstream out(dir / kSamplesFile, std::ios::binary | std::ios::trunc);
        out << "index,timestamp_us,rgb_file,event_frame,control_row\n";
        for (std::size_t i = 0; i < rows.size(); ++i)
            out << i << "," << rows[i].timestamp_us << "," << rows[i].rgb_file << "," << rows[i].event_frame
                << "," << rows[i].control_row << "\n";
        if (!out) throw DataError("short write to " + (dir / kSamplesFile).string());
    }
    {
        std::ofstream out(dir / kControlFile, std::ios::binary | std::ios::trunc);
        out << "timestamp_us,steering_rad,speed,throttle,brake,torque\n";
        const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
        for (const auto& c : control)
            out << c.timestamp_us << "," << format_double(c.steering_rad) << "," << opt(c.speed) << ","
                << opt(c.throttle) << "," << opt(c.brake) << "," << opt(c.torque) << "\n";
        if (!out) throw DataError("short write to " + (dir / kControlFile).string());
    }
    events::write_event_file(dir / kEventsFile, stream);
}

DiskDataset::DiskDataset(const fs::path& dir) : dir_(dir) {
    manifest_ = DatasetManifest::load(dir / kManifestFile);
    const auto samples_path = (dir / kSamplesFile).string();
    const auto control_path = (dir / kControlFile).string();

    for (const auto& cells : read_csv(dir / kControlFile, "timestamp_us,steering_rad,speed,throttle,brake,torque")) {
        ControlRecord c;
        const std::string where = control_path + " row " + std::to_string(control_.size());
        c.timestamp_us = parse_int(cells[0], where);
        c.steering_rad = parse_double(cells[1], where);
        auto opt = [&](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return parse_double(s, where);
        };
        c.speed = opt(cells[2]);
        c.throttle = opt(cells[3]);
        c.brake = opt(cells[4]);
        c.torque = opt(cells[5]);
        control_.push_back(c);
    }

    for (const auto& cells : read_csv(dir / kSamplesFile, "index,timestamp_us,rgb_file,event_frame,control_row")) {
        const std::string where = samples_path + " row " + std::to_string(rows_.size());
        if (parse_int(cells[0], where) != static_cast<std::int64_t>(rows_.size()))
            throw DataError(where + ": index column out of sequence");
        SampleIndexRow r;
        r.timestamp_us = parse_int(cells[1], where);
        r.rgb_file = cells[2];
        const auto ef = parse_int(cells[3], where);
        const auto cr = parse_int(cells[4], where);
        if (ef < 0 || cr < 0) throw DataError(where + ": negative index");
        r.event_frame = static_cast<std::size_t>(ef);
        r.control_row = static_cast<std::size_t>(cr);
        if (r.control_row >= control_.size())
            throw DataError(where + ": control row " + std::to_string(r.control_row) + " missing from " +
                            control_path);
        if (!rows_.empty() && r.timestamp_us < rows_.back().timestamp_us)
            throw DataError(where + ": timestamps out of order");
        rows_.push_back(std::move(r));
    }
    if (rows_.size() != manifest_.sample_count)
        throw DataError(samples_path + ": " + std::to_string(rows_.size()) + " samples but manifest lists " +
                        std::to_string(manifest_.sample_count));

    const auto events_path = dir / kEventsFile;
    const auto stream = events::read_event_file(events_path);
    if (stream.width != manifest_.width || stream.height != manifest_.height)
        throw DataError(events_path.string() + ": sensor extents disagree with the manifest");
    frames_ = events::render_frames(stream, manifest_.render);
    if (!rows_.empty() && frames_.empty())
        throw DataError(events_path.string() + ": no complete event frame for the manifest's render settings");
    std::vector<std::int64_t> frame_t, sample_t;
    for (const auto& f : frames_) frame_t.push_back(f.end_us);
    for (const auto& r : rows_) sample_t.push_back(r.timestamp_us);
    const auto match = frames_.empty() ? std::vector<std::vector<std::size_t>>{}
                                       : events::synchronize(sample_t, {std::span<const std::int64_t>(frame_t)});
    for (std::size_t i = 0; i < rows_.size(); ++i)
        if (rows_[i].event_frame != match[i][0])
            throw DataError(samples_path + " row " + std::to_string(i) + ": event frame " +
                            std::to_string(rows_[i].event_frame) + " does not match " + events_path.string() +
                            " (nearest frame is " + std::to_string(match[i][0]) + ")");
}

Sample DiskDataset::get(std::size_t i) const {
    if (i >= rows_.size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    const auto& row = rows_[i];
    const auto path = dir_ / row.rgb_file;
    const auto img = read_netpbm(path);
    if (img.channels != 3 || img.width != manifest_.width || img.height != manifest_.height)
        throw DataError(path.string() + ": expected a " + std::to_string(manifest_.width) + "x" +
                        std::to_string(manifest_.height) + " RGB image");
    const std::size_t hw = img.width * img.height;
    std::vector<float> rgb(3 * hw);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < 3; ++c) rgb[c * hw + p] = static_cast<float>(img.pixels[3 * p + c]) / 255.0f;
    Sample s;
    s.rgb = TensorF::from_data({3, img.height, img.width}, std::move(rgb));
    s.event = events::normalize_frame(frames_[row.event_frame]);
    s.steering_rad = steering(i);
    s.timestamp_us = row.timestamp_us;
    return s;
}

double DiskDataset::steering(std::size_t i) const {
    if (i >= rows_.size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    const double s = control_[rows_[i].control_row].steering_rad;
    if (!std::isfinite(s) || std::abs(s) > manifest_.steering_bound_rad)
        throw DataError((dir_ / kControlFile).string() + " row " + std::to_string(rows_[i].control_row) +
                        ": steering " + format_double(s) + " outside the manifest bound");
    return s;
}

std::int64_t DiskDataset::timestamp(std::size_t i) const {
    if (i >= rows_.size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    return rows_[i].timestamp_us;
}

std::shared_ptr<DiskDataset> load_dataset(const fs::path& dir) { return std::make_shared<DiskDataset>(dir); }

void record_splits(const fs::path& dir, const std::vector<SplitRecord>& splits) {
    auto m = DatasetManifest::load(dir / kManifestFile);
    m.splits = splits;
    std::size_t prev = 0;
    for (const auto& s : splits) {
        if (s.begin != prev || s.end <= s.begin || s.end > m.sample_count)
            throw ContractError("split '" + s.name + "' is not a contiguous, ordered, nonempty segment");
        prev = s.end;
    }
    m.save(dir / kManifestFile);
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("empty batch");
    const std::size_t n = indices.size(), h = dataset.height(), w = dataset.width(), hw = h * w;
    std::vector<float> rgb(n * 3 * hw), evt(n * 2 * hw), target(n);
    for (std::size_t b = 0; b < n; ++b) {
        const auto s = dataset.get(indices[b]);
        std::copy(s.rgb.values().begin(), s.rgb.values().end(), rgb.begin() + b * 3 * hw);
        std::copy(s.event.values().begin(), s.event.values().end(), evt.begin() + b * 2 * hw);
        target[b] = static_cast<float>(s.steering_rad);
    }
    return {TensorF::from_data({n, 3, h, w}, std::move(rgb)), TensorF::from_data({n, 2, h, w}, std::move(evt)),
            TensorF::from_data({n, 1}, std::move(target))};
}

}  // namespace drfuser::data
