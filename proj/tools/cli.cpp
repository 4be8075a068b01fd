#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "drfuser/config_file.hpp"
#include "drfuser/dataset.hpp"
#include "drfuser/errors.hpp"
#include "drfuser/events.hpp"
#include "drfuser/gradsuite.hpp"
#include "drfuser/image_io.hpp"
#include "drfuser/model.hpp"
#include "drfuser/synthetic.hpp"
#include "drfuser/train.hpp"
#include "json.hpp"
#include "svg_plot.hpp"

namespace drfuser::cli {

namespace fs = std::filesystem;
using plot::format_number;

namespace {

const std::vector<std::string> kVariants{"drfuser", "none", "additive", "early", "late", "rgb", "event"};
constexpr const char* kResolvedConfig = "config.ini";

// ---------------------------------------------------------------------------
// shared plumbing

KeyValueConfig load_config(const std::string& path) {
    if (path.empty()) return KeyValueConfig::parse("", "<defaults>");
    return KeyValueConfig::load(path);
}

// Keys in sections this command reads but never consulted are typos; other
// sections are left alone so one file can serve every command.
void reject_unknown(const KeyValueConfig& cfg, const std::set<std::string>& sections) {
    std::string bad;
    for (const auto& key : cfg.unused_keys()) {
        const auto dot = key.find('.');
        const auto section = dot == std::string::npos ? std::string{} : key.substr(0, dot);
        if (sections.count(section)) bad += (bad.empty() ? "" : ", ") + key;
    }
    if (!bad.empty()) throw ConfigError("unknown configuration key(s): " + bad);
}

void echo(std::ostream& out, const std::string& command, const KeyValueConfig& resolved) {
    out << "# drfuser " << command << ": resolved configuration\n" << resolved.to_string();
    if (resolved.entries().empty()) out << "# (no settings)\n";
    out << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw DataError("short write to " + path.string());
}

void write_resolved(const fs::path& dir, const KeyValueConfig& resolved) {
    write_text(dir / kResolvedConfig, resolved.to_string());
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

// Reads one timestamp column. The first column named timestamp_us, t_us or
// end_us is used, so dataset tables, video indexes and frame indexes all work.
std::vector<std::int64_t> read_timestamps(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    const auto header = split_csv_line(line);
    std::optional<std::size_t> col;
    for (const char* name : {"timestamp_us", "t_us", "end_us"}) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it != header.end()) {
            col = static_cast<std::size_t>(it - header.begin());
            break;
        }
    }
    if (!col) throw DataError(path.string() + ": no timestamp_us, t_us or end_us column");
    std::vector<std::int64_t> ts;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() <= *col)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing timestamp column");
        try {
            std::size_t used = 0;
            ts.push_back(std::stoll(cells[*col], &used));
            if (used != cells[*col].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed timestamp '" +
                            cells[*col] + "'");
        }
    }
    if (ts.empty()) throw DataError(path.string() + ": no timestamps");
    return ts;
}

std::vector<double> parse_fractions(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string cell;
    while (std::getline(in, cell, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(cell, &used));
            while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
            if (used != cell.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("dataset.split: '" + cell + "' is not a number");
        }
    }
    return out;
}

std::vector<std::string> split_names(std::size_t n) {
    if (n == 2) return {"train", "test"};
    if (n == 3) return {"train", "val", "test"};
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("part" + std::to_string(i));
    return names;
}

const data::SplitRecord* find_split(const data::DatasetManifest& m, const std::string& name) {
    for (const auto& s : m.splits)
        if (s.name == name) return &s;
    return nullptr;
}

std::shared_ptr<const data::Dataset> select_split(const std::shared_ptr<data::DiskDataset>& ds,
                                                  const std::string& name) {
    if (name.empty() || name == "all") return ds;
    const auto* s = find_split(ds->manifest(), name);
    if (!s) throw DataError(ds->directory().string() + ": manifest has no split named '" + name + "'");
    return std::make_shared<data::DatasetSlice>(ds, s->begin, s->end);
}

// ---------------------------------------------------------------------------
// commands

struct SimulateArgs {
    std::string config, video, out;
    double threshold = 0.2;
    bool csv = false;
    CLI::Option* threshold_opt = nullptr;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config);
    if (a.threshold_opt->count()) cfg.set("events.threshold", num(a.threshold));
    events::EventCameraModel model;
    model.eta = cfg.get_double("events.threshold", model.eta);
    if (!(model.eta > 0.0)) throw ConfigError("events.threshold: must be > 0");
    reject_unknown(cfg, {"events"});

    KeyValueConfig resolved;
    resolved.set("events.threshold", num(model.eta));
    echo(out, "simulate", resolved);

    const auto video = data::read_video(a.video);
    const auto stream = events::simulate_events(video, model);
    fs::create_directories(a.out);
    events::write_event_file(fs::path(a.out) / data::kEventsFile, stream);
    if (a.csv) events::write_event_csv(fs::path(a.out) / "events.csv", stream);
    write_resolved(a.out, resolved);
    std::size_t pos = 0;
    for (const auto& e : stream.events) pos += e.p > 0;
    out << "frames " << video.size() << " events " << stream.events.size() << " positive " << pos << " negative "
        << stream.events.size() - pos << "\n";
    return kOk;
}

struct RenderArgs {
    std::string config, events, out;
    std::size_t events_per_frame = 0;
    std::int64_t window_us = 0;
    CLI::Option* count_opt = nullptr;
    CLI::Option* window_opt = nullptr;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config);
    if (a.count_opt->count()) {
        cfg.set("render.mode", "count");
        cfg.set("render.events_per_frame", std::to_string(a.events_per_frame));
    }
    if (a.window_opt->count()) {
        cfg.set("render.mode", "time_window");
        cfg.set("render.window_us", std::to_string(a.window_us));
    }
    const auto stream = events::read_event_file(a.events);
    events::RenderConfig rc = events::RenderConfig::fixed_count(stream.width, stream.height);
    const auto mode = cfg.get_string("render.mode", "count");
    if (mode == "count")
        rc.mode = events::RenderMode::count;
    else if (mode == "time_window")
        rc.mode = events::RenderMode::time_window;
    else
        throw ConfigError("render.mode: expected count or time_window, got '" + mode + "'");
    rc.events_per_frame = cfg.get_uint("render.events_per_frame", rc.events_per_frame);
    rc.window_us = cfg.get_int("render.window_us", rc.window_us);
    if (cfg.has("render.origin_us")) rc.window_origin_us = cfg.get_int("render.origin_us", 0);
    if (cfg.has("render.end_us")) rc.window_end_us = cfg.get_int("render.end_us", 0);
    reject_unknown(cfg, {"render"});
    rc.validate();

    KeyValueConfig resolved;
    resolved.set("render.mode", mode);
    if (rc.mode == events::RenderMode::count) {
        resolved.set("render.events_per_frame", std::to_string(rc.events_per_frame));
    } else {
        resolved.set("render.window_us", std::to_string(rc.window_us));
        if (rc.window_origin_us) resolved.set("render.origin_us", std::to_string(*rc.window_origin_us));
        if (rc.window_end_us) resolved.set("render.end_us", std::to_string(*rc.window_end_us));
    }
    echo(out, "render", resolved);

    const auto frames = events::render_frames(stream, rc);
    const fs::path dir(a.out);
    fs::create_directories(dir / "frames");
    for (const auto& old : fs::directory_iterator(dir / "frames"))
        if (old.path().extension() == ".ppm") fs::remove(old.path());

    std::ostringstream index;
    index << "index,start_us,end_us,positive,negative,file\n";
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        const auto norm = events::normalize_frame(f);
        const auto v = norm.data();
        const std::size_t hw = f.width * f.height;
        Image8 img{f.width, f.height, 3, std::vector<std::uint8_t>(hw * 3, 0)};
        for (std::size_t p = 0; p < hw; ++p) {
            img.pixels[3 * p] = static_cast<std::uint8_t>(std::lround(v[p] * 255.0f));
            img.pixels[3 * p + 2] = static_cast<std::uint8_t>(std::lround(v[hw + p] * 255.0f));
        }
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.ppm", i);
        write_netpbm(dir / "frames" / name, img);
        std::uint64_t pos = 0, neg = 0;
        for (auto c : f.positive) pos += c;
        for (auto c : f.negative) neg += c;
        index << i << "," << f.start_us << "," << f.end_us << "," << pos << "," << neg << ",frames/" << name << "\n";
    }
    write_text(dir / "frames.csv", index.str());
    write_resolved(dir, resolved);
    out << "events " << stream.events.size() << " frames " << frames.size() << "\n";
    return kOk;
}

struct SyncArgs {
    std::string base, out;
    std::vector<std::string> streams;
};

int cmd_sync(const SyncArgs& a, std::ostream& out) {
    KeyValueConfig resolved;
    resolved.set("sync.base", a.base);
    std::string list;
    for (const auto& s : a.streams) list += (list.empty() ? "" : ", ") + s;
    resolved.set("sync.streams", list);
    echo(out, "sync", resolved);

    const auto base = read_timestamps(a.base);
    std::vector<std::vector<std::int64_t>> others;
    std::vector<std::span<const std::int64_t>> views;
    for (const auto& s : a.streams) others.push_back(read_timestamps(s));
    for (const auto& o : others) views.emplace_back(o);
    const auto matches = events::synchronize(base, views);

    std::ostringstream csv;
    csv << "base_index,base_us";
    std::vector<std::string> stems;
    for (std::size_t j = 0; j < a.streams.size(); ++j) {
        auto stem = fs::path(a.streams[j]).stem().string();
        if (std::count(stems.begin(), stems.end(), stem)) stem += "_" + std::to_string(j);
        stems.push_back(stem);
        csv << "," << stem << "_index," << stem << "_us," << stem << "_dt_us";
    }
    csv << "\n";
    std::vector<std::int64_t> worst(others.size(), 0);
    for (std::size_t i = 0; i < base.size(); ++i) {
        csv << i << "," << base[i];
        for (std::size_t j = 0; j < others.size(); ++j) {
            const auto k = matches[i][j];
            const auto dt = others[j][k] - base[i];
            worst[j] = std::max<std::int64_t>(worst[j], std::abs(dt));
            csv << "," << k << "," << others[j][k] << "," << dt;
        }
        csv << "\n";
    }
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "sync.csv", csv.str());
    write_resolved(a.out, resolved);
    out << "base " << base.size();
    for (std::size_t j = 0; j < others.size(); ++j)
        out << " | " << stems[j] << " " << others[j].size() << " max_dt_us " << worst[j];
    out << "\n";
    return kOk;
}

struct GenerateArgs {
    std::string config, out, split;
    std::uint64_t seed = 0;
    std::size_t events_per_frame = 0;
    std::int64_t window_us = 0;
    bool keep_video = false;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* count_opt = nullptr;
    CLI::Option* window_opt = nullptr;
    CLI::Option* split_opt = nullptr;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config);
    if (a.seed_opt->count()) cfg.set("scenario.seed", std::to_string(a.seed));
    if (a.count_opt->count()) cfg.set("scenario.events_per_frame", std::to_string(a.events_per_frame));
    if (a.window_opt->count()) cfg.set("scenario.window_us", std::to_string(a.window_us));
    if (a.split_opt->count()) cfg.set("dataset.split", a.split);
    const auto scenario = data::ScenarioConfig::from_config(cfg);
    const auto split_text = cfg.get_string("dataset.split", "");
    const auto fractions = split_text.empty() ? std::vector<double>{} : parse_fractions(split_text);
    reject_unknown(cfg, {"scenario", "dataset"});
    scenario.validate();

    KeyValueConfig resolved;
    scenario.write_to(resolved);
    if (!split_text.empty()) resolved.set("dataset.split", split_text);
    echo(out, "generate", resolved);

    const auto gen = data::generate_synthetic_driving(scenario, a.out, a.keep_video);
    if (!fractions.empty()) {
        auto ds = data::load_dataset(a.out);
        const auto slices = data::split_dataset(ds, fractions);
        const auto names = split_names(slices.size());
        std::vector<data::SplitRecord> records;
        for (std::size_t i = 0; i < slices.size(); ++i)
            records.push_back({names[i], slices[i].begin(), slices[i].end()});
        data::record_splits(a.out, records);
        for (const auto& r : records) out << "split " << r.name << " [" << r.begin << ", " << r.end << ")\n";
    }
    write_resolved(a.out, resolved);

    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < gen.samples.size(); ++i) {
        lo = std::min(lo, gen.samples.steering(i));
        hi = std::max(hi, gen.samples.steering(i));
    }
    out << "samples " << gen.samples.size() << " events " << gen.events.events.size() << " steering_rad ["
        << format_number(lo) << ", " << format_number(hi) << "]\n";
    return kOk;
}

struct TrainArgs {
    std::string config, dataset, out, variant, checkpoint;
    std::uint64_t seed = 0, init_seed = 0;
    std::size_t steps = 0, eval_every = 0;
    double lr = 0.0, target_mae = 0.0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* init_seed_opt = nullptr;
    CLI::Option* variant_opt = nullptr;
    CLI::Option* steps_opt = nullptr;
    CLI::Option* eval_opt = nullptr;
    CLI::Option* lr_opt = nullptr;
    CLI::Option* target_opt = nullptr;
};

nlohmann::json metrics_json(const std::optional<Metrics>& m) {
    if (!m) return nullptr;
    return {{"rmse", m->rmse}, {"mae", m->mae}, {"count", m->count}};
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config);
    if (a.seed_opt->count()) cfg.set("train.seed", std::to_string(a.seed));
    if (a.init_seed_opt->count()) cfg.set("train.init_seed", std::to_string(a.init_seed));
    if (a.variant_opt->count()) cfg.set("model.variant", a.variant);
    if (a.steps_opt->count()) cfg.set("train.max_steps", std::to_string(a.steps));
    if (a.eval_opt->count()) cfg.set("train.eval_every", std::to_string(a.eval_every));
    if (a.lr_opt->count()) cfg.set("train.lr", num(a.lr));
    if (a.target_opt->count()) cfg.set("train.target_train_mae", num(a.target_mae));

    const auto dataset = data::load_dataset(a.dataset);
    if (!cfg.has("model.width")) cfg.set("model.width", std::to_string(dataset->width()));
    if (!cfg.has("model.height")) cfg.set("model.height", std::to_string(dataset->height()));
    const auto mc = ModelConfig::from_config(cfg);
    const auto tc = TrainConfig::from_config(cfg);
    const std::uint64_t init_seed = cfg.get_uint("train.init_seed", tc.seed);
    reject_unknown(cfg, {"model", "encoder", "decoder", "train"});

    KeyValueConfig resolved;
    mc.write_to(resolved);
    tc.write_to(resolved);
    resolved.set("train.init_seed", std::to_string(init_seed));
    echo(out, "train", resolved);

    std::shared_ptr<const data::Dataset> train_set = dataset;
    std::shared_ptr<const data::Dataset> val_set;
    if (find_split(dataset->manifest(), "train")) train_set = select_split(dataset, "train");
    if (find_split(dataset->manifest(), "val")) val_set = select_split(dataset, "val");

    ModelF model(mc, init_seed);
    if (!a.checkpoint.empty()) model.load(a.checkpoint);
    out << "variant " << variant_name(mc.variant) << " parameters " << model.parameter_count() << " train samples "
        << train_set->size() << " val samples " << (val_set ? val_set->size() : 0) << "\n";

    const fs::path dir(a.out);
    fs::create_directories(dir);
    write_resolved(dir, resolved);

    TrainCallbacks cb;
    cb.on_step = [&](const StepRecord& s) {
        if (s.step == 1 || s.step % 50 == 0) out << "step " << s.step << " epoch " << s.epoch << " loss " << num(s.loss) << "\n";
    };
    cb.on_eval = [&](const EvalRecord& e) {
        out << "eval step " << e.step;
        if (e.val) out << " val_rmse " << format_number(e.val->rmse) << " val_mae " << format_number(e.val->mae);
        if (e.train) out << " train_rmse " << format_number(e.train->rmse) << " train_mae " << format_number(e.train->mae);
        out << "\n";
    };
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = train(model, *train_set, val_set.get(), tc, dir, cb);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json manifest = {
        {"format", "drfuser-run"},
        {"version", 1},
        {"dataset", fs::absolute(a.dataset).lexically_normal().string()},
        {"variant", variant_name(mc.variant)},
        {"parameter_count", model.parameter_count()},
        {"seed", tc.seed},
        {"init_seed", init_seed},
        {"initial_checkpoint", a.checkpoint},
        {"train_samples", train_set->size()},
        {"val_samples", val_set ? val_set->size() : 0},
        {"steps", result.history.steps.size()},
        {"stop_reason", result.stop_reason},
        {"final_loss", result.history.steps.empty() ? 0.0 : result.history.steps.back().loss},
        {"best_step", result.best_step},
        {"best_val", metrics_json(result.best_val)},
        {"final_train", metrics_json(result.final_train)},
        {"reached_target", result.reached_target},
        {"elapsed_s", elapsed},
        {"files",
         {{"history", kHistoryFile},
          {"last", kLastCheckpoint},
          {"best", result.best_val ? nlohmann::json(kBestCheckpoint) : nlohmann::json(nullptr)},
          {"config", kResolvedConfig}}},
    };
    write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");
    out << "done steps " << result.history.steps.size() << " (" << result.stop_reason << ") final loss "
        << num(result.history.steps.back().loss);
    if (result.final_train) out << " train_mae " << format_number(result.final_train->mae);
    if (result.best_val) out << " best val_rmse " << format_number(result.best_val->rmse) << " at step " << result.best_step;
    out << "\n";
    return kOk;
}

struct EvalArgs {
    std::string config, dataset, checkpoint, out, variant, split;
    std::size_t batch = 8;
    CLI::Option* variant_opt = nullptr;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const fs::path ckpt(a.checkpoint);
    std::string config_path = a.config;
    if (config_path.empty() && fs::exists(ckpt.parent_path() / kResolvedConfig))
        config_path = (ckpt.parent_path() / kResolvedConfig).string();
    auto cfg = load_config(config_path);
    if (a.variant_opt->count()) cfg.set("model.variant", a.variant);

    const auto dataset = data::load_dataset(a.dataset);
    if (!cfg.has("model.width")) cfg.set("model.width", std::to_string(dataset->width()));
    if (!cfg.has("model.height")) cfg.set("model.height", std::to_string(dataset->height()));
    const auto mc = ModelConfig::from_config(cfg);
    reject_unknown(cfg, {"model", "encoder", "decoder"});

    KeyValueConfig resolved;
    mc.write_to(resolved);
    resolved.set("eval.split", a.split.empty() ? "all" : a.split);
    resolved.set("eval.batch_size", std::to_string(a.batch));
    echo(out, "eval", resolved);

    const auto subset = select_split(dataset, a.split);
    ModelF model(mc, 0);
    model.load(ckpt);
    if (a.batch == 0) throw ConfigError("eval.batch_size: must be >= 1");
    const auto ev = evaluate(model, *subset, a.batch);

    const fs::path dir = a.out.empty() ? ckpt.parent_path() / "eval" : fs::path(a.out);
    fs::create_directories(dir);
    std::ostringstream metrics, preds;
    metrics << "split,count,rmse,mae\n"
            << (a.split.empty() ? "all" : a.split) << "," << ev.metrics.count << "," << num(ev.metrics.rmse) << ","
            << num(ev.metrics.mae) << "\n";
    preds << "index,timestamp_us,target_rad,prediction_rad\n";
    for (std::size_t i = 0; i < ev.predictions.size(); ++i)
        preds << i << "," << ev.timestamps[i] << "," << num(ev.targets[i]) << "," << num(ev.predictions[i]) << "\n";
    write_text(dir / "metrics.csv", metrics.str());
    write_text(dir / "predictions.csv", preds.str());
    write_resolved(dir, resolved);
    out << "rmse " << format_number(ev.metrics.rmse) << " mae " << format_number(ev.metrics.mae) << "\n";
    return kOk;
}

struct GradcheckArgs {
    std::string out;
    std::size_t seeds = 10;
    double tolerance = 1e-3;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    if (a.seeds == 0) throw ConfigError("gradcheck.seeds: must be >= 1");
    KeyValueConfig resolved;
    resolved.set("gradcheck.seeds", std::to_string(a.seeds));
    resolved.set("gradcheck.tolerance", num(a.tolerance));
    echo(out, "gradcheck", resolved);

    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_name;
    std::ostringstream csv;
    csv << "case,max_relative_error,coordinates,seeds\n";
    run_gradient_suite(a.seeds, [&](const GradSuiteEntry& e) {
        char line[160];
        std::snprintf(line, sizeof line, "%-26s %.3e  (%zu coordinates, %zu seeds)\n", e.name.c_str(),
                      e.max_relative_error, e.coordinates, e.seeds);
        out << line << std::flush;
        csv << e.name << "," << num(e.max_relative_error) << "," << e.coordinates << "," << e.seeds << "\n";
        if (!(e.max_relative_error <= worst)) {
            worst = e.max_relative_error;
            worst_name = e.name;
        }
    });
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_text(fs::path(a.out) / "gradcheck.csv", csv.str());
        write_resolved(a.out, resolved);
    }
    char tail[64];
    std::snprintf(tail, sizeof tail, " elapsed_s %.1f", elapsed);
    out << "max relative error " << format_number(worst) << " (" << worst_name << ")" << tail << "\n";
    if (!(worst < a.tolerance)) {
        out << "gradient check FAILED: tolerance " << format_number(a.tolerance) << "\n";
        return kNumericAbort;
    }
    return kOk;
}

struct PlotArgs {
    std::string history, predictions, out;
    std::size_t window = 50;
};

int cmd_plot(const PlotArgs& a, std::ostream& out) {
    if (a.history.empty() && a.predictions.empty())
        throw ConfigError("plot: give --history and/or --predictions");
    if (a.window == 0) throw ConfigError("plot.window: must be >= 1");
    KeyValueConfig resolved;
    if (!a.history.empty()) resolved.set("plot.history", a.history);
    if (!a.predictions.empty()) resolved.set("plot.predictions", a.predictions);
    resolved.set("plot.window", std::to_string(a.window));
    echo(out, "plot", resolved);

    const fs::path dir(a.out);
    fs::create_directories(dir);
    if (!a.history.empty()) {
        const auto h = TrainHistory::read_csv(a.history);
        plot::Series loss{"loss", {}, {}, "#9ecae1", 1.0};
        plot::Series avg{"moving average (" + std::to_string(a.window) + ")", {}, {}, "#08519c", 2.0};
        plot::Series val{"val rmse", {}, {}, "#d62728", 1.5};
        plot::Series tr{"train mae", {}, {}, "#2ca02c", 1.5};
        std::ostringstream csv;
        csv << "step,loss,moving_average\n";
        double sum = 0.0;
        for (std::size_t i = 0; i < h.steps.size(); ++i) {
            sum += h.steps[i].loss;
            if (i >= a.window) sum -= h.steps[i - a.window].loss;
            const double ma = sum / static_cast<double>(std::min(i + 1, a.window));
            const double x = static_cast<double>(h.steps[i].step);
            loss.xs.push_back(x);
            loss.ys.push_back(h.steps[i].loss);
            avg.xs.push_back(x);
            avg.ys.push_back(ma);
            csv << h.steps[i].step << "," << num(h.steps[i].loss) << "," << num(ma) << "\n";
        }
        for (const auto& e : h.evals) {
            if (e.val) {
                val.xs.push_back(static_cast<double>(e.step));
                val.ys.push_back(e.val->rmse);
            }
            if (e.train) {
                tr.xs.push_back(static_cast<double>(e.step));
                tr.ys.push_back(e.train->mae);
            }
        }
        plot::Chart chart{"Training loss", "optimizer step", "Huber loss / metric (rad)", {loss, avg}, true};
        if (!val.xs.empty()) chart.series.push_back(val);
        if (!tr.xs.empty()) chart.series.push_back(tr);
        write_text(dir / "loss.csv", csv.str());
        write_text(dir / "loss.svg", plot::render_svg(chart));
        out << "wrote " << (dir / "loss.svg").string() << " (" << h.steps.size() << " steps)\n";
    }
    if (!a.predictions.empty()) {
        std::ifstream in(a.predictions);
        if (!in) throw DataError("cannot open " + a.predictions);
        std::string line;
        if (!std::getline(in, line) || line != "index,timestamp_us,target_rad,prediction_rad")
            throw DataError(a.predictions + ": not a predictions file");
        plot::Series truth{"ground truth", {}, {}, "#000000", 2.0};
        plot::Series pred{"predicted", {}, {}, "#d62728", 1.5};
        std::ostringstream csv;
        csv << "index,time_s,ground_truth_rad,predicted_rad\n";
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto c = split_csv_line(line);
            try {
                if (c.size() != 4) throw std::invalid_argument("columns");
                const double t = std::stod(c[1]) * 1e-6;
                truth.xs.push_back(t);
                truth.ys.push_back(std::stod(c[2]));
                pred.xs.push_back(t);
                pred.ys.push_back(std::stod(c[3]));
            } catch (const std::exception&) {
                throw DataError(a.predictions + ":" + std::to_string(lineno) + ": malformed row");
            }
            csv << c[0] << "," << num(truth.xs.back()) << "," << c[2] << "," << c[3] << "\n";
        }
        plot::Chart chart{"Steering angle: predicted vs ground truth", "time (s)", "steering (rad)", {truth, pred}};
        write_text(dir / "steering.csv", csv.str());
        write_text(dir / "steering.svg", plot::render_svg(chart));
        out << "wrote " << (dir / "steering.svg").string() << " (" << truth.xs.size() << " samples)\n";
    }
    write_resolved(dir, resolved);
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"DRFuser steering pipeline: event simulation, dataset generation, training and evaluation", "drfuser"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Print help for every subcommand");

    SimulateArgs sim;
    auto* s_sim = app.add_subcommand("simulate", "Brightness video -> event stream (events.bin)");
    s_sim->add_option("--config", sim.config, "Configuration file ([events] threshold)")->check(CLI::ExistingFile);
    s_sim->add_option("--video", sim.video, "Video directory holding video.csv and PGM frames")
        ->required()
        ->check(CLI::ExistingDirectory);
    s_sim->add_option("--out", sim.out, "Output directory")->required();
    sim.threshold_opt = s_sim->add_option("--threshold", sim.threshold, "Contrast threshold in log-brightness units");
    s_sim->add_flag("--csv", sim.csv, "Also write events.csv");

    RenderArgs ren;
    auto* s_ren = app.add_subcommand("render", "Event stream -> polarity histogram frames");
    s_ren->add_option("--config", ren.config, "Configuration file ([render] section)")->check(CLI::ExistingFile);
    s_ren->add_option("--events", ren.events, "Event file (events.bin)")->required()->check(CLI::ExistingFile);
    s_ren->add_option("--out", ren.out, "Output directory")->required();
    ren.count_opt = s_ren->add_option("--events-per-frame", ren.events_per_frame, "Fixed event count per frame");
    ren.window_opt = s_ren->add_option("--time-window-us", ren.window_us, "Fixed time window per frame (us)");
    ren.count_opt->excludes(ren.window_opt);

    SyncArgs syn;
    auto* s_syn = app.add_subcommand("sync", "Match every base timestamp to the nearest one in each stream");
    s_syn->add_option("--base", syn.base, "CSV with a timestamp_us, t_us or end_us column")
        ->required()
        ->check(CLI::ExistingFile);
    s_syn->add_option("--stream", syn.streams, "Stream CSV to match against (repeatable)")
        ->required()
        ->check(CLI::ExistingFile);
    s_syn->add_option("--out", syn.out, "Output directory")->required();

    GenerateArgs gen;
    auto* s_gen = app.add_subcommand("generate", "Write a synthetic driving dataset");
    s_gen->add_option("--config", gen.config, "Configuration file ([scenario], [dataset])")->check(CLI::ExistingFile);
    s_gen->add_option("--out", gen.out, "Dataset directory")->required();
    gen.seed_opt = s_gen->add_option("--seed", gen.seed, "Scene texture seed");
    gen.count_opt = s_gen->add_option("--events-per-frame", gen.events_per_frame, "Fixed-count event frames");
    gen.window_opt = s_gen->add_option("--time-window-us", gen.window_us, "Event frame window (us)");
    gen.split_opt = s_gen->add_option("--split", gen.split, "Split fractions, e.g. 0.75,0.25 (train,test) or 0.6,0.2,0.2");
    s_gen->add_flag("--keep-video", gen.keep_video, "Keep the brightness video under video/");

    TrainArgs tr;
    auto* s_tr = app.add_subcommand("train", "Train a model on a dataset");
    s_tr->add_option("--config", tr.config, "Configuration file ([model] [encoder] [decoder] [train])")
        ->check(CLI::ExistingFile);
    s_tr->add_option("--dataset", tr.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    s_tr->add_option("--out", tr.out, "Run directory")->required();
    tr.seed_opt = s_tr->add_option("--seed", tr.seed, "Shuffle and dropout seed");
    tr.init_seed_opt = s_tr->add_option("--init-seed", tr.init_seed, "Weight initialisation seed (default: --seed)");
    tr.variant_opt = s_tr->add_option("--variant", tr.variant, "Fusion variant")->check(CLI::IsMember(kVariants));
    s_tr->add_option("--checkpoint", tr.checkpoint, "Initial weights")->check(CLI::ExistingFile);
    tr.steps_opt = s_tr->add_option("--steps", tr.steps, "Maximum optimizer steps");
    tr.eval_opt = s_tr->add_option("--eval-every", tr.eval_every, "Evaluation cadence in steps (0: each epoch)");
    tr.lr_opt = s_tr->add_option("--lr", tr.lr, "Learning rate");
    tr.target_opt = s_tr->add_option("--target-mae", tr.target_mae, "Stop once training-set MAE is below this");

    EvalArgs ev;
    auto* s_ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    s_ev->add_option("--config", ev.config, "Model configuration (default: config.ini next to the checkpoint)")
        ->check(CLI::ExistingFile);
    s_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    s_ev->add_option("--dataset", ev.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    s_ev->add_option("--out", ev.out, "Output directory (default: <checkpoint dir>/eval)");
    ev.variant_opt = s_ev->add_option("--variant", ev.variant, "Fusion variant")->check(CLI::IsMember(kVariants));
    s_ev->add_option("--split", ev.split, "Named split from the dataset manifest (default: all samples)");
    s_ev->add_option("--batch-size", ev.batch, "Evaluation batch size");

    GradcheckArgs gc;
    auto* s_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite (64-bit)");
    s_gc->add_option("--seeds", gc.seeds, "Seeds per case");
    s_gc->add_option("--tolerance", gc.tolerance, "Largest acceptable relative error");
    s_gc->add_option("--out", gc.out, "Optional output directory for gradcheck.csv");

    PlotArgs pl;
    auto* s_pl = app.add_subcommand("plot", "SVG and CSV charts from a training history or predictions");
    s_pl->add_option("--history", pl.history, "history.csv from train")->check(CLI::ExistingFile);
    s_pl->add_option("--predictions", pl.predictions, "predictions.csv from eval")->check(CLI::ExistingFile);
    s_pl->add_option("--out", pl.out, "Output directory")->required();
    s_pl->add_option("--window", pl.window, "Moving-average window in steps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*s_sim) return cmd_simulate(sim, out);
        if (*s_ren) return cmd_render(ren, out);
        if (*s_syn) return cmd_sync(syn, out);
        if (*s_gen) return cmd_generate(gen, out);
        if (*s_tr) return cmd_train(tr, out);
        if (*s_ev) return cmd_eval(ev, out);
        if (*s_gc) return cmd_gradcheck(gc, out);
        if (*s_pl) return cmd_plot(pl, out);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumericAbort;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << "\n";
        return kDataError;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const DomainError& e) {
        err << "domain error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "file error: " << e.what() << "\n";
        return kDataError;
    }
    err << "no subcommand\n";
    return kUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.push_back("drfuser");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace drfuser::cli
