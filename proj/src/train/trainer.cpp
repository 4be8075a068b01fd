#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "drfuser/errors.hpp"
#include "drfuser/rng.hpp"
#include "drfuser/train.hpp"

namespace drfuser {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    optimizer.validate();
    if (!(huber_delta > 0.0)) throw ConfigError("train.huber_delta: must be > 0");
    if (batch_size == 0) throw ConfigError("train.batch_size: must be >= 1");
    if (target_train_mae && !(*target_train_mae > 0.0)) throw ConfigError("train.target_train_mae: must be > 0");
    if (epochs == 0 && max_steps == 0 && !target_train_mae)
        throw ConfigError("train.max_steps: set max_steps, epochs or target_train_mae so training can stop");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
    TrainConfig c;
    c.optimizer.lr = cfg.get_double("train.lr", c.optimizer.lr);
    c.optimizer.weight_decay = cfg.get_double("train.weight_decay", c.optimizer.weight_decay);
    c.optimizer.beta1 = cfg.get_double("train.beta1", c.optimizer.beta1);
    c.optimizer.beta2 = cfg.get_double("train.beta2", c.optimizer.beta2);
    c.optimizer.eps = cfg.get_double("train.eps", c.optimizer.eps);
    c.huber_delta = cfg.get_double("train.huber_delta", c.huber_delta);
    c.batch_size = cfg.get_uint("train.batch_size", c.batch_size);
    c.epochs = cfg.get_uint("train.epochs", c.epochs);
    c.max_steps = cfg.get_uint("train.max_steps", c.max_steps);
    if (cfg.has("train.target_train_mae")) {
        const auto v = cfg.get_double("train.target_train_mae", 0.0);
        if (v > 0.0) c.target_train_mae = v;
    }
    c.eval_every = cfg.get_uint("train.eval_every", c.eval_every);
    c.seed = cfg.get_uint("train.seed", c.seed);
    c.validate();
    return c;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void TrainConfig::write_to(KeyValueConfig& cfg) const {
    cfg.set("train.lr", num(optimizer.lr));
    cfg.set("train.weight_decay", num(optimizer.weight_decay));
    cfg.set("train.beta1", num(optimizer.beta1));
    cfg.set("train.beta2", num(optimizer.beta2));
    cfg.set("train.eps", num(optimizer.eps));
    cfg.set("train.huber_delta", num(huber_delta));
    cfg.set("train.batch_size", std::to_string(batch_size));
    cfg.set("train.epochs", std::to_string(epochs));
    cfg.set("train.max_steps", std::to_string(max_steps));
    cfg.set("train.target_train_mae", target_train_mae ? num(*target_train_mae) : "0");
    cfg.set("train.eval_every", std::to_string(eval_every));
    cfg.set("train.seed", std::to_string(seed));
}

// ---------------------------------------------------------------------------
// history

void TrainHistory::write_csv(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << "step,loss,epoch,val_rmse,val_mae,train_rmse,train_mae,elapsed_s\n";
    std::size_t e = 0;
    for (const auto& s : steps) {
        out << s.step << "," << num(s.loss) << "," << s.epoch << ",";
        while (e < evals.size() && evals[e].step < s.step) ++e;
        const EvalRecord* ev = e < evals.size() && evals[e].step == s.step ? &evals[e] : nullptr;
        if (ev && ev->val) out << num(ev->val->rmse) << "," << num(ev->val->mae);
        else out << ",";
        out << ",";
        if (ev && ev->train) out << num(ev->train->rmse) << "," << num(ev->train->mae);
        else out << ",";
        char t[32];
        std::snprintf(t, sizeof t, "%.3f", s.elapsed_s);
        out << "," << t << "\n";
    }
    if (!out) throw DataError("short write to " + path.string());
}

TrainHistory TrainHistory::read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "step,loss,epoch,val_rmse,val_mae,train_rmse,train_mae,elapsed_s")
        throw DataError(path.string() + ": not a training history file");
    TrainHistory h;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 8)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns");
        try {
            StepRecord s{std::stoul(cells[0]), std::stoul(cells[2]), std::stod(cells[1]), std::stod(cells[7])};
            h.steps.push_back(s);
            EvalRecord ev{s.step, s.epoch, std::nullopt, std::nullopt};
            if (!cells[3].empty()) ev.val = Metrics{std::stod(cells[3]), std::stod(cells[4]), 0};
            if (!cells[5].empty()) ev.train = Metrics{std::stod(cells[5]), std::stod(cells[6]), 0};
            if (ev.val || ev.train) h.evals.push_back(ev);
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// loop

TrainResult train(ModelF& model, const data::Dataset& train_set, const data::Dataset* val_set,
                  const TrainConfig& config, const fs::path& out_dir, const TrainCallbacks& callbacks) {
    config.validate();
    if (train_set.size() == 0) throw ContractError("train: empty training set");
    const auto& mc = model.config();
    if (train_set.width() != mc.width || train_set.height() != mc.height)
        throw ContractError("train: dataset extents " + std::to_string(train_set.width()) + "x" +
                            std::to_string(train_set.height()) + " do not match the model input " +
                            std::to_string(mc.width) + "x" + std::to_string(mc.height));
    const bool have_val = val_set && val_set->size() > 0;
    const bool write = !out_dir.empty();
    if (write) fs::create_directories(out_dir);

    const auto params = model.parameters();
    AdamW<float> opt(config.optimizer);
    Rng order_rng(mix_seed(config.seed, 0));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t step = 0;
    double best_rmse = INFINITY;

    auto run_eval = [&](std::size_t epoch) {
        EvalRecord rec{step, epoch, std::nullopt, std::nullopt};
        if (have_val) {
            rec.val = evaluate(model, *val_set, config.batch_size).metrics;
            if (rec.val->rmse < best_rmse) {
                best_rmse = rec.val->rmse;
                result.best_step = step;
                result.best_val = rec.val;
                if (write) model.save(out_dir / kBestCheckpoint);
            }
        }
        if (config.target_train_mae) {
            rec.train = evaluate(model, train_set, config.batch_size).metrics;
            result.final_train = rec.train;
            if (rec.train->mae < *config.target_train_mae) result.reached_target = true;
        }
        if (rec.val || rec.train) {
            result.history.evals.push_back(rec);
            if (callbacks.on_eval) callbacks.on_eval(rec);
        }
    };

    ForwardOptions fwd;
    fwd.mode = Mode::train;
    bool done = false;
    for (std::size_t epoch = 1; !done; ++epoch) {
        if (config.epochs && epoch > config.epochs) {
            result.stop_reason = "epoch limit";
            break;
        }
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size() && !done; start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const auto batch =
                data::make_batch(train_set, std::span<const std::size_t>(order.data() + start, end - start));
            ++step;
            fwd.dropout_seed = mix_seed(config.seed, 1'000'000 + step);
            for (const auto& p : params) p.tensor.node()->grad.clear();
            const auto pred = model.forward(batch.rgb, batch.event, fwd);
            const auto loss = huber_loss(pred, batch.target, config.huber_delta);
            const double value = loss.item();
            const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.history.steps.push_back({step, epoch, value, elapsed});
            if (!std::isfinite(value)) {
                std::string where;
                if (write) {
                    model.save(out_dir / kNanSnapshot);
                    result.history.write_csv(out_dir / kHistoryFile);
                    where = "; snapshot written to " + (out_dir / kNanSnapshot).string();
                }
                throw NumericError("loss became non-finite at step " + std::to_string(step) + " (epoch " +
                                   std::to_string(epoch) + ")" + where);
            }
            loss.backward();
            opt.step(params);
            if (callbacks.on_step) callbacks.on_step(result.history.steps.back());

            const bool epoch_end = end == order.size();
            if (config.eval_every ? step % config.eval_every == 0 : epoch_end) run_eval(epoch);
            if (result.reached_target) {
                result.stop_reason = "target train MAE reached";
                done = true;
            } else if (config.max_steps && step >= config.max_steps) {
                result.stop_reason = "step limit";
                if (result.history.evals.empty() || result.history.evals.back().step != step) run_eval(epoch);
                done = true;
            }
        }
    }
    if (result.reached_target) result.stop_reason = "target train MAE reached";
    if (write) {
        model.save(out_dir / kLastCheckpoint);
        result.history.write_csv(out_dir / kHistoryFile);
    }
    return result;
}

}  // namespace drfuser
