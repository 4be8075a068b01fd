#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drfuser/config_file.hpp"
#include "drfuser/dataset.hpp"
#include "drfuser/model.hpp"
#include "drfuser/tensor.hpp"

namespace drfuser {

// Mean over elements of 0.5 x^2 for |x| <= delta, delta (|x| - delta/2) otherwise,
// with x = pred - target. Differentiable in both arguments.
template <typename Real>
Tensor<Real> huber_loss(const Tensor<Real>& pred, const Tensor<Real>& target, double delta = 1.0);

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

// Decoupled weight decay as in PyTorch's AdamW:
//   w <- w (1 - lr wd);  m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
//   w <- w - lr / (1 - b1^t) * m / (sqrt(v) / sqrt(1 - b2^t) + eps)
// Moments are kept in double. Parameters without a gradient are skipped.
template <typename Real>
class AdamW {
public:
    explicit AdamW(AdamWConfig config);

    // Throws NumericError naming the parameter when a gradient is not finite;
    // nothing is updated in that case.
    void step(std::span<const NamedTensor<Real>> params);

    std::uint64_t steps() const { return t_; }
    const AdamWConfig& config() const { return config_; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
    const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

private:
    AdamWConfig config_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

struct Metrics {
    double rmse = 0.0;
    double mae = 0.0;
    std::size_t count = 0;
};

// Throws ContractError on empty input and DimensionError on a length mismatch.
Metrics compute_metrics(std::span<const double> predictions, std::span<const double> targets);

struct Evaluation {
    Metrics metrics;
    std::vector<double> predictions;
    std::vector<double> targets;
    std::vector<std::int64_t> timestamps;
};

// Eval-mode forward over the dataset in order.
Evaluation evaluate(ModelF& model, const data::Dataset& dataset, std::size_t batch_size = 8);

struct TrainConfig {
    AdamWConfig optimizer;
    double huber_delta = 1.0;
    std::size_t batch_size = 8;
    std::size_t epochs = 0;       // 0: no epoch limit
    std::size_t max_steps = 2000;  // 0: no step limit
    // Stop once eval-mode MAE on the training set drops below this.
    std::optional<double> target_train_mae;
    // Evaluation cadence in optimizer steps; 0 evaluates at each epoch end.
    std::size_t eval_every = 0;
    std::uint64_t seed = 0;

    void validate() const;
    // [train] section.
    static TrainConfig from_config(const KeyValueConfig& cfg);
    void write_to(KeyValueConfig& cfg) const;
};

struct StepRecord {
    std::size_t step = 0;  // 1-based optimizer step
    std::size_t epoch = 0;
    double loss = 0.0;
    double elapsed_s = 0.0;
};

struct EvalRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::optional<Metrics> val;
    std::optional<Metrics> train;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;

    // step,loss,epoch,val_rmse,val_mae,train_rmse,train_mae,elapsed_s; metric
    // columns are filled on the steps where an evaluation ran.
    void write_csv(const std::filesystem::path& path) const;
    static TrainHistory read_csv(const std::filesystem::path& path);
};

struct TrainResult {
    TrainHistory history;
    std::size_t best_step = 0;
    std::optional<Metrics> best_val;
    std::optional<Metrics> final_train;
    bool reached_target = false;
    std::string stop_reason;
};

struct TrainCallbacks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EvalRecord&)> on_eval;
};

inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
inline constexpr const char* kHistoryFile = "history.csv";
inline constexpr const char* kNanSnapshot = "nan_snapshot.ckpt";

// Minimises the mean Huber loss between model(rgb, event) and the steering
// labels. Batches follow a per-epoch shuffle drawn from config.seed. When
// out_dir is non-empty it receives history.csv, last.ckpt and, with a
// validation set, best.ckpt (lowest validation RMSE). A non-finite loss
// writes nan_snapshot.ckpt and throws NumericError.
TrainResult train(ModelF& model, const data::Dataset& train_set, const data::Dataset* val_set,
                  const TrainConfig& config, const std::filesystem::path& out_dir = {},
                  const TrainCallbacks& callbacks = {});

// Scores at full scale, kept for documentation and comparison output only.
namespace reference_scores {
inline constexpr double kOwnDatasetRmse = 0.1266;
inline constexpr double kOwnDatasetMae = 0.0396;
inline constexpr double kEventScapeRmse = 0.0118;
inline constexpr double kEventScapeMae = 0.00214;
inline constexpr double kDddRmse = 0.01519;
inline constexpr double kDddMae = 0.00631;
inline constexpr double kDddComparisonRmse = 0.05192;
inline constexpr double kDddPriorArtRmse = 0.0720821;
}  // namespace reference_scores

}  // namespace drfuser
