#include <cmath>
#include <numeric>

#include "drfuser/errors.hpp"
#include "drfuser/train.hpp"

namespace drfuser {

Metrics compute_metrics(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size())
        throw DimensionError("metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                             std::to_string(targets.size()) + " targets");
    if (predictions.empty()) throw ContractError("metrics: empty prediction set");
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double e = predictions[i] - targets[i];
        se += e * e;
        ae += std::abs(e);
    }
    const double n = static_cast<double>(predictions.size());
    return {std::sqrt(se / n), ae / n, predictions.size()};
}

Evaluation evaluate(ModelF& model, const data::Dataset& dataset, std::size_t batch_size) {
    if (dataset.size() == 0) throw ContractError("evaluate: empty dataset");
    if (batch_size == 0) throw ContractError("evaluate: batch size must be >= 1");
    NoGradGuard no_grad;
    Evaluation out;
    ForwardOptions opts;
    opts.mode = Mode::eval;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
        const auto batch = data::make_batch(dataset, idx);
        const auto y = model.forward(batch.rgb, batch.event, opts);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            out.predictions.push_back(static_cast<double>(y[b]));
            out.targets.push_back(dataset.steering(idx[b]));
            out.timestamps.push_back(dataset.timestamp(idx[b]));
        }
    }
    out.metrics = compute_metrics(out.predictions, out.targets);
    return out;
}

}  // namespace drfuser
