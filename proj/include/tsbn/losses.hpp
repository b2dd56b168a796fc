#pragma once

#include <cmath>
#include <vector>

#include "tsbn/errors.hpp"
#include "tsbn/graph.hpp"
#include "tsbn/tensor.hpp"

namespace tsbn {

// Plain-value loss API. The training path computes the same quantities
// through Graph ops; test_losses pins the two routes together.
//
// The batch losses are means, not sums, so magnitudes are invariant to
// batch size and the alpha / w coefficients keep their meaning.

struct LossWeights {
  double alpha = 1.0;  // transfer-loss coefficient in the downstream total
  double w = 15.0;     // positive-class weight in the BCE
};

// Mean squared error over every pixel of the batch.
inline double restoration_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target))
    throw InvalidInput("restoration_loss: shape mismatch " + pred.shape_str() +
                       " vs " + target.shape_str());
  double acc = 0.0;
  for (long i = 0; i < pred.numel(); ++i) {
    double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

// Collaborative transfer loss: mean squared difference between the
// projected pretext embedding P(e(x)) and downstream embedding D(c(x)).
inline double transfer_loss(const Tensor& p_emb, const Tensor& d_emb) {
  if (!p_emb.same_shape(d_emb))
    throw InvalidInput("transfer_loss: shape mismatch " + p_emb.shape_str() +
                       " vs " + d_emb.shape_str());
  double acc = 0.0;
  for (long i = 0; i < p_emb.numel(); ++i) {
    double d = p_emb[i] - d_emb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(p_emb.numel());
}

// Class-weighted binary cross entropy, mean over the batch. Predictions
// are clamped to [1e-7, 1 - 1e-7] before the logs.
inline double weighted_bce(const std::vector<double>& probs,
                           const std::vector<int>& labels, double w) {
  if (probs.size() != labels.size())
    throw InvalidInput("weighted_bce: probs/labels length mismatch");
  if (probs.empty()) throw InvalidInput("weighted_bce: empty batch");
  if (w <= 0.0) throw InvalidInput("weighted_bce: weight must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw InvalidInput("weighted_bce: label outside {0,1}");
    double p = std::min(1.0 - Graph::kBceEps,
                        std::max(Graph::kBceEps, probs[i]));
    acc -= labels[i] == 1 ? w * std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(probs.size());
}

// Total downstream-step loss: alpha * transfer + BCE.
inline double downstream_loss(double ct, double bce, double alpha) {
  if (alpha < 0.0 || !std::isfinite(alpha))
    throw InvalidInput("downstream_loss: alpha must be finite and >= 0");
  if (!std::isfinite(ct) || !std::isfinite(bce))
    throw InvalidInput("downstream_loss: non-finite component");
  return alpha * ct + bce;
}

}  // namespace tsbn
