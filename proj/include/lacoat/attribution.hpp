#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lacoat/reference_scorer.hpp"
#include "lacoat/repr_store.hpp"

namespace lacoat {

struct AttributionVector {
    std::vector<double> per_token;
    Eigen::MatrixXd per_dim;  ///< (x - baseline) * mean path gradient, same shape as inputs
    std::size_t target_index = 0;
    std::size_t steps_used = 0;
};

/// Integrated gradients along the straight path from `baseline` (zeros by default) to `inputs`,
/// using a midpoint Riemann sum at alpha = (k + 1/2) / steps, k = 0..steps-1.
AttributionVector integrated_gradients(const DifferentiableScorer& scorer,
                                       const Eigen::MatrixXd& inputs, std::size_t target_index,
                                       std::size_t steps = 500,
                                       const std::optional<Eigen::MatrixXd>& baseline = std::nullopt);

struct SalientSelection {
    std::vector<std::size_t> indices;  ///< magnitude order, ties by lower index
    bool degenerate = false;           ///< every attribution was zero
};

/// Shortest prefix of tokens ranked by |attribution| whose magnitude sum reaches
/// mass * (total magnitude). Never empty.
SalientSelection select_salient_top_p(std::span<const double> attributions, double mass = 0.5);

/// Token index of the output head: the classifier token for sequence classification, otherwise
/// the prediction position itself.
std::size_t position_salient(TaskKind kind, std::span<const TokenRecord> sentence_tokens,
                             std::size_t prediction_position);

}  // namespace lacoat
