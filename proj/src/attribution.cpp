#include "lacoat/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lacoat/errors.hpp"

namespace lacoat {

AttributionVector integrated_gradients(const DifferentiableScorer& scorer,
                                       const Eigen::MatrixXd& inputs, std::size_t target_index,
                                       std::size_t steps,
                                       const std::optional<Eigen::MatrixXd>& baseline) {
    if (steps < 1) throw ValidationError("integrated gradients needs at least one step");
    if (inputs.rows() == 0) throw ValidationError("integrated gradients needs at least one token");
    if (target_index >= scorer.num_outputs()) {
        throw ValidationError("target index " + std::to_string(target_index) + " out of range");
    }
    const Eigen::MatrixXd base =
        baseline ? *baseline : Eigen::MatrixXd::Zero(inputs.rows(), inputs.cols());
    if (base.rows() != inputs.rows() || base.cols() != inputs.cols()) {
        throw ValidationError("baseline shape does not match inputs");
    }

    const Eigen::MatrixXd delta = inputs - base;
    Eigen::MatrixXd grad_sum = Eigen::MatrixXd::Zero(inputs.rows(), inputs.cols());
    const double n = static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double alpha = (static_cast<double>(k) + 0.5) / n;
        grad_sum += scorer.gradient(base + alpha * delta, target_index);
    }

    AttributionVector out;
    out.per_dim = delta.cwiseProduct(grad_sum / n);
    out.per_token.resize(static_cast<std::size_t>(inputs.rows()));
    for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
        out.per_token[static_cast<std::size_t>(t)] = out.per_dim.row(t).sum();
        if (!std::isfinite(out.per_token[static_cast<std::size_t>(t)])) {
            throw std::runtime_error("integrated gradients produced a non-finite attribution");
        }
    }
    out.target_index = target_index;
    out.steps_used = steps;
    return out;
}

SalientSelection select_salient_top_p(std::span<const double> attributions, double mass) {
    if (!(mass > 0.0 && mass <= 1.0)) {
        throw ValidationError("salient mass must lie in (0, 1]");
    }
    if (attributions.empty()) throw ValidationError("no attributions to select from");

    std::vector<std::size_t> order(attributions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(attributions[a]) > std::abs(attributions[b]);
    });

    // Summing in ranked order makes the full prefix equal the total exactly.
    double total = 0.0;
    for (std::size_t i : order) total += std::abs(attributions[i]);
    if (total == 0.0) return {{0}, true};

    const double goal = mass * total;
    SalientSelection selection;
    double running = 0.0;
    for (std::size_t i : order) {
        selection.indices.push_back(i);
        running += std::abs(attributions[i]);
        if (running >= goal) break;
    }
    return selection;
}

std::size_t position_salient(TaskKind kind, std::span<const TokenRecord> sentence_tokens,
                             std::size_t prediction_position) {
    if (kind == TaskKind::sequence_classification) {
        for (std::size_t i = 0; i < sentence_tokens.size(); ++i) {
            if (sentence_tokens[i].is_classifier_token) return i;
        }
        throw ValidationError("sequence classification input has no classifier token");
    }
    if (prediction_position >= sentence_tokens.size()) {
        throw ValidationError("prediction position " + std::to_string(prediction_position) +
                              " outside sentence of " + std::to_string(sentence_tokens.size()) +
                              " tokens");
    }
    return prediction_position;
}

}  // namespace lacoat
