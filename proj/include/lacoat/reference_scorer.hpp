#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lacoat {

enum class TaskKind { sequence_classification, masked_prediction, sequence_labeling };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

/// Differentiable scalar score over a sequence of token vectors (one row per token).
/// Implementations must be safe for concurrent const use.
class DifferentiableScorer {
public:
    virtual ~DifferentiableScorer() = default;

    virtual std::size_t num_outputs() const = 0;
    virtual double forward(const Eigen::MatrixXd& inputs, std::size_t target_index) const = 0;
    /// d forward / d inputs, same shape as inputs.
    virtual Eigen::MatrixXd gradient(const Eigen::MatrixXd& inputs,
                                     std::size_t target_index) const = 0;
};

/// Two-layer tanh perceptron, input_dim -> hidden -> classes. Weights are stored in float32
/// (the on-disk precision) and evaluated in double.
class ReferenceScorer {
public:
    ReferenceScorer() = default;
    ReferenceScorer(Eigen::MatrixXf w1, Eigen::VectorXf b1, Eigen::MatrixXf w2, Eigen::VectorXf b2,
                    std::vector<std::string> class_labels);

    std::size_t input_dim() const { return static_cast<std::size_t>(w1_.cols()); }
    std::size_t hidden() const { return static_cast<std::size_t>(w1_.rows()); }
    std::size_t num_classes() const { return static_cast<std::size_t>(w2_.rows()); }
    const std::vector<std::string>& class_labels() const { return class_labels_; }

    Eigen::VectorXd logits(const Eigen::VectorXd& x) const;
    /// Gradient of logit[target] with respect to x.
    Eigen::VectorXd logit_gradient(const Eigen::VectorXd& x, std::size_t target) const;
    std::size_t predict(const Eigen::VectorXd& x) const;

    const Eigen::MatrixXf& w1() const { return w1_; }
    const Eigen::VectorXf& b1() const { return b1_; }
    const Eigen::MatrixXf& w2() const { return w2_; }
    const Eigen::VectorXf& b2() const { return b2_; }

    bool operator==(const ReferenceScorer& other) const;

private:
    Eigen::MatrixXf w1_, w2_;
    Eigen::VectorXf b1_, b2_;
    std::vector<std::string> class_labels_;
};

/// Sequence classification: the MLP applied to the mean of all token vectors.
class PooledSequenceScorer final : public DifferentiableScorer {
public:
    explicit PooledSequenceScorer(const ReferenceScorer& model) : model_(model) {}

    std::size_t num_outputs() const override { return model_.num_classes(); }
    double forward(const Eigen::MatrixXd& inputs, std::size_t target_index) const override;
    Eigen::MatrixXd gradient(const Eigen::MatrixXd& inputs, std::size_t target_index) const override;
    std::size_t predict(const Eigen::MatrixXd& inputs) const;

private:
    const ReferenceScorer& model_;
};

/// Sequence labeling: the MLP applied to the token at a fixed position.
class TokenPositionScorer final : public DifferentiableScorer {
public:
    TokenPositionScorer(const ReferenceScorer& model, std::size_t position)
        : model_(model), position_(position) {}

    std::size_t num_outputs() const override { return model_.num_classes(); }
    double forward(const Eigen::MatrixXd& inputs, std::size_t target_index) const override;
    Eigen::MatrixXd gradient(const Eigen::MatrixXd& inputs, std::size_t target_index) const override;
    std::size_t predict(const Eigen::MatrixXd& inputs) const;

private:
    const ReferenceScorer& model_;
    std::size_t position_;
};

struct ScorerTrainingOptions {
    std::size_t hidden = 32;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
};

struct TrainedScorer {
    ReferenceScorer scorer;
    double train_accuracy = 0.0;
};

/// Minibatch Adam on softmax cross-entropy. Rows of `features` are training examples
/// (pooled sentence vectors or single token vectors). Deterministic under the seed.
TrainedScorer train_reference_scorer(const Eigen::MatrixXd& features,
                                     const std::vector<std::size_t>& labels,
                                     std::vector<std::string> class_labels,
                                     const ScorerTrainingOptions& options);

struct ScorerFile {
    ReferenceScorer scorer;
    TaskKind task = TaskKind::sequence_classification;
    std::size_t layer = 0;  ///< bundle layer whose vectors the scorer consumes
};

void save_scorer(const std::filesystem::path& path, const ScorerFile& file);
ScorerFile load_scorer(const std::filesystem::path& path);

}  // namespace lacoat
