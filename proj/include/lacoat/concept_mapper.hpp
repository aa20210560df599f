#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lacoat {

/// Multinomial logistic regression from a representation to one of K concept ids.
struct MapperModel {
    Eigen::MatrixXf weights;  ///< K x H
    Eigen::VectorXf biases;   ///< K
    double l2_strength = 0.0;
    std::size_t layer = 0;

    std::size_t num_concepts() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
};

struct MapperOptions {
    std::optional<double> l2;  ///< defaults to 1 / N_train
    std::size_t max_iter = 100;
    double tol = 1e-5;
    std::size_t layer = 0;
};

struct MapperTraining {
    MapperModel model;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> loss_history;
};

/// Mean softmax cross-entropy plus (l2 / 2) |W|^2 (biases unpenalised). Parameters are W in
/// row-major order followed by the biases. Writes the gradient when `grad` is non-null.
double mapper_objective(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                        const std::vector<std::size_t>& labels, std::size_t num_concepts,
                        double l2, Eigen::VectorXd* grad);

/// L-BFGS from zero initialisation. Every concept id in [0, num_concepts) needs an example.
MapperTraining train_mapper(const Eigen::MatrixXd& features, const std::vector<std::size_t>& labels,
                            std::size_t num_concepts, const MapperOptions& options);

Eigen::VectorXd predict_proba(const MapperModel& model, const Eigen::VectorXd& x);

/// Top-k (concept id, probability), probability descending, ties by lower id.
std::vector<std::pair<std::size_t, double>> predict_topk(const MapperModel& model,
                                                         const Eigen::VectorXd& x, std::size_t k);

/// Fraction of rows whose label appears in the top-k, for each k in `ks`.
std::vector<double> evaluate_topk(const MapperModel& model, const Eigen::MatrixXd& features,
                                  const std::vector<std::size_t>& labels,
                                  const std::vector<std::size_t>& ks);

void save_mapper(const std::filesystem::path& path, const MapperModel& model);
MapperModel load_mapper(const std::filesystem::path& path);

}  // namespace lacoat
