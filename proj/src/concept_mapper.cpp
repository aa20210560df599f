#include "lacoat/concept_mapper.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lacoat/binary_io.hpp"
#include "lacoat/errors.hpp"
#include "lacoat/lbfgs.hpp"

namespace lacoat {

namespace {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void softmax_rows(Eigen::MatrixXd& z) {
    z = z.colwise() - z.rowwise().maxCoeff();
    z = z.array().exp().matrix();
    z = z.array().colwise() / z.rowwise().sum().array();
}

}  // namespace

double mapper_objective(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                        const std::vector<std::size_t>& labels, std::size_t num_concepts,
                        double l2, Eigen::VectorXd* grad) {
    const auto k = static_cast<Eigen::Index>(num_concepts);
    const Eigen::Index h = features.cols();
    const auto n = static_cast<double>(features.rows());
    const Eigen::Map<const RowMatrixXd> w(params.data(), k, h);
    const Eigen::Map<const Eigen::VectorXd> b(params.data() + k * h, k);

    Eigen::MatrixXd z = (features * w.transpose()).rowwise() + b.transpose();
    const Eigen::VectorXd row_max = z.rowwise().maxCoeff();
    const Eigen::VectorXd log_norm =
        ((z.colwise() - row_max).array().exp().rowwise().sum().log()).matrix() + row_max;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        loss += log_norm(i) - z(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]));
    }
    loss = loss / n + 0.5 * l2 * w.squaredNorm();

    if (grad != nullptr) {
        Eigen::MatrixXd p = (z.colwise() - log_norm).array().exp().matrix();
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            p(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) -= 1.0;
        }
        grad->resize(params.size());
        Eigen::Map<RowMatrixXd> gw(grad->data(), k, h);
        Eigen::Map<Eigen::VectorXd> gb(grad->data() + k * h, k);
        gw = p.transpose() * features / n + l2 * w;
        gb = p.colwise().sum().transpose() / n;
    }
    return loss;
}

MapperTraining train_mapper(const Eigen::MatrixXd& features, const std::vector<std::size_t>& labels,
                            std::size_t num_concepts, const MapperOptions& options) {
    if (features.rows() == 0) throw ValidationError("mapper training set is empty");
    if (labels.size() != static_cast<std::size_t>(features.rows())) {
        throw ValidationError("mapper label count does not match feature rows");
    }
    if (num_concepts == 0) throw ValidationError("mapper needs at least one concept");
    std::vector<std::size_t> counts(num_concepts, 0);
    for (std::size_t y : labels) {
        if (y >= num_concepts) {
            throw ValidationError("concept id " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_concepts) + ")");
        }
        ++counts[y];
    }
    std::string missing;
    for (std::size_t c = 0; c < num_concepts; ++c) {
        if (counts[c] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
    }
    if (!missing.empty()) {
        throw ValidationError("concepts without training examples: " + missing);
    }

    const double l2 = options.l2.value_or(1.0 / static_cast<double>(features.rows()));
    if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ValidationError("l2 strength must be >= 0");

    const auto k = static_cast<Eigen::Index>(num_concepts);
    const Eigen::Index h = features.cols();
    Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        return mapper_objective(x, features, labels, num_concepts, l2, &g);
    };
    LbfgsOptions lbfgs;
    lbfgs.max_iter = options.max_iter;
    lbfgs.tol = options.tol;
    auto solved = minimize_lbfgs(objective, Eigen::VectorXd::Zero(k * h + k), lbfgs);

    MapperTraining out;
    const Eigen::Map<const RowMatrixXd> w(solved.x.data(), k, h);
    out.model.weights = w.cast<float>();
    out.model.biases = solved.x.tail(k).cast<float>();
    out.model.l2_strength = l2;
    out.model.layer = options.layer;
    out.iterations = solved.iterations;
    out.converged = solved.converged;
    out.loss_history = std::move(solved.value_history);
    return out;
}

Eigen::VectorXd predict_proba(const MapperModel& model, const Eigen::VectorXd& x) {
    if (static_cast<std::size_t>(x.size()) != model.dim()) {
        throw ValidationError("mapper input has dim " + std::to_string(x.size()) + ", expected " +
                              std::to_string(model.dim()));
    }
    Eigen::MatrixXd z =
        (model.weights.cast<double>() * x + model.biases.cast<double>()).transpose();
    softmax_rows(z);
    return z.row(0).transpose();
}

std::vector<std::pair<std::size_t, double>> predict_topk(const MapperModel& model,
                                                         const Eigen::VectorXd& x, std::size_t k) {
    if (k == 0 || k > model.num_concepts()) {
        throw ValidationError("k=" + std::to_string(k) + " outside [1, " +
                              std::to_string(model.num_concepts()) + "]");
    }
    const Eigen::VectorXd p = predict_proba(model, x);
    std::vector<std::size_t> ids(static_cast<std::size_t>(p.size()));
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double pa = p(static_cast<Eigen::Index>(a));
                          const double pb = p(static_cast<Eigen::Index>(b));
                          return pa != pb ? pa > pb : a < b;
                      });
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.emplace_back(ids[i], p(static_cast<Eigen::Index>(ids[i])));
    return out;
}

std::vector<double> evaluate_topk(const MapperModel& model, const Eigen::MatrixXd& features,
                                  const std::vector<std::size_t>& labels,
                                  const std::vector<std::size_t>& ks) {
    if (features.rows() == 0) throw ValidationError("evaluation set is empty");
    if (labels.size() != static_cast<std::size_t>(features.rows())) {
        throw ValidationError("evaluation label count does not match feature rows");
    }
    // k larger than the concept count is clamped; every label is then in the top-k.
    std::size_t max_k = 1;
    for (std::size_t k : ks) max_k = std::max(max_k, std::min(k, model.num_concepts()));
    std::vector<std::size_t> hits(ks.size(), 0);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const auto ranked = predict_topk(model, features.row(i).transpose(), max_k);
        std::size_t rank = ranked.size();
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            if (ranked[r].first == labels[static_cast<std::size_t>(i)]) {
                rank = r;
                break;
            }
        }
        for (std::size_t j = 0; j < ks.size(); ++j) {
            if (rank < std::min(ks[j], model.num_concepts())) ++hits[j];
        }
    }
    std::vector<double> acc;
    acc.reserve(ks.size());
    for (std::size_t h : hits) acc.push_back(static_cast<double>(h) / static_cast<double>(features.rows()));
    return acc;
}

void save_mapper(const std::filesystem::path& path, const MapperModel& model) {
    io::ModelFile file;
    file.header = {{"kind", "concept_mapper"},
                   {"version", 1},
                   {"num_concepts", model.num_concepts()},
                   {"dim", model.dim()},
                   {"l2_strength", model.l2_strength},
                   {"layer", model.layer}};
    file.payload.reserve(static_cast<std::size_t>(model.weights.size() + model.biases.size()));
    for (Eigen::Index i = 0; i < model.weights.rows(); ++i) {
        for (Eigen::Index j = 0; j < model.weights.cols(); ++j) file.payload.push_back(model.weights(i, j));
    }
    for (Eigen::Index i = 0; i < model.biases.size(); ++i) file.payload.push_back(model.biases(i));
    io::save_model_file(path, file);
}

MapperModel load_mapper(const std::filesystem::path& path) {
    const auto file = io::load_model_file(path);
    MapperModel model;
    std::size_t k = 0, h = 0;
    try {
        if (file.header.at("kind").get<std::string>() != "concept_mapper") {
            throw LoadError(path.string() + ": not a concept mapper");
        }
        k = file.header.at("num_concepts").get<std::size_t>();
        h = file.header.at("dim").get<std::size_t>();
        model.l2_strength = file.header.at("l2_strength").get<double>();
        model.layer = file.header.at("layer").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    if (file.payload.size() != k * h + k) {
        throw LoadError(path.string() + ": payload has " + std::to_string(file.payload.size()) +
                        " floats, expected " + std::to_string(k * h + k));
    }
    model.weights.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(h));
    std::size_t at = 0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < h; ++j) {
            model.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = file.payload[at++];
        }
    }
    model.biases.resize(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) model.biases(static_cast<Eigen::Index>(i)) = file.payload[at++];
    if (!model.weights.allFinite() || !model.biases.allFinite()) {
        throw LoadError(path.string() + ": non-finite mapper parameters");
    }
    return model;
}

}  // namespace lacoat
