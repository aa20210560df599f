#include "lacoat/reference_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "lacoat/binary_io.hpp"
#include "lacoat/errors.hpp"

namespace lacoat {

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::sequence_classification: return "sequence_classification";
        case TaskKind::masked_prediction: return "masked_prediction";
        case TaskKind::sequence_labeling: return "sequence_labeling";
    }
    return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
    if (name == "sequence_classification" || name == "classification") {
        return TaskKind::sequence_classification;
    }
    if (name == "masked_prediction" || name == "masked") return TaskKind::masked_prediction;
    if (name == "sequence_labeling" || name == "labeling") return TaskKind::sequence_labeling;
    throw ValidationError("unknown task kind '" + name + "'");
}

ReferenceScorer::ReferenceScorer(Eigen::MatrixXf w1, Eigen::VectorXf b1, Eigen::MatrixXf w2,
                                 Eigen::VectorXf b2, std::vector<std::string> class_labels)
    : w1_(std::move(w1)), w2_(std::move(w2)), b1_(std::move(b1)), b2_(std::move(b2)),
      class_labels_(std::move(class_labels)) {
    if (b1_.size() != w1_.rows() || w2_.cols() != w1_.rows() || b2_.size() != w2_.rows()) {
        throw ValidationError("reference scorer: inconsistent weight shapes");
    }
    if (class_labels_.size() != static_cast<std::size_t>(w2_.rows())) {
        throw ValidationError("reference scorer: class label count does not match output size");
    }
    if (!w1_.allFinite() || !w2_.allFinite() || !b1_.allFinite() || !b2_.allFinite()) {
        throw ValidationError("reference scorer: non-finite weights");
    }
}

Eigen::VectorXd ReferenceScorer::logits(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != input_dim()) {
        throw ValidationError("reference scorer: input has dim " + std::to_string(x.size()) +
                              ", expected " + std::to_string(input_dim()));
    }
    const Eigen::VectorXd h = (w1_.cast<double>() * x + b1_.cast<double>()).array().tanh().matrix();
    return w2_.cast<double>() * h + b2_.cast<double>();
}

Eigen::VectorXd ReferenceScorer::logit_gradient(const Eigen::VectorXd& x, std::size_t target) const {
    if (target >= num_classes()) {
        throw ValidationError("target index " + std::to_string(target) + " out of range");
    }
    const Eigen::MatrixXd w1 = w1_.cast<double>();
    const Eigen::VectorXd h = (w1 * x + b1_.cast<double>()).array().tanh().matrix();
    const Eigen::VectorXd upstream =
        (w2_.row(static_cast<Eigen::Index>(target)).transpose().cast<double>().array() *
         (1.0 - h.array().square()))
            .matrix();
    return w1.transpose() * upstream;
}

std::size_t ReferenceScorer::predict(const Eigen::VectorXd& x) const {
    Eigen::Index best = 0;
    logits(x).maxCoeff(&best);
    return static_cast<std::size_t>(best);
}

bool ReferenceScorer::operator==(const ReferenceScorer& other) const {
    return w1_ == other.w1_ && b1_ == other.b1_ && w2_ == other.w2_ && b2_ == other.b2_ &&
           class_labels_ == other.class_labels_;
}

double PooledSequenceScorer::forward(const Eigen::MatrixXd& inputs, std::size_t target_index) const {
    const Eigen::VectorXd pooled = inputs.colwise().mean().transpose();
    return model_.logits(pooled)(static_cast<Eigen::Index>(target_index));
}

Eigen::MatrixXd PooledSequenceScorer::gradient(const Eigen::MatrixXd& inputs,
                                               std::size_t target_index) const {
    const Eigen::VectorXd pooled = inputs.colwise().mean().transpose();
    const Eigen::RowVectorXd g =
        model_.logit_gradient(pooled, target_index).transpose() / static_cast<double>(inputs.rows());
    return g.replicate(inputs.rows(), 1);
}

std::size_t PooledSequenceScorer::predict(const Eigen::MatrixXd& inputs) const {
    return model_.predict(inputs.colwise().mean().transpose());
}

double TokenPositionScorer::forward(const Eigen::MatrixXd& inputs, std::size_t target_index) const {
    if (position_ >= static_cast<std::size_t>(inputs.rows())) {
        throw ValidationError("scored position " + std::to_string(position_) + " outside input");
    }
    return model_.logits(inputs.row(static_cast<Eigen::Index>(position_)).transpose())(
        static_cast<Eigen::Index>(target_index));
}

Eigen::MatrixXd TokenPositionScorer::gradient(const Eigen::MatrixXd& inputs,
                                              std::size_t target_index) const {
    if (position_ >= static_cast<std::size_t>(inputs.rows())) {
        throw ValidationError("scored position " + std::to_string(position_) + " outside input");
    }
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(inputs.rows(), inputs.cols());
    g.row(static_cast<Eigen::Index>(position_)) =
        model_.logit_gradient(inputs.row(static_cast<Eigen::Index>(position_)).transpose(),
                              target_index)
            .transpose();
    return g;
}

std::size_t TokenPositionScorer::predict(const Eigen::MatrixXd& inputs) const {
    return model_.predict(inputs.row(static_cast<Eigen::Index>(position_)).transpose());
}

namespace {

struct AdamState {
    Eigen::MatrixXd m, v;
    explicit AdamState(const Eigen::MatrixXd& like)
        : m(Eigen::MatrixXd::Zero(like.rows(), like.cols())),
          v(Eigen::MatrixXd::Zero(like.rows(), like.cols())) {}

    void step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, double lr, std::size_t t) {
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

Eigen::MatrixXd xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
    }
    return m;
}

}  // namespace

TrainedScorer train_reference_scorer(const Eigen::MatrixXd& features,
                                     const std::vector<std::size_t>& labels,
                                     std::vector<std::string> class_labels,
                                     const ScorerTrainingOptions& options) {
    const auto n = static_cast<std::size_t>(features.rows());
    if (n == 0) throw ValidationError("cannot train a scorer on an empty training set");
    if (labels.size() != n) throw ValidationError("label count does not match feature rows");
    const std::size_t classes = class_labels.size();
    if (classes < 2) throw ValidationError("scorer training needs at least 2 classes");
    for (std::size_t y : labels) {
        if (y >= classes) throw ValidationError("label " + std::to_string(y) + " out of range");
    }
    if (std::set<std::size_t>(labels.begin(), labels.end()).size() < 2) {
        throw ValidationError("scorer training data contains a single class");
    }
    if (options.hidden == 0 || options.batch_size == 0) {
        throw ValidationError("hidden size and batch size must be positive");
    }

    const auto dim = static_cast<std::size_t>(features.cols());
    std::mt19937_64 rng(options.seed);
    Eigen::MatrixXd w1 = xavier(options.hidden, dim, rng);
    Eigen::MatrixXd b1 = Eigen::MatrixXd::Zero(options.hidden, 1);
    Eigen::MatrixXd w2 = xavier(classes, options.hidden, rng);
    Eigen::MatrixXd b2 = Eigen::MatrixXd::Zero(classes, 1);
    AdamState s_w1(w1), s_b1(b1), s_w2(w2), s_b2(b2);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t end = std::min(n, start + options.batch_size);
            const auto b = static_cast<Eigen::Index>(end - start);
            Eigen::MatrixXd x(b, features.cols());
            Eigen::MatrixXd target = Eigen::MatrixXd::Zero(b, static_cast<Eigen::Index>(classes));
            for (Eigen::Index i = 0; i < b; ++i) {
                const std::size_t row = order[start + static_cast<std::size_t>(i)];
                x.row(i) = features.row(static_cast<Eigen::Index>(row));
                target(i, static_cast<Eigen::Index>(labels[row])) = 1.0;
            }
            const Eigen::MatrixXd h =
                ((x * w1.transpose()).rowwise() + b1.col(0).transpose()).array().tanh().matrix();
            Eigen::MatrixXd z = (h * w2.transpose()).rowwise() + b2.col(0).transpose();
            z = z.colwise() - z.rowwise().maxCoeff();
            Eigen::MatrixXd p = z.array().exp().matrix();
            p = p.array().colwise() / p.rowwise().sum().array();

            const Eigen::MatrixXd dz = (p - target) / static_cast<double>(b);
            const Eigen::MatrixXd g_w2 = dz.transpose() * h;
            const Eigen::MatrixXd g_b2 = dz.colwise().sum().transpose();
            const Eigen::MatrixXd dh =
                ((dz * w2).array() * (1.0 - h.array().square())).matrix();
            const Eigen::MatrixXd g_w1 = dh.transpose() * x;
            const Eigen::MatrixXd g_b1 = dh.colwise().sum().transpose();

            ++t;
            s_w1.step(w1, g_w1, options.learning_rate, t);
            s_b1.step(b1, g_b1, options.learning_rate, t);
            s_w2.step(w2, g_w2, options.learning_rate, t);
            s_b2.step(b2, g_b2, options.learning_rate, t);
        }
    }

    TrainedScorer result{ReferenceScorer(w1.cast<float>(), b1.col(0).cast<float>(), w2.cast<float>(),
                                         b2.col(0).cast<float>(), std::move(class_labels)),
                         0.0};
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (result.scorer.predict(features.row(static_cast<Eigen::Index>(i)).transpose()) ==
            labels[i]) {
            ++correct;
        }
    }
    result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return result;
}

void save_scorer(const std::filesystem::path& path, const ScorerFile& file) {
    const auto& s = file.scorer;
    io::ModelFile model;
    model.header = {{"kind", "reference_scorer"},
                    {"version", 1},
                    {"task", to_string(file.task)},
                    {"layer", file.layer},
                    {"input_dim", s.input_dim()},
                    {"hidden", s.hidden()},
                    {"num_classes", s.num_classes()},
                    {"class_labels", s.class_labels()},
                    {"activation", "tanh"}};
    auto append = [&](const auto& m) {
        // Row-major order regardless of Eigen's storage order.
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) model.payload.push_back(m(i, j));
        }
    };
    append(s.w1());
    append(s.b1());
    append(s.w2());
    append(s.b2());
    io::save_model_file(path, model);
}

ScorerFile load_scorer(const std::filesystem::path& path) {
    const auto model = io::load_model_file(path);
    const auto& h = model.header;
    ScorerFile file;
    std::size_t in = 0, hidden = 0, classes = 0;
    std::vector<std::string> labels;
    try {
        if (h.at("kind").get<std::string>() != "reference_scorer") {
            throw LoadError(path.string() + ": not a reference scorer");
        }
        file.task = task_kind_from_string(h.at("task").get<std::string>());
        file.layer = h.at("layer").get<std::size_t>();
        in = h.at("input_dim").get<std::size_t>();
        hidden = h.at("hidden").get<std::size_t>();
        classes = h.at("num_classes").get<std::size_t>();
        labels = h.at("class_labels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    const std::size_t expected = hidden * in + hidden + classes * hidden + classes;
    if (model.payload.size() != expected) {
        throw LoadError(path.string() + ": payload has " + std::to_string(model.payload.size()) +
                        " floats, expected " + std::to_string(expected));
    }
    std::size_t at = 0;
    auto take = [&](std::size_t rows, std::size_t cols) {
        Eigen::MatrixXf m(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) m(i, j) = model.payload[at++];
        }
        return m;
    };
    Eigen::MatrixXf w1 = take(hidden, in);
    Eigen::VectorXf b1 = take(hidden, 1).col(0);
    Eigen::MatrixXf w2 = take(classes, hidden);
    Eigen::VectorXf b2 = take(classes, 1).col(0);
    try {
        file.scorer = ReferenceScorer(std::move(w1), std::move(b1), std::move(w2), std::move(b2),
                                      std::move(labels));
    } catch (const ValidationError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    return file;
}

}  // namespace lacoat
