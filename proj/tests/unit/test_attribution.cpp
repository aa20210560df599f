#include <doctest.h>

#include <cmath>
#include <random>

#include "lacoat/attribution.hpp"
#include "lacoat/reference_scorer.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace lacoat;

namespace {

// f(X) = sum over tokens of w . x_t
class LinearScorer final : public DifferentiableScorer {
public:
    explicit LinearScorer(Eigen::VectorXd w) : w_(std::move(w)) {}
    std::size_t num_outputs() const override { return 1; }
    double forward(const Eigen::MatrixXd& x, std::size_t) const override { return (x * w_).sum(); }
    Eigen::MatrixXd gradient(const Eigen::MatrixXd& x, std::size_t) const override {
        return w_.transpose().replicate(x.rows(), 1);
    }

private:
    Eigen::VectorXd w_;
};

ReferenceScorer random_scorer(std::size_t dim, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double s1 = std::sqrt(2.0 / static_cast<double>(dim + hidden));
    const double s2 = std::sqrt(2.0 / static_cast<double>(hidden + classes));
    std::vector<std::string> labels;
    for (std::size_t c = 0; c < classes; ++c) labels.push_back("C" + std::to_string(c));
    return ReferenceScorer(oracle::gaussian_matrix(hidden, dim, rng, s1).cast<float>(),
                           oracle::gaussian_matrix(hidden, 1, rng, 0.1).col(0).cast<float>(),
                           oracle::gaussian_matrix(classes, hidden, rng, s2).cast<float>(),
                           oracle::gaussian_matrix(classes, 1, rng, 0.1).col(0).cast<float>(), labels);
}

double completeness_gap(const DifferentiableScorer& f, const Eigen::MatrixXd& x, std::size_t target,
                        std::size_t steps) {
    const auto a = integrated_gradients(f, x, target, steps);
    const double delta = f.forward(x, target) - f.forward(Eigen::MatrixXd::Zero(x.rows(), x.cols()), target);
    return std::abs(oracle::kahan_sum(a.per_token) - delta);
}

double max_rel_error(const Eigen::MatrixXd& analytic, const Eigen::VectorXd& numeric) {
    const Eigen::Map<const Eigen::VectorXd> flat(analytic.data(), analytic.size());
    return (flat - numeric).cwiseAbs().maxCoeff() / std::max(1.0, numeric.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("integrated gradients on a linear scorer is exact") {
    const LinearScorer f(Eigen::Vector2d(1, 2));
    Eigen::MatrixXd x(1, 2);
    x << 3, 4;
    const auto a = integrated_gradients(f, x, 0, 500);
    REQUIRE(a.per_token.size() == 1);
    CHECK(a.per_token[0] == doctest::Approx(11.0).epsilon(1e-12));
    CHECK(a.per_dim(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(a.per_dim(0, 1) == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(a.steps_used == 500);

    std::mt19937_64 rng(1);
    const Eigen::MatrixXd w = oracle::gaussian_matrix(6, 1, rng);
    const LinearScorer g(w.col(0));
    const Eigen::MatrixXd xs = oracle::gaussian_matrix(4, 6, rng, 3.0);
    const auto b = integrated_gradients(g, xs, 0, 7);
    for (Eigen::Index t = 0; t < xs.rows(); ++t) {
        CHECK(b.per_token[static_cast<std::size_t>(t)] == doctest::Approx(xs.row(t).dot(w.col(0))).epsilon(1e-12));
    }
}

TEST_CASE("inputs equal to the baseline attribute nothing") {
    const auto model = random_scorer(5, 8, 3, 2);
    const PooledSequenceScorer f(model);
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd x = oracle::gaussian_matrix(3, 5, rng);
    const auto a = integrated_gradients(f, x, 1, 50, x);
    for (double v : a.per_token) CHECK(v == 0.0);
    CHECK(a.per_dim.isZero(0.0));
}

TEST_CASE("integrated gradients argument checks") {
    const LinearScorer f(Eigen::Vector2d(1, 2));
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 2);
    CHECK_THROWS_AS(integrated_gradients(f, x, 0, 0), ValidationError);
    CHECK_THROWS_AS(integrated_gradients(f, x, 1, 10), ValidationError);
    CHECK_THROWS_AS(integrated_gradients(f, Eigen::MatrixXd(0, 2), 0, 10), ValidationError);
    CHECK_THROWS_AS(integrated_gradients(f, x, 0, 10, Eigen::MatrixXd::Zero(1, 2)), ValidationError);
}

TEST_CASE("reference scorer gradients match central differences") {
    const auto model = random_scorer(6, 16, 3, 11);
    std::mt19937_64 rng(12);
    for (int probe = 0; probe < 20; ++probe) {
        const Eigen::MatrixXd x = oracle::gaussian_matrix(3, 6, rng, 2.0);
        const std::size_t target = static_cast<std::size_t>(probe % 3);
        const PooledSequenceScorer pooled(model);
        const TokenPositionScorer token(model, 1);
        for (const DifferentiableScorer* f : {static_cast<const DifferentiableScorer*>(&pooled),
                                              static_cast<const DifferentiableScorer*>(&token)}) {
            auto as_fn = [&](const Eigen::VectorXd& flat) {
                return f->forward(Eigen::Map<const Eigen::MatrixXd>(flat.data(), x.rows(), x.cols()), target);
            };
            const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
            CHECK(max_rel_error(f->gradient(x, target), oracle::finite_difference(as_fn, flat)) <= 1e-4);
        }
    }
}

TEST_CASE("completeness on the reference scorer") {
    const auto model = random_scorer(8, 32, 2, 21);
    std::mt19937_64 rng(22);
    for (int probe = 0; probe < 25; ++probe) {
        const Eigen::MatrixXd x = oracle::gaussian_matrix(3, 8, rng, 2.0);
        const PooledSequenceScorer f(model);
        const double delta = f.forward(x, 0) - f.forward(Eigen::MatrixXd::Zero(3, 8), 0);
        CHECK(completeness_gap(f, x, 0, 500) <= 1e-3 * std::max(1.0, std::abs(delta)));

        // The 50,000-step midpoint rule is an independent estimate of the same path integral.
        const auto reference = oracle::midpoint_path_integral(
            [&](const Eigen::MatrixXd& p) { return f.gradient(p, 0); }, x, Eigen::MatrixXd::Zero(3, 8), 50000);
        CHECK(std::abs(oracle::kahan_sum(reference) - delta) <= 1e-8 * std::max(1.0, std::abs(delta)));
        const auto a = integrated_gradients(f, x, 0, 500);
        for (std::size_t t = 0; t < 3; ++t) {
            CHECK(std::abs(a.per_token[t] - reference[t]) <= 1e-3 * std::max(1.0, std::abs(delta)));
        }
    }
}

TEST_CASE("doubling the step count refines the attribution") {
    const auto model = random_scorer(8, 32, 2, 31);
    const PooledSequenceScorer f(model);
    std::mt19937_64 rng(32);
    int improved = 0;
    double sum_coarse = 0.0, sum_fine = 0.0;
    for (int probe = 0; probe < 100; ++probe) {
        const Eigen::MatrixXd x = oracle::gaussian_matrix(3, 8, rng, 2.0);
        const double coarse = completeness_gap(f, x, 1, 100);
        const double fine = completeness_gap(f, x, 1, 200);
        improved += (fine <= coarse + 1e-12);
        sum_coarse += coarse;
        sum_fine += fine;
    }
    CHECK(improved >= 95);
    CHECK(sum_fine < 0.6 * sum_coarse);
}

TEST_CASE("select_salient_top_p examples") {
    auto pick = [](std::vector<double> v, double mass = 0.5) { return select_salient_top_p(v, mass); };
    CHECK(pick({0.6, 0.3, 0.1}).indices == std::vector<std::size_t>{0});
    CHECK(pick({0.25, 0.25, 0.25, 0.25}).indices == std::vector<std::size_t>{0, 1});
    CHECK(pick({0.4, -0.4, 0.2}).indices == std::vector<std::size_t>{0, 1});
    CHECK(pick({0.1, -0.7, 0.2}).indices == std::vector<std::size_t>{1});

    const auto zeros = pick({0.0, 0.0, 0.0});
    CHECK(zeros.indices == std::vector<std::size_t>{0});
    CHECK(zeros.degenerate);
    CHECK_FALSE(pick({0.6, 0.3, 0.1}).degenerate);

    CHECK(pick({0.5, 0.0, -0.2, 0.3, 0.0}, 1.0).indices == std::vector<std::size_t>{0, 3, 2});

    CHECK_THROWS_AS(pick({}), ValidationError);
    CHECK_THROWS_AS(pick({1.0}, 0.0), ValidationError);
    CHECK_THROWS_AS(pick({1.0}, 1.5), ValidationError);
}

TEST_CASE("select_salient_top_p is the minimal magnitude-ordered prefix") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> len(1, 12);
    std::uniform_int_distribution<int> coarse(-4, 4);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> mass_dist(0.05, 1.0);
    for (int trial = 0; trial < 400; ++trial) {
        const std::size_t n = static_cast<std::size_t>(len(rng));
        std::vector<double> a(n);
        // Half the trials use small integers so ties and exact-threshold cases are common.
        for (auto& v : a) v = (trial % 2) ? normal(rng) : static_cast<double>(coarse(rng)) / 4.0;
        const double mass = (trial % 3 == 0) ? 0.5 : mass_dist(rng);
        const auto sel = select_salient_top_p(a, mass);
        CAPTURE(trial);

        double total = 0.0;
        for (double v : a) total += std::abs(v);
        if (total == 0.0) {
            CHECK(sel.degenerate);
            continue;
        }
        CHECK(sel.indices.size() == oracle::min_subset_size(a, mass));
        // Prefix of the ranking: every chosen magnitude dominates every unchosen one, ties
        // resolved toward the lower index.
        std::vector<bool> chosen(n, false);
        for (std::size_t i : sel.indices) chosen[i] = true;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (chosen[i] && !chosen[j]) {
                    CHECK(std::abs(a[i]) >= std::abs(a[j]));
                    if (std::abs(a[i]) == std::abs(a[j])) CHECK(i < j);
                }
            }
        }
        for (std::size_t k = 1; k < sel.indices.size(); ++k) {
            CHECK(std::abs(a[sel.indices[k - 1]]) >= std::abs(a[sel.indices[k]]));
        }
    }
}

TEST_CASE("position_salient") {
    auto tok = [](std::uint32_t pos, bool is_cls) {
        TokenRecord r;
        r.token_text = is_cls ? "[CLS]" : "w";
        r.position = pos;
        r.is_classifier_token = is_cls;
        return r;
    };
    std::vector<TokenRecord> with_cls{tok(0, true), tok(1, false), tok(2, false), tok(3, false),
                                      tok(4, false), tok(5, false)};
    CHECK(position_salient(TaskKind::sequence_classification, with_cls, 4) == 0);
    CHECK(position_salient(TaskKind::sequence_labeling, with_cls, 2) == 2);
    CHECK(position_salient(TaskKind::masked_prediction, with_cls, 5) == 5);

    std::vector<TokenRecord> without_cls{tok(1, false), tok(2, false)};
    CHECK_THROWS_AS(position_salient(TaskKind::sequence_classification, without_cls, 0), ValidationError);
    CHECK_THROWS_AS(position_salient(TaskKind::sequence_labeling, without_cls, 2), ValidationError);
}

TEST_CASE("train_reference_scorer") {
    std::mt19937_64 rng(5);
    const std::size_t n = 400;
    Eigen::MatrixXd x = oracle::gaussian_matrix(n, 4, rng);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;
        x(static_cast<Eigen::Index>(i), 0) += y[i] ? 4.0 : -4.0;
    }
    ScorerTrainingOptions opts;
    opts.seed = 9;

    SUBCASE("separable data") {
        const auto t = train_reference_scorer(x, y, {"Negative", "Positive"}, opts);
        CHECK(t.train_accuracy >= 0.99);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            correct += t.scorer.predict(x.row(static_cast<Eigen::Index>(i)).transpose()) == y[i];
        }
        CHECK(static_cast<double>(correct) / n == doctest::Approx(t.train_accuracy));
    }
    SUBCASE("deterministic under the seed") {
        const auto a = train_reference_scorer(x, y, {"Negative", "Positive"}, opts);
        const auto b = train_reference_scorer(x, y, {"Negative", "Positive"}, opts);
        CHECK(a.scorer == b.scorer);
        opts.seed = 10;
        const auto c = train_reference_scorer(x, y, {"Negative", "Positive"}, opts);
        CHECK_FALSE(a.scorer == c.scorer);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(train_reference_scorer(Eigen::MatrixXd(0, 4), {}, {"a", "b"}, opts), ValidationError);
        const std::vector<std::size_t> one_class(n, 1);
        CHECK_THROWS_AS(train_reference_scorer(x, one_class, {"a", "b"}, opts), ValidationError);
        CHECK_THROWS_AS(train_reference_scorer(x, y, {"only"}, opts), ValidationError);
    }
}

TEST_CASE("scorer files round-trip") {
    testing_support::ScratchDir dir("scorer");
    ScorerFile file{random_scorer(5, 7, 3, 8), TaskKind::sequence_labeling, 2};
    save_scorer(dir / "s.bin", file);
    const auto back = load_scorer(dir / "s.bin");
    CHECK(back.scorer == file.scorer);
    CHECK(back.task == TaskKind::sequence_labeling);
    CHECK(back.layer == 2);
    CHECK(back.scorer.class_labels() == file.scorer.class_labels());

    std::filesystem::resize_file(dir / "s.bin", std::filesystem::file_size(dir / "s.bin") - 4);
    CHECK_THROWS_AS(load_scorer(dir / "s.bin"), LoadError);
}

TEST_CASE("task names") {
    for (auto k : {TaskKind::sequence_classification, TaskKind::masked_prediction, TaskKind::sequence_labeling}) {
        CHECK(task_kind_from_string(to_string(k)) == k);
    }
    CHECK(task_kind_from_string("labeling") == TaskKind::sequence_labeling);
    CHECK_THROWS_AS(task_kind_from_string("regression"), ValidationError);
}
