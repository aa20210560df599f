#include <doctest.h>

#include <cmath>
#include <random>

#include "lacoat/concept_mapper.hpp"
#include "lacoat/errors.hpp"
#include "lacoat/lbfgs.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

using namespace lacoat;

namespace {

struct Blobs {
    Eigen::MatrixXd x;
    std::vector<std::size_t> y;
    std::vector<Eigen::VectorXd> centers;
};

Blobs blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Blobs b;
    b.x = oracle::gaussian_matrix(classes * per_class, dim, rng);
    const Eigen::MatrixXd centers = oracle::gaussian_matrix(classes, dim, rng, spread);
    for (std::size_t c = 0; c < classes; ++c) b.centers.push_back(centers.row(static_cast<Eigen::Index>(c)).transpose());
    for (std::size_t i = 0; i < classes * per_class; ++i) {
        const std::size_t c = i % classes;
        b.y.push_back(c);
        b.x.row(static_cast<Eigen::Index>(i)) += b.centers[c].transpose();
    }
    return b;
}

Blobs two_points_classes() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.5);
    Blobs b;
    b.x.resize(40, 2);
    for (std::size_t i = 0; i < 40; ++i) {
        const std::size_t c = i < 20 ? 0 : 1;
        b.x(static_cast<Eigen::Index>(i), 0) = (c == 0 ? -10.0 : 10.0) + noise(rng);
        b.x(static_cast<Eigen::Index>(i), 1) = noise(rng);
        b.y.push_back(c);
    }
    return b;
}

double accuracy(const MapperModel& m, const Eigen::MatrixXd& x, const std::vector<std::size_t>& y) {
    return evaluate_topk(m, x, y, {1})[0];
}

}  // namespace

TEST_CASE("separable points at (-10, 0) and (10, 0)") {
    const auto b = two_points_classes();
    // Hand-fit threshold: the sign of the first coordinate separates the classes.
    for (std::size_t i = 0; i < 40; ++i) CHECK((b.x(static_cast<Eigen::Index>(i), 0) > 0) == (b.y[i] == 1));

    const auto t = train_mapper(b.x, b.y, 2, {});
    CHECK(accuracy(t.model, b.x, b.y) == 1.0);
    CHECK(t.model.l2_strength == doctest::Approx(1.0 / 40));
}

TEST_CASE("huge l2 pushes predictions to the prior") {
    const auto b = two_points_classes();
    MapperOptions opts;
    opts.l2 = 1e6;
    const auto t = train_mapper(b.x, b.y, 2, opts);
    for (std::size_t i = 0; i < 40; ++i) {
        CHECK(predict_proba(t.model, b.x.row(static_cast<Eigen::Index>(i)).transpose()).maxCoeff() <= 0.51);
    }
}

TEST_CASE("max_iter = 0 returns the zero model") {
    const auto b = blobs(4, 10, 3, 5.0, 1);
    MapperOptions opts;
    opts.max_iter = 0;
    const auto t = train_mapper(b.x, b.y, 4, opts);
    CHECK(t.model.weights.isZero(0.0));
    CHECK(t.model.biases.isZero(0.0));
    const auto top = predict_topk(t.model, b.x.row(0).transpose(), 4);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(top[c].first == c);
        CHECK(top[c].second == doctest::Approx(0.25).epsilon(1e-15));
    }
}

TEST_CASE("every concept needs an example") {
    const auto b = blobs(3, 5, 2, 5.0, 2);
    try {
        (void)train_mapper(b.x, b.y, 5, {});
        FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find('3') != std::string::npos);
        CHECK(msg.find('4') != std::string::npos);
    }
    CHECK_THROWS_AS(train_mapper(b.x, std::vector<std::size_t>(3, 0), 3, {}), ValidationError);
}

TEST_CASE("loss history never increases") {
    const auto b = blobs(6, 30, 5, 1.5, 4);
    MapperOptions opts;
    opts.tol = 1e-10;
    const auto t = train_mapper(b.x, b.y, 6, opts);
    REQUIRE(t.loss_history.size() >= 2);
    for (std::size_t i = 1; i < t.loss_history.size(); ++i) CHECK(t.loss_history[i] <= t.loss_history[i - 1]);
}

TEST_CASE("objective gradient matches central differences") {
    const auto b = blobs(4, 12, 3, 2.0, 6);
    std::mt19937_64 rng(7);
    const std::size_t n_params = 4 * 3 + 4;
    for (double l2 : {0.0, 0.1, 3.0}) {
        for (int probe = 0; probe < 5; ++probe) {
            const Eigen::VectorXd p = oracle::gaussian_matrix(n_params, 1, rng).col(0);
            Eigen::VectorXd g;
            (void)mapper_objective(p, b.x, b.y, 4, l2, &g);
            const Eigen::VectorXd fd = oracle::finite_difference(
                [&](const Eigen::VectorXd& q) { return mapper_objective(q, b.x, b.y, 4, l2, nullptr); }, p);
            CHECK((g - fd).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("objective at zero is log K") {
    const auto b = blobs(5, 4, 2, 2.0, 8);
    CHECK(mapper_objective(Eigen::VectorXd::Zero(15), b.x, b.y, 5, 1.0, nullptr) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("training is reproducible") {
    const auto b = blobs(5, 20, 4, 3.0, 9);
    const auto a = train_mapper(b.x, b.y, 5, {});
    const auto c = train_mapper(b.x, b.y, 5, {});
    CHECK((a.model.weights - c.model.weights).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((a.model.biases - c.model.biases).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("predict_topk") {
    const auto b = blobs(5, 40, 4, 8.0, 10);
    const auto t = train_mapper(b.x, b.y, 5, {});

    SUBCASE("full ranking is a distribution") {
        for (Eigen::Index i = 0; i < 20; ++i) {
            const auto top = predict_topk(t.model, b.x.row(i).transpose(), 5);
            double sum = 0.0;
            for (std::size_t k = 0; k < top.size(); ++k) {
                sum += top[k].second;
                if (k > 0) CHECK(top[k].second <= top[k - 1].second);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
    SUBCASE("agrees with nearest centroid on held-out points") {
        std::mt19937_64 rng(11);
        for (int i = 0; i < 100; ++i) {
            const std::size_t c = static_cast<std::size_t>(i) % 5;
            const Eigen::VectorXd p = b.centers[c] + 0.3 * oracle::gaussian_matrix(4, 1, rng).col(0);
            CHECK(predict_topk(t.model, p, 1)[0].first == oracle::nearest_centroid(b.centers, p));
        }
    }
    SUBCASE("bias shift leaves the ranking unchanged") {
        auto shifted = t.model;
        shifted.biases.array() += 7.5f;
        for (Eigen::Index i = 0; i < 20; ++i) {
            const auto a = predict_topk(t.model, b.x.row(i).transpose(), 5);
            const auto s = predict_topk(shifted, b.x.row(i).transpose(), 5);
            for (std::size_t k = 0; k < 5; ++k) CHECK(a[k].first == s[k].first);
        }
    }
    SUBCASE("argument errors") {
        CHECK_THROWS_AS(predict_topk(t.model, Eigen::VectorXd::Zero(3), 1), ValidationError);
        CHECK_THROWS_AS(predict_topk(t.model, b.x.row(0).transpose(), 0), ValidationError);
        CHECK_THROWS_AS(predict_topk(t.model, b.x.row(0).transpose(), 6), ValidationError);
    }
    SUBCASE("top-k accuracy is monotone in k") {
        const auto noisy = blobs(5, 40, 4, 1.0, 12);
        const auto acc = evaluate_topk(t.model, noisy.x, noisy.y, {1, 2, 3, 5});
        for (std::size_t k = 1; k < acc.size(); ++k) CHECK(acc[k] >= acc[k - 1]);
        CHECK(acc.back() == 1.0);
    }
}

TEST_CASE("mapper files round-trip") {
    testing_support::ScratchDir dir("mapper");
    const auto b = blobs(3, 10, 2, 4.0, 13);
    MapperOptions opts;
    opts.layer = 4;
    const auto m = train_mapper(b.x, b.y, 3, opts).model;
    save_mapper(dir / "m.bin", m);
    const auto back = load_mapper(dir / "m.bin");
    CHECK(back.weights == m.weights);
    CHECK(back.biases == m.biases);
    CHECK(back.layer == 4);
    CHECK(back.l2_strength == m.l2_strength);
    CHECK_THROWS_AS(load_mapper(dir / "missing.bin"), LoadError);
}

TEST_CASE("L-BFGS minimises the Rosenbrock function") {
    const Objective rosen = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const double a = 1 - x(0), b = x(1) - x(0) * x(0);
        g.resize(2);
        g(0) = -2 * a - 400 * x(0) * b;
        g(1) = 200 * b;
        return a * a + 100 * b * b;
    };
    LbfgsOptions opts;
    opts.max_iter = 500;
    opts.tol = 1e-8;
    const auto r = minimize_lbfgs(rosen, Eigen::Vector2d(-1.2, 1.0), opts);
    CHECK(r.converged);
    CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-6));
    for (std::size_t i = 1; i < r.value_history.size(); ++i) CHECK(r.value_history[i] <= r.value_history[i - 1]);
}
