#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace lacoat {

/// Returns f(x) and writes the gradient into the second argument.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct LbfgsOptions {
    std::size_t max_iter = 100;
    double tol = 1e-5;  ///< stop once max |gradient| <= tol
    std::size_t memory = 10;
    std::size_t max_backtracks = 50;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> value_history;  ///< f at the start point and after each accepted step
};

/// Limited-memory BFGS with an Armijo backtracking line search. Pairs that violate the
/// curvature condition are skipped rather than stored.
LbfgsResult minimize_lbfgs(const Objective& objective, Eigen::VectorXd x0,
                           const LbfgsOptions& options);

}  // namespace lacoat
