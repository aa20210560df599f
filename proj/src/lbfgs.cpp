#include "lacoat/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace lacoat {

LbfgsResult minimize_lbfgs(const Objective& objective, Eigen::VectorXd x0,
                           const LbfgsOptions& options) {
    constexpr double armijo = 1e-4;
    LbfgsResult result;
    result.x = std::move(x0);
    Eigen::VectorXd grad(result.x.size());
    result.value = objective(result.x, grad);
    result.value_history.push_back(result.value);

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    while (true) {
        if (grad.size() == 0 || grad.lpNorm<Eigen::Infinity>() <= options.tol) {
            result.converged = true;
            break;
        }
        if (result.iterations >= options.max_iter) break;

        // Two-loop recursion.
        Eigen::VectorXd q = grad;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        } else {
            q /= std::max(1.0, grad.norm());
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd direction = -q;
        double slope = grad.dot(direction);
        if (!(slope < 0.0)) {
            // Not a descent direction; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            direction = -grad / std::max(1.0, grad.norm());
            slope = grad.dot(direction);
        }

        double step = 1.0;
        Eigen::VectorXd x_next;
        Eigen::VectorXd grad_next(grad.size());
        double value_next = 0.0;
        bool accepted = false;
        for (std::size_t bt = 0; bt <= options.max_backtracks; ++bt) {
            x_next = result.x + step * direction;
            value_next = objective(x_next, grad_next);
            if (std::isfinite(value_next) && value_next <= result.value + armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        Eigen::VectorXd s = x_next - result.x;
        Eigen::VectorXd y = grad_next - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > options.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        result.x = std::move(x_next);
        grad = grad_next;
        result.value = value_next;
        result.value_history.push_back(value_next);
        ++result.iterations;
    }
    return result;
}

}  // namespace lacoat
