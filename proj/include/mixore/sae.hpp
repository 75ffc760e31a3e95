#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mixore/common.hpp"

namespace mixore {

/// Tied-weight linear autoencoder whose latent axes are the known relations.
/// `matrix` is K_known x d; encoding is W x, decoding is W^T s.
struct ProjectionW {
    Matrix matrix;
    double lambda = 100.0;
    std::vector<std::string> class_order;
    bool fitted = false;
    /// ||A W + W B - C||_F / ||C||_F of the stationarity system at fit time.
    double residual = 0.0;
    /// Number of per-class systems that needed diagonal jitter.
    int jittered = 0;

    std::size_t known_count() const { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

/// Closed-form minimiser of ||X - W^T S||_F^2 + lambda ||W X - S||_F^2.
///
/// `features` is d x M (instances as columns), `labels[m]` the known-relation
/// index of column m. Because S is one-hot, S S^T is diagonal with the class
/// counts n_c, so the Sylvester stationarity condition
///
///     S S^T W + W (lambda X X^T) = (1 + lambda) S X^T
///
/// splits into one symmetric system per class:
///     (n_c I + lambda X X^T) w_c^T = (1 + lambda) sum_{m: y_m = c} x_m.
/// Each is solved by Cholesky, with a trace-scaled jitter on failure.
ProjectionW fit_sae(const Matrix& features, std::span<const std::size_t> labels,
                    std::vector<std::string> class_order, double lambda);

/// One-hot latent targets (K x M) for the given labels.
Matrix one_hot_targets(std::span<const std::size_t> labels, std::size_t classes);

/// Objective value of the autoencoder for any W (used to check optimality).
double sae_objective(const Matrix& w, const Matrix& features, const Matrix& targets,
                     double lambda);

/// Relative residual of the stationarity equation for any W.
double sylvester_residual(const Matrix& w, const Matrix& features, const Matrix& targets,
                          double lambda);

/// S = W X for X of shape d x N.
Matrix encode(const ProjectionW& w, const Matrix& features);

/// X_hat = W^T S for S of shape K x N.
Matrix decode(const ProjectionW& w, const Matrix& latent);

nlohmann::json to_json(const ProjectionW& w);
ProjectionW projection_from_json(const nlohmann::json& j);

}  // namespace mixore
