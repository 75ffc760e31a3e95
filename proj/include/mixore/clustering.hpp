#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "mixore/common.hpp"

namespace mixore {

struct KMeansResult {
    Matrix centroids;                      // k x d
    std::vector<std::size_t> assignments;  // per point
    double inertia = 0.0;
    std::vector<double> inertia_trace;     // after every assignment step
    int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations. Points are rows.
/// Ties in nearest-centroid assignment go to the lowest centroid index; empty
/// clusters are re-seeded with the point farthest from its centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, int max_iter = 300);

/// Sum of squared distances to the assigned centroids.
double kmeans_inertia(const Matrix& points, const Matrix& centroids,
                      const std::vector<std::size_t>& assignments);

struct GmmOptions {
    int max_iter = 100;
    double tol = 1e-4;
    double reg = 1e-6;
};

/// Full-covariance Gaussian mixture.
struct GmmModel {
    std::size_t k = 0;
    Vector weights;                    // k
    Matrix means;                      // k x d
    std::vector<Matrix> covariances;   // k of d x d
    /// Mean per-point log-likelihood after each E-step.
    std::vector<double> log_likelihood_trace;
    int iterations = 0;
    bool converged = false;
    std::vector<std::string> warnings;

    std::size_t dim() const { return static_cast<std::size_t>(means.cols()); }
};

/// EM from a k-means++/Lloyd hard assignment. Each M-step adds reg * I to the
/// covariances. Components whose responsibility mass vanishes are reported in
/// `warnings` and held at the regularisation floor.
GmmModel fit_gmm(const Matrix& points, std::size_t k, std::uint64_t seed,
                 const GmmOptions& options = {});

/// n x k matrix of log(pi_i N(x | mu_i, Sigma_i)).
Matrix gmm_log_joint(const GmmModel& model, const Matrix& points);

/// n x k posterior responsibilities, rows summing to one.
Matrix gmm_posteriors(const GmmModel& model, const Matrix& points);

/// Mean per-point log-likelihood of the mixture.
double gmm_mean_log_likelihood(const GmmModel& model, const Matrix& points);

nlohmann::json to_json(const GmmModel& model);
nlohmann::json to_json(const KMeansResult& result);

}  // namespace mixore
