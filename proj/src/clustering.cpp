#include "mixore/clustering.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace mixore {

namespace {

const char* kModule = "clustering";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

using Index = Eigen::Index;

std::vector<std::size_t> nearest(const Matrix& points, const Matrix& centroids,
                                 std::vector<double>& dist2) {
    const Index n = points.rows();
    std::vector<std::size_t> out(static_cast<std::size_t>(n));
    dist2.assign(static_cast<std::size_t>(n), 0.0);
    for (Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (Index c = 0; c < centroids.rows(); ++c) {
            const double d2 = (points.row(i) - centroids.row(c)).squaredNorm();
            if (d2 < best) {
                best = d2;
                arg = static_cast<std::size_t>(c);
            }
        }
        out[static_cast<std::size_t>(i)] = arg;
        dist2[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

Matrix plus_plus_seeds(const Matrix& points, std::size_t k, Rng& rng) {
    const Index n = points.rows();
    Matrix centroids(static_cast<Index>(k), points.cols());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    std::size_t first = uniform_index(rng, static_cast<std::size_t>(n));
    centroids.row(0) = points.row(static_cast<Index>(first));
    chosen[first] = 1;

    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        d2[static_cast<std::size_t>(i)] = (points.row(i) - centroids.row(0)).squaredNorm();
    }
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = uniform_unit(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < d2.size(); ++i) {
                if (d2[i] > 0.0) pick = i;
            }
            for (std::size_t i = 0; i < d2.size(); ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            while (pick < chosen.size() && chosen[pick]) ++pick;
        }
        chosen[pick] = 1;
        centroids.row(static_cast<Index>(c)) = points.row(static_cast<Index>(pick));
        for (Index i = 0; i < n; ++i) {
            const double v = (points.row(i) - centroids.row(static_cast<Index>(c))).squaredNorm();
            auto& cur = d2[static_cast<std::size_t>(i)];
            if (v < cur) cur = v;
        }
    }
    return centroids;
}

}  // namespace

double kmeans_inertia(const Matrix& points, const Matrix& centroids,
                      const std::vector<std::size_t>& assignments) {
    double total = 0.0;
    for (Index i = 0; i < points.rows(); ++i) {
        total += (points.row(i) -
                  centroids.row(static_cast<Index>(assignments[static_cast<std::size_t>(i)])))
                     .squaredNorm();
    }
    return total;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, int max_iter) {
    const Index n = points.rows();
    if (n < 1) fail("kmeans needs at least one point");
    if (k < 1) fail("kmeans needs k >= 1");
    if (static_cast<Index>(k) > n) {
        fail("kmeans: k = " + std::to_string(k) + " exceeds point count " + std::to_string(n));
    }
    if (!points.allFinite()) fail("kmeans: non-finite input");

    Rng rng = make_rng(seed, 0x4b4d);
    KMeansResult res;
    res.centroids = plus_plus_seeds(points, k, rng);
    std::vector<double> d2;
    res.assignments = nearest(points, res.centroids, d2);
    res.inertia_trace.push_back(kmeans_inertia(points, res.centroids, res.assignments));

    for (int it = 0; it < max_iter; ++it) {
        ++res.iterations;
        Matrix sums = Matrix::Zero(static_cast<Index>(k), points.cols());
        std::vector<std::size_t> sizes(k, 0);
        for (Index i = 0; i < n; ++i) {
            const auto a = res.assignments[static_cast<std::size_t>(i)];
            sums.row(static_cast<Index>(a)) += points.row(i);
            ++sizes[a];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) {
                res.centroids.row(static_cast<Index>(c)) = sums.row(static_cast<Index>(c)) /
                                                           static_cast<double>(sizes[c]);
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            // Re-seed with the farthest point of a cluster that can spare it.
            std::size_t far = 0;
            double best = -1.0;
            for (Index i = 0; i < n; ++i) {
                const auto a = res.assignments[static_cast<std::size_t>(i)];
                if (sizes[a] < 2) continue;
                const double v = (points.row(i) - res.centroids.row(static_cast<Index>(a))).squaredNorm();
                if (v > best) {
                    best = v;
                    far = static_cast<std::size_t>(i);
                }
            }
            --sizes[res.assignments[far]];
            res.assignments[far] = c;
            sizes[c] = 1;
            res.centroids.row(static_cast<Index>(c)) = points.row(static_cast<Index>(far));
        }
        auto next = nearest(points, res.centroids, d2);
        const bool stable = next == res.assignments;
        res.assignments = std::move(next);
        res.inertia_trace.push_back(kmeans_inertia(points, res.centroids, res.assignments));
        if (stable) break;
    }
    // Lloyd leaves centroids at the means of the previous partition; finish on
    // the means of the final one.
    Matrix sums = Matrix::Zero(static_cast<Index>(k), points.cols());
    std::vector<std::size_t> sizes(k, 0);
    for (Index i = 0; i < n; ++i) {
        const auto a = res.assignments[static_cast<std::size_t>(i)];
        sums.row(static_cast<Index>(a)) += points.row(i);
        ++sizes[a];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (sizes[c] > 0) {
            res.centroids.row(static_cast<Index>(c)) =
                sums.row(static_cast<Index>(c)) / static_cast<double>(sizes[c]);
        }
    }
    res.assignments = nearest(points, res.centroids, d2);
    res.inertia = kmeans_inertia(points, res.centroids, res.assignments);
    return res;
}

// ---- Gaussian mixture ------------------------------------------------------

namespace {

void m_step(const Matrix& points, const Matrix& resp, double reg, GmmModel& model,
            bool record_warnings) {
    const Index d = points.cols();
    const Index k = resp.cols();
    const double eps = 10.0 * std::numeric_limits<double>::epsilon();
    Vector nk = resp.colwise().sum().transpose().array() + eps;
    model.weights = nk / nk.sum();
    model.weights /= model.weights.sum();
    for (Index c = 0; c < k; ++c) {
        const bool empty = nk(c) <= 1e3 * eps;
        if (!empty) {
            model.means.row(c) = (resp.col(c).transpose() * points) / nk(c);
        }
        Matrix cov = Matrix::Zero(d, d);
        if (!empty) {
            const Matrix centred = points.rowwise() - model.means.row(c);
            cov = (centred.transpose() * resp.col(c).asDiagonal() * centred) / nk(c);
            cov = (0.5 * (cov + cov.transpose())).eval();
        }
        if (record_warnings) {
            Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
            if (empty || eig.eigenvalues().minCoeff() < reg) {
                model.warnings.push_back("component " + std::to_string(c) +
                                         " collapsed to the regularization floor");
            }
        }
        cov.diagonal().array() += reg;
        model.covariances[static_cast<std::size_t>(c)] = std::move(cov);
    }
}

}  // namespace

Matrix gmm_log_joint(const GmmModel& model, const Matrix& points) {
    if (points.cols() != model.means.cols()) fail("gmm: point dimension mismatch");
    const Index n = points.rows();
    const Index k = static_cast<Index>(model.k);
    const double d = static_cast<double>(points.cols());
    const double log2pi = std::log(2.0 * std::numbers::pi);
    Matrix out(n, k);
    for (Index c = 0; c < k; ++c) {
        Eigen::LLT<Matrix> llt(model.covariances[static_cast<std::size_t>(c)]);
        if (llt.info() != Eigen::Success) fail("gmm: covariance is not positive definite");
        const Matrix& l = llt.matrixL();
        const double logdet = 2.0 * l.diagonal().array().log().sum();
        const Matrix centred = (points.rowwise() - model.means.row(c)).transpose();
        const Matrix y = llt.matrixL().solve(centred);
        const RowVector maha = y.colwise().squaredNorm();
        const double lw = std::log(model.weights(c));
        for (Index i = 0; i < n; ++i) {
            out(i, c) = lw - 0.5 * (d * log2pi + logdet + maha(i));
        }
    }
    return out;
}

namespace {

Vector row_logsumexp(const Matrix& m) {
    Vector out(m.rows());
    for (Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        out(i) = mx + std::log((m.row(i).array() - mx).exp().sum());
    }
    return out;
}

}  // namespace

Matrix gmm_posteriors(const GmmModel& model, const Matrix& points) {
    const Matrix lj = gmm_log_joint(model, points);
    const Vector lse = row_logsumexp(lj);
    Matrix post = (lj.colwise() - lse).array().exp();
    for (Index i = 0; i < post.rows(); ++i) post.row(i) /= post.row(i).sum();
    return post;
}

double gmm_mean_log_likelihood(const GmmModel& model, const Matrix& points) {
    return row_logsumexp(gmm_log_joint(model, points)).mean();
}

GmmModel fit_gmm(const Matrix& points, std::size_t k, std::uint64_t seed,
                 const GmmOptions& options) {
    const Index n = points.rows();
    const Index d = points.cols();
    if (k < 1) fail("gmm needs k >= 1");
    if (d < 1) fail("gmm needs d >= 1");
    if (n < static_cast<Index>(k)) {
        fail("gmm: " + std::to_string(n) + " points cannot support " + std::to_string(k) +
             " components");
    }
    if (!points.allFinite()) fail("gmm: non-finite input");
    if (!(options.reg > 0.0)) fail("gmm: regularization must be positive");

    GmmModel model;
    model.k = k;
    model.means = Matrix::Zero(static_cast<Index>(k), d);
    model.covariances.resize(k);

    const auto init = kmeans(points, k, seed);
    model.means = init.centroids;
    Matrix resp = Matrix::Zero(n, static_cast<Index>(k));
    for (Index i = 0; i < n; ++i) {
        resp(i, static_cast<Index>(init.assignments[static_cast<std::size_t>(i)])) = 1.0;
    }
    m_step(points, resp, options.reg, model, false);

    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < std::max(options.max_iter, 1); ++it) {
        const Matrix lj = gmm_log_joint(model, points);
        const Vector lse = row_logsumexp(lj);
        const double ll = lse.mean();
        model.log_likelihood_trace.push_back(ll);
        model.iterations = it + 1;
        if (it > 0 && std::abs(ll - prev) < options.tol) {
            model.converged = true;
            break;
        }
        if (it + 1 == options.max_iter) break;
        prev = ll;
        resp = (lj.colwise() - lse).array().exp();
        m_step(points, resp, options.reg, model, false);
    }
    // Report degeneracy of the final fit only.
    Matrix final_resp = gmm_posteriors(model, points);
    GmmModel probe = model;
    probe.warnings.clear();
    m_step(points, final_resp, options.reg, probe, true);
    model.warnings = probe.warnings;
    return model;
}

nlohmann::json to_json(const GmmModel& model) {
    nlohmann::json covs = nlohmann::json::array();
    for (const auto& c : model.covariances) {
        nlohmann::json rows = nlohmann::json::array();
        for (Index r = 0; r < c.rows(); ++r) {
            rows.push_back(std::vector<double>(c.row(r).begin(), c.row(r).end()));
        }
        covs.push_back(rows);
    }
    nlohmann::json means = nlohmann::json::array();
    for (Index r = 0; r < model.means.rows(); ++r) {
        means.push_back(std::vector<double>(model.means.row(r).begin(), model.means.row(r).end()));
    }
    return {{"k", model.k},
            {"weights", std::vector<double>(model.weights.begin(), model.weights.end())},
            {"means", means},
            {"covariances", covs},
            {"log_likelihood_trace", model.log_likelihood_trace},
            {"iterations", model.iterations},
            {"converged", model.converged},
            {"warnings", model.warnings}};
}

nlohmann::json to_json(const KMeansResult& result) {
    nlohmann::json cents = nlohmann::json::array();
    for (Index r = 0; r < result.centroids.rows(); ++r) {
        cents.push_back(
            std::vector<double>(result.centroids.row(r).begin(), result.centroids.row(r).end()));
    }
    return {{"centroids", cents},
            {"assignments", result.assignments},
            {"inertia", result.inertia},
            {"iterations", result.iterations}};
}

}  // namespace mixore
