#include "mixore/sae.hpp"

#include <cmath>

namespace mixore {

namespace {

const char* kModule = "sae";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

}  // namespace

Matrix one_hot_targets(std::span<const std::size_t> labels, std::size_t classes) {
    Matrix s = Matrix::Zero(static_cast<Eigen::Index>(classes),
                            static_cast<Eigen::Index>(labels.size()));
    for (std::size_t m = 0; m < labels.size(); ++m) {
        if (labels[m] >= classes) fail("label index out of range");
        s(static_cast<Eigen::Index>(labels[m]), static_cast<Eigen::Index>(m)) = 1.0;
    }
    return s;
}

ProjectionW fit_sae(const Matrix& features, std::span<const std::size_t> labels,
                    std::vector<std::string> class_order, double lambda) {
    const auto d = features.rows();
    const auto m = features.cols();
    const auto k = static_cast<Eigen::Index>(class_order.size());
    if (m < 1) fail("need at least one labeled instance");
    if (k < 1) fail("need at least one known relation");
    if (static_cast<Eigen::Index>(labels.size()) != m) fail("label count does not match columns");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) fail("lambda must be a finite positive number");
    if (!features.allFinite()) fail("non-finite feature value");

    Vector counts = Vector::Zero(k);
    Matrix rhs = Matrix::Zero(k, d);
    for (Eigen::Index c = 0; c < m; ++c) {
        const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(c)]);
        if (y >= k) fail("label index out of range");
        counts(y) += 1.0;
        rhs.row(y) += features.col(c).transpose();
    }
    rhs *= (1.0 + lambda);
    if (counts.sum() <= 0.0) fail("singular system: no class has any instance");

    const Matrix gram = lambda * (features * features.transpose());
    const double base_jitter = 1e-10 * gram.trace() / static_cast<double>(d);

    ProjectionW w;
    w.lambda = lambda;
    w.class_order = std::move(class_order);
    w.matrix.resize(k, d);
    for (Eigen::Index c = 0; c < k; ++c) {
        Matrix system = gram;
        system.diagonal().array() += counts(c);
        Eigen::LLT<Matrix> llt(system);
        double jitter = base_jitter;
        int attempts = 0;
        while (llt.info() != Eigen::Success) {
            if (jitter <= 0.0 || ++attempts > 12) fail("singular system for class " + w.class_order[c]);
            system.diagonal().array() += jitter;
            llt.compute(system);
            jitter *= 10.0;
            ++w.jittered;
        }
        w.matrix.row(c) = llt.solve(rhs.row(c).transpose()).transpose();
    }
    if (!w.matrix.allFinite()) fail("solve produced non-finite entries");

    w.residual = sylvester_residual(w.matrix, features, one_hot_targets(labels, k), lambda);
    w.fitted = true;
    return w;
}

double sae_objective(const Matrix& w, const Matrix& features, const Matrix& targets,
                     double lambda) {
    return (features - w.transpose() * targets).squaredNorm() +
           lambda * (w * features - targets).squaredNorm();
}

double sylvester_residual(const Matrix& w, const Matrix& features, const Matrix& targets,
                          double lambda) {
    const Matrix a = targets * targets.transpose();
    const Matrix c = (1.0 + lambda) * targets * features.transpose();
    const Matrix r = a * w + lambda * (w * features) * features.transpose() - c;
    const double scale = c.norm();
    return scale > 0.0 ? r.norm() / scale : r.norm();
}

Matrix encode(const ProjectionW& w, const Matrix& features) {
    if (!w.fitted) fail("projection is not fitted");
    if (features.rows() != w.matrix.cols()) {
        fail("encode: feature dimension " + std::to_string(features.rows()) + " != " +
             std::to_string(w.matrix.cols()));
    }
    return w.matrix * features;
}

Matrix decode(const ProjectionW& w, const Matrix& latent) {
    if (!w.fitted) fail("projection is not fitted");
    if (latent.rows() != w.matrix.rows()) {
        fail("decode: latent dimension " + std::to_string(latent.rows()) + " != " +
             std::to_string(w.matrix.rows()));
    }
    return w.matrix.transpose() * latent;
}

nlohmann::json to_json(const ProjectionW& w) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < w.matrix.rows(); ++r) {
        std::vector<double> row(w.matrix.row(r).begin(), w.matrix.row(r).end());
        rows.push_back(row);
    }
    return {{"lambda", w.lambda}, {"class_order", w.class_order}, {"matrix", rows}};
}

ProjectionW projection_from_json(const nlohmann::json& j) {
    ProjectionW w;
    try {
        w.lambda = j.at("lambda").get<double>();
        w.class_order = j.at("class_order").get<std::vector<std::string>>();
        const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
        if (rows.size() != w.class_order.size()) fail("matrix rows do not match class_order");
        const auto d = rows.empty() ? 0 : rows.front().size();
        w.matrix.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != d) fail("ragged projection matrix");
            for (std::size_t c = 0; c < d; ++c) {
                w.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("invalid projection JSON: ") + e.what());
    }
    if (!w.matrix.allFinite()) fail("projection contains non-finite entries");
    w.fitted = true;
    return w;
}

}  // namespace mixore
