#include "mixore/inference.hpp"

#include <fstream>
#include <sstream>

#include "mixore/clustering.hpp"

namespace mixore {

namespace {

const char* kModule = "inference";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

}  // namespace

Prediction predict_from_outputs(const Matrix& reps, const Matrix& logits,
                                std::span<const std::string> ids, const InferenceOptions& options) {
    const auto n = static_cast<Eigen::Index>(ids.size());
    if (n == 0) fail("no unlabeled instances to assign");
    if (reps.rows() != n || logits.rows() != n) fail("output rows do not match ids");
    if (options.novel_count < 1) fail("k_novel must be >= 1");
    if (options.known_count < 1 || static_cast<Eigen::Index>(options.known_count) > logits.cols()) {
        fail("known_count out of range for the classifier");
    }

    Prediction out;
    out.assignments.resize(static_cast<std::size_t>(n));
    std::vector<std::size_t> pool;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        auto& a = out.assignments[static_cast<std::size_t>(i)];
        a.instance_id = ids[static_cast<std::size_t>(i)];
        if (static_cast<std::size_t>(arg) < options.known_count) {
            a.kind = Assignment::Kind::Known;
            a.index = static_cast<std::size_t>(arg);
        } else {
            a.kind = Assignment::Kind::Novel;
            pool.push_back(static_cast<std::size_t>(i));
        }
    }
    if (pool.empty()) return out;

    if (pool.size() < options.novel_count) {
        out.warnings.push_back("novel pool has " + std::to_string(pool.size()) +
                               " members for " + std::to_string(options.novel_count) +
                               " clusters; each member forms its own cluster");
        for (std::size_t k = 0; k < pool.size(); ++k) out.assignments[pool[k]].index = k;
        return out;
    }

    Matrix points(static_cast<Eigen::Index>(pool.size()), reps.cols());
    for (std::size_t k = 0; k < pool.size(); ++k) {
        points.row(static_cast<Eigen::Index>(k)) = reps.row(static_cast<Eigen::Index>(pool[k]));
        if (options.normalize) {
            const double norm = points.row(static_cast<Eigen::Index>(k)).norm();
            if (norm > 0.0) points.row(static_cast<Eigen::Index>(k)) /= norm;
        }
    }
    const auto km = kmeans(points, options.novel_count, options.seed);
    for (std::size_t k = 0; k < pool.size(); ++k) {
        out.assignments[pool[k]].index = km.assignments[k];
    }
    return out;
}

Prediction predict(const HeadParams& params, const Matrix& inputs,
                   std::span<const std::string> ids, const InferenceOptions& options) {
    if (inputs.rows() == 0) fail("no unlabeled instances to assign");
    const auto cache = forward_batch(params, inputs);
    return predict_from_outputs(cache.rep, cache.logits, ids, options);
}

void save_assignments(const std::filesystem::path& path, const std::vector<Assignment>& rows) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << "instance_id,kind,index\n";
    for (const auto& a : rows) {
        out << a.instance_id << ',' << (a.kind == Assignment::Kind::Known ? "known" : "novel") << ','
            << a.index << '\n';
    }
}

std::vector<Assignment> load_assignments(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open assignments " + path.string());
    std::vector<Assignment> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (line_no == 1 && line.rfind("instance_id", 0) == 0)) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            fail("assignments line " + std::to_string(line_no) + ": expected 3 fields");
        }
        Assignment a;
        a.instance_id = line.substr(0, c1);
        const auto kind = line.substr(c1 + 1, c2 - c1 - 1);
        if (kind == "known") {
            a.kind = Assignment::Kind::Known;
        } else if (kind == "novel") {
            a.kind = Assignment::Kind::Novel;
        } else {
            fail("assignments line " + std::to_string(line_no) + ": unknown kind '" + kind + "'");
        }
        try {
            std::size_t used = 0;
            const auto idx = line.substr(c2 + 1);
            a.index = std::stoul(idx, &used);
            if (used != idx.size()) throw std::invalid_argument(idx);
        } catch (const std::exception&) {
            fail("assignments line " + std::to_string(line_no) + ": bad index");
        }
        rows.push_back(std::move(a));
    }
    return rows;
}

}  // namespace mixore
