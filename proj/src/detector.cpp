#include "mixore/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include "json.hpp"

namespace mixore {

namespace {

const char* kModule = "detector";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

}  // namespace

std::vector<MappingScore> mapping_scores(const Matrix& latent, std::span<const std::string> ids,
                                         std::vector<std::string>* warnings) {
    if (latent.rows() < 1) fail("latent space has no known axes");
    if (static_cast<Eigen::Index>(ids.size()) != latent.cols()) {
        fail("id count does not match latent columns");
    }
    std::vector<MappingScore> out;
    out.reserve(ids.size());
    for (Eigen::Index c = 0; c < latent.cols(); ++c) {
        MappingScore s;
        s.instance_id = ids[static_cast<std::size_t>(c)];
        Eigen::Index arg = 0;
        const double top = latent.col(c).maxCoeff(&arg);
        s.best_known = static_cast<std::size_t>(arg);
        const double norm = latent.col(c).norm();
        if (norm > 0.0 && std::isfinite(norm)) {
            s.score = std::clamp(top / norm, -1.0, 1.0);
        } else {
            s.score = -1.0;
            if (warnings) warnings->push_back("zero-norm latent vector for '" + s.instance_id + "'");
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::size_t outlier_count(std::size_t n, double fraction) {
    const auto f = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    return std::max<std::size_t>(1, f);
}

std::vector<std::size_t> select_outliers(std::span<const MappingScore> scores, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) fail("outlier fraction must lie in (0, 1)");
    if (scores.empty()) fail("no mapping scores to select outliers from");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a].score < scores[b].score;
    });
    order.resize(outlier_count(scores.size(), fraction));
    return order;
}

WeakLabelSet extract_weak_labels(const Matrix& outlier_latents,
                                 std::span<const std::string> outlier_ids,
                                 const WeakLabelOptions& options) {
    if (options.novel_count < 1) fail("novel relation count must be >= 1");
    if (static_cast<Eigen::Index>(outlier_ids.size()) != outlier_latents.rows()) {
        fail("outlier id count does not match latent rows");
    }
    if (outlier_ids.size() < options.novel_count) {
        fail("only " + std::to_string(outlier_ids.size()) + " outliers for " +
             std::to_string(options.novel_count) +
             " novel relations; raise the outlier fraction");
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : outlier_ids) {
        if (!seen.insert(id).second) fail("duplicate outlier id '" + id + "'");
    }

    WeakLabelSet set;
    try {
        set.gmm = fit_gmm(outlier_latents, options.novel_count, options.seed, options.gmm);
    } catch (const Error& e) {
        fail(std::string("outlier clustering failed (") + e.what() + ")");
    }
    set.warnings = set.gmm.warnings;
    const Matrix post = gmm_posteriors(set.gmm, outlier_latents);
    for (Eigen::Index i = 0; i < post.rows(); ++i) {
        Eigen::Index arg = 0;
        const double p = post.row(i).maxCoeff(&arg);
        const auto& id = outlier_ids[static_cast<std::size_t>(i)];
        set.outliers.push_back({id, 0.0, static_cast<std::size_t>(arg), p});
        if (p > options.threshold) {
            set.entries.push_back({id, options.known_count + static_cast<std::size_t>(arg), p});
        }
    }
    if (set.entries.empty()) {
        set.warnings.push_back("no outlier exceeded the posterior threshold; weak label set is empty");
    }
    return set;
}

void write_weak_labels(std::ostream& out, const std::vector<WeakLabel>& labels) {
    for (const auto& w : labels) {
        nlohmann::ordered_json j;
        j["id"] = w.instance_id;
        j["novel_index"] = w.novel_index;
        j["posterior"] = w.posterior;
        out << j.dump() << '\n';
    }
}

std::vector<WeakLabel> read_weak_labels(std::istream& in) {
    std::vector<WeakLabel> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("id").get<std::string>(), j.at("novel_index").get<std::size_t>(),
                           j.at("posterior").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            fail("weak labels line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void save_weak_labels(const std::filesystem::path& path, const std::vector<WeakLabel>& labels) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    write_weak_labels(out, labels);
}

std::vector<WeakLabel> load_weak_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open weak labels " + path.string());
    return read_weak_labels(in);
}

void save_outliers(const std::filesystem::path& path, const std::vector<OutlierRecord>& outliers) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    for (const auto& o : outliers) {
        nlohmann::ordered_json j;
        j["id"] = o.instance_id;
        j["score"] = o.score;
        j["component"] = o.component;
        j["posterior"] = o.posterior;
        out << j.dump() << '\n';
    }
}

std::vector<OutlierRecord> load_outliers(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open outliers " + path.string());
    std::vector<OutlierRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("id").get<std::string>(), j.at("score").get<double>(),
                           j.at("component").get<std::size_t>(), j.at("posterior").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            fail(std::string("outliers file: ") + e.what());
        }
    }
    return out;
}

}  // namespace mixore
