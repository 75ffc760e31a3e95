#include "mixore/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace mixore {

namespace {

const char* kModule = "eval";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

double comb2(std::size_t x) { return x < 2 ? 0.0 : static_cast<double>(x) * (x - 1) / 2.0; }

double harmonic(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

void check_inputs(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    if (pred.empty()) fail("metric on empty input");
    if (pred.size() != truth.size()) fail("prediction and truth lengths differ");
}

}  // namespace

ContingencyTable::ContingencyTable(std::span<const std::size_t> pred,
                                   std::span<const std::size_t> truth) {
    if (pred.size() != truth.size()) fail("prediction and truth lengths differ");
    std::unordered_map<std::size_t, std::size_t> ci, cj;
    std::vector<std::size_t> dense_i, dense_j;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        auto [a, ia] = ci.try_emplace(pred[t], ci.size());
        if (ia) cluster_labels_.push_back(pred[t]);
        auto [b, ib] = cj.try_emplace(truth[t], cj.size());
        if (ib) class_labels_.push_back(truth[t]);
        dense_i.push_back(a->second);
        dense_j.push_back(b->second);
    }
    cluster_sizes_.assign(ci.size(), 0);
    class_sizes_.assign(cj.size(), 0);
    counts_.assign(ci.size() * cj.size(), 0);
    for (std::size_t t = 0; t < pred.size(); ++t) {
        ++counts_[dense_i[t] * cj.size() + dense_j[t]];
        ++cluster_sizes_[dense_i[t]];
        ++class_sizes_[dense_j[t]];
    }
    total_ = pred.size();
}

KnownPrf known_prf(std::span<const Assignment> assignments,
                   std::span<const std::optional<std::size_t>> truth, std::size_t known_count) {
    if (assignments.size() != truth.size()) fail("assignment and truth lengths differ");
    std::vector<double> tp(known_count, 0), fp(known_count, 0), fn(known_count, 0);
    std::vector<char> present(known_count, 0);
    std::size_t considered = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!truth[i]) continue;
        const auto r = *truth[i];
        if (r >= known_count) fail("truth relation index out of range");
        ++considered;
        present[r] = 1;
        const auto& a = assignments[i];
        const bool known_pred = a.kind == Assignment::Kind::Known;
        if (known_pred && a.index == r) {
            tp[r] += 1;
        } else {
            fn[r] += 1;
            if (known_pred) {
                if (a.index >= known_count) fail("predicted relation index out of range");
                fp[a.index] += 1;
            }
        }
    }
    if (considered == 0) fail("no ground-truth known instances to score");

    KnownPrf out;
    double stp = 0, sfp = 0, sfn = 0;
    std::size_t relations = 0;
    for (std::size_t r = 0; r < known_count; ++r) {
        stp += tp[r];
        sfp += fp[r];
        sfn += fn[r];
        if (!present[r]) continue;
        ++relations;
        const double p = tp[r] + fp[r] > 0 ? tp[r] / (tp[r] + fp[r]) : 0.0;
        const double rc = tp[r] + fn[r] > 0 ? tp[r] / (tp[r] + fn[r]) : 0.0;
        out.macro.precision += p;
        out.macro.recall += rc;
        out.macro.f1 += harmonic(p, rc);
    }
    out.macro.precision /= static_cast<double>(relations);
    out.macro.recall /= static_cast<double>(relations);
    out.macro.f1 /= static_cast<double>(relations);
    out.micro.precision = stp + sfp > 0 ? stp / (stp + sfp) : 0.0;
    out.micro.recall = stp + sfn > 0 ? stp / (stp + sfn) : 0.0;
    out.micro.f1 = harmonic(out.micro.precision, out.micro.recall);
    return out;
}

Prf bcubed(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    check_inputs(pred, truth);
    const ContingencyTable t(pred, truth);
    // Every item in cell (i, j) shares the same per-item precision and recall.
    double p = 0.0, r = 0.0;
    for (std::size_t i = 0; i < t.clusters(); ++i) {
        for (std::size_t j = 0; j < t.classes(); ++j) {
            const double n = static_cast<double>(t.count(i, j));
            if (n == 0.0) continue;
            p += n * n / static_cast<double>(t.cluster_size(i));
            r += n * n / static_cast<double>(t.class_size(j));
        }
    }
    Prf out;
    out.precision = p / static_cast<double>(t.total());
    out.recall = r / static_cast<double>(t.total());
    out.f1 = harmonic(out.precision, out.recall);
    return out;
}

VMeasure v_measure(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    check_inputs(pred, truth);
    const ContingencyTable t(pred, truth);
    const double n = static_cast<double>(t.total());
    double h_class = 0.0, h_cluster = 0.0, h_class_given_cluster = 0.0, h_cluster_given_class = 0.0;
    for (std::size_t j = 0; j < t.classes(); ++j) {
        const double q = static_cast<double>(t.class_size(j)) / n;
        h_class -= q * std::log(q);
    }
    for (std::size_t i = 0; i < t.clusters(); ++i) {
        const double q = static_cast<double>(t.cluster_size(i)) / n;
        h_cluster -= q * std::log(q);
    }
    for (std::size_t i = 0; i < t.clusters(); ++i) {
        for (std::size_t j = 0; j < t.classes(); ++j) {
            const double c = static_cast<double>(t.count(i, j));
            if (c == 0.0) continue;
            h_class_given_cluster -= c / n * std::log(c / static_cast<double>(t.cluster_size(i)));
            h_cluster_given_class -= c / n * std::log(c / static_cast<double>(t.class_size(j)));
        }
    }
    VMeasure out;
    out.homogeneity = h_class > 0.0 ? 1.0 - h_class_given_cluster / h_class : 1.0;
    out.completeness = h_cluster > 0.0 ? 1.0 - h_cluster_given_class / h_cluster : 1.0;
    out.v = harmonic(out.homogeneity, out.completeness);
    return out;
}

double ari(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    check_inputs(pred, truth);
    const ContingencyTable t(pred, truth);
    double index = 0.0, a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < t.clusters(); ++i) {
        a += comb2(t.cluster_size(i));
        for (std::size_t j = 0; j < t.classes(); ++j) index += comb2(t.count(i, j));
    }
    for (std::size_t j = 0; j < t.classes(); ++j) b += comb2(t.class_size(j));
    const double pairs = comb2(t.total());
    if (pairs == 0.0) return 1.0;
    const double expected = a * b / pairs;
    const double max_index = 0.5 * (a + b);
    const double denom = max_index - expected;
    if (denom == 0.0) return 1.0;
    return (index - expected) / denom;
}

PurityResult purity(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                    const std::vector<bool>& is_novel) {
    check_inputs(pred, truth);
    const ContingencyTable t(pred, truth);
    PurityResult out;
    std::vector<char> hit(t.classes(), 0);
    std::size_t sum = 0;
    for (std::size_t i = 0; i < t.clusters(); ++i) {
        std::size_t best = 0;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < t.classes(); ++j) {
            const auto c = t.count(i, j);
            if (c > best || (c == best && c > 0 && t.class_label(j) < t.class_label(arg))) {
                best = c;
                arg = j;
            }
        }
        sum += best;
        hit[arg] = 1;
    }
    for (std::size_t j = 0; j < t.classes(); ++j) {
        const auto label = t.class_label(j);
        if (hit[j] && label < is_novel.size() && is_novel[label]) ++out.identified;
    }
    out.purity = static_cast<double>(sum) / static_cast<double>(t.total());
    return out;
}

// ---- Hungarian -------------------------------------------------------------

namespace {

// Kuhn-Munkres with potentials for rows <= cols. Returns the column of each
// row and the optimal cost.
std::pair<std::vector<std::size_t>, double> solve_assignment(const Matrix& a) {
    const auto n = static_cast<std::size_t>(a.rows());
    const auto m = static_cast<std::size_t>(a.cols());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                                   u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col(n, 0);
    double cost = 0.0;
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) col[p[j] - 1] = j - 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        cost += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col[i]));
    }
    return {col, cost};
}

Matrix drop(const Matrix& a, const std::vector<std::size_t>& rows,
            const std::vector<std::size_t>& cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                a(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(cols[c]));
        }
    }
    return out;
}

// Lexicographically smallest optimal row->column vector for rows <= cols.
std::vector<std::size_t> lexicographic_optimum(const Matrix& a, double optimum) {
    const auto n = static_cast<std::size_t>(a.rows());
    const auto m = static_cast<std::size_t>(a.cols());
    const double tol = 1e-9 * std::max(1.0, a.cwiseAbs().sum());
    std::vector<std::size_t> result(n, 0);
    std::vector<char> col_used(m, 0);
    double fixed = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> rest_rows;
        for (std::size_t r = i + 1; r < n; ++r) rest_rows.push_back(r);
        bool placed = false;
        for (std::size_t j = 0; j < m && !placed; ++j) {
            if (col_used[j]) continue;
            std::vector<std::size_t> rest_cols;
            for (std::size_t c = 0; c < m; ++c) {
                if (!col_used[c] && c != j) rest_cols.push_back(c);
            }
            const double here = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            double rest = 0.0;
            if (!rest_rows.empty()) rest = solve_assignment(drop(a, rest_rows, rest_cols)).second;
            if (fixed + here + rest <= optimum + tol) {
                result[i] = j;
                col_used[j] = 1;
                fixed += here;
                placed = true;
            }
        }
        if (!placed) fail("hungarian: refinement lost the optimum");
    }
    return result;
}

}  // namespace

Matching hungarian_align(const Matrix& cost) {
    if (cost.rows() == 0 || cost.cols() == 0) fail("hungarian: empty cost matrix");
    if (!cost.allFinite()) fail("hungarian: non-finite cost");
    const bool transpose = cost.rows() > cost.cols();
    const Matrix a = transpose ? Matrix(cost.transpose()) : cost;
    const auto [first, optimum] = solve_assignment(a);
    (void)first;
    const auto cols = lexicographic_optimum(a, optimum);
    Matching out;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (transpose) {
            out.pairs.emplace_back(cols[i], i);
        } else {
            out.pairs.emplace_back(i, cols[i]);
        }
        out.cost += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cols[i]));
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    return out;
}

// ---- report ----------------------------------------------------------------

std::vector<std::size_t> encode_labels(std::span<const std::string> labels) {
    std::unordered_map<std::string, std::size_t> ids;
    std::vector<std::size_t> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(ids.try_emplace(l, ids.size()).first->second);
    return out;
}

MetricsReport evaluate(const std::vector<Assignment>& assignments,
                       const std::map<std::string, std::string>& gold,
                       const RelationCatalog& catalog,
                       const std::vector<OutlierRecord>* outliers) {
    const std::size_t k_known = catalog.known_count();
    std::unordered_map<std::string, std::size_t> class_id;
    for (std::size_t r = 0; r < k_known; ++r) class_id.emplace(catalog.known[r], r);
    auto class_of = [&](const std::string& id) {
        auto it = gold.find(id);
        if (it == gold.end()) fail("no gold label for instance '" + id + "'");
        return class_id.try_emplace(it->second, class_id.size()).first->second;
    };

    MetricsReport report;
    std::vector<std::optional<std::size_t>> truth_known;
    std::vector<std::size_t> novel_pred, novel_truth;
    for (const auto& a : assignments) {
        const auto c = class_of(a.instance_id);
        if (c < k_known) {
            truth_known.emplace_back(c);
            ++report.known_instances;
        } else {
            truth_known.emplace_back(std::nullopt);
            ++report.novel_instances;
            // Known routes become one extra cluster per relation.
            novel_pred.push_back(a.kind == Assignment::Kind::Novel
                                     ? a.index
                                     : std::numeric_limits<std::size_t>::max() - a.index);
            novel_truth.push_back(c);
        }
    }
    if (report.known_instances > 0) report.known = known_prf(assignments, truth_known, k_known);
    if (!novel_pred.empty()) {
        report.b3 = bcubed(novel_pred, novel_truth);
        report.vm = v_measure(novel_pred, novel_truth);
        report.ari = ari(novel_pred, novel_truth);
    }
    if (outliers && !outliers->empty()) {
        std::vector<std::size_t> pred, truth;
        for (const auto& o : *outliers) {
            pred.push_back(o.component);
            truth.push_back(class_of(o.instance_id));
        }
        std::vector<bool> is_novel(class_id.size(), false);
        for (std::size_t c = k_known; c < is_novel.size(); ++c) is_novel[c] = true;
        report.weak = purity(pred, truth, is_novel);
        report.outliers = outliers->size();
    }
    return report;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    const bool has_known = r.known_instances > 0;
    auto opt = [](bool ok, double v) { return ok ? nlohmann::json(v) : nlohmann::json(); };
    j["P"] = opt(has_known, r.known.macro.precision);
    j["R"] = opt(has_known, r.known.macro.recall);
    j["F1"] = opt(has_known, r.known.macro.f1);
    j["micro_P"] = opt(has_known, r.known.micro.precision);
    j["micro_R"] = opt(has_known, r.known.micro.recall);
    j["micro_F1"] = opt(has_known, r.known.micro.f1);
    j["b3_p"] = opt(r.b3.has_value(), r.b3 ? r.b3->precision : 0.0);
    j["b3_r"] = opt(r.b3.has_value(), r.b3 ? r.b3->recall : 0.0);
    j["b3_f1"] = opt(r.b3.has_value(), r.b3 ? r.b3->f1 : 0.0);
    j["hom"] = opt(r.vm.has_value(), r.vm ? r.vm->homogeneity : 0.0);
    j["comp"] = opt(r.vm.has_value(), r.vm ? r.vm->completeness : 0.0);
    j["v_f1"] = opt(r.vm.has_value(), r.vm ? r.vm->v : 0.0);
    j["ari"] = opt(r.ari.has_value(), r.ari.value_or(0.0));
    j["purity"] = opt(r.weak.has_value(), r.weak ? r.weak->purity : 0.0);
    j["identified"] = r.weak ? nlohmann::json(r.weak->identified) : nlohmann::json();
    j["n_known"] = r.known_instances;
    j["n_novel"] = r.novel_instances;
    j["n_outliers"] = r.outliers;
    return j;
}

}  // namespace mixore
