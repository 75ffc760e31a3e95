#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mixore/corpus.hpp"
#include "mixore/detector.hpp"
#include "mixore/inference.hpp"

namespace mixore {

/// Counts n_ij of (predicted cluster i, truth class j) over dense ids.
class ContingencyTable {
public:
    ContingencyTable(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

    std::size_t clusters() const { return cluster_sizes_.size(); }
    std::size_t classes() const { return class_sizes_.size(); }
    std::size_t total() const { return total_; }
    std::size_t count(std::size_t cluster, std::size_t cls) const {
        return counts_[cluster * class_sizes_.size() + cls];
    }
    std::size_t cluster_size(std::size_t i) const { return cluster_sizes_[i]; }
    std::size_t class_size(std::size_t j) const { return class_sizes_[j]; }
    /// Original (caller) label of dense cluster / class ids.
    std::size_t cluster_label(std::size_t i) const { return cluster_labels_[i]; }
    std::size_t class_label(std::size_t j) const { return class_labels_[j]; }

private:
    std::vector<std::size_t> counts_;
    std::vector<std::size_t> cluster_sizes_, class_sizes_;
    std::vector<std::size_t> cluster_labels_, class_labels_;
    std::size_t total_ = 0;
};

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct KnownPrf {
    Prf micro;
    Prf macro;
};

/// `truth[i]` is the known relation index of instance i, or nullopt when its
/// gold relation is novel (those instances are ignored).
KnownPrf known_prf(std::span<const Assignment> assignments,
                   std::span<const std::optional<std::size_t>> truth, std::size_t known_count);

Prf bcubed(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

struct VMeasure {
    double homogeneity = 0.0;
    double completeness = 0.0;
    double v = 0.0;
};

VMeasure v_measure(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

/// Adjusted Rand index; 1.0 when the adjusted denominator vanishes.
double ari(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

struct PurityResult {
    double purity = 0.0;
    /// Distinct novel classes that are the majority class of some cluster.
    std::size_t identified = 0;
};

/// Majority ties resolve to the smallest class label. `is_novel(label)`
/// selects which truth classes count towards `identified`.
PurityResult purity(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                    const std::vector<bool>& is_novel);

struct Matching {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
    double cost = 0.0;
};

/// Minimum-cost one-to-one matching of min(k, m) pairs. Among optimal
/// matchings, returns the lexicographically smallest assignment vector of
/// the smaller side (rows if k <= m, columns otherwise).
Matching hungarian_align(const Matrix& cost);

struct MetricsReport {
    KnownPrf known;
    std::optional<Prf> b3;
    std::optional<VMeasure> vm;
    std::optional<double> ari;
    std::optional<PurityResult> weak;
    std::size_t known_instances = 0;
    std::size_t novel_instances = 0;
    std::size_t outliers = 0;
};

/// Scores assignments of the unlabeled set against gold labels. Novel
/// metrics use ground-truth novel instances only; an instance routed to a
/// known relation counts as a cluster of its own per relation. Weak-label
/// purity is computed over the outlier GMM clusters when supplied.
MetricsReport evaluate(const std::vector<Assignment>& assignments,
                       const std::map<std::string, std::string>& gold,
                       const RelationCatalog& catalog,
                       const std::vector<OutlierRecord>* outliers = nullptr);

nlohmann::json to_json(const MetricsReport& report);

/// Dense integer ids for string labels, in first-appearance order.
std::vector<std::size_t> encode_labels(std::span<const std::string> labels);

}  // namespace mixore
