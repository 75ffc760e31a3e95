#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mixore/clustering.hpp"
#include "mixore/common.hpp"

namespace mixore {

struct MappingScore {
    std::string instance_id;
    std::size_t best_known = 0;
    double score = 0.0;
};

/// Cosine similarity of each latent column against the known one-hot axes.
/// `latent` is K_known x N. A zero latent vector gets score -1 (forced
/// outlier) and its id is appended to `warnings` when provided.
std::vector<MappingScore> mapping_scores(const Matrix& latent, std::span<const std::string> ids,
                                         std::vector<std::string>* warnings = nullptr);

/// max(1, floor(fraction * N)).
std::size_t outlier_count(std::size_t n, double fraction);

/// Positions (into `scores`) of the lowest-scoring instances, returned in
/// ascending score order; ties resolve to the earlier position.
std::vector<std::size_t> select_outliers(std::span<const MappingScore> scores,
                                         double fraction = 0.05);

struct WeakLabel {
    std::string instance_id;
    std::size_t novel_index = 0;  // in [K_known, K_known + K_novel)
    double posterior = 0.0;

    bool operator==(const WeakLabel&) const = default;
};

/// GMM cluster membership of one outlier, weak-labeled or not.
struct OutlierRecord {
    std::string instance_id;
    double score = 0.0;
    std::size_t component = 0;
    double posterior = 0.0;
};

struct WeakLabelSet {
    std::vector<WeakLabel> entries;
    std::vector<OutlierRecord> outliers;
    GmmModel gmm;
    std::vector<std::string> warnings;
};

struct WeakLabelOptions {
    std::size_t known_count = 0;
    std::size_t novel_count = 1;
    double threshold = 0.95;
    std::uint64_t seed = 0;
    GmmOptions gmm;
};

/// Fits a |C_novel|-component GMM to the outliers' latent vectors (rows) and
/// keeps those whose top posterior strictly exceeds the threshold. Component
/// i maps to relation index known_count + i.
WeakLabelSet extract_weak_labels(const Matrix& outlier_latents,
                                 std::span<const std::string> outlier_ids,
                                 const WeakLabelOptions& options);

void write_weak_labels(std::ostream& out, const std::vector<WeakLabel>& labels);
std::vector<WeakLabel> read_weak_labels(std::istream& in);
void save_weak_labels(const std::filesystem::path& path, const std::vector<WeakLabel>& labels);
std::vector<WeakLabel> load_weak_labels(const std::filesystem::path& path);

void save_outliers(const std::filesystem::path& path, const std::vector<OutlierRecord>& outliers);
std::vector<OutlierRecord> load_outliers(const std::filesystem::path& path);

}  // namespace mixore
