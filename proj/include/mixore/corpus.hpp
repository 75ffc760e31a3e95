#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "mixore/common.hpp"

namespace mixore {

/// One sentence / entity pair reduced to its frozen relation representation.
struct EmbeddedInstance {
    std::string id;
    std::vector<double> vec;
    std::optional<std::string> label;

    bool operator==(const EmbeddedInstance&) const = default;
};

/// Known relations occupy indices [0, known.size()); novel slots follow.
struct RelationCatalog {
    std::vector<std::string> known;
    std::size_t novel_count = 1;

    std::size_t known_count() const { return known.size(); }
    std::size_t total() const { return known.size() + novel_count; }
    std::optional<std::size_t> index_of(const std::string& name) const;
};

/// Labeled side carries mandatory labels. The unlabeled side keeps its gold
/// labels only so the evaluation stage can score against them; the training
/// stages never read them.
struct SplitDataset {
    std::vector<EmbeddedInstance> labeled;
    std::vector<EmbeddedInstance> unlabeled;
    RelationCatalog catalog;
    std::vector<std::string> novel_names;
    std::uint64_t seed = 0;
};

struct SyntheticRelation {
    std::string name;
    std::vector<double> mean;
    double stddev = 1.0;
    std::size_t count = 2;
};

struct SyntheticSpec {
    std::size_t dim = 0;
    std::vector<SyntheticRelation> relations;
    std::vector<std::string> novel_names;
    std::uint64_t seed = 0;
};

// ---- interchange -----------------------------------------------------------

std::vector<EmbeddedInstance> read_embeddings(std::istream& in);
std::vector<EmbeddedInstance> load_embeddings(const std::filesystem::path& path);

void write_embeddings(std::ostream& out, const std::vector<EmbeddedInstance>& instances);
void save_embeddings(const std::filesystem::path& path,
                     const std::vector<EmbeddedInstance>& instances);

// ---- split protocol --------------------------------------------------------

SplitDataset build_split(const std::vector<EmbeddedInstance>& instances,
                         const std::set<std::string>& novel_names, double labeled_fraction,
                         std::uint64_t seed);

/// Manifest object {labeled_ids, unlabeled_ids, known, novel_count, seed}.
nlohmann::json split_manifest(const SplitDataset& split);

/// Rebuilds a split from a manifest plus the full embedding list.
SplitDataset apply_split_manifest(const nlohmann::json& manifest,
                                  const std::vector<EmbeddedInstance>& instances);

// ---- synthetic data --------------------------------------------------------

void validate(const SyntheticSpec& spec);
std::vector<EmbeddedInstance> generate_synthetic(const SyntheticSpec& spec);

/// Relations centred at `spacing * e_r` (r-th coordinate axis) with unit
/// spread; pairwise mean distance is spacing * sqrt(2) in units of stddev.
SyntheticSpec axis_aligned_spec(std::size_t dim, std::size_t known, std::size_t novel,
                                std::size_t count, double spacing, double stddev,
                                std::uint64_t seed);

/// Means are `radius` times uniform random directions, redrawn until every
/// pairwise distance is at least `min_distance`.
SyntheticSpec random_means_spec(std::size_t dim, std::size_t known, std::size_t novel,
                                std::size_t count, double radius, double stddev,
                                double min_distance, std::uint64_t seed);

/// Known means at radius * e_r; novel relation j sits between known 2j and
/// 2j+1 at radius * (e_2j + e_2j+1) / sqrt(2).
SyntheticSpec bridged_spec(std::size_t dim, std::size_t known, std::size_t novel,
                           std::size_t count, double radius, double stddev, std::uint64_t seed);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// ---- helpers ---------------------------------------------------------------

/// Rows are instances.
Matrix to_matrix(const std::vector<EmbeddedInstance>& instances);

}  // namespace mixore
