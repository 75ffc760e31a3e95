#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mixore/common.hpp"
#include "mixore/trainer.hpp"

namespace mixore {

struct Assignment {
    enum class Kind { Known, Novel };

    std::string instance_id;
    Kind kind = Kind::Known;
    /// Known relation index, or novel cluster index in [0, k_novel).
    std::size_t index = 0;

    bool operator==(const Assignment&) const = default;
};

struct InferenceOptions {
    std::size_t known_count = 0;
    std::size_t novel_count = 1;
    std::uint64_t seed = 0;
    /// Cluster L2-normalised representations instead of raw ones.
    bool normalize = false;
};

struct Prediction {
    std::vector<Assignment> assignments;
    std::vector<std::string> warnings;
};

/// Argmax over classifier logits (ties to the lowest index); instances whose
/// argmax is a known relation are accepted, the rest are K-Means clustered
/// on their representations into `novel_count` clusters.
Prediction predict_from_outputs(const Matrix& reps, const Matrix& logits,
                                std::span<const std::string> ids, const InferenceOptions& options);

Prediction predict(const HeadParams& params, const Matrix& inputs,
                   std::span<const std::string> ids, const InferenceOptions& options);

void save_assignments(const std::filesystem::path& path, const std::vector<Assignment>& rows);
std::vector<Assignment> load_assignments(const std::filesystem::path& path);

}  // namespace mixore
