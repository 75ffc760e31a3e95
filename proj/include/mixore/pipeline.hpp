#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mixore/clustering.hpp"
#include "mixore/trainer.hpp"

namespace mixore {

inline constexpr const char* kVersion = "0.1.0";

struct PipelineConfig {
    struct Paths {
        std::string embeddings;
        std::string out = "out";
    } paths;

    struct Split {
        std::vector<std::string> novel;
        double labeled_fraction = 0.5;
        std::uint64_t seed = 0;
    } split;

    struct Phase1 {
        double lambda = 100.0;
        double outlier_fraction = 0.05;
        double posterior_threshold = 0.95;
        std::uint64_t seed = 0;
        GmmOptions gmm;
    } phase1;

    TrainConfig phase2;

    struct Inference {
        /// 0 means |C_novel| from the split.
        std::size_t k_novel = 0;
        std::uint64_t seed = 0;
        bool normalize = false;
    } inference;

    struct Report {
        int indent = 2;
    } report;

    /// Optional synthetic-data section consumed by `synth`.
    nlohmann::json synth;
    int threads = 1;

    /// Throws mixore::Error("config", ...) on any out-of-range value.
    void validate() const;
};

/// Sets `a.b.c` in a JSON object; the value is parsed as JSON when possible
/// and kept as a string otherwise.
void set_dotted(nlohmann::json& root, const std::string& dotted, const std::string& value);

PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& c);
/// Hex FNV-1a of the canonical config dump.
std::string config_hash(const PipelineConfig& c);

/// Overrides every named seed.
void override_seeds(PipelineConfig& c, std::uint64_t seed);

using WarningSink = std::function<void(const std::string& stage, const std::string& message)>;

// Each stage reads its inputs from and writes its outputs into paths.out.
// File names: split.json, sae.json, weak_labels.jsonl, outliers.jsonl,
// head.json, loss_trace.csv, assignments.csv, metrics.json, manifest.json.
void run_split(const PipelineConfig& c, const WarningSink& warn = {});
void run_detect(const PipelineConfig& c, const WarningSink& warn = {});
void run_train(const PipelineConfig& c, const WarningSink& warn = {});
void run_infer(const PipelineConfig& c, const WarningSink& warn = {});
/// `split_path` defaults to <out>/split.json; outliers are used when present.
void run_eval(const PipelineConfig& c, const std::filesystem::path& assignments,
              std::optional<std::filesystem::path> split_path = std::nullopt,
              const WarningSink& warn = {});
void run_synth(const PipelineConfig& c, const std::filesystem::path& output);
/// All stages in order, then the manifest.
void run_pipeline(const PipelineConfig& c, const WarningSink& warn = {});

/// Error carrying the failing stage name.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& message)
        : Error("pipeline", "stage '" + stage + "' failed: " + message), stage_(stage) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace mixore
