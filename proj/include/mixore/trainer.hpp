#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mixore/common.hpp"

namespace mixore {

// ---- parameters ------------------------------------------------------------

/// Trainable projection head (theta: d -> H -> R with tanh between the two
/// affine maps) and the linear classifier (phi: R -> |C_u| logits).
struct HeadParams {
    Matrix w1;  // H x d
    Vector b1;
    Matrix w2;  // R x H
    Vector b2;
    Matrix wc;  // C x R
    Vector bc;

    std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }
    std::size_t rep_dim() const { return static_cast<std::size_t>(w2.rows()); }
    std::size_t classes() const { return static_cast<std::size_t>(wc.rows()); }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
    static HeadParams init(std::size_t d, std::size_t hidden, std::size_t rep,
                           std::size_t classes, std::uint64_t seed);
    /// Same shapes, all zeros.
    static HeadParams zeros_like(const HeadParams& p);

    template <typename F>
    void for_each_theta(F&& f) {
        f(w1);
        f(b1);
        f(w2);
        f(b2);
    }
    template <typename F>
    void for_each_phi(F&& f) {
        f(wc);
        f(bc);
    }
    bool all_finite() const;
    bool operator==(const HeadParams& other) const;
};

nlohmann::json to_json(const HeadParams& p);
HeadParams head_params_from_json(const nlohmann::json& j);

// ---- forward / backward ----------------------------------------------------

struct ForwardCache {
    Matrix input;   // B x d
    Matrix hidden;  // B x H, post-activation
    Matrix rep;     // B x R
    Matrix logits;  // B x C
};

/// Rows of `inputs` are instances.
ForwardCache forward_batch(const HeadParams& p, const Matrix& inputs);

/// Single instance: (representation, logits).
std::pair<Vector, Vector> forward(const HeadParams& p, const Vector& x);

/// Accumulates classifier gradients into `grads` and returns dL/d(rep).
Matrix classifier_backward(const HeadParams& p, const ForwardCache& cache,
                           const Matrix& grad_logits, HeadParams& grads);

/// Accumulates head gradients into `grads` given dL/d(rep).
void head_backward(const HeadParams& p, const ForwardCache& cache, const Matrix& grad_rep,
                   HeadParams& grads);

// ---- losses ----------------------------------------------------------------

struct LossValue {
    double value = 0.0;
    Matrix grad;
};

/// Mean softmax cross-entropy over the batch; grad = (softmax - onehot) / B.
LossValue loss_classification(const Matrix& logits, std::span<const std::size_t> labels);

struct PositivePair {
    std::size_t anchor = 0;
    std::size_t positive = 0;

    bool operator==(const PositivePair&) const = default;
};

/// Balanced same-relation pairs over labeled instances (positions into
/// `labels`). Each eligible relation (>= 2 instances) gets up to
/// ceil(count / K') distinct unordered pairs; relations are interleaved
/// round-robin and the list truncated to `count`.
std::vector<PositivePair> sample_positive_pairs(std::span<const std::size_t> labels,
                                                std::size_t count, Rng& rng);
std::vector<PositivePair> sample_positive_pairs(std::span<const std::size_t> labels,
                                                std::size_t count, std::uint64_t seed);

/// One negative per pair, drawn uniformly from instances of another relation.
/// Empty optional when every labeled instance shares the anchor's relation.
std::optional<std::vector<std::size_t>> sample_negatives(std::span<const std::size_t> labels,
                                                         std::span<const PositivePair> pairs,
                                                         Rng& rng);

double cosine_distance(const Vector& u, const Vector& v);

struct TripletLoss {
    double value = 0.0;
    Matrix grad_anchor;
    Matrix grad_positive;
    Matrix grad_negative;
    std::size_t active = 0;
    std::size_t degenerate = 0;  // pairs touching a zero-norm representation
};

/// mean_i max{dist(a_i, p_i) - dist(a_i, n_i) + margin, 0} with cosine
/// distance; rows are representations. Zero-norm rows count as distance 1
/// and receive no gradient.
TripletLoss loss_triplet(const Matrix& anchors, const Matrix& positives, const Matrix& negatives,
                         double margin);

struct ExemplarLayer {
    Matrix centroids;  // c_l x R, unit rows
    std::vector<std::size_t> membership;
};

struct ExemplarSet {
    std::vector<ExemplarLayer> layers;
    std::vector<std::string> warnings;
};

/// K-Means over L2-normalised representations for each granularity.
ExemplarSet compute_exemplars(const Matrix& reps, std::span<const std::size_t> layer_sizes,
                              std::uint64_t seed);

/// negatives[b][l] lists exemplar indices of layer l contrasted with batch
/// row b: J distinct non-positive exemplars, or all of them if fewer exist.
using ExemplarNegatives = std::vector<std::vector<std::vector<std::size_t>>>;

ExemplarNegatives sample_exemplar_negatives(const ExemplarSet& exemplars,
                                            std::span<const std::size_t> population_index,
                                            std::size_t negatives, Rng& rng);

struct ExemplarLossOptions {
    double temperature = 0.02;
    /// Divide by batch size instead of summing over the batch.
    bool mean_over_batch = false;
    /// Contrast against every exemplar of the layer rather than J samples.
    bool full_denominator = false;
};

/// Clustering exemplar loss. `population_index[b]` locates batch row b in the
/// population the exemplars were computed on. Layers with one exemplar
/// contribute nothing.
LossValue loss_exemplar(const Matrix& reps, std::span<const std::size_t> population_index,
                        const ExemplarSet& exemplars, const ExemplarNegatives& negatives,
                        const ExemplarLossOptions& options);

LossValue loss_exemplar(const Matrix& reps, std::span<const std::size_t> population_index,
                        const ExemplarSet& exemplars, std::size_t negatives, std::uint64_t seed,
                        const ExemplarLossOptions& options);

// ---- optimiser -------------------------------------------------------------

/// Adam with decoupled weight decay. Theta and phi keep independent step
/// counters so that a group receiving no gradient is left untouched.
class AdamW {
public:
    AdamW(const HeadParams& shape, double lr, double weight_decay = 0.01, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step(HeadParams& params, const HeadParams& grads, bool update_theta, bool update_phi);

private:
    template <typename T>
    void update(T& param, const T& grad, T& m, T& v, long t);

    double lr_, wd_, beta1_, beta2_, eps_;
    HeadParams m_, v_;
    long t_theta_ = 0;
    long t_phi_ = 0;
};

// ---- training --------------------------------------------------------------

struct TrainConfig {
    double margin = 0.75;
    double temperature = 0.02;
    std::size_t negatives = 10;
    int warmup_epochs = 2;
    int continual_epochs = 5;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    std::size_t batch_size = 64;
    /// Empty means {16, 32, |C_u|, 64}.
    std::vector<std::size_t> granularity_layers;
    std::size_t pair_multiplier = 5;
    std::size_t hidden_dim = 128;
    std::size_t rep_dim = 64;
    bool exemplar_mean = false;
    bool exemplar_full_denominator = false;
    bool use_classification = true;
    bool use_triplet = true;
    bool use_exemplar = true;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<std::size_t> resolved_layers(std::size_t total_classes) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainingData {
    Matrix labeled;                              // M x d
    std::vector<std::size_t> labeled_labels;     // known indices
    Matrix unlabeled;                            // N x d
    /// (row in `unlabeled`, relation index) for weak labels.
    std::vector<std::pair<std::size_t, std::size_t>> weak;
    std::size_t known_count = 0;
    std::size_t total_classes = 0;
};

struct EpochRecord {
    int epoch = 0;
    std::string phase;  // "warmup" or "continual"
    double classification = 0.0;
    double triplet = 0.0;
    double exemplar = 0.0;
    double total = 0.0;
};

struct TrainResult {
    HeadParams params;
    std::vector<EpochRecord> trace;
    std::vector<std::string> warnings;
};

/// Gradients of one mini-batch. Phi gets only the classification gradient;
/// theta gets classification (through the classifier) + triplet + exemplar.
struct BatchGradients {
    HeadParams grads;
    double classification = 0.0;
    double triplet = 0.0;
    double exemplar = 0.0;
    std::size_t triplet_degenerate = 0;
};

/// Everything a single optimisation step needs besides the parameters.
struct BatchInputs {
    Matrix inputs;                                // B x d
    std::vector<std::size_t> labels;              // relation index per row
    std::vector<std::size_t> population_index;    // for exemplar membership
    Matrix pair_anchor, pair_positive, pair_negative;  // inputs, P x d each
    const ExemplarSet* exemplars = nullptr;
    const ExemplarNegatives* exemplar_negatives = nullptr;
};

BatchGradients batch_gradients(const HeadParams& params, const BatchInputs& batch,
                               const TrainConfig& config);

TrainResult train(const TrainingData& data, const TrainConfig& config);

void save_loss_trace(const std::filesystem::path& path, const std::vector<EpochRecord>& trace);

}  // namespace mixore
