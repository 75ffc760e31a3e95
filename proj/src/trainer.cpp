#include "mixore/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_set>

#include "mixore/clustering.hpp"

namespace mixore {

namespace {

const char* kModule = "trainer";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

using Index = Eigen::Index;

Matrix uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = (2.0 * uniform_unit(rng) - 1.0) * bound;
    }
    return m;
}

nlohmann::json flat(const Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    }
    return out;
}

Matrix unflat(const nlohmann::json& j, Index rows, Index cols, const char* name) {
    const auto v = j.get<std::vector<double>>();
    if (static_cast<Index>(v.size()) != rows * cols) {
        fail(std::string("head parameter '") + name + "' has the wrong size");
    }
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
    }
    return m;
}

}  // namespace

// ---- parameters ------------------------------------------------------------

HeadParams HeadParams::init(std::size_t d, std::size_t hidden, std::size_t rep,
                            std::size_t classes, std::uint64_t seed) {
    if (d == 0 || hidden == 0 || rep == 0 || classes == 0) fail("head dimensions must be >= 1");
    Rng rng = make_rng(seed, 0x1417);
    const auto H = static_cast<Index>(hidden);
    const auto R = static_cast<Index>(rep);
    const auto C = static_cast<Index>(classes);
    const auto D = static_cast<Index>(d);
    HeadParams p;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    const double sc = 1.0 / std::sqrt(static_cast<double>(rep));
    p.w1 = uniform_matrix(H, D, s1, rng);
    p.b1 = uniform_matrix(H, 1, s1, rng);
    p.w2 = uniform_matrix(R, H, s2, rng);
    p.b2 = uniform_matrix(R, 1, s2, rng);
    p.wc = uniform_matrix(C, R, sc, rng);
    p.bc = uniform_matrix(C, 1, sc, rng);
    return p;
}

HeadParams HeadParams::zeros_like(const HeadParams& p) {
    HeadParams z;
    z.w1 = Matrix::Zero(p.w1.rows(), p.w1.cols());
    z.b1 = Vector::Zero(p.b1.size());
    z.w2 = Matrix::Zero(p.w2.rows(), p.w2.cols());
    z.b2 = Vector::Zero(p.b2.size());
    z.wc = Matrix::Zero(p.wc.rows(), p.wc.cols());
    z.bc = Vector::Zero(p.bc.size());
    return z;
}

bool HeadParams::all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() &&
           wc.allFinite() && bc.allFinite();
}

bool HeadParams::operator==(const HeadParams& o) const {
    auto same = [](const auto& a, const auto& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
    };
    return same(w1, o.w1) && same(b1, o.b1) && same(w2, o.w2) && same(b2, o.b2) &&
           same(wc, o.wc) && same(bc, o.bc);
}

nlohmann::json to_json(const HeadParams& p) {
    nlohmann::ordered_json j;
    j["shape"] = {{"input", p.input_dim()},
                  {"hidden", p.hidden_dim()},
                  {"rep", p.rep_dim()},
                  {"classes", p.classes()}};
    j["w1"] = flat(p.w1);
    j["b1"] = flat(p.b1);
    j["w2"] = flat(p.w2);
    j["b2"] = flat(p.b2);
    j["wc"] = flat(p.wc);
    j["bc"] = flat(p.bc);
    return nlohmann::json::parse(j.dump());
}

HeadParams head_params_from_json(const nlohmann::json& j) {
    HeadParams p;
    try {
        const auto& s = j.at("shape");
        const auto d = s.at("input").get<Index>();
        const auto h = s.at("hidden").get<Index>();
        const auto r = s.at("rep").get<Index>();
        const auto c = s.at("classes").get<Index>();
        p.w1 = unflat(j.at("w1"), h, d, "w1");
        p.b1 = unflat(j.at("b1"), h, 1, "b1");
        p.w2 = unflat(j.at("w2"), r, h, "w2");
        p.b2 = unflat(j.at("b2"), r, 1, "b2");
        p.wc = unflat(j.at("wc"), c, r, "wc");
        p.bc = unflat(j.at("bc"), c, 1, "bc");
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("invalid head parameters JSON: ") + e.what());
    }
    if (!p.all_finite()) fail("head parameters contain non-finite values");
    return p;
}

// ---- forward / backward ----------------------------------------------------

ForwardCache forward_batch(const HeadParams& p, const Matrix& inputs) {
    if (inputs.cols() != p.w1.cols()) {
        fail("input dimension " + std::to_string(inputs.cols()) + " != " +
             std::to_string(p.w1.cols()));
    }
    if (!inputs.allFinite()) fail("non-finite input");
    ForwardCache c;
    c.input = inputs;
    c.hidden = ((inputs * p.w1.transpose()).rowwise() + p.b1.transpose()).array().tanh();
    c.rep = (c.hidden * p.w2.transpose()).rowwise() + p.b2.transpose();
    c.logits = (c.rep * p.wc.transpose()).rowwise() + p.bc.transpose();
    return c;
}

std::pair<Vector, Vector> forward(const HeadParams& p, const Vector& x) {
    const auto c = forward_batch(p, x.transpose());
    return {c.rep.row(0).transpose(), c.logits.row(0).transpose()};
}

Matrix classifier_backward(const HeadParams& p, const ForwardCache& cache,
                           const Matrix& grad_logits, HeadParams& grads) {
    grads.wc += grad_logits.transpose() * cache.rep;
    grads.bc += grad_logits.colwise().sum().transpose();
    return grad_logits * p.wc;
}

void head_backward(const HeadParams& p, const ForwardCache& cache, const Matrix& grad_rep,
                   HeadParams& grads) {
    grads.w2 += grad_rep.transpose() * cache.hidden;
    grads.b2 += grad_rep.colwise().sum().transpose();
    const Matrix grad_hidden = grad_rep * p.w2;
    const Matrix grad_pre =
        (grad_hidden.array() * (1.0 - cache.hidden.array().square())).matrix();
    grads.w1 += grad_pre.transpose() * cache.input;
    grads.b1 += grad_pre.colwise().sum().transpose();
}

// ---- classification loss ---------------------------------------------------

LossValue loss_classification(const Matrix& logits, std::span<const std::size_t> labels) {
    const Index b = logits.rows();
    const Index c = logits.cols();
    if (b == 0) fail("classification loss on an empty batch");
    if (static_cast<Index>(labels.size()) != b) fail("label count does not match batch");
    LossValue out;
    out.grad.resize(b, c);
    double total = 0.0;
    for (Index i = 0; i < b; ++i) {
        const auto y = static_cast<Index>(labels[static_cast<std::size_t>(i)]);
        if (y >= c) fail("label " + std::to_string(y) + " out of range");
        const double mx = logits.row(i).maxCoeff();
        const RowVector e = (logits.row(i).array() - mx).exp();
        const double z = e.sum();
        total += std::log(z) + mx - logits(i, y);
        out.grad.row(i) = e / z;
        out.grad(i, y) -= 1.0;
    }
    out.value = total / static_cast<double>(b);
    out.grad /= static_cast<double>(b);
    return out;
}

// ---- positive pairs & triplet loss ----------------------------------------

std::vector<PositivePair> sample_positive_pairs(std::span<const std::size_t> labels,
                                                std::size_t count, Rng& rng) {
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    std::vector<const std::vector<std::size_t>*> eligible;
    for (const auto& [label, members] : groups) {
        if (members.size() >= 2) eligible.push_back(&members);
    }
    if (eligible.empty()) fail("no relation has two labeled instances to form a positive pair");
    if (count == 0) return {};

    const std::size_t quota = (count + eligible.size() - 1) / eligible.size();
    std::vector<std::vector<PositivePair>> per_relation;
    for (const auto* members : eligible) {
        const std::size_t n = members->size();
        const std::size_t available = n * (n - 1) / 2;
        std::vector<std::size_t> ids;
        if (available <= quota) {
            ids.resize(available);
            std::iota(ids.begin(), ids.end(), std::size_t{0});
            shuffle(ids.begin(), ids.end(), rng);
        } else {
            std::unordered_set<std::size_t> taken;
            while (ids.size() < quota) {
                const auto id = uniform_index(rng, available);
                if (taken.insert(id).second) ids.push_back(id);
            }
        }
        std::vector<PositivePair> pairs;
        pairs.reserve(ids.size());
        for (auto id : ids) {
            std::size_t i = 0;
            while (id >= n - 1 - i) {
                id -= n - 1 - i;
                ++i;
            }
            const std::size_t j = i + 1 + id;
            PositivePair pair{(*members)[i], (*members)[j]};
            if (rng() & 1U) std::swap(pair.anchor, pair.positive);
            pairs.push_back(pair);
        }
        per_relation.push_back(std::move(pairs));
    }

    std::vector<PositivePair> out;
    out.reserve(count);
    for (std::size_t round = 0; out.size() < count; ++round) {
        bool any = false;
        for (const auto& pairs : per_relation) {
            if (round < pairs.size() && out.size() < count) {
                out.push_back(pairs[round]);
                any = true;
            }
        }
        if (!any) break;
    }
    return out;
}

std::vector<PositivePair> sample_positive_pairs(std::span<const std::size_t> labels,
                                                std::size_t count, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x9a1);
    return sample_positive_pairs(labels, count, rng);
}

std::optional<std::vector<std::size_t>> sample_negatives(std::span<const std::size_t> labels,
                                                         std::span<const PositivePair> pairs,
                                                         Rng& rng) {
    // Positions sorted by label so each label owns one contiguous block.
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> block;
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto [it, inserted] = block.try_emplace(labels[order[k]], k, k + 1);
        if (!inserted) it->second.second = k + 1;
    }
    std::vector<std::size_t> out;
    out.reserve(pairs.size());
    for (const auto& pair : pairs) {
        const auto [lo, hi] = block.at(labels[pair.anchor]);
        const std::size_t others = order.size() - (hi - lo);
        if (others == 0) return std::nullopt;
        std::size_t r = uniform_index(rng, others);
        if (r >= lo) r += hi - lo;
        out.push_back(order[r]);
    }
    return out;
}

double cosine_distance(const Vector& u, const Vector& v) {
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return 1.0;
    return 1.0 - u.dot(v) / (nu * nv);
}

namespace {

// Accumulates -scale * d cos(u, v) into gu and gv. Returns false on zero norm.
bool cosine_grad(const RowVector& u, const RowVector& v, double scale, Eigen::Ref<RowVector, 0, Eigen::InnerStride<>> gu,
                 Eigen::Ref<RowVector, 0, Eigen::InnerStride<>> gv) {
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return false;
    const double cos = u.dot(v) / (nu * nv);
    gu += scale * (v / (nu * nv) - cos * u / (nu * nu));
    gv += scale * (u / (nu * nv) - cos * v / (nv * nv));
    return true;
}

}  // namespace

TripletLoss loss_triplet(const Matrix& anchors, const Matrix& positives, const Matrix& negatives,
                         double margin) {
    const Index p = anchors.rows();
    if (positives.rows() != p || negatives.rows() != p) fail("triplet row counts differ");
    TripletLoss out;
    out.grad_anchor = Matrix::Zero(p, anchors.cols());
    out.grad_positive = Matrix::Zero(p, anchors.cols());
    out.grad_negative = Matrix::Zero(p, anchors.cols());
    if (p == 0) return out;
    const double inv = 1.0 / static_cast<double>(p);
    for (Index i = 0; i < p; ++i) {
        const RowVector a = anchors.row(i);
        const RowVector pos = positives.row(i);
        const RowVector neg = negatives.row(i);
        const bool degenerate = a.norm() == 0.0 || pos.norm() == 0.0 || neg.norm() == 0.0;
        if (degenerate) ++out.degenerate;
        const double term = cosine_distance(a.transpose(), pos.transpose()) -
                            cosine_distance(a.transpose(), neg.transpose()) + margin;
        if (term <= 0.0) continue;
        ++out.active;
        out.value += term * inv;
        // d(1 - cos(a,p)) = -d cos(a,p); d(-(1 - cos(a,n))) = +d cos(a,n).
        cosine_grad(a, pos, -inv, out.grad_anchor.row(i), out.grad_positive.row(i));
        cosine_grad(a, neg, inv, out.grad_anchor.row(i), out.grad_negative.row(i));
    }
    return out;
}

// ---- exemplars -------------------------------------------------------------

namespace {

Matrix normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (Index r = 0; r < out.rows(); ++r) {
        const double n = out.row(r).norm();
        if (n > 0.0) out.row(r) /= n;
    }
    return out;
}

}  // namespace

ExemplarSet compute_exemplars(const Matrix& reps, std::span<const std::size_t> layer_sizes,
                              std::uint64_t seed) {
    if (reps.rows() < 1) fail("cannot compute exemplars of an empty population");
    const Matrix unit = normalize_rows(reps);
    const auto n = static_cast<std::size_t>(reps.rows());
    ExemplarSet set;
    for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
        std::size_t k = layer_sizes[l];
        if (k < 1) fail("granularity layer sizes must be >= 1");
        if (k > n) {
            set.warnings.push_back("granularity layer " + std::to_string(l) + " clamped from " +
                                   std::to_string(k) + " to " + std::to_string(n) + " exemplars");
            k = n;
        }
        if (k == 1) {
            set.warnings.push_back("granularity layer " + std::to_string(l) +
                                   " has a single exemplar and contributes no loss");
        }
        const auto km = kmeans(unit, k, seed ^ (0x9e3779b97f4a7c15ULL * (l + 1)));
        ExemplarLayer layer;
        layer.centroids = normalize_rows(km.centroids);
        layer.membership = km.assignments;
        set.layers.push_back(std::move(layer));
    }
    return set;
}

ExemplarNegatives sample_exemplar_negatives(const ExemplarSet& exemplars,
                                            std::span<const std::size_t> population_index,
                                            std::size_t negatives, Rng& rng) {
    ExemplarNegatives out(population_index.size());
    for (std::size_t b = 0; b < population_index.size(); ++b) {
        out[b].resize(exemplars.layers.size());
        for (std::size_t l = 0; l < exemplars.layers.size(); ++l) {
            const auto& layer = exemplars.layers[l];
            const auto pos = layer.membership.at(population_index[b]);
            const auto c = static_cast<std::size_t>(layer.centroids.rows());
            std::vector<std::size_t> cand;
            cand.reserve(c);
            for (std::size_t q = 0; q < c; ++q) {
                if (q != pos) cand.push_back(q);
            }
            if (cand.size() > negatives) {
                for (std::size_t t = 0; t < negatives; ++t) {
                    std::swap(cand[t], cand[t + uniform_index(rng, cand.size() - t)]);
                }
                cand.resize(negatives);
            }
            out[b][l] = std::move(cand);
        }
    }
    return out;
}

LossValue loss_exemplar(const Matrix& reps, std::span<const std::size_t> population_index,
                        const ExemplarSet& exemplars, const ExemplarNegatives& negatives,
                        const ExemplarLossOptions& options) {
    if (!(options.temperature > 0.0)) fail("temperature must be positive");
    const Index b = reps.rows();
    if (static_cast<Index>(population_index.size()) != b) fail("population index size mismatch");
    LossValue out;
    out.grad = Matrix::Zero(b, reps.cols());
    const std::size_t layers = exemplars.layers.size();
    if (layers == 0 || b == 0) return out;
    if (!options.full_denominator && static_cast<Index>(negatives.size()) != b) {
        fail("exemplar negatives do not match the batch");
    }
    const double layer_weight = 1.0 / static_cast<double>(layers);
    const double batch_weight = options.mean_over_batch ? 1.0 / static_cast<double>(b) : 1.0;
    const double inv_tau = 1.0 / options.temperature;

    for (Index i = 0; i < b; ++i) {
        const RowVector h = reps.row(i);
        const double norm = h.norm();
        if (norm == 0.0) continue;
        const RowVector unit = h / norm;
        RowVector grad_unit = RowVector::Zero(reps.cols());
        for (std::size_t l = 0; l < layers; ++l) {
            const auto& layer = exemplars.layers[l];
            if (layer.centroids.rows() < 2) continue;
            const auto pos = layer.membership.at(population_index[static_cast<std::size_t>(i)]);
            std::vector<std::size_t> set{pos};
            if (options.full_denominator) {
                for (std::size_t q = 0; q < static_cast<std::size_t>(layer.centroids.rows()); ++q) {
                    if (q != pos) set.push_back(q);
                }
            } else {
                const auto& neg = negatives[static_cast<std::size_t>(i)].at(l);
                set.insert(set.end(), neg.begin(), neg.end());
            }
            Vector s(static_cast<Index>(set.size()));
            for (std::size_t q = 0; q < set.size(); ++q) {
                s(static_cast<Index>(q)) = unit.dot(layer.centroids.row(static_cast<Index>(set[q]))) * inv_tau;
            }
            const double mx = s.maxCoeff();
            const Vector e = (s.array() - mx).exp();
            const double z = e.sum();
            out.value += batch_weight * layer_weight * (std::log(z) + mx - s(0));
            for (std::size_t q = 0; q < set.size(); ++q) {
                const double coeff = e(static_cast<Index>(q)) / z - (q == 0 ? 1.0 : 0.0);
                grad_unit += (batch_weight * layer_weight * inv_tau * coeff) *
                             layer.centroids.row(static_cast<Index>(set[q]));
            }
        }
        // Back through h / ||h||.
        out.grad.row(i) = (grad_unit - unit * unit.dot(grad_unit)) / norm;
    }
    return out;
}

LossValue loss_exemplar(const Matrix& reps, std::span<const std::size_t> population_index,
                        const ExemplarSet& exemplars, std::size_t negatives, std::uint64_t seed,
                        const ExemplarLossOptions& options) {
    Rng rng = make_rng(seed, 0xe8e);
    const auto neg = sample_exemplar_negatives(exemplars, population_index, negatives, rng);
    return loss_exemplar(reps, population_index, exemplars, neg, options);
}

// ---- optimiser -------------------------------------------------------------

AdamW::AdamW(const HeadParams& shape, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(HeadParams::zeros_like(shape)), v_(HeadParams::zeros_like(shape)) {}

template <typename T>
void AdamW::update(T& param, const T& grad, T& m, T& v, long t) {
    param *= (1.0 - lr_ * wd_);
    m = beta1_ * m + (1.0 - beta1_) * grad;
    v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
}

void AdamW::step(HeadParams& params, const HeadParams& grads, bool update_theta, bool update_phi) {
    if (update_theta) {
        ++t_theta_;
        update(params.w1, grads.w1, m_.w1, v_.w1, t_theta_);
        update(params.b1, grads.b1, m_.b1, v_.b1, t_theta_);
        update(params.w2, grads.w2, m_.w2, v_.w2, t_theta_);
        update(params.b2, grads.b2, m_.b2, v_.b2, t_theta_);
    }
    if (update_phi) {
        ++t_phi_;
        update(params.wc, grads.wc, m_.wc, v_.wc, t_phi_);
        update(params.bc, grads.bc, m_.bc, v_.bc, t_phi_);
    }
}

// ---- configuration ---------------------------------------------------------

void TrainConfig::validate() const {
    if (!(margin >= 0.0)) fail("margin must be >= 0");
    if (!(temperature > 0.0)) fail("temperature must be > 0");
    if (negatives < 1) fail("negatives must be >= 1");
    if (warmup_epochs < 0 || continual_epochs < 0) fail("epochs must be >= 0");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (pair_multiplier < 1) fail("pair_multiplier must be >= 1");
    if (hidden_dim < 1 || rep_dim < 1) fail("head dimensions must be >= 1");
    for (auto c : granularity_layers) {
        if (c < 1) fail("granularity layer sizes must be >= 1");
    }
}

std::vector<std::size_t> TrainConfig::resolved_layers(std::size_t total_classes) const {
    if (!granularity_layers.empty()) return granularity_layers;
    return {16, 32, total_classes, 64};
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"margin", c.margin},
            {"temperature", c.temperature},
            {"negatives", c.negatives},
            {"warmup_epochs", c.warmup_epochs},
            {"continual_epochs", c.continual_epochs},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"granularity_layers", c.granularity_layers},
            {"pair_multiplier", c.pair_multiplier},
            {"hidden_dim", c.hidden_dim},
            {"rep_dim", c.rep_dim},
            {"exemplar_mean", c.exemplar_mean},
            {"exemplar_full_denominator", c.exemplar_full_denominator},
            {"use_classification", c.use_classification},
            {"use_triplet", c.use_triplet},
            {"use_exemplar", c.use_exemplar},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        c.margin = j.value("margin", c.margin);
        c.temperature = j.value("temperature", c.temperature);
        c.negatives = j.value("negatives", c.negatives);
        c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
        c.continual_epochs = j.value("continual_epochs", c.continual_epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.granularity_layers = j.value("granularity_layers", c.granularity_layers);
        c.pair_multiplier = j.value("pair_multiplier", c.pair_multiplier);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        c.rep_dim = j.value("rep_dim", c.rep_dim);
        c.exemplar_mean = j.value("exemplar_mean", c.exemplar_mean);
        c.exemplar_full_denominator = j.value("exemplar_full_denominator", c.exemplar_full_denominator);
        c.use_classification = j.value("use_classification", c.use_classification);
        c.use_triplet = j.value("use_triplet", c.use_triplet);
        c.use_exemplar = j.value("use_exemplar", c.use_exemplar);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("invalid phase2 config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- training --------------------------------------------------------------

BatchGradients batch_gradients(const HeadParams& params, const BatchInputs& batch,
                               const TrainConfig& config) {
    BatchGradients out;
    out.grads = HeadParams::zeros_like(params);
    const auto cache = forward_batch(params, batch.inputs);
    Matrix grad_rep = Matrix::Zero(cache.rep.rows(), cache.rep.cols());

    if (config.use_classification) {
        const auto lc = loss_classification(cache.logits, batch.labels);
        out.classification = lc.value;
        grad_rep += classifier_backward(params, cache, lc.grad, out.grads);
    }
    if (config.use_exemplar && batch.exemplars != nullptr) {
        static const ExemplarNegatives kNone;
        ExemplarLossOptions opts{config.temperature, config.exemplar_mean,
                                 config.exemplar_full_denominator};
        const auto le = loss_exemplar(cache.rep, batch.population_index, *batch.exemplars,
                                      batch.exemplar_negatives ? *batch.exemplar_negatives : kNone,
                                      opts);
        out.exemplar = le.value;
        grad_rep += le.grad;
    }
    head_backward(params, cache, grad_rep, out.grads);

    const Index p = batch.pair_anchor.rows();
    if (config.use_triplet && p > 0) {
        Matrix stacked(3 * p, batch.pair_anchor.cols());
        stacked << batch.pair_anchor, batch.pair_positive, batch.pair_negative;
        const auto pc = forward_batch(params, stacked);
        const auto lt = loss_triplet(pc.rep.topRows(p), pc.rep.middleRows(p, p),
                                     pc.rep.bottomRows(p), config.margin);
        out.triplet = lt.value;
        out.triplet_degenerate = lt.degenerate;
        Matrix g(3 * p, pc.rep.cols());
        g << lt.grad_anchor, lt.grad_positive, lt.grad_negative;
        head_backward(params, pc, g, out.grads);
    }
    return out;
}

namespace {

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Index>(rows.size()), source.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.row(static_cast<Index>(r)) = source.row(static_cast<Index>(rows[r]));
    }
    return out;
}

struct Item {
    std::size_t population;  // row in [labeled; unlabeled]
    std::size_t label;
};

}  // namespace

TrainResult train(const TrainingData& data, const TrainConfig& config) {
    config.validate();
    const Index m = data.labeled.rows();
    if (m == 0) fail("labeled set is empty");
    if (static_cast<Index>(data.labeled_labels.size()) != m) fail("labeled label count mismatch");
    if (data.total_classes <= data.known_count || data.known_count == 0) {
        fail("need 1 <= known_count < total_classes");
    }
    if (data.unlabeled.rows() > 0 && data.unlabeled.cols() != data.labeled.cols()) {
        fail("labeled and unlabeled dimensions differ");
    }
    for (auto y : data.labeled_labels) {
        if (y >= data.known_count) fail("labeled instance carries a non-known relation index");
    }
    for (const auto& [row, y] : data.weak) {
        if (static_cast<Index>(row) >= data.unlabeled.rows()) fail("weak label row out of range");
        if (y >= data.total_classes) fail("weak label relation index out of range");
    }

    TrainResult result;
    const auto layers = config.resolved_layers(data.total_classes);
    result.params = HeadParams::init(static_cast<std::size_t>(data.labeled.cols()), config.hidden_dim,
                                     config.rep_dim, data.total_classes, config.seed);
    AdamW opt(result.params, config.learning_rate, config.weight_decay);
    Rng rng = make_rng(config.seed, 0x7a1);

    Matrix population(m + data.unlabeled.rows(), data.labeled.cols());
    population << data.labeled, data.unlabeled;

    bool triplet_enabled = config.use_triplet;
    if (triplet_enabled) {
        try {
            Rng probe = make_rng(config.seed, 0);
            const auto pairs = sample_positive_pairs(data.labeled_labels, 1, probe);
            if (!sample_negatives(data.labeled_labels, pairs, probe)) {
                result.warnings.push_back("single labeled relation: triplet loss disabled");
                triplet_enabled = false;
            }
        } catch (const Error& e) {
            result.warnings.push_back(std::string(e.what()) + "; triplet loss disabled");
            triplet_enabled = false;
        }
    }
    TrainConfig effective = config;
    effective.use_triplet = triplet_enabled;
    const bool update_theta =
        config.use_classification || triplet_enabled || config.use_exemplar;

    const int epochs = config.warmup_epochs + config.continual_epochs;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const bool warmup = epoch < config.warmup_epochs;

        ExemplarSet exemplars;
        if (config.use_exemplar) {
            const auto reps = forward_batch(result.params, population).rep;
            exemplars = compute_exemplars(reps, layers, config.seed + 1000003ULL * (epoch + 1));
            if (epoch == 0) {
                result.warnings.insert(result.warnings.end(), exemplars.warnings.begin(),
                                       exemplars.warnings.end());
            }
        }

        std::vector<Item> items;
        items.reserve(static_cast<std::size_t>(m) + data.weak.size());
        for (Index i = 0; i < m; ++i) {
            items.push_back({static_cast<std::size_t>(i), data.labeled_labels[static_cast<std::size_t>(i)]});
        }
        if (!warmup) {
            for (const auto& [row, y] : data.weak) {
                items.push_back({static_cast<std::size_t>(m) + row, y});
            }
        }
        shuffle(items.begin(), items.end(), rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = warmup ? "warmup" : "continual";
        std::size_t batches = 0;
        std::size_t degenerate = 0;
        for (std::size_t start = 0; start < items.size(); start += config.batch_size) {
            const std::size_t end = std::min(items.size(), start + config.batch_size);
            BatchInputs batch;
            std::vector<std::size_t> rows;
            for (std::size_t k = start; k < end; ++k) {
                rows.push_back(items[k].population);
                batch.labels.push_back(items[k].label);
            }
            batch.inputs = gather_rows(population, rows);
            batch.population_index = rows;

            if (triplet_enabled) {
                const auto pairs = sample_positive_pairs(
                    data.labeled_labels, config.pair_multiplier * rows.size(), rng);
                const auto negs = sample_negatives(data.labeled_labels, pairs, rng);
                std::vector<std::size_t> a, p;
                for (const auto& pair : pairs) {
                    a.push_back(pair.anchor);
                    p.push_back(pair.positive);
                }
                batch.pair_anchor = gather_rows(data.labeled, a);
                batch.pair_positive = gather_rows(data.labeled, p);
                batch.pair_negative = gather_rows(data.labeled, *negs);
            }
            ExemplarNegatives exneg;
            if (config.use_exemplar) {
                batch.exemplars = &exemplars;
                if (!config.exemplar_full_denominator) {
                    exneg = sample_exemplar_negatives(exemplars, rows, config.negatives, rng);
                    batch.exemplar_negatives = &exneg;
                }
            }

            const auto bg = batch_gradients(result.params, batch, effective);
            const double total = bg.classification + bg.triplet + bg.exemplar;
            if (!std::isfinite(total)) {
                fail("non-finite loss at epoch " + std::to_string(epoch));
            }
            opt.step(result.params, bg.grads, update_theta, config.use_classification);
            if (!result.params.all_finite()) {
                fail("parameters diverged at epoch " + std::to_string(epoch));
            }
            rec.classification += bg.classification;
            rec.triplet += bg.triplet;
            rec.exemplar += bg.exemplar;
            degenerate += bg.triplet_degenerate;
            ++batches;
        }
        if (degenerate > 0) {
            result.warnings.push_back("epoch " + std::to_string(epoch) + ": " + std::to_string(degenerate) +
                                      " triplet(s) touched a zero-norm representation (distance taken as 1)");
        }
        if (batches > 0) {
            rec.classification /= static_cast<double>(batches);
            rec.triplet /= static_cast<double>(batches);
            rec.exemplar /= static_cast<double>(batches);
        }
        rec.total = rec.classification + rec.triplet + rec.exemplar;
        result.trace.push_back(rec);
    }
    return result;
}

void save_loss_trace(const std::filesystem::path& path, const std::vector<EpochRecord>& trace) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    out << "epoch,phase,L_c,L_lm,L_e,total\n";
    char buf[256];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.phase.c_str(),
                      r.classification, r.triplet, r.exemplar, r.total);
        out << buf;
    }
}

}  // namespace mixore
