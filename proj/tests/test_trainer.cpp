#include <algorithm>
#include <functional>
#include <set>

#include "doctest.h"
#include "mixore/trainer.hpp"
#include "oracles.hpp"

using namespace mixore;
using namespace mixore::test;

namespace {
TrainingData separated_data(std::size_t per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    TrainingData d;
    d.known_count = 2;
    d.total_classes = 3;
    d.labeled = Matrix(static_cast<Eigen::Index>(2 * per_class), 4);
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const auto y = i % 2;
        for (Eigen::Index c = 0; c < 4; ++c) d.labeled(static_cast<Eigen::Index>(i), c) = n(rng);
        d.labeled(static_cast<Eigen::Index>(i), 0) += y ? 10.0 : -10.0;
        d.labeled_labels.push_back(y);
    }
    d.unlabeled = Matrix(static_cast<Eigen::Index>(per_class), 4);
    for (std::size_t i = 0; i < per_class; ++i) {
        for (Eigen::Index c = 0; c < 4; ++c) d.unlabeled(static_cast<Eigen::Index>(i), c) = n(rng);
        d.unlabeled(static_cast<Eigen::Index>(i), 1) += 10.0;
        if (i % 2 == 0) d.weak.emplace_back(i, 2);
    }
    return d;
}

TrainConfig small_train_config() {
    TrainConfig c;
    c.hidden_dim = 16;
    c.rep_dim = 8;
    c.batch_size = 16;
    c.granularity_layers = {2, 3, 4};
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("forward: zero parameters give zero outputs") {
    auto p = HeadParams::zeros_like(HeadParams::init(3, 4, 5, 2, 0));
    Vector x(3);
    x << 1, -2, 3;
    const auto [rep, logits] = forward(p, x);
    CHECK(rep.isZero(0.0));
    CHECK(logits.isZero(0.0));
}

TEST_CASE("forward: identity head in the linear region reproduces the input") {
    auto p = HeadParams::zeros_like(HeadParams::init(4, 4, 4, 2, 0));
    p.w1 = Matrix::Identity(4, 4);
    p.w2 = Matrix::Identity(4, 4);
    Vector x(4);
    x << 1e-4, -2e-4, 3e-5, 0.0;
    const auto [rep, logits] = forward(p, x);
    CHECK((rep - x).norm() <= 1e-11);
}

TEST_CASE("forward: batch equals stacked single forwards") {
    const auto p = HeadParams::init(5, 6, 4, 3, 9);
    std::mt19937_64 rng(1);
    const Matrix xs = test::random_matrix(2, 5, rng);
    const auto cache = forward_batch(p, xs);
    for (Eigen::Index i = 0; i < 2; ++i) {
        const auto [rep, logits] = forward(p, xs.row(i).transpose());
        CHECK((cache.rep.row(i).transpose() - rep).norm() == 0.0);
        CHECK((cache.logits.row(i).transpose() - logits).norm() == 0.0);
    }
    Vector bad = Vector::Zero(5);
    bad(2) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(forward(p, bad), Error);
}

TEST_CASE("loss_classification: analytic values") {
    const Matrix uniform = Matrix::Zero(3, 4);
    const std::vector<std::size_t> y{0, 1, 3};
    CHECK(loss_classification(uniform, y).value == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    Matrix sharp = Matrix::Zero(1, 3);
    sharp(0, 2) = 200.0;
    const std::vector<std::size_t> y2{2};
    CHECK(loss_classification(sharp, y2).value < 1e-80);

    const std::vector<std::size_t> bad{4};
    CHECK_THROWS_AS(loss_classification(Matrix::Zero(1, 4), bad), Error);
    CHECK_THROWS_AS(loss_classification(Matrix::Zero(0, 4), {}), Error);
}

TEST_CASE("loss_classification: gradient and batch-order invariance") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Matrix logits = test::random_matrix(7, 5, rng, 2.0);
        std::vector<std::size_t> y;
        for (int i = 0; i < 7; ++i) y.push_back((i * 3 + seed) % 5);
        const auto lc = loss_classification(logits, y);
        const auto num = numeric_gradient(logits, [&] { return loss_classification(logits, y).value; });
        CHECK(grad_rel_error(lc.grad, num) <= kTol);

        std::vector<Eigen::Index> perm(7);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix shuffled(7, 5);
        std::vector<std::size_t> ys(7);
        for (int i = 0; i < 7; ++i) {
            shuffled.row(i) = logits.row(perm[static_cast<std::size_t>(i)]);
            ys[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        }
        CHECK(std::abs(loss_classification(shuffled, ys).value - lc.value) <= 1e-12);
    }
}

TEST_CASE("sample_positive_pairs: worked examples") {
    const std::vector<std::size_t> one{0, 0};
    const auto p1 = sample_positive_pairs(one, 1, 0);
    REQUIRE(p1.size() == 1);
    CHECK(std::set<std::size_t>{p1[0].anchor, p1[0].positive} == std::set<std::size_t>{0, 1});

    std::vector<std::size_t> two;
    for (int i = 0; i < 20; ++i) two.push_back(i < 10 ? 0 : 1);
    const auto p2 = sample_positive_pairs(two, 10, 4);
    REQUIRE(p2.size() == 10);
    std::size_t rel0 = 0;
    for (const auto& p : p2) {
        CHECK(two[p.anchor] == two[p.positive]);
        CHECK(p.anchor != p.positive);
        rel0 += two[p.anchor] == 0;
    }
    CHECK(rel0 == 5);

    std::vector<std::size_t> mixed{0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2};
    const auto p3 = sample_positive_pairs(mixed, 200, 7);
    std::set<std::pair<std::size_t, std::size_t>> small;
    for (const auto& p : p3) {
        if (mixed[p.anchor] == 0) small.insert(std::minmax(p.anchor, p.positive));
    }
    CHECK(small.size() == 1);
    std::size_t small_count = 0;
    for (const auto& p : p3) small_count += mixed[p.anchor] == 0;
    CHECK(small_count == 1);
}

TEST_CASE("sample_positive_pairs: balance, distinctness, determinism") {
    std::vector<std::size_t> labels;
    for (int i = 0; i < 60; ++i) labels.push_back(i % 4);
    for (std::size_t count : {1u, 7u, 40u, 321u}) {
        const auto a = sample_positive_pairs(labels, count, 11);
        const auto b = sample_positive_pairs(labels, count, 11);
        CHECK(a == b);
        CHECK(a.size() == count);
        std::map<std::size_t, std::size_t> per;
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (const auto& p : a) {
            CHECK(labels[p.anchor] == labels[p.positive]);
            CHECK(seen.insert(std::minmax(p.anchor, p.positive)).second);
            per[labels[p.anchor]]++;
        }
        const std::size_t quota = (count + 3) / 4;
        for (const auto& [rel, n] : per) CHECK(n <= quota);
    }
    const std::vector<std::size_t> none{0, 1, 2};
    CHECK_THROWS_AS(sample_positive_pairs(none, 3, 0), Error);
}

TEST_CASE("sample_negatives: other relations only") {
    std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2};
    Rng rng = make_rng(1);
    const auto pairs = sample_positive_pairs(labels, 12, rng);
    const auto neg = sample_negatives(labels, pairs, rng);
    REQUIRE(neg);
    REQUIRE(neg->size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(labels[(*neg)[i]] != labels[pairs[i].anchor]);
    const std::vector<std::size_t> single{0, 0, 0};
    const auto sp = sample_positive_pairs(single, 2, rng);
    CHECK_FALSE(sample_negatives(single, sp, rng));
}

TEST_CASE("loss_triplet: worked examples") {
    Matrix a(1, 2), p(1, 2), n(1, 2);
    a << 1, 0;
    p << 1, 0;
    n << 0, 1;
    CHECK(loss_triplet(a, p, n, 0.75).value == 0.0);

    // dist(a, p) = 0.5 and dist(a, n) = 0.2.
    p << 0.5, std::sqrt(0.75);
    n << 0.8, 0.6;
    CHECK(loss_triplet(a, p, n, 0.75).value == doctest::Approx(1.05).epsilon(1e-14));

    Matrix z = Matrix::Zero(1, 2);
    const auto deg = loss_triplet(a, z, n, 0.75);
    CHECK(deg.degenerate == 1);
    CHECK(deg.value == doctest::Approx(1.0 - 0.2 + 0.75));
}

TEST_CASE("loss_triplet: gradient away from the hinge") {
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Matrix a = test::random_matrix(5, 8, rng), p = test::random_matrix(5, 8, rng),
               n = test::random_matrix(5, 8, rng);
        const double margin = 0.3;
        bool near = false;
        for (Eigen::Index i = 0; i < 5; ++i) {
            const double t = cosine_distance(a.row(i).transpose(), p.row(i).transpose()) -
                             cosine_distance(a.row(i).transpose(), n.row(i).transpose()) + margin;
            near = near || std::abs(t) < 1e-6;
        }
        if (near) continue;
        const auto lt = loss_triplet(a, p, n, margin);
        auto f = [&] { return loss_triplet(a, p, n, margin).value; };
        CHECK(grad_rel_error(lt.grad_anchor, numeric_gradient(a, f)) <= kTol);
        CHECK(grad_rel_error(lt.grad_positive, numeric_gradient(p, f)) <= kTol);
        CHECK(grad_rel_error(lt.grad_negative, numeric_gradient(n, f)) <= kTol);
        ++checked;
    }
}

TEST_CASE("compute_exemplars: examples and invariants") {
    std::mt19937_64 rng(3);
    const Matrix reps = test::random_matrix(12, 3, rng);
    const std::vector<std::size_t> one{1};
    const auto e1 = compute_exemplars(reps, one, 0);
    RowVector mean = RowVector::Zero(3);
    for (Eigen::Index i = 0; i < 12; ++i) mean += reps.row(i) / reps.row(i).norm();
    CHECK((e1.layers[0].centroids.row(0) - mean / mean.norm()).norm() < 1e-12);
    CHECK_FALSE(e1.warnings.empty());

    Matrix anti(8, 2);
    anti << 1, 0.01, 2, -0.01, 3, 0.02, 1, 0, -1, 0.01, -2, 0, -1, -0.02, -5, 0.01;
    const std::vector<std::size_t> two{2};
    const auto e2 = compute_exemplars(anti, two, 1);
    const auto& c = e2.layers[0].centroids;
    CHECK(std::abs(std::abs(c(0, 0)) - 1.0) < 1e-3);
    CHECK(c(0, 0) * c(1, 0) < 0.0);
    for (int i = 0; i < 8; ++i) {
        CHECK(e2.layers[0].membership[static_cast<std::size_t>(i)] ==
              e2.layers[0].membership[i < 4 ? 0u : 4u]);
    }

    const std::vector<std::size_t> layers{2, 5, 30};
    const auto a = compute_exemplars(reps, layers, 9);
    const auto b = compute_exemplars(reps, layers, 9);
    REQUIRE(a.layers.size() == 3);
    CHECK(a.layers[2].centroids.rows() == 12);  // clamped
    CHECK_FALSE(a.warnings.empty());
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(a.layers[l].centroids == b.layers[l].centroids);
        CHECK(a.layers[l].membership == b.layers[l].membership);
        for (Eigen::Index r = 0; r < a.layers[l].centroids.rows(); ++r) {
            CHECK(a.layers[l].centroids.row(r).norm() == doctest::Approx(1.0));
        }
        for (auto m : a.layers[l].membership) CHECK(m < static_cast<std::size_t>(a.layers[l].centroids.rows()));
    }
}

TEST_CASE("loss_exemplar: hand value and saturation") {
    ExemplarSet set;
    ExemplarLayer layer;
    layer.centroids = Matrix::Identity(2, 2);
    layer.membership = {0};
    set.layers.push_back(layer);
    Matrix rep(1, 2);
    rep << 2.0, 0.0;
    const std::vector<std::size_t> idx{0};
    const ExemplarNegatives neg{{{1}}};
    ExemplarLossOptions opt;
    opt.temperature = 1.0;
    const double e = std::exp(1.0);
    CHECK(loss_exemplar(rep, idx, set, neg, opt).value == doctest::Approx(-std::log(e / (e + 1.0))).epsilon(1e-14));
    CHECK(loss_exemplar(rep, idx, set, neg, opt).value == doctest::Approx(0.31326).epsilon(1e-5));
    opt.temperature = 1e-3;
    CHECK(loss_exemplar(rep, idx, set, neg, opt).value < 1e-12);

    // A single exemplar contributes nothing.
    ExemplarSet lone;
    ExemplarLayer l1;
    l1.centroids = Matrix::Identity(1, 2);
    l1.membership = {0};
    lone.layers.push_back(l1);
    const ExemplarNegatives none{{{}}};
    CHECK(loss_exemplar(rep, idx, lone, none, opt).value == 0.0);
}

TEST_CASE("loss_exemplar: sum versus mean, J negatives") {
    const auto s = random_setup(5);
    const auto reps = forward_batch(s.params, s.batch.inputs).rep;
    ExemplarLossOptions sum_opt;
    sum_opt.temperature = 0.3;
    ExemplarLossOptions mean_opt = sum_opt;
    mean_opt.mean_over_batch = true;
    const double sum = loss_exemplar(reps, s.batch.population_index, s.exemplars, s.negatives, sum_opt).value;
    const double mean = loss_exemplar(reps, s.batch.population_index, s.exemplars, s.negatives, mean_opt).value;
    CHECK(mean * 6.0 == doctest::Approx(sum).epsilon(1e-12));
    for (const auto& per_item : s.negatives) {
        for (std::size_t l = 0; l < per_item.size(); ++l) {
            const auto c = static_cast<std::size_t>(s.exemplars.layers[l].centroids.rows());
            CHECK(per_item[l].size() == std::min<std::size_t>(2, c - 1));
            CHECK(std::set<std::size_t>(per_item[l].begin(), per_item[l].end()).size() == per_item[l].size());
        }
    }
}

TEST_CASE("loss_exemplar: gradient vs finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto s = random_setup(seed);
        Matrix reps = forward_batch(s.params, s.batch.inputs).rep;
        for (bool full : {false, true}) {
            for (bool mean : {false, true}) {
                ExemplarLossOptions opt{0.2, mean, full};
                const auto le = loss_exemplar(reps, s.batch.population_index, s.exemplars, s.negatives, opt);
                const auto num = numeric_gradient(reps, [&] {
                    return loss_exemplar(reps, s.batch.population_index, s.exemplars, s.negatives, opt).value;
                });
                CHECK(grad_rel_error(le.grad, num) <= kTol);
            }
        }
    }
}

TEST_CASE("full routed update vs finite differences") {
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 20; ++seed) {
        auto s = random_setup(100 + seed);
        auto cfg = full_config();
        const auto terms = hinge_terms(s.params, s.batch, cfg.margin);
        if (std::any_of(terms.begin(), terms.end(), [](double t) { return std::abs(t) < 1e-6; })) continue;

        const auto bg = batch_gradients(s.params, s.batch, cfg);
        HeadParams& p = s.params;
        auto theta_loss = [&] { return total_theta_loss(p, s.batch, cfg); };
        CHECK(grad_rel_error(bg.grads.w1, numeric_gradient(p.w1, theta_loss)) <= kTol);
        CHECK(grad_rel_error(bg.grads.b1, numeric_gradient(p.b1, theta_loss)) <= kTol);
        CHECK(grad_rel_error(bg.grads.w2, numeric_gradient(p.w2, theta_loss)) <= kTol);
        CHECK(grad_rel_error(bg.grads.b2, numeric_gradient(p.b2, theta_loss)) <= kTol);

        // phi sees only the classification loss.
        auto phi_loss = [&] { return loss_classification(forward_batch(p, s.batch.inputs).logits, s.batch.labels).value; };
        CHECK(grad_rel_error(bg.grads.wc, numeric_gradient(p.wc, phi_loss)) <= kTol);
        CHECK(grad_rel_error(bg.grads.bc, numeric_gradient(p.bc, phi_loss)) <= kTol);
        ++checked;
    }
}

TEST_CASE("gradient routing: phi gradients are those of cross-entropy alone") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto s = random_setup(seed);
        auto all = full_config();
        auto ce = all;
        ce.use_triplet = false;
        ce.use_exemplar = false;
        const auto g_all = batch_gradients(s.params, s.batch, all);
        const auto g_ce = batch_gradients(s.params, s.batch, ce);
        CHECK(g_all.grads.wc == g_ce.grads.wc);
        CHECK(g_all.grads.bc == g_ce.grads.bc);
    }
}

TEST_CASE("gradient routing: without L_c phi never moves") {
    auto data = separated_data(20, 1);
    auto cfg = small_train_config();
    cfg.use_classification = false;
    cfg.warmup_epochs = 1;
    cfg.continual_epochs = 0;
    const auto r = train(data, cfg);
    const auto init = HeadParams::init(4, cfg.hidden_dim, cfg.rep_dim, 3, cfg.seed);
    CHECK(r.params.wc == init.wc);
    CHECK(r.params.bc == init.bc);
    CHECK_FALSE(r.params.w1 == init.w1);
}

TEST_CASE("AdamW: first step matches the closed form") {
    auto p = HeadParams::init(3, 2, 2, 2, 1);
    const auto before = p;
    auto g = HeadParams::zeros_like(p);
    g.w1.setConstant(0.5);
    g.w1(0, 0) = -2.0;
    g.wc.setConstant(-0.25);
    AdamW opt(p, 0.01, 0.1);
    opt.step(p, g, true, false);
    for (Eigen::Index r = 0; r < p.w1.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.w1.cols(); ++c) {
            const double gg = g.w1(r, c);
            const double expect = before.w1(r, c) * (1.0 - 0.01 * 0.1) - 0.01 * gg / (std::abs(gg) + 1e-8);
            CHECK(p.w1(r, c) == doctest::Approx(expect).epsilon(1e-14));
        }
    }
    CHECK(p.wc == before.wc);
}

TEST_CASE("train: schedule, determinism and loss trend") {
    const auto data = separated_data(40, 2);
    const auto cfg = small_train_config();
    const auto a = train(data, cfg);
    const auto b = train(data, cfg);
    REQUIRE(a.trace.size() == 7);
    for (std::size_t e = 0; e < 7; ++e) {
        CHECK(a.trace[e].epoch == static_cast<int>(e));
        CHECK(a.trace[e].phase == (e < 2 ? "warmup" : "continual"));
        CHECK(a.trace[e].total == doctest::Approx(a.trace[e].classification + a.trace[e].triplet + a.trace[e].exemplar));
    }
    CHECK(a.params == b.params);
    CHECK(a.trace.back().total < a.trace.front().total);

    auto no_weak = data;
    no_weak.weak.clear();
    const auto c = train(no_weak, cfg);
    CHECK(c.trace.size() == 7);
    CHECK(c.params.all_finite());
}

TEST_CASE("train: errors") {
    auto data = separated_data(10, 3);
    auto empty = data;
    empty.labeled = Matrix(0, 4);
    empty.labeled_labels.clear();
    CHECK_THROWS_AS(train(empty, small_train_config()), Error);

    auto bad = data;
    bad.weak.emplace_back(0, 7);
    CHECK_THROWS_AS(train(bad, small_train_config()), Error);

    auto cfg = small_train_config();
    cfg.learning_rate = 1e300;
    cfg.weight_decay = 0.0;
    try {
        train(data, cfg);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
    }

    TrainConfig invalid;
    invalid.temperature = 0.0;
    CHECK_THROWS_AS(invalid.validate(), Error);
    invalid = {};
    invalid.granularity_layers = {4, 0};
    CHECK_THROWS_AS(invalid.validate(), Error);
}

TEST_CASE("train: zero-norm triplet representations warn") {
    auto data = separated_data(10, 4);
    data.labeled.setZero();
    auto cfg = small_train_config();
    cfg.use_exemplar = false;
    cfg.warmup_epochs = 1;
    cfg.continual_epochs = 0;
    const auto base = HeadParams::init(4, cfg.hidden_dim, cfg.rep_dim, 3, cfg.seed);
    (void)base;
    const auto r = train(data, cfg);
    // Zero inputs give rep = W2 tanh(b1) + b2, non-zero in general; the loss still runs.
    CHECK(r.trace.size() == 1);
}

TEST_CASE("config defaults and JSON round-trips") {
    TrainConfig c;
    CHECK(c.margin == 0.75);
    CHECK(c.temperature == 0.02);
    CHECK(c.negatives == 10);
    CHECK(c.warmup_epochs == 2);
    CHECK(c.continual_epochs == 5);
    CHECK(c.pair_multiplier == 5);
    CHECK(c.resolved_layers(41) == std::vector<std::size_t>{16, 32, 41, 64});
    c.seed = 17;
    c.exemplar_mean = true;
    const auto back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));

    const auto p = HeadParams::init(3, 4, 2, 5, 8);
    const auto j = to_json(p);
    CHECK(j.contains("shape"));
    CHECK(head_params_from_json(j) == p);
}
