#include <map>
#include <set>
#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "mixore/corpus.hpp"
#include "test_util.hpp"

using namespace mixore;

namespace {

std::vector<EmbeddedInstance> labeled_points(const std::map<std::string, int>& counts) {
    std::vector<EmbeddedInstance> out;
    int serial = 0;
    for (const auto& [name, n] : counts) {
        for (int i = 0; i < n; ++i) {
            out.push_back({name + "_" + std::to_string(i), {static_cast<double>(serial++), 1.0}, name});
        }
    }
    return out;
}

std::string error_of(const std::string& text) {
    std::istringstream in(text);
    try {
        read_embeddings(in);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("load_embeddings: empty file gives an empty list") {
    test::TempDir dir("corpus");
    test::write_file(dir / "e.jsonl", "");
    CHECK(load_embeddings(dir / "e.jsonl").empty());
}

TEST_CASE("load_embeddings: single line round-trips") {
    std::istringstream in(R"({"id":"a","vec":[1.0,0.0],"label":"r1"})" "\n");
    const auto v = read_embeddings(in);
    REQUIRE(v.size() == 1);
    CHECK(v[0].id == "a");
    CHECK(v[0].vec == std::vector<double>{1.0, 0.0});
    REQUIRE(v[0].label);
    CHECK(*v[0].label == "r1");
}

TEST_CASE("load_embeddings: errors name the offending line") {
    CHECK(error_of("{\"id\":\"a\",\"vec\":[1,2],\"label\":null}\n{\"id\":\"b\",\"vec\":[1,2,3],\"label\":null}\n")
              .find("line 2") != std::string::npos);
    CHECK(error_of("{\"id\":\"a\",\"vec\":[1],\"label\":null}\n{\"id\":\"a\",\"vec\":[2],\"label\":null}\n")
              .find("duplicate") != std::string::npos);
    CHECK(error_of("{\"id\":\"a\",\"vec\":[1,\n").find("line 1") != std::string::npos);
    CHECK(error_of("{\"id\":\"a\",\"vec\":[1e999],\"label\":null}\n").find("line 1") != std::string::npos);
    CHECK(error_of("{\"vec\":[1],\"label\":null}\n").find("'id'") != std::string::npos);
}

TEST_CASE("load_embeddings: null label and blank lines") {
    std::istringstream in("{\"id\":\"a\",\"vec\":[0.5],\"label\":null}\n\n{\"id\":\"b\",\"vec\":[1.5],\"label\":\"x\"}\n");
    const auto v = read_embeddings(in);
    REQUIRE(v.size() == 2);
    CHECK_FALSE(v[0].label);
    CHECK(v[1].id == "b");
}

TEST_CASE("embeddings: write then load is bit exact") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    std::vector<EmbeddedInstance> xs;
    for (int i = 0; i < 25; ++i) {
        EmbeddedInstance e{"id" + std::to_string(i), {}, std::nullopt};
        for (int k = 0; k < 7; ++k) e.vec.push_back(u(rng) * std::pow(10.0, (k % 5) - 8));
        if (i % 3) e.label = "r" + std::to_string(i % 4);
        xs.push_back(e);
    }
    xs[0].vec[0] = 5e-324;
    xs[1].vec[0] = -0.0;
    test::TempDir dir("corpus");
    save_embeddings(dir / "x.jsonl", xs);
    const auto back = load_embeddings(dir / "x.jsonl");
    REQUIRE(back.size() == xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        CHECK(back[i].id == xs[i].id);
        CHECK(back[i].label == xs[i].label);
        REQUIRE(back[i].vec.size() == xs[i].vec.size());
        for (std::size_t k = 0; k < xs[i].vec.size(); ++k) {
            CHECK(std::memcmp(&back[i].vec[k], &xs[i].vec[k], sizeof(double)) == 0);
        }
    }
}

TEST_CASE("build_split: half of ten go to labeled") {
    auto xs = labeled_points({{"r1", 10}, {"r2", 4}});
    const auto s = build_split(xs, {"r2"}, 0.5, 1);
    CHECK(s.labeled.size() == 5);
    CHECK(s.unlabeled.size() == 9);
    CHECK(s.catalog.known == std::vector<std::string>{"r1"});
    CHECK(s.catalog.novel_count == 1);
}

TEST_CASE("build_split: novel relation is entirely unlabeled") {
    auto xs = labeled_points({{"r1", 6}, {"nov", 7}});
    const auto s = build_split(xs, {"nov"}, 0.5, 9);
    std::size_t novel_unlabeled = 0;
    for (const auto& e : s.labeled) CHECK(*e.label != "nov");
    for (const auto& e : s.unlabeled) novel_unlabeled += (*e.label == "nov");
    CHECK(novel_unlabeled == 7);
}

TEST_CASE("build_split: same seed, same split; partition and floor properties") {
    auto xs = labeled_points({{"a", 11}, {"b", 7}, {"c", 2}, {"n1", 5}, {"n2", 3}});
    for (double f : {0.1, 0.5, 0.77}) {
        for (std::uint64_t seed : {0u, 1u, 42u}) {
            const auto s1 = build_split(xs, {"n1", "n2"}, f, seed);
            const auto s2 = build_split(xs, {"n1", "n2"}, f, seed);
            CHECK(split_manifest(s1) == split_manifest(s2));

            std::set<std::string> l, u;
            for (const auto& e : s1.labeled) l.insert(e.id);
            for (const auto& e : s1.unlabeled) u.insert(e.id);
            CHECK(l.size() + u.size() == xs.size());
            for (const auto& id : l) CHECK_FALSE(u.count(id));

            std::map<std::string, std::size_t> per;
            for (const auto& e : s1.labeled) per[*e.label]++;
            CHECK(per["a"] == static_cast<std::size_t>(std::floor(f * 11)));
            CHECK(per["b"] == static_cast<std::size_t>(std::floor(f * 7)));
            CHECK(per["c"] == static_cast<std::size_t>(std::floor(f * 2)));
            CHECK(per["n1"] == 0);
        }
    }
}

TEST_CASE("build_split: precondition errors") {
    auto xs = labeled_points({{"a", 4}, {"b", 1}, {"n", 3}});
    CHECK_THROWS_AS(build_split(xs, {"n"}, 0.5, 0), Error);  // b has one instance
    auto ok = labeled_points({{"a", 4}, {"n", 3}});
    CHECK_THROWS_AS(build_split(ok, {"zzz"}, 0.5, 0), Error);
    CHECK_THROWS_AS(build_split(ok, {"n"}, 0.0, 0), Error);
    CHECK_THROWS_AS(build_split(ok, {"n"}, 1.0, 0), Error);
    ok[0].label.reset();
    CHECK_THROWS_AS(build_split(ok, {"n"}, 0.5, 0), Error);
}

TEST_CASE("split manifest reproduces the split") {
    auto xs = labeled_points({{"a", 9}, {"b", 6}, {"n", 5}});
    const auto s = build_split(xs, {"n"}, 0.5, 5);
    const auto m = split_manifest(s);
    for (const char* key : {"labeled_ids", "unlabeled_ids", "known", "novel_count", "seed"}) {
        CHECK(m.contains(key));
    }
    const auto back = apply_split_manifest(m, xs);
    CHECK(back.labeled == s.labeled);
    CHECK(back.unlabeled == s.unlabeled);
    CHECK(back.catalog.known == s.catalog.known);
    CHECK(back.catalog.novel_count == s.catalog.novel_count);
}

TEST_CASE("generate_synthetic: zero stddev gives identical vectors") {
    SyntheticSpec spec;
    spec.dim = 4;
    spec.relations = {{"r", {0, 0, 0, 0}, 0.0, 3}};
    const auto xs = generate_synthetic(spec);
    REQUIRE(xs.size() == 3);
    for (const auto& e : xs) CHECK(e.vec == std::vector<double>(4, 0.0));
}

TEST_CASE("generate_synthetic: sample means near true means") {
    SyntheticSpec spec;
    spec.dim = 3;
    spec.seed = 11;
    spec.relations = {{"p", {10, 0, 0}, 1.0, 100}, {"m", {-10, 0, 0}, 1.0, 100}};
    const auto xs = generate_synthetic(spec);
    std::map<std::string, std::vector<double>> sum;
    for (const auto& e : xs) {
        auto& s = sum[*e.label];
        s.resize(3);
        for (int k = 0; k < 3; ++k) s[k] += e.vec[k];
    }
    for (auto& [name, s] : sum) {
        const double sign = name == "p" ? 1.0 : -1.0;
        CHECK(std::abs(s[0] / 100 - 10 * sign) < 0.5);
        CHECK(std::abs(s[1] / 100) < 0.5);
        CHECK(std::abs(s[2] / 100) < 0.5);
    }
}

TEST_CASE("generate_synthetic: same spec twice gives byte-identical files") {
    const auto spec = axis_aligned_spec(8, 3, 1, 10, 5.0, 1.0, 77);
    test::TempDir dir("corpus");
    save_embeddings(dir / "a.jsonl", generate_synthetic(spec));
    save_embeddings(dir / "b.jsonl", generate_synthetic(spec));
    CHECK(test::read_file(dir / "a.jsonl") == test::read_file(dir / "b.jsonl"));
}

TEST_CASE("synthetic layouts") {
    const auto bridged = bridged_spec(16, 5, 2, 4, 30.0, 1.0, 0);
    REQUIRE(bridged.relations.size() == 7);
    CHECK(bridged.novel_names == std::vector<std::string>{"novel_0", "novel_1"});
    CHECK(bridged.relations[5].mean[0] == doctest::Approx(30.0 / std::sqrt(2.0)));
    CHECK(bridged.relations[5].mean[1] == doctest::Approx(30.0 / std::sqrt(2.0)));
    CHECK(bridged.relations[6].mean[2] == doctest::Approx(30.0 / std::sqrt(2.0)));
    CHECK_THROWS_AS(bridged_spec(16, 3, 2, 4, 30.0, 1.0, 0), Error);

    const auto rnd = random_means_spec(64, 5, 2, 4, 10.0, 1.0, 8.0, 3);
    for (std::size_t a = 0; a < rnd.relations.size(); ++a) {
        for (std::size_t b = a + 1; b < rnd.relations.size(); ++b) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < 64; ++k) {
                const double diff = rnd.relations[a].mean[k] - rnd.relations[b].mean[k];
                d2 += diff * diff;
            }
            CHECK(std::sqrt(d2) >= 8.0);
        }
    }
    const auto back = synthetic_spec_from_json(to_json(rnd));
    CHECK(to_json(back) == to_json(rnd));
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.dim = 2;
    spec.relations = {{"r", {0, 0}, 1.0, 1}};
    CHECK_THROWS_AS(validate(spec), Error);
    spec.relations = {{"r", {0, 0}, -1.0, 2}};
    CHECK_THROWS_AS(validate(spec), Error);
    spec.relations = {{"r", {0}, 1.0, 2}};
    CHECK_THROWS_AS(validate(spec), Error);
    spec.relations = {{"r", {0, 0}, 1.0, 2}};
    spec.novel_names = {"q"};
    CHECK_THROWS_AS(validate(spec), Error);
}
