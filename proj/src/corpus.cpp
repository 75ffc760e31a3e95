#include "mixore/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <unordered_map>
#include <unordered_set>

namespace mixore {

namespace {

const char* kModule = "corpus";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

EmbeddedInstance parse_line(const std::string& line, std::size_t line_no) {
    const auto where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        fail(where + "malformed JSON (" + e.what() + ")");
    } catch (const nlohmann::json::exception& e) {
        fail(where + "unrepresentable value (" + e.what() + ")");
    }
    if (!j.is_object()) fail(where + "expected a JSON object");
    if (!j.contains("id") || !j["id"].is_string()) fail(where + "missing string key 'id'");
    if (!j.contains("vec") || !j["vec"].is_array()) fail(where + "missing array key 'vec'");

    EmbeddedInstance inst;
    inst.id = j["id"].get<std::string>();
    inst.vec.reserve(j["vec"].size());
    for (const auto& v : j["vec"]) {
        if (!v.is_number()) fail(where + "non-numeric entry in 'vec'");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail(where + "non-finite value in 'vec'");
        inst.vec.push_back(x);
    }
    if (j.contains("label")) {
        const auto& l = j["label"];
        if (l.is_string()) {
            inst.label = l.get<std::string>();
        } else if (!l.is_null()) {
            fail(where + "'label' must be a string or null");
        }
    }
    return inst;
}

}  // namespace

std::optional<std::size_t> RelationCatalog::index_of(const std::string& name) const {
    auto it = std::find(known.begin(), known.end(), name);
    if (it == known.end()) return std::nullopt;
    return static_cast<std::size_t>(it - known.begin());
}

std::vector<EmbeddedInstance> read_embeddings(std::istream& in) {
    std::vector<EmbeddedInstance> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto inst = parse_line(line, line_no);
        if (out.empty()) {
            dim = inst.vec.size();
            if (dim == 0) fail("line " + std::to_string(line_no) + ": empty vector");
        } else if (inst.vec.size() != dim) {
            fail("line " + std::to_string(line_no) + ": dimension mismatch (expected " +
                 std::to_string(dim) + ", got " + std::to_string(inst.vec.size()) + ")");
        }
        if (!seen.insert(inst.id).second) {
            fail("line " + std::to_string(line_no) + ": duplicate id '" + inst.id + "'");
        }
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<EmbeddedInstance> load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open embeddings file " + path.string());
    return read_embeddings(in);
}

void write_embeddings(std::ostream& out, const std::vector<EmbeddedInstance>& instances) {
    for (const auto& inst : instances) {
        nlohmann::ordered_json j;
        j["id"] = inst.id;
        j["vec"] = inst.vec;
        j["label"] = inst.label ? nlohmann::ordered_json(*inst.label) : nlohmann::ordered_json();
        out << j.dump() << '\n';
    }
}

void save_embeddings(const std::filesystem::path& path,
                     const std::vector<EmbeddedInstance>& instances) {
    std::ofstream out(path);
    if (!out) fail("cannot write embeddings file " + path.string());
    write_embeddings(out, instances);
}

SplitDataset build_split(const std::vector<EmbeddedInstance>& instances,
                         const std::set<std::string>& novel_names, double labeled_fraction,
                         std::uint64_t seed) {
    if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0)) {
        fail("labeled_fraction must lie in (0, 1)");
    }
    if (novel_names.empty()) fail("at least one novel relation is required");

    // Relations in order of first appearance.
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> members;
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& inst = instances[i];
        if (!inst.label) fail("instance '" + inst.id + "' has no gold label");
        if (!ids.insert(inst.id).second) fail("duplicate id '" + inst.id + "'");
        auto [it, inserted] = members.try_emplace(*inst.label);
        if (inserted) order.push_back(*inst.label);
        it->second.push_back(i);
    }
    for (const auto& name : novel_names) {
        if (!members.count(name)) fail("novel relation '" + name + "' does not occur in the data");
    }

    SplitDataset split;
    split.seed = seed;
    split.novel_names.assign(novel_names.begin(), novel_names.end());
    split.catalog.novel_count = novel_names.size();

    std::vector<char> is_labeled(instances.size(), 0);
    Rng rng = make_rng(seed, 0x5b117);
    for (const auto& name : order) {
        if (novel_names.count(name)) continue;
        auto idx = members[name];
        if (idx.size() < 2) {
            fail("known relation '" + name + "' has fewer than 2 instances");
        }
        split.catalog.known.push_back(name);
        const auto take = static_cast<std::size_t>(
            std::floor(labeled_fraction * static_cast<double>(idx.size())));
        shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t k = 0; k < take; ++k) is_labeled[idx[k]] = 1;
    }
    for (std::size_t i = 0; i < instances.size(); ++i) {
        (is_labeled[i] ? split.labeled : split.unlabeled).push_back(instances[i]);
    }
    return split;
}

nlohmann::json split_manifest(const SplitDataset& split) {
    nlohmann::json j;
    std::vector<std::string> labeled, unlabeled;
    for (const auto& i : split.labeled) labeled.push_back(i.id);
    for (const auto& i : split.unlabeled) unlabeled.push_back(i.id);
    j["labeled_ids"] = labeled;
    j["unlabeled_ids"] = unlabeled;
    j["known"] = split.catalog.known;
    j["novel"] = split.novel_names;
    j["novel_count"] = split.catalog.novel_count;
    j["seed"] = split.seed;
    return j;
}

SplitDataset apply_split_manifest(const nlohmann::json& manifest,
                                  const std::vector<EmbeddedInstance>& instances) {
    for (const char* key : {"labeled_ids", "unlabeled_ids", "known", "novel_count"}) {
        if (!manifest.contains(key)) fail(std::string("split manifest lacks '") + key + "'");
    }
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < instances.size(); ++i) by_id.emplace(instances[i].id, i);

    SplitDataset split;
    split.catalog.known = manifest["known"].get<std::vector<std::string>>();
    split.catalog.novel_count = manifest["novel_count"].get<std::size_t>();
    if (manifest.contains("novel")) {
        split.novel_names = manifest["novel"].get<std::vector<std::string>>();
    }
    split.seed = manifest.value("seed", std::uint64_t{0});
    if (split.catalog.novel_count < 1) fail("novel_count must be >= 1");

    std::unordered_set<std::string> labeled_ids;
    for (const auto& id : manifest["labeled_ids"]) {
        const auto s = id.get<std::string>();
        auto it = by_id.find(s);
        if (it == by_id.end()) fail("split manifest references unknown id '" + s + "'");
        const auto& inst = instances[it->second];
        if (!inst.label || !split.catalog.index_of(*inst.label)) {
            fail("labeled instance '" + s + "' does not carry a known relation");
        }
        labeled_ids.insert(s);
        split.labeled.push_back(inst);
    }
    for (const auto& id : manifest["unlabeled_ids"]) {
        const auto s = id.get<std::string>();
        auto it = by_id.find(s);
        if (it == by_id.end()) fail("split manifest references unknown id '" + s + "'");
        if (labeled_ids.count(s)) fail("id '" + s + "' appears on both sides of the split");
        split.unlabeled.push_back(instances[it->second]);
    }
    return split;
}

void validate(const SyntheticSpec& spec) {
    if (spec.dim == 0) fail("synthetic dim must be >= 1");
    if (spec.relations.empty()) fail("synthetic spec has no relations");
    std::unordered_set<std::string> names;
    for (const auto& r : spec.relations) {
        if (!names.insert(r.name).second) fail("duplicate synthetic relation '" + r.name + "'");
        if (r.mean.size() != spec.dim) fail("relation '" + r.name + "' mean has wrong dimension");
        if (r.count < 2) fail("relation '" + r.name + "' needs count >= 2");
        if (!(r.stddev >= 0.0) || !std::isfinite(r.stddev)) {
            fail("relation '" + r.name + "' needs a finite stddev >= 0");
        }
        for (double m : r.mean) {
            if (!std::isfinite(m)) fail("relation '" + r.name + "' mean is not finite");
        }
    }
    for (const auto& n : spec.novel_names) {
        if (!names.count(n)) fail("novel name '" + n + "' is not a synthetic relation");
    }
}

std::vector<EmbeddedInstance> generate_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    std::vector<EmbeddedInstance> out;
    Rng rng = make_rng(spec.seed, 0x5e7);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& r : spec.relations) {
        for (std::size_t i = 0; i < r.count; ++i) {
            EmbeddedInstance inst;
            inst.id = r.name + "_" + std::to_string(i);
            inst.label = r.name;
            inst.vec.resize(spec.dim);
            for (std::size_t k = 0; k < spec.dim; ++k) {
                inst.vec[k] = r.mean[k] + r.stddev * normal(rng);
            }
            out.push_back(std::move(inst));
        }
    }
    return out;
}

SyntheticSpec axis_aligned_spec(std::size_t dim, std::size_t known, std::size_t novel,
                                std::size_t count, double spacing, double stddev,
                                std::uint64_t seed) {
    if (known + novel > dim) fail("axis-aligned layout needs dim >= number of relations");
    SyntheticSpec spec;
    spec.dim = dim;
    spec.seed = seed;
    for (std::size_t r = 0; r < known + novel; ++r) {
        SyntheticRelation rel;
        rel.name = (r < known ? "known_" + std::to_string(r) : "novel_" + std::to_string(r - known));
        rel.mean.assign(dim, 0.0);
        rel.mean[r] = spacing;
        rel.stddev = stddev;
        rel.count = count;
        if (r >= known) spec.novel_names.push_back(rel.name);
        spec.relations.push_back(std::move(rel));
    }
    return spec;
}

SyntheticSpec random_means_spec(std::size_t dim, std::size_t known, std::size_t novel,
                                std::size_t count, double radius, double stddev,
                                double min_distance, std::uint64_t seed) {
    if (dim == 0 || known + novel == 0) fail("random layout needs dim >= 1 and relations");
    if (!(radius > 0.0)) fail("radius must be > 0");
    const std::size_t n = known + novel;
    auto rng = make_rng(seed, 0x3ea5);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix means(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    constexpr int kMaxDraws = 1000;
    for (int draw = 0;; ++draw) {
        if (draw == kMaxDraws) fail("cannot place means at the requested minimum distance");
        for (Eigen::Index r = 0; r < means.rows(); ++r) {
            for (Eigen::Index c = 0; c < means.cols(); ++c) means(r, c) = normal(rng);
            const double norm = means.row(r).norm();
            if (norm > 0.0) means.row(r) *= radius / norm;
        }
        bool ok = true;
        for (Eigen::Index a = 0; a < means.rows() && ok; ++a) {
            for (Eigen::Index b = a + 1; b < means.rows() && ok; ++b) {
                ok = (means.row(a) - means.row(b)).norm() >= min_distance;
            }
        }
        if (ok) break;
    }
    SyntheticSpec spec;
    spec.dim = dim;
    spec.seed = seed;
    for (std::size_t r = 0; r < n; ++r) {
        SyntheticRelation rel;
        rel.name = (r < known ? "known_" + std::to_string(r) : "novel_" + std::to_string(r - known));
        const auto row = means.row(static_cast<Eigen::Index>(r));
        rel.mean.reserve(dim);
        for (Eigen::Index c = 0; c < row.size(); ++c) rel.mean.push_back(row(c));
        rel.stddev = stddev;
        rel.count = count;
        if (r >= known) spec.novel_names.push_back(rel.name);
        spec.relations.push_back(std::move(rel));
    }
    return spec;
}

SyntheticSpec bridged_spec(std::size_t dim, std::size_t known, std::size_t novel,
                           std::size_t count, double radius, double stddev, std::uint64_t seed) {
    if (known > dim) fail("bridged layout needs dim >= known");
    if (2 * novel > known) fail("bridged layout needs known >= 2 * novel");
    auto spec = axis_aligned_spec(dim, known, 0, count, radius, stddev, seed);
    const double side = radius / std::sqrt(2.0);
    for (std::size_t j = 0; j < novel; ++j) {
        SyntheticRelation rel;
        rel.name = "novel_" + std::to_string(j);
        rel.mean.assign(dim, 0.0);
        rel.mean[2 * j] = side;
        rel.mean[2 * j + 1] = side;
        rel.stddev = stddev;
        rel.count = count;
        spec.novel_names.push_back(rel.name);
        spec.relations.push_back(std::move(rel));
    }
    return spec;
}

nlohmann::json to_json(const SyntheticSpec& spec) {
    nlohmann::json rels = nlohmann::json::array();
    for (const auto& r : spec.relations) {
        rels.push_back({{"name", r.name}, {"mean", r.mean}, {"stddev", r.stddev}, {"count", r.count}});
    }
    return {{"dim", spec.dim}, {"relations", rels}, {"novel_names", spec.novel_names},
            {"seed", spec.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec spec;
    try {
        spec.dim = j.at("dim").get<std::size_t>();
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.novel_names = j.value("novel_names", std::vector<std::string>{});
        for (const auto& r : j.at("relations")) {
            SyntheticRelation rel;
            rel.name = r.at("name").get<std::string>();
            rel.mean = r.at("mean").get<std::vector<double>>();
            rel.stddev = r.value("stddev", 1.0);
            rel.count = r.at("count").get<std::size_t>();
            spec.relations.push_back(std::move(rel));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("invalid synthetic spec: ") + e.what());
    }
    validate(spec);
    return spec;
}

Matrix to_matrix(const std::vector<EmbeddedInstance>& instances) {
    if (instances.empty()) return Matrix(0, 0);
    const auto d = static_cast<Eigen::Index>(instances.front().vec.size());
    Matrix m(static_cast<Eigen::Index>(instances.size()), d);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const auto& v = instances[static_cast<std::size_t>(i)].vec;
        if (static_cast<Eigen::Index>(v.size()) != d) fail("instance dimension mismatch");
        for (Eigen::Index k = 0; k < d; ++k) m(i, k) = v[static_cast<std::size_t>(k)];
    }
    return m;
}

}  // namespace mixore
