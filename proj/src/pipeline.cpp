#include "mixore/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mixore/corpus.hpp"
#include "mixore/detector.hpp"
#include "mixore/eval.hpp"
#include "mixore/inference.hpp"
#include "mixore/sae.hpp"

namespace mixore {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw Error("config", message); }

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("pipeline", "missing upstream artifact " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("pipeline", "cannot parse " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("pipeline", "cannot write " + path.string());
    out << text;
}

void require(const fs::path& path) {
    if (!fs::exists(path)) throw Error("pipeline", "missing upstream artifact " + path.string());
}

fs::path out_dir(const PipelineConfig& c) {
    fs::create_directories(c.paths.out);
    return fs::path(c.paths.out);
}

void emit(const WarningSink& warn, const std::string& stage, const std::vector<std::string>& msgs) {
    if (!warn) return;
    for (const auto& m : msgs) warn(stage, m);
}

// Files produced by each stage, for the manifest.
const std::map<std::string, std::vector<std::string>>& stage_files() {
    static const std::map<std::string, std::vector<std::string>> files{
        {"split", {"split.json"}},
        {"detect", {"sae.json", "weak_labels.jsonl", "outliers.jsonl"}},
        {"train", {"head.json", "loss_trace.csv"}},
        {"infer", {"assignments.csv"}},
        {"eval", {"metrics.json"}},
    };
    return files;
}

void record_stage(const PipelineConfig& c, const std::string& stage, const std::string& error) {
    const auto path = out_dir(c) / "manifest.json";
    const auto hash = config_hash(c);
    nlohmann::json m;
    if (fs::exists(path)) {
        try {
            m = read_json(path);
        } catch (const Error&) {
            m = nlohmann::json();
        }
        if (!m.is_object() || m.value("config_hash", std::string()) != hash) m = nlohmann::json();
    }
    m["version"] = kVersion;
    m["config"] = to_json(c);
    m["config_hash"] = hash;
    m["seeds"] = {{"split", c.split.seed},
                  {"phase1", c.phase1.seed},
                  {"phase2", c.phase2.seed},
                  {"inference", c.inference.seed}};
    const bool ok = error.empty();
    m["stages"][stage] = ok ? nlohmann::json{{"status", "ok"}}
                            : nlohmann::json{{"status", "failed"}, {"error", error}};
    for (const auto& f : stage_files().at(stage)) {
        m["files"][f] = {{"stage", stage}, {"config_hash", hash}, {"complete", ok}};
    }
    bool all_ok = true;
    for (const auto& [name, s] : m["stages"].items()) {
        if (s.value("status", "") != "ok") all_ok = false;
    }
    m["status"] = all_ok ? "ok" : "partial";
    write_text(path, m.dump(2) + "\n");
}

template <typename F>
void guarded(const PipelineConfig& c, const std::string& stage, F&& body) {
    try {
        body();
    } catch (const std::exception& e) {
        try {
            record_stage(c, stage, e.what());
        } catch (const std::exception&) {
        }
        throw StageError(stage, e.what());
    }
    record_stage(c, stage, "");
}

struct Loaded {
    std::vector<EmbeddedInstance> all;
    SplitDataset split;
};

Loaded load_split(const PipelineConfig& c, const std::optional<fs::path>& split_path = {}) {
    if (c.paths.embeddings.empty()) throw Error("config", "paths.embeddings is not set");
    require(c.paths.embeddings);
    Loaded l;
    l.all = load_embeddings(c.paths.embeddings);
    const auto sp = split_path ? *split_path : out_dir(c) / "split.json";
    l.split = apply_split_manifest(read_json(sp), l.all);
    return l;
}

std::vector<std::size_t> labeled_indices(const SplitDataset& s) {
    std::vector<std::size_t> out;
    for (const auto& inst : s.labeled) out.push_back(*s.catalog.index_of(*inst.label));
    return out;
}

std::vector<std::string> ids_of(const std::vector<EmbeddedInstance>& v) {
    std::vector<std::string> out;
    for (const auto& i : v) out.push_back(i.id);
    return out;
}

std::string format_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

// ---- configuration ---------------------------------------------------------

void PipelineConfig::validate() const {
    if (!(split.labeled_fraction > 0.0 && split.labeled_fraction < 1.0)) {
        config_error("split.labeled_fraction must lie in (0, 1)");
    }
    if (!(phase1.lambda > 0.0)) config_error("phase1.lambda must be > 0");
    if (!(phase1.outlier_fraction > 0.0 && phase1.outlier_fraction < 1.0)) {
        config_error("phase1.outlier_fraction must lie in (0, 1)");
    }
    if (!(phase1.posterior_threshold >= 0.0 && phase1.posterior_threshold < 1.0)) {
        config_error("phase1.posterior_threshold must lie in [0, 1)");
    }
    if (phase1.gmm.max_iter < 1) config_error("phase1.gmm_max_iter must be >= 1");
    if (!(phase1.gmm.tol > 0.0)) config_error("phase1.gmm_tol must be > 0");
    if (!(phase1.gmm.reg > 0.0)) config_error("phase1.gmm_reg must be > 0");
    if (threads < 1) config_error("threads must be >= 1");
    try {
        phase2.validate();
    } catch (const Error& e) {
        config_error(std::string("phase2: ") + e.what());
    }
}

void set_dotted(nlohmann::json& root, const std::string& dotted, const std::string& value) {
    if (!root.is_object()) root = nlohmann::json::object();
    nlohmann::json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        const auto key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) config_error("malformed override key '" + dotted + "'");
        if (dot == std::string::npos) {
            nlohmann::json parsed;
            try {
                parsed = nlohmann::json::parse(value);
            } catch (const nlohmann::json::exception&) {
                parsed = value;
            }
            (*node)[key] = parsed;
            return;
        }
        auto& child = (*node)[key];
        if (!child.is_object()) child = nlohmann::json::object();
        node = &child;
        start = dot + 1;
    }
}

PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        if (j.contains("paths")) {
            const auto& p = j["paths"];
            c.paths.embeddings = p.value("embeddings", c.paths.embeddings);
            c.paths.out = p.value("out", c.paths.out);
        }
        if (j.contains("split")) {
            const auto& s = j["split"];
            c.split.novel = s.value("novel", c.split.novel);
            c.split.labeled_fraction = s.value("labeled_fraction", c.split.labeled_fraction);
            c.split.seed = s.value("seed", c.split.seed);
        }
        if (j.contains("phase1")) {
            const auto& p = j["phase1"];
            c.phase1.lambda = p.value("lambda", c.phase1.lambda);
            c.phase1.outlier_fraction = p.value("outlier_fraction", c.phase1.outlier_fraction);
            c.phase1.posterior_threshold = p.value("posterior_threshold", c.phase1.posterior_threshold);
            c.phase1.seed = p.value("seed", c.phase1.seed);
            c.phase1.gmm.max_iter = p.value("gmm_max_iter", c.phase1.gmm.max_iter);
            c.phase1.gmm.tol = p.value("gmm_tol", c.phase1.gmm.tol);
            c.phase1.gmm.reg = p.value("gmm_reg", c.phase1.gmm.reg);
        }
        if (j.contains("phase2")) {
            try {
                c.phase2 = train_config_from_json(j["phase2"], c.phase2);
            } catch (const Error& e) {
                config_error(std::string("phase2: ") + e.what());
            }
        }
        if (j.contains("inference")) {
            const auto& i = j["inference"];
            c.inference.k_novel = i.value("k_novel", c.inference.k_novel);
            c.inference.seed = i.value("seed", c.inference.seed);
            c.inference.normalize = i.value("normalize", c.inference.normalize);
        }
        if (j.contains("report")) c.report.indent = j["report"].value("indent", c.report.indent);
        if (j.contains("synth")) c.synth = j["synth"];
        c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        config_error(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["paths"] = {{"embeddings", c.paths.embeddings}, {"out", c.paths.out}};
    j["split"] = {{"novel", c.split.novel},
                  {"labeled_fraction", c.split.labeled_fraction},
                  {"seed", c.split.seed}};
    j["phase1"] = {{"lambda", c.phase1.lambda},
                   {"outlier_fraction", c.phase1.outlier_fraction},
                   {"posterior_threshold", c.phase1.posterior_threshold},
                   {"seed", c.phase1.seed},
                   {"gmm_max_iter", c.phase1.gmm.max_iter},
                   {"gmm_tol", c.phase1.gmm.tol},
                   {"gmm_reg", c.phase1.gmm.reg}};
    j["phase2"] = to_json(c.phase2);
    j["inference"] = {{"k_novel", c.inference.k_novel},
                      {"seed", c.inference.seed},
                      {"normalize", c.inference.normalize}};
    j["report"] = {{"indent", c.report.indent}};
    if (!c.synth.is_null()) j["synth"] = c.synth;
    j["threads"] = c.threads;
    return j;
}

std::string config_hash(const PipelineConfig& c) {
    auto j = to_json(c);
    // Thread count does not change results.
    j.erase("threads");
    return format_hex(fnv1a(j.dump()));
}

void override_seeds(PipelineConfig& c, std::uint64_t seed) {
    c.split.seed = seed;
    c.phase1.seed = seed;
    c.phase2.seed = seed;
    c.inference.seed = seed;
}

// ---- stages ----------------------------------------------------------------

void run_split(const PipelineConfig& c, const WarningSink&) {
    c.validate();
    guarded(c, "split", [&] {
        if (c.paths.embeddings.empty()) throw Error("config", "paths.embeddings is not set");
        require(c.paths.embeddings);
        if (c.split.novel.empty()) throw Error("config", "split.novel must name at least one relation");
        const auto all = load_embeddings(c.paths.embeddings);
        const std::set<std::string> novel(c.split.novel.begin(), c.split.novel.end());
        const auto split = build_split(all, novel, c.split.labeled_fraction, c.split.seed);
        write_text(out_dir(c) / "split.json", split_manifest(split).dump() + "\n");
    });
}

void run_detect(const PipelineConfig& c, const WarningSink& warn) {
    c.validate();
    guarded(c, "detect", [&] {
        const auto l = load_split(c);
        const auto& s = l.split;
        if (s.labeled.empty()) throw Error("detect", "split has no labeled instances");
        if (s.unlabeled.empty()) throw Error("detect", "split has no unlabeled instances");

        const Matrix xl = to_matrix(s.labeled).transpose();
        const auto labels = labeled_indices(s);
        const auto w = fit_sae(xl, labels, s.catalog.known, c.phase1.lambda);
        if (w.jittered > 0) {
            emit(warn, "detect", {"SAE solve needed diagonal jitter for " +
                                  std::to_string(w.jittered) + " class system(s)"});
        }

        const Matrix latent = encode(w, to_matrix(s.unlabeled).transpose());
        const auto ids = ids_of(s.unlabeled);
        std::vector<std::string> warnings;
        const auto scores = mapping_scores(latent, ids, &warnings);
        const auto picked = select_outliers(scores, c.phase1.outlier_fraction);

        Matrix outlier_latents(static_cast<Eigen::Index>(picked.size()), latent.rows());
        std::vector<std::string> outlier_ids;
        for (std::size_t k = 0; k < picked.size(); ++k) {
            outlier_latents.row(static_cast<Eigen::Index>(k)) =
                latent.col(static_cast<Eigen::Index>(picked[k])).transpose();
            outlier_ids.push_back(ids[picked[k]]);
        }
        WeakLabelOptions opts;
        opts.known_count = s.catalog.known_count();
        opts.novel_count = s.catalog.novel_count;
        opts.threshold = c.phase1.posterior_threshold;
        opts.seed = c.phase1.seed;
        opts.gmm = c.phase1.gmm;
        auto weak = extract_weak_labels(outlier_latents, outlier_ids, opts);
        for (std::size_t k = 0; k < picked.size(); ++k) weak.outliers[k].score = scores[picked[k]].score;
        warnings.insert(warnings.end(), weak.warnings.begin(), weak.warnings.end());
        emit(warn, "detect", warnings);

        const auto dir = out_dir(c);
        write_text(dir / "sae.json", to_json(w).dump() + "\n");
        save_weak_labels(dir / "weak_labels.jsonl", weak.entries);
        save_outliers(dir / "outliers.jsonl", weak.outliers);
    });
}

void run_train(const PipelineConfig& c, const WarningSink& warn) {
    c.validate();
    guarded(c, "train", [&] {
        const auto l = load_split(c);
        const auto& s = l.split;
        const auto dir = out_dir(c);
        require(dir / "weak_labels.jsonl");
        const auto weak = load_weak_labels(dir / "weak_labels.jsonl");

        TrainingData data;
        data.labeled = to_matrix(s.labeled);
        data.labeled_labels = labeled_indices(s);
        data.unlabeled = to_matrix(s.unlabeled);
        data.known_count = s.catalog.known_count();
        data.total_classes = s.catalog.total();
        std::unordered_map<std::string, std::size_t> row;
        for (std::size_t i = 0; i < s.unlabeled.size(); ++i) row.emplace(s.unlabeled[i].id, i);
        for (const auto& w : weak) {
            auto it = row.find(w.instance_id);
            if (it == row.end()) {
                throw Error("train", "weak label for '" + w.instance_id + "' is not an unlabeled instance");
            }
            if (w.novel_index < data.known_count || w.novel_index >= data.total_classes) {
                throw Error("train", "weak label index out of the novel range");
            }
            data.weak.emplace_back(it->second, w.novel_index);
        }
        const auto result = train(data, c.phase2);
        emit(warn, "train", result.warnings);
        write_text(dir / "head.json", to_json(result.params).dump() + "\n");
        save_loss_trace(dir / "loss_trace.csv", result.trace);
    });
}

void run_infer(const PipelineConfig& c, const WarningSink& warn) {
    c.validate();
    guarded(c, "infer", [&] {
        const auto l = load_split(c);
        const auto& s = l.split;
        const auto dir = out_dir(c);
        const auto params = head_params_from_json(read_json(dir / "head.json"));
        InferenceOptions opts;
        opts.known_count = s.catalog.known_count();
        opts.novel_count = c.inference.k_novel ? c.inference.k_novel : s.catalog.novel_count;
        opts.seed = c.inference.seed;
        opts.normalize = c.inference.normalize;
        const auto pred = predict(params, to_matrix(s.unlabeled), ids_of(s.unlabeled), opts);
        emit(warn, "infer", pred.warnings);
        save_assignments(dir / "assignments.csv", pred.assignments);
    });
}

void run_eval(const PipelineConfig& c, const fs::path& assignments,
              std::optional<fs::path> split_path, const WarningSink&) {
    c.validate();
    guarded(c, "eval", [&] {
        require(assignments);
        const auto l = load_split(c, split_path);
        std::map<std::string, std::string> gold;
        for (const auto& inst : l.all) {
            if (inst.label) gold.emplace(inst.id, *inst.label);
        }
        const auto rows = load_assignments(assignments);
        const auto outlier_path = out_dir(c) / "outliers.jsonl";
        std::optional<std::vector<OutlierRecord>> outliers;
        if (fs::exists(outlier_path)) outliers = load_outliers(outlier_path);
        const auto report = evaluate(rows, gold, l.split.catalog, outliers ? &*outliers : nullptr);
        write_text(out_dir(c) / "metrics.json", to_json(report).dump(c.report.indent) + "\n");
    });
}

void run_synth(const PipelineConfig& c, const fs::path& output) {
    const auto& j = c.synth;
    SyntheticSpec spec;
    try {
        if (j.is_object() && j.contains("relations")) {
            spec = synthetic_spec_from_json(j);
        } else if (j.is_object() && j.value("layout", std::string("axis")) == "random") {
            spec = random_means_spec(j.value("dim", std::size_t{64}), j.value("known", std::size_t{5}),
                                     j.value("novel", std::size_t{2}), j.value("count", std::size_t{200}),
                                     j.value("radius", 10.0), j.value("stddev", 1.0),
                                     j.value("min_distance", 8.0), j.value("seed", std::uint64_t{0}));
        } else if (j.is_object() && j.value("layout", std::string("axis")) == "bridged") {
            spec = bridged_spec(j.value("dim", std::size_t{64}), j.value("known", std::size_t{5}),
                                j.value("novel", std::size_t{2}), j.value("count", std::size_t{200}),
                                j.value("radius", 30.0), j.value("stddev", 1.0),
                                j.value("seed", std::uint64_t{0}));
        } else {
            const auto o = j.is_object() ? j : nlohmann::json::object();
            spec = axis_aligned_spec(o.value("dim", std::size_t{64}), o.value("known", std::size_t{5}),
                                     o.value("novel", std::size_t{2}), o.value("count", std::size_t{200}),
                                     o.value("spacing", 10.0), o.value("stddev", 1.0),
                                     o.value("seed", std::uint64_t{0}));
        }
    } catch (const nlohmann::json::exception& e) {
        throw StageError("synth", e.what());
    } catch (const Error& e) {
        throw StageError("synth", e.what());
    }
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    save_embeddings(output, generate_synthetic(spec));
}

void run_pipeline(const PipelineConfig& c, const WarningSink& warn) {
    c.validate();
    run_split(c, warn);
    run_detect(c, warn);
    run_train(c, warn);
    run_infer(c, warn);
    run_eval(c, fs::path(c.paths.out) / "assignments.csv", std::nullopt, warn);
}

}  // namespace mixore
