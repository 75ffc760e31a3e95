// mixore: command-line driver for the two-phase relation discovery pipeline.
//
//   mixore run    --config cfg.json --out runs/a
//   mixore synth  --config cfg.json --output data/emb.jsonl
//   mixore split | detect | train | infer | eval  --config cfg.json
//
// Any config key can be overridden with its dotted name, e.g.
//   mixore run --config cfg.json --phase1.lambda=50 --split.novel='["r5","r6"]'

#include <Eigen/Core>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mixore/pipeline.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    int threads = 0;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "JSON config file");
    cmd->add_option("--out", f.out, "Output directory (paths.out)");
    cmd->add_option("--threads", f.threads, "Worker thread cap")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "Overrides every named seed");
    cmd->allow_extras();
}

// Collects `--a.b=v` and `--a.b v` pairs left over by CLI11.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& arg = extras[i];
        if (arg.rfind("--", 0) != 0 || arg.find('.') == std::string::npos) {
            throw CLI::ExtrasError({arg});
        }
        const auto eq = arg.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
        } else if (i + 1 < extras.size()) {
            out.emplace_back(arg.substr(2), extras[++i]);
        } else {
            throw CLI::ArgumentMismatch(arg + " needs a value");
        }
    }
    return out;
}

mixore::PipelineConfig load_config(const CommonFlags& f, const std::vector<std::string>& extras) {
    nlohmann::json j = nlohmann::json::object();
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw mixore::Error("config", "cannot open " + f.config);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw mixore::Error("config", f.config + ": " + e.what());
        }
    }
    for (const auto& [key, value] : dotted_overrides(extras)) mixore::set_dotted(j, key, value);
    if (!f.out.empty()) j["paths"]["out"] = f.out;
    if (f.threads > 0) j["threads"] = f.threads;
    auto c = mixore::config_from_json(j);
    if (f.seed) {
        mixore::override_seeds(c, *f.seed);
        c.validate();
    }
    return c;
}

void print_warning(const std::string& stage, const std::string& message) {
    std::cerr << "warning [" << stage << "]: " << message << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MixORE open-world relation discovery over embedding vectors", "mixore"};
    app.set_version_flag("--version", std::string(mixore::kVersion));
    app.require_subcommand(1);

    CommonFlags flags;
    std::string synth_output;
    std::string eval_assignments;
    std::string eval_split;

    auto* run = app.add_subcommand("run", "All stages: split, detect, train, infer, eval");
    auto* synth = app.add_subcommand("synth", "Write a synthetic embeddings file");
    auto* split = app.add_subcommand("split", "Partition embeddings into labeled/unlabeled sets");
    auto* detect = app.add_subcommand("detect", "SAE outlier detection and GMM weak labels");
    auto* train = app.add_subcommand("train", "Train the projection head");
    auto* infer = app.add_subcommand("infer", "Assign unlabeled instances");
    auto* eval = app.add_subcommand("eval", "Score assignments against gold labels");
    for (auto* cmd : {run, synth, split, detect, train, infer, eval}) add_common(cmd, flags);
    synth->add_option("--output", synth_output, "Embeddings path (default <out>/embeddings.jsonl)");
    eval->add_option("--assignments", eval_assignments, "Assignments CSV (default <out>/assignments.csv)");
    eval->add_option("--split", eval_split, "Split manifest (default <out>/split.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    CLI::App* cmd = app.get_subcommands().front();
    try {
        const auto c = load_config(flags, cmd->remaining());
        Eigen::setNbThreads(c.threads);
        const std::filesystem::path out(c.paths.out);

        if (cmd == run) {
            mixore::run_pipeline(c, print_warning);
        } else if (cmd == synth) {
            const auto path = synth_output.empty() ? out / "embeddings.jsonl" : std::filesystem::path(synth_output);
            mixore::run_synth(c, path);
        } else if (cmd == split) {
            mixore::run_split(c, print_warning);
        } else if (cmd == detect) {
            mixore::run_detect(c, print_warning);
        } else if (cmd == train) {
            mixore::run_train(c, print_warning);
        } else if (cmd == infer) {
            mixore::run_infer(c, print_warning);
        } else if (cmd == eval) {
            const auto a = eval_assignments.empty() ? out / "assignments.csv" : std::filesystem::path(eval_assignments);
            std::optional<std::filesystem::path> s;
            if (!eval_split.empty()) s = eval_split;
            mixore::run_eval(c, a, s, print_warning);
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << cmd->help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
