// tialign: compositional text-to-image alignment scoring.
// Exit codes: 0 ok, 1 validation error, 2 run finished with failures, 3 fatal.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tialign/harness.hpp"

using tialign::json;

namespace {

void emit(const std::string& payload, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << payload << "\n";
        return;
    }
    std::ofstream out(out_path);
    if (!out) throw tialign::InputError("cannot open output file " + out_path);
    out << payload << "\n";
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

tialign::GenerationTemplate load_template_or_default(const std::string& path) {
    if (path.empty()) return tialign::GenerationTemplate::default_template();
    return tialign::GenerationTemplate::load(path);
}

std::unique_ptr<tialign::FileCache> open_cache(const std::string& dir) {
    if (dir.empty()) return nullptr;
    return std::make_unique<tialign::FileCache>(dir);
}

struct DecomposeArgs {
    std::string prompt, prompt_set, backend = "oracle", template_path, out, cache_dir;
    int max_retries = 2;
};

int cmd_decompose(const DecomposeArgs& a) {
    if (a.prompt.empty() == a.prompt_set.empty())
        throw tialign::InputError("pass exactly one of --prompt / --prompt-set");
    auto generator = [&] {
        if (a.backend == "oracle") {
            std::unique_ptr<tialign::GeneratorBackend> g =
                std::make_unique<tialign::testkit::OracleGenerator>();
            return g;
        }
        if (a.backend == "oracle-chatty") {
            std::unique_ptr<tialign::GeneratorBackend> g =
                std::make_unique<tialign::testkit::OracleGenerator>(
                    tialign::testkit::OracleGenerator::Style::Chatty);
            return g;
        }
        if (a.backend == "http") {
            std::unique_ptr<tialign::GeneratorBackend> g = tialign::http_generator_from_env();
            if (!g)
                throw tialign::InputError(
                    "generator backend \"http\" needs TIALIGN_GENERATOR_BASE_URL");
            return g;
        }
        throw tialign::InputError("unknown generator backend \"" + a.backend + "\"");
    }();
    const auto tmpl = load_template_or_default(a.template_path);
    auto cache = open_cache(a.cache_dir);

    std::vector<tialign::PromptRecord> prompts;
    if (!a.prompt.empty()) {
        prompts.push_back({"cli", a.prompt, tialign::Category::Other, std::nullopt});
    } else {
        std::vector<std::string> warnings;
        prompts = tialign::load_prompt_set(a.prompt_set, &warnings);
        print_warnings(warnings);
    }

    std::ostringstream payload;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto qs = tialign::decompose_prompt(prompts[i], *generator, tmpl, a.max_retries,
                                                  cache.get());
        if (i) payload << "\n";
        payload << json(qs).dump();
    }
    emit(payload.str(), a.out);
    return 0;
}

struct DetectArgs {
    std::string image, config_path, out, cache_dir;
};

int cmd_detect(const DetectArgs& a) {
    tialign::DecompositionConfig config;
    if (!a.config_path.empty()) {
        std::ifstream in(a.config_path);
        if (!in) throw tialign::InputError("cannot open config " + a.config_path);
        config = json::parse(in).get<tialign::DecompositionConfig>();
    }
    config.validate();
    auto cache = open_cache(a.cache_dir);
    tialign::testkit::OracleDetector detector;
    const auto image = tialign::ImageBuffer::load(a.image);
    const auto boxes = tialign::build_box_set(image, detector, config, cache.get());
    emit(json(boxes).dump(), a.out);
    return 0;
}

struct ScoreArgs {
    std::string prompt, image, generator = "oracle", vqa = "oracle", template_path, out,
                cache_dir;
    int max_retries = 2;
};

int cmd_score(const ScoreArgs& a) {
    tialign::RunConfig sel;
    sel.generator_backend = a.generator;
    sel.vqa_backend = a.vqa;
    sel.detector_backend = "oracle";
    sel.generation_template = load_template_or_default(a.template_path);
    sel.max_retries = a.max_retries;
    auto cache = open_cache(a.cache_dir);
    auto backends = tialign::make_backends(sel);
    const tialign::PromptRecord prompt{"cli", a.prompt, tialign::Category::Other, std::nullopt};
    const auto result = tialign::evaluate_sample(
        prompt, a.image, *backends.generator, *backends.detector, *backends.vqa,
        sel.generation_template, sel.decomposition, sel.aggregation, sel.max_retries,
        cache.get());
    emit(json(result).dump(), a.out);
    return 0;
}

struct EvaluateArgs {
    std::string config_path, prompt_set, image_root, output_dir, cache_dir, generator, detector,
        vqa;
    int concurrency = 0;     // 0: keep config value
    int max_retries = -1;    // -1: keep config value
    bool resume = false;
    bool json_out = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
    std::ifstream in(a.config_path);
    if (!in) throw tialign::InputError("cannot open config " + a.config_path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw tialign::ParseError("config is not valid JSON: " + a.config_path);
    auto config = j.get<tialign::RunConfig>();
    if (!a.prompt_set.empty()) config.prompt_set = a.prompt_set;
    if (!a.image_root.empty()) config.image_root = a.image_root;
    if (!a.output_dir.empty()) config.output_dir = a.output_dir;
    if (!a.cache_dir.empty()) config.cache_dir = a.cache_dir;
    if (!a.generator.empty()) config.generator_backend = a.generator;
    if (!a.detector.empty()) config.detector_backend = a.detector;
    if (!a.vqa.empty()) config.vqa_backend = a.vqa;
    if (a.concurrency > 0) config.concurrency = a.concurrency;
    if (a.max_retries >= 0) config.max_retries = a.max_retries;

    const auto rr = tialign::run_evaluation(config, a.resume);
    print_warnings(rr.warnings);

    if (a.json_out) {
        json out{{"run_id", rr.run_id},
                 {"run_dir", rr.run_dir.string()},
                 {"summary", rr.summary},
                 {"failures", rr.failures}};
        std::cout << out.dump() << "\n";
    } else {
        std::printf("run %s\n", rr.run_id.c_str());
        std::printf("pairs %d  results %d  failures %d  wall %.2fs%s\n", rr.summary.n_pairs,
                    rr.summary.n_results, rr.summary.n_failures, rr.summary.wall_seconds,
                    rr.summary.aborted ? "  (aborted)" : "");
        std::printf("%-12s %s\n", "category", "mean overall");
        for (const auto& [cat, mean] : rr.summary.mean_overall_by_category)
            std::printf("%-12s %.6f\n", cat.c_str(), mean);
        if (rr.summary.mean_overall)
            std::printf("%-12s %.6f\n", "all", *rr.summary.mean_overall);
    }
    return rr.failures.empty() ? 0 : 2;
}

struct CorrelateArgs {
    std::string results, human, group_by = "model,category", out;
    bool json_out = false;
};

int cmd_correlate(const CorrelateArgs& a) {
    std::ifstream in(a.results);
    if (!in) throw tialign::InputError("cannot open results " + a.results);
    std::vector<tialign::EvalResult> results;
    std::map<std::string, tialign::Category> categories;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw tialign::ParseError("results line " + std::to_string(line_no) +
                                      ": malformed JSON");
        results.push_back(j.get<tialign::EvalResult>());
        if (j.contains("category"))
            if (auto c = tialign::category_from_string(j.at("category").get<std::string>()))
                categories[results.back().prompt_id] = *c;
    }
    const auto ratings = tialign::load_human_ratings(a.human);

    bool by_model = false, by_category = false;
    {
        std::stringstream ss(a.group_by);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok == "model") by_model = true;
            else if (tok == "category") by_category = true;
            else if (!tok.empty())
                throw tialign::InputError("unknown --group-by key \"" + tok + "\"");
        }
        if (!by_model && !by_category)
            throw tialign::InputError("--group-by needs model and/or category");
    }

    int unjoined = 0;
    auto samples = tialign::join_for_correlation(results, ratings, categories, &unjoined);
    if (unjoined > 0) std::cerr << "warning: " << unjoined << " unjoinable result row(s)\n";
    for (auto& s : samples) {
        if (!by_model) s.model = "all";
        if (!by_category) s.category = "all";
    }
    std::map<std::pair<std::string, std::string>, int> group_sizes;
    for (const auto& s : samples) ++group_sizes[{s.model, s.category}];
    bool any_usable = false;
    for (const auto& [key, n] : group_sizes) any_usable = any_usable || n >= 2;
    if (!any_usable) {
        std::cerr << "error: fewer than 2 joined rows in every group\n";
        return 1;
    }

    std::vector<std::string> warnings;
    const auto report = tialign::correlation_report(samples, &warnings);
    print_warnings(warnings);
    if (a.json_out) {
        emit(json(report).dump(), a.out);
    } else {
        std::string table = tialign::render_correlation_table(report);
        if (!table.empty() && table.back() == '\n') table.pop_back();
        emit(table, a.out);
    }
    return 0;
}

struct ReportArgs {
    std::string run_dir;
    bool json_out = false;
};

int cmd_report(const ReportArgs& a) {
    namespace fs = std::filesystem;
    const fs::path dir = a.run_dir;
    const fs::path summary_path = dir / "summary.json";
    if (!fs::exists(summary_path))
        throw tialign::InputError("no summary.json under " + dir.string());
    std::ifstream sin(summary_path);
    json summary = json::parse(sin);

    std::vector<tialign::FailureRecord> failures;
    if (fs::exists(dir / "failures.jsonl")) {
        std::ifstream fin(dir / "failures.jsonl");
        std::string line;
        while (std::getline(fin, line)) {
            if (line.empty()) continue;
            failures.push_back(json::parse(line).get<tialign::FailureRecord>());
        }
    }
    json config = json(nullptr);
    if (fs::exists(dir / "config.json")) {
        std::ifstream cin(dir / "config.json");
        config = json::parse(cin);
    }

    if (a.json_out) {
        std::cout << json{{"summary", summary}, {"failures", failures}, {"config", config}}.dump()
                  << "\n";
        return 0;
    }
    std::printf("run %s\n", summary.value("run_id", dir.filename().string()).c_str());
    std::printf("pairs %d  results %d  failures %d  wall %.2fs%s\n",
                summary.value("n_pairs", 0), summary.value("n_results", 0),
                summary.value("n_failures", 0), summary.value("wall_seconds", 0.0),
                summary.value("aborted", false) ? "  (aborted)" : "");
    if (summary.contains("mean_overall_by_category")) {
        std::printf("%-12s %s\n", "category", "mean overall");
        for (const auto& [cat, mean] : summary.at("mean_overall_by_category").items())
            std::printf("%-12s %.6f\n", cat.c_str(), mean.get<double>());
    }
    if (summary.contains("mean_overall") && !summary.at("mean_overall").is_null())
        std::printf("%-12s %.6f\n", "all", summary.at("mean_overall").get<double>());
    for (const auto& f : failures)
        std::printf("failed %s/%s: %s\n", f.prompt_id.c_str(), f.image_id.c_str(),
                    f.error.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"compositional text-to-image alignment scoring"};
    app.require_subcommand(1);
    bool json_flag = false;   // accepted everywhere; JSON-native commands ignore it

    DecomposeArgs da;
    auto* decompose = app.add_subcommand("decompose", "turn a prompt into question sets");
    decompose->add_option("--prompt", da.prompt, "prompt text");
    decompose->add_option("--prompt-set", da.prompt_set, "prompt set JSONL");
    decompose->add_option("--backend", da.backend, "oracle | oracle-chatty | http");
    decompose->add_option("--template", da.template_path, "generation template JSON");
    decompose->add_option("--out", da.out, "output file (default stdout)");
    decompose->add_option("--cache-dir", da.cache_dir, "cache directory");
    decompose->add_option("--max-retries", da.max_retries, "generation retries");
    decompose->add_flag("--json", json_flag, "machine output (native format)");

    DetectArgs ta;
    auto* detect = app.add_subcommand("detect", "entity and relational boxes for an image");
    detect->add_option("--image", ta.image, "image path")->required();
    detect->add_option("--config", ta.config_path, "decomposition config JSON");
    detect->add_option("--out", ta.out, "output file (default stdout)");
    detect->add_option("--cache-dir", ta.cache_dir, "cache directory");
    detect->add_flag("--json", json_flag, "machine output (native format)");

    ScoreArgs sa;
    auto* score = app.add_subcommand("score", "evaluate one prompt against one image");
    score->add_option("--prompt", sa.prompt, "prompt text")->required();
    score->add_option("--image", sa.image, "image path")->required();
    score->add_option("--generator", sa.generator, "oracle | oracle-chatty | http");
    score->add_option("--vqa", sa.vqa, "oracle | oracle-soft | http");
    score->add_option("--template", sa.template_path, "generation template JSON");
    score->add_option("--out", sa.out, "output file (default stdout)");
    score->add_option("--cache-dir", sa.cache_dir, "cache directory");
    score->add_option("--max-retries", sa.max_retries, "generation retries");
    score->add_flag("--json", json_flag, "machine output (native format)");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "run a full evaluation");
    evaluate->add_option("--config", ea.config_path, "run config JSON")->required();
    evaluate->add_option("--prompt-set", ea.prompt_set, "override prompt set");
    evaluate->add_option("--image-root", ea.image_root, "override image root");
    evaluate->add_option("--output-dir", ea.output_dir, "override output dir");
    evaluate->add_option("--cache-dir", ea.cache_dir, "override cache dir");
    evaluate->add_option("--generator", ea.generator, "override generator backend");
    evaluate->add_option("--detector", ea.detector, "override detector backend");
    evaluate->add_option("--vqa", ea.vqa, "override vqa backend");
    evaluate->add_option("--concurrency", ea.concurrency, "override worker count");
    evaluate->add_option("--max-retries", ea.max_retries, "override generation retries");
    evaluate->add_flag("--resume", ea.resume, "resume the latest run for this config");
    evaluate->add_flag("--json", ea.json_out, "JSON summary instead of table");

    CorrelateArgs ca;
    auto* correlate = app.add_subcommand("correlate", "correlate scores with human ratings");
    correlate->add_option("--results", ca.results, "results.jsonl")->required();
    correlate->add_option("--human", ca.human, "human ratings JSONL")->required();
    correlate->add_option("--group-by", ca.group_by, "model,category subset");
    correlate->add_option("--out", ca.out, "output file (default stdout)");
    correlate->add_flag("--json", ca.json_out, "JSON report instead of table");

    ReportArgs ra;
    auto* report = app.add_subcommand("report", "summarize a finished run directory");
    report->add_option("--run", ra.run_dir, "run directory")->required();
    report->add_flag("--json", ra.json_out, "JSON instead of table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (app.got_subcommand(decompose)) return cmd_decompose(da);
        if (app.got_subcommand(detect)) return cmd_detect(ta);
        if (app.got_subcommand(score)) return cmd_score(sa);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(ea);
        if (app.got_subcommand(correlate)) return cmd_correlate(ca);
        if (app.got_subcommand(report)) return cmd_report(ra);
        std::cerr << "no command\n";
        return 1;
    } catch (const tialign::DecompositionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (!e.last_raw_output().empty())
            std::cerr << "last backend output:\n" << e.last_raw_output() << "\n";
        return 1;
    } catch (const tialign::SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        for (const auto& v : e.violations()) std::cerr << "  - " << v << "\n";
        return 1;
    } catch (const tialign::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const tialign::CacheCorruptionError& e) {
        std::cerr << "cache error: " << e.what() << "\n";
        return 3;
    } catch (const tialign::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 3;
    }
}
