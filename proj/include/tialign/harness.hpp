#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tialign/aggregation.hpp"
#include "tialign/cache.hpp"
#include "tialign/core.hpp"
#include "tialign/errors.hpp"
#include "tialign/hash.hpp"
#include "tialign/http_backends.hpp"
#include "tialign/image.hpp"
#include "tialign/image_decomp.hpp"
#include "tialign/question_gen.hpp"
#include "tialign/scoring.hpp"
#include "tialign/stats.hpp"
#include "tialign/testkit.hpp"

namespace tialign {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    std::filesystem::path prompt_set;
    std::filesystem::path image_root;
    std::string generator_backend = "oracle";   // oracle | oracle-chatty | http
    std::string detector_backend = "oracle";    // oracle
    std::string vqa_backend = "oracle";         // oracle | oracle-soft | http
    GenerationTemplate generation_template = GenerationTemplate::default_template();
    DecompositionConfig decomposition;
    AggregationPolicy aggregation;
    std::filesystem::path output_dir = "runs";
    std::filesystem::path cache_dir = "cache";
    int concurrency = 1;
    int max_retries = 2;

    bool operator==(const RunConfig&) const = default;

    void validate() const {
        if (prompt_set.empty() || !std::filesystem::exists(prompt_set))
            throw InputError("prompt set not found: " + prompt_set.string());
        if (image_root.empty() || !std::filesystem::is_directory(image_root))
            throw InputError("image root is not a directory: " + image_root.string());
        if (output_dir.empty()) throw InputError("output directory is empty");
        if (cache_dir.empty()) throw InputError("cache directory is empty");
        if (concurrency < 1) throw InputError("concurrency must be >= 1");
        if (max_retries < 0) throw InputError("max_retries must be >= 0");
        decomposition.validate();
    }
};

inline void to_json(json& j, const RunConfig& c) {
    j = json{{"prompt_set", c.prompt_set.string()},
             {"image_root", c.image_root.string()},
             {"generator_backend", c.generator_backend},
             {"detector_backend", c.detector_backend},
             {"vqa_backend", c.vqa_backend},
             {"generation_template", c.generation_template},
             {"decomposition", c.decomposition},
             {"aggregation", c.aggregation},
             {"output_dir", c.output_dir.string()},
             {"cache_dir", c.cache_dir.string()},
             {"concurrency", c.concurrency},
             {"max_retries", c.max_retries}};
}

inline void from_json(const json& j, RunConfig& c) {
    c.prompt_set = j.at("prompt_set").get<std::string>();
    c.image_root = j.at("image_root").get<std::string>();
    if (j.contains("generator_backend")) j.at("generator_backend").get_to(c.generator_backend);
    if (j.contains("detector_backend")) j.at("detector_backend").get_to(c.detector_backend);
    if (j.contains("vqa_backend")) j.at("vqa_backend").get_to(c.vqa_backend);
    if (j.contains("generation_template"))
        j.at("generation_template").get_to(c.generation_template);
    if (j.contains("decomposition")) j.at("decomposition").get_to(c.decomposition);
    if (j.contains("aggregation")) j.at("aggregation").get_to(c.aggregation);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("cache_dir")) c.cache_dir = j.at("cache_dir").get<std::string>();
    if (j.contains("concurrency")) j.at("concurrency").get_to(c.concurrency);
    if (j.contains("max_retries")) j.at("max_retries").get_to(c.max_retries);
}

inline std::string config_hash(const RunConfig& c) { return sha256_hex(json(c).dump()); }

// ---------------------------------------------------------------------------
// Prompt-set ingestion and image discovery
// ---------------------------------------------------------------------------

/// JSONL loader: {id, text, category, human_score?} per line. Unknown
/// categories are kept as "other" with a warning; structural problems are
/// errors naming the line; set-level violations (duplicate ids, empty fields)
/// raise a SchemaError listing all of them.
inline std::vector<PromptRecord> load_prompt_set(const std::filesystem::path& path,
                                                 std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open prompt set " + path.string());
    std::vector<PromptRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError(where + ": malformed JSON");
        if (!j.is_object()) throw ParseError(where + ": line is not a JSON object");
        PromptRecord r;
        if (!j.contains("id") || !j.at("id").is_string())
            throw ParseError(where + ": missing string key \"id\"");
        if (!j.contains("text") || !j.at("text").is_string())
            throw ParseError(where + ": missing string key \"text\"");
        if (!j.contains("category") || !j.at("category").is_string())
            throw ParseError(where + ": missing string key \"category\"");
        r.id = j.at("id").get<std::string>();
        r.text = j.at("text").get<std::string>();
        const std::string cat = j.at("category").get<std::string>();
        if (auto c = category_from_string(cat)) {
            r.category = *c;
        } else {
            r.category = Category::Other;
            if (warnings)
                warnings->push_back(where + ": unknown category \"" + cat + "\", using other");
        }
        if (j.contains("human_score") && !j.at("human_score").is_null())
            r.human_score = j.at("human_score").get<double>();
        records.push_back(std::move(r));
    }
    const auto issues = validate_prompt_set(records);
    if (!issues.empty()) {
        std::vector<std::string> violations;
        violations.reserve(issues.size());
        for (const auto& i : issues) violations.push_back(i.subject + ": " + i.message);
        std::string msg = "prompt set " + path.string() + " is invalid: ";
        for (std::size_t i = 0; i < violations.size(); ++i) {
            if (i) msg += "; ";
            msg += violations[i];
        }
        throw SchemaError(msg, violations);
    }
    return records;
}

/// `<image_root>/<prompt.id>/*.{png,jpg,jpeg}` (extensions matched
/// case-insensitively), sorted lexicographically. Empty when nothing matches;
/// the caller records that as a failure.
inline std::vector<std::filesystem::path> resolve_images(
    const PromptRecord& prompt, const std::filesystem::path& image_root) {
    const auto dir = image_root / prompt.id;
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.string() < b.string(); });
    return out;
}

// ---------------------------------------------------------------------------
// Backends by name
// ---------------------------------------------------------------------------

struct BackendBundle {
    std::unique_ptr<GeneratorBackend> generator;
    std::unique_ptr<DetectorBackend> detector;
    std::unique_ptr<VqaBackend> vqa;
};

/// Instantiates the configured backends. "http" backends read their endpoint
/// settings from TIALIGN_GENERATOR_* / TIALIGN_VQA_* environment variables.
/// There is no real detector adapter: images evaluated with real backends
/// still need `<image>.boxes.json` sidecars (or a future adapter).
inline BackendBundle make_backends(const RunConfig& config) {
    BackendBundle b;
    if (config.generator_backend == "oracle") {
        b.generator = std::make_unique<testkit::OracleGenerator>();
    } else if (config.generator_backend == "oracle-chatty") {
        b.generator =
            std::make_unique<testkit::OracleGenerator>(testkit::OracleGenerator::Style::Chatty);
    } else if (config.generator_backend == "http") {
        b.generator = http_generator_from_env();
        if (!b.generator)
            throw InputError("generator backend \"http\" needs TIALIGN_GENERATOR_BASE_URL");
    } else {
        throw InputError("unknown generator backend \"" + config.generator_backend + "\"");
    }

    if (config.detector_backend == "oracle") {
        b.detector = std::make_unique<testkit::OracleDetector>();
    } else {
        throw InputError("unknown detector backend \"" + config.detector_backend + "\"");
    }

    if (config.vqa_backend == "oracle") {
        b.vqa = std::make_unique<testkit::OracleVqa>();
    } else if (config.vqa_backend == "oracle-soft") {
        b.vqa = std::make_unique<testkit::OracleVqa>(/*soft=*/true);
    } else if (config.vqa_backend == "http") {
        auto vqa = http_vqa_from_env();
        if (!vqa) throw InputError("vqa backend \"http\" needs TIALIGN_VQA_BASE_URL");
        b.vqa = std::move(vqa);
    } else {
        throw InputError("unknown vqa backend \"" + config.vqa_backend + "\"");
    }
    return b;
}

// ---------------------------------------------------------------------------
// Single-sample evaluation
// ---------------------------------------------------------------------------

/// The full pipeline for one (prompt, image) pair: decompose, detect and pair
/// boxes, crop, score all three groups, aggregate.
inline EvalResult evaluate_sample(const PromptRecord& prompt,
                                  const std::filesystem::path& image_path, GeneratorBackend& gen,
                                  DetectorBackend& det, VqaBackend& vqa,
                                  const GenerationTemplate& tmpl,
                                  const DecompositionConfig& dconf,
                                  const AggregationPolicy& policy, int max_retries,
                                  FileCache* cache) {
    QuestionSet qs = decompose_prompt(prompt, gen, tmpl, max_retries, cache);
    const ImageBuffer img = ImageBuffer::load(image_path);
    const BoxSet boxes = build_box_set(img, det, dconf, cache);
    const QuestionScores scores = score_question_set(qs, img, boxes, vqa, dconf, cache, 1);

    auto values = [](const std::vector<PerQuestionScore>& v) {
        std::vector<double> out;
        out.reserve(v.size());
        for (const auto& s : v) out.push_back(s.score);
        return out;
    };

    EvalResult r;
    r.prompt_id = prompt.id;
    r.image_id = image_path.stem().string();
    r.fine_grained =
        fine_grained_score(values(scores.entity), values(scores.relational), policy);
    r.coarse_grained = coarse_grained_score(values(scores.global_));
    r.overall = overall_score(r.fine_grained, r.coarse_grained);
    r.per_question.reserve(scores.entity.size() + scores.relational.size() +
                           scores.global_.size());
    for (const auto& s : scores.entity) r.per_question.push_back(s);
    for (const auto& s : scores.relational) r.per_question.push_back(s);
    for (const auto& s : scores.global_) r.per_question.push_back(s);
    if (boxes.entity_fallback_used) r.degeneracy_flags.insert(DegeneracyFlag::NoEntitiesDetected);
    if (boxes.relational_fallback_used)
        r.degeneracy_flags.insert(DegeneracyFlag::NoRelationalBoxes);
    if (qs.entity.empty()) r.degeneracy_flags.insert(DegeneracyFlag::NoEntityQuestions);
    if (qs.relational.empty()) r.degeneracy_flags.insert(DegeneracyFlag::NoRelationalQuestions);
    return r;
}

// ---------------------------------------------------------------------------
// Run results
// ---------------------------------------------------------------------------

struct FailureRecord {
    std::string prompt_id;
    std::string image_id;
    std::string error;

    bool operator==(const FailureRecord&) const = default;
};

inline void to_json(json& j, const FailureRecord& f) {
    j = json{{"prompt_id", f.prompt_id}, {"image_id", f.image_id}, {"error", f.error}};
}

inline void from_json(const json& j, FailureRecord& f) {
    j.at("prompt_id").get_to(f.prompt_id);
    j.at("image_id").get_to(f.image_id);
    j.at("error").get_to(f.error);
}

struct RunSummary {
    int n_pairs = 0;
    int n_results = 0;
    int n_failures = 0;
    bool aborted = false;
    double wall_seconds = 0.0;
    std::optional<double> mean_overall;
    std::map<std::string, double> mean_overall_by_category;
};

inline void to_json(json& j, const RunSummary& s) {
    j = json{{"n_pairs", s.n_pairs},
             {"n_results", s.n_results},
             {"n_failures", s.n_failures},
             {"aborted", s.aborted},
             {"wall_seconds", s.wall_seconds},
             {"mean_overall", s.mean_overall ? json(*s.mean_overall) : json(nullptr)},
             {"mean_overall_by_category", s.mean_overall_by_category}};
}

struct RunResult {
    std::string run_id;
    std::filesystem::path run_dir;
    std::vector<EvalResult> results;     // resumed results first, then this run's, in sample order
    std::vector<FailureRecord> failures; // this run's failures only
    RunSummary summary;
    std::vector<std::string> warnings;
};

/// Test seams. after_sample is called after every completed sample (result or
/// failure) with the completed count; returning false aborts the run the way
/// a kill would, leaving results.jsonl at a clean line boundary.
/// backend_factory, when set, replaces make_backends (e.g. call-counting
/// wrappers).
struct RunHooks {
    std::function<bool(std::size_t completed)> after_sample;
    std::function<BackendBundle(const RunConfig&)> backend_factory;
};

namespace detail {

inline std::string utc_timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

/// Latest run directory whose name carries this config hash prefix.
inline std::optional<std::filesystem::path> find_existing_run(
    const std::filesystem::path& output_dir, const std::string& hash8) {
    if (!std::filesystem::is_directory(output_dir)) return std::nullopt;
    std::optional<std::filesystem::path> best;
    for (const auto& entry : std::filesystem::directory_iterator(output_dir)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.find("-" + hash8) == std::string::npos) continue;
        if (!best || best->filename().string() < name) best = entry.path();
    }
    return best;
}

/// Reads results.jsonl. A line counts only when newline-terminated and valid;
/// a bad tail (killed writer) is cut back to the last good byte so appends
/// stay line-aligned, while a bad line mid-file is real corruption.
inline std::vector<EvalResult> read_existing_results(const std::filesystem::path& file) {
    std::vector<EvalResult> out;
    if (!std::filesystem::exists(file)) return out;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InputError("cannot open " + file.string());
    std::string line;
    std::uintmax_t good_bytes = 0;
    bool bad_tail = false;
    while (std::getline(in, line)) {
        if (in.eof()) {                 // content with no trailing newline: partial write
            bad_tail = true;
            break;
        }
        if (line.empty()) {
            good_bytes += 1;
            continue;
        }
        bool ok = false;
        json j = json::parse(line, nullptr, false);
        if (!j.is_discarded()) {
            try {
                out.push_back(j.get<EvalResult>());
                ok = true;
            } catch (const std::exception&) {
            }
        }
        if (!ok) {
            std::string rest;
            if (std::getline(in, rest))
                throw ParseError("corrupt line mid-file in " + file.string());
            bad_tail = true;
            break;
        }
        good_bytes += line.size() + 1;
    }
    in.close();
    if (bad_tail) std::filesystem::resize_file(file, good_bytes);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

/// Evaluates every (prompt, image) pair. Results append to
/// `<outdir>/<run_id>/results.jsonl` strictly in sample order (a reorder
/// buffer serializes the worker pool's completions), so reruns are
/// byte-comparable and an interrupted file is a clean prefix. With resume,
/// the latest run directory for this config is reused and samples already in
/// results.jsonl are skipped. Per-sample errors land in failures.jsonl
/// (rewritten each run) instead of aborting.
inline RunResult run_evaluation(const RunConfig& config, bool resume = false,
                                const RunHooks& hooks = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    config.validate();

    RunResult rr;
    const std::vector<PromptRecord> prompts = load_prompt_set(config.prompt_set, &rr.warnings);
    FileCache cache(config.cache_dir);
    BackendBundle backends =
        hooks.backend_factory ? hooks.backend_factory(config) : make_backends(config);

    struct Task {
        const PromptRecord* prompt;
        std::filesystem::path image;   // empty: missing-images failure
        std::string image_id;
    };
    std::vector<Task> tasks;
    std::map<std::string, Category> category_by_prompt;
    for (const auto& p : prompts) {
        category_by_prompt[p.id] = p.category;
        const auto images = resolve_images(p, config.image_root);
        if (images.empty()) {
            tasks.push_back({&p, {}, ""});
            continue;
        }
        for (const auto& img : images) tasks.push_back({&p, img, img.stem().string()});
    }

    const std::string hash8 = config_hash(config).substr(0, 8);
    std::filesystem::path run_dir;
    if (resume) {
        if (auto existing = detail::find_existing_run(config.output_dir, hash8))
            run_dir = *existing;
    }
    if (run_dir.empty()) {
        std::filesystem::create_directories(config.output_dir);
        std::string base = detail::utc_timestamp() + "-" + hash8;
        run_dir = config.output_dir / base;
        for (int suffix = 2; std::filesystem::exists(run_dir); ++suffix)
            run_dir = config.output_dir / (base + "-" + std::to_string(suffix));
        std::filesystem::create_directories(run_dir);
        std::ofstream cfg(run_dir / "config.json");
        cfg << json(config).dump(2) << "\n";
    }
    rr.run_dir = run_dir;
    rr.run_id = run_dir.filename().string();

    rr.results = detail::read_existing_results(run_dir / "results.jsonl");
    std::set<std::pair<std::string, std::string>> done;
    for (const auto& r : rr.results) done.insert({r.prompt_id, r.image_id});

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i].image.empty() || !done.count({tasks[i].prompt->id, tasks[i].image_id}))
            pending.push_back(i);

    struct Outcome {
        bool ready = false;
        std::optional<EvalResult> result;
        std::string error;
    };
    std::vector<Outcome> outcomes(pending.size());
    std::mutex mtx;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};

    auto worker = [&] {
        for (;;) {
            if (abort.load()) return;
            const std::size_t k = next.fetch_add(1);
            if (k >= pending.size()) return;
            const Task& task = tasks[pending[k]];
            Outcome o;
            if (task.image.empty()) {
                o.error = "missing images";
            } else {
                try {
                    o.result = evaluate_sample(*task.prompt, task.image, *backends.generator,
                                               *backends.detector, *backends.vqa,
                                               config.generation_template, config.decomposition,
                                               config.aggregation, config.max_retries, &cache);
                } catch (const std::exception& e) {
                    o.error = e.what();
                } catch (...) {
                    o.error = "unknown error";
                }
            }
            o.ready = true;
            {
                std::lock_guard<std::mutex> lock(mtx);
                outcomes[k] = std::move(o);
            }
            cv.notify_all();
        }
    };

    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(
        static_cast<std::size_t>(config.concurrency), std::max<std::size_t>(pending.size(), 1));
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);

    std::ofstream results_out(run_dir / "results.jsonl", std::ios::app);
    if (!results_out) throw InputError("cannot open results.jsonl for append");
    std::size_t completed = 0;
    for (std::size_t k = 0; k < pending.size(); ++k) {
        Outcome o;
        {
            std::unique_lock<std::mutex> lock(mtx);
            cv.wait(lock, [&] { return outcomes[k].ready; });
            o = std::move(outcomes[k]);
        }
        const Task& task = tasks[pending[k]];
        if (o.result) {
            json line = *o.result;
            line["category"] = to_string(task.prompt->category);
            results_out << line.dump() << "\n";
            results_out.flush();
            rr.results.push_back(std::move(*o.result));
        } else {
            rr.failures.push_back({task.prompt->id, task.image_id, o.error});
        }
        ++completed;
        if (hooks.after_sample && !hooks.after_sample(completed)) {
            abort.store(true);
            rr.summary.aborted = true;
            break;
        }
    }
    abort.store(true);
    for (auto& t : pool) t.join();
    results_out.close();

    {
        std::ofstream failures_out(run_dir / "failures.jsonl", std::ios::trunc);
        for (const auto& f : rr.failures) failures_out << json(f).dump() << "\n";
    }

    rr.summary.n_pairs = static_cast<int>(tasks.size());
    rr.summary.n_results = static_cast<int>(rr.results.size());
    rr.summary.n_failures = static_cast<int>(rr.failures.size());
    double sum = 0.0;
    std::map<std::string, std::pair<double, int>> by_cat;
    for (const auto& r : rr.results) {
        sum += r.overall;
        auto it = category_by_prompt.find(r.prompt_id);
        const std::string cat =
            it != category_by_prompt.end() ? to_string(it->second) : std::string("other");
        auto& acc = by_cat[cat];
        acc.first += r.overall;
        acc.second += 1;
    }
    if (!rr.results.empty())
        rr.summary.mean_overall = sum / static_cast<double>(rr.results.size());
    for (const auto& [cat, acc] : by_cat)
        rr.summary.mean_overall_by_category[cat] = acc.first / acc.second;
    rr.summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        std::ofstream summary_out(run_dir / "summary.json", std::ios::trunc);
        json s = rr.summary;
        s["run_id"] = rr.run_id;
        summary_out << s.dump(2) << "\n";
    }
    return rr;
}

// ---------------------------------------------------------------------------
// Human-ratings join for correlation
// ---------------------------------------------------------------------------

struct HumanRating {
    std::string prompt_id;
    std::string image_id;
    double human_score = 0.0;
};

inline void from_json(const json& j, HumanRating& h) {
    j.at("prompt_id").get_to(h.prompt_id);
    j.at("image_id").get_to(h.image_id);
    j.at("human_score").get_to(h.human_score);
}

inline std::vector<HumanRating> load_human_ratings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open human ratings " + path.string());
    std::vector<HumanRating> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path.filename().string() + ":" + std::to_string(line_no) +
                             ": malformed JSON");
        try {
            out.push_back(j.get<HumanRating>());
        } catch (const json::exception& e) {
            throw ParseError(path.filename().string() + ":" + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    return out;
}

/// Joins results (overall score) with human ratings on (prompt_id, image_id).
/// The image id doubles as the model id: images of one prompt are named per
/// generating model. Category comes from `categories` (prompt id -> category),
/// falling back to "other". Unjoined rows are counted into *unjoined.
inline std::vector<CorrelationSample> join_for_correlation(
    const std::vector<EvalResult>& results, const std::vector<HumanRating>& ratings,
    const std::map<std::string, Category>& categories, int* unjoined = nullptr) {
    std::map<std::pair<std::string, std::string>, double> human;
    for (const auto& h : ratings) human[{h.prompt_id, h.image_id}] = h.human_score;
    std::vector<CorrelationSample> out;
    int missed = 0;
    for (const auto& r : results) {
        auto it = human.find({r.prompt_id, r.image_id});
        if (it == human.end()) {
            ++missed;
            continue;
        }
        CorrelationSample s;
        s.metric_score = r.overall;
        s.human_score = it->second;
        s.model = r.image_id;
        auto cat = categories.find(r.prompt_id);
        s.category = cat != categories.end() ? to_string(cat->second) : std::string("other");
        out.push_back(std::move(s));
    }
    if (unjoined) *unjoined = missed;
    return out;
}

} // namespace tialign
