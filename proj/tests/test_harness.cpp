#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "support/backends.hpp"
#include "support/tmpdir.hpp"
#include "tialign/harness.hpp"
#include "tialign/testkit.hpp"

using namespace tialign;
using testsupport::BackendCounters;
using testsupport::TempDir;

namespace {

void write_lines(const std::filesystem::path& file, const std::vector<std::string>& lines) {
    std::ofstream out(file);
    for (const auto& l : lines) out << l << "\n";
}

std::string slurp_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Renders a small deterministic suite and returns a ready-to-run config.
RunConfig suite_config(const TempDir& tmp, int scenes, int max_corruptions,
                       const std::string& name = "suite") {
    testkit::SuiteConfig sc;
    sc.scene_count = scenes;
    sc.canvas_size = 128;
    sc.seed = 5;
    sc.max_corruptions = max_corruptions;
    testkit::write_suite(testkit::generate_suite(sc), tmp.path / name);

    RunConfig config;
    config.prompt_set = tmp.path / name / "prompts.jsonl";
    config.image_root = tmp.path / name / "images";
    config.output_dir = tmp.path / (name + "-runs");
    config.cache_dir = tmp.path / (name + "-cache");
    return config;
}

} // namespace

TEST_CASE("prompt sets load from JSONL with per-line diagnostics", "[harness]") {
    TempDir tmp;
    const auto file = tmp.path / "prompts.jsonl";

    SECTION("well-formed records parse with categories") {
        write_lines(file,
                    {R"({"id":"p1","text":"a red square","category":"color"})",
                     R"({"id":"p2","text":"a dog left of a cat","category":"spatial","human_score":0.8})",
                     R"({"id":"p3","text":"two cups","category":"non_spatial"})"});
        const auto records = load_prompt_set(file);
        REQUIRE(records.size() == 3);
        CHECK(records[0].category == Category::Color);
        CHECK(records[1].category == Category::Spatial);
        CHECK(records[1].human_score == 0.8);
        CHECK(records[2].category == Category::NonSpatial);
        CHECK_FALSE(records[0].human_score.has_value());
    }

    SECTION("unknown categories degrade to other with a warning") {
        write_lines(file, {R"({"id":"p1","text":"rainy day","category":"weather"})"});
        std::vector<std::string> warnings;
        const auto records = load_prompt_set(file, &warnings);
        REQUIRE(records.size() == 1);
        CHECK(records[0].category == Category::Other);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("weather") != std::string::npos);
        CHECK(warnings[0].find("prompts.jsonl:1") != std::string::npos);
    }

    SECTION("missing keys name the offending line") {
        write_lines(file, {R"({"id":"p1","text":"ok","category":"color"})",
                           R"({"id":"p2","category":"color"})"});
        try {
            load_prompt_set(file);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            const std::string msg = e.what();
            CHECK(msg.find(":2") != std::string::npos);
            CHECK(msg.find("text") != std::string::npos);
        }
    }

    SECTION("malformed JSON and non-object lines are parse errors") {
        write_lines(file, {"{not json"});
        CHECK_THROWS_AS(load_prompt_set(file), ParseError);
        write_lines(file, {"[1,2,3]"});
        CHECK_THROWS_AS(load_prompt_set(file), ParseError);
    }

    SECTION("duplicate ids fail set validation") {
        write_lines(file, {R"({"id":"p1","text":"a","category":"color"})",
                           R"({"id":"p1","text":"b","category":"shape"})"});
        CHECK_THROWS_AS(load_prompt_set(file), SchemaError);
    }

    SECTION("a missing file is an input error") {
        CHECK_THROWS_AS(load_prompt_set(tmp.path / "absent.jsonl"), InputError);
    }
}

TEST_CASE("image resolution scans the prompt's directory", "[harness]") {
    TempDir tmp;
    PromptRecord p{"p1", "x", Category::Color, {}};
    const auto dir = tmp.path / "p1";
    std::filesystem::create_directories(dir);
    for (const auto& name : {"b.png", "a.JPG", "c.jpeg", "notes.txt", "d.gif"})
        std::ofstream(dir / name) << "x";

    const auto images = resolve_images(p, tmp.path);
    REQUIRE(images.size() == 3);
    CHECK(images[0].filename() == "a.JPG");
    CHECK(images[1].filename() == "b.png");
    CHECK(images[2].filename() == "c.jpeg");

    PromptRecord missing{"p2", "y", Category::Color, {}};
    CHECK(resolve_images(missing, tmp.path).empty());
}

TEST_CASE("run configs round-trip through JSON and validate", "[harness]") {
    TempDir tmp;
    RunConfig config = suite_config(tmp, 1, 0);
    config.concurrency = 3;
    config.vqa_backend = "oracle-soft";

    const json j = config;
    CHECK(j.get<RunConfig>() == config);
    CHECK(config_hash(config) == config_hash(j.get<RunConfig>()));
    config.validate();

    SECTION("validation failures") {
        RunConfig bad = config;
        bad.prompt_set = tmp.path / "nope.jsonl";
        CHECK_THROWS_AS(bad.validate(), InputError);
        bad = config;
        bad.concurrency = 0;
        CHECK_THROWS_AS(bad.validate(), InputError);
        bad = config;
        bad.max_retries = -1;
        CHECK_THROWS_AS(bad.validate(), InputError);
    }

    SECTION("hash tracks content") {
        RunConfig other = config;
        other.vqa_backend = "oracle";
        CHECK(config_hash(other) != config_hash(config));
    }
}

TEST_CASE("a clean oracle run scores every pair perfectly", "[harness]") {
    TempDir tmp;
    const RunConfig config = suite_config(tmp, 4, 0);

    const auto rr = run_evaluation(config);
    CHECK(rr.summary.n_pairs == 4);
    CHECK(rr.summary.n_results == 4);
    CHECK(rr.summary.n_failures == 0);
    CHECK_FALSE(rr.summary.aborted);
    REQUIRE(rr.results.size() == 4);
    for (const auto& r : rr.results) {
        CHECK(r.overall == 1.0);
        CHECK(r.coarse_grained == 1.0);
        REQUIRE(r.fine_grained.has_value());
        CHECK(*r.fine_grained == 1.0);
        CHECK(r.degeneracy_flags.empty());
    }
    REQUIRE(rr.summary.mean_overall.has_value());
    CHECK(*rr.summary.mean_overall == 1.0);
    for (const auto& [cat, mean] : rr.summary.mean_overall_by_category) CHECK(mean == 1.0);

    CHECK(std::filesystem::exists(rr.run_dir / "config.json"));
    CHECK(std::filesystem::exists(rr.run_dir / "summary.json"));
    const auto results_text = slurp_file(rr.run_dir / "results.jsonl");
    CHECK(std::count(results_text.begin(), results_text.end(), '\n') == 4);

    const json summary = json::parse(slurp_file(rr.run_dir / "summary.json"));
    CHECK(summary.at("n_results") == 4);
    CHECK(summary.at("run_id") == rr.run_id);
}

TEST_CASE("per-pair failures are isolated", "[harness]") {
    TempDir tmp;
    RunConfig config = suite_config(tmp, 3, 0, "iso");

    SECTION("an undecodable image fails only its own pair") {
        std::ofstream(config.image_root / "scene-001" / "broken.png") << "not a png";
        const auto rr = run_evaluation(config);
        CHECK(rr.summary.n_pairs == 4);
        CHECK(rr.summary.n_results == 3);
        REQUIRE(rr.failures.size() == 1);
        CHECK(rr.failures[0].prompt_id == "scene-001");
        CHECK(rr.failures[0].error.find("undecodable") != std::string::npos);
        CHECK(rr.summary.n_results + rr.summary.n_failures == rr.summary.n_pairs);

        const auto failures_text = slurp_file(rr.run_dir / "failures.jsonl");
        CHECK(std::count(failures_text.begin(), failures_text.end(), '\n') == 1);
    }

    SECTION("a prompt with no images counts as a failed pair") {
        std::ofstream(config.prompt_set, std::ios::app)
            << R"({"id":"ghost","text":"a red square","category":"color"})" << "\n";
        const auto rr = run_evaluation(config);
        CHECK(rr.summary.n_pairs == 4);
        REQUIRE(rr.failures.size() == 1);
        CHECK(rr.failures[0].prompt_id == "ghost");
        CHECK(rr.failures[0].error.find("missing images") != std::string::npos);
    }

    SECTION("a prompt the oracle cannot decompose fails cleanly") {
        std::ofstream(config.prompt_set, std::ios::app)
            << R"({"id":"free","text":"hello there","category":"other"})" << "\n";
        std::filesystem::create_directories(config.image_root / "free");
        std::filesystem::copy_file(config.image_root / "scene-000" / "clean.png",
                                   config.image_root / "free" / "clean.png");
        const auto rr = run_evaluation(config);
        CHECK(rr.summary.n_results == 3);
        REQUIRE(rr.failures.size() == 1);
        CHECK(rr.failures[0].prompt_id == "free");
    }
}

TEST_CASE("a warm cache serves a rerun without backend calls", "[harness]") {
    TempDir tmp;
    const RunConfig config = suite_config(tmp, 3, 1, "warm");

    BackendCounters first;
    RunHooks hooks1;
    hooks1.backend_factory = first.factory();
    const auto run1 = run_evaluation(config, false, hooks1);
    CHECK(run1.summary.n_failures == 0);
    CHECK(first.total() > 0);

    BackendCounters second;
    RunHooks hooks2;
    hooks2.backend_factory = second.factory();
    const auto run2 = run_evaluation(config, false, hooks2);
    CHECK(second.total() == 0);
    CHECK(run2.results == run1.results);
    CHECK(slurp_file(run2.run_dir / "results.jsonl") ==
          slurp_file(run1.run_dir / "results.jsonl"));
    CHECK(run2.run_dir != run1.run_dir);
}

TEST_CASE("an interrupted run resumes to the uninterrupted bytes", "[harness]") {
    TempDir tmp;
    const RunConfig baseline_config = suite_config(tmp, 3, 1, "base");
    const auto baseline = run_evaluation(baseline_config);
    REQUIRE(baseline.summary.n_results == 6);
    const std::string want = slurp_file(baseline.run_dir / "results.jsonl");

    const RunConfig config = suite_config(tmp, 3, 1, "kill");
    RunHooks killer;
    killer.after_sample = [](std::size_t completed) { return completed < 3; };
    const auto killed = run_evaluation(config, false, killer);
    CHECK(killed.summary.aborted);
    CHECK(killed.results.size() == 3);
    const auto partial = slurp_file(killed.run_dir / "results.jsonl");
    CHECK(std::count(partial.begin(), partial.end(), '\n') == 3);

    const auto resumed = run_evaluation(config, true);
    CHECK(resumed.run_dir == killed.run_dir);
    CHECK_FALSE(resumed.summary.aborted);
    CHECK(resumed.results.size() == 6);
    CHECK(slurp_file(resumed.run_dir / "results.jsonl") == want);
}

TEST_CASE("resume tolerates a truncated trailing line", "[harness]") {
    TempDir tmp;
    const RunConfig config = suite_config(tmp, 4, 0, "trunc");
    RunHooks killer;
    killer.after_sample = [](std::size_t completed) { return completed < 2; };
    const auto killed = run_evaluation(config, false, killer);

    // chop the last line's newline plus a few bytes: a torn write
    const auto results_file = killed.run_dir / "results.jsonl";
    const auto full = slurp_file(results_file);
    std::filesystem::resize_file(results_file, full.size() - 5);

    const auto resumed = run_evaluation(config, true);
    CHECK(resumed.summary.n_results == 4);
    const auto fixed = slurp_file(results_file);
    CHECK(std::count(fixed.begin(), fixed.end(), '\n') == 4);
    for (const auto& r : resumed.results) CHECK(r.overall == 1.0);
}

TEST_CASE("human ratings load and join against results", "[harness]") {
    TempDir tmp;
    const auto file = tmp.path / "human.jsonl";
    write_lines(file,
                {R"({"prompt_id":"p1","image_id":"clean","human_score":1.0})",
                 R"({"prompt_id":"p1","image_id":"corrupt1","human_score":0.65})",
                 R"({"prompt_id":"p2","image_id":"clean","human_score":0.9})"});
    const auto ratings = load_human_ratings(file);
    REQUIRE(ratings.size() == 3);
    CHECK(ratings[1].human_score == 0.65);

    write_lines(file, {R"({"prompt_id":"p1"})"});
    CHECK_THROWS_AS(load_human_ratings(file), ParseError);

    EvalResult r1;
    r1.prompt_id = "p1";
    r1.image_id = "clean";
    r1.overall = 0.9;
    EvalResult r2;
    r2.prompt_id = "p1";
    r2.image_id = "corrupt1";
    r2.overall = 0.4;
    EvalResult orphan;
    orphan.prompt_id = "p9";
    orphan.image_id = "clean";

    std::map<std::string, Category> categories{{"p1", Category::Color}};
    int unjoined = 0;
    const auto samples =
        join_for_correlation({r1, r2, orphan}, ratings, categories, &unjoined);
    REQUIRE(samples.size() == 2);
    CHECK(unjoined == 1);
    CHECK(samples[0].metric_score == 0.9);
    CHECK(samples[0].human_score == 1.0);
    CHECK(samples[0].category == "color");
    CHECK(samples[1].human_score == 0.65);
}
