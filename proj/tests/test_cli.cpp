#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "support/cli.hpp"
#include "support/tmpdir.hpp"
#include "tialign/harness.hpp"
#include "tialign/testkit.hpp"

using namespace tialign;
using testsupport::run_cli;
using testsupport::TempDir;

namespace {

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

/// Renders a deterministic suite under tmp/<name> and writes a run config next
/// to it. Returns the config path.
std::filesystem::path make_suite(const TempDir& tmp, const std::string& name, int scenes,
                                 int max_corruptions) {
    testkit::SuiteConfig sc;
    sc.scene_count = scenes;
    sc.canvas_size = 128;
    sc.seed = 17;
    sc.max_corruptions = max_corruptions;
    testkit::write_suite(testkit::generate_suite(sc), tmp.path / name);

    RunConfig config;
    config.prompt_set = tmp.path / name / "prompts.jsonl";
    config.image_root = tmp.path / name / "images";
    config.output_dir = tmp.path / (name + "-runs");
    config.cache_dir = tmp.path / (name + "-cache");
    const auto path = tmp.path / (name + "-config.json");
    std::ofstream(path) << json(config).dump(2) << "\n";
    return path;
}

json result_line(const std::string& prompt_id, const std::string& image_id, double overall,
                 const std::string& category) {
    return json{{"prompt_id", prompt_id},
                {"image_id", image_id},
                {"fine_grained", overall},
                {"coarse_grained", overall},
                {"overall", overall},
                {"per_question", json::array()},
                {"degeneracy_flags", json::array()},
                {"category", category}};
}

json rating_line(const std::string& prompt_id, const std::string& image_id, double score) {
    return json{{"prompt_id", prompt_id}, {"image_id", image_id}, {"human_score", score}};
}

void write_jsonl(const std::filesystem::path& file, const std::vector<json>& lines) {
    std::ofstream out(file);
    for (const auto& l : lines) out << l.dump() << "\n";
}

} // namespace

TEST_CASE("decompose emits question sets as JSONL", "[cli]") {
    TempDir tmp;

    SECTION("--prompt prints one decodable line") {
        const auto r =
            run_cli("decompose --prompt \"a red square left of a blue circle\"", tmp.path);
        REQUIRE(r.exit_code == 0);
        const auto qs = json::parse(r.out).get<QuestionSet>();
        CHECK(!qs.entity.empty());
        CHECK(!qs.global_.empty());
        CHECK(json(qs).dump() + "\n" == r.out);
    }

    SECTION("prompt flags are mutually exclusive and one is required") {
        CHECK(run_cli("decompose", tmp.path).exit_code == 1);
        const auto both = run_cli("decompose --prompt x --prompt-set y.jsonl", tmp.path);
        CHECK(both.exit_code == 1);
        CHECK(both.err.find("error") != std::string::npos);
        CHECK(both.out.empty());
    }

    SECTION("--out writes the payload to a file, stdout stays silent") {
        const auto out_file = tmp.path / "questions.jsonl";
        const auto r = run_cli("decompose --prompt \"a green triangle\" --out " + q(out_file),
                               tmp.path);
        REQUIRE(r.exit_code == 0);
        CHECK(r.out.empty());
        const auto qs = json::parse(testsupport::slurp(out_file)).get<QuestionSet>();
        CHECK(qs.entity.size() == 1);
        CHECK(qs.relational.empty());
    }

    SECTION("--prompt-set emits one line per prompt") {
        const auto file = tmp.path / "prompts.jsonl";
        std::ofstream(file)
            << R"({"id":"p1","text":"a red square","category":"color"})" << "\n"
            << R"({"id":"p2","text":"a blue circle and a yellow square","category":"shape"})"
            << "\n";
        const auto r = run_cli("decompose --prompt-set " + q(file), tmp.path);
        REQUIRE(r.exit_code == 0);
        std::istringstream lines(r.out);
        std::string line;
        int n = 0;
        while (std::getline(lines, line)) {
            const auto qs = json::parse(line).get<QuestionSet>();
            CHECK(!qs.global_.empty());
            ++n;
        }
        CHECK(n == 2);
    }

    SECTION("an undecomposable prompt exits 1 with the raw output shown") {
        const auto r = run_cli("decompose --prompt \"hello there\"", tmp.path);
        CHECK(r.exit_code == 1);
        CHECK(r.err.find("error") != std::string::npos);
    }
}

TEST_CASE("detect emits the box set for an image", "[cli]") {
    TempDir tmp;
    testkit::SuiteConfig sc;
    sc.scene_count = 1;
    sc.canvas_size = 128;
    sc.seed = 2;
    sc.max_corruptions = 0;
    testkit::write_suite(testkit::generate_suite(sc), tmp.path / "suite");
    const auto image = tmp.path / "suite" / "images" / "scene-000" / "clean.png";

    const auto r = run_cli("detect --image " + q(image), tmp.path);
    REQUIRE(r.exit_code == 0);
    const auto boxes = json::parse(r.out).get<BoxSet>();
    CHECK(!boxes.entity_boxes.empty());
    CHECK(!boxes.relational_boxes.empty());
    CHECK(boxes.image_width == 128);

    CHECK(run_cli("detect --image " + q(tmp.path / "absent.png"), tmp.path).exit_code == 1);
}

TEST_CASE("score evaluates one prompt against one image", "[cli]") {
    TempDir tmp;
    testkit::SceneSpec spec;
    spec.width = 120;
    spec.height = 60;
    testkit::SceneObject a, b;
    a.shape = testkit::Shape::Square;
    a.color = testkit::Color::Red;
    a.box = Box{10, 10, 50, 50, "", 1.0, BoxKind::Entity, {}};
    b.shape = testkit::Shape::Circle;
    b.color = testkit::Color::Blue;
    b.box = Box{60, 10, 100, 50, "", 1.0, BoxKind::Entity, {}};
    spec.objects = {a, b};
    spec.relations = {{0, testkit::Predicate::LeftOf, 1}};
    spec.prompt_text = spec.render_prompt();
    const auto image = tmp.path / "scene.png";
    testkit::render_scene(spec, image);

    const auto r = run_cli("score --prompt \"" + spec.prompt_text + "\" --image " + q(image),
                           tmp.path);
    REQUIRE(r.exit_code == 0);
    const auto result = json::parse(r.out).get<EvalResult>();
    CHECK(result.overall == 1.0);
    CHECK(result.image_id == "scene");
}

TEST_CASE("evaluate runs a config end to end", "[cli]") {
    TempDir tmp;

    SECTION("a clean suite exits 0 and prints per-category means") {
        const auto config = make_suite(tmp, "ok", 3, 0);
        const auto r = run_cli("evaluate --config " + q(config), tmp.path);
        REQUIRE(r.exit_code == 0);
        CHECK(r.out.find("pairs 3") != std::string::npos);
        CHECK(r.out.find("failures 0") != std::string::npos);
        CHECK(r.out.find("all") != std::string::npos);
        CHECK(r.out.find("1.0000") != std::string::npos);
    }

    SECTION("--json prints a machine-readable summary") {
        const auto config = make_suite(tmp, "js", 2, 0);
        const auto r = run_cli("evaluate --config " + q(config) + " --json", tmp.path);
        REQUIRE(r.exit_code == 0);
        const auto payload = json::parse(r.out);
        CHECK(payload.contains("run_id"));
        CHECK(payload.at("summary").at("n_results") == 2);
        CHECK(payload.at("failures").empty());
    }

    SECTION("a missing image root exits 1 before any run directory exists") {
        const auto config = make_suite(tmp, "gone", 1, 0);
        std::filesystem::remove_all(tmp.path / "gone" / "images");
        const auto r = run_cli("evaluate --config " + q(config), tmp.path);
        CHECK(r.exit_code == 1);
        CHECK(r.err.find("error") != std::string::npos);
        CHECK_FALSE(std::filesystem::exists(tmp.path / "gone-runs"));
    }

    SECTION("a corrupt image exits 2 and lands in failures.jsonl") {
        const auto config = make_suite(tmp, "bad", 2, 0);
        std::ofstream(tmp.path / "bad" / "images" / "scene-001" / "clean.png",
                      std::ios::trunc)
            << "garbage";
        const auto r = run_cli("evaluate --config " + q(config), tmp.path);
        CHECK(r.exit_code == 2);

        // exactly one failure line in the run directory
        std::filesystem::path run_dir;
        for (const auto& e : std::filesystem::directory_iterator(tmp.path / "bad-runs"))
            run_dir = e.path();
        const auto failures = testsupport::slurp(run_dir / "failures.jsonl");
        CHECK(std::count(failures.begin(), failures.end(), '\n') == 1);
        CHECK(failures.find("scene-001") != std::string::npos);
    }
}

TEST_CASE("correlate reports agreement between scores and ratings", "[cli]") {
    TempDir tmp;
    const auto results = tmp.path / "results.jsonl";
    const auto human = tmp.path / "human.jsonl";

    SECTION("identical orderings give 1.0 everywhere") {
        std::vector<json> rl, hl;
        for (int i = 0; i < 4; ++i) {
            const std::string pid = "p" + std::to_string(i);
            rl.push_back(result_line(pid, "model-a", 0.2 * i, "color"));
            hl.push_back(rating_line(pid, "model-a", 0.1 * i));
        }
        write_jsonl(results, rl);
        write_jsonl(human, hl);
        const auto r = run_cli(
            "correlate --results " + q(results) + " --human " + q(human) + " --json",
            tmp.path);
        REQUIRE(r.exit_code == 0);
        const auto reports = json::parse(r.out).get<std::vector<CorrelationReport>>();
        REQUIRE(!reports.empty());
        CHECK(*reports[0].tau == 1.0);
        CHECK(*reports[0].rho == 1.0);
    }

    SECTION("opposite orderings give -1.0") {
        std::vector<json> rl, hl;
        for (int i = 0; i < 4; ++i) {
            const std::string pid = "p" + std::to_string(i);
            rl.push_back(result_line(pid, "model-a", 0.2 * i, "color"));
            hl.push_back(rating_line(pid, "model-a", 1.0 - 0.1 * i));
        }
        write_jsonl(results, rl);
        write_jsonl(human, hl);
        const auto r = run_cli(
            "correlate --results " + q(results) + " --human " + q(human) + " --json",
            tmp.path);
        REQUIRE(r.exit_code == 0);
        const auto reports = json::parse(r.out).get<std::vector<CorrelationReport>>();
        CHECK(*reports[0].tau == -1.0);
    }

    SECTION("a partial agreement renders 0.6667 in the table") {
        const std::vector<double> metric = {0.1, 0.2, 0.3, 0.4};
        const std::vector<double> ratings = {0.1, 0.3, 0.2, 0.4};
        std::vector<json> rl, hl;
        for (int i = 0; i < 4; ++i) {
            const std::string pid = "p" + std::to_string(i);
            rl.push_back(result_line(pid, "model-a", metric[i], "color"));
            hl.push_back(rating_line(pid, "model-a", ratings[i]));
        }
        write_jsonl(results, rl);
        write_jsonl(human, hl);
        const auto r =
            run_cli("correlate --results " + q(results) + " --human " + q(human), tmp.path);
        REQUIRE(r.exit_code == 0);
        CHECK(r.out.find("Model") != std::string::npos);
        CHECK(r.out.find("model-a") != std::string::npos);
        CHECK(r.out.find("Mean") != std::string::npos);
        CHECK(r.out.find("0.6667") != std::string::npos);
    }

    SECTION("unjoinable rows warn on stderr without failing") {
        std::vector<json> rl, hl;
        for (int i = 0; i < 3; ++i) {
            const std::string pid = "p" + std::to_string(i);
            rl.push_back(result_line(pid, "model-a", 0.2 * i, "color"));
            hl.push_back(rating_line(pid, "model-a", 0.2 * i));
        }
        rl.push_back(result_line("p9", "model-a", 0.5, "color"));
        write_jsonl(results, rl);
        write_jsonl(human, hl);
        const auto r = run_cli(
            "correlate --results " + q(results) + " --human " + q(human) + " --json",
            tmp.path);
        CHECK(r.exit_code == 0);
        CHECK(r.err.find("unjoinable") != std::string::npos);
        CHECK_FALSE(json::parse(r.out).empty());   // stdout still pure JSON
    }

    SECTION("every group too small to correlate exits 1") {
        write_jsonl(results, {result_line("p1", "model-a", 0.5, "color")});
        write_jsonl(human, {rating_line("p1", "model-a", 0.5)});
        const auto r =
            run_cli("correlate --results " + q(results) + " --human " + q(human), tmp.path);
        CHECK(r.exit_code == 1);
        CHECK(r.err.find("fewer than 2") != std::string::npos);
    }

    SECTION("--group-by model collapses categories") {
        std::vector<json> rl, hl;
        for (int i = 0; i < 4; ++i) {
            const std::string pid = "p" + std::to_string(i);
            rl.push_back(result_line(pid, "model-a", 0.2 * i, i < 2 ? "color" : "shape"));
            hl.push_back(rating_line(pid, "model-a", 0.1 * i));
        }
        write_jsonl(results, rl);
        write_jsonl(human, hl);
        const auto r = run_cli("correlate --results " + q(results) + " --human " + q(human) +
                                   " --group-by model --json",
                               tmp.path);
        REQUIRE(r.exit_code == 0);
        const auto reports = json::parse(r.out).get<std::vector<CorrelationReport>>();
        REQUIRE(!reports.empty());
        CHECK(reports[0].n == 4);
        CHECK(reports[0].category == "all");

        CHECK(run_cli("correlate --results " + q(results) + " --human " + q(human) +
                          " --group-by banana",
                      tmp.path)
                  .exit_code == 1);
    }
}

TEST_CASE("report renders a finished run directory", "[cli]") {
    TempDir tmp;
    const auto config = make_suite(tmp, "rep", 2, 0);
    const auto ev = run_cli("evaluate --config " + q(config) + " --json", tmp.path);
    REQUIRE(ev.exit_code == 0);
    const std::string run_dir = json::parse(ev.out).at("run_dir").get<std::string>();

    const auto r = run_cli("report --run " + run_dir, tmp.path);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("pairs 2") != std::string::npos);
    CHECK(r.out.find("failures 0") != std::string::npos);

    const auto rj = run_cli("report --run " + run_dir + " --json", tmp.path);
    REQUIRE(rj.exit_code == 0);
    const auto payload = json::parse(rj.out);
    CHECK(payload.at("summary").at("n_pairs") == 2);
    CHECK(payload.contains("config"));

    CHECK(run_cli("report --run " + q(tmp.path / "nope"), tmp.path).exit_code == 1);
}

TEST_CASE("the suite generator feeds the evaluator", "[cli]") {
    TempDir tmp;
    const auto suite_dir = tmp.path / "generated";
    const auto gen = testsupport::run_process(
        TIALIGN_SUITE_PATH,
        "--out " + q(suite_dir) + " --scenes 2 --canvas 96 --seed 3 --max-corruptions 1",
        tmp.path);
    REQUIRE(gen.exit_code == 0);
    CHECK(gen.err.find("wrote 2 scenes") != std::string::npos);
    CHECK(std::filesystem::exists(suite_dir / "prompts.jsonl"));
    CHECK(std::filesystem::exists(suite_dir / "human.jsonl"));

    RunConfig config;
    config.prompt_set = suite_dir / "prompts.jsonl";
    config.image_root = suite_dir / "images";
    config.output_dir = tmp.path / "runs";
    config.cache_dir = tmp.path / "cache";
    const auto config_path = tmp.path / "config.json";
    std::ofstream(config_path) << json(config).dump() << "\n";

    const auto ev = run_cli("evaluate --config " + q(config_path) + " --json", tmp.path);
    REQUIRE(ev.exit_code == 0);
    CHECK(json::parse(ev.out).at("summary").at("n_results") == 4);
}

TEST_CASE("bad invocations exit 1 with usage on stderr", "[cli]") {
    TempDir tmp;
    const auto none = run_cli("", tmp.path);
    CHECK(none.exit_code == 1);
    const auto unknown = run_cli("frobnicate", tmp.path);
    CHECK(unknown.exit_code == 1);
    CHECK(unknown.out.empty());
    const auto badflag = run_cli("decompose --prompt x --no-such-flag", tmp.path);
    CHECK(badflag.exit_code == 1);
}
