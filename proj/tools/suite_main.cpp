// tialign-suite: renders a synthetic scene suite (prompts, images, sidecars,
// human ratings) for offline evaluation runs.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tialign/testkit.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic scene suite generator"};
    std::string out;
    tialign::testkit::SuiteConfig config;
    app.add_option("--out", out, "suite directory")->required();
    app.add_option("--scenes", config.scene_count, "number of scenes");
    app.add_option("--canvas", config.canvas_size, "canvas side in pixels");
    app.add_option("--seed", config.seed, "generator seed");
    app.add_option("--max-corruptions", config.max_corruptions,
                   "corrupted variants per scene");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto suite = tialign::testkit::generate_suite(config);
        tialign::testkit::write_suite(suite, out);
        std::cerr << "wrote " << suite.size() << " scenes to " << out << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
