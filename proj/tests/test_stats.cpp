#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "support/oracles.hpp"
#include "tialign/stats.hpp"

using namespace tialign;

namespace {

std::vector<double> random_integer_vector(std::mt19937& rng, int n, int lo, int hi) {
    std::uniform_int_distribution<int> val(lo, hi);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& v : out) v = static_cast<double>(val(rng));
    return out;
}

} // namespace

TEST_CASE("kendall tau on textbook orderings", "[stats]") {
    const std::vector<double> base = {1, 2, 3, 4};
    CHECK(*kendall_tau(base, base) == 1.0);
    CHECK(*kendall_tau(base, {4, 3, 2, 1}) == -1.0);
    CHECK(*kendall_tau(base, {1, 3, 2, 4}) == 4.0 / 6.0);
    CHECK(*kendall_tau({1, 2}, {5, 9}) == 1.0);
}

TEST_CASE("spearman rho on textbook orderings", "[stats]") {
    CHECK(*spearman_rho({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(*spearman_rho({1, 2, 3}, {3, 2, 1}) == -1.0);
    CHECK(*spearman_rho({1, 2, 3}, {3, 1, 2}) == -0.5);
}

TEST_CASE("constant vectors have no defined rank correlation", "[stats]") {
    CHECK_FALSE(kendall_tau({5, 5, 5}, {1, 2, 3}).has_value());
    CHECK_FALSE(kendall_tau({1, 2, 3}, {7, 7, 7}).has_value());
    CHECK_FALSE(spearman_rho({5, 5, 5}, {1, 2, 3}).has_value());
    CHECK_FALSE(spearman_rho({1, 2, 3}, {7, 7, 7}).has_value());
}

TEST_CASE("correlation input validation", "[stats]") {
    CHECK_THROWS_AS(kendall_tau({1, 2}, {1, 2, 3}), InputError);
    CHECK_THROWS_AS(kendall_tau({1}, {2}), InputError);
    CHECK_THROWS_AS(kendall_tau({1, std::numeric_limits<double>::quiet_NaN()}, {1, 2}),
                    InputError);
    CHECK_THROWS_AS(spearman_rho({1, 2}, {1, 2, 3}), InputError);
    CHECK_THROWS_AS(spearman_rho({1}, {2}), InputError);
    CHECK_THROWS_AS(
        spearman_rho({1, 2}, {std::numeric_limits<double>::infinity(), 2}), InputError);
}

TEST_CASE("min-max normalization", "[stats]") {
    bool degenerate = true;
    CHECK(min_max_normalize({2, 4, 6}, &degenerate) == std::vector<double>{0.0, 0.5, 1.0});
    CHECK_FALSE(degenerate);
    CHECK(min_max_normalize({0, 1}) == std::vector<double>{0.0, 1.0});
    CHECK(min_max_normalize({7, 7, 7}, &degenerate) ==
          std::vector<double>{0.5, 0.5, 0.5});
    CHECK(degenerate);
    CHECK_THROWS_AS(min_max_normalize({}), InputError);
}

TEST_CASE("rank correlations match a quadratic reference", "[stats]") {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> len(2, 50);
    int defined = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const int n = len(rng);
        // narrow integer range forces plenty of ties
        const auto xs = random_integer_vector(rng, n, 0, 8);
        const auto ys = random_integer_vector(rng, n, 0, 8);

        const auto tau = kendall_tau(xs, ys);
        const auto tau_ref = testsupport::tau_bruteforce(xs, ys);
        REQUIRE(tau.has_value() == tau_ref.has_value());
        if (tau) {
            CHECK_THAT(*tau, Catch::Matchers::WithinAbs(*tau_ref, 1e-12));
            ++defined;
        }

        const auto rho = spearman_rho(xs, ys);
        const auto rho_ref = testsupport::rho_bruteforce(xs, ys);
        REQUIRE(rho.has_value() == rho_ref.has_value());
        if (rho) CHECK_THAT(*rho, Catch::Matchers::WithinAbs(*rho_ref, 1e-12));
    }
    CHECK(defined > 200);
}

TEST_CASE("rank correlations are bounded and symmetric", "[stats]") {
    std::mt19937 rng(55);
    std::uniform_int_distribution<int> len(2, 40);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = len(rng);
        const auto xs = random_integer_vector(rng, n, -5, 5);
        const auto ys = random_integer_vector(rng, n, -5, 5);
        const auto t1 = kendall_tau(xs, ys);
        const auto t2 = kendall_tau(ys, xs);
        REQUIRE(t1.has_value() == t2.has_value());
        if (t1) {
            CHECK(*t1 == *t2);
            CHECK(std::abs(*t1) <= 1.0 + 1e-12);
        }
        const auto r1 = spearman_rho(xs, ys);
        const auto r2 = spearman_rho(ys, xs);
        REQUIRE(r1.has_value() == r2.has_value());
        if (r1) {
            CHECK(*r1 == *r2);
            CHECK(std::abs(*r1) <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("strictly increasing transforms leave rank correlations alone", "[stats]") {
    const std::vector<std::function<double(double)>> transforms = {
        [](double v) { return 3.0 * v + 7.0; },
        [](double v) { return v * v * v + v; },
        [](double v) { return std::ldexp(1.0, static_cast<int>(v)); },
    };
    std::mt19937 rng(77);
    std::uniform_int_distribution<int> len(2, 30);
    std::uniform_int_distribution<std::size_t> pick(0, transforms.size() - 1);
    for (int trial = 0; trial < 120; ++trial) {
        const int n = len(rng);
        const auto xs = random_integer_vector(rng, n, -10, 10);
        const auto ys = random_integer_vector(rng, n, -10, 10);
        const auto& f = transforms[pick(rng)];
        std::vector<double> fx(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) fx[i] = f(xs[i]);

        const auto before_t = kendall_tau(xs, ys);
        const auto after_t = kendall_tau(fx, ys);
        REQUIRE(before_t.has_value() == after_t.has_value());
        if (before_t) CHECK(*before_t == *after_t);

        const auto before_r = spearman_rho(xs, ys);
        const auto after_r = spearman_rho(fx, ys);
        REQUIRE(before_r.has_value() == after_r.has_value());
        if (before_r) CHECK(*before_r == *after_r);
    }
}

TEST_CASE("spearman ignores monotone rescaling of either input", "[stats]") {
    const std::vector<double> xs = {0.1, 0.7, 0.3, 0.9, 0.5};
    const std::vector<double> ys = {0.2, 0.8, 0.1, 0.9, 0.4};
    const auto plain = spearman_rho(xs, ys);
    const auto scaled = spearman_rho(min_max_normalize(xs), min_max_normalize(ys));
    CHECK(*plain == *scaled);
}

TEST_CASE("correlation report groups, means and warnings", "[stats]") {
    auto sample = [](double m, double h, const std::string& model, const std::string& cat) {
        CorrelationSample s;
        s.metric_score = m;
        s.human_score = h;
        s.model = model;
        s.category = cat;
        return s;
    };

    SECTION("a perfectly agreeing group reports 1.0 everywhere") {
        std::vector<CorrelationSample> samples;
        for (int i = 0; i < 5; ++i)
            samples.push_back(sample(0.1 * i, 0.2 * i, "m", "color"));
        const auto reports = correlation_report(samples);
        REQUIRE(reports.size() == 3);   // group, model mean, grand mean
        CHECK(*reports[0].tau == 1.0);
        CHECK(*reports[0].rho == 1.0);
        CHECK(reports[1].mean_row);
        CHECK(*reports[1].tau == 1.0);
        CHECK(reports[2].model == "Mean");
        CHECK(*reports[2].rho == 1.0);
    }

    SECTION("a perfectly disagreeing group reports -1.0") {
        std::vector<CorrelationSample> samples;
        for (int i = 0; i < 4; ++i)
            samples.push_back(sample(0.1 * i, 1.0 - 0.1 * i, "m", "shape"));
        const auto reports = correlation_report(samples);
        CHECK(*reports[0].tau == -1.0);
        CHECK(*reports[0].rho == -1.0);
    }

    SECTION("model mean averages its category rows") {
        std::vector<CorrelationSample> samples;
        const std::vector<double> metric = {1, 2, 3, 4};
        const std::vector<double> human = {1, 3, 2, 4};
        for (std::size_t i = 0; i < metric.size(); ++i)
            samples.push_back(sample(metric[i], human[i], "m", "color"));
        for (int i = 0; i < 4; ++i)
            samples.push_back(sample(0.2 * i, 0.1 * i, "m", "shape"));

        const auto reports = correlation_report(samples);
        REQUIRE(reports.size() == 4);
        CHECK_THAT(*reports[0].tau, Catch::Matchers::WithinAbs(4.0 / 6.0, 1e-12));
        CHECK_THAT(*reports[0].rho, Catch::Matchers::WithinAbs(0.8, 1e-12));
        CHECK(*reports[1].tau == 1.0);
        const auto& mean = reports[2];
        REQUIRE(mean.mean_row);
        CHECK(mean.category == "Mean");
        CHECK_THAT(*mean.tau, Catch::Matchers::WithinAbs((4.0 / 6.0 + 1.0) / 2.0, 1e-12));
        CHECK_THAT(*mean.rho, Catch::Matchers::WithinAbs(0.9, 1e-12));
        CHECK(mean.n == 8);
    }

    SECTION("undersized groups are skipped with a warning") {
        std::vector<CorrelationSample> samples = {sample(0.5, 0.5, "m", "lonely")};
        for (int i = 0; i < 3; ++i)
            samples.push_back(sample(0.1 * i, 0.3 * i, "m", "color"));
        std::vector<std::string> warnings;
        const auto reports = correlation_report(samples, &warnings);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("lonely") != std::string::npos);
        for (const auto& r : reports) CHECK(r.category != "lonely");
    }

    SECTION("constant scores mark the group degenerate") {
        std::vector<CorrelationSample> samples;
        for (int i = 0; i < 3; ++i)
            samples.push_back(sample(0.1 * i, 0.4, "m", "flat"));
        const auto reports = correlation_report(samples);
        REQUIRE_FALSE(reports.empty());
        CHECK(reports[0].degenerate);
        CHECK_FALSE(reports[0].tau.has_value());
        CHECK_FALSE(reports[0].rho.has_value());
        CHECK(render_correlation_table(reports).find("n/a") != std::string::npos);
    }

    SECTION("reports round-trip through JSON") {
        std::vector<CorrelationSample> samples;
        for (int i = 0; i < 4; ++i)
            samples.push_back(sample(0.1 * i, 0.2 * i, "m", "color"));
        const auto reports = correlation_report(samples);
        const json j = reports;
        CHECK(j.get<std::vector<CorrelationReport>>() == reports);
    }
}

TEST_CASE("the rendered table lays out models by categories", "[stats]") {
    std::vector<CorrelationSample> samples;
    const std::vector<double> metric = {1, 2, 3, 4};
    const std::vector<double> human = {1, 3, 2, 4};
    for (std::size_t i = 0; i < metric.size(); ++i) {
        CorrelationSample s;
        s.metric_score = metric[i];
        s.human_score = human[i];
        s.model = "model-a";
        s.category = "color";
        samples.push_back(s);
    }
    const auto text = render_correlation_table(correlation_report(samples));
    CHECK(text.find("Model") != std::string::npos);
    CHECK(text.find("model-a") != std::string::npos);
    CHECK(text.find("color") != std::string::npos);
    CHECK(text.find("Mean") != std::string::npos);
    CHECK(text.find("0.6667") != std::string::npos);
    CHECK(text.find("tau") != std::string::npos);
    CHECK(text.find("rho") != std::string::npos);
}
