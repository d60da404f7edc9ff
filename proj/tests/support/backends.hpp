#pragma once

// Instrumented backends: call counters around the oracles (cache-key
// compatible with them) and fully scripted stand-ins.

#include <atomic>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tialign/harness.hpp"

namespace testsupport {

class CountingGenerator : public tialign::GeneratorBackend {
public:
    explicit CountingGenerator(std::atomic<long long>* counter) : counter_(counter) {}
    std::string backend_id() const override { return inner_.backend_id(); }
    std::string model_version() const override { return inner_.model_version(); }
    std::string complete(const std::string& request) override {
        ++*counter_;
        return inner_.complete(request);
    }

private:
    tialign::testkit::OracleGenerator inner_;
    std::atomic<long long>* counter_;
};

class CountingDetector : public tialign::DetectorBackend {
public:
    explicit CountingDetector(std::atomic<long long>* counter) : counter_(counter) {}
    std::string backend_id() const override { return inner_.backend_id(); }
    std::string model_version() const override { return inner_.model_version(); }
    std::vector<tialign::Box> detect(const tialign::ImageBuffer& image) override {
        ++*counter_;
        return inner_.detect(image);
    }

private:
    tialign::testkit::OracleDetector inner_;
    std::atomic<long long>* counter_;
};

class CountingVqa : public tialign::VqaBackend {
public:
    explicit CountingVqa(std::atomic<long long>* counter, bool soft = false)
        : inner_(soft), counter_(counter) {}
    std::string backend_id() const override { return inner_.backend_id(); }
    std::string model_version() const override { return inner_.model_version(); }
    double yes_probability(const tialign::ImageRegion& region,
                           const std::string& question) override {
        ++*counter_;
        return inner_.yes_probability(region, question);
    }

private:
    tialign::testkit::OracleVqa inner_;
    std::atomic<long long>* counter_;
};

/// Shared counters plus a harness backend_factory handing out counting
/// wrappers over the oracles.
struct BackendCounters {
    std::atomic<long long> generator{0};
    std::atomic<long long> detector{0};
    std::atomic<long long> vqa{0};

    long long total() const { return generator + detector + vqa; }

    std::function<tialign::BackendBundle(const tialign::RunConfig&)> factory() {
        return [this](const tialign::RunConfig&) {
            tialign::BackendBundle b;
            b.generator = std::make_unique<CountingGenerator>(&generator);
            b.detector = std::make_unique<CountingDetector>(&detector);
            b.vqa = std::make_unique<CountingVqa>(&vqa);
            return b;
        };
    }
};

/// Replays a fixed sequence of raw outputs (sticks on the last one) and
/// records every request it saw.
class ScriptedGenerator : public tialign::GeneratorBackend {
public:
    explicit ScriptedGenerator(std::vector<std::string> outputs)
        : outputs_(std::move(outputs)) {}
    std::string backend_id() const override { return "scripted-generator"; }
    std::string model_version() const override { return "1"; }
    std::string complete(const std::string& request) override {
        requests.push_back(request);
        const std::size_t i = std::min(requests.size() - 1, outputs_.size() - 1);
        return outputs_[i];
    }

    std::vector<std::string> requests;

private:
    std::vector<std::string> outputs_;
};

/// Returns a fixed detection list for any image.
class ScriptedDetector : public tialign::DetectorBackend {
public:
    explicit ScriptedDetector(std::vector<tialign::Box> boxes, std::string id = "scripted-detector")
        : boxes_(std::move(boxes)), id_(std::move(id)) {}
    std::string backend_id() const override { return id_; }
    std::string model_version() const override { return "1"; }
    std::vector<tialign::Box> detect(const tialign::ImageBuffer&) override {
        ++calls;
        return boxes_;
    }

    int calls = 0;

private:
    std::vector<tialign::Box> boxes_;
    std::string id_;
};

/// Computes each cell from a user function of (question, region).
class ScriptedVqa : public tialign::VqaBackend {
public:
    using Fn = std::function<double(const std::string& question, const tialign::ImageRegion&)>;
    explicit ScriptedVqa(Fn fn, std::string id = "scripted-vqa") : fn_(std::move(fn)), id_(std::move(id)) {}
    std::string backend_id() const override { return id_; }
    std::string model_version() const override { return "1"; }
    double yes_probability(const tialign::ImageRegion& region,
                           const std::string& question) override {
        ++calls;
        return fn_(question, region);
    }

    std::atomic<int> calls{0};

private:
    Fn fn_;
    std::string id_;
};

} // namespace testsupport
