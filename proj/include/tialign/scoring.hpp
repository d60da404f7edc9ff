#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tialign/cache.hpp"
#include "tialign/core.hpp"
#include "tialign/errors.hpp"
#include "tialign/hash.hpp"
#include "tialign/image.hpp"
#include "tialign/image_decomp.hpp"

namespace tialign {

/// Visual question answering backend: probability of answering "yes" to a
/// question about an image region. Must be deterministic for a fixed
/// (model_version, region bytes, question) triple, and safe to call from
/// multiple threads when used with cell concurrency > 1.
class VqaBackend {
public:
    virtual ~VqaBackend() = default;
    virtual std::string backend_id() const = 0;
    virtual std::string model_version() const = 0;
    virtual double yes_probability(const ImageRegion& region, const std::string& question) = 0;
};

/// Renormalizes raw yes/no likelihoods from a generative backend. Mass on
/// unrelated tokens drops out of the ratio.
inline double normalize_yes_probability(double p_yes, double p_no) {
    if (p_yes < 0.0 || p_no < 0.0) throw InputError("token likelihoods must be >= 0");
    if (p_yes + p_no <= 0.0) throw InputError("p_yes + p_no must be positive");
    return p_yes / (p_yes + p_no);
}

inline std::string vqa_cell_cache_key(const VqaBackend& backend, const ImageRegion& region,
                                      const std::string& question) {
    return hash_key({"vqa", backend.backend_id(), backend.model_version(),
                     region.canonical_bytes(), question});
}

namespace detail {

inline double vqa_cell(VqaBackend& backend, const ImageRegion& region,
                       const std::string& question, std::size_t region_index, FileCache* cache) {
    const std::string key = vqa_cell_cache_key(backend, region, question);
    if (cache) {
        if (auto payload = cache->get("vqa", key)) return json::parse(*payload).get<double>();
    }
    const std::string where = "question \"" + question + "\" on region " +
                              std::to_string(region_index) + " (" + region.box.label + ")";
    double value = 0.0;
    try {
        value = backend.yes_probability(region, question);
    } catch (const BackendError& e) {
        throw BackendError("VQA failed for " + where + ": " + e.what(), e.retryable());
    }
    if (!(value >= 0.0 && value <= 1.0))
        throw BackendError("VQA returned " + std::to_string(value) + " outside [0,1] for " + where,
                           /*retryable=*/false);
    if (cache) cache->put("vqa", key, json(value).dump());
    return value;
}

} // namespace detail

/// Fills the full question x region grid (no early exit; complete matrices are
/// what the audit dump and the cache reuse). Every cell is cached on
/// (backend, model, region bytes, question text). With concurrency > 1, cells
/// are computed by a small worker pool; values land by index, so the assembled
/// matrix does not depend on completion order. On concurrent failures the
/// error for the lowest cell index wins.
inline ScoreMatrix build_score_matrix(const std::vector<Question>& questions,
                                      const std::vector<ImageRegion>& regions,
                                      VqaBackend& backend, FileCache* cache = nullptr,
                                      int concurrency = 1) {
    if (questions.empty()) throw InputError("no questions to score");
    if (regions.empty()) throw InputError("no regions to score against");
    if (concurrency < 1) throw InputError("concurrency must be >= 1");

    ScoreMatrix m;
    m.kind = questions.front().kind;
    m.questions.reserve(questions.size());
    for (const auto& q : questions) m.questions.push_back(q.text);
    m.regions.reserve(regions.size());
    for (const auto& r : regions) m.regions.push_back(r.box);
    m.values.assign(questions.size(), std::vector<double>(regions.size(), 0.0));

    const std::size_t n_cells = questions.size() * regions.size();
    const std::size_t n_cols = regions.size();

    if (concurrency == 1 || n_cells == 1) {
        for (std::size_t cell = 0; cell < n_cells; ++cell) {
            const std::size_t r = cell / n_cols;
            const std::size_t c = cell % n_cols;
            m.values[r][c] = detail::vqa_cell(backend, regions[c], questions[r].text, c, cache);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex err_mutex;
        std::size_t err_cell = n_cells;
        std::exception_ptr err;
        auto worker = [&] {
            for (;;) {
                const std::size_t cell = next.fetch_add(1);
                if (cell >= n_cells) return;
                const std::size_t r = cell / n_cols;
                const std::size_t c = cell % n_cols;
                try {
                    m.values[r][c] =
                        detail::vqa_cell(backend, regions[c], questions[r].text, c, cache);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (cell < err_cell) {
                        err_cell = cell;
                        err = std::current_exception();
                    }
                }
            }
        };
        std::vector<std::thread> pool;
        const std::size_t n_threads =
            std::min<std::size_t>(static_cast<std::size_t>(concurrency), n_cells);
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        if (err) std::rethrow_exception(err);
    }

    m.compute_best();
    return m;
}

/// One scored group: per-question (score, argmax region) plus the full matrix
/// kept for audit.
struct GroupScores {
    std::vector<PerQuestionScore> scores;
    ScoreMatrix matrix;
};

namespace detail {

inline GroupScores score_group(const std::vector<Question>& questions,
                               const std::vector<ImageRegion>& regions, VqaBackend& backend,
                               FileCache* cache, int concurrency) {
    GroupScores out;
    if (questions.empty()) return out;
    out.matrix = build_score_matrix(questions, regions, backend, cache, concurrency);
    out.scores.reserve(questions.size());
    for (std::size_t i = 0; i < questions.size(); ++i) {
        PerQuestionScore s;
        s.kind = questions[i].kind;
        s.text = questions[i].text;
        s.score = out.matrix.best[i].value;
        s.region_index = out.matrix.best[i].index;
        out.scores.push_back(std::move(s));
    }
    return out;
}

} // namespace detail

/// score(Q_i) = max over the group's own regions; entity questions never see
/// relational regions and vice versa.
inline GroupScores score_entity_questions(const QuestionSet& qs,
                                          const std::vector<ImageRegion>& entity_regions,
                                          VqaBackend& backend, FileCache* cache = nullptr,
                                          int concurrency = 1) {
    return detail::score_group(qs.entity, entity_regions, backend, cache, concurrency);
}

inline GroupScores score_relational_questions(const QuestionSet& qs,
                                              const std::vector<ImageRegion>& relational_regions,
                                              VqaBackend& backend, FileCache* cache = nullptr,
                                              int concurrency = 1) {
    return detail::score_group(qs.relational, relational_regions, backend, cache, concurrency);
}

/// Global questions are scored against the whole image; a single column, so no
/// max is involved.
inline GroupScores score_global_questions(const QuestionSet& qs, const ImageRegion& whole_image,
                                          VqaBackend& backend, FileCache* cache = nullptr,
                                          int concurrency = 1) {
    return detail::score_group(qs.global_, {whole_image}, backend, cache, concurrency);
}

/// All three groups with their audit matrices.
struct QuestionScores {
    std::vector<PerQuestionScore> entity;
    std::vector<PerQuestionScore> relational;
    std::vector<PerQuestionScore> global_;
    ScoreMatrix entity_matrix;
    ScoreMatrix relational_matrix;
    ScoreMatrix global_matrix;
};

/// Crops every region in the box set and scores all three question groups.
inline QuestionScores score_question_set(const QuestionSet& qs, const ImageBuffer& image,
                                         const BoxSet& boxes, VqaBackend& backend,
                                         const DecompositionConfig& config,
                                         FileCache* cache = nullptr, int concurrency = 1) {
    std::vector<ImageRegion> entity_regions;
    entity_regions.reserve(boxes.entity_boxes.size());
    for (const auto& b : boxes.entity_boxes)
        entity_regions.push_back(crop_region(image, b, config.min_region_side));

    std::vector<ImageRegion> relational_regions;
    relational_regions.reserve(boxes.relational_boxes.size());
    for (const auto& b : boxes.relational_boxes)
        relational_regions.push_back(crop_region(image, b, config.min_region_side));

    const ImageRegion whole = crop_region(image, image.whole_image_box(), config.min_region_side);

    QuestionScores out;
    auto e = score_entity_questions(qs, entity_regions, backend, cache, concurrency);
    out.entity = std::move(e.scores);
    out.entity_matrix = std::move(e.matrix);
    auto r = score_relational_questions(qs, relational_regions, backend, cache, concurrency);
    out.relational = std::move(r.scores);
    out.relational_matrix = std::move(r.matrix);
    auto g = score_global_questions(qs, whole, backend, cache, concurrency);
    out.global_ = std::move(g.scores);
    out.global_matrix = std::move(g.matrix);
    return out;
}

} // namespace tialign
