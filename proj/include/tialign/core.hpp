#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tialign/errors.hpp"

namespace tialign {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Enums
// ---------------------------------------------------------------------------

enum class Category { Color, Shape, Texture, Spatial, NonSpatial, Complex, Other };

inline std::string to_string(Category c) {
    switch (c) {
        case Category::Color: return "color";
        case Category::Shape: return "shape";
        case Category::Texture: return "texture";
        case Category::Spatial: return "spatial";
        case Category::NonSpatial: return "non_spatial";
        case Category::Complex: return "complex";
        case Category::Other: return "other";
    }
    return "other";
}

inline std::optional<Category> category_from_string(const std::string& s) {
    if (s == "color") return Category::Color;
    if (s == "shape") return Category::Shape;
    if (s == "texture") return Category::Texture;
    if (s == "spatial") return Category::Spatial;
    if (s == "non_spatial") return Category::NonSpatial;
    if (s == "complex") return Category::Complex;
    if (s == "other") return Category::Other;
    return std::nullopt;
}

enum class QuestionKind { Entity, Relational, Global };

inline std::string to_string(QuestionKind k) {
    switch (k) {
        case QuestionKind::Entity: return "entity";
        case QuestionKind::Relational: return "relational";
        case QuestionKind::Global: return "global";
    }
    return "global";
}

inline std::optional<QuestionKind> question_kind_from_string(const std::string& s) {
    if (s == "entity") return QuestionKind::Entity;
    if (s == "relational") return QuestionKind::Relational;
    if (s == "global") return QuestionKind::Global;
    return std::nullopt;
}

enum class BoxKind { Entity, Relational, WholeImage };

inline std::string to_string(BoxKind k) {
    switch (k) {
        case BoxKind::Entity: return "entity";
        case BoxKind::Relational: return "relational";
        case BoxKind::WholeImage: return "whole_image";
    }
    return "entity";
}

inline std::optional<BoxKind> box_kind_from_string(const std::string& s) {
    if (s == "entity") return BoxKind::Entity;
    if (s == "relational") return BoxKind::Relational;
    if (s == "whole_image") return BoxKind::WholeImage;
    return std::nullopt;
}

enum class DegeneracyFlag {
    NoEntitiesDetected,
    NoRelationalBoxes,
    NoEntityQuestions,
    NoRelationalQuestions,
};

inline std::string to_string(DegeneracyFlag f) {
    switch (f) {
        case DegeneracyFlag::NoEntitiesDetected: return "no_entities_detected";
        case DegeneracyFlag::NoRelationalBoxes: return "no_relational_boxes";
        case DegeneracyFlag::NoEntityQuestions: return "no_entity_questions";
        case DegeneracyFlag::NoRelationalQuestions: return "no_relational_questions";
    }
    return "no_entities_detected";
}

inline std::optional<DegeneracyFlag> degeneracy_flag_from_string(const std::string& s) {
    if (s == "no_entities_detected") return DegeneracyFlag::NoEntitiesDetected;
    if (s == "no_relational_boxes") return DegeneracyFlag::NoRelationalBoxes;
    if (s == "no_entity_questions") return DegeneracyFlag::NoEntityQuestions;
    if (s == "no_relational_questions") return DegeneracyFlag::NoRelationalQuestions;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One benchmark prompt. human_score, when present, is normalized to [0,1].
struct PromptRecord {
    std::string id;
    std::string text;
    Category category = Category::Other;
    std::optional<double> human_score;

    bool operator==(const PromptRecord&) const = default;
};

inline void to_json(json& j, const PromptRecord& r) {
    j = json{{"id", r.id}, {"text", r.text}, {"category", to_string(r.category)}};
    if (r.human_score) j["human_score"] = *r.human_score;
}

inline void from_json(const json& j, PromptRecord& r) {
    j.at("id").get_to(r.id);
    j.at("text").get_to(r.text);
    auto cat = category_from_string(j.at("category").get<std::string>());
    if (!cat) throw InputError("unknown category: " + j.at("category").get<std::string>());
    r.category = *cat;
    r.human_score.reset();
    if (j.contains("human_score") && !j.at("human_score").is_null())
        r.human_score = j.at("human_score").get<double>();
}

/// A yes/no question decomposed from a prompt.
struct Question {
    std::string text;
    QuestionKind kind = QuestionKind::Global;
    std::optional<int> assertion_index;
    std::vector<std::string> subject_entities;

    bool operator==(const Question&) const = default;
};

inline void to_json(json& j, const Question& q) {
    j = json{{"text", q.text},
             {"kind", to_string(q.kind)},
             {"subject_entities", q.subject_entities}};
    if (q.assertion_index) j["assertion_index"] = *q.assertion_index;
}

inline void from_json(const json& j, Question& q) {
    j.at("text").get_to(q.text);
    auto k = question_kind_from_string(j.at("kind").get<std::string>());
    if (!k) throw InputError("unknown question kind: " + j.at("kind").get<std::string>());
    q.kind = *k;
    q.subject_entities.clear();
    if (j.contains("subject_entities")) j.at("subject_entities").get_to(q.subject_entities);
    q.assertion_index.reset();
    if (j.contains("assertion_index") && !j.at("assertion_index").is_null())
        q.assertion_index = j.at("assertion_index").get<int>();
}

/// Entity/relational/global questions decomposed from one prompt.
struct QuestionSet {
    std::string prompt_id;
    std::vector<std::string> assertions;
    std::vector<Question> entity;
    std::vector<Question> relational;
    std::vector<Question> global_;

    bool operator==(const QuestionSet&) const = default;
};

inline void to_json(json& j, const QuestionSet& qs) {
    j = json{{"prompt_id", qs.prompt_id},
             {"assertions", qs.assertions},
             {"entity", qs.entity},
             {"relational", qs.relational},
             {"global_", qs.global_}};
}

inline void from_json(const json& j, QuestionSet& qs) {
    j.at("prompt_id").get_to(qs.prompt_id);
    j.at("assertions").get_to(qs.assertions);
    j.at("entity").get_to(qs.entity);
    j.at("relational").get_to(qs.relational);
    j.at("global_").get_to(qs.global_);
}

/// Pixel-space bounding box, origin top-left, half-open is NOT used: x1/y1 are
/// exclusive-right edges in the usual x0 <= x < x1 sense.
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;
    std::string label;
    double confidence = 0.0;
    BoxKind kind = BoxKind::Entity;
    /// For relational boxes: indices of the two parent entity boxes.
    std::optional<std::pair<int, int>> parents;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    double center_x() const { return 0.5 * (x0 + x1); }
    double center_y() const { return 0.5 * (y0 + y1); }

    bool contains(const Box& other) const {
        return x0 <= other.x0 && y0 <= other.y0 && x1 >= other.x1 && y1 >= other.y1;
    }

    bool operator==(const Box&) const = default;
};

inline void to_json(json& j, const Box& b) {
    j = json{{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1},
             {"label", b.label}, {"confidence", b.confidence}, {"kind", to_string(b.kind)}};
    if (b.parents) j["parents"] = json::array({b.parents->first, b.parents->second});
}

inline void from_json(const json& j, Box& b) {
    j.at("x0").get_to(b.x0);
    j.at("y0").get_to(b.y0);
    j.at("x1").get_to(b.x1);
    j.at("y1").get_to(b.y1);
    j.at("label").get_to(b.label);
    j.at("confidence").get_to(b.confidence);
    auto k = box_kind_from_string(j.at("kind").get<std::string>());
    if (!k) throw InputError("unknown box kind: " + j.at("kind").get<std::string>());
    b.kind = *k;
    b.parents.reset();
    if (j.contains("parents") && !j.at("parents").is_null())
        b.parents = std::make_pair(j.at("parents").at(0).get<int>(),
                                   j.at("parents").at(1).get<int>());
}

/// Entity boxes and derived relational boxes for one image.
struct BoxSet {
    std::string image_id;
    int image_width = 0;
    int image_height = 0;
    std::vector<Box> entity_boxes;
    std::vector<Box> relational_boxes;
    bool entity_fallback_used = false;
    bool relational_fallback_used = false;

    bool operator==(const BoxSet&) const = default;
};

inline void to_json(json& j, const BoxSet& b) {
    j = json{{"image_id", b.image_id},
             {"image_width", b.image_width},
             {"image_height", b.image_height},
             {"entity_boxes", b.entity_boxes},
             {"relational_boxes", b.relational_boxes},
             {"entity_fallback_used", b.entity_fallback_used},
             {"relational_fallback_used", b.relational_fallback_used}};
}

inline void from_json(const json& j, BoxSet& b) {
    j.at("image_id").get_to(b.image_id);
    j.at("image_width").get_to(b.image_width);
    j.at("image_height").get_to(b.image_height);
    j.at("entity_boxes").get_to(b.entity_boxes);
    j.at("relational_boxes").get_to(b.relational_boxes);
    j.at("entity_fallback_used").get_to(b.entity_fallback_used);
    j.at("relational_fallback_used").get_to(b.relational_fallback_used);
}

/// Per-row best cell of a score matrix. Ties resolve to the lowest column index.
struct RowBest {
    double value = 0.0;
    int index = -1;

    bool operator==(const RowBest&) const = default;
};

inline void to_json(json& j, const RowBest& r) {
    j = json{{"value", r.value}, {"index", r.index}};
}

inline void from_json(const json& j, RowBest& r) {
    j.at("value").get_to(r.value);
    j.at("index").get_to(r.index);
}

/// Question x region yes-probabilities for one question group.
struct ScoreMatrix {
    QuestionKind kind = QuestionKind::Entity;
    std::vector<std::string> questions;   // row labels
    std::vector<Box> regions;             // column provenance
    std::vector<std::vector<double>> values;
    std::vector<RowBest> best;

    /// Recomputes per-row best with lowest-index tie-breaking.
    void compute_best() {
        best.clear();
        best.reserve(values.size());
        for (const auto& row : values) {
            RowBest rb;
            for (std::size_t c = 0; c < row.size(); ++c) {
                if (rb.index < 0 || row[c] > rb.value) {
                    rb.value = row[c];
                    rb.index = static_cast<int>(c);
                }
            }
            best.push_back(rb);
        }
    }

    bool operator==(const ScoreMatrix&) const = default;
};

inline void to_json(json& j, const ScoreMatrix& m) {
    j = json{{"kind", to_string(m.kind)},
             {"questions", m.questions},
             {"regions", m.regions},
             {"values", m.values},
             {"best", m.best}};
}

inline void from_json(const json& j, ScoreMatrix& m) {
    auto k = question_kind_from_string(j.at("kind").get<std::string>());
    if (!k) throw InputError("unknown matrix kind");
    m.kind = *k;
    j.at("questions").get_to(m.questions);
    j.at("regions").get_to(m.regions);
    j.at("values").get_to(m.values);
    j.at("best").get_to(m.best);
}

/// One scored question with argmax provenance. region_index is -1 for global
/// questions (single whole-image region).
struct PerQuestionScore {
    QuestionKind kind = QuestionKind::Entity;
    std::string text;
    double score = 0.0;
    int region_index = -1;

    bool operator==(const PerQuestionScore&) const = default;
};

inline void to_json(json& j, const PerQuestionScore& p) {
    j = json{{"kind", to_string(p.kind)},
             {"text", p.text},
             {"score", p.score},
             {"region_index", p.region_index}};
}

inline void from_json(const json& j, PerQuestionScore& p) {
    auto k = question_kind_from_string(j.at("kind").get<std::string>());
    if (!k) throw InputError("unknown question kind");
    p.kind = *k;
    j.at("text").get_to(p.text);
    j.at("score").get_to(p.score);
    j.at("region_index").get_to(p.region_index);
}

/// Final scores for one (image, prompt) pair.
struct EvalResult {
    std::string prompt_id;
    std::string image_id;
    std::optional<double> fine_grained;   // empty when both question groups were empty
    double coarse_grained = 0.0;
    double overall = 0.0;
    std::vector<PerQuestionScore> per_question;
    std::set<DegeneracyFlag> degeneracy_flags;

    bool operator==(const EvalResult&) const = default;
};

inline void to_json(json& j, const EvalResult& e) {
    json flags = json::array();
    for (auto f : e.degeneracy_flags) flags.push_back(to_string(f));
    j = json{{"prompt_id", e.prompt_id},
             {"image_id", e.image_id},
             {"fine_grained", e.fine_grained ? json(*e.fine_grained) : json(nullptr)},
             {"coarse_grained", e.coarse_grained},
             {"overall", e.overall},
             {"per_question", e.per_question},
             {"degeneracy_flags", flags}};
}

inline void from_json(const json& j, EvalResult& e) {
    j.at("prompt_id").get_to(e.prompt_id);
    j.at("image_id").get_to(e.image_id);
    e.fine_grained.reset();
    if (!j.at("fine_grained").is_null()) e.fine_grained = j.at("fine_grained").get<double>();
    j.at("coarse_grained").get_to(e.coarse_grained);
    j.at("overall").get_to(e.overall);
    j.at("per_question").get_to(e.per_question);
    e.degeneracy_flags.clear();
    for (const auto& s : j.at("degeneracy_flags")) {
        auto f = degeneracy_flag_from_string(s.get<std::string>());
        if (!f) throw InputError("unknown degeneracy flag: " + s.get<std::string>());
        e.degeneracy_flags.insert(*f);
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One validation problem found in a prompt set.
struct ValidationIssue {
    std::string subject;   // record id, or "record[i]" when the id itself is bad
    std::string message;

    bool operator==(const ValidationIssue&) const = default;
};

/// Checks PromptRecord invariants over a whole set. Empty report iff all hold.
inline std::vector<ValidationIssue> validate_prompt_set(const std::vector<PromptRecord>& records) {
    std::vector<ValidationIssue> issues;
    std::set<std::string> seen;
    std::set<std::string> reported_dup;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const std::string subject = r.id.empty() ? "record[" + std::to_string(i) + "]" : r.id;
        if (r.id.empty()) issues.push_back({subject, "id is empty"});
        if (r.text.empty()) issues.push_back({subject, "text is empty"});
        if (r.human_score && (*r.human_score < 0.0 || *r.human_score > 1.0))
            issues.push_back({subject, "human_score out of [0,1]"});
        if (!r.id.empty()) {
            if (seen.count(r.id) && !reported_dup.count(r.id)) {
                issues.push_back({r.id, "duplicate id"});
                reported_dup.insert(r.id);
            }
            seen.insert(r.id);
        }
    }
    return issues;
}

} // namespace tialign
