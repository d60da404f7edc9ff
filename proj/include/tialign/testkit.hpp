#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tialign/core.hpp"
#include "tialign/errors.hpp"
#include "tialign/image.hpp"
#include "tialign/image_decomp.hpp"
#include "tialign/question_gen.hpp"
#include "tialign/scoring.hpp"

// Deterministic synthetic scenes plus rule-based oracle backends. Everything
// here answers from ground truth sidecars, so full pipelines can be exercised
// and property-tested without any model weights or network.
namespace tialign::testkit {

// ---------------------------------------------------------------------------
// Scene vocabulary
// ---------------------------------------------------------------------------

enum class Shape { Square, Circle, Triangle };
enum class Color { Red, Blue, Green, Yellow };
enum class Texture { Solid, Striped };
enum class Predicate { LeftOf, RightOf, Above, Below, NextTo };

inline std::string to_string(Shape s) {
    switch (s) {
        case Shape::Square: return "square";
        case Shape::Circle: return "circle";
        case Shape::Triangle: return "triangle";
    }
    return {};
}

inline std::string to_string(Color c) {
    switch (c) {
        case Color::Red: return "red";
        case Color::Blue: return "blue";
        case Color::Green: return "green";
        case Color::Yellow: return "yellow";
    }
    return {};
}

inline std::string to_string(Texture t) {
    return t == Texture::Striped ? "striped" : "solid";
}

/// Snake-case token used in JSON.
inline std::string to_string(Predicate p) {
    switch (p) {
        case Predicate::LeftOf: return "left_of";
        case Predicate::RightOf: return "right_of";
        case Predicate::Above: return "above";
        case Predicate::Below: return "below";
        case Predicate::NextTo: return "next_to";
    }
    return {};
}

/// Phrase used in prompts and questions ("left of", "next to", ...).
inline std::string predicate_phrase(Predicate p) {
    switch (p) {
        case Predicate::LeftOf: return "left of";
        case Predicate::RightOf: return "right of";
        case Predicate::Above: return "above";
        case Predicate::Below: return "below";
        case Predicate::NextTo: return "next to";
    }
    return {};
}

inline std::optional<Shape> shape_from_string(const std::string& s) {
    if (s == "square") return Shape::Square;
    if (s == "circle") return Shape::Circle;
    if (s == "triangle") return Shape::Triangle;
    return std::nullopt;
}

inline std::optional<Color> color_from_string(const std::string& s) {
    if (s == "red") return Color::Red;
    if (s == "blue") return Color::Blue;
    if (s == "green") return Color::Green;
    if (s == "yellow") return Color::Yellow;
    return std::nullopt;
}

inline std::optional<Texture> texture_from_string(const std::string& s) {
    if (s == "solid") return Texture::Solid;
    if (s == "striped") return Texture::Striped;
    return std::nullopt;
}

inline std::optional<Predicate> predicate_from_string(const std::string& s) {
    if (s == "left_of") return Predicate::LeftOf;
    if (s == "right_of") return Predicate::RightOf;
    if (s == "above") return Predicate::Above;
    if (s == "below") return Predicate::Below;
    if (s == "next_to") return Predicate::NextTo;
    return std::nullopt;
}

/// Predicate truth on box centers (origin top-left). next_to uses a distance
/// threshold scaled by the boxes' larger sides.
inline bool predicate_holds(const Box& subject, const Box& object, Predicate p) {
    switch (p) {
        case Predicate::LeftOf: return subject.center_x() < object.center_x();
        case Predicate::RightOf: return subject.center_x() > object.center_x();
        case Predicate::Above: return subject.center_y() < object.center_y();
        case Predicate::Below: return subject.center_y() > object.center_y();
        case Predicate::NextTo: {
            const double dx = subject.center_x() - object.center_x();
            const double dy = subject.center_y() - object.center_y();
            const double reach = std::max(subject.width(), subject.height()) +
                                 std::max(object.width(), object.height());
            return std::sqrt(dx * dx + dy * dy) <= 0.75 * reach;
        }
    }
    return false;
}

inline double box_intersection_area(const Box& a, const Box& b) {
    const double dx = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double dy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    return (dx > 0.0 && dy > 0.0) ? dx * dy : 0.0;
}

// ---------------------------------------------------------------------------
// Scene model
// ---------------------------------------------------------------------------

struct SceneObject {
    Shape shape = Shape::Square;
    Color color = Color::Red;
    Texture texture = Texture::Solid;
    Box box;

    bool operator==(const SceneObject&) const = default;

    std::string noun() const { return testkit::to_string(shape); }

    /// "a red square", "a green striped circle"
    std::string phrase() const {
        std::string s = "a " + testkit::to_string(color);
        if (texture == Texture::Striped) s += " striped";
        return s + " " + noun();
    }
};

struct Relation {
    int subject = 0;
    Predicate predicate = Predicate::LeftOf;
    int object = 1;

    bool operator==(const Relation&) const = default;
};

struct SceneSpec {
    int width = 256;
    int height = 256;
    std::vector<SceneObject> objects;
    std::vector<Relation> relations;
    std::string prompt_text;

    bool operator==(const SceneSpec&) const = default;

    std::string render_prompt() const;
    void validate() const;
};

/// Relation clauses first, then objects no relation mentions, joined by " and ".
inline std::string SceneSpec::render_prompt() const {
    std::vector<std::string> clauses;
    std::vector<bool> mentioned(objects.size(), false);
    for (const auto& r : relations) {
        clauses.push_back(objects[r.subject].phrase() + " " + predicate_phrase(r.predicate) +
                          " " + objects[r.object].phrase());
        mentioned[r.subject] = true;
        mentioned[r.object] = true;
    }
    for (std::size_t i = 0; i < objects.size(); ++i)
        if (!mentioned[i]) clauses.push_back(objects[i].phrase());
    std::string out;
    for (std::size_t i = 0; i < clauses.size(); ++i) {
        if (i) out += " and ";
        out += clauses[i];
    }
    return out;
}

inline void SceneSpec::validate() const {
    if (width < 1 || height < 1) throw InputError("scene canvas must be positive");
    if (objects.empty()) throw InputError("scene has no objects");
    for (const auto& o : objects) {
        if (!(o.box.x0 < o.box.x1 && o.box.y0 < o.box.y1))
            throw InputError("object box is degenerate");
        if (o.box.x0 < 0 || o.box.y0 < 0 || o.box.x1 > width || o.box.y1 > height)
            throw InputError("object box exceeds the canvas");
    }
    for (std::size_t i = 0; i < objects.size(); ++i)
        for (std::size_t j = i + 1; j < objects.size(); ++j) {
            if (box_intersection_area(objects[i].box, objects[j].box) > 0.0)
                throw InputError("object boxes overlap");
            if (objects[i].phrase() == objects[j].phrase())
                throw InputError("two objects share the phrase \"" + objects[i].phrase() + "\"");
        }
    for (const auto& r : relations) {
        if (r.subject < 0 || r.object < 0 ||
            static_cast<std::size_t>(r.subject) >= objects.size() ||
            static_cast<std::size_t>(r.object) >= objects.size() || r.subject == r.object)
            throw InputError("relation references an invalid object index");
        if (!predicate_holds(objects[r.subject].box, objects[r.object].box, r.predicate))
            throw InputError("relation \"" + predicate_phrase(r.predicate) +
                             "\" does not hold for the stated boxes");
    }
    if (prompt_text != render_prompt())
        throw InputError("prompt_text does not match the rendered prompt");
}

inline void to_json(json& j, const SceneObject& o) {
    Box b = o.box;
    b.label = o.noun();
    b.kind = BoxKind::Entity;
    j = json{{"shape", to_string(o.shape)},
             {"color", to_string(o.color)},
             {"texture", to_string(o.texture)},
             {"box", b}};
}

inline void from_json(const json& j, SceneObject& o) {
    auto s = shape_from_string(j.at("shape").get<std::string>());
    auto c = color_from_string(j.at("color").get<std::string>());
    auto t = texture_from_string(j.at("texture").get<std::string>());
    if (!s || !c || !t) throw InputError("unknown shape/color/texture token");
    o.shape = *s;
    o.color = *c;
    o.texture = *t;
    j.at("box").get_to(o.box);
}

inline void to_json(json& j, const Relation& r) {
    j = json{{"subject", r.subject}, {"predicate", to_string(r.predicate)}, {"object", r.object}};
}

inline void from_json(const json& j, Relation& r) {
    j.at("subject").get_to(r.subject);
    j.at("object").get_to(r.object);
    auto p = predicate_from_string(j.at("predicate").get<std::string>());
    if (!p) throw InputError("unknown predicate token");
    r.predicate = *p;
}

inline void to_json(json& j, const SceneSpec& s) {
    j = json{{"width", s.width},
             {"height", s.height},
             {"objects", s.objects},
             {"relations", s.relations},
             {"prompt_text", s.prompt_text}};
}

inline void from_json(const json& j, SceneSpec& s) {
    j.at("width").get_to(s.width);
    j.at("height").get_to(s.height);
    j.at("objects").get_to(s.objects);
    j.at("relations").get_to(s.relations);
    j.at("prompt_text").get_to(s.prompt_text);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline cv::Scalar bgr(Color c) {
    switch (c) {
        case Color::Red: return {0, 0, 255};
        case Color::Blue: return {255, 0, 0};
        case Color::Green: return {0, 255, 0};
        case Color::Yellow: return {0, 255, 255};
    }
    return {0, 0, 0};
}

inline void draw_shape_mask(cv::Mat& mask, const SceneObject& o) {
    const int x0 = static_cast<int>(std::lround(o.box.x0));
    const int y0 = static_cast<int>(std::lround(o.box.y0));
    const int x1 = static_cast<int>(std::lround(o.box.x1));
    const int y1 = static_cast<int>(std::lround(o.box.y1));
    switch (o.shape) {
        case Shape::Square:
            cv::rectangle(mask, cv::Point(x0, y0), cv::Point(x1 - 1, y1 - 1), 255, cv::FILLED);
            break;
        case Shape::Circle:
            cv::ellipse(mask, cv::Point((x0 + x1) / 2, (y0 + y1) / 2),
                        cv::Size((x1 - x0) / 2, (y1 - y0) / 2), 0.0, 0.0, 360.0, 255, cv::FILLED);
            break;
        case Shape::Triangle: {
            const std::vector<cv::Point> pts = {
                {(x0 + x1) / 2, y0}, {x0, y1 - 1}, {x1 - 1, y1 - 1}};
            cv::fillConvexPoly(mask, pts, 255);
            break;
        }
    }
    if (o.texture == Texture::Striped) {
        for (int y = y0 + 4; y < y1; y += 8)
            cv::rectangle(mask, cv::Point(x0, y), cv::Point(x1 - 1, std::min(y + 2, y1 - 1)), 0,
                          cv::FILLED);
    }
}

} // namespace detail

/// Ground-truth sidecar path for an image.
inline std::filesystem::path sidecar_path(const std::filesystem::path& image_path) {
    std::filesystem::path p = image_path;
    p += ".boxes.json";
    return p;
}

/// Rasterizes the scene to `image_path` (PNG, pinned compression level, so
/// identical specs produce identical bytes) and writes the ground-truth
/// sidecar next to it: a JSON array of {x0,y0,x1,y1,label,confidence} plus
/// color/texture extras the oracle VQA reads. Only geometric validity is
/// enforced here; corrupted scenes render fine.
inline void render_scene(const SceneSpec& spec, const std::filesystem::path& image_path) {
    if (spec.width < 1 || spec.height < 1) throw InputError("scene canvas must be positive");
    for (const auto& o : spec.objects) {
        if (!(o.box.x0 < o.box.x1 && o.box.y0 < o.box.y1))
            throw InputError("object box is degenerate");
        if (o.box.x0 < 0 || o.box.y0 < 0 || o.box.x1 > spec.width || o.box.y1 > spec.height)
            throw InputError("object box exceeds the canvas");
    }
    for (std::size_t i = 0; i < spec.objects.size(); ++i)
        for (std::size_t j = i + 1; j < spec.objects.size(); ++j)
            if (box_intersection_area(spec.objects[i].box, spec.objects[j].box) > 0.0)
                throw InputError("object boxes overlap");

    cv::Mat img(spec.height, spec.width, CV_8UC3, cv::Scalar(255, 255, 255));
    for (const auto& o : spec.objects) {
        cv::Mat mask = cv::Mat::zeros(spec.height, spec.width, CV_8UC1);
        detail::draw_shape_mask(mask, o);
        img.setTo(detail::bgr(o.color), mask);
    }

    std::filesystem::create_directories(image_path.parent_path());
    if (!cv::imwrite(image_path.string(), img, {cv::IMWRITE_PNG_COMPRESSION, 3}))
        throw InputError("failed to write image " + image_path.string());

    json truth = json::array();
    for (const auto& o : spec.objects) {
        truth.push_back(json{{"x0", o.box.x0},
                             {"y0", o.box.y0},
                             {"x1", o.box.x1},
                             {"y1", o.box.y1},
                             {"label", o.noun()},
                             {"confidence", 1.0},
                             {"color", to_string(o.color)},
                             {"texture", to_string(o.texture)}});
    }
    std::ofstream out(sidecar_path(image_path));
    if (!out) throw InputError("failed to write sidecar for " + image_path.string());
    out << truth.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Prompt grammar
// ---------------------------------------------------------------------------

struct ParsedObject {
    std::string color;
    bool striped = false;
    std::string noun;

    bool operator==(const ParsedObject&) const = default;

    std::string phrase() const {
        return "a " + color + (striped ? " striped " : " ") + noun;
    }
};

struct ParsedRelation {
    int subject = 0;
    Predicate predicate = Predicate::LeftOf;
    int object = 1;
};

struct ParsedPrompt {
    std::vector<ParsedObject> objects;
    std::vector<ParsedRelation> relations;
};

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < s.size()) {
        const std::size_t j = s.find(' ', i);
        if (j == std::string::npos) {
            words.push_back(s.substr(i));
            break;
        }
        words.push_back(s.substr(i, j - i));
        i = j + 1;
    }
    return words;
}

inline bool is_noun_word(const std::string& w) {
    static const std::vector<std::string> reserved = {
        "a",    "and",  "of",   "to",     "left",   "right", "above",
        "below", "next", "striped", "red", "blue", "green", "yellow"};
    if (w.empty()) return false;
    for (char c : w)
        if (c < 'a' || c > 'z') return false;
    return std::find(reserved.begin(), reserved.end(), w) == reserved.end();
}

/// "a <color> [striped] <noun>"
inline std::optional<ParsedObject> parse_object_phrase(const std::string& phrase) {
    const std::vector<std::string> w = split_words(phrase);
    if (w.size() != 3 && w.size() != 4) return std::nullopt;
    if (w[0] != "a") return std::nullopt;
    if (!color_from_string(w[1])) return std::nullopt;
    ParsedObject o;
    o.color = w[1];
    if (w.size() == 4) {
        if (w[2] != "striped") return std::nullopt;
        o.striped = true;
        o.noun = w[3];
    } else {
        o.noun = w[2];
    }
    if (!is_noun_word(o.noun)) return std::nullopt;
    return o;
}

} // namespace detail

/// Parses prompts of the fixed grammar: clauses joined by " and ", each clause
/// either an object phrase "a <color> [striped] <noun>" or a relation
/// "<object phrase> <predicate> <object phrase>". Identical object phrases
/// across clauses refer to one object. Anything else is an unsupported prompt.
inline ParsedPrompt parse_prompt(const std::string& text) {
    if (text.empty()) throw UnsupportedPromptError("empty prompt");
    ParsedPrompt out;
    auto intern = [&](const ParsedObject& o) -> int {
        for (std::size_t i = 0; i < out.objects.size(); ++i)
            if (out.objects[i] == o) return static_cast<int>(i);
        out.objects.push_back(o);
        return static_cast<int>(out.objects.size() - 1);
    };

    std::vector<std::string> clauses;
    std::size_t i = 0;
    while (true) {
        const std::size_t j = text.find(" and ", i);
        if (j == std::string::npos) {
            clauses.push_back(text.substr(i));
            break;
        }
        clauses.push_back(text.substr(i, j - i));
        i = j + 5;
    }

    static const Predicate kPredicates[] = {Predicate::LeftOf, Predicate::RightOf,
                                            Predicate::Above, Predicate::Below,
                                            Predicate::NextTo};
    for (const auto& clause : clauses) {
        bool matched = false;
        for (Predicate p : kPredicates) {
            const std::string needle = " " + predicate_phrase(p) + " ";
            for (std::size_t pos = clause.find(needle); pos != std::string::npos;
                 pos = clause.find(needle, pos + 1)) {
                auto lhs = detail::parse_object_phrase(clause.substr(0, pos));
                auto rhs = detail::parse_object_phrase(clause.substr(pos + needle.size()));
                if (lhs && rhs) {
                    if (*lhs == *rhs)
                        throw UnsupportedPromptError("relation relates an object to itself: \"" +
                                                     clause + "\"");
                    ParsedRelation r;
                    r.subject = intern(*lhs);
                    r.predicate = p;
                    r.object = intern(*rhs);
                    out.relations.push_back(r);
                    matched = true;
                    break;
                }
            }
            if (matched) break;
        }
        if (matched) continue;
        if (auto obj = detail::parse_object_phrase(clause)) {
            intern(*obj);
            continue;
        }
        throw UnsupportedPromptError("clause not in the scene grammar: \"" + clause + "\"");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Oracle question generation
// ---------------------------------------------------------------------------

/// Rule-based decomposition of a grammar prompt: one color question per object
/// (plus a striped question for striped objects), one relational question per
/// relation -- or co-presence questions per object pair when the prompt states
/// no relations -- and a single global question quoting the whole prompt.
inline QuestionSet oracle_question_gen(const std::string& prompt_text) {
    const ParsedPrompt p = parse_prompt(prompt_text);
    QuestionSet qs;

    for (const auto& o : p.objects) qs.assertions.push_back("there is " + o.phrase());
    const int relation_assertion_base = static_cast<int>(qs.assertions.size());
    for (const auto& r : p.relations)
        qs.assertions.push_back("the " + p.objects[r.subject].noun + " is " +
                                predicate_phrase(r.predicate) + " the " +
                                p.objects[r.object].noun);

    for (std::size_t i = 0; i < p.objects.size(); ++i) {
        const auto& o = p.objects[i];
        Question qc;
        qc.kind = QuestionKind::Entity;
        qc.text = "Is this " + o.noun + " " + o.color + "?";
        qc.assertion_index = static_cast<int>(i);
        qc.subject_entities = {o.noun};
        qs.entity.push_back(std::move(qc));
        if (o.striped) {
            Question qt;
            qt.kind = QuestionKind::Entity;
            qt.text = "Is this " + o.noun + " striped?";
            qt.assertion_index = static_cast<int>(i);
            qt.subject_entities = {o.noun};
            qs.entity.push_back(std::move(qt));
        }
    }

    if (!p.relations.empty()) {
        for (std::size_t k = 0; k < p.relations.size(); ++k) {
            const auto& r = p.relations[k];
            Question q;
            q.kind = QuestionKind::Relational;
            q.text = "Is the " + p.objects[r.subject].noun + " " +
                     predicate_phrase(r.predicate) + " the " + p.objects[r.object].noun + "?";
            q.assertion_index = relation_assertion_base + static_cast<int>(k);
            q.subject_entities = {p.objects[r.subject].noun, p.objects[r.object].noun};
            qs.relational.push_back(std::move(q));
        }
    } else {
        for (std::size_t i = 0; i < p.objects.size(); ++i)
            for (std::size_t j = i + 1; j < p.objects.size(); ++j) {
                Question q;
                q.kind = QuestionKind::Relational;
                q.text = "Are the " + p.objects[i].noun + " and the " + p.objects[j].noun +
                         " both in this image?";
                q.subject_entities = {p.objects[i].noun, p.objects[j].noun};
                qs.relational.push_back(std::move(q));
            }
    }

    Question g;
    g.kind = QuestionKind::Global;
    g.text = "Does this image show " + prompt_text + "?";
    qs.global_.push_back(std::move(g));
    return qs;
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

struct GroundTruthObject {
    Box box;
    std::string noun;
    std::string color;
    bool striped = false;
};

inline std::vector<GroundTruthObject> load_ground_truth(const std::filesystem::path& sidecar) {
    std::ifstream in(sidecar);
    if (!in) throw InputError("cannot open ground truth sidecar " + sidecar.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("malformed sidecar " + sidecar.string() + ": " + e.what());
    }
    if (!j.is_array()) throw ParseError("sidecar " + sidecar.string() + " is not a JSON array");
    std::vector<GroundTruthObject> out;
    for (const auto& e : j) {
        GroundTruthObject g;
        g.box.x0 = e.at("x0").get<double>();
        g.box.y0 = e.at("y0").get<double>();
        g.box.x1 = e.at("x1").get<double>();
        g.box.y1 = e.at("y1").get<double>();
        g.box.label = e.at("label").get<std::string>();
        g.box.confidence = e.at("confidence").get<double>();
        g.box.kind = BoxKind::Entity;
        g.noun = g.box.label;
        if (e.contains("color")) g.color = e.at("color").get<std::string>();
        g.striped = e.contains("texture") && e.at("texture").get<std::string>() == "striped";
        out.push_back(std::move(g));
    }
    return out;
}

namespace detail {

inline bool strip_affix(const std::string& s, const std::string& prefix,
                        const std::string& suffix, std::string& inner) {
    if (s.size() < prefix.size() + suffix.size()) return false;
    if (s.compare(0, prefix.size(), prefix) != 0) return false;
    if (s.compare(s.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
    inner = s.substr(prefix.size(), s.size() - prefix.size() - suffix.size());
    return true;
}

/// spec striped=false means "texture unstated", which any object satisfies.
inline bool object_matches(const GroundTruthObject& g, const ParsedObject& spec) {
    if (g.noun != spec.noun) return false;
    if (g.color != spec.color) return false;
    if (spec.striped && !g.striped) return false;
    return true;
}

/// Decides an oracle question by existence over a set of ground-truth objects.
/// OracleVqa passes the objects associated with a region; suite steering
/// passes everything in a candidate scene, which equals the whole-image view.
inline bool oracle_answer(const std::vector<const GroundTruthObject*>& in_region,
                          const std::string& question) {
    std::string inner;
    if (strip_affix(question, "Is this ", "?", inner)) {
        const auto words = split_words(inner);
        if (words.size() != 2)
            throw InputError("oracle VQA cannot parse question: " + question);
        const std::string& noun = words[0];
        const std::string& attr = words[1];
        if (attr == "striped") {
            for (const auto* g : in_region)
                if (g->noun == noun && g->striped) return true;
            return false;
        }
        if (!color_from_string(attr))
            throw InputError("oracle VQA cannot parse question: " + question);
        for (const auto* g : in_region)
            if (g->noun == noun && g->color == attr) return true;
        return false;
    }

    if (strip_affix(question, "Are the ", " both in this image?", inner)) {
        const std::size_t sep = inner.find(" and the ");
        if (sep == std::string::npos)
            throw InputError("oracle VQA cannot parse question: " + question);
        const std::string noun_a = inner.substr(0, sep);
        const std::string noun_b = inner.substr(sep + 9);
        for (const auto* a : in_region)
            for (const auto* b : in_region)
                if (a != b && a->noun == noun_a && b->noun == noun_b) return true;
        return false;
    }

    if (strip_affix(question, "Is the ", "?", inner)) {
        static const Predicate kPredicates[] = {Predicate::LeftOf, Predicate::RightOf,
                                                Predicate::Above, Predicate::Below,
                                                Predicate::NextTo};
        for (Predicate p : kPredicates) {
            const std::string needle = " " + predicate_phrase(p) + " the ";
            const std::size_t pos = inner.find(needle);
            if (pos == std::string::npos) continue;
            const std::string noun_a = inner.substr(0, pos);
            const std::string noun_b = inner.substr(pos + needle.size());
            for (const auto* a : in_region)
                for (const auto* b : in_region)
                    if (a != b && a->noun == noun_a && b->noun == noun_b &&
                        predicate_holds(a->box, b->box, p))
                        return true;
            return false;
        }
        throw InputError("oracle VQA cannot parse question: " + question);
    }

    if (strip_affix(question, "Does this image show ", "?", inner)) {
        ParsedPrompt p;
        try {
            p = parse_prompt(inner);
        } catch (const UnsupportedPromptError&) {
            throw InputError("oracle VQA cannot parse question: " + question);
        }
        for (std::size_t i = 0; i < p.objects.size(); ++i) {
            // multiplicity-aware: k identical phrases need k distinct objects
            std::size_t needed = 0, have = 0;
            for (std::size_t k = 0; k <= i; ++k)
                if (p.objects[k] == p.objects[i]) ++needed;
            for (std::size_t k = i + 1; k < p.objects.size(); ++k)
                if (p.objects[k] == p.objects[i]) ++needed;
            for (const auto* g : in_region)
                if (object_matches(*g, p.objects[i])) ++have;
            if (have < needed) return false;
        }
        for (const auto& r : p.relations) {
            bool ok = false;
            for (const auto* a : in_region) {
                for (const auto* b : in_region) {
                    if (a != b && object_matches(*a, p.objects[r.subject]) &&
                        object_matches(*b, p.objects[r.object]) &&
                        predicate_holds(a->box, b->box, r.predicate)) {
                        ok = true;
                        break;
                    }
                }
                if (ok) break;
            }
            if (!ok) return false;
        }
        return true;
    }

    throw InputError("oracle VQA cannot parse question: " + question);
}

/// The ground truth render_scene would write for this spec, without rendering.
inline std::vector<GroundTruthObject> truth_from_spec(const SceneSpec& spec) {
    std::vector<GroundTruthObject> out;
    out.reserve(spec.objects.size());
    for (const auto& o : spec.objects) {
        GroundTruthObject g;
        g.box = o.box;
        g.box.label = o.noun();
        g.box.confidence = 1.0;
        g.box.kind = BoxKind::Entity;
        g.noun = o.noun();
        g.color = testkit::to_string(o.color);
        g.striped = o.texture == Texture::Striped;
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Oracle backends
// ---------------------------------------------------------------------------

/// Detector that reads the image's ground-truth sidecar.
class OracleDetector : public DetectorBackend {
public:
    std::string backend_id() const override { return "oracle-detector"; }
    std::string model_version() const override { return "1"; }

    std::vector<Box> detect(const ImageBuffer& image) override {
        const auto sidecar = sidecar_path(image.path);
        if (!std::filesystem::exists(sidecar))
            throw BackendError("no ground truth sidecar for " + image.path,
                               /*retryable=*/false);
        std::vector<Box> out;
        for (auto& g : load_ground_truth(sidecar)) out.push_back(std::move(g.box));
        return out;
    }
};

/// Generator that answers requests by running oracle_question_gen on the
/// target prompt (the text after the last "Prompt:" marker). Chatty style
/// wraps the JSON in prose and a code fence to exercise output parsing.
class OracleGenerator : public GeneratorBackend {
public:
    enum class Style { Plain, Chatty };

    explicit OracleGenerator(Style style = Style::Plain) : style_(style) {}

    std::string backend_id() const override { return "oracle-generator"; }
    std::string model_version() const override { return "1"; }

    std::string complete(const std::string& request) override {
        const std::size_t marker = request.rfind("\nPrompt: ");
        if (marker == std::string::npos)
            throw BackendError("request carries no prompt marker", /*retryable=*/false);
        const std::size_t start = marker + 9;
        const std::size_t end = request.find("\nOutput:", start);
        if (end == std::string::npos)
            throw BackendError("request carries no output marker", /*retryable=*/false);
        const QuestionSet qs = oracle_question_gen(request.substr(start, end - start));
        const std::string payload = tialign::detail::schema_payload(qs);
        if (style_ == Style::Plain) return payload;
        return "Here are the questions:\n```json\n" + payload + "\n```\nHope this helps.";
    }

private:
    Style style_;
};

/// VQA that answers oracle-generated questions from ground truth. An object
/// counts as inside the region when at least half its area is; questions are
/// decided by existence over the associated objects. Hard mode answers
/// {0.0, 1.0}; soft mode {0.05, 0.95} to keep aggregation away from the
/// saturated boundary.
class OracleVqa : public VqaBackend {
public:
    explicit OracleVqa(bool soft = false) : soft_(soft) {}

    std::string backend_id() const override { return soft_ ? "oracle-vqa-soft" : "oracle-vqa"; }
    std::string model_version() const override { return "1"; }

    double yes_probability(const ImageRegion& region, const std::string& question) override {
        const bool yes = answer(region, question);
        if (soft_) return yes ? 0.95 : 0.05;
        return yes ? 1.0 : 0.0;
    }

private:
    bool soft_;
    std::mutex mutex_;
    std::map<std::string, std::vector<GroundTruthObject>> truth_by_image_;

    const std::vector<GroundTruthObject>& truth_for(const std::filesystem::path& image_path) {
        const std::string key = image_path.string();
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = truth_by_image_.find(key);
        if (it == truth_by_image_.end())
            it = truth_by_image_.emplace(key, load_ground_truth(sidecar_path(image_path))).first;
        return it->second;
    }

    static bool associated(const GroundTruthObject& g, const Box& region) {
        const double area = g.box.width() * g.box.height();
        return area > 0.0 && box_intersection_area(g.box, region) >= 0.5 * area;
    }

    bool answer(const ImageRegion& region, const std::string& question) {
        const auto& truth = truth_for(region.image_path);
        std::vector<const GroundTruthObject*> in_region;
        for (const auto& g : truth)
            if (associated(g, region.box)) in_region.push_back(&g);
        return detail::oracle_answer(in_region, question);
    }
};

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

enum class CorruptionKind { SwapColors, SwapPositions, DropObject, ChangeShape, ChangeTexture };

inline std::string to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::SwapColors: return "swap_colors";
        case CorruptionKind::SwapPositions: return "swap_positions";
        case CorruptionKind::DropObject: return "drop_object";
        case CorruptionKind::ChangeShape: return "change_shape";
        case CorruptionKind::ChangeTexture: return "change_texture";
    }
    return {};
}

inline std::optional<CorruptionKind> corruption_kind_from_string(const std::string& s) {
    if (s == "swap_colors") return CorruptionKind::SwapColors;
    if (s == "swap_positions") return CorruptionKind::SwapPositions;
    if (s == "drop_object") return CorruptionKind::DropObject;
    if (s == "change_shape") return CorruptionKind::ChangeShape;
    if (s == "change_texture") return CorruptionKind::ChangeTexture;
    return std::nullopt;
}

struct Corruption {
    CorruptionKind kind = CorruptionKind::DropObject;
    int target_a = -1;
    int target_b = -1;   // second object of the swap kinds

    bool operator==(const Corruption&) const = default;
};

inline void to_json(json& j, const Corruption& c) {
    j = json{{"kind", to_string(c.kind)}, {"target_a", c.target_a}, {"target_b", c.target_b}};
}

inline void from_json(const json& j, Corruption& c) {
    auto k = corruption_kind_from_string(j.at("kind").get<std::string>());
    if (!k) throw InputError("unknown corruption kind");
    c.kind = *k;
    j.at("target_a").get_to(c.target_a);
    j.at("target_b").get_to(c.target_b);
}

/// Mutates a copy of the scene so the rendered image no longer satisfies at
/// least one assertion of the original prompt. prompt_text stays as it was:
/// the point is an image that diverges from it. Preconditions per kind keep
/// every corruption an actual break:
///   swap_colors      needs two objects of different colors
///   swap_positions   needs a directional relation between the pair
///   change_shape     needs a shape unused in the scene
///   change_texture   needs a striped target
inline SceneSpec corrupt(const SceneSpec& spec, const Corruption& c) {
    const int n = static_cast<int>(spec.objects.size());
    auto check_index = [&](int idx) {
        if (idx < 0 || idx >= n)
            throw InputError("corruption target " + std::to_string(idx) + " out of range");
    };
    SceneSpec out = spec;
    switch (c.kind) {
        case CorruptionKind::SwapColors: {
            check_index(c.target_a);
            check_index(c.target_b);
            if (c.target_a == c.target_b) throw InputError("swap_colors needs two objects");
            if (spec.objects[c.target_a].color == spec.objects[c.target_b].color)
                throw InputError("swap_colors targets share a color");
            std::swap(out.objects[c.target_a].color, out.objects[c.target_b].color);
            break;
        }
        case CorruptionKind::SwapPositions: {
            check_index(c.target_a);
            check_index(c.target_b);
            if (c.target_a == c.target_b) throw InputError("swap_positions needs two objects");
            const bool directional = std::any_of(
                spec.relations.begin(), spec.relations.end(), [&](const Relation& r) {
                    const bool pair = (r.subject == c.target_a && r.object == c.target_b) ||
                                      (r.subject == c.target_b && r.object == c.target_a);
                    return pair && r.predicate != Predicate::NextTo;
                });
            if (!directional)
                throw InputError("swap_positions targets have no directional relation");
            std::swap(out.objects[c.target_a].box, out.objects[c.target_b].box);
            break;
        }
        case CorruptionKind::DropObject: {
            check_index(c.target_a);
            out.objects.erase(out.objects.begin() + c.target_a);
            std::vector<Relation> kept;
            for (Relation r : out.relations) {
                if (r.subject == c.target_a || r.object == c.target_a) continue;
                if (r.subject > c.target_a) --r.subject;
                if (r.object > c.target_a) --r.object;
                kept.push_back(r);
            }
            out.relations = std::move(kept);
            break;
        }
        case CorruptionKind::ChangeShape: {
            check_index(c.target_a);
            static const Shape kShapes[] = {Shape::Square, Shape::Circle, Shape::Triangle};
            std::optional<Shape> unused;
            for (Shape s : kShapes) {
                const bool taken = std::any_of(spec.objects.begin(), spec.objects.end(),
                                               [&](const SceneObject& o) { return o.shape == s; });
                if (!taken) {
                    unused = s;
                    break;
                }
            }
            if (!unused) throw InputError("change_shape has no unused shape available");
            out.objects[c.target_a].shape = *unused;
            break;
        }
        case CorruptionKind::ChangeTexture: {
            check_index(c.target_a);
            if (spec.objects[c.target_a].texture != Texture::Striped)
                throw InputError("change_texture target is not striped");
            out.objects[c.target_a].texture = Texture::Solid;
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Suite generation
// ---------------------------------------------------------------------------

struct SuiteConfig {
    int scene_count = 60;
    int canvas_size = 256;
    std::uint64_t seed = 1;
    int max_corruptions = 2;   // variants per scene = clean + 1..max cumulative corruptions
};

struct SuiteVariant {
    std::string variant;   // "clean", "corrupt1", "corrupt2"; doubles as image id
    SceneSpec spec;
    int corruption_count = 0;
    std::vector<Corruption> applied;
};

struct SuiteScene {
    PromptRecord prompt;
    std::vector<SuiteVariant> variants;
};

namespace detail {

template <typename T>
inline void shuffle_in_place(std::vector<T>& v, std::mt19937& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng() % i]);
}

inline std::vector<Corruption> corruption_candidates(const SceneSpec& spec) {
    std::vector<Corruption> out;
    const int n = static_cast<int>(spec.objects.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (spec.objects[i].color != spec.objects[j].color)
                out.push_back({CorruptionKind::SwapColors, i, j});
    for (const auto& r : spec.relations)
        if (r.predicate != Predicate::NextTo)
            out.push_back({CorruptionKind::SwapPositions, std::min(r.subject, r.object),
                           std::max(r.subject, r.object)});
    for (int i = 0; i < n; ++i) out.push_back({CorruptionKind::DropObject, i, -1});
    const bool shape_free =
        spec.objects.size() < 3 ||
        std::any_of(spec.objects.begin(), spec.objects.end(), [&](const SceneObject& a) {
            return std::count_if(spec.objects.begin(), spec.objects.end(),
                                 [&](const SceneObject& b) { return b.shape == a.shape; }) > 1;
        });
    if (shape_free)
        for (int i = 0; i < n; ++i) out.push_back({CorruptionKind::ChangeShape, i, -1});
    for (int i = 0; i < n; ++i)
        if (spec.objects[i].texture == Texture::Striped)
            out.push_back({CorruptionKind::ChangeTexture, i, -1});
    return out;
}

} // namespace detail

/// One deterministic random scene: 2-3 objects with distinct shapes and
/// colors, placed on disjoint grid cells, with zero to two true relations.
inline SceneSpec generate_scene(std::mt19937& rng, int canvas_size = 256) {
    if (canvas_size < 64) throw InputError("canvas too small for scene generation");
    SceneSpec spec;
    spec.width = canvas_size;
    spec.height = canvas_size;

    const int n = 2 + static_cast<int>(rng() % 2);
    std::vector<Shape> shapes = {Shape::Square, Shape::Circle, Shape::Triangle};
    std::vector<Color> colors = {Color::Red, Color::Blue, Color::Green, Color::Yellow};
    detail::shuffle_in_place(shapes, rng);
    detail::shuffle_in_place(colors, rng);

    const int half = canvas_size / 2;
    const int margin = std::max(4, canvas_size / 32);
    const int cell = half - 2 * margin;
    std::vector<std::pair<int, int>> cells = {{margin, margin},
                                              {half + margin, margin},
                                              {margin, half + margin},
                                              {half + margin, half + margin}};
    detail::shuffle_in_place(cells, rng);

    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.shape = shapes[static_cast<std::size_t>(i)];
        o.color = colors[static_cast<std::size_t>(i)];
        o.texture = (rng() % 4 == 0) ? Texture::Striped : Texture::Solid;
        const int max_side = cell;
        const int min_side = cell / 2;
        const int side = min_side + static_cast<int>(rng() % (max_side - min_side));
        const int off_x = static_cast<int>(rng() % (cell - side + 1));
        const int off_y = static_cast<int>(rng() % (cell - side + 1));
        o.box.x0 = cells[static_cast<std::size_t>(i)].first + off_x;
        o.box.y0 = cells[static_cast<std::size_t>(i)].second + off_y;
        o.box.x1 = o.box.x0 + side;
        o.box.y1 = o.box.y0 + side;
        o.box.label = o.noun();
        o.box.confidence = 1.0;
        o.box.kind = BoxKind::Entity;
        spec.objects.push_back(std::move(o));
    }

    auto add_relation = [&](int i, int j) {
        std::vector<Predicate> holds;
        for (Predicate p : {Predicate::LeftOf, Predicate::RightOf, Predicate::Above,
                            Predicate::Below, Predicate::NextTo})
            if (predicate_holds(spec.objects[i].box, spec.objects[j].box, p)) holds.push_back(p);
        Relation r;
        r.subject = i;
        r.object = j;
        r.predicate = holds[rng() % holds.size()];
        spec.relations.push_back(r);
    };
    if (rng() % 4 != 0) {
        add_relation(0, 1);
        if (n == 3 && rng() % 2 == 0) add_relation(rng() % 2 == 0 ? 0 : 1, 2);
    }

    spec.prompt_text = spec.render_prompt();
    spec.validate();
    return spec;
}

/// Scene suite for end-to-end runs: each scene carries a clean variant plus
/// cumulative corruptions. Each corruption step is steered so it keeps
/// breaking new questions: a candidate is only eligible when it falsifies at
/// least one question about the scene's prompt that still held and restores
/// none, so every emitted variant scores strictly below the previous one.
/// When no candidate qualifies the chain stops early. Fully deterministic for
/// a fixed config.
inline std::vector<SuiteScene> generate_suite(const SuiteConfig& config) {
    if (config.scene_count < 1) throw InputError("scene_count must be >= 1");
    if (config.max_corruptions < 0) throw InputError("max_corruptions must be >= 0");
    std::mt19937 rng(static_cast<std::mt19937::result_type>(config.seed));
    std::vector<SuiteScene> out;
    out.reserve(static_cast<std::size_t>(config.scene_count));

    for (int s = 0; s < config.scene_count; ++s) {
        SuiteScene scene;
        SceneSpec clean = generate_scene(rng, config.canvas_size);

        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "scene-%03d", s);
        scene.prompt.id = idbuf;
        scene.prompt.text = clean.prompt_text;
        if (!clean.relations.empty())
            scene.prompt.category = Category::Spatial;
        else if (std::any_of(clean.objects.begin(), clean.objects.end(),
                             [](const SceneObject& o) { return o.texture == Texture::Striped; }))
            scene.prompt.category = Category::Texture;
        else
            scene.prompt.category = (rng() % 2 == 0) ? Category::Color : Category::Shape;

        scene.variants.push_back({"clean", clean, 0, {}});

        std::vector<std::string> questions;
        {
            const QuestionSet qs = oracle_question_gen(clean.prompt_text);
            for (const auto& q : qs.entity) questions.push_back(q.text);
            for (const auto& q : qs.relational) questions.push_back(q.text);
            for (const auto& q : qs.global_) questions.push_back(q.text);
        }
        const auto truths = [&questions](const SceneSpec& spec) {
            const std::vector<GroundTruthObject> objects = detail::truth_from_spec(spec);
            std::vector<const GroundTruthObject*> all;
            all.reserve(objects.size());
            for (const auto& g : objects) all.push_back(&g);
            std::vector<bool> t;
            t.reserve(questions.size());
            for (const auto& q : questions) t.push_back(detail::oracle_answer(all, q));
            return t;
        };

        SceneSpec current = clean;
        std::vector<bool> current_truth = truths(clean);
        std::vector<Corruption> applied;
        for (int k = 1; k <= config.max_corruptions; ++k) {
            struct Option {
                Corruption corruption;
                SceneSpec spec;
                std::vector<bool> truth;
            };
            std::vector<Option> lowering;
            for (const auto& c : detail::corruption_candidates(current)) {
                SceneSpec candidate = corrupt(current, c);
                std::vector<bool> truth = truths(candidate);
                bool breaks_one = false, restores_none = true;
                for (std::size_t q = 0; q < truth.size(); ++q) {
                    if (truth[q] && !current_truth[q]) {
                        restores_none = false;
                        break;
                    }
                    if (!truth[q] && current_truth[q]) breaks_one = true;
                }
                if (breaks_one && restores_none)
                    lowering.push_back({c, std::move(candidate), std::move(truth)});
            }
            if (lowering.empty()) break;
            if (!applied.empty()) {
                const Corruption& prev = applied.back();
                std::vector<Option> fresh;
                for (auto& o : lowering)
                    if (o.corruption.kind != prev.kind && o.corruption.target_a != prev.target_a)
                        fresh.push_back(std::move(o));
                if (!fresh.empty()) lowering = std::move(fresh);
            }
            Option& chosen = lowering[rng() % lowering.size()];
            current = std::move(chosen.spec);
            current_truth = std::move(chosen.truth);
            applied.push_back(chosen.corruption);
            scene.variants.push_back({"corrupt" + std::to_string(k), current, k, applied});
        }
        out.push_back(std::move(scene));
    }
    return out;
}

/// Materializes a suite for the harness: images/<prompt_id>/<variant>.png with
/// sidecars, prompts.jsonl, human.jsonl ({prompt_id, image_id, human_score}
/// with score descending in corruption count), and scenes.jsonl describing
/// every variant.
inline void write_suite(const std::vector<SuiteScene>& suite, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream prompts(dir / "prompts.jsonl");
    std::ofstream human(dir / "human.jsonl");
    std::ofstream scenes(dir / "scenes.jsonl");
    if (!prompts || !human || !scenes)
        throw InputError("cannot create suite files under " + dir.string());

    for (const auto& scene : suite) {
        prompts << json(scene.prompt).dump() << "\n";
        for (const auto& v : scene.variants) {
            const auto image_path = dir / "images" / scene.prompt.id / (v.variant + ".png");
            render_scene(v.spec, image_path);
            human << json{{"prompt_id", scene.prompt.id},
                          {"image_id", v.variant},
                          {"human_score", 1.0 - 0.35 * v.corruption_count}}
                         .dump()
                  << "\n";
            scenes << json{{"prompt_id", scene.prompt.id},
                           {"variant", v.variant},
                           {"corruption_count", v.corruption_count},
                           {"applied", v.applied},
                           {"spec", v.spec}}
                          .dump()
                   << "\n";
        }
    }
}

} // namespace tialign::testkit
