#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tialign/cache.hpp"
#include "tialign/core.hpp"
#include "tialign/errors.hpp"
#include "tialign/hash.hpp"

namespace tialign {

// ---------------------------------------------------------------------------
// Template
// ---------------------------------------------------------------------------

/// One in-context exemplar: a prompt and the exact JSON the model should emit.
struct Exemplar {
    std::string prompt;
    json expected;

    bool operator==(const Exemplar&) const = default;
};

inline void to_json(json& j, const Exemplar& e) {
    j = json{{"prompt", e.prompt}, {"expected", e.expected}};
}

inline void from_json(const json& j, Exemplar& e) {
    j.at("prompt").get_to(e.prompt);
    e.expected = j.at("expected");
}

/// Versioned generation template. template_id/version participate in cache keys,
/// so editing a template under the same version silently reuses stale entries --
/// bump the version instead.
struct GenerationTemplate {
    std::string template_id;
    std::string version;
    std::string instruction_text;
    std::vector<Exemplar> exemplars;

    bool operator==(const GenerationTemplate&) const = default;

    static GenerationTemplate default_template();
    static GenerationTemplate load(const std::filesystem::path& file);
};

inline void to_json(json& j, const GenerationTemplate& t) {
    j = json{{"template_id", t.template_id},
             {"version", t.version},
             {"instruction_text", t.instruction_text},
             {"exemplars", t.exemplars}};
}

inline void from_json(const json& j, GenerationTemplate& t) {
    j.at("template_id").get_to(t.template_id);
    j.at("version").get_to(t.version);
    j.at("instruction_text").get_to(t.instruction_text);
    j.at("exemplars").get_to(t.exemplars);
}

inline GenerationTemplate GenerationTemplate::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InputError("cannot open template file: " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("malformed template file " + file.string() + ": " + e.what());
    }
    return j.get<GenerationTemplate>();
}

inline GenerationTemplate GenerationTemplate::default_template() {
    GenerationTemplate t;
    t.template_id = "default-two-shot";
    t.version = "1";
    t.instruction_text =
        "Decompose the prompt below into assertions and yes/no questions for checking "
        "whether an image matches the prompt. Produce entity questions (one object and its "
        "attributes each), relational questions (interactions or spatial relations between "
        "two objects; when the prompt states no relation, ask about co-presence of object "
        "pairs), and 1-3 global questions about the prompt as a whole. Phrase every question "
        "so it can be answered with yes or no (start with Is/Are/Does). Respond with only a "
        "JSON object with keys \"assertions\", \"entity_questions\", \"relational_questions\" "
        "and \"global_questions\". Each question is an object with \"text\", optional "
        "\"assertion_index\" (index into assertions) and \"subject_entities\" (nouns of the "
        "objects the question is about). No prose, no code fences.";

    Exemplar a;
    a.prompt = "a red square and a blue circle";
    a.expected = json{
        {"assertions", {"there is a red square", "there is a blue circle"}},
        {"entity_questions",
         {json{{"text", "Is this square red?"}, {"assertion_index", 0}, {"subject_entities", {"square"}}},
          json{{"text", "Is this circle blue?"}, {"assertion_index", 1}, {"subject_entities", {"circle"}}}}},
        {"relational_questions",
         {json{{"text", "Are the square and the circle both in this image?"},
               {"subject_entities", {"square", "circle"}}}}},
        {"global_questions",
         {json{{"text", "Does this image show a red square and a blue circle?"},
               {"subject_entities", json::array()}}}},
    };

    Exemplar b;
    b.prompt = "a green triangle above a yellow square";
    b.expected = json{
        {"assertions",
         {"there is a green triangle", "there is a yellow square", "the triangle is above the square"}},
        {"entity_questions",
         {json{{"text", "Is this triangle green?"}, {"assertion_index", 0}, {"subject_entities", {"triangle"}}},
          json{{"text", "Is this square yellow?"}, {"assertion_index", 1}, {"subject_entities", {"square"}}}}},
        {"relational_questions",
         {json{{"text", "Is the triangle above the square?"}, {"assertion_index", 2},
               {"subject_entities", {"triangle", "square"}}}}},
        {"global_questions",
         {json{{"text", "Does this image show a green triangle above a yellow square?"},
               {"subject_entities", json::array()}}}},
    };

    t.exemplars = {a, b};
    return t;
}

// ---------------------------------------------------------------------------
// Backend contract
// ---------------------------------------------------------------------------

/// Text-generation backend. complete() takes the full request text and returns
/// the raw model response. Implementations should be deterministic where the
/// underlying model allows it (temperature 0, fixed seed).
class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;
    virtual std::string backend_id() const = 0;
    virtual std::string model_version() const = 0;
    virtual std::string complete(const std::string& request) = 0;
};

// ---------------------------------------------------------------------------
// Request building
// ---------------------------------------------------------------------------

/// Instruction, the exemplars in order, then the target prompt. Byte-stable for
/// fixed inputs; the prompt is embedded verbatim (escaping is the transport's job).
inline std::string build_generation_request(const std::string& prompt_text,
                                            const GenerationTemplate& tmpl) {
    if (prompt_text.empty()) throw InputError("prompt text is empty");
    std::string req = tmpl.instruction_text;
    for (const auto& ex : tmpl.exemplars) {
        req += "\n\nPrompt: " + ex.prompt + "\nOutput: " + ex.expected.dump();
    }
    req += "\n\nPrompt: " + prompt_text + "\nOutput:";
    return req;
}

// ---------------------------------------------------------------------------
// Output parsing
// ---------------------------------------------------------------------------

namespace detail {

/// Extracts the first balanced JSON object from raw text, tolerating leading
/// and trailing prose and code fences.
inline std::optional<json> extract_first_json_object(const std::string& raw) {
    for (std::size_t start = raw.find('{'); start != std::string::npos;
         start = raw.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < raw.size(); ++i) {
            const char c = raw[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{') ++depth;
            else if (c == '}') {
                if (--depth == 0) {
                    json parsed = json::parse(raw.substr(start, i - start + 1), nullptr, false);
                    if (!parsed.is_discarded()) return parsed;
                    break;   // balanced but unparseable; try the next '{'
                }
            }
        }
    }
    return std::nullopt;
}

/// Normalizes one question entry (bare string or object form) and records
/// violations against `where`.
inline std::optional<Question> normalize_question(const json& entry, QuestionKind kind,
                                                  std::size_t n_assertions,
                                                  const std::string& where,
                                                  std::vector<std::string>& violations) {
    Question q;
    q.kind = kind;
    if (entry.is_string()) {
        q.text = entry.get<std::string>();
    } else if (entry.is_object()) {
        if (!entry.contains("text") || !entry.at("text").is_string()) {
            violations.push_back(where + ": missing string key \"text\"");
            return std::nullopt;
        }
        q.text = entry.at("text").get<std::string>();
        if (entry.contains("assertion_index") && !entry.at("assertion_index").is_null()) {
            if (!entry.at("assertion_index").is_number_integer()) {
                violations.push_back(where + ": assertion_index is not an integer");
            } else {
                const int idx = entry.at("assertion_index").get<int>();
                if (idx < 0 || static_cast<std::size_t>(idx) >= n_assertions)
                    violations.push_back(where + ": assertion_index " + std::to_string(idx) +
                                         " out of range");
                else
                    q.assertion_index = idx;
            }
        }
        if (entry.contains("subject_entities")) {
            const auto& se = entry.at("subject_entities");
            if (!se.is_array()) {
                violations.push_back(where + ": subject_entities is not an array");
            } else {
                for (const auto& s : se) {
                    if (!s.is_string()) {
                        violations.push_back(where + ": subject_entities contains a non-string");
                        break;
                    }
                    q.subject_entities.push_back(s.get<std::string>());
                }
            }
        }
    } else {
        violations.push_back(where + ": question is neither a string nor an object");
        return std::nullopt;
    }
    if (q.text.empty()) {
        violations.push_back(where + ": question text is empty");
        return std::nullopt;
    }
    if (kind == QuestionKind::Entity && q.subject_entities.size() > 1)
        violations.push_back(where + ": entity question references more than one subject entity");
    if (kind == QuestionKind::Relational && q.subject_entities.size() == 1)
        violations.push_back(where + ": relational question references exactly one subject entity "
                                     "(need >=2 or none)");
    return q;
}

/// Builds a QuestionSet (prompt_id left empty) from the generator output schema
/// {assertions, entity_questions, relational_questions, global_questions},
/// collecting all violations before failing.
inline QuestionSet questionset_from_schema(const json& obj) {
    std::vector<std::string> violations;
    if (!obj.is_object()) throw SchemaError("generator output is not a JSON object", {});

    QuestionSet qs;
    if (!obj.contains("assertions") || !obj.at("assertions").is_array()) {
        violations.push_back("missing array key \"assertions\"");
    } else {
        for (const auto& a : obj.at("assertions")) {
            if (!a.is_string()) {
                violations.push_back("assertions contains a non-string");
                break;
            }
            qs.assertions.push_back(a.get<std::string>());
        }
    }

    struct GroupSpec {
        const char* key;
        QuestionKind kind;
        std::vector<Question>* out;
    };
    const GroupSpec groups[] = {
        {"entity_questions", QuestionKind::Entity, &qs.entity},
        {"relational_questions", QuestionKind::Relational, &qs.relational},
        {"global_questions", QuestionKind::Global, &qs.global_},
    };
    for (const auto& g : groups) {
        if (!obj.contains(g.key) || !obj.at(g.key).is_array()) {
            violations.push_back(std::string("missing array key \"") + g.key + "\"");
            continue;
        }
        std::size_t i = 0;
        for (const auto& entry : obj.at(g.key)) {
            const std::string where = std::string(g.key) + "[" + std::to_string(i++) + "]";
            if (auto q = normalize_question(entry, g.kind, qs.assertions.size(), where, violations))
                g.out->push_back(std::move(*q));
        }
    }
    if (qs.global_.empty() &&
        obj.contains("global_questions") && obj.at("global_questions").is_array())
        violations.push_back("global_questions is empty (need at least one)");

    if (!violations.empty()) {
        std::string msg = "generator output violates the question schema: ";
        for (std::size_t i = 0; i < violations.size(); ++i) {
            if (i) msg += "; ";
            msg += violations[i];
        }
        throw SchemaError(msg, violations);
    }
    return qs;
}

/// Canonical cache payload for a validated QuestionSet: the normalized schema form.
inline std::string schema_payload(const QuestionSet& qs) {
    auto question_obj = [](const Question& q) {
        json o{{"text", q.text}, {"subject_entities", q.subject_entities}};
        if (q.assertion_index) o["assertion_index"] = *q.assertion_index;
        return o;
    };
    json out{{"assertions", qs.assertions},
             {"entity_questions", json::array()},
             {"relational_questions", json::array()},
             {"global_questions", json::array()}};
    for (const auto& q : qs.entity) out["entity_questions"].push_back(question_obj(q));
    for (const auto& q : qs.relational) out["relational_questions"].push_back(question_obj(q));
    for (const auto& q : qs.global_) out["global_questions"].push_back(question_obj(q));
    return out.dump();
}

} // namespace detail

/// Extracts the first JSON object from a raw backend response (tolerating prose
/// and code fences), validates it against the question schema, and returns a
/// QuestionSet with kinds assigned. prompt_id is left empty for the caller.
inline QuestionSet parse_generator_output(const std::string& raw) {
    auto obj = detail::extract_first_json_object(raw);
    if (!obj) throw ParseError("no JSON object found in generator output");
    return detail::questionset_from_schema(*obj);
}

// ---------------------------------------------------------------------------
// Decomposition driver
// ---------------------------------------------------------------------------

inline std::string question_gen_cache_key(const GeneratorBackend& backend,
                                          const GenerationTemplate& tmpl,
                                          const std::string& prompt_text) {
    return hash_key({"qgen", backend.backend_id(), backend.model_version(),
                     tmpl.template_id, tmpl.version, prompt_text});
}

/// Decomposes a prompt into questions through `backend`, retrying with an
/// appended repair instruction on parse/schema failures (at most max_retries
/// re-asks; attempt count <= max_retries + 1). Successful results are cached
/// under hash(backend, model, template id+version, prompt text); a cache hit
/// never touches the backend. Transport failures (BackendError) propagate
/// immediately -- they are the caller's retry concern, not a repair case.
inline QuestionSet decompose_prompt(const PromptRecord& prompt, GeneratorBackend& backend,
                                    const GenerationTemplate& tmpl, int max_retries,
                                    FileCache* cache = nullptr) {
    if (max_retries < 0) throw InputError("max_retries must be >= 0");

    const std::string key = question_gen_cache_key(backend, tmpl, prompt.text);
    if (cache) {
        if (auto payload = cache->get("qgen", key)) {
            QuestionSet qs = detail::questionset_from_schema(json::parse(*payload));
            qs.prompt_id = prompt.id;
            return qs;
        }
    }

    std::string request = build_generation_request(prompt.text, tmpl);
    std::string last_raw;
    std::string last_reason;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        last_raw = backend.complete(request);
        try {
            QuestionSet qs = parse_generator_output(last_raw);
            if (cache) cache->put("qgen", key, detail::schema_payload(qs));
            qs.prompt_id = prompt.id;
            return qs;
        } catch (const SchemaError& e) {
            last_reason.clear();
            for (std::size_t i = 0; i < e.violations().size(); ++i) {
                if (i) last_reason += "; ";
                last_reason += e.violations()[i];
            }
            if (last_reason.empty()) last_reason = e.what();
        } catch (const ParseError& e) {
            last_reason = e.what();
        }
        request += "\n\nThe previous response was rejected: " + last_reason +
                   ". Respond again with only the corrected JSON object.\nOutput:";
    }
    throw DecompositionError("decomposition failed after " + std::to_string(max_retries + 1) +
                                 " attempts (" + last_reason + ")",
                             last_raw);
}

} // namespace tialign
