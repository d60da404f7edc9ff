#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tialign/core.hpp"
#include "tialign/errors.hpp"

namespace tialign {

enum class EmptyGroupRule { DropTermRenormalize, ScoreZero };

inline std::string to_string(EmptyGroupRule r) {
    return r == EmptyGroupRule::DropTermRenormalize ? "drop_term_renormalize" : "score_zero";
}

inline std::optional<EmptyGroupRule> empty_group_rule_from_string(const std::string& s) {
    if (s == "drop_term_renormalize") return EmptyGroupRule::DropTermRenormalize;
    if (s == "score_zero") return EmptyGroupRule::ScoreZero;
    return std::nullopt;
}

struct AggregationPolicy {
    EmptyGroupRule empty_group_rule = EmptyGroupRule::DropTermRenormalize;

    bool operator==(const AggregationPolicy&) const = default;

    std::string id() const { return to_string(empty_group_rule); }

    std::string description() const {
        switch (empty_group_rule) {
            case EmptyGroupRule::DropTermRenormalize:
                return "an empty question group drops out and the other group carries full "
                       "weight; with both groups empty the fine-grained score is undefined "
                       "and the overall score falls back to coarse-grained";
            case EmptyGroupRule::ScoreZero:
                return "an empty question group contributes zero at half weight; with both "
                       "groups empty the fine-grained score is zero";
        }
        return {};
    }
};

inline void to_json(json& j, const AggregationPolicy& p) {
    j = json{{"empty_group_rule", to_string(p.empty_group_rule)}};
}

inline void from_json(const json& j, AggregationPolicy& p) {
    auto r = empty_group_rule_from_string(j.at("empty_group_rule").get<std::string>());
    if (!r) throw InputError("unknown empty_group_rule");
    p.empty_group_rule = *r;
}

namespace detail {

inline void check_scores(const std::vector<double>& scores, const char* what) {
    for (double s : scores)
        if (!(s >= 0.0 && s <= 1.0))
            throw InputError(std::string(what) + " score outside [0,1]");
}

inline double mean(const std::vector<double>& scores) {
    return std::accumulate(scores.begin(), scores.end(), 0.0) /
           static_cast<double>(scores.size());
}

} // namespace detail

/// mean(entity)/2 + mean(relational)/2 when both groups are present. Dividing
/// a mean by two is an exact halving, so this equals the sum-over-2n form
/// bit for bit. Empty groups follow the policy; nullopt marks "undefined"
/// (both groups empty under drop_term_renormalize).
inline std::optional<double> fine_grained_score(const std::vector<double>& entity_scores,
                                                const std::vector<double>& relational_scores,
                                                const AggregationPolicy& policy = {}) {
    detail::check_scores(entity_scores, "entity");
    detail::check_scores(relational_scores, "relational");
    const bool has_e = !entity_scores.empty();
    const bool has_r = !relational_scores.empty();
    if (has_e && has_r)
        return detail::mean(entity_scores) / 2.0 + detail::mean(relational_scores) / 2.0;
    if (!has_e && !has_r) {
        if (policy.empty_group_rule == EmptyGroupRule::ScoreZero) return 0.0;
        return std::nullopt;
    }
    const std::vector<double>& present = has_e ? entity_scores : relational_scores;
    if (policy.empty_group_rule == EmptyGroupRule::ScoreZero)
        return detail::mean(present) / 2.0;
    return detail::mean(present);
}

/// Arithmetic mean of the global question scores.
inline double coarse_grained_score(const std::vector<double>& global_scores) {
    if (global_scores.empty()) throw InputError("no global scores");
    detail::check_scores(global_scores, "global");
    return detail::mean(global_scores);
}

/// (fine + coarse)/2, or coarse alone when fine is undefined. `used_coarse_only`
/// (when given) records which branch was taken.
inline double overall_score(std::optional<double> fine, double coarse,
                            bool* used_coarse_only = nullptr) {
    if (!(coarse >= 0.0 && coarse <= 1.0)) throw InputError("coarse score outside [0,1]");
    if (fine && !(*fine >= 0.0 && *fine <= 1.0)) throw InputError("fine score outside [0,1]");
    if (used_coarse_only) *used_coarse_only = !fine.has_value();
    if (!fine) return coarse;
    return (*fine + coarse) / 2.0;
}

} // namespace tialign
