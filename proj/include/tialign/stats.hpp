#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tialign/core.hpp"
#include "tialign/errors.hpp"

namespace tialign {

namespace detail {

inline void check_pair(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw InputError("correlation inputs differ in length");
    if (xs.size() < 2) throw InputError("correlation needs at least 2 samples");
    for (double v : xs)
        if (!std::isfinite(v)) throw InputError("non-finite value in correlation input");
    for (double v : ys)
        if (!std::isfinite(v)) throw InputError("non-finite value in correlation input");
}

/// Sorts ascending in place and counts inversions (strict: equal neighbors are
/// not inversions). Bottom-up mergesort, O(n log n).
inline long long sort_count_inversions(std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> buf(n);
    long long swaps = 0;
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
            const std::size_t mid = lo + width;
            const std::size_t hi = std::min(lo + 2 * width, n);
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid && j < hi) {
                if (v[j] < v[i]) {
                    swaps += static_cast<long long>(mid - i);
                    buf[k++] = v[j++];
                } else {
                    buf[k++] = v[i++];
                }
            }
            while (i < mid) buf[k++] = v[i++];
            while (j < hi) buf[k++] = v[j++];
            std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
        }
    }
    return swaps;
}

/// Sum of t(t-1)/2 over runs of equal values in a sorted vector.
inline long long tied_pairs(const std::vector<double>& sorted) {
    long long total = 0;
    std::size_t run = 1;
    for (std::size_t i = 1; i <= sorted.size(); ++i) {
        if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
            ++run;
        } else {
            total += static_cast<long long>(run) * static_cast<long long>(run - 1) / 2;
            run = 1;
        }
    }
    return total;
}

} // namespace detail

/// Average (fractional) 1-based ranks; tied values share the mean of the ranks
/// they span.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Kendall's tau-b: (C - D) / sqrt((C+D+Tx)(C+D+Ty)), computed in O(n log n) by
/// sorting on (x, y) and counting discordant pairs as mergesort inversions of
/// the y sequence, with tie-pair bookkeeping. Returns nullopt when either
/// vector is constant (every pair tied; the coefficient is undefined).
inline std::optional<double> kendall_tau(const std::vector<double>& xs,
                                         const std::vector<double>& ys) {
    detail::check_pair(xs, ys);
    const std::size_t n = xs.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (xs[a] != xs[b]) return xs[a] < xs[b];
        return ys[a] < ys[b];
    });

    long long xtie = 0;   // pairs tied in x
    long long ntie = 0;   // pairs tied in both
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
            const long long t = static_cast<long long>(j - i + 1);
            xtie += t * (t - 1) / 2;
            std::size_t a = i;
            while (a <= j) {
                std::size_t b = a;
                while (b + 1 <= j && ys[order[b + 1]] == ys[order[a]]) ++b;
                const long long u = static_cast<long long>(b - a + 1);
                ntie += u * (u - 1) / 2;
                a = b + 1;
            }
            i = j + 1;
        }
    }

    std::vector<double> y_seq(n);
    for (std::size_t i = 0; i < n; ++i) y_seq[i] = ys[order[i]];
    const long long dis = detail::sort_count_inversions(y_seq);
    const long long ytie = detail::tied_pairs(y_seq);   // y_seq is now sorted

    const long long tot = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    if (xtie == tot || ytie == tot) return std::nullopt;

    const long long con_minus_dis = tot - xtie - ytie + ntie - 2 * dis;
    // single sqrt of the product: for perfect-square products (no ties) the
    // denominator is exact, so textbook cases come out bit-exact
    const double denom = std::sqrt(static_cast<double>(tot - xtie) *
                                   static_cast<double>(tot - ytie));
    return static_cast<double>(con_minus_dis) / denom;
}

/// Spearman's rho: Pearson correlation of average ranks. Returns nullopt when
/// either vector is constant.
inline std::optional<double> spearman_rho(const std::vector<double>& xs,
                                          const std::vector<double>& ys) {
    detail::check_pair(xs, ys);
    const std::vector<double> rx = average_ranks(xs);
    const std::vector<double> ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double dx = rx[i] - mx;
        const double dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if (vx == 0.0 || vy == 0.0) return std::nullopt;
    return cov / std::sqrt(vx * vy);
}

/// (v - min)/(max - min); a constant input maps to all 0.5 and sets
/// *degenerate when given.
inline std::vector<double> min_max_normalize(const std::vector<double>& values,
                                             bool* degenerate = nullptr) {
    if (values.empty()) throw InputError("cannot normalize an empty list");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (degenerate) *degenerate = (lo == hi);
    std::vector<double> out;
    out.reserve(values.size());
    if (lo == hi) {
        out.assign(values.size(), 0.5);
        return out;
    }
    for (double v : values) out.push_back((v - lo) / (hi - lo));
    return out;
}

// ---------------------------------------------------------------------------
// Correlation reports
// ---------------------------------------------------------------------------

struct CorrelationSample {
    double metric_score = 0.0;
    double human_score = 0.0;
    std::string model;
    std::string category;
};

struct CorrelationReport {
    std::string model;
    std::string category;
    int n = 0;
    std::optional<double> tau;
    std::optional<double> rho;
    bool degenerate = false;
    bool mean_row = false;

    bool operator==(const CorrelationReport&) const = default;
};

inline void to_json(json& j, const CorrelationReport& r) {
    j = json{{"model", r.model},     {"category", r.category},
             {"n", r.n},             {"tau", r.tau ? json(*r.tau) : json(nullptr)},
             {"rho", r.rho ? json(*r.rho) : json(nullptr)},
             {"degenerate", r.degenerate},
             {"mean_row", r.mean_row}};
}

inline void from_json(const json& j, CorrelationReport& r) {
    j.at("model").get_to(r.model);
    j.at("category").get_to(r.category);
    j.at("n").get_to(r.n);
    r.tau = j.at("tau").is_null() ? std::nullopt : std::optional<double>(j.at("tau").get<double>());
    r.rho = j.at("rho").is_null() ? std::nullopt : std::optional<double>(j.at("rho").get<double>());
    j.at("degenerate").get_to(r.degenerate);
    j.at("mean_row").get_to(r.mean_row);
}

/// Groups samples by (model, category) in first-appearance order, min-max
/// normalizes metric and human scores per group (a no-op for the rank
/// correlations, kept for report parity), and computes tau-b and rho per
/// group. Appends a per-model mean row across that model's categories and a
/// final grand mean row (model "Mean") averaging the per-model means. Groups
/// with fewer than 2 samples are skipped with a warning.
inline std::vector<CorrelationReport> correlation_report(
    const std::vector<CorrelationSample>& samples, std::vector<std::string>* warnings = nullptr) {
    std::vector<std::string> model_order;
    std::vector<std::pair<std::pair<std::string, std::string>, std::vector<std::size_t>>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto key = std::make_pair(samples[i].model, samples[i].category);
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return g.first == key; });
        if (it == groups.end()) {
            groups.push_back({key, {i}});
            if (std::find(model_order.begin(), model_order.end(), key.first) == model_order.end())
                model_order.push_back(key.first);
        } else {
            it->second.push_back(i);
        }
    }

    std::vector<CorrelationReport> out;
    for (const auto& model : model_order) {
        std::vector<double> model_taus, model_rhos;
        long long model_n = 0;
        for (const auto& [key, idxs] : groups) {
            if (key.first != model) continue;
            if (idxs.size() < 2) {
                if (warnings)
                    warnings->push_back("skipping group model=" + key.first + " category=" +
                                        key.second + ": only " + std::to_string(idxs.size()) +
                                        " sample(s)");
                continue;
            }
            std::vector<double> metric, human;
            metric.reserve(idxs.size());
            human.reserve(idxs.size());
            for (std::size_t i : idxs) {
                metric.push_back(samples[i].metric_score);
                human.push_back(samples[i].human_score);
            }
            const std::vector<double> nm = min_max_normalize(metric);
            const std::vector<double> nh = min_max_normalize(human);
            CorrelationReport r;
            r.model = key.first;
            r.category = key.second;
            r.n = static_cast<int>(idxs.size());
            r.tau = kendall_tau(nm, nh);
            r.rho = spearman_rho(nm, nh);
            r.degenerate = !r.tau.has_value() || !r.rho.has_value();
            if (r.degenerate) {
                r.tau.reset();
                r.rho.reset();
            }
            model_n += r.n;
            if (r.tau) model_taus.push_back(*r.tau);
            if (r.rho) model_rhos.push_back(*r.rho);
            out.push_back(std::move(r));
        }
        if (model_n == 0) continue;
        CorrelationReport m;
        m.model = model;
        m.category = "Mean";
        m.n = static_cast<int>(model_n);
        m.mean_row = true;
        if (!model_taus.empty())
            m.tau = std::accumulate(model_taus.begin(), model_taus.end(), 0.0) /
                    static_cast<double>(model_taus.size());
        if (!model_rhos.empty())
            m.rho = std::accumulate(model_rhos.begin(), model_rhos.end(), 0.0) /
                    static_cast<double>(model_rhos.size());
        m.degenerate = !m.tau.has_value();
        out.push_back(std::move(m));
    }

    std::vector<double> grand_taus, grand_rhos;
    long long grand_n = 0;
    for (const auto& r : out) {
        if (!r.mean_row) continue;
        grand_n += r.n;
        if (r.tau) grand_taus.push_back(*r.tau);
        if (r.rho) grand_rhos.push_back(*r.rho);
    }
    if (grand_n > 0) {
        CorrelationReport g;
        g.model = "Mean";
        g.category = "Mean";
        g.n = static_cast<int>(grand_n);
        g.mean_row = true;
        if (!grand_taus.empty())
            g.tau = std::accumulate(grand_taus.begin(), grand_taus.end(), 0.0) /
                    static_cast<double>(grand_taus.size());
        if (!grand_rhos.empty())
            g.rho = std::accumulate(grand_rhos.begin(), grand_rhos.end(), 0.0) /
                    static_cast<double>(grand_rhos.size());
        g.degenerate = !g.tau.has_value();
        out.push_back(std::move(g));
    }
    return out;
}

/// Aligned-column text table: one row per model plus a final Mean row; one
/// tau/rho column pair per category plus a final Mean pair. Display precision
/// is 4 decimals; undefined cells print n/a.
inline std::string render_correlation_table(const std::vector<CorrelationReport>& reports) {
    std::vector<std::string> models, categories;
    for (const auto& r : reports) {
        if (r.model != "Mean" &&
            std::find(models.begin(), models.end(), r.model) == models.end())
            models.push_back(r.model);
        if (r.category != "Mean" &&
            std::find(categories.begin(), categories.end(), r.category) == categories.end())
            categories.push_back(r.category);
    }
    const bool has_grand = std::any_of(reports.begin(), reports.end(),
                                       [](const auto& r) { return r.model == "Mean"; });
    if (has_grand) models.push_back("Mean");
    categories.push_back("Mean");

    auto find_report = [&](const std::string& m, const std::string& c) -> const CorrelationReport* {
        for (const auto& r : reports)
            if (r.model == m && r.category == c) return &r;
        return nullptr;
    };
    auto fmt = [](std::optional<double> v) -> std::string {
        if (!v) return "n/a";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", *v);
        return buf;
    };

    std::size_t model_w = std::string("Model").size();
    for (const auto& m : models) model_w = std::max(model_w, m.size());
    const std::size_t cell_w = 7;   // fits "-0.1234"
    auto pad = [](const std::string& s, std::size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    auto rpad = [](const std::string& s, std::size_t w) {
        return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
    };

    std::string text;
    const std::size_t block_w = 2 * cell_w + 1;
    text += pad("Model", model_w);
    for (const auto& c : categories) text += " | " + pad(c, block_w);
    text += "\n";
    text += pad("", model_w);
    for (std::size_t i = 0; i < categories.size(); ++i)
        text += " | " + rpad("tau", cell_w) + " " + rpad("rho", cell_w);
    text += "\n";
    text += std::string(model_w, '-');
    for (std::size_t i = 0; i < categories.size(); ++i) text += "-+-" + std::string(block_w, '-');
    text += "\n";
    for (const auto& m : models) {
        text += pad(m, model_w);
        for (const auto& c : categories) {
            const CorrelationReport* r = find_report(m, c);
            if (!r)
                text += " | " + rpad("-", cell_w) + " " + rpad("-", cell_w);
            else
                text += " | " + rpad(fmt(r->tau), cell_w) + " " + rpad(fmt(r->rho), cell_w);
        }
        text += "\n";
    }
    return text;
}

} // namespace tialign
