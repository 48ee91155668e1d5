#pragma once

// Corpus-level text metrics for generated answers: BLEU-1..4 (pooled clipped
// precisions, brevity penalty, floor smoothing for zero orders), ROUGE-L
// (LCS F-measure, beta^2 = 1.2), CIDEr (TF-IDF n-gram cosine against the
// mean reference vector, original non-D variant), and normalized exact match.
//
// Variant choices matter for comparability, so they are fixed here and the
// test suite pins them against an independent reimplementation.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "sceneqa/core/error.hpp"
#include "sceneqa/lm/vocab.hpp"

namespace sceneqa {

struct EvalPair {
    std::string id;
    std::string hypothesis;
    std::vector<std::string> references;
    std::vector<std::string> hyp_tokens;
    std::vector<std::vector<std::string>> ref_tokens;

    static EvalPair make(std::string id, std::string hypothesis,
                         std::vector<std::string> references) {
        if (references.empty())
            throw ArgumentError("eval pair '" + id + "' needs at least one reference");
        EvalPair p;
        p.id = std::move(id);
        p.hypothesis = std::move(hypothesis);
        p.references = std::move(references);
        p.hyp_tokens = tokenize(p.hypothesis);
        for (const auto& r : p.references) p.ref_tokens.push_back(tokenize(r));
        return p;
    }
};

namespace detail {

// N-grams as separator-joined strings; '\x1f' cannot appear in tokens.
inline std::unordered_map<std::string, int> gram_counts(const std::vector<std::string>& toks,
                                                        int n) {
    std::unordered_map<std::string, int> out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key = toks[i];
        for (int j = 1; j < n; ++j) key += '\x1f' + toks[i + static_cast<std::size_t>(j)];
        out[key] += 1;
    }
    return out;
}

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

// Corpus BLEU-n in [0, 100]. Precisions are pooled over the corpus with
// per-hypothesis clipping against the best reference count; a zero precision
// at any order falls back to the floor 1/(2 * pooled denominator), taking
// the denominator as 1 when no n-grams of that order exist at all. The
// brevity penalty uses the closest reference length (ties toward shorter).
inline double bleu(const std::vector<EvalPair>& pairs, int max_n, bool* warned = nullptr) {
    if (max_n < 1 || max_n > 4) throw ArgumentError("bleu: order must be in 1..4");
    if (warned) *warned = false;
    long long hyp_len = 0, ref_len = 0;
    for (const auto& p : pairs) {
        hyp_len += static_cast<long long>(p.hyp_tokens.size());
        long long best = 0, best_diff = -1;
        for (const auto& r : p.ref_tokens) {
            long long len = static_cast<long long>(r.size());
            long long diff = std::llabs(len - static_cast<long long>(p.hyp_tokens.size()));
            if (best_diff < 0 || diff < best_diff || (diff == best_diff && len < best)) {
                best_diff = diff;
                best = len;
            }
        }
        ref_len += best;
    }
    if (pairs.empty() || hyp_len == 0) {
        if (warned) *warned = true;
        return 0.0;
    }

    double log_precision_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        long long matched = 0, total = 0;
        for (const auto& p : pairs) {
            std::unordered_map<std::string, int> cap;
            for (const auto& r : p.ref_tokens)
                for (const auto& [g, k] : detail::gram_counts(r, n))
                    cap[g] = std::max(cap[g], k);
            for (const auto& [g, k] : detail::gram_counts(p.hyp_tokens, n)) {
                auto it = cap.find(g);
                matched += std::min(k, it == cap.end() ? 0 : it->second);
                total += k;
            }
        }
        double pk = matched > 0
                        ? static_cast<double>(matched) / static_cast<double>(total)
                        : 1.0 / (2.0 * static_cast<double>(std::max<long long>(total, 1)));
        log_precision_sum += std::log(pk);
    }
    double brevity = hyp_len >= ref_len
                         ? 1.0
                         : std::exp(1.0 - static_cast<double>(ref_len) /
                                              static_cast<double>(hyp_len));
    return 100.0 * brevity * std::exp(log_precision_sum / max_n);
}

// Mean over pairs of the best-reference LCS F-measure, in [0, 100].
inline double rouge_l(const std::vector<EvalPair>& pairs, double beta_sq = 1.2) {
    if (pairs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& p : pairs) {
        double best = 0.0;
        for (const auto& r : p.ref_tokens) {
            int lcs = detail::lcs_length(p.hyp_tokens, r);
            if (lcs == 0) continue;
            double prec = static_cast<double>(lcs) / static_cast<double>(p.hyp_tokens.size());
            double rec = static_cast<double>(lcs) / static_cast<double>(r.size());
            best = std::max(best, (1.0 + beta_sq) * prec * rec / (rec + beta_sq * prec));
        }
        sum += best;
    }
    return 100.0 * sum / static_cast<double>(pairs.size());
}

// CIDEr on the stored [0, 1000] scale (the conventional 0..10 value times
// 100); divide by 10 when printing table-style percentages. Document
// frequency counts each pair's pooled references once; grams absent from
// every reference carry zero weight, which keeps corpus duplication neutral.
inline double cider(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) return 0.0;
    double per_pair_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        std::unordered_map<std::string, int> df;
        for (const auto& p : pairs) {
            std::unordered_map<std::string, int> pooled;
            for (const auto& r : p.ref_tokens)
                for (const auto& [g, k] : detail::gram_counts(r, n)) pooled[g] = 1;
            for (const auto& [g, one] : pooled) df[g] += 1;
        }
        const double docs = static_cast<double>(pairs.size());
        auto idf = [&](const std::string& g) {
            auto it = df.find(g);
            return it == df.end() ? 0.0 : std::log(docs / static_cast<double>(it->second));
        };
        for (const auto& p : pairs) {
            std::unordered_map<std::string, double> hyp_vec, ref_vec;
            for (const auto& [g, k] : detail::gram_counts(p.hyp_tokens, n))
                hyp_vec[g] = k * idf(g);
            for (const auto& r : p.ref_tokens)
                for (const auto& [g, k] : detail::gram_counts(r, n))
                    ref_vec[g] += k * idf(g) / static_cast<double>(p.ref_tokens.size());
            double dot = 0.0, hyp_sq = 0.0, ref_sq = 0.0;
            for (const auto& [g, w] : hyp_vec) {
                hyp_sq += w * w;
                auto it = ref_vec.find(g);
                if (it != ref_vec.end()) dot += w * it->second;
            }
            for (const auto& [g, w] : ref_vec) ref_sq += w * w;
            if (hyp_sq > 0.0 && ref_sq > 0.0)
                per_pair_sum += dot / (std::sqrt(hyp_sq) * std::sqrt(ref_sq)) / 4.0;
        }
    }
    return 1000.0 * per_pair_sum / static_cast<double>(pairs.size());
}

// Lowercase, collapse runs of whitespace, drop trailing punctuation.
inline std::string em_normalize(const std::string& s) {
    std::string out;
    bool pending_space = false;
    for (char raw : s) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }
    while (!out.empty() && (is_punct_token_char(out.back()) || out.back() == ' ')) out.pop_back();
    return out;
}

inline bool em_match(const EvalPair& p) {
    auto h = em_normalize(p.hypothesis);
    for (const auto& r : p.references)
        if (em_normalize(r) == h) return true;
    return false;
}

inline double em_at_1(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) return 0.0;
    int hits = 0;
    for (const auto& p : pairs) hits += em_match(p) ? 1 : 0;
    return 100.0 * hits / static_cast<double>(pairs.size());
}

struct MetricReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double rouge = 0, cider_score = 0, em = 0;
    bool empty_warning = false;
    struct Row {
        std::string id;
        bool em_hit = false;
        double rouge = 0.0;
    };
    std::vector<Row> per_sample;
};

inline MetricReport evaluate(const std::vector<EvalPair>& pairs) {
    MetricReport rep;
    rep.bleu1 = bleu(pairs, 1, &rep.empty_warning);
    rep.bleu2 = bleu(pairs, 2);
    rep.bleu3 = bleu(pairs, 3);
    rep.bleu4 = bleu(pairs, 4);
    rep.rouge = rouge_l(pairs);
    rep.cider_score = cider(pairs);
    rep.em = em_at_1(pairs);
    for (const auto& p : pairs)
        rep.per_sample.push_back({p.id, em_match(p), rouge_l({p})});
    return rep;
}

}  // namespace sceneqa
