#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "steerlab/verifier.hpp"

namespace steerlab {

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) tokens.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// ROUGE-L over whitespace tokens. Both strings empty gives f1 = 0 by
// convention.
inline RougeScore rouge_l(const std::string& candidate, const std::string& reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    RougeScore s;
    if (cand.empty() || ref.empty()) return s;
    const double lcs = lcs_length(cand, ref);
    s.precision = lcs / static_cast<double>(cand.size());
    s.recall = lcs / static_cast<double>(ref.size());
    if (s.precision + s.recall > 0.0)
        s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

// Corpus-level TF-IDF vectorizer for the cosine-similarity metric. The
// embedding is a bag-of-words stand-in and reports label it as such.
class TfIdf {
public:
    explicit TfIdf(const std::vector<std::string>& corpus) {
        std::map<std::string, int> doc_freq;
        for (const auto& text : corpus) {
            auto tokens = tokenize(text);
            std::sort(tokens.begin(), tokens.end());
            tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
            for (const auto& t : tokens) doc_freq[t]++;
        }
        const double n = static_cast<double>(corpus.size());
        for (const auto& [tok, df] : doc_freq)
            idf_[tok] = std::log((n + 1.0) / (df + 1.0)) + 1.0;
    }

    std::map<std::string, double> vectorize(const std::string& text) const {
        std::map<std::string, double> v;
        for (const auto& t : tokenize(text)) v[t] += 1.0;
        for (auto& [tok, val] : v) {
            auto it = idf_.find(tok);
            val *= it != idf_.end() ? it->second : 1.0;
        }
        return v;
    }

    double cosine(const std::string& a, const std::string& b) const {
        const auto va = vectorize(a);
        const auto vb = vectorize(b);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (const auto& [tok, val] : va) {
            na += val * val;
            auto it = vb.find(tok);
            if (it != vb.end()) dot += val * it->second;
        }
        for (const auto& [tok, val] : vb) nb += val * val;
        if (na == 0.0 || nb == 0.0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    }

private:
    std::map<std::string, double> idf_;
};

// 1 iff the narration parses back to exactly the reference feature tuple.
inline int gt_accuracy(const Narration& predicted, const BehaviorFeatures& reference) {
    try {
        return parse_narration(predicted.text) == reference ? 1 : 0;
    } catch (const NarrationParseError&) {
        return 0;
    }
}

struct ScoreDistributionReport {
    std::string metric;
    std::vector<double> intra_scores;
    std::vector<double> inter_scores;
    double separation_auc = 0.5;
};

// Rank-statistic AUC: probability that a random intra-category score
// exceeds a random inter-category score, ties counting one half.
inline double separation_auc(const std::vector<double>& intra, const std::vector<double>& inter) {
    if (intra.empty() || inter.empty())
        throw std::invalid_argument("separation_auc: empty sample");
    double wins = 0.0;
    for (double a : intra) {
        for (double b : inter) {
            if (a > b) wins += 1.0;
            else if (a == b) wins += 0.5;
        }
    }
    return wins / (static_cast<double>(intra.size()) * static_cast<double>(inter.size()));
}

struct LabeledNarration {
    std::string category;
    std::string text;
};

inline ScoreDistributionReport ablation_report(
    const std::vector<LabeledNarration>& corpus, const std::string& metric_name,
    const std::function<double(const std::string&, const std::string&)>& metric) {
    std::map<std::string, int> counts;
    for (const auto& n : corpus) counts[n.category]++;
    if (counts.size() < 2) throw std::invalid_argument("ablation_report: need >= 2 categories");
    for (const auto& [cat, c] : counts)
        if (c < 2)
            throw std::invalid_argument("ablation_report: category " + cat + " has < 2 items");

    ScoreDistributionReport rep;
    rep.metric = metric_name;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (std::size_t j = i + 1; j < corpus.size(); ++j) {
            const double s = metric(corpus[i].text, corpus[j].text);
            if (corpus[i].category == corpus[j].category) rep.intra_scores.push_back(s);
            else rep.inter_scores.push_back(s);
        }
    }
    rep.separation_auc = separation_auc(rep.intra_scores, rep.inter_scores);
    return rep;
}

// The 3 x 16 evaluation corpus: sixteen narrations per behavior category,
// varying the fields that do not define the category.
inline std::vector<LabeledNarration> default_ablation_corpus() {
    std::vector<LabeledNarration> corpus;
    auto add_grasp_category = [&corpus](const std::string& cat, Region region) {
        int added = 0;
        for (int i = 0; added < 16; ++i) {
            BehaviorFeatures f;
            f.first_contact_region = region;
            f.grasp_succeeded = true;
            f.lift_height = (i % 2) == 0 ? LiftHeight::high : LiftHeight::low;
            f.crush_level = static_cast<CrushLevel>((i / 2) % 3);
            f.dropped = (i / 6) % 2 == 1;
            corpus.push_back({cat, render_narration(f)});
            ++added;
        }
    };
    add_grasp_category("handle-grasp", Region::handle);
    add_grasp_category("rim-grasp", Region::rim);
    int added = 0;
    for (int i = 0; added < 16; ++i) {
        BehaviorFeatures f;
        f.grasp_succeeded = false;
        f.first_contact_region = (i % 2) == 0 ? Region::none : Region::interior;
        f.toppled = (i / 2) % 2 == 1;
        f.crush_level = static_cast<CrushLevel>((i / 4) % 3);
        f.lift_height = LiftHeight::low;
        corpus.push_back({"grasp-failure", render_narration(f)});
        ++added;
    }
    return corpus;
}

// Oracle metric for the ablation: 1 when two narrations fall in the same
// behavior category (region + grasp outcome), else 0.
inline double category_match_metric(const std::string& a, const std::string& b) {
    const auto fa = parse_narration(a);
    const auto fb = parse_narration(b);
    if (fa.grasp_succeeded != fb.grasp_succeeded) return 0.0;
    if (!fa.grasp_succeeded) return 1.0;  // all grasp failures form one category
    return fa.first_contact_region == fb.first_contact_region ? 1.0 : 0.0;
}

}  // namespace steerlab
