// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include "imad/corpus.hpp"
#include "imad/error.hpp"
#include "imad/parallel.hpp"
#include "imad/rng.hpp"

namespace imad::evalkit {

namespace {

using NgramCounts = std::unordered_map<std::string, std::int64_t>;

// Unit separator never appears inside a token produced by tokenize().
NgramCounts count_ngrams(std::span<const std::string> tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (std::size_t k = 1; k < n; ++k) {
            key += '\x1f';
            key += tokens[i + k];
        }
        ++counts[key];
    }
    return counts;
}

Spread spread_of(const std::vector<double>& values) {
    Spread s;
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}

// Neumaier summation; pooled log-likelihoods span many thousands of tokens.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            carry_ += (sum_ - t) + x;
        else
            carry_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

struct LogprobTotals {
    CompensatedSum sum;
    std::int64_t tokens = 0;

    void add(const LogprobTotals& other) {
        sum.add(other.sum.value());
        tokens += other.tokens;
    }
    double perplexity() const { return std::exp(-sum.value() / static_cast<double>(tokens)); }
};

LogprobTotals logprob_totals(const GenerationRecord& r) {
    LogprobTotals t;
    if (!r.token_logprobs) return t;
    for (double lp : *r.token_logprobs) t.sum.add(lp);
    t.tokens = static_cast<std::int64_t>(r.token_logprobs->size());
    return t;
}

GroupMetrics evaluate_group(std::string name, const std::vector<const GenerationRecord*>& records,
                            const std::optional<BootstrapSettings>& bootstrap) {
    GroupMetrics m;
    m.group = std::move(name);
    m.samples = records.size();

    std::vector<NgramStats> per_record;
    std::vector<LogprobTotals> per_record_lp;
    per_record.reserve(records.size());
    NgramStats pooled;
    LogprobTotals lp_pooled;
    for (const auto* r : records) {
        per_record.push_back(ngram_stats(r->hypothesis, r->reference));
        pooled += per_record.back();
        per_record_lp.push_back(logprob_totals(*r));
        lp_pooled.add(per_record_lp.back());
    }
    for (int k = 1; k <= kMaxBleuOrder; ++k) m.bleu[k - 1] = bleu_from_stats(pooled, k, Smoothing::none);
    if (lp_pooled.tokens > 0) m.perplexity = lp_pooled.perplexity();

    if (bootstrap && !records.empty()) {
        const auto n = records.size();
        std::vector<std::array<double, kMaxBleuOrder>> bleu_samples(bootstrap->resamples);
        std::vector<double> ppl_samples(bootstrap->resamples, std::nan(""));
        parallel_for(bootstrap->resamples, [&](std::size_t b) {
            Rng rng(derive_seed(bootstrap->seed, b));
            NgramStats s;
            LogprobTotals lp;
            for (std::size_t i = 0; i < n; ++i) {
                const auto pick = static_cast<std::size_t>(rng.below(n));
                s += per_record[pick];
                lp.add(per_record_lp[pick]);
            }
            for (int k = 1; k <= kMaxBleuOrder; ++k) bleu_samples[b][k - 1] = bleu_from_stats(s, k, Smoothing::none);
            if (lp.tokens > 0) ppl_samples[b] = lp.perplexity();
        });
        std::array<Spread, kMaxBleuOrder> spreads;
        for (int k = 0; k < kMaxBleuOrder; ++k) {
            std::vector<double> col;
            col.reserve(bleu_samples.size());
            for (const auto& row : bleu_samples) col.push_back(row[k]);
            spreads[k] = spread_of(col);
        }
        m.bleu_bootstrap = spreads;
        if (m.perplexity) {
            std::vector<double> finite;
            for (double p : ppl_samples)
                if (!std::isnan(p)) finite.push_back(p);
            m.perplexity_bootstrap = spread_of(finite);
        }
    }
    return m;
}

Json spread_json(const Spread& s) { return Json{{"mean", s.mean}, {"std", s.std}}; }

Json group_json(const GroupMetrics& g) {
    Json j{{"group", g.group}, {"samples", g.samples}};
    Json bleu = Json::object();
    for (int k = 0; k < kMaxBleuOrder; ++k) bleu["bleu" + std::to_string(k + 1)] = g.bleu[k];
    j["bleu"] = bleu;
    j["perplexity"] = g.perplexity ? Json(*g.perplexity) : Json(nullptr);
    if (g.bleu_bootstrap) {
        Json boot = Json::object();
        for (int k = 0; k < kMaxBleuOrder; ++k) boot["bleu" + std::to_string(k + 1)] = spread_json((*g.bleu_bootstrap)[k]);
        if (g.perplexity_bootstrap) boot["perplexity"] = spread_json(*g.perplexity_bootstrap);
        j["bootstrap"] = boot;
    }
    return j;
}

std::string fixed(double v, int precision = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

}  // namespace

NgramStats& NgramStats::operator+=(const NgramStats& other) {
    for (int n = 0; n < kMaxBleuOrder; ++n) {
        matches[n] += other.matches[n];
        totals[n] += other.totals[n];
    }
    hyp_len += other.hyp_len;
    ref_len += other.ref_len;
    return *this;
}

NgramStats ngram_stats(std::span<const std::string> hypothesis, std::span<const std::string> reference) {
    NgramStats s;
    s.hyp_len = static_cast<std::int64_t>(hypothesis.size());
    s.ref_len = static_cast<std::int64_t>(reference.size());
    for (std::size_t n = 1; n <= kMaxBleuOrder; ++n) {
        const auto hyp = count_ngrams(hypothesis, n);
        const auto ref = count_ngrams(reference, n);
        std::int64_t matched = 0, total = 0;
        for (const auto& [gram, count] : hyp) {
            total += count;
            if (auto it = ref.find(gram); it != ref.end()) matched += std::min(count, it->second);
        }
        s.matches[n - 1] = matched;
        s.totals[n - 1] = total;
    }
    return s;
}

double bleu_from_stats(const NgramStats& stats, int k, Smoothing smoothing) {
    if (k < 1 || k > kMaxBleuOrder) throw ValidationError("BLEU order must be in 1..4");
    if (stats.hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= k; ++n) {
        double m = static_cast<double>(stats.matches[n - 1]);
        double t = static_cast<double>(stats.totals[n - 1]);
        if (smoothing == Smoothing::add_one && n >= 2) {
            m += 1.0;
            t += 1.0;
        }
        if (m == 0.0 || t == 0.0) return 0.0;
        log_sum += std::log(m / t);
    }
    const double bp = stats.hyp_len >= stats.ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(stats.ref_len) / static_cast<double>(stats.hyp_len));
    return 100.0 * bp * std::exp(log_sum / k);
}

double sentence_bleu(std::span<const std::string> hypothesis, std::span<const std::string> reference, int k,
                     Smoothing smoothing) {
    return bleu_from_stats(ngram_stats(hypothesis, reference), k, smoothing) / 100.0;
}

std::vector<GenerationRecord> load_generations(const std::filesystem::path& path) {
    std::vector<GenerationRecord> out;
    std::unordered_set<std::string> seen;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        GenerationRecord r;
        r.sample_id = require_string(j, "sample_id", line);
        r.source = require_string(j, "source", line);
        r.hypothesis = corpus::tokenize(require_string(j, "hypothesis", line));
        r.reference = corpus::tokenize(require_string(j, "reference", line));
        if (r.reference.empty()) throw ValidationError("sample " + r.sample_id + ": empty reference", line);
        if (auto it = j.find("token_logprobs"); it != j.end() && !it->is_null()) {
            if (!it->is_array()) throw ValidationError("token_logprobs must be an array", line);
            std::vector<double> lps;
            for (const auto& v : *it) {
                if (!v.is_number()) throw ValidationError("token_logprobs entry is not a number", line);
                const double lp = v.get<double>();
                if (!std::isfinite(lp) || lp > 0.0)
                    throw ValidationError("sample " + r.sample_id + ": log-probs must be finite and <= 0", line);
                lps.push_back(lp);
            }
            if (lps.size() != r.reference.size())
                throw ValidationError("sample " + r.sample_id + ": " + std::to_string(lps.size()) +
                                          " log-probs for " + std::to_string(r.reference.size()) + " reference tokens",
                                      line);
            r.token_logprobs = std::move(lps);
        }
        if (!seen.insert(r.sample_id).second) throw ValidationError("duplicate sample_id " + r.sample_id, line);
        out.push_back(std::move(r));
    });
    return out;
}

double corpus_bleu(std::span<const GenerationRecord> records, int max_n, Smoothing smoothing) {
    if (records.empty()) throw ValidationError("corpus BLEU of an empty record set");
    NgramStats pooled;
    for (const auto& r : records) pooled += ngram_stats(r.hypothesis, r.reference);
    return bleu_from_stats(pooled, max_n, smoothing);
}

double perplexity(std::span<const GenerationRecord> records) {
    LogprobTotals pooled;
    for (const auto& r : records) pooled.add(logprob_totals(r));
    if (pooled.tokens == 0) throw ValidationError("perplexity needs at least one token log-prob");
    return pooled.perplexity();
}

double fleiss_kappa(const RatingMatrix& matrix) {
    const auto n_items = matrix.counts.size();
    const auto n_cat = matrix.categories.size();
    if (n_items < 2) throw ValidationError("Fleiss kappa needs at least two items");
    if (n_cat < 1) throw ValidationError("Fleiss kappa needs at least one category");

    std::int64_t raters = -1;
    std::vector<double> category_totals(n_cat, 0.0);
    double agreement_sum = 0.0;
    for (std::size_t i = 0; i < n_items; ++i) {
        const auto& row = matrix.counts[i];
        if (row.size() != n_cat) throw ValidationError("rating row " + std::to_string(i) + " has the wrong width");
        std::int64_t row_sum = 0;
        double squares = 0.0;
        for (std::size_t j = 0; j < n_cat; ++j) {
            if (row[j] < 0) throw ValidationError("negative rating count in row " + std::to_string(i));
            row_sum += row[j];
            squares += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            category_totals[j] += static_cast<double>(row[j]);
        }
        if (raters < 0) raters = row_sum;
        if (row_sum != raters)
            throw ValidationError("unequal rater counts: item " + std::to_string(i) + " has " + std::to_string(row_sum) +
                                  ", expected " + std::to_string(raters));
        if (raters < 2) throw ValidationError("Fleiss kappa needs at least two raters per item");
        const double n = static_cast<double>(raters);
        agreement_sum += (squares - n) / (n * (n - 1.0));
    }
    const double p_bar = agreement_sum / static_cast<double>(n_items);
    const double total = static_cast<double>(n_items) * static_cast<double>(raters);
    double p_e = 0.0;
    for (double c : category_totals) p_e += (c / total) * (c / total);
    if (p_e >= 1.0) throw ValidationError("Fleiss kappa is undefined when every rating falls in one category");
    return (p_bar - p_e) / (1.0 - p_e);
}

DatasetStats dataset_stats(std::span<const StatsSample> samples) {
    if (samples.empty()) throw ValidationError("dataset statistics of an empty dataset");
    DatasetStats s;
    s.total_dialogues = samples.size();
    std::unordered_set<std::string> context_vocab, utterance_vocab;
    std::size_t turns = 0, context_tokens = 0, utterance_tokens = 0;
    for (const auto& sample : samples) {
        turns += sample.context.size();
        for (const auto& text : sample.context) {
            auto tokens = corpus::tokenize(text);
            context_tokens += tokens.size();
            context_vocab.insert(std::make_move_iterator(tokens.begin()), std::make_move_iterator(tokens.end()));
        }
        auto tokens = corpus::tokenize(sample.utterance);
        utterance_tokens += tokens.size();
        utterance_vocab.insert(std::make_move_iterator(tokens.begin()), std::make_move_iterator(tokens.end()));
    }
    const double n = static_cast<double>(samples.size());
    s.avg_turns_per_context = static_cast<double>(turns) / n;
    s.avg_tokens_per_context = static_cast<double>(context_tokens) / n;
    s.avg_tokens_per_utterance = static_cast<double>(utterance_tokens) / n;
    s.context_vocabulary = context_vocab.size();
    s.utterance_vocabulary = utterance_vocab.size();
    return s;
}

Json to_json(const DatasetStats& s) {
    return Json{{"total_dialogues", s.total_dialogues},
                {"avg_speaker_turns_per_context", s.avg_turns_per_context},
                {"avg_tokens_per_context", s.avg_tokens_per_context},
                {"avg_tokens_per_replaced_utterance", s.avg_tokens_per_utterance},
                {"context_vocabulary_size", s.context_vocabulary},
                {"replaced_utterance_vocabulary_size", s.utterance_vocabulary}};
}

std::string format_stats(const DatasetStats& s) {
    std::ostringstream os;
    os << "Total Dialogues                                  " << s.total_dialogues << '\n'
       << "Average Speaker Turns Per Context                " << fixed(s.avg_turns_per_context, 1) << '\n'
       << "Average Number of Tokens Per Context             " << fixed(s.avg_tokens_per_context, 1) << '\n'
       << "Average Number of Tokens Per Replaced Utterance  " << fixed(s.avg_tokens_per_utterance, 1) << '\n'
       << "Size of Context Vocabulary                       " << s.context_vocabulary << '\n'
       << "Size of Replaced Utterances Vocabulary           " << s.utterance_vocabulary << '\n';
    return os.str();
}

EvalReport grouped_eval(std::span<const GenerationRecord> records, const GroupedEvalOptions& options) {
    if (records.empty()) throw ValidationError("evaluation of an empty record set");
    std::map<std::string, std::vector<const GenerationRecord*>> by_group;
    for (const auto& r : records) {
        if (r.source.empty()) throw ValidationError("sample " + r.sample_id + " has no group tag");
        by_group[r.source].push_back(&r);
    }
    if (!options.groups.empty()) {
        std::set<std::string> wanted(options.groups.begin(), options.groups.end());
        for (const auto& g : wanted)
            if (!by_group.contains(g)) throw ValidationError("unknown group \"" + g + "\"");
        std::erase_if(by_group, [&](const auto& kv) { return !wanted.contains(kv.first); });
    }

    EvalReport report;
    report.bootstrap = options.bootstrap;
    std::vector<const GenerationRecord*> all;
    for (const auto& [name, group] : by_group) {
        report.groups.push_back(evaluate_group(name, group, options.bootstrap));
        all.insert(all.end(), group.begin(), group.end());
    }
    // Keep the overall pool in input order so bootstrap draws do not depend
    // on how groups sort.
    std::sort(all.begin(), all.end());
    report.overall = evaluate_group("overall", all, options.bootstrap);
    return report;
}

Json to_json(const EvalReport& report) {
    Json groups = Json::array();
    for (const auto& g : report.groups) groups.push_back(group_json(g));
    Json j{{"groups", groups}, {"overall", group_json(report.overall)}};
    if (report.bootstrap)
        j["bootstrap"] = Json{{"resamples", report.bootstrap->resamples}, {"seed", report.bootstrap->seed}};
    return j;
}

std::string format_report(const EvalReport& report) {
    std::ostringstream os;
    auto cell = [](double v, const std::optional<Spread>& s) {
        std::string out = fixed(v);
        if (s) out += " ± " + fixed(s->std);
        return out;
    };
    auto row = [&](const GroupMetrics& g) {
        os << std::left << std::setw(24) << g.group << std::right << std::setw(7) << g.samples;
        for (int k = 0; k < kMaxBleuOrder; ++k) {
            std::optional<Spread> s;
            if (g.bleu_bootstrap) s = (*g.bleu_bootstrap)[k];
            os << std::setw(18) << cell(g.bleu[k], s);
        }
        os << std::setw(18) << (g.perplexity ? cell(*g.perplexity, g.perplexity_bootstrap) : std::string("-")) << '\n';
    };
    os << std::left << std::setw(24) << "group" << std::right << std::setw(7) << "n";
    for (int k = 1; k <= kMaxBleuOrder; ++k) os << std::setw(18) << ("BLEU-" + std::to_string(k));
    os << std::setw(18) << "Perplexity" << '\n';
    for (const auto& g : report.groups) row(g);
    row(report.overall);
    return os.str();
}

}  // namespace imad::evalkit
