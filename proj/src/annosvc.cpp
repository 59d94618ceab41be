// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/annosvc.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <mutex>
#include <unordered_map>

#include "imad/evalkit.hpp"

namespace imad::annosvc {

using labels::LabelRecord;
using labels::Taxonomy;

namespace {

bool is_stage1(Taxonomy t) { return t == Taxonomy::stage1_binary; }

}  // namespace

const std::vector<PoolItem>& TaskPool::items(Taxonomy taxonomy) const { return is_stage1(taxonomy) ? stage1 : stage2; }

TaskPool build_pool(const std::vector<corpus::Candidate>& candidates, const std::vector<corpus::Dialogue>& dialogues,
                    const std::vector<matcher::MatchResult>& matches) {
    std::unordered_map<std::string, const corpus::Dialogue*> by_dialogue;
    for (const auto& d : dialogues) by_dialogue.emplace(d.dialogue_id, &d);
    std::unordered_map<std::string, const matcher::MatchResult*> by_match;
    for (const auto& m : matches) by_match.emplace(m.candidate_id, &m);

    TaskPool pool;
    std::set<std::string> ids;
    for (const auto& c : candidates) {
        auto d = by_dialogue.find(c.dialogue_id);
        if (d == by_dialogue.end())
            throw ValidationError("candidate " + c.candidate_id + " refers to unknown dialogue " + c.dialogue_id);
        if (!ids.insert(c.candidate_id).second) throw ValidationError("duplicate candidate " + c.candidate_id);
        PoolItem item{c.candidate_id, d->second->source.tag(), c.context, c.utterance, std::nullopt};
        pool.stage1.push_back(item);
        if (auto m = by_match.find(c.candidate_id); m != by_match.end()) {
            item.image_id = m->second->selected_image;
            pool.stage2.push_back(std::move(item));
        }
    }
    for (const auto& m : matches) {
        if (!ids.contains(m.candidate_id)) throw ValidationError("match for unknown candidate " + m.candidate_id);
    }
    return pool;
}

Json to_json(const AnnotationTask& task) {
    Json context = Json::array();
    for (const auto& t : task.context) context.push_back(corpus::to_json(t));
    Json labels = Json::array();
    for (auto l : labels::legal_labels(task.taxonomy)) labels.push_back(std::string(l));
    return Json{{"candidate_id", task.candidate_id},
                {"taxonomy", std::string(labels::to_string(task.taxonomy))},
                {"context", context},
                {"utterance", task.utterance},
                {"image_id", task.image_id ? Json(*task.image_id) : Json(nullptr)},
                {"labels", labels}};
}

Json to_json(const AgreementReport& report) {
    Json sources = Json::array();
    for (const auto& s : report.sources) {
        Json row{{"source", s.source},
                 {"kappa", s.kappa ? Json(*s.kappa) : Json(nullptr)},
                 {"items", s.items},
                 {"excluded", s.excluded}};
        if (!s.note.empty()) row["note"] = s.note;
        sources.push_back(std::move(row));
    }
    return Json{{"taxonomy", std::string(labels::to_string(report.taxonomy))},
                {"raters_per_item", report.raters_per_item},
                {"sources", sources},
                {"mean", report.mean ? Json(*report.mean) : Json(nullptr)},
                {"items", report.items},
                {"excluded", report.excluded}};
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string labels_text(const std::vector<LabelRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += labels::to_json(r).dump();
        out += '\n';
    }
    return out;
}

AgreementReport agreement_from_records(const TaskPool& pool, const std::vector<LabelRecord>& records,
                                       Taxonomy taxonomy, std::size_t raters_per_item) {
    std::unordered_map<std::string, const PoolItem*> items;
    for (const auto& item : pool.items(taxonomy)) items.emplace(item.candidate_id, &item);
    const auto categories = labels::legal_labels(taxonomy);

    // candidate -> per-category counts
    std::map<std::string, std::vector<std::int64_t>> counts;
    for (const auto& r : records) {
        if (r.taxonomy != taxonomy) continue;
        if (!items.contains(r.candidate_id)) throw UnknownCandidateError("unknown candidate " + r.candidate_id);
        auto& row = counts[r.candidate_id];
        row.resize(categories.size());
        const auto pos = std::find(categories.begin(), categories.end(), r.label) - categories.begin();
        if (pos == static_cast<std::ptrdiff_t>(categories.size()))
            throw IllegalLabelError("label \"" + r.label + "\" is not legal for " + std::string(labels::to_string(taxonomy)));
        ++row[static_cast<std::size_t>(pos)];
    }

    std::map<std::string, evalkit::RatingMatrix> matrices;
    std::map<std::string, std::vector<std::string>> excluded;
    for (const auto& [id, row] : counts) {
        const auto& source = items.at(id)->source;
        std::int64_t total = 0;
        for (auto c : row) total += c;
        if (total != static_cast<std::int64_t>(raters_per_item)) {
            excluded[source].push_back(id);
            continue;
        }
        auto& m = matrices[source];
        m.items.push_back(id);
        m.counts.push_back(row);
    }

    AgreementReport report;
    report.taxonomy = taxonomy;
    report.raters_per_item = raters_per_item;
    std::set<std::string> sources;
    for (const auto& [s, m] : matrices) sources.insert(s);
    for (const auto& [s, e] : excluded) sources.insert(s);
    double kappa_sum = 0.0;
    std::size_t defined = 0;
    for (const auto& source : sources) {
        SourceAgreement row;
        row.source = source;
        if (auto e = excluded.find(source); e != excluded.end()) row.excluded = e->second;
        if (auto it = matrices.find(source); it != matrices.end()) {
            auto& m = it->second;
            for (auto c : categories) m.categories.emplace_back(c);
            row.items = m.items.size();
            const bool unanimous = std::all_of(m.counts.begin(), m.counts.end(), [&](const auto& r) {
                return std::find(r.begin(), r.end(), static_cast<std::int64_t>(raters_per_item)) != r.end();
            });
            if (unanimous && m.items.size() >= 2) {
                row.kappa = 1.0;
            } else {
                try {
                    row.kappa = evalkit::fleiss_kappa(m);
                } catch (const ValidationError& e) {
                    row.note = e.what();
                }
            }
        } else {
            row.note = "no complete items";
        }
        if (row.kappa) {
            kappa_sum += *row.kappa;
            ++defined;
        }
        report.items += row.items;
        report.excluded += row.excluded.size();
        report.sources.push_back(std::move(row));
    }
    if (report.items == 0)
        throw NoCompleteItemsError("no item has " + std::to_string(raters_per_item) + " " +
                                   std::string(labels::to_string(taxonomy)) + " labels yet");
    if (defined > 0) report.mean = kappa_sum / static_cast<double>(defined);
    return report;
}

AnnotationService::AnnotationService(TaskPool pool, ServiceOptions options)
    : pool_(std::move(pool)), options_(std::move(options)) {
    if (options_.raters_per_item < 2) throw ValidationError("raters_per_item must be at least 2");
    for (auto t : {Taxonomy::stage1_binary, Taxonomy::stage2_three_class, Taxonomy::stage2_four_class}) {
        for (const auto& item : pool_.items(t)) items_.emplace(Key{t, item.candidate_id}, &item);
    }
    if (std::filesystem::exists(options_.log_path)) {
        for (auto& r : labels::read_labels(options_.log_path)) {
            if (!find_item(r.taxonomy, r.candidate_id))
                throw ValidationError(options_.log_path.string() + ": label for " + r.candidate_id +
                                      ", which is not in the " + std::string(labels::to_string(r.taxonomy)) +
                                      " task pool");
            index(r);
            records_.push_back(std::move(r));
        }
    }
    fd_ = ::open(options_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open label log " + options_.log_path.string() + ": " + std::strerror(errno));
}

AnnotationService::~AnnotationService() {
    if (fd_ >= 0) ::close(fd_);
}

const PoolItem* AnnotationService::find_item(Taxonomy taxonomy, const std::string& candidate_id) const {
    auto it = items_.find(Key{taxonomy, candidate_id});
    return it == items_.end() ? nullptr : it->second;
}

void AnnotationService::index(const LabelRecord& record) {
    by_item_[Key{record.taxonomy, record.candidate_id}].push_back(records_.size());
    seen_.emplace(record.taxonomy, record.candidate_id, record.rater_id);
}

std::optional<AnnotationTask> AnnotationService::next_task(const std::string& rater_id, Taxonomy taxonomy) const {
    if (!has_rater(rater_id)) throw UnknownRaterError("unknown rater " + rater_id);
    std::shared_lock lock(mutex_);
    const PoolItem* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& item : pool_.items(taxonomy)) {
        std::size_t count = 0;
        if (auto it = by_item_.find(Key{taxonomy, item.candidate_id}); it != by_item_.end()) count = it->second.size();
        if (count >= options_.raters_per_item) continue;
        if (seen_.contains({taxonomy, item.candidate_id, rater_id})) continue;
        if (!best || count < best_count || (count == best_count && item.candidate_id < best->candidate_id)) {
            best = &item;
            best_count = count;
        }
    }
    if (!best) return std::nullopt;
    return AnnotationTask{best->candidate_id, taxonomy, best->context, best->utterance,
                          is_stage1(taxonomy) ? std::nullopt : best->image_id};
}

LabelRecord AnnotationService::submit(const std::string& rater_id, const std::string& candidate_id,
                                      const std::string& label, Taxonomy taxonomy) {
    if (!has_rater(rater_id)) throw UnknownRaterError("unknown rater " + rater_id);
    if (!find_item(taxonomy, candidate_id))
        throw UnknownCandidateError("candidate " + candidate_id + " is not in the " +
                                    std::string(labels::to_string(taxonomy)) + " task pool");
    if (!labels::is_legal(taxonomy, label))
        throw IllegalLabelError("label \"" + label + "\" is not legal for " + std::string(labels::to_string(taxonomy)));

    std::unique_lock lock(mutex_);
    if (seen_.contains({taxonomy, candidate_id, rater_id}))
        throw DuplicateLabelError(rater_id + " already labeled " + candidate_id + " under " +
                                  std::string(labels::to_string(taxonomy)));
    LabelRecord record{candidate_id, rater_id, label, taxonomy, options_.clock()};
    const auto line = labels::to_json(record).dump() + "\n";
    const auto written = ::write(fd_, line.data(), line.size());
    if (written != static_cast<ssize_t>(line.size()))
        throw IoError("cannot append to label log " + options_.log_path.string() + ": " + std::strerror(errno));
    index(record);
    records_.push_back(record);
    return record;
}

AgreementReport AnnotationService::agreement(Taxonomy taxonomy) const {
    std::shared_lock lock(mutex_);
    return agreement_from_records(pool_, records_, taxonomy, options_.raters_per_item);
}

std::vector<LabelRecord> AnnotationService::export_labels(std::optional<Taxonomy> taxonomy) const {
    std::vector<LabelRecord> out;
    {
        std::shared_lock lock(mutex_);
        for (const auto& r : records_)
            if (!taxonomy || r.taxonomy == *taxonomy) out.push_back(r);
    }
    labels::sort_for_export(out);
    return out;
}

Json AnnotationService::progress() const {
    std::shared_lock lock(mutex_);
    Json taxonomies = Json::object();
    for (auto t : {Taxonomy::stage1_binary, Taxonomy::stage2_three_class, Taxonomy::stage2_four_class}) {
        std::size_t labeled = 0, complete = 0, n_labels = 0;
        for (const auto& item : pool_.items(t)) {
            auto it = by_item_.find(Key{t, item.candidate_id});
            if (it == by_item_.end()) continue;
            ++labeled;
            n_labels += it->second.size();
            if (it->second.size() >= options_.raters_per_item) ++complete;
        }
        taxonomies[std::string(labels::to_string(t))] = Json{
            {"pool", pool_.items(t).size()}, {"labeled", labeled}, {"complete", complete}, {"labels", n_labels}};
    }
    std::map<std::string, std::size_t> per_rater;
    for (const auto& r : options_.raters) per_rater[r] = 0;
    for (const auto& r : records_) ++per_rater[r.rater_id];
    return Json{{"raters_per_item", options_.raters_per_item},
                {"labels", records_.size()},
                {"taxonomies", taxonomies},
                {"raters", per_rater}};
}

std::size_t AnnotationService::log_size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

}  // namespace imad::annosvc
