// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

// imad command line: one subcommand per pipeline stage.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "imad/annosvc.hpp"
#include "imad/config.hpp"
#include "imad/corpus.hpp"
#include "imad/error.hpp"
#include "imad/evalkit.hpp"
#include "imad/features.hpp"
#include "imad/forest.hpp"
#include "imad/labels.hpp"
#include "imad/matcher.hpp"
#include "imad/pipeline.hpp"
#include "imad/vecstore.hpp"

namespace fs = std::filesystem;
using namespace imad;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::vector<std::string> paths;

    // ingest
    std::string source = "other";
    std::string adapter = "canonical";
    // extract / sample / featurize
    std::optional<std::size_t> min_context_turns;
    std::optional<std::size_t> sample_n;
    std::optional<double> tau;
    // cv / select
    bool skip_failed_folds = false;
    std::optional<double> threshold;
    std::vector<double> band;
    // match / sweep
    std::optional<std::size_t> n;
    std::vector<std::size_t> ns;
    // eval
    bool bootstrap = false;
    std::vector<std::string> groups;
    // serve
    std::string host = "127.0.0.1";
    int port = 8080;
    std::vector<std::string> raters;
};

void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

void wrote(const fs::path& path, const std::string& what) { std::cout << "wrote " << path.string() << " (" << what << ")\n"; }

RunConfig make_config(const Options& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.seed) c.seed = o.seed;
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    for (const auto& kv : o.paths) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("--path expects name=file, got \"" + kv + "\"");
        Json j = to_json(c);
        j["paths"][kv.substr(0, eq)] = kv.substr(eq + 1);
        c = config_from_json(j);
    }
    if (o.min_context_turns) c.min_context_turns = *o.min_context_turns;
    if (o.sample_n) c.sample_n = *o.sample_n;
    if (o.tau) c.tau = *o.tau;
    if (o.threshold) c.decision_threshold = *o.threshold;
    if (!o.band.empty()) c.band = Band{o.band.at(0), o.band.at(1)};
    if (o.n) c.n = *o.n;
    if (!o.ns.empty()) c.sweep_ns = o.ns;
    c.validate();
    return c;
}

void ensure_out_dir(const RunConfig& c) {
    std::error_code ec;
    fs::create_directories(c.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + c.out_dir.string() + ": " + ec.message());
}

void cmd_ingest(const RunConfig& c, const Options& o) {
    const auto input = c.path("raw");
    std::ifstream in(input, std::ios::binary);
    if (!in) throw IoError("cannot open " + input.string());
    const auto dialogues = corpus::ingest_dialogues(in, corpus::Source::parse(o.source), corpus::parse_adapter(o.adapter));
    corpus::write_dialogues(c.path("dialogues"), dialogues);
    wrote(c.path("dialogues"), std::to_string(dialogues.size()) + " dialogues");
}

void cmd_extract(const RunConfig& c, const Options&) {
    const auto candidates = corpus::extract_candidates(corpus::read_dialogues(c.path("dialogues")), c.min_context_turns);
    corpus::write_candidates(c.path("candidates"), candidates);
    wrote(c.path("candidates"), std::to_string(candidates.size()) + " candidates");
}

void cmd_sample(const RunConfig& c, const Options&) {
    const auto sample =
        corpus::sample_for_labeling(corpus::read_candidates(c.path("candidates")), c.sample_n, c.require_seed());
    corpus::write_candidates(c.path("sample"), sample);
    wrote(c.path("sample"), std::to_string(sample.size()) + " candidates");
}

void cmd_featurize(const RunConfig& c, const Options&) {
    using vecstore::TableKind;
    const auto candidates = corpus::read_candidates(c.path("candidates"));
    const auto utterances = vecstore::load_table(c.path("utterance_embeddings"), TableKind::utterance);
    const auto contexts = vecstore::load_table(c.path("context_embeddings"), TableKind::context);
    const auto images = vecstore::load_table(c.path("image_embeddings"), TableKind::image);
    std::optional<vecstore::EmbeddingTable> entities;
    features::EntityMap entity_map;
    if (c.paths.contains("entity_embeddings") != c.paths.contains("entities"))
        throw ValidationError("entity_embeddings and entities must be configured together");
    if (c.paths.contains("entities")) {
        entities = vecstore::load_table(c.path("entity_embeddings"), TableKind::entity);
        entity_map = features::load_entities(c.path("entities"));
    }
    const features::FeatureTables tables{utterances, contexts, images, entities ? &*entities : nullptr};
    const auto matrix = features::build_feature_matrix(candidates, tables, entity_map, c.tau);
    features::write_feature_matrix(c.path("features"), matrix);
    wrote(c.path("features"), std::to_string(matrix.size()) + " rows");
}

pipeline::TrainingSet load_training(const RunConfig& c, features::FeatureMatrix& matrix) {
    matrix = features::read_feature_matrix(c.path("features"));
    const auto records = labels::read_labels(c.path("stage1_labels"));
    return pipeline::training_set(matrix, records);
}

forest::ForestParams forest_params(const RunConfig& c) {
    auto p = c.forest;
    p.seed = c.require_seed();
    return p;
}

void cmd_train(const RunConfig& c, const Options&) {
    features::FeatureMatrix matrix;
    const auto t = load_training(c, matrix);
    const auto model = forest::train_forest(t.X, t.y, forest_params(c), matrix.feature_names);
    forest::save_model(c.path("model"), model);
    const auto importances = forest::feature_importances(model);
    Json imp = Json::object();
    for (std::size_t i = 0; i < importances.size(); ++i) imp[model.feature_names[i]] = importances[i];
    write_json(c.path("importances"), Json{{"importances", imp}});
    wrote(c.path("model"), std::to_string(model.trees.size()) + " trees on " + std::to_string(t.y.size()) + " rows");
    for (const auto& [name, value] : imp.items()) std::printf("  %-20s %.4f\n", name.c_str(), value.get<double>());
}

void cmd_cv(const RunConfig& c, const Options& o) {
    features::FeatureMatrix matrix;
    const auto t = load_training(c, matrix);
    forest::CvOptions opts{c.cv_k, c.cv_repeats, c.require_seed(), c.decision_threshold, o.skip_failed_folds};
    const auto report = forest::cross_validate(t.X, t.y, forest_params(c), opts);
    write_json(c.path("cv_report"), forest::to_json(report));
    wrote(c.path("cv_report"), std::to_string(report.folds.size()) + " folds");
    auto line = [](const char* name, const forest::MetricSummary& m) {
        std::printf("  %-10s %.4f +- %.4f\n", name, m.mean, m.std);
    };
    line("precision", report.precision);
    line("recall", report.recall);
    line("accuracy", report.accuracy);
    line("f1", report.f1);
    for (const auto& d : report.diagnostics) std::cerr << "warning: " << d << "\n";
}

void cmd_select(const RunConfig& c, const Options&) {
    const auto model = forest::load_model(c.path("model"));
    const auto matrix = features::read_feature_matrix(c.path("features"));
    const auto selection = pipeline::stage1_select(model, matrix, c.decision_threshold, c.band);
    pipeline::write_selection(c.path("selected"), selection);
    wrote(c.path("selected"), std::to_string(selection.size()) + " of " + std::to_string(matrix.size()) + " candidates");
}

std::vector<std::string> selected_ids(const RunConfig& c) {
    std::vector<std::string> ids;
    for (const auto& s : pipeline::read_selection(c.path("selected"))) ids.push_back(s.candidate_id);
    return ids;
}

fs::path meta_path(const fs::path& matches) {
    auto p = matches;
    p.replace_extension();
    p += ".meta.json";
    return p;
}

void cmd_match(const RunConfig& c, const Options&) {
    const auto ids = selected_ids(c);
    const auto utterances = vecstore::load_table(c.path("utterance_embeddings"), vecstore::TableKind::utterance);
    const auto images = vecstore::load_table(c.path("image_embeddings"), vecstore::TableKind::image);
    const auto vqa = matcher::load_vqa_scores(c.path("vqa_scores"));
    const auto results = matcher::match_all(ids, utterances, images, vqa, c.n);
    matcher::write_matches(c.path("matches"), results);
    matcher::write_match_meta(meta_path(c.path("matches")), c.n);
    wrote(c.path("matches"), std::to_string(results.size()) + " matches at N=" + std::to_string(c.n));
}

void cmd_sweep(const RunConfig& c, const Options&) {
    const auto ids = selected_ids(c);
    const auto utterances = vecstore::load_table(c.path("utterance_embeddings"), vecstore::TableKind::utterance);
    const auto images = vecstore::load_table(c.path("image_embeddings"), vecstore::TableKind::image);
    const auto vqa = matcher::load_vqa_scores(c.path("vqa_scores"));
    std::optional<matcher::Judgments> judgments;
    if (c.paths.contains("judgments")) judgments = matcher::load_judgments(c.path("judgments"));
    const auto report = matcher::n_sweep(ids, utterances, images, vqa, c.sweep_ns, judgments ? &*judgments : nullptr);
    write_json(c.path("sweep"), matcher::to_json(report));
    std::cout << matcher::format_sweep(report);
    wrote(c.path("sweep"), std::to_string(report.rows.size()) + " rows");
}

void cmd_consensus(const RunConfig& c, const Options&) {
    const auto all = pipeline::consensus_all(labels::read_labels(c.path("labels")));
    pipeline::write_consensus(c.path("consensus"), all);
    wrote(c.path("consensus"), std::to_string(all.size()) + " candidates");
}

void cmd_assemble(const RunConfig& c, const Options&) {
    const auto result = pipeline::assemble_dataset(
        corpus::read_candidates(c.path("candidates")), corpus::read_dialogues(c.path("dialogues")),
        matcher::read_matches(c.path("matches")), pipeline::read_consensus(c.path("consensus")),
        pipeline::read_selection(c.path("selected")));
    pipeline::write_dataset(c.path("dataset"), result.samples);
    wrote(c.path("dataset"), std::to_string(result.samples.size()) + " samples");
    if (result.stats) {
        write_json(c.path("stats"), evalkit::to_json(*result.stats));
        wrote(c.path("stats"), "dataset statistics");
    } else {
        std::cout << "no samples; statistics skipped\n";
    }
}

void cmd_stats(const RunConfig& c, const Options&) {
    const auto samples = pipeline::read_dataset(c.path("dataset"));
    const auto stats = evalkit::dataset_stats(pipeline::stats_samples(samples));
    write_json(c.path("stats"), evalkit::to_json(stats));
    std::cout << evalkit::format_stats(stats);
    wrote(c.path("stats"), "dataset statistics");
}

void cmd_eval(const RunConfig& c, const Options& o) {
    const auto records = evalkit::load_generations(c.path("generations"));
    evalkit::GroupedEvalOptions opts;
    opts.groups = o.groups;
    if (o.bootstrap) opts.bootstrap = evalkit::BootstrapSettings{c.bootstrap_resamples, c.require_seed()};
    const auto report = evalkit::grouped_eval(records, opts);
    write_json(c.path("eval_report"), evalkit::to_json(report));
    std::cout << evalkit::format_report(report);
    wrote(c.path("eval_report"), std::to_string(records.size()) + " records");
}

void cmd_serve(const RunConfig& c, const Options& o) {
    if (o.raters.empty()) throw ValidationError("serve needs at least one --rater");
    const auto dialogues = corpus::read_dialogues(c.path("dialogues"));
    const auto candidates = corpus::read_candidates(c.path("candidates"));
    std::vector<matcher::MatchResult> matches;
    if (fs::exists(c.path("matches"))) matches = matcher::read_matches(c.path("matches"));
    auto pool = annosvc::build_pool(candidates, dialogues, matches);
    if (fs::exists(c.path("sample")))
        pool.stage1 = annosvc::build_pool(corpus::read_candidates(c.path("sample")), dialogues).stage1;

    annosvc::ServiceOptions opts;
    opts.log_path = c.path("annotation_log");
    opts.raters = {o.raters.begin(), o.raters.end()};
    opts.raters_per_item = c.raters_per_item;
    annosvc::AnnotationService service(std::move(pool), opts);
    std::optional<fs::path> static_dir;
    if (c.paths.contains("static_dir")) static_dir = c.path("static_dir");
    annosvc::HttpServer server(service, static_dir);

    // SIGINT/SIGTERM are taken by a waiter thread that stops the server.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    const int port = server.bind(o.host, o.port);
    std::cout << "serving on http://" << o.host << ":" << port << " (" << service.log_size() << " labels in "
              << opts.log_path.string() << ")" << std::endl;
    std::jthread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    server.listen();
    if (waiter.joinable()) {
        pthread_kill(waiter.native_handle(), SIGTERM);
    }
}

using Command = void (*)(const RunConfig&, const Options&);

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Image-augmented dialogue dataset pipeline"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "Run config (.toml or .json)");
    app.add_option("--seed", o.seed, "Random seed (overrides the config)");
    app.add_option("--out-dir", o.out_dir, "Output directory (overrides the config)");
    app.add_option("--path", o.paths, "Override one path, name=file (repeatable)")->allow_extra_args(false);

    std::map<std::string, Command> commands;
    auto sub = [&](const char* name, const char* help, Command fn) {
        commands[name] = fn;
        return app.add_subcommand(name, help);
    };

    auto* ingest = sub("ingest", "Normalize raw dialogues into dialogues.jsonl", cmd_ingest);
    ingest->add_option("--source", o.source, "Source tag for records without one");
    ingest->add_option("--adapter", o.adapter, "Input format: canonical or eou");
    auto* extract = sub("extract", "Extract (context, utterance) candidates", cmd_extract);
    extract->add_option("--min-context-turns", o.min_context_turns);
    auto* sample = sub("sample", "Sample candidates for stage-one labeling", cmd_sample);
    sample->add_option("-n,--n", o.sample_n, "Sample size");
    auto* featurize = sub("featurize", "Compute the five replacement features", cmd_featurize);
    featurize->add_option("--tau", o.tau, "Image score threshold");
    sub("train-rf", "Train the random forest on stage-one labels", cmd_train);
    auto* cv = sub("cv", "Repeated stratified k-fold cross-validation", cmd_cv);
    cv->add_flag("--skip-failed-folds", o.skip_failed_folds);
    auto* select = sub("select", "Select replaceable candidates with the forest", cmd_select);
    select->add_option("--threshold", o.threshold, "Decision threshold on P(replaceable)");
    select->add_option("--band", o.band, "Select proba in [lo, hi) instead")->expected(2);
    auto* match = sub("match", "Retrieve top-N images and rerank by VQA confidence", cmd_match);
    match->add_option("-n,--n", o.n, "Retrieval pool size");
    auto* sweep = sub("sweep", "Matching statistics over several N", cmd_sweep);
    sweep->add_option("--ns", o.ns, "Pool sizes")->delimiter(',');
    sub("consensus", "Aggregate four-class labels per candidate", cmd_consensus);
    sub("assemble", "Build the final dataset", cmd_assemble);
    sub("stats", "Dataset statistics", cmd_stats);
    auto* eval = sub("eval", "BLEU and perplexity per source", cmd_eval);
    eval->add_flag("--bootstrap", o.bootstrap, "Add bootstrap mean and std");
    eval->add_option("--groups", o.groups, "Restrict per-source rows")->delimiter(',');
    auto* serve = sub("serve", "Run the annotation service", cmd_serve);
    serve->add_option("--host", o.host);
    serve->add_option("--port", o.port);
    serve->add_option("--rater", o.raters, "Registered rater id (repeatable)")->allow_extra_args(false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const auto config = make_config(o);
        ensure_out_dir(config);
        for (const auto* s : app.get_subcommands()) commands.at(s->get_name())(config, o);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
