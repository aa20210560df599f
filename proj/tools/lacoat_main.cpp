// lacoat: latent-concept explanations for classifier predictions.
//
// Exit codes: 0 ok, 1 validation error (bad arguments, config, or input files), 2 runtime error.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lacoat/attribution.hpp"
#include "lacoat/binary_io.hpp"
#include "lacoat/concept_discoverer.hpp"
#include "lacoat/concept_mapper.hpp"
#include "lacoat/errors.hpp"
#include "lacoat/evaluation.hpp"
#include "lacoat/llm_client.hpp"
#include "lacoat/pipeline.hpp"
#include "lacoat/reference_scorer.hpp"
#include "lacoat/repr_store.hpp"
#include "lacoat/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lacoat;

namespace {

void emit(const json& value, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << io::dump_json(value);
    } else {
        io::write_file(out, io::dump_json(value));
    }
}

std::map<std::size_t, LayerArtifacts> load_layers(const std::vector<std::string>& concept_files,
                                                  const std::vector<std::string>& mapper_files,
                                                  const RepresentationBundle& bundle) {
    std::map<std::size_t, LayerArtifacts> layers;
    for (const auto& path : concept_files) {
        auto set = concept_set_from_json(json::parse(io::read_file(path)));
        if (set.num_records != bundle.num_records()) {
            throw ValidationError(path + " indexes " + std::to_string(set.num_records) +
                                  " records but the bundle has " + std::to_string(bundle.num_records()));
        }
        layers[set.layer].concepts = std::move(set);
    }
    for (const auto& path : mapper_files) {
        auto model = load_mapper(path);
        auto it = layers.find(model.layer);
        if (it == layers.end()) {
            throw ValidationError(path + " is for layer " + std::to_string(model.layer) +
                                  ", which has no concept file");
        }
        if (model.num_concepts() != it->second.concepts.k) {
            throw ValidationError(path + " predicts " + std::to_string(model.num_concepts()) +
                                  " concepts but layer " + std::to_string(model.layer) + " has " +
                                  std::to_string(it->second.concepts.k));
        }
        it->second.mapper = std::move(model);
    }
    return layers;
}

// Rows of `train` that survive into `filtered`, matched by (sentence, position).
std::vector<std::size_t> source_rows(const RepresentationBundle& train, const RepresentationBundle& filtered) {
    std::vector<std::size_t> rows;
    rows.reserve(filtered.num_records());
    for (const auto& r : filtered.records()) {
        auto row = train.find(r.sentence_id, r.position);
        if (!row) throw ValidationError("filtered bundle has a record missing from the training bundle");
        rows.push_back(*row);
    }
    return rows;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lacoat: explain classifier predictions through latent concepts"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus (train + test bundles)");
    SyntheticCorpusSpec spec;
    std::string synth_out, synth_task = "sequence_labeling";
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--facets", spec.num_facets);
    synth->add_option("--words", spec.words_per_facet, "Words per facet");
    synth->add_option("--contexts", spec.contexts_per_word, "Contexts per word");
    synth->add_option("--dim", spec.dim);
    synth->add_option("--layers", spec.layers);
    synth->add_option("--separation", spec.separation, "Facet separation in noise sigmas");
    synth->add_option("--seed", spec.seed);
    synth->add_option("--task", synth_task, "sequence_labeling | sequence_classification");
    synth->add_option("--tokens-per-sentence", spec.tokens_per_sentence);
    synth->add_option("--classes", spec.num_classes);
    synth->add_option("--test-sentences", spec.test_sentences);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate a bundle and apply the vocabulary filter");
    std::string ingest_dir, ingest_out;
    FilterOptions filter;
    ingest->add_option("--dir", ingest_dir, "Input bundle directory")->required();
    ingest->add_option("--out", ingest_out, "Filtered bundle directory")->required();
    ingest->add_option("--min-freq", filter.min_freq);
    ingest->add_option("--max-occ", filter.max_occurrences);
    ingest->add_option("--seed", filter.seed);

    // discover
    auto* discover = app.add_subcommand("discover", "Ward clustering of one layer into K concepts");
    std::string discover_bundle, discover_out;
    std::size_t discover_layer = 0, discover_k = 400;
    discover->add_option("--bundle", discover_bundle)->required();
    discover->add_option("--layer", discover_layer)->required();
    discover->add_option("--k", discover_k);
    discover->add_option("--out", discover_out, "concepts.json (stdout if omitted)");

    // train-scorer
    auto* train_scorer = app.add_subcommand("train-scorer", "Train the reference scorer on a bundle");
    std::string ts_bundle, ts_out, ts_task = "sequence_labeling";
    std::optional<std::size_t> ts_layer;
    ScorerTrainingOptions ts_options;
    train_scorer->add_option("--bundle", ts_bundle)->required();
    train_scorer->add_option("--out", ts_out)->required();
    train_scorer->add_option("--task", ts_task);
    train_scorer->add_option("--layer", ts_layer, "Defaults to the last layer");
    train_scorer->add_option("--hidden", ts_options.hidden);
    train_scorer->add_option("--epochs", ts_options.epochs);
    train_scorer->add_option("--seed", ts_options.seed);

    // map-train
    auto* map_train = app.add_subcommand("map-train", "Train the concept mapper for one layer");
    std::string mt_concepts, mt_bundle, mt_out;
    std::size_t mt_layer = 0;
    std::optional<double> mt_l2;
    MapperOptions mt_options;
    map_train->add_option("--concepts", mt_concepts)->required();
    map_train->add_option("--bundle", mt_bundle)->required();
    map_train->add_option("--layer", mt_layer)->required();
    map_train->add_option("--out", mt_out)->required();
    map_train->add_option("--l2", mt_l2, "Defaults to 1/N");
    map_train->add_option("--max-iter", mt_options.max_iter);
    map_train->add_option("--tol", mt_options.tol);

    // attribute
    auto* attribute = app.add_subcommand("attribute", "Integrated-gradients attribution of one instance");
    std::string at_bundle, at_scorer, at_out;
    std::uint32_t at_instance = 0;
    std::size_t at_position = 0, at_steps = 500;
    double at_mass = 0.5;
    attribute->add_option("--bundle", at_bundle)->required();
    attribute->add_option("--scorer", at_scorer)->required();
    attribute->add_option("--instance", at_instance, "Sentence id")->required();
    attribute->add_option("--position", at_position, "Token index for labeling tasks");
    attribute->add_option("--steps", at_steps);
    attribute->add_option("--mass", at_mass);
    attribute->add_option("--out", at_out);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Concept annotation, alignment and mapper reports");
    std::string ev_bundle, ev_train, ev_scorer, ev_out;
    std::vector<std::string> ev_concepts, ev_mappers;
    double ev_threshold = 0.9, ev_fraction = 0.9, ev_mass = 0.5;
    std::uint64_t ev_split_seed = 0;
    std::size_t ev_steps = 500;
    evaluate->add_option("--bundle", ev_bundle, "Filtered bundle the concepts index")->required();
    evaluate->add_option("--train-bundle", ev_train, "Unfiltered training bundle (defaults to --bundle)");
    evaluate->add_option("--concepts", ev_concepts)->required();
    evaluate->add_option("--mapper", ev_mappers, "Mapper files; their l2/max-iter settings are reused");
    evaluate->add_option("--scorer", ev_scorer)->required();
    evaluate->add_option("--out", ev_out)->required();
    evaluate->add_option("--threshold", ev_threshold);
    evaluate->add_option("--train-fraction", ev_fraction);
    evaluate->add_option("--split-seed", ev_split_seed);
    evaluate->add_option("--steps", ev_steps);
    evaluate->add_option("--mass", ev_mass);

    // explain
    auto* explain = app.add_subcommand("explain", "Explain one instance across layers");
    std::string ex_bundle, ex_train, ex_test, ex_scorer, ex_out, ex_model = "gpt-3.5-turbo";
    std::string ex_mock_response = "Mock explanation.";
    std::vector<std::string> ex_concepts, ex_mappers;
    std::vector<std::size_t> ex_layers;
    std::uint32_t ex_instance = 0;
    std::size_t ex_position = 0, ex_retries = 2;
    bool ex_mock = false;
    ExplainOptions ex_options;
    explain->add_option("--bundle", ex_bundle, "Filtered bundle the concepts index")->required();
    explain->add_option("--train-bundle", ex_train, "Unfiltered training bundle (defaults to --bundle)");
    explain->add_option("--test-bundle", ex_test, "Bundle holding the instance (defaults to training)");
    explain->add_option("--scorer", ex_scorer)->required();
    explain->add_option("--concepts", ex_concepts)->required();
    explain->add_option("--mapper", ex_mappers)->required();
    explain->add_option("--instance", ex_instance)->required();
    explain->add_option("--position", ex_position);
    explain->add_option("--layers", ex_layers, "Defaults to every layer with a mapper");
    explain->add_option("--steps", ex_options.steps);
    explain->add_option("--mass", ex_options.mass);
    explain->add_option("--display-n", ex_options.display_n);
    explain->add_option("--display-seed", ex_options.display_seed);
    auto* model_opt = explain->add_option("--llm-model", ex_model);
    auto* mock_opt = explain->add_flag("--llm-mock", ex_mock, "Answer from an in-process mock");
    model_opt->excludes(mock_opt);
    explain->add_option("--llm-mock-response", ex_mock_response);
    explain->add_option("--llm-retries", ex_retries);
    explain->add_option("--out", ex_out);

    // run
    auto* run = app.add_subcommand("run", "Run the whole pipeline from a JSON config");
    std::string run_config, run_out;
    run->add_option("--config", run_config)->required();
    run->add_option("--out", run_out, "Run directory (overrides output_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            spec.task = task_kind_from_string(synth_task);
            const auto corpus = generate_synthetic_corpus(spec);
            save_bundle(corpus.train, fs::path(synth_out) / "train");
            save_bundle(corpus.test, fs::path(synth_out) / "test");
            io::write_file(fs::path(synth_out) / "truth.json",
                           io::dump_json(json{{"spec", to_json(spec)},
                                              {"groups", corpus.group_names},
                                              {"train", corpus.train_truth},
                                              {"test", corpus.test_truth}}));
            std::cerr << "synth: " << corpus.train.num_records() << " train records, "
                      << corpus.test.num_records() << " test records\n";
        } else if (ingest->parsed()) {
            const auto bundle = load_bundle(ingest_dir);
            const auto filtered = filter_vocabulary(bundle, filter);
            save_bundle(filtered, ingest_out);
            std::cerr << "ingest: kept " << filtered.num_records() << " of " << bundle.num_records()
                      << " records\n";
        } else if (discover->parsed()) {
            const auto bundle = load_bundle(discover_bundle);
            auto result = cluster(bundle.layer(discover_layer), discover_k);
            result.concepts.layer = discover_layer;
            emit(concept_set_to_json(result.concepts), discover_out);
        } else if (train_scorer->parsed()) {
            const auto bundle = load_bundle(ts_bundle);
            ScorerFile file;
            file.task = task_kind_from_string(ts_task);
            file.layer = ts_layer.value_or(bundle.num_layers() - 1);
            auto trained = train_scorer_on_bundle(bundle, file.task, file.layer, ts_options);
            file.scorer = std::move(trained.scorer);
            save_scorer(ts_out, file);
            std::cerr << "train-scorer: train accuracy " << trained.train_accuracy << "\n";
        } else if (map_train->parsed()) {
            const auto bundle = load_bundle(mt_bundle);
            const auto concepts = concept_set_from_json(json::parse(io::read_file(mt_concepts)));
            if (concepts.num_records != bundle.num_records()) {
                throw ValidationError("concept set and bundle disagree on record count");
            }
            mt_options.l2 = mt_l2;
            mt_options.layer = mt_layer;
            const Eigen::MatrixXd features = bundle.layer(mt_layer).cast<double>();
            const auto trained = train_mapper(features, concepts.assignment(), concepts.k, mt_options);
            save_mapper(mt_out, trained.model);
            std::cerr << "map-train: " << trained.iterations << " iterations, final loss "
                      << trained.loss_history.back() << (trained.converged ? " (converged)\n" : "\n");
        } else if (attribute->parsed()) {
            const auto bundle = load_bundle(at_bundle);
            const auto scorer = load_scorer(at_scorer);
            const auto attr = attribute_instance(scorer, bundle, {at_instance, at_position}, at_steps, at_mass);
            const auto rows = bundle.sentence_rows(at_instance);
            std::vector<bool> selected(rows.size(), false);
            for (std::size_t i : attr.salient.indices) selected[i] = true;
            json tokens = json::array();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                tokens.push_back({{"token", bundle.record(rows[i]).token_text},
                                  {"score", attr.attribution.per_token[i]},
                                  {"selected", static_cast<bool>(selected[i])}});
            }
            emit(json{{"sentence_id", at_instance},
                      {"prediction", scorer.scorer.class_labels().at(attr.prediction)},
                      {"steps", attr.attribution.steps_used},
                      {"mass", at_mass},
                      {"degenerate", attr.salient.degenerate},
                      {"tokens", std::move(tokens)}},
                 at_out);
        } else if (evaluate->parsed()) {
            const auto bundle = load_bundle(ev_bundle);
            const auto train = ev_train.empty() ? bundle : load_bundle(ev_train);
            const auto scorer = load_scorer(ev_scorer);
            std::map<std::size_t, LayerArtifacts> layers;
            for (const auto& path : ev_concepts) {
                auto set = concept_set_from_json(json::parse(io::read_file(path)));
                layers[set.layer].concepts = std::move(set);
            }
            MapperOptions mapper;
            if (!ev_mappers.empty()) mapper.l2 = load_mapper(ev_mappers.front()).l2_strength;
            std::vector<std::size_t> layer_ids;
            for (const auto& [l, art] : layers) layer_ids.push_back(l);
            const auto rows = source_rows(train, bundle);
            const EvaluationSetup setup{.train = train,
                                        .concept_bundle = bundle,
                                        .concept_rows = rows,
                                        .scorer = scorer,
                                        .layers = layer_ids,
                                        .ig_steps = ev_steps,
                                        .salient_mass = ev_mass,
                                        .purity_threshold = ev_threshold,
                                        .train_fraction = ev_fraction,
                                        .split_seed = ev_split_seed,
                                        .topk = {1, 2, 5},
                                        .mapper = mapper,
                                        .truth = nullptr};
            const auto summary = write_evaluation_report(setup, layers, ev_out);
            for (const auto& f : summary.files) std::cerr << "evaluate: wrote " << (fs::path(ev_out) / f).string() << "\n";
        } else if (explain->parsed()) {
            const auto bundle = load_bundle(ex_bundle);
            const auto train = ex_train.empty() ? bundle : load_bundle(ex_train);
            const auto test = ex_test.empty() ? train : load_bundle(ex_test);
            const auto scorer = load_scorer(ex_scorer);
            auto layers = load_layers(ex_concepts, ex_mappers, bundle);
            for (auto& [l, art] : layers) {
                art.labels = annotate_concepts(art.concepts, bundle.records(),
                                               annotation_mode_for(scorer.task));
            }
            if (ex_layers.empty()) {
                for (const auto& [l, art] : layers) ex_layers.push_back(l);
            }
            std::optional<MockTransport> mock;
            std::optional<HttpTransport> http;
            const auto env = llm_environment_from_env();
            LlmOptions llm;
            llm.endpoint_url = chat_completions_url(env.base_url);
            llm.model = ex_model;
            llm.retry.max_retries = ex_retries;
            if (ex_mock) {
                mock.emplace([body = chat_completion_response(ex_mock_response)](const HttpRequest&) {
                    return HttpResponse{200, body};
                });
                llm.transport = &*mock;
            } else {
                http.emplace();
                llm.transport = &*http;
                llm.api_key = env.api_key;
            }
            ExplainContext context{train, bundle, test, scorer, layers, ex_options, llm};
            json out = json::array();
            for (const auto& e : explain_instance(context, {ex_instance, ex_position}, ex_layers)) {
                out.push_back(to_json(e));
            }
            emit(out, ex_out);
        } else if (run->parsed()) {
            const auto config = load_config(run_config);
            fs::path out_dir;
            if (!run_out.empty()) {
                out_dir = run_out;
            } else if (config.output_dir) {
                out_dir = *config.output_dir;
            } else {
                throw ValidationError("no run directory: pass --out or set output_dir");
            }
            const auto summary = run_pipeline(config, out_dir);
            for (const auto& [layer, scores] : summary.alignment) {
                std::cerr << "run: layer " << layer << " alignment saliency="
                          << (scores.saliency ? std::to_string(*scores.saliency) : "null")
                          << " position=" << (scores.position ? std::to_string(*scores.position) : "null");
                if (summary.facet_purity.contains(layer)) {
                    std::cerr << " purity=" << summary.facet_purity.at(layer);
                }
                std::cerr << "\n";
            }
            std::cerr << "run: " << summary.explanations << " explanations written to "
                      << out_dir.string() << "\n";
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
