#include "lacoat/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <utility>

#include "lacoat/binary_io.hpp"
#include "lacoat/errors.hpp"
#include "lacoat/plausifyer.hpp"

namespace lacoat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename F>
auto run_stage(const std::string& name, F&& body) {
    try {
        return body();
    } catch (const ValidationError& e) {
        throw ValidationError("stage '" + name + "': " + e.what());
    } catch (const TransportError& e) {
        throw TransportError("stage '" + name + "': " + e.what(), e.status());
    } catch (const std::exception& e) {
        throw std::runtime_error("stage '" + name + "': " + e.what());
    }
}

std::vector<TokenRecord> records_of(const RepresentationBundle& bundle, std::span<const std::size_t> rows) {
    std::vector<TokenRecord> out;
    out.reserve(rows.size());
    for (std::size_t row : rows) out.push_back(bundle.record(row));
    return out;
}

std::string layer_file(const std::string& stem, std::size_t layer, const std::string& ext) {
    return stem + "/layer_" + std::to_string(layer) + ext;
}

template <typename T>
T field(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config field '") + key + "': " + e.what());
    }
}

}  // namespace

AnnotationMode annotation_mode_for(TaskKind task) {
    return task == TaskKind::sequence_classification ? AnnotationMode::sentence_label
                                                     : AnnotationMode::token_label;
}

Eigen::MatrixXd sentence_inputs(const RepresentationBundle& bundle, std::span<const std::size_t> rows,
                                std::size_t layer) {
    const auto& m = bundle.layer(layer);
    Eigen::MatrixXd inputs(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        inputs.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i])).cast<double>();
    }
    return inputs;
}

std::optional<std::string> gold_label(const RepresentationBundle& bundle, TaskKind task,
                                      std::span<const std::size_t> rows, std::size_t position) {
    if (rows.empty()) return std::nullopt;
    if (task == TaskKind::sequence_classification) return bundle.record(rows.front()).sentence_class_label;
    if (position >= rows.size()) return std::nullopt;
    return bundle.record(rows[position]).token_class_label;
}

TrainedScorer train_scorer_on_bundle(const RepresentationBundle& bundle, TaskKind task,
                                     std::size_t layer, const ScorerTrainingOptions& options) {
    std::vector<Eigen::VectorXd> examples;
    std::vector<std::string> names;
    if (task == TaskKind::sequence_classification) {
        for (std::uint32_t sid : bundle.sentence_ids()) {
            const auto rows = bundle.sentence_rows(sid);
            const auto label = bundle.record(rows.front()).sentence_class_label;
            if (!label) throw ValidationError("sentence " + std::to_string(sid) + " has no class label");
            examples.push_back(sentence_inputs(bundle, rows, layer).colwise().mean().transpose());
            names.push_back(*label);
        }
    } else {
        for (std::size_t row = 0; row < bundle.num_records(); ++row) {
            const auto& r = bundle.record(row);
            if (r.is_classifier_token) continue;
            if (!r.token_class_label) {
                throw ValidationError("record " + std::to_string(row) + " has no token label");
            }
            examples.push_back(bundle.vector(layer, row));
            names.push_back(*r.token_class_label);
        }
    }
    std::set<std::string> distinct(names.begin(), names.end());
    std::vector<std::string> classes(distinct.begin(), distinct.end());
    Eigen::MatrixXd features(static_cast<Eigen::Index>(examples.size()), static_cast<Eigen::Index>(bundle.dim()));
    std::vector<std::size_t> labels;
    labels.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        features.row(static_cast<Eigen::Index>(i)) = examples[i].transpose();
        labels.push_back(static_cast<std::size_t>(
            std::lower_bound(classes.begin(), classes.end(), names[i]) - classes.begin()));
    }
    return train_reference_scorer(features, labels, std::move(classes), options);
}

InstanceAttribution attribute_instance(const ScorerFile& scorer, const RepresentationBundle& bundle,
                                       const InstanceRef& instance, std::size_t steps, double mass) {
    const auto rows = bundle.sentence_rows(instance.sentence_id);
    if (rows.empty()) {
        throw ValidationError("unknown instance: sentence " + std::to_string(instance.sentence_id));
    }
    const Eigen::MatrixXd inputs = sentence_inputs(bundle, rows, scorer.layer);
    InstanceAttribution out;
    if (scorer.task == TaskKind::sequence_classification) {
        PooledSequenceScorer model(scorer.scorer);
        out.prediction = model.predict(inputs);
        out.attribution = integrated_gradients(model, inputs, out.prediction, steps);
    } else {
        if (instance.position >= rows.size()) {
            throw ValidationError("instance position " + std::to_string(instance.position) +
                                  " outside sentence " + std::to_string(instance.sentence_id));
        }
        TokenPositionScorer model(scorer.scorer, instance.position);
        out.prediction = model.predict(inputs);
        out.attribution = integrated_gradients(model, inputs, out.prediction, steps);
    }
    out.salient = select_salient_top_p(out.attribution.per_token, mass);
    return out;
}

std::vector<TrainingSalience> training_salience(const ScorerFile& scorer,
                                                const RepresentationBundle& train,
                                                const RepresentationBundle& concept_bundle,
                                                std::size_t steps, double mass) {
    std::vector<TrainingSalience> out;
    auto row_in_concepts = [&](std::uint32_t sid, std::size_t row) {
        return concept_bundle.find(sid, train.record(row).position);
    };
    for (std::uint32_t sid : train.sentence_ids()) {
        const auto rows = train.sentence_rows(sid);
        const auto tokens = records_of(train, rows);
        std::vector<std::size_t> positions;
        if (scorer.task == TaskKind::sequence_classification) {
            positions.push_back(0);
        } else {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (!tokens[i].is_classifier_token) positions.push_back(i);
            }
        }
        for (std::size_t p : positions) {
            const auto attr = attribute_instance(scorer, train, {sid, p}, steps, mass);
            TrainingSalience s;
            s.predicted_class = scorer.scorer.class_labels().at(attr.prediction);
            s.saliency_row = row_in_concepts(sid, rows[attr.salient.indices.front()]);
            s.position_row = row_in_concepts(sid, rows[position_salient(scorer.task, tokens, p)]);
            out.push_back(std::move(s));
        }
    }
    return out;
}

AlignmentScores layer_alignment(std::span<const TrainingSalience> salience,
                                const ConceptSet& concepts, std::span<const ConceptLabel> labels) {
    const auto concept_of = concepts.assignment();
    std::vector<SalientAssignment> by_saliency, by_position;
    for (const auto& s : salience) {
        if (s.saliency_row) by_saliency.push_back({*s.saliency_row, s.predicted_class, concept_of.at(*s.saliency_row)});
        if (s.position_row) by_position.push_back({*s.position_row, s.predicted_class, concept_of.at(*s.position_row)});
    }
    AlignmentScores scores;
    if (!by_saliency.empty()) scores.saliency = alignment_accuracy(by_saliency, labels);
    if (!by_position.empty()) scores.position = alignment_accuracy(by_position, labels);
    return scores;
}

EvaluationSummary write_evaluation_report(const EvaluationSetup& setup,
                                          std::map<std::size_t, LayerArtifacts>& layers,
                                          const fs::path& report_dir) {
    EvaluationSummary summary;
    auto write = [&](const std::string& name, std::string_view bytes) {
        io::write_file(report_dir / name, bytes);
        summary.files.push_back(name);
    };
    const auto& bundle = setup.concept_bundle;
    for (std::size_t l : setup.layers) {
        if (!layers.contains(l)) throw ValidationError("no concepts for layer " + std::to_string(l));
    }

    const auto mode = annotation_mode_for(setup.scorer.task);
    const auto& class_list = setup.scorer.scorer.class_labels();
    json annotation = json::array();
    std::string census_csv = "layer,label,count\n";
    for (std::size_t l : setup.layers) {
        auto& art = layers.at(l);
        art.labels = annotate_concepts(art.concepts, bundle.records(), mode, setup.purity_threshold);
        annotation.push_back(annotation_to_json(l, art.labels));
        for (const auto& [label, count] : polarity_census(art.labels, class_list)) {
            census_csv += std::to_string(l) + "," + label + "," + std::to_string(count) + "\n";
        }
    }
    write("annotation.json",
          io::dump_json(json{{"mode", mode == AnnotationMode::token_label ? "token_label" : "sentence_label"},
                             {"threshold", setup.purity_threshold},
                             {"layers", std::move(annotation)}}));
    write("census.csv", census_csv);

    const auto salience = training_salience(setup.scorer, setup.train, bundle, setup.ig_steps, setup.salient_mass);
    std::vector<LayerRow> alignment_rows;
    for (std::size_t l : setup.layers) {
        const auto scores = layer_alignment(salience, layers.at(l).concepts, layers.at(l).labels);
        summary.alignment[l] = scores;
        alignment_rows.push_back({l, {scores.saliency, scores.position}});
    }
    write("alignment_by_layer.csv", to_csv(layer_report({"saliency", "position"}, setup.layers, alignment_rows)));

    // Held-out mapper accuracy on a train/test split of the clustered records. Concepts absent
    // from the training side cannot be predicted, so their test rows count as misses.
    std::vector<std::size_t> all_rows(bundle.num_records());
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    const auto split = split_train_test(all_rows, setup.train_fraction, setup.split_seed);
    std::vector<std::string> topk_columns;
    for (std::size_t k : setup.topk) topk_columns.push_back("top" + std::to_string(k));
    std::vector<LayerRow> topk_rows;
    for (std::size_t l : setup.layers) {
        const auto concept_of = layers.at(l).concepts.assignment();
        std::map<std::size_t, std::size_t> dense;
        for (std::size_t row : split.train) dense.emplace(concept_of[row], 0);
        std::size_t next = 0;
        for (auto& [cid, idx] : dense) idx = next++;

        const auto& m = bundle.layer(l);
        auto gather = [&](const std::vector<std::size_t>& rows, std::vector<std::size_t>& labels) {
            Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), m.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                x.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i])).cast<double>();
                auto it = dense.find(concept_of[rows[i]]);
                labels.push_back(it == dense.end() ? dense.size() : it->second);
            }
            return x;
        };
        std::vector<std::size_t> train_y, test_y;
        const Eigen::MatrixXd train_x = gather(split.train, train_y);
        const Eigen::MatrixXd test_x = gather(split.test, test_y);
        MapperOptions options = setup.mapper;
        options.layer = l;
        const auto eval_mapper = train_mapper(train_x, train_y, dense.size(), options).model;
        const auto acc = evaluate_topk(eval_mapper, test_x, test_y, setup.topk);
        summary.mapper_topk[l] = acc;
        LayerRow row{l, {}};
        for (double a : acc) row.values.emplace_back(a);
        topk_rows.push_back(std::move(row));
    }
    write("mapper_topk.csv", to_csv(layer_report(topk_columns, setup.layers, topk_rows)));

    if (setup.truth != nullptr) {
        std::vector<std::size_t> truth;
        truth.reserve(setup.concept_rows.size());
        for (std::size_t row : setup.concept_rows) truth.push_back(setup.truth->at(row));
        std::vector<LayerRow> purity_rows;
        for (std::size_t l : setup.layers) {
            const double p = best_match_purity(layers.at(l).concepts.assignment(), truth);
            summary.facet_purity[l] = p;
            purity_rows.push_back({l, {p}});
        }
        write("facet_purity.csv", to_csv(layer_report({"best_match_purity"}, setup.layers, purity_rows)));
    }
    return summary;
}

json to_json(const Explanation& e) {
    json salient = json::array();
    for (const auto& s : e.salient_tokens) {
        salient.push_back({{"index", s.index},
                           {"token", s.token},
                           {"attribution", s.attribution},
                           {"concept_id", s.concept_id ? json(*s.concept_id) : json(nullptr)},
                           {"concept_probability", s.concept_probability}});
    }
    return {{"sentence_id", e.sentence_id},
            {"position", e.position ? json(*e.position) : json(nullptr)},
            {"sentence", e.sentence},
            {"prediction", e.prediction},
            {"true_label", e.true_label ? json(*e.true_label) : json(nullptr)},
            {"layer", e.layer},
            {"salient_tokens", std::move(salient)},
            {"degenerate_attribution", e.degenerate_attribution},
            {"concept",
             {{"id", e.concept_id},
              {"label", e.concept_label.label},
              {"purity", e.concept_label.purity},
              {"dominant_class", e.concept_label.dominant_class},
              {"display", e.concept_display}}},
            {"prompt", e.prompt},
            {"llm_response", e.llm_response ? json(*e.llm_response) : json(nullptr)}};
}

std::vector<Explanation> explain_instance(const ExplainContext& context, const InstanceRef& instance,
                                          std::span<const std::size_t> layers) {
    const auto& bundle = context.instances;
    const auto rows = bundle.sentence_rows(instance.sentence_id);
    if (rows.empty()) {
        throw ValidationError("unknown instance: sentence " + std::to_string(instance.sentence_id));
    }
    for (std::size_t l : layers) {
        if (!context.layers.contains(l)) {
            throw ValidationError("no trained mapper for layer " + std::to_string(l));
        }
    }
    const auto tokens = records_of(bundle, rows);
    const auto task = context.scorer.task;
    const auto attr = attribute_instance(context.scorer, bundle, instance, context.options.steps,
                                         context.options.mass);

    std::vector<std::string> words;
    std::vector<std::size_t> word_index_of(tokens.size(), 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].is_classifier_token) continue;
        word_index_of[i] = words.size();
        words.push_back(tokens[i].token_text);
    }

    std::vector<Explanation> out;
    for (std::size_t layer : layers) {
        const auto& artifacts = context.layers.at(layer);
        Explanation e;
        e.sentence_id = instance.sentence_id;
        if (task != TaskKind::sequence_classification) e.position = instance.position;
        e.sentence = bundle.sentence_text(instance.sentence_id);
        e.prediction = context.scorer.scorer.class_labels().at(attr.prediction);
        e.true_label = gold_label(bundle, task, rows, instance.position);
        e.layer = layer;
        e.degenerate_attribution = attr.salient.degenerate;
        for (std::size_t idx : attr.salient.indices) {
            const auto top = predict_topk(artifacts.mapper, bundle.vector(layer, rows[idx]), 1);
            e.salient_tokens.push_back({idx, tokens[idx].token_text, attr.attribution.per_token[idx],
                                        top.front().first, top.front().second});
        }
        const std::size_t top_index = attr.salient.indices.front();
        e.concept_id = *e.salient_tokens.front().concept_id;
        if (e.concept_id >= artifacts.labels.size()) {
            throw ValidationError("mapper predicted concept " + std::to_string(e.concept_id) +
                                  " missing from the concept set");
        }
        e.concept_label = artifacts.labels[e.concept_id];
        const auto members = concept_members(artifacts.concepts, context.concept_bundle, e.concept_id);
        e.concept_display = sample_concept_display(members, context.train_sentences,
                                                   context.options.display_n, context.options.display_seed);

        PromptInput prompt;
        prompt.kind = task;
        prompt.sentence_tokens = words;
        if (task == TaskKind::sequence_classification) {
            prompt.concept_items = e.concept_display;
        } else {
            prompt.highlight = tokens[top_index].is_classifier_token
                                   ? std::optional<std::size_t>{}
                                   : std::optional<std::size_t>{word_index_of[top_index]};
            prompt.concept_items = concept_word_list(members, context.options.word_limit);
        }
        e.prompt = build_prompt(prompt);

        if (context.llm.transport != nullptr) {
            ExplanationRequest request{context.llm.endpoint_url, context.llm.model,
                                       context.llm.temperature, context.llm.top_p, e.prompt};
            e.llm_response = query_llm(*context.llm.transport, request, context.llm.retry, context.llm.api_key);
        }
        out.push_back(std::move(e));
    }
    return out;
}

PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    PipelineConfig c;
    c.source = j;
    auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };

    if (!j.contains("k") || j.at("k").is_null()) throw ValidationError("config: missing required field 'k'");
    c.k = field<std::size_t>(j, "k", 0);
    if (c.k == 0) throw ValidationError("config: 'k' must be >= 1");

    if (j.contains("task")) c.task = task_kind_from_string(field<std::string>(j, "task", ""));
    if (j.contains("synthetic")) {
        c.synthetic = synthetic_spec_from_json(j.at("synthetic"));
        if (j.contains("task") && c.synthetic->task != c.task) {
            throw ValidationError("config: 'task' disagrees with synthetic.task");
        }
        c.task = c.synthetic->task;
    }
    if (j.contains("bundle")) c.bundle = resolve(field<std::string>(j, "bundle", ""));
    if (j.contains("test_bundle")) c.test_bundle = resolve(field<std::string>(j, "test_bundle", ""));
    if (c.bundle.has_value() == c.synthetic.has_value()) {
        throw ValidationError("config: give exactly one of 'bundle' or 'synthetic'");
    }
    c.layers = field<std::vector<std::size_t>>(j, "layers", {});

    const json filter = j.value("filter", json::object());
    c.filter.min_freq = field<std::size_t>(filter, "min_freq", c.filter.min_freq);
    c.filter.max_occurrences = field<std::size_t>(filter, "max_occurrences", c.filter.max_occurrences);
    c.filter.seed = field<std::uint64_t>(filter, "seed", c.filter.seed);

    const json scorer = j.value("scorer", json::object());
    if (scorer.contains("path")) c.scorer_path = resolve(field<std::string>(scorer, "path", ""));
    if (scorer.contains("layer")) c.scorer_layer = field<std::size_t>(scorer, "layer", 0);
    c.scorer_training.hidden = field<std::size_t>(scorer, "hidden", c.scorer_training.hidden);
    c.scorer_training.epochs = field<std::size_t>(scorer, "epochs", c.scorer_training.epochs);
    c.scorer_training.batch_size = field<std::size_t>(scorer, "batch_size", c.scorer_training.batch_size);
    c.scorer_training.learning_rate = field<double>(scorer, "learning_rate", c.scorer_training.learning_rate);
    c.scorer_training.seed = field<std::uint64_t>(scorer, "seed", c.scorer_training.seed);

    const json mapper = j.value("mapper", json::object());
    if (mapper.contains("l2") && !mapper.at("l2").is_null()) c.mapper.l2 = field<double>(mapper, "l2", 0.0);
    c.mapper.max_iter = field<std::size_t>(mapper, "max_iter", c.mapper.max_iter);
    c.mapper.tol = field<double>(mapper, "tol", c.mapper.tol);

    const json attribution = j.value("attribution", json::object());
    c.ig_steps = field<std::size_t>(attribution, "steps", c.ig_steps);
    c.salient_mass = field<double>(attribution, "mass", c.salient_mass);
    if (c.ig_steps == 0) throw ValidationError("config: attribution.steps must be >= 1");
    if (!(c.salient_mass > 0.0 && c.salient_mass <= 1.0)) {
        throw ValidationError("config: attribution.mass must lie in (0, 1]");
    }

    const json evaluation = j.value("evaluation", json::object());
    c.purity_threshold = field<double>(evaluation, "threshold", c.purity_threshold);
    c.train_fraction = field<double>(evaluation, "train_fraction", c.train_fraction);
    c.split_seed = field<std::uint64_t>(evaluation, "split_seed", c.split_seed);
    c.topk = field<std::vector<std::size_t>>(evaluation, "topk", c.topk);

    const json explain = j.value("explain", json::object());
    if (explain.contains("instances")) {
        for (const auto& inst : explain.at("instances")) {
            c.explain_instances.push_back({field<std::uint32_t>(inst, "sentence_id", 0),
                                           field<std::size_t>(inst, "position", 0)});
        }
    }
    c.explain_count = field<std::size_t>(explain, "count", c.explain_count);
    c.explain_layers = field<std::vector<std::size_t>>(explain, "layers", {});
    c.explain.display_n = field<std::size_t>(explain, "display_n", c.explain.display_n);
    c.explain.display_seed = field<std::uint64_t>(explain, "display_seed", c.explain.display_seed);
    c.explain.word_limit = field<std::size_t>(explain, "word_limit", c.explain.word_limit);
    c.explain.steps = c.ig_steps;
    c.explain.mass = c.salient_mass;

    const json llm = j.value("llm", json::object());
    c.llm_mock = field<bool>(llm, "mock", c.llm_mock);
    c.llm_mock_response = field<std::string>(llm, "mock_response", c.llm_mock_response);
    c.llm_model = field<std::string>(llm, "model", c.llm_model);
    c.llm_temperature = field<double>(llm, "temperature", c.llm_temperature);
    c.llm_top_p = field<double>(llm, "top_p", c.llm_top_p);
    c.llm_retries = field<std::size_t>(llm, "retries", c.llm_retries);
    c.llm_backoff_ms = field<std::size_t>(llm, "backoff_ms", c.llm_backoff_ms);

    if (j.contains("output_dir")) c.output_dir = resolve(field<std::string>(j, "output_dir", ""));
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return parse_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

RunSummary run_pipeline(const PipelineConfig& config, const fs::path& output_dir, Transport* transport) {
    RunSummary summary;
    summary.output_dir = output_dir;
    std::vector<std::string> artifacts;
    auto write = [&](const std::string& rel, std::string_view bytes) {
        io::write_file(output_dir / rel, bytes);
        artifacts.push_back(rel);
    };

    // ingest
    struct Corpus {
        RepresentationBundle train;
        RepresentationBundle test;
        std::optional<std::vector<std::size_t>> truth;
    };
    auto corpus = run_stage("ingest", [&] {
        if (config.synthetic) {
            auto synth = generate_synthetic_corpus(*config.synthetic);
            save_bundle(synth.train, output_dir / "corpus/train");
            save_bundle(synth.test, output_dir / "corpus/test");
            artifacts.push_back("corpus/train");
            artifacts.push_back("corpus/test");
            return Corpus{std::move(synth.train), std::move(synth.test), std::move(synth.train_truth)};
        }
        auto train = load_bundle(*config.bundle);
        auto test = config.test_bundle ? load_bundle(*config.test_bundle) : train;
        return Corpus{std::move(train), std::move(test), std::nullopt};
    });
    const auto filtered_rows = select_vocabulary_rows(corpus.train, config.filter);
    const RepresentationBundle filtered = corpus.train.subset(filtered_rows);
    run_stage("ingest", [&] {
        if (filtered.num_records() == 0) throw ValidationError("no records survive vocabulary filtering");
        save_bundle(filtered, output_dir / "bundle");
        artifacts.push_back("bundle");
        return 0;
    });

    std::vector<std::size_t> layers = config.layers;
    if (layers.empty()) {
        for (std::size_t l = 0; l < filtered.num_layers(); ++l) layers.push_back(l);
    }
    for (std::size_t l : layers) {
        if (l >= filtered.num_layers()) {
            throw ValidationError("config: layer " + std::to_string(l) + " outside bundle (" +
                                  std::to_string(filtered.num_layers()) + " layers)");
        }
    }

    // scorer
    const ScorerFile scorer = run_stage("scorer", [&] {
        if (config.scorer_path) return load_scorer(*config.scorer_path);
        ScorerFile file;
        file.task = config.task;
        file.layer = config.scorer_layer.value_or(corpus.train.num_layers() - 1);
        auto trained = train_scorer_on_bundle(corpus.train, config.task, file.layer, config.scorer_training);
        file.scorer = std::move(trained.scorer);
        summary.scorer_train_accuracy = trained.train_accuracy;
        save_scorer(output_dir / "scorer.bin", file);
        artifacts.push_back("scorer.bin");
        return file;
    });
    if (scorer.task != config.task) {
        throw ValidationError("stage 'scorer': scorer task " + to_string(scorer.task) +
                              " does not match config task " + to_string(config.task));
    }

    // discover
    std::map<std::size_t, LayerArtifacts> per_layer;
    run_stage("discover", [&] {
        if (config.k > filtered.num_records()) {
            throw ValidationError("k=" + std::to_string(config.k) + " exceeds the " +
                                  std::to_string(filtered.num_records()) + " filtered records");
        }
        for (std::size_t l : layers) {
            auto result = cluster(filtered.layer(l), config.k);
            result.concepts.layer = l;
            write(layer_file("concepts", l, ".json"), io::dump_json(concept_set_to_json(result.concepts)));
            per_layer[l].concepts = std::move(result.concepts);
        }
        return 0;
    });

    // map-train
    run_stage("map-train", [&] {
        for (std::size_t l : layers) {
            auto& art = per_layer[l];
            MapperOptions options = config.mapper;
            options.layer = l;
            const Eigen::MatrixXd features = filtered.layer(l).cast<double>();
            art.mapper = train_mapper(features, art.concepts.assignment(), config.k, options).model;
            save_mapper(output_dir / layer_file("mappers", l, ".bin"), art.mapper);
            artifacts.push_back(layer_file("mappers", l, ".bin"));
        }
        return 0;
    });

    // evaluate
    run_stage("evaluate", [&] {
        const EvaluationSetup setup{.train = corpus.train,
                                    .concept_bundle = filtered,
                                    .concept_rows = filtered_rows,
                                    .scorer = scorer,
                                    .layers = layers,
                                    .ig_steps = config.ig_steps,
                                    .salient_mass = config.salient_mass,
                                    .purity_threshold = config.purity_threshold,
                                    .train_fraction = config.train_fraction,
                                    .split_seed = config.split_seed,
                                    .topk = config.topk,
                                    .mapper = config.mapper,
                                    .truth = corpus.truth ? &*corpus.truth : nullptr};
        auto report = write_evaluation_report(setup, per_layer, output_dir / "report");
        for (const auto& f : report.files) artifacts.push_back("report/" + f);
        summary.alignment = std::move(report.alignment);
        summary.mapper_topk = std::move(report.mapper_topk);
        summary.facet_purity = std::move(report.facet_purity);
        return 0;
    });

    // explain
    run_stage("explain", [&] {
        std::optional<MockTransport> mock;
        std::optional<HttpTransport> http;
        LlmOptions llm;
        llm.model = config.llm_model;
        llm.temperature = config.llm_temperature;
        llm.top_p = config.llm_top_p;
        llm.retry.max_retries = config.llm_retries;
        llm.retry.initial_backoff = std::chrono::milliseconds(config.llm_backoff_ms);
        const auto env = llm_environment_from_env();
        llm.endpoint_url = chat_completions_url(env.base_url);
        if (transport != nullptr) {
            llm.transport = transport;
        } else if (config.llm_mock) {
            mock.emplace([body = chat_completion_response(config.llm_mock_response)](const HttpRequest&) {
                return HttpResponse{200, body};
            });
            llm.transport = &*mock;
        } else {
            http.emplace();
            llm.transport = &*http;
            llm.api_key = env.api_key;
        }

        std::vector<InstanceRef> instances = config.explain_instances;
        if (instances.empty()) {
            const auto ids = corpus.test.sentence_ids();
            for (std::size_t i = 0; i < ids.size() && i < config.explain_count; ++i) {
                std::size_t position = 0;
                if (config.task != TaskKind::sequence_classification) {
                    const auto rows = corpus.test.sentence_rows(ids[i]);
                    while (position < rows.size() && corpus.test.record(rows[position]).is_classifier_token) ++position;
                }
                instances.push_back({ids[i], position});
            }
        }
        const std::vector<std::size_t> explain_layers = config.explain_layers.empty() ? layers : config.explain_layers;
        ExplainContext context{corpus.train, filtered, corpus.test, scorer, per_layer, config.explain, llm};
        json all = json::array();
        for (const auto& inst : instances) {
            for (const auto& e : explain_instance(context, inst, explain_layers)) {
                all.push_back(to_json(e));
                ++summary.explanations;
            }
        }
        write("explanations.json", io::dump_json(all));
        return 0;
    });

    json seeds = {{"filter", config.filter.seed},
                  {"scorer", config.scorer_training.seed},
                  {"split", config.split_seed},
                  {"display", config.explain.display_seed}};
    if (config.synthetic) seeds["synthetic"] = config.synthetic->seed;
    json manifest = {
        {"tool", "lacoat"},
        {"version", kVersion},
        {"task", to_string(config.task)},
        {"k", config.k},
        {"layers", layers},
        {"seeds", seeds},
        {"thresholds",
         {{"purity", config.purity_threshold},
          {"salient_mass", config.salient_mass},
          {"train_fraction", config.train_fraction}}},
        {"ig_steps", config.ig_steps},
        {"filter", {{"min_freq", config.filter.min_freq}, {"max_occurrences", config.filter.max_occurrences}}},
        {"mapper",
         {{"l2", config.mapper.l2 ? json(*config.mapper.l2) : json("1/N_train")},
          {"max_iter", config.mapper.max_iter},
          {"tol", config.mapper.tol}}},
        {"records", {{"train", corpus.train.num_records()}, {"filtered", filtered.num_records()}, {"test", corpus.test.num_records()}}},
        {"scorer", {{"layer", scorer.layer}, {"train_accuracy", summary.scorer_train_accuracy}}},
        {"llm", {{"mock", transport == nullptr && config.llm_mock}, {"model", config.llm_model},
                 {"temperature", config.llm_temperature}, {"top_p", config.llm_top_p}}},
        {"stages", {"ingest", "scorer", "discover", "map-train", "evaluate", "explain"}},
        {"artifacts", artifacts},
        {"config", config.source}};
    io::write_file(output_dir / "manifest.json", io::dump_json(manifest));
    return summary;
}

}  // namespace lacoat
