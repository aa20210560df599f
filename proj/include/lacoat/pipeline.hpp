#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacoat/attribution.hpp"
#include "lacoat/concept_discoverer.hpp"
#include "lacoat/concept_mapper.hpp"
#include "lacoat/evaluation.hpp"
#include "lacoat/llm_client.hpp"
#include "lacoat/reference_scorer.hpp"
#include "lacoat/repr_store.hpp"
#include "lacoat/synthetic.hpp"

namespace lacoat {

inline constexpr const char* kVersion = "0.1.0";

AnnotationMode annotation_mode_for(TaskKind task);

/// Scorer inputs for one sentence: its token vectors at the scorer layer, in position order.
Eigen::MatrixXd sentence_inputs(const RepresentationBundle& bundle, std::span<const std::size_t> rows,
                                std::size_t layer);

/// Gold class label of an instance (sentence label for classification, token label otherwise).
std::optional<std::string> gold_label(const RepresentationBundle& bundle, TaskKind task,
                                      std::span<const std::size_t> rows, std::size_t position);

/// Trains the reference scorer on a bundle's `layer`: mean-pooled sentences against sentence
/// labels for classification, single tokens against token labels otherwise.
TrainedScorer train_scorer_on_bundle(const RepresentationBundle& bundle, TaskKind task,
                                     std::size_t layer, const ScorerTrainingOptions& options);

struct InstanceRef {
    std::uint32_t sentence_id = 0;
    std::size_t position = 0;  ///< token index inside the sentence (labeling/masked)
};

/// Most salient token found by integrated gradients, and the scorer's prediction.
struct InstanceAttribution {
    std::size_t prediction = 0;
    AttributionVector attribution;
    SalientSelection salient;
};

InstanceAttribution attribute_instance(const ScorerFile& scorer, const RepresentationBundle& bundle,
                                       const InstanceRef& instance, std::size_t steps, double mass);

/// Every training instance's prediction and its salient record under the saliency and
/// position methods, as rows of `concept_bundle` (nullopt when the record was filtered out).
struct TrainingSalience {
    std::string predicted_class;
    std::optional<std::size_t> saliency_row;
    std::optional<std::size_t> position_row;
};

std::vector<TrainingSalience> training_salience(const ScorerFile& scorer,
                                                const RepresentationBundle& train,
                                                const RepresentationBundle& concept_bundle,
                                                std::size_t steps, double mass);

/// Alignment accuracy at one layer for each method; nullopt when no instance was evaluable.
struct AlignmentScores {
    std::optional<double> saliency;
    std::optional<double> position;
};

AlignmentScores layer_alignment(std::span<const TrainingSalience> salience,
                                const ConceptSet& concepts, std::span<const ConceptLabel> labels);

struct LayerArtifacts {
    ConceptSet concepts;
    MapperModel mapper;
    std::vector<ConceptLabel> labels;
};

struct EvaluationSetup {
    const RepresentationBundle& train;           ///< unfiltered training bundle
    const RepresentationBundle& concept_bundle;  ///< filtered bundle the concepts index
    std::span<const std::size_t> concept_rows;   ///< train row of every concept_bundle row
    const ScorerFile& scorer;
    std::span<const std::size_t> layers;
    std::size_t ig_steps = 500;
    double salient_mass = 0.5;
    double purity_threshold = 0.9;
    double train_fraction = 0.9;
    std::uint64_t split_seed = 0;
    std::vector<std::size_t> topk = {1, 2, 5};
    MapperOptions mapper;
    const std::vector<std::size_t>* truth = nullptr;  ///< ground-truth group per train row
};

struct EvaluationSummary {
    std::map<std::size_t, AlignmentScores> alignment;
    std::map<std::size_t, std::vector<double>> mapper_topk;
    std::map<std::size_t, double> facet_purity;
    std::vector<std::string> files;  ///< written paths relative to the report directory
};

/// Annotates every layer's concepts (filling LayerArtifacts::labels) and writes annotation.json,
/// census.csv, alignment_by_layer.csv, mapper_topk.csv and, with ground truth, facet_purity.csv.
EvaluationSummary write_evaluation_report(const EvaluationSetup& setup,
                                          std::map<std::size_t, LayerArtifacts>& layers,
                                          const std::filesystem::path& report_dir);

struct SalientToken {
    std::size_t index = 0;
    std::string token;
    double attribution = 0.0;
    std::optional<std::size_t> concept_id;
    double concept_probability = 0.0;
};

struct Explanation {
    std::uint32_t sentence_id = 0;
    std::optional<std::size_t> position;
    std::string sentence;
    std::string prediction;
    std::optional<std::string> true_label;
    std::size_t layer = 0;
    std::vector<SalientToken> salient_tokens;
    bool degenerate_attribution = false;
    std::size_t concept_id = 0;
    ConceptLabel concept_label;
    std::vector<std::string> concept_display;
    std::string prompt;
    std::optional<std::string> llm_response;
};

nlohmann::json to_json(const Explanation& e);

struct ExplainOptions {
    std::size_t steps = 500;
    double mass = 0.5;
    std::size_t display_n = 5;
    std::uint64_t display_seed = 0;
    std::size_t word_limit = 40;
};

struct LlmOptions {
    Transport* transport = nullptr;  ///< no LLM call when null
    std::string endpoint_url;
    std::string model = "gpt-3.5-turbo";
    double temperature = 0.0;
    double top_p = 0.95;
    RetryPolicy retry;
    std::optional<std::string> api_key;
};

struct ExplainContext {
    const RepresentationBundle& train_sentences;  ///< unfiltered training bundle (display text)
    const RepresentationBundle& concept_bundle;   ///< filtered bundle the concepts index
    const RepresentationBundle& instances;        ///< bundle holding the sentences to explain
    const ScorerFile& scorer;
    const std::map<std::size_t, LayerArtifacts>& layers;
    ExplainOptions options;
    LlmOptions llm;
};

/// One explanation per requested layer: attribute, pick salient tokens, map each to a concept,
/// and render the prompt from the most salient token's concept.
std::vector<Explanation> explain_instance(const ExplainContext& context, const InstanceRef& instance,
                                          std::span<const std::size_t> layers);

struct PipelineConfig {
    std::optional<std::filesystem::path> bundle;
    std::optional<std::filesystem::path> test_bundle;
    std::optional<SyntheticCorpusSpec> synthetic;
    TaskKind task = TaskKind::sequence_labeling;
    std::size_t k = 0;
    std::vector<std::size_t> layers;  ///< empty = every bundle layer
    FilterOptions filter;
    std::optional<std::filesystem::path> scorer_path;
    std::optional<std::size_t> scorer_layer;  ///< default: last layer
    ScorerTrainingOptions scorer_training;
    MapperOptions mapper;
    std::size_t ig_steps = 500;
    double salient_mass = 0.5;
    double purity_threshold = 0.9;
    double train_fraction = 0.9;
    std::uint64_t split_seed = 0;
    std::vector<std::size_t> topk = {1, 2, 5};
    std::vector<InstanceRef> explain_instances;
    std::size_t explain_count = 3;  ///< used when explain_instances is empty
    std::vector<std::size_t> explain_layers;  ///< empty = all layers
    ExplainOptions explain;
    bool llm_mock = true;
    std::string llm_mock_response = "Mock explanation.";
    std::string llm_model = "gpt-3.5-turbo";
    double llm_temperature = 0.0;
    double llm_top_p = 0.95;
    std::size_t llm_retries = 2;
    std::size_t llm_backoff_ms = 500;
    std::optional<std::filesystem::path> output_dir;
    nlohmann::json source;  ///< the config as written
};

/// Relative paths resolve against `base_dir`. Throws ValidationError on missing/invalid fields.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

struct RunSummary {
    std::filesystem::path output_dir;
    std::map<std::size_t, AlignmentScores> alignment;
    std::map<std::size_t, std::vector<double>> mapper_topk;
    std::map<std::size_t, double> facet_purity;
    std::size_t explanations = 0;
    double scorer_train_accuracy = 0.0;
};

/// ingest -> discover -> map-train -> evaluate -> explain, writing every artifact under
/// `output_dir`. A non-null `transport` replaces the configured LLM transport.
RunSummary run_pipeline(const PipelineConfig& config, const std::filesystem::path& output_dir,
                        Transport* transport = nullptr);

}  // namespace lacoat
