#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacoat/reference_scorer.hpp"
#include "lacoat/repr_store.hpp"

namespace lacoat {

/// Desk-scale stand-in for a fine-tuned encoder's activations.
///
/// Every word belongs to one facet. At the first layer a token vector is dominated by its word's
/// identity vector, so clusters there group unrelated words; towards the last layer the facet
/// center takes over and the noise shrinks, so the last layer separates facets cleanly. Facet
/// centers (and class centers for classification) are rescaled so the closest pair sits exactly
/// `separation` noise standard deviations apart.
struct SyntheticCorpusSpec {
    std::size_t num_facets = 10;
    std::size_t words_per_facet = 20;
    std::size_t contexts_per_word = 20;
    std::size_t dim = 16;
    std::size_t layers = 3;
    double separation = 10.0;
    std::uint64_t seed = 7;
    TaskKind task = TaskKind::sequence_labeling;
    std::size_t tokens_per_sentence = 8;
    std::size_t num_classes = 2;  ///< classification only
    std::size_t test_sentences = 20;
};

struct SyntheticCorpus {
    RepresentationBundle train;
    RepresentationBundle test;
    /// Ground-truth group of each train/test row: the facet id for words, and
    /// num_facets + class id for classifier tokens.
    std::vector<std::size_t> train_truth;
    std::vector<std::size_t> test_truth;
    std::vector<std::string> group_names;
};

void validate(const SyntheticCorpusSpec& spec);
SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

nlohmann::json to_json(const SyntheticCorpusSpec& spec);
SyntheticCorpusSpec synthetic_spec_from_json(const nlohmann::json& j);

/// Class names used for generated sentences: Negative/Positive for two classes.
std::vector<std::string> synthetic_class_names(std::size_t num_classes);

}  // namespace lacoat
