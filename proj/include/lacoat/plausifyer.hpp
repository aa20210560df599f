#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lacoat/concept_discoverer.hpp"
#include "lacoat/reference_scorer.hpp"
#include "lacoat/repr_store.hpp"

namespace lacoat {

struct PromptTemplate {
    TaskKind kind;
    std::string text;  ///< slots: {sentence}, {sentences}, {words}
};

/// Sequence classification: main sentence plus concept sentences, one per line.
const PromptTemplate& classification_template();
/// Sequence labeling (and masked prediction): highlighted sentence plus a word list.
const PromptTemplate& labeling_template();
const PromptTemplate& template_for(TaskKind kind);

/// Substitutes every {slot} in one pass. Throws ValidationError when a slot in the template has no
/// value, so a rendered prompt never carries an unfilled slot.
std::string render_template(const PromptTemplate& tmpl,
                            const std::map<std::string, std::string>& slots);

/// Up to n members, chosen by a seeded shuffle when the concept is larger than n and shown in
/// member order. Classifier tokens render as their sentence (looked up in `sentences`), words as
/// the word itself.
std::vector<std::string> sample_concept_display(std::span<const ConceptMember> members,
                                                const RepresentationBundle& sentences,
                                                std::size_t n = 5, std::uint64_t seed = 0);

/// Distinct word forms of the non-classifier members, in member order, capped at `limit`.
std::vector<std::string> concept_word_list(std::span<const ConceptMember> members,
                                           std::size_t limit = 40);

struct PromptInput {
    TaskKind kind = TaskKind::sequence_classification;
    std::vector<std::string> sentence_tokens;   ///< words of the main sentence
    std::optional<std::size_t> highlight;       ///< word index wrapped in [[ ]] (labeling)
    std::vector<std::string> concept_items;     ///< display sentences or concept words
};

/// Renders the task's template. Prediction and gold label are never inputs.
std::string build_prompt(const PromptInput& input);

}  // namespace lacoat
