#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lacoat/concept_discoverer.hpp"
#include "lacoat/repr_store.hpp"

namespace lacoat {

inline constexpr std::string_view kMixedLabel = "Mixed";

enum class AnnotationMode { token_label, sentence_label };

struct ConceptLabel {
    std::size_t concept_id = 0;
    std::string label;  ///< dominant class when purity > threshold, otherwise "Mixed"
    double purity = 0.0;
    std::string dominant_class;

    bool is_mixed() const { return label == kMixedLabel; }
    bool operator==(const ConceptLabel&) const = default;
};

/// Labels each concept with its dominant class when strictly more than `threshold` of its
/// members carry that class. Token mode reads token_class_label; sentence mode reads the
/// containing sentence's label for words and classifier tokens alike. Dominant-class ties go to
/// the lexicographically smaller class.
std::vector<ConceptLabel> annotate_concepts(const ConceptSet& concepts,
                                            std::span<const TokenRecord> records,
                                            AnnotationMode mode, double threshold = 0.9);

struct SalientAssignment {
    std::size_t record = 0;
    std::string predicted_class;
    std::size_t concept_id = 0;
};

/// Fraction of assignments whose concept label equals the predicted class. Mixed never matches.
double alignment_accuracy(std::span<const SalientAssignment> assignments,
                          std::span<const ConceptLabel> concept_labels);

/// Concept count per class, then "Mixed" last. Classes listed in `classes` appear even at zero.
std::vector<std::pair<std::string, std::size_t>> polarity_census(
    std::span<const ConceptLabel> concept_labels, std::vector<std::string> classes = {});

/// Sum over clusters of the largest overlap with any reference class, divided by n.
double best_match_purity(std::span<const std::size_t> cluster_of, std::span<const std::size_t> class_of);

struct LayerRow {
    std::size_t layer = 0;
    std::vector<std::optional<double>> values;  ///< one per column; nullopt is written as null

    bool operator==(const LayerRow&) const = default;
};

struct LayerTable {
    std::vector<std::string> columns;
    std::vector<LayerRow> rows;

    bool operator==(const LayerTable&) const = default;
};

/// One row per requested layer; layers missing from `metrics` get an all-null row.
LayerTable layer_report(std::vector<std::string> columns, std::span<const std::size_t> layers,
                        std::span<const LayerRow> metrics);

std::string to_csv(const LayerTable& table);
LayerTable parse_csv(std::string_view text);
nlohmann::json to_json(const LayerTable& table);

nlohmann::json annotation_to_json(std::size_t layer, std::span<const ConceptLabel> labels);

}  // namespace lacoat
