#include "lacoat/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "lacoat/errors.hpp"

namespace lacoat {

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        fields.emplace_back(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return fields;
}

}  // namespace

std::vector<ConceptLabel> annotate_concepts(const ConceptSet& concepts,
                                            std::span<const TokenRecord> records,
                                            AnnotationMode mode, double threshold) {
    if (concepts.num_records != records.size()) {
        throw ValidationError("concept set covers " + std::to_string(concepts.num_records) +
                              " records, got " + std::to_string(records.size()));
    }
    std::vector<ConceptLabel> labels;
    labels.reserve(concepts.concepts.size());
    for (std::size_t c = 0; c < concepts.concepts.size(); ++c) {
        std::map<std::string, std::size_t> counts;
        for (std::size_t row : concepts.concepts[c]) {
            const auto& r = records[row];
            const auto& label =
                mode == AnnotationMode::token_label ? r.token_class_label : r.sentence_class_label;
            if (!label) {
                throw ValidationError(std::string("record ") + std::to_string(row) + " ('" +
                                      r.token_text + "') has no " +
                                      (mode == AnnotationMode::token_label ? "token" : "sentence") +
                                      " label");
            }
            ++counts[*label];
        }
        ConceptLabel out;
        out.concept_id = c;
        std::size_t best = 0;
        for (const auto& [cls, n] : counts) {
            if (n > best) {  // map order makes ties go to the smaller class name
                best = n;
                out.dominant_class = cls;
            }
        }
        const auto size = concepts.concepts[c].size();
        out.purity = size == 0 ? 0.0 : static_cast<double>(best) / static_cast<double>(size);
        out.label = out.purity > threshold ? out.dominant_class : std::string(kMixedLabel);
        labels.push_back(std::move(out));
    }
    return labels;
}

double alignment_accuracy(std::span<const SalientAssignment> assignments,
                          std::span<const ConceptLabel> concept_labels) {
    if (assignments.empty()) throw ValidationError("no salient assignments to score");
    std::size_t matched = 0;
    for (const auto& a : assignments) {
        if (a.concept_id >= concept_labels.size()) {
            throw ValidationError("unknown concept id " + std::to_string(a.concept_id));
        }
        const auto& label = concept_labels[a.concept_id];
        if (!label.is_mixed() && label.label == a.predicted_class) ++matched;
    }
    return static_cast<double>(matched) / static_cast<double>(assignments.size());
}

std::vector<std::pair<std::string, std::size_t>> polarity_census(
    std::span<const ConceptLabel> concept_labels, std::vector<std::string> classes) {
    std::map<std::string, std::size_t> counts;
    for (auto& cls : classes) {
        if (cls != kMixedLabel) counts.emplace(std::move(cls), 0);
    }
    std::size_t mixed = 0;
    for (const auto& label : concept_labels) {
        if (label.is_mixed()) {
            ++mixed;
        } else {
            ++counts[label.label];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> out(counts.begin(), counts.end());
    out.emplace_back(std::string(kMixedLabel), mixed);
    return out;
}

double best_match_purity(std::span<const std::size_t> cluster_of, std::span<const std::size_t> class_of) {
    if (cluster_of.size() != class_of.size()) {
        throw ValidationError("partition sizes differ");
    }
    if (cluster_of.empty()) throw ValidationError("cannot score an empty partition");
    std::map<std::size_t, std::map<std::size_t, std::size_t>> overlap;
    for (std::size_t i = 0; i < cluster_of.size(); ++i) ++overlap[cluster_of[i]][class_of[i]];
    std::size_t total = 0;
    for (const auto& [cluster, by_class] : overlap) {
        std::size_t best = 0;
        for (const auto& [cls, n] : by_class) best = std::max(best, n);
        total += best;
    }
    return static_cast<double>(total) / static_cast<double>(cluster_of.size());
}

LayerTable layer_report(std::vector<std::string> columns, std::span<const std::size_t> layers,
                        std::span<const LayerRow> metrics) {
    LayerTable table;
    table.columns = std::move(columns);
    for (std::size_t layer : layers) {
        auto it = std::find_if(metrics.begin(), metrics.end(),
                               [&](const LayerRow& r) { return r.layer == layer; });
        LayerRow row;
        row.layer = layer;
        row.values.assign(table.columns.size(), std::nullopt);
        if (it != metrics.end()) {
            for (std::size_t c = 0; c < table.columns.size() && c < it->values.size(); ++c) {
                row.values[c] = it->values[c];
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string to_csv(const LayerTable& table) {
    std::string out = "layer";
    for (const auto& c : table.columns) out += "," + c;
    out += "\n";
    for (const auto& row : table.rows) {
        out += std::to_string(row.layer);
        for (const auto& v : row.values) out += "," + (v ? format_double(*v) : std::string("null"));
        out += "\n";
    }
    return out;
}

LayerTable parse_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty CSV");
    auto header = split(line, ',');
    if (header.empty() || header[0] != "layer") throw ValidationError("CSV must start with a layer column");
    LayerTable table;
    table.columns.assign(header.begin() + 1, header.end());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != header.size()) {
            throw ValidationError("CSV row has " + std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(header.size()));
        }
        LayerRow row;
        row.layer = std::stoul(fields[0]);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            if (fields[i] == "null") {
                row.values.emplace_back(std::nullopt);
            } else {
                row.values.emplace_back(std::stod(fields[i]));
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

nlohmann::json to_json(const LayerTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : table.rows) {
        nlohmann::json r = {{"layer", row.layer}};
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            r[table.columns[c]] = row.values[c] ? nlohmann::json(*row.values[c]) : nlohmann::json(nullptr);
        }
        rows.push_back(std::move(r));
    }
    return {{"columns", table.columns}, {"rows", std::move(rows)}};
}

nlohmann::json annotation_to_json(std::size_t layer, std::span<const ConceptLabel> labels) {
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& l : labels) {
        concepts.push_back({{"id", l.concept_id},
                            {"label", l.label},
                            {"purity", l.purity},
                            {"dominant_class", l.dominant_class}});
    }
    return {{"layer", layer}, {"concepts", std::move(concepts)}};
}

}  // namespace lacoat
