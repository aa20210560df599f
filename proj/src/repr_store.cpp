#include "lacoat/repr_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <json.hpp>

#include "lacoat/binary_io.hpp"

namespace lacoat {

namespace {

using nlohmann::json;

std::uint64_t key_of(std::uint32_t sentence_id, std::uint32_t position) {
    return (static_cast<std::uint64_t>(sentence_id) << 32) | position;
}

std::string describe(const TokenRecord& r, std::size_t row) {
    return "record " + std::to_string(row) + " (sentence " + std::to_string(r.sentence_id) +
           ", position " + std::to_string(r.position) + ", '" + r.token_text + "')";
}

json record_to_json(const TokenRecord& r) {
    json j = {{"token_text", r.token_text},
              {"sentence_id", r.sentence_id},
              {"position", r.position},
              {"is_classifier_token", r.is_classifier_token}};
    if (r.sentence_class_label) j["sentence_class_label"] = *r.sentence_class_label;
    if (r.token_class_label) j["token_class_label"] = *r.token_class_label;
    return j;
}

TokenRecord record_from_json(const json& j, std::size_t row) {
    try {
        TokenRecord r;
        r.token_text = j.at("token_text").get<std::string>();
        r.sentence_id = j.at("sentence_id").get<std::uint32_t>();
        r.position = j.at("position").get<std::uint32_t>();
        r.is_classifier_token = j.value("is_classifier_token", false);
        if (auto it = j.find("sentence_class_label"); it != j.end() && !it->is_null()) {
            r.sentence_class_label = it->get<std::string>();
        }
        if (auto it = j.find("token_class_label"); it != j.end() && !it->is_null()) {
            r.token_class_label = it->get<std::string>();
        }
        return r;
    } catch (const json::exception& e) {
        throw LoadError("manifest record " + std::to_string(row) + ": " + e.what());
    }
}

}  // namespace

RepresentationBundle::RepresentationBundle(std::vector<TokenRecord> records,
                                           std::vector<LayerMatrix> layers)
    : records_(std::move(records)), layers_(std::move(layers)) {
    if (layers_.empty()) {
        throw LoadError("bundle needs at least one layer");
    }
    dim_ = static_cast<std::size_t>(layers_.front().cols());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& m = layers_[l];
        if (static_cast<std::size_t>(m.rows()) != records_.size() ||
            static_cast<std::size_t>(m.cols()) != dim_) {
            throw LoadError("layer " + std::to_string(l) + ": shape " + std::to_string(m.rows()) +
                            "x" + std::to_string(m.cols()) + " does not match " +
                            std::to_string(records_.size()) + "x" + std::to_string(dim_));
        }
        for (Eigen::Index row = 0; row < m.rows(); ++row) {
            if (!m.row(row).allFinite()) {
                throw LoadError("layer " + std::to_string(l) + ": non-finite value in " +
                                describe(records_[row], row));
            }
        }
    }
    key_index_.reserve(records_.size());
    for (std::size_t row = 0; row < records_.size(); ++row) {
        const auto& r = records_[row];
        if (r.is_classifier_token) {
            if (r.position != 0) {
                throw LoadError(describe(r, row) + ": classifier token must sit at position 0");
            }
            if (r.token_class_label) {
                throw LoadError(describe(r, row) + ": classifier token cannot carry a token label");
            }
        }
        if (!key_index_.emplace(key_of(r.sentence_id, r.position), row).second) {
            throw LoadError(describe(r, row) + ": duplicate (sentence_id, position)");
        }
        sentences_[r.sentence_id].push_back(row);
    }
    for (auto& [sid, rows] : sentences_) {
        std::sort(rows.begin(), rows.end(), [this](std::size_t a, std::size_t b) {
            return records_[a].position < records_[b].position;
        });
    }
}

const LayerMatrix& RepresentationBundle::layer(std::size_t index) const {
    if (index >= layers_.size()) {
        throw ValidationError("layer " + std::to_string(index) + " out of range (bundle has " +
                              std::to_string(layers_.size()) + ")");
    }
    return layers_[index];
}

Eigen::VectorXd RepresentationBundle::vector(std::size_t layer_index, std::size_t row) const {
    return layer(layer_index).row(static_cast<Eigen::Index>(row)).transpose().cast<double>();
}

std::optional<std::size_t> RepresentationBundle::find(std::uint32_t sentence_id,
                                                      std::uint32_t position) const {
    auto it = key_index_.find(key_of(sentence_id, position));
    if (it == key_index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::size_t> RepresentationBundle::sentence_rows(std::uint32_t sentence_id) const {
    auto it = sentences_.find(sentence_id);
    return it == sentences_.end() ? std::vector<std::size_t>{} : it->second;
}

std::vector<std::uint32_t> RepresentationBundle::sentence_ids() const {
    std::vector<std::uint32_t> ids;
    ids.reserve(sentences_.size());
    for (const auto& [sid, rows] : sentences_) ids.push_back(sid);
    return ids;
}

std::string RepresentationBundle::sentence_text(std::uint32_t sentence_id) const {
    std::string text;
    for (std::size_t row : sentence_rows(sentence_id)) {
        if (records_[row].is_classifier_token) continue;
        if (!text.empty()) text += ' ';
        text += records_[row].token_text;
    }
    return text;
}

RepresentationBundle RepresentationBundle::subset(std::span<const std::size_t> rows) const {
    std::vector<TokenRecord> records;
    records.reserve(rows.size());
    for (std::size_t row : rows) records.push_back(records_.at(row));
    std::vector<LayerMatrix> layers;
    layers.reserve(layers_.size());
    for (const auto& m : layers_) {
        LayerMatrix sub(static_cast<Eigen::Index>(rows.size()), m.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            sub.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
        }
        layers.push_back(std::move(sub));
    }
    return RepresentationBundle(std::move(records), std::move(layers));
}

bool RepresentationBundle::operator==(const RepresentationBundle& other) const {
    if (records_ != other.records_ || layers_.size() != other.layers_.size() ||
        dim_ != other.dim_) {
        return false;
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (layers_[l].size() != other.layers_[l].size()) return false;
        // Bitwise comparison so that round trips are checked exactly.
        if (std::memcmp(layers_[l].data(), other.layers_[l].data(),
                        static_cast<std::size_t>(layers_[l].size()) * sizeof(float)) != 0) {
            return false;
        }
    }
    return true;
}

RepresentationBundle load_bundle(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    json manifest;
    try {
        manifest = json::parse(io::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw LoadError(manifest_path.string() + ": " + e.what());
    }

    std::size_t num_layers = 0;
    std::size_t dim = 0;
    try {
        num_layers = manifest.at("layers").get<std::size_t>();
        dim = manifest.at("dim").get<std::size_t>();
    } catch (const json::exception& e) {
        throw LoadError(manifest_path.string() + ": " + e.what());
    }
    if (num_layers == 0) {
        throw LoadError(manifest_path.string() + ": layer count must be >= 1");
    }

    std::vector<TokenRecord> records;
    const auto& jrecords = manifest.contains("records") ? manifest["records"] : json::array();
    records.reserve(jrecords.size());
    for (std::size_t i = 0; i < jrecords.size(); ++i) {
        records.push_back(record_from_json(jrecords[i], i));
    }

    const std::size_t expected_bytes = records.size() * dim * 4;
    std::vector<LayerMatrix> layers;
    layers.reserve(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l) {
        const auto path = dir / ("layer_" + std::to_string(l) + ".f32");
        if (!std::filesystem::exists(path)) {
            throw LoadError("layer " + std::to_string(l) + ": missing file " + path.string());
        }
        const std::string bytes = io::read_file(path);
        if (bytes.size() != expected_bytes) {
            throw LoadError("layer " + std::to_string(l) + ": shape mismatch, " + path.string() +
                            " has " + std::to_string(bytes.size()) + " bytes, expected " +
                            std::to_string(expected_bytes));
        }
        const auto values = io::parse_f32_le(bytes);
        LayerMatrix m(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(dim));
        std::copy(values.begin(), values.end(), m.data());
        layers.push_back(std::move(m));
    }
    return RepresentationBundle(std::move(records), std::move(layers));
}

void save_bundle(const RepresentationBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest = {{"format", "lacoat-bundle"},
                     {"version", 1},
                     {"layers", bundle.num_layers()},
                     {"dim", bundle.dim()}};
    json records = json::array();
    for (const auto& r : bundle.records()) records.push_back(record_to_json(r));
    manifest["records"] = std::move(records);
    io::write_file(dir / "manifest.json", io::dump_json(manifest));

    for (std::size_t l = 0; l < bundle.num_layers(); ++l) {
        const auto& m = bundle.layer(l);
        std::string bytes;
        io::append_f32_le(bytes, std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
        io::write_file(dir / ("layer_" + std::to_string(l) + ".f32"), bytes);
    }
}

void validate_alignment(const SubwordAlignment& alignment, std::size_t num_subwords) {
    std::vector<bool> seen(num_subwords, false);
    std::size_t covered = 0;
    for (std::size_t w = 0; w < alignment.word_to_subwords.size(); ++w) {
        const auto& rows = alignment.word_to_subwords[w];
        if (rows.empty()) {
            throw ValidationError("word " + std::to_string(w) + " has no subwords");
        }
        for (std::size_t row : rows) {
            if (row >= num_subwords) {
                throw ValidationError("word " + std::to_string(w) + " references subword row " +
                                      std::to_string(row) + " out of range");
            }
            if (seen[row]) {
                throw ValidationError("subword row " + std::to_string(row) +
                                      " is aligned to more than one word");
            }
            seen[row] = true;
            ++covered;
        }
    }
    if (covered != num_subwords) {
        throw ValidationError("alignment covers " + std::to_string(covered) + " of " +
                              std::to_string(num_subwords) + " subword rows");
    }
}

LayerMatrix average_subwords(const LayerMatrix& subword_vectors, const SubwordAlignment& alignment) {
    validate_alignment(alignment, static_cast<std::size_t>(subword_vectors.rows()));
    const auto& words = alignment.word_to_subwords;
    LayerMatrix out(static_cast<Eigen::Index>(words.size()), subword_vectors.cols());
    for (std::size_t w = 0; w < words.size(); ++w) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(subword_vectors.cols());
        for (std::size_t row : words[w]) {
            sum += subword_vectors.row(static_cast<Eigen::Index>(row)).transpose().cast<double>();
        }
        out.row(static_cast<Eigen::Index>(w)) =
            (sum / static_cast<double>(words[w].size())).transpose().cast<float>();
    }
    return out;
}

std::vector<double> average_subwords(std::span<const double> subword_values,
                                     const SubwordAlignment& alignment) {
    validate_alignment(alignment, subword_values.size());
    std::vector<double> out;
    out.reserve(alignment.word_to_subwords.size());
    for (const auto& rows : alignment.word_to_subwords) {
        double sum = 0.0;
        for (std::size_t row : rows) sum += subword_values[row];
        out.push_back(sum / static_cast<double>(rows.size()));
    }
    return out;
}

std::vector<std::size_t> select_vocabulary_rows(const RepresentationBundle& bundle,
                                                const FilterOptions& options) {
    // Ordered map so the seeded generator visits word forms in a fixed order.
    std::map<std::string, std::vector<std::size_t>> occurrences;
    std::vector<std::size_t> kept;
    for (std::size_t row = 0; row < bundle.num_records(); ++row) {
        const auto& r = bundle.record(row);
        if (r.is_classifier_token) {
            kept.push_back(row);
        } else {
            occurrences[r.token_text].push_back(row);
        }
    }
    std::mt19937_64 rng(options.seed);
    for (auto& [form, rows] : occurrences) {
        if (rows.size() < options.min_freq) continue;
        if (rows.size() > options.max_occurrences) {
            std::shuffle(rows.begin(), rows.end(), rng);
            rows.resize(options.max_occurrences);
        }
        kept.insert(kept.end(), rows.begin(), rows.end());
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

RepresentationBundle filter_vocabulary(const RepresentationBundle& bundle,
                                       const FilterOptions& options) {
    const auto rows = select_vocabulary_rows(bundle, options);
    return bundle.subset(rows);
}

}  // namespace lacoat
