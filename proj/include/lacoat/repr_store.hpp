#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lacoat/errors.hpp"

namespace lacoat {

using LayerMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One token occurrence. Classifier tokens ([CLS]-role) sit at position 0 and carry no
/// token-level label.
struct TokenRecord {
    std::string token_text;
    std::uint32_t sentence_id = 0;
    std::uint32_t position = 0;
    bool is_classifier_token = false;
    std::optional<std::string> sentence_class_label;
    std::optional<std::string> token_class_label;

    bool operator==(const TokenRecord&) const = default;
};

/// Token records plus one (num_records x dim) float matrix per layer.
///
/// Construction validates every invariant (unique (sentence, position) keys, classifier-token
/// convention, matching shapes, finite values) and throws LoadError naming the offending
/// layer or record. Instances are immutable afterwards.
class RepresentationBundle {
public:
    RepresentationBundle(std::vector<TokenRecord> records, std::vector<LayerMatrix> layers);

    const std::vector<TokenRecord>& records() const noexcept { return records_; }
    const TokenRecord& record(std::size_t row) const { return records_.at(row); }
    std::size_t num_records() const noexcept { return records_.size(); }
    std::size_t num_layers() const noexcept { return layers_.size(); }
    std::size_t dim() const noexcept { return dim_; }

    const LayerMatrix& layer(std::size_t index) const;
    Eigen::VectorXd vector(std::size_t layer_index, std::size_t row) const;

    std::optional<std::size_t> find(std::uint32_t sentence_id, std::uint32_t position) const;
    /// Row indices of one sentence ordered by position; empty if the sentence is unknown.
    std::vector<std::size_t> sentence_rows(std::uint32_t sentence_id) const;
    std::vector<std::uint32_t> sentence_ids() const;
    /// Space-joined word tokens of a sentence (classifier token excluded).
    std::string sentence_text(std::uint32_t sentence_id) const;

    /// New bundle with the given rows, in the given order.
    RepresentationBundle subset(std::span<const std::size_t> rows) const;

    bool operator==(const RepresentationBundle& other) const;

private:
    std::vector<TokenRecord> records_;
    std::vector<LayerMatrix> layers_;
    std::size_t dim_ = 0;
    std::unordered_map<std::uint64_t, std::size_t> key_index_;
    std::map<std::uint32_t, std::vector<std::size_t>> sentences_;
};

RepresentationBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const RepresentationBundle& bundle, const std::filesystem::path& dir);

/// word index -> subword row indices. Lists must be non-empty, disjoint, and cover every row.
struct SubwordAlignment {
    std::vector<std::vector<std::size_t>> word_to_subwords;
};

void validate_alignment(const SubwordAlignment& alignment, std::size_t num_subwords);

/// One row per word: the arithmetic mean of that word's subword rows.
LayerMatrix average_subwords(const LayerMatrix& subword_vectors, const SubwordAlignment& alignment);
/// Per-word mean of per-subword scalars (used for subword attributions).
std::vector<double> average_subwords(std::span<const double> subword_values,
                                     const SubwordAlignment& alignment);

struct FilterOptions {
    std::size_t min_freq = 5;
    std::size_t max_occurrences = 20;
    std::uint64_t seed = 0;
};

/// Drops word forms seen fewer than min_freq times and downsamples frequent forms to
/// max_occurrences. Classifier tokens are always kept. Surviving rows keep their relative order.
std::vector<std::size_t> select_vocabulary_rows(const RepresentationBundle& bundle,
                                                const FilterOptions& options);
RepresentationBundle filter_vocabulary(const RepresentationBundle& bundle,
                                       const FilterOptions& options);

template <typename T>
struct TrainTestSplit {
    std::vector<T> train;
    std::vector<T> test;
};

/// Seeded partition into round(n * train_fraction) / remainder items. Both sides are kept
/// non-empty, and items keep their input order within each side.
template <typename T>
TrainTestSplit<T> split_train_test(const std::vector<T>& items, double train_fraction,
                                   std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValidationError("train_fraction must lie in (0, 1)");
    }
    if (items.size() < 2) {
        throw ValidationError("cannot split fewer than 2 items");
    }
    const std::size_t n = items.size();
    auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<bool> in_train(n, false);
    for (std::size_t i = 0; i < n_train; ++i) {
        in_train[order[i]] = true;
    }
    TrainTestSplit<T> split;
    split.train.reserve(n_train);
    split.test.reserve(n - n_train);
    for (std::size_t i = 0; i < n; ++i) {
        (in_train[i] ? split.train : split.test).push_back(items[i]);
    }
    return split;
}

}  // namespace lacoat
