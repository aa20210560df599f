#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lacoat/repr_store.hpp"

namespace lacoat {

/// One agglomeration step. Ids < n are input points; the cluster produced by merge i gets
/// id n + i. cluster_a < cluster_b.
struct Merge {
    std::size_t cluster_a = 0;
    std::size_t cluster_b = 0;
    double cost = 0.0;  ///< increase in total within-cluster sum of squares
    std::size_t new_size = 0;
};

/// n - 1 merges, ordered so that every cluster is created before it is merged again.
struct Dendrogram {
    std::size_t num_points = 0;
    std::vector<Merge> merges;
};

/// K flat concepts. Concepts are ordered by their smallest member index and members are
/// ascending, so two partitions compare equal iff they are the same set partition.
struct ConceptSet {
    std::size_t layer = 0;
    std::size_t k = 0;
    std::size_t num_records = 0;
    std::vector<std::vector<std::size_t>> concepts;

    /// concept id for every record (size num_records).
    std::vector<std::size_t> assignment() const;
};

struct ClusterResult {
    Dendrogram dendrogram;
    ConceptSet concepts;
};

/// Ward cost of merging two clusters: n_a n_b / (n_a + n_b) * |mu_a - mu_b|^2.
double ward_distance(std::size_t size_a, std::span<const double> centroid_a, std::size_t size_b,
                     std::span<const double> centroid_b);

/// Full Ward agglomeration of the rows of `points` by nearest-neighbour chain with
/// Lance-Williams updates, then the flat cut at `k` clusters.
ClusterResult cluster(const Eigen::MatrixXd& points, std::size_t k);
ClusterResult cluster(const LayerMatrix& points, std::size_t k);

/// Flat partition obtained by applying the first n - k merges of the dendrogram.
ConceptSet cut_dendrogram(const Dendrogram& dendrogram, std::size_t k);

/// Canonical ordering of an arbitrary partition (see ConceptSet).
std::vector<std::vector<std::size_t>> canonical_partition(std::span<const std::size_t> labels);

struct ConceptMember {
    std::size_t row = 0;
    TokenRecord record;
    bool is_classifier_token = false;
};

/// Members of a concept in ascending row order, with their records.
std::vector<ConceptMember> concept_members(const ConceptSet& concepts,
                                           const RepresentationBundle& bundle,
                                           std::size_t concept_id);

nlohmann::json concept_set_to_json(const ConceptSet& concepts);
ConceptSet concept_set_from_json(const nlohmann::json& j);

}  // namespace lacoat
