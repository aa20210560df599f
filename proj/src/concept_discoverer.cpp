#include "lacoat/concept_discoverer.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>

#include "lacoat/errors.hpp"

namespace lacoat {

namespace {

// Condensed upper-triangular storage of pairwise Ward costs.
class CondensedMatrix {
public:
    explicit CondensedMatrix(std::size_t n) : n_(n), values_(n < 2 ? 0 : n * (n - 1) / 2) {}

    double& at(std::size_t i, std::size_t j) { return values_[index(i, j)]; }
    double at(std::size_t i, std::size_t j) const { return values_[index(i, j)]; }

private:
    std::size_t index(std::size_t i, std::size_t j) const {
        if (i > j) std::swap(i, j);
        return i * n_ - i * (i + 1) / 2 + (j - i - 1);
    }

    std::size_t n_;
    std::vector<double> values_;
};

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) {
        std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

struct ChainMerge {
    std::size_t slot_kept;
    std::size_t slot_removed;
    double cost;
    // Merge index that produced each input cluster, or nullopt for a single point.
    std::optional<std::size_t> from_kept;
    std::optional<std::size_t> from_removed;
};

}  // namespace

std::vector<std::size_t> ConceptSet::assignment() const {
    std::vector<std::size_t> labels(num_records, std::numeric_limits<std::size_t>::max());
    for (std::size_t c = 0; c < concepts.size(); ++c) {
        for (std::size_t row : concepts[c]) labels.at(row) = c;
    }
    return labels;
}

double ward_distance(std::size_t size_a, std::span<const double> centroid_a, std::size_t size_b,
                     std::span<const double> centroid_b) {
    if (centroid_a.size() != centroid_b.size()) {
        throw ValidationError("ward_distance: centroid dimensions differ (" +
                              std::to_string(centroid_a.size()) + " vs " +
                              std::to_string(centroid_b.size()) + ")");
    }
    if (size_a == 0 || size_b == 0) {
        throw ValidationError("ward_distance: cluster sizes must be >= 1");
    }
    double sq = 0.0;
    for (std::size_t d = 0; d < centroid_a.size(); ++d) {
        const double diff = centroid_a[d] - centroid_b[d];
        sq += diff * diff;
    }
    const double na = static_cast<double>(size_a);
    const double nb = static_cast<double>(size_b);
    return na * nb / (na + nb) * sq;
}

std::vector<std::vector<std::size_t>> canonical_partition(std::span<const std::size_t> labels) {
    std::unordered_map<std::size_t, std::size_t> slot_of_label;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t row = 0; row < labels.size(); ++row) {
        auto [it, inserted] = slot_of_label.emplace(labels[row], groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(row);
    }
    return groups;
}

ConceptSet cut_dendrogram(const Dendrogram& dendrogram, std::size_t k) {
    const std::size_t n = dendrogram.num_points;
    if (n == 0) throw ValidationError("cannot cut an empty dendrogram");
    if (k < 1 || k > n) {
        throw ValidationError("k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
    if (dendrogram.merges.size() != n - 1) {
        throw ValidationError("dendrogram has " + std::to_string(dendrogram.merges.size()) +
                              " merges, expected " + std::to_string(n - 1));
    }
    // Any point of a cluster can stand for it in the union-find.
    std::vector<std::size_t> representative(2 * n - 1);
    std::iota(representative.begin(), representative.begin() + static_cast<std::ptrdiff_t>(n),
              std::size_t{0});
    UnionFind uf(n);
    for (std::size_t i = 0; i < n - k; ++i) {
        const auto& m = dendrogram.merges[i];
        if (m.cluster_a >= n + i || m.cluster_b >= n + i) {
            throw ValidationError("merge " + std::to_string(i) + " references a later cluster");
        }
        uf.unite(representative[m.cluster_a], representative[m.cluster_b]);
        representative[n + i] = representative[m.cluster_a];
    }
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = uf.find(i);

    ConceptSet set;
    set.k = k;
    set.num_records = n;
    set.concepts = canonical_partition(labels);
    return set;
}

ClusterResult cluster(const Eigen::MatrixXd& points, std::size_t k) {
    const std::size_t n = static_cast<std::size_t>(points.rows());
    if (n == 0) throw ValidationError("cannot cluster an empty matrix");
    if (k < 1 || k > n) {
        throw ValidationError("k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }

    CondensedMatrix dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            dist.at(i, j) = 0.5 * (points.row(static_cast<Eigen::Index>(i)) -
                                   points.row(static_cast<Eigen::Index>(j)))
                                      .squaredNorm();
        }
    }

    std::vector<std::size_t> size(n, 1);
    std::vector<std::size_t> active(n);
    std::iota(active.begin(), active.end(), std::size_t{0});
    std::vector<std::optional<std::size_t>> produced_by(n);
    std::vector<ChainMerge> raw;
    raw.reserve(n - 1);
    std::vector<std::size_t> chain;

    while (raw.size() + 1 < n) {
        if (chain.empty()) chain.push_back(active.front());
        std::size_t a = 0;
        std::size_t b = 0;
        for (;;) {
            a = chain.back();
            // Ties prefer the previous chain element (required for termination), then the
            // lowest slot index.
            std::optional<std::size_t> best;
            double best_cost = std::numeric_limits<double>::infinity();
            if (chain.size() >= 2) {
                best = chain[chain.size() - 2];
                best_cost = dist.at(a, *best);
            }
            for (std::size_t x : active) {
                if (x == a) continue;
                const double d = dist.at(a, x);
                if (d < best_cost) {
                    best_cost = d;
                    best = x;
                }
            }
            if (chain.size() >= 2 && *best == chain[chain.size() - 2]) {
                b = *best;
                break;
            }
            chain.push_back(*best);
        }
        chain.pop_back();
        chain.pop_back();

        const std::size_t kept = std::min(a, b);
        const std::size_t removed = std::max(a, b);
        const double cost = dist.at(kept, removed);
        raw.push_back({kept, removed, cost, produced_by[kept], produced_by[removed]});

        const double s_kept = static_cast<double>(size[kept]);
        const double s_removed = static_cast<double>(size[removed]);
        for (std::size_t x : active) {
            if (x == kept || x == removed) continue;
            const double s_x = static_cast<double>(size[x]);
            const double updated = ((s_kept + s_x) * dist.at(x, kept) +
                                    (s_removed + s_x) * dist.at(x, removed) - s_x * cost) /
                                   (s_kept + s_removed + s_x);
            dist.at(x, kept) = std::max(updated, 0.0);
        }
        size[kept] += size[removed];
        produced_by[kept] = raw.size() - 1;
        active.erase(std::find(active.begin(), active.end(), removed));
    }

    // Chain order is not cost order. Sort by cost, but never ahead of a child merge, which
    // only matters when round-off makes a parent marginally cheaper than its child.
    std::vector<double> effective(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        double e = raw[i].cost;
        if (raw[i].from_kept) e = std::max(e, effective[*raw[i].from_kept]);
        if (raw[i].from_removed) e = std::max(e, effective[*raw[i].from_removed]);
        effective[i] = e;
    }
    std::vector<std::size_t> order(raw.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return effective[x] < effective[y]; });

    std::vector<std::size_t> id_of_raw(raw.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) id_of_raw[order[pos]] = n + pos;

    ClusterResult result;
    result.dendrogram.num_points = n;
    result.dendrogram.merges.reserve(raw.size());
    std::vector<std::size_t> cluster_size(2 * n - 1, 1);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto& m = raw[order[pos]];
        const std::size_t id_kept = m.from_kept ? id_of_raw[*m.from_kept] : m.slot_kept;
        const std::size_t id_removed = m.from_removed ? id_of_raw[*m.from_removed] : m.slot_removed;
        const std::size_t new_size = cluster_size[id_kept] + cluster_size[id_removed];
        cluster_size[n + pos] = new_size;
        result.dendrogram.merges.push_back(
            {std::min(id_kept, id_removed), std::max(id_kept, id_removed), m.cost, new_size});
    }
    result.concepts = cut_dendrogram(result.dendrogram, k);
    return result;
}

ClusterResult cluster(const LayerMatrix& points, std::size_t k) {
    return cluster(Eigen::MatrixXd(points.cast<double>()), k);
}

std::vector<ConceptMember> concept_members(const ConceptSet& concepts,
                                           const RepresentationBundle& bundle,
                                           std::size_t concept_id) {
    if (concept_id >= concepts.concepts.size()) {
        throw ValidationError("unknown concept id " + std::to_string(concept_id) + " (have " +
                              std::to_string(concepts.concepts.size()) + ")");
    }
    if (concepts.num_records != bundle.num_records()) {
        throw ValidationError("concept set covers " + std::to_string(concepts.num_records) +
                              " records but bundle has " + std::to_string(bundle.num_records()));
    }
    std::vector<std::size_t> rows = concepts.concepts[concept_id];
    std::sort(rows.begin(), rows.end());
    std::vector<ConceptMember> members;
    members.reserve(rows.size());
    for (std::size_t row : rows) {
        const auto& r = bundle.record(row);
        members.push_back({row, r, r.is_classifier_token});
    }
    return members;
}

nlohmann::json concept_set_to_json(const ConceptSet& concepts) {
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t c = 0; c < concepts.concepts.size(); ++c) {
        list.push_back({{"id", c}, {"records", concepts.concepts[c]}});
    }
    return {{"layer", concepts.layer},
            {"k", concepts.k},
            {"num_records", concepts.num_records},
            {"concepts", std::move(list)}};
}

ConceptSet concept_set_from_json(const nlohmann::json& j) {
    ConceptSet set;
    try {
        set.layer = j.at("layer").get<std::size_t>();
        set.k = j.at("k").get<std::size_t>();
        set.num_records = j.at("num_records").get<std::size_t>();
        const auto& list = j.at("concepts");
        set.concepts.resize(list.size());
        for (const auto& entry : list) {
            const auto id = entry.at("id").get<std::size_t>();
            if (id >= list.size()) throw ValidationError("concept id " + std::to_string(id) + " out of range");
            set.concepts[id] = entry.at("records").get<std::vector<std::size_t>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("concept set: ") + e.what());
    }
    if (set.concepts.size() != set.k) {
        throw LoadError("concept set declares k=" + std::to_string(set.k) + " but lists " +
                        std::to_string(set.concepts.size()) + " concepts");
    }
    std::vector<bool> seen(set.num_records, false);
    for (std::size_t c = 0; c < set.concepts.size(); ++c) {
        if (set.concepts[c].empty()) throw LoadError("concept " + std::to_string(c) + " is empty");
        for (std::size_t row : set.concepts[c]) {
            if (row >= set.num_records || seen[row]) {
                throw LoadError("concept " + std::to_string(c) + ": record " + std::to_string(row) +
                                " out of range or listed twice");
            }
            seen[row] = true;
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw LoadError("concept set does not cover every record");
    }
    return set;
}

}  // namespace lacoat
