#include "lacoat/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "lacoat/errors.hpp"

namespace lacoat {

namespace {

constexpr std::array<const char*, 20> kSyllables = {"ba", "ke", "lo", "mi", "nu", "ra", "so",
                                                    "ti", "vu", "ze", "da", "fe", "go", "hi",
                                                    "ju", "pa", "qe", "wo", "xi", "yu"};

std::string word_form(std::size_t index) {
    const std::size_t n = kSyllables.size();
    return std::string(kSyllables[(index / (n * n)) % n]) + kSyllables[(index / n) % n] +
           kSyllables[index % n];
}

Eigen::MatrixXd gaussian_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal(rng);
    }
    return m;
}

// Scales rows so the closest pair is exactly `distance` apart.
void rescale_min_distance(Eigen::MatrixXd& centers, double distance) {
    if (centers.rows() < 2) {
        if (centers.rows() == 1) centers.row(0) *= distance / std::max(1e-12, centers.row(0).norm());
        return;
    }
    double closest = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < centers.rows(); ++j) {
            closest = std::min(closest, (centers.row(i) - centers.row(j)).norm());
        }
    }
    centers *= distance / std::max(closest, 1e-12);
}

struct Occurrence {
    std::size_t word;  // global word index
    std::size_t facet;
};

}  // namespace

std::vector<std::string> synthetic_class_names(std::size_t num_classes) {
    if (num_classes == 2) return {"Negative", "Positive"};
    std::vector<std::string> names;
    for (std::size_t c = 0; c < num_classes; ++c) names.push_back("Class" + std::to_string(c));
    return names;
}

void validate(const SyntheticCorpusSpec& spec) {
    if (spec.num_facets == 0 || spec.words_per_facet == 0 || spec.contexts_per_word == 0) {
        throw ValidationError("synthetic corpus needs facets, words and contexts > 0");
    }
    if (spec.dim == 0 || spec.layers == 0) throw ValidationError("synthetic corpus needs dim, layers > 0");
    if (!(spec.separation > 0.0)) throw ValidationError("facet separation must be > 0");
    if (spec.tokens_per_sentence == 0) throw ValidationError("tokens_per_sentence must be > 0");
    if (spec.task == TaskKind::masked_prediction) {
        throw ValidationError("synthetic corpus supports classification or labeling tasks only");
    }
    if (spec.task == TaskKind::sequence_classification &&
        (spec.num_classes < 2 || spec.num_classes > spec.num_facets)) {
        throw ValidationError("classification corpus needs 2 <= num_classes <= num_facets");
    }
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
    validate(spec);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool classification = spec.task == TaskKind::sequence_classification;
    const std::size_t classes = classification ? spec.num_classes : 0;
    const std::size_t num_words = spec.num_facets * spec.words_per_facet;
    const auto class_names = synthetic_class_names(std::max<std::size_t>(classes, 2));

    Eigen::MatrixXd centers = gaussian_rows(spec.num_facets + classes, spec.dim, rng);
    rescale_min_distance(centers, spec.separation);
    Eigen::MatrixXd word_identity = gaussian_rows(num_words, spec.dim, rng);
    rescale_min_distance(word_identity, spec.separation);

    auto facet_of_word = [&](std::size_t w) { return w / spec.words_per_facet; };
    auto class_of_facet = [&](std::size_t f) { return f % std::max<std::size_t>(classes, 1); };

    struct Layout {
        double facet_weight;
        double noise;
    };
    std::vector<Layout> layout(spec.layers);
    for (std::size_t l = 0; l < spec.layers; ++l) {
        const double t = spec.layers == 1 ? 1.0 : static_cast<double>(l) / static_cast<double>(spec.layers - 1);
        layout[l] = {t, 1.0 + 2.0 * (1.0 - t)};
    }

    auto word_vector = [&](std::size_t l, const Occurrence& o) {
        const double t = layout[l].facet_weight;
        Eigen::VectorXd v = t * centers.row(static_cast<Eigen::Index>(o.facet)).transpose() +
                            (1.0 - t) * word_identity.row(static_cast<Eigen::Index>(o.word)).transpose();
        for (Eigen::Index d = 0; d < v.size(); ++d) v(d) += layout[l].noise * normal(rng);
        return v;
    };

    struct Built {
        std::vector<TokenRecord> records;
        std::vector<std::vector<Eigen::VectorXd>> vectors;  // [layer][row]
        std::vector<std::size_t> truth;
    };

    auto emit_sentences = [&](const std::vector<std::vector<Occurrence>>& sentences,
                              const std::vector<std::size_t>& sentence_class) {
        Built b;
        b.vectors.resize(spec.layers);
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            const auto sid = static_cast<std::uint32_t>(s);
            std::vector<std::vector<Eigen::VectorXd>> words(spec.layers);
            for (std::size_t l = 0; l < spec.layers; ++l) {
                for (const auto& o : sentences[s]) words[l].push_back(word_vector(l, o));
            }
            std::uint32_t position = 0;
            std::optional<std::string> sentence_label;
            if (classification) {
                const std::size_t c = sentence_class[s];
                sentence_label = class_names[c];
                b.records.push_back({"[CLS]", sid, position++, true, sentence_label, std::nullopt});
                b.truth.push_back(spec.num_facets + c);
                for (std::size_t l = 0; l < spec.layers; ++l) {
                    Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.dim);
                    for (const auto& v : words[l]) mean += v;
                    mean /= static_cast<double>(words[l].size());
                    const double t = layout[l].facet_weight;
                    Eigen::VectorXd v = t * centers.row(static_cast<Eigen::Index>(spec.num_facets + c)).transpose() +
                                        (1.0 - t) * mean;
                    for (Eigen::Index d = 0; d < v.size(); ++d) v(d) += layout[l].noise * normal(rng);
                    b.vectors[l].push_back(std::move(v));
                }
            }
            for (std::size_t i = 0; i < sentences[s].size(); ++i) {
                const auto& o = sentences[s][i];
                b.records.push_back({word_form(o.word), sid, position++, false, sentence_label,
                                     "TAG" + std::to_string(o.facet)});
                b.truth.push_back(o.facet);
                for (std::size_t l = 0; l < spec.layers; ++l) b.vectors[l].push_back(words[l][i]);
            }
        }
        return b;
    };

    auto to_bundle = [&](Built& b) {
        std::vector<LayerMatrix> layers;
        for (std::size_t l = 0; l < spec.layers; ++l) {
            LayerMatrix m(static_cast<Eigen::Index>(b.records.size()), static_cast<Eigen::Index>(spec.dim));
            for (std::size_t r = 0; r < b.records.size(); ++r) {
                m.row(static_cast<Eigen::Index>(r)) = b.vectors[l][r].transpose().cast<float>();
            }
            layers.push_back(std::move(m));
        }
        return RepresentationBundle(std::move(b.records), std::move(layers));
    };

    auto chunk = [&](std::vector<Occurrence>& pool, std::size_t cls,
                     std::vector<std::vector<Occurrence>>& sentences, std::vector<std::size_t>& labels) {
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t start = 0; start < pool.size(); start += spec.tokens_per_sentence) {
            const std::size_t end = std::min(pool.size(), start + spec.tokens_per_sentence);
            sentences.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(start),
                                   pool.begin() + static_cast<std::ptrdiff_t>(end));
            labels.push_back(cls);
        }
    };

    // Training corpus: every word appears exactly contexts_per_word times.
    std::vector<std::vector<Occurrence>> train_sentences;
    std::vector<std::size_t> train_classes;
    if (classification) {
        for (std::size_t c = 0; c < classes; ++c) {
            std::vector<Occurrence> pool;
            for (std::size_t w = 0; w < num_words; ++w) {
                if (class_of_facet(facet_of_word(w)) != c) continue;
                for (std::size_t k = 0; k < spec.contexts_per_word; ++k) pool.push_back({w, facet_of_word(w)});
            }
            chunk(pool, c, train_sentences, train_classes);
        }
    } else {
        std::vector<Occurrence> pool;
        for (std::size_t w = 0; w < num_words; ++w) {
            for (std::size_t k = 0; k < spec.contexts_per_word; ++k) pool.push_back({w, facet_of_word(w)});
        }
        chunk(pool, 0, train_sentences, train_classes);
    }
    // Interleave sentences so ids do not follow class blocks.
    {
        std::vector<std::size_t> order(train_sentences.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<Occurrence>> s2;
        std::vector<std::size_t> c2;
        for (std::size_t i : order) {
            s2.push_back(std::move(train_sentences[i]));
            c2.push_back(train_classes[i]);
        }
        train_sentences = std::move(s2);
        train_classes = std::move(c2);
    }

    // Test corpus: fresh contexts of random words.
    std::vector<std::vector<Occurrence>> test_sentences;
    std::vector<std::size_t> test_classes;
    std::uniform_int_distribution<std::size_t> pick_word(0, num_words - 1);
    for (std::size_t s = 0; s < spec.test_sentences; ++s) {
        const std::size_t cls = classification ? s % classes : 0;
        std::vector<Occurrence> sentence;
        while (sentence.size() < spec.tokens_per_sentence) {
            const std::size_t w = pick_word(rng);
            if (classification && class_of_facet(facet_of_word(w)) != cls) continue;
            sentence.push_back({w, facet_of_word(w)});
        }
        test_sentences.push_back(std::move(sentence));
        test_classes.push_back(cls);
    }

    Built train = emit_sentences(train_sentences, train_classes);
    Built test = emit_sentences(test_sentences, test_classes);

    std::vector<std::string> group_names;
    for (std::size_t f = 0; f < spec.num_facets; ++f) group_names.push_back("TAG" + std::to_string(f));
    for (std::size_t c = 0; c < classes; ++c) group_names.push_back("[CLS] " + class_names[c]);

    auto train_truth = std::move(train.truth);
    auto test_truth = std::move(test.truth);
    return SyntheticCorpus{to_bundle(train), to_bundle(test), std::move(train_truth),
                           std::move(test_truth), std::move(group_names)};
}

nlohmann::json to_json(const SyntheticCorpusSpec& spec) {
    return {{"num_facets", spec.num_facets},
            {"words_per_facet", spec.words_per_facet},
            {"contexts_per_word", spec.contexts_per_word},
            {"dim", spec.dim},
            {"layers", spec.layers},
            {"separation", spec.separation},
            {"seed", spec.seed},
            {"task", to_string(spec.task)},
            {"tokens_per_sentence", spec.tokens_per_sentence},
            {"num_classes", spec.num_classes},
            {"test_sentences", spec.test_sentences}};
}

SyntheticCorpusSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticCorpusSpec spec;
    try {
        spec.num_facets = j.value("num_facets", spec.num_facets);
        spec.words_per_facet = j.value("words_per_facet", spec.words_per_facet);
        spec.contexts_per_word = j.value("contexts_per_word", spec.contexts_per_word);
        spec.dim = j.value("dim", spec.dim);
        spec.layers = j.value("layers", spec.layers);
        spec.separation = j.value("separation", spec.separation);
        spec.seed = j.value("seed", spec.seed);
        if (j.contains("task")) spec.task = task_kind_from_string(j.at("task").get<std::string>());
        spec.tokens_per_sentence = j.value("tokens_per_sentence", spec.tokens_per_sentence);
        spec.num_classes = j.value("num_classes", spec.num_classes);
        spec.test_sentences = j.value("test_sentences", spec.test_sentences);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("synthetic spec: ") + e.what());
    }
    validate(spec);
    return spec;
}

}  // namespace lacoat
