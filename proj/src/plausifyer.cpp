#include "lacoat/plausifyer.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "lacoat/errors.hpp"

namespace lacoat {

namespace {

std::string join(std::span<const std::string> parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

const PromptTemplate& classification_template() {
    static const PromptTemplate t{
        TaskKind::sequence_classification,
        "Do you find any common semantic, structural, lexical and topical relation between these "
        "sentences with the main sentence? Give a more specific and concise summary about the most "
        "prominent relation among these sentences.\n"
        "\n"
        "main sentence: {sentence}\n"
        "{sentences}\n"
        "No talk, just go."};
    return t;
}

const PromptTemplate& labeling_template() {
    static const PromptTemplate t{
        TaskKind::sequence_labeling,
        "Do you find any common semantic, structural, lexical and topical relation between the word "
        "highlighted in the sentence (enclosed in [[ ]]) and the following list of words? Give a more "
        "specific and concise summary about the most prominent relation among these words.\n"
        "\n"
        "Sentence: {sentence}\n"
        "List of words: {words}\n"
        "Answer concisely and to the point."};
    return t;
}

const PromptTemplate& template_for(TaskKind kind) {
    return kind == TaskKind::sequence_classification ? classification_template() : labeling_template();
}

std::string render_template(const PromptTemplate& tmpl,
                            const std::map<std::string, std::string>& slots) {
    std::string out;
    out.reserve(tmpl.text.size());
    std::size_t pos = 0;
    while (pos < tmpl.text.size()) {
        const auto open = tmpl.text.find('{', pos);
        if (open == std::string::npos) {
            out.append(tmpl.text, pos);
            break;
        }
        const auto close = tmpl.text.find('}', open);
        if (close == std::string::npos) {
            out.append(tmpl.text, pos);
            break;
        }
        out.append(tmpl.text, pos, open - pos);
        const std::string name = tmpl.text.substr(open + 1, close - open - 1);
        auto it = slots.find(name);
        if (it == slots.end()) throw ValidationError("prompt slot {" + name + "} has no value");
        out += it->second;
        pos = close + 1;
    }
    return out;
}

std::vector<std::string> sample_concept_display(std::span<const ConceptMember> members,
                                                const RepresentationBundle& sentences,
                                                std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> picked(members.size());
    std::iota(picked.begin(), picked.end(), std::size_t{0});
    if (members.size() > n) {
        std::mt19937_64 rng(seed);
        std::shuffle(picked.begin(), picked.end(), rng);
        picked.resize(n);
        std::sort(picked.begin(), picked.end());
    }
    std::vector<std::string> out;
    out.reserve(picked.size());
    for (std::size_t i : picked) {
        const auto& m = members[i];
        out.push_back(m.is_classifier_token ? sentences.sentence_text(m.record.sentence_id)
                                            : m.record.token_text);
    }
    return out;
}

std::vector<std::string> concept_word_list(std::span<const ConceptMember> members, std::size_t limit) {
    std::vector<std::string> words;
    std::set<std::string> seen;
    for (const auto& m : members) {
        if (words.size() >= limit) break;
        if (m.is_classifier_token) continue;
        if (seen.insert(m.record.token_text).second) words.push_back(m.record.token_text);
    }
    return words;
}

std::string build_prompt(const PromptInput& input) {
    const auto& tmpl = template_for(input.kind);
    if (input.kind == TaskKind::sequence_classification) {
        return render_template(tmpl, {{"sentence", join(input.sentence_tokens, " ")},
                                      {"sentences", join(input.concept_items, "\n")}});
    }
    if (!input.highlight) {
        throw ValidationError(to_string(input.kind) + " prompt needs a highlighted word");
    }
    if (*input.highlight >= input.sentence_tokens.size()) {
        throw ValidationError("highlighted word index " + std::to_string(*input.highlight) +
                              " outside the sentence");
    }
    std::vector<std::string> tokens = input.sentence_tokens;
    tokens[*input.highlight] = "[[" + tokens[*input.highlight] + "]]";
    return render_template(tmpl, {{"sentence", join(tokens, " ")},
                                  {"words", join(input.concept_items, ", ")}});
}

}  // namespace lacoat
