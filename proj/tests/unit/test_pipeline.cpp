#include <doctest.h>

#include <cstdlib>
#include <map>
#include <sys/wait.h>

#include "lacoat/binary_io.hpp"
#include "lacoat/errors.hpp"
#include "lacoat/pipeline.hpp"
#include "scratch_dir.hpp"

using namespace lacoat;
using nlohmann::json;
using testing_support::ScratchDir;
namespace fs = std::filesystem;

namespace {

json small_config(const std::string& task = "sequence_labeling") {
    return json{{"task", task},
                {"synthetic",
                 {{"num_facets", 4}, {"words_per_facet", 4}, {"contexts_per_word", 6}, {"dim", 8},
                  {"layers", 3}, {"seed", 3}, {"task", task}, {"test_sentences", 4}}},
                {"k", 4},
                {"attribution", {{"steps", 64}}},
                {"scorer", {{"epochs", 20}, {"hidden", 16}}},
                {"explain", {{"count", 2}}}};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = io::read_file(entry.path());
    }
    return files;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(LACOAT_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("parse_config validation") {
    SUBCASE("k is required") {
        auto j = small_config();
        j.erase("k");
        try {
            (void)parse_config(j, ".");
            FAIL("expected a ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("'k'") != std::string::npos);
        }
    }
    SUBCASE("exactly one data source") {
        auto j = small_config();
        j["bundle"] = "somewhere";
        CHECK_THROWS_AS(parse_config(j, "."), ValidationError);
        j.erase("bundle");
        j.erase("synthetic");
        CHECK_THROWS_AS(parse_config(j, "."), ValidationError);
    }
    SUBCASE("bad values") {
        auto j = small_config();
        j["attribution"]["mass"] = 0.0;
        CHECK_THROWS_AS(parse_config(j, "."), ValidationError);
        j = small_config();
        j["k"] = "ten";
        CHECK_THROWS_AS(parse_config(j, "."), ValidationError);
        j = small_config();
        j["task"] = "sequence_classification";
        CHECK_THROWS_AS(parse_config(j, "."), ValidationError);
    }
    SUBCASE("relative paths resolve against the config directory") {
        json j{{"k", 3}, {"bundle", "data/train"}, {"output_dir", "/abs/run"}};
        const auto c = parse_config(j, "/cfg");
        CHECK(*c.bundle == fs::path("/cfg/data/train"));
        CHECK(*c.output_dir == fs::path("/abs/run"));
        CHECK(c.llm_temperature == 0.0);
        CHECK(c.llm_top_p == 0.95);
        CHECK(c.ig_steps == 500);
    }
}

TEST_CASE("run_pipeline writes every artifact and reruns identically") {
    ScratchDir dir("run");
    const auto config = parse_config(small_config(), dir.path());
    const auto summary = run_pipeline(config, dir / "a");
    (void)run_pipeline(config, dir / "b");

    for (const char* f : {"manifest.json", "explanations.json", "scorer.bin", "bundle/manifest.json",
                          "concepts/layer_0.json", "concepts/layer_2.json", "mappers/layer_1.bin",
                          "report/annotation.json", "report/census.csv", "report/alignment_by_layer.csv",
                          "report/mapper_topk.csv", "report/facet_purity.csv", "corpus/train/manifest.json",
                          "corpus/test/layer_2.f32"}) {
        CAPTURE(f);
        CHECK(fs::exists(dir / "a" / f));
    }
    const auto a = snapshot(dir / "a");
    const auto b = snapshot(dir / "b");
    CHECK(a == b);

    const auto manifest = json::parse(a.at("manifest.json"));
    CHECK(manifest["k"] == 4);
    CHECK(manifest["llm"]["temperature"] == 0.0);
    CHECK(a.at("manifest.json").find(dir.path().string()) == std::string::npos);
    for (const auto& artifact : manifest["artifacts"]) CHECK(fs::exists(dir / "a" / artifact.get<std::string>()));

    CHECK(summary.explanations == 2 * 3);
    CHECK(summary.alignment.size() == 3);
}

TEST_CASE("explanations never leak the prediction or the gold label") {
    ScratchDir dir("leak");
    MockTransport mock([](const HttpRequest& req) {
        const auto body = json::parse(req.body);
        REQUIRE(body["temperature"].get<double>() == 0.0);
        REQUIRE(body["top_p"].get<double>() == 0.95);
        return HttpResponse{200, chat_completion_response("They share a topic.")};
    });
    for (const std::string task : {"sequence_labeling", "sequence_classification"}) {
        CAPTURE(task);
        const auto config = parse_config(small_config(task), dir.path());
        (void)run_pipeline(config, dir / task, &mock);
        const auto explanations = json::parse(io::read_file(dir / task / "explanations.json"));
        REQUIRE_FALSE(explanations.empty());
        for (const auto& e : explanations) {
            const std::string prompt = e["prompt"];
            CHECK(prompt.find(e["prediction"].get<std::string>()) == std::string::npos);
            if (!e["true_label"].is_null()) {
                CHECK(prompt.find(e["true_label"].get<std::string>()) == std::string::npos);
            }
            CHECK(e["llm_response"] == "They share a topic.");
        }
    }
    CHECK(mock.request_count() == 2 * 2 * 3);
}

TEST_CASE("explain_instance over saved artifacts") {
    ScratchDir dir("explain");
    const auto config = parse_config(small_config(), dir.path());
    (void)run_pipeline(config, dir / "run");

    const auto train = load_bundle(dir / "run/corpus/train");
    const auto test = load_bundle(dir / "run/corpus/test");
    const auto filtered = load_bundle(dir / "run/bundle");
    const auto scorer = load_scorer(dir / "run/scorer.bin");
    std::map<std::size_t, LayerArtifacts> layers;
    for (std::size_t l = 0; l < 3; ++l) {
        auto& art = layers[l];
        art.concepts = concept_set_from_json(json::parse(io::read_file(dir / ("run/concepts/layer_" + std::to_string(l) + ".json"))));
        art.mapper = load_mapper(dir / ("run/mappers/layer_" + std::to_string(l) + ".bin"));
        art.labels = annotate_concepts(art.concepts, filtered.records(), AnnotationMode::token_label);
    }
    ExplainOptions options;
    options.steps = 64;
    const ExplainContext context{train, filtered, test, scorer, layers, options, LlmOptions{}};

    const std::vector<std::size_t> all{0, 1, 2};
    const auto out = explain_instance(context, {1, 2}, all);
    REQUIRE(out.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out[i].layer == i);
        CHECK(out[i].sentence_id == 1);
        CHECK_FALSE(out[i].salient_tokens.empty());
        CHECK(out[i].prompt.find("[[") != std::string::npos);
        CHECK_FALSE(out[i].llm_response.has_value());
        CHECK(out[i].concept_id < 4);
    }

    CHECK_THROWS_AS(explain_instance(context, {999, 0}, all), ValidationError);
    CHECK_THROWS_AS(explain_instance(context, {1, 99}, all), ValidationError);
    const std::vector<std::size_t> missing_layer{7};
    CHECK_THROWS_AS(explain_instance(context, {1, 2}, missing_layer), ValidationError);
}

TEST_CASE("attribute_instance on a classification sentence") {
    SyntheticCorpusSpec spec;
    spec.task = TaskKind::sequence_classification;
    spec.words_per_facet = 4;
    spec.contexts_per_word = 6;
    const auto corpus = generate_synthetic_corpus(spec);
    ScorerFile scorer;
    scorer.task = TaskKind::sequence_classification;
    scorer.layer = 2;
    scorer.scorer = train_scorer_on_bundle(corpus.train, scorer.task, 2, {}).scorer;

    const auto attr = attribute_instance(scorer, corpus.test, {0, 0}, 100, 0.5);
    const auto rows = corpus.test.sentence_rows(0);
    CHECK(attr.attribution.per_token.size() == rows.size());
    CHECK_FALSE(attr.salient.indices.empty());
    CHECK(scorer.scorer.class_labels().at(attr.prediction) == *corpus.test.record(rows[0]).sentence_class_label);
}

TEST_CASE("CLI exit codes") {
    ScratchDir dir("cli");
    CHECK(run_cli("--version") == 0);
    CHECK(run_cli("") == 1);
    CHECK(run_cli("discover --layer 0") == 1);
    CHECK(run_cli("ingest --dir " + (dir / "nothing").string() + " --out " + (dir / "x").string()) == 1);

    auto bad = small_config();
    bad.erase("k");
    io::write_file(dir / "bad.json", io::dump_json(bad));
    CHECK(run_cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "run").string()) == 1);

    CHECK(run_cli("synth --out " + (dir / "corpus").string() + " --words 4 --contexts 6") == 0);
    CHECK(run_cli("ingest --dir " + (dir / "corpus/train").string() + " --out " + (dir / "filtered").string()) == 0);
    CHECK(run_cli("discover --bundle " + (dir / "filtered").string() + " --layer 2 --k 10 --out " +
                  (dir / "concepts.json").string()) == 0);
    CHECK(run_cli("map-train --concepts " + (dir / "concepts.json").string() + " --bundle " +
                  (dir / "filtered").string() + " --layer 2 --out " + (dir / "mapper.bin").string()) == 0);
    CHECK(run_cli("train-scorer --bundle " + (dir / "corpus/train").string() + " --out " +
                  (dir / "scorer.bin").string()) == 0);
    CHECK(run_cli("attribute --bundle " + (dir / "corpus/test").string() + " --scorer " +
                  (dir / "scorer.bin").string() + " --instance 0 --position 1 --steps 32 --out " +
                  (dir / "attr.json").string()) == 0);
    const auto attr = json::parse(io::read_file(dir / "attr.json"));
    CHECK(attr["tokens"].size() == 8);
    CHECK(attr["tokens"][0].contains("selected"));

    CHECK(run_cli("map-train --concepts " + (dir / "concepts.json").string() + " --bundle " +
                  (dir / "corpus/test").string() + " --layer 2 --out " + (dir / "m2.bin").string()) == 1);
}
