#include "cxrlm/kg.hpp"

#include "cxrlm/rng.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace cxrlm;
using namespace cxrlm::kg;

namespace {

KnowledgeGraph four_concepts() {
    KnowledgeGraph g;
    g.d_know = 2;
    const char* names[] = {"cardiomegaly", "mass", "nodule", "consolidation"};
    for (int32_t i = 0; i < 4; ++i) {
        Concept c;
        c.concept_id = i;
        c.name = names[i];
        c.category = "pathology";
        g.concepts.push_back(c);
    }
    g.concepts[3].synonyms = {"airspace_opacity"};
    g.embeddings = Matrix(4, 2);
    g.rebuild_surface_index();
    g.validate();
    return g;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("match_concepts: exact lexical match over names and synonyms") {
    const auto g = four_concepts();
    CHECK(match_concepts({"consolidation", "@", "right_lower_lobe"}, g).concept_ids ==
          std::vector<int32_t>{3});
    CHECK(match_concepts({"airspace_opacity"}, g).concept_ids == std::vector<int32_t>{3});
    CHECK(match_concepts({"nothing", "here"}, g).concept_ids.empty());
    CHECK(match_concepts({}, g).concept_ids.empty());
}

TEST_CASE("match_concepts: order and duplication invariance") {
    const auto g = four_concepts();
    const auto a = match_concepts({"mass", "nodule", "mass"}, g);
    const auto b = match_concepts({"nodule", "mass"}, g);
    CHECK(a == b);
    CHECK(a.concept_ids == std::vector<int32_t>{1, 2});
}

TEST_CASE("match_concepts: nested-loop oracle on random inputs") {
    Rng rng(4242);
    for (int iter = 0; iter < 300; ++iter) {
        const auto g = testsup::random_kg(rng);
        std::vector<std::string> tokens;
        const size_t n = rng.index(12);
        for (size_t i = 0; i < n; ++i) tokens.push_back(testsup::pick_ident(rng));

        std::set<int32_t> expected;
        for (const auto& tok : tokens)
            for (const auto& c : g.concepts) {
                if (c.name == tok) expected.insert(c.concept_id);
                for (const auto& syn : c.synonyms)
                    if (syn == tok) expected.insert(c.concept_id);
            }
        const auto got = match_concepts(tokens, g);
        CHECK(got.concept_ids == std::vector<int32_t>(expected.begin(), expected.end()));
    }
}

TEST_CASE("aggregate_knowledge: trivial cases") {
    KnowledgeGraph g = four_concepts();
    g.embeddings.at(0, 0) = 1.0; // k_c0 = [1, 0]
    g.embeddings.at(1, 1) = 1.0; // k_c1 = [0, 1]

    CHECK(aggregate_knowledge({{0, 1}}, g) == std::vector<double>{0.5, 0.5});
    g.embeddings.at(2, 0) = -3.25;
    g.embeddings.at(2, 1) = 7.5;
    CHECK(aggregate_knowledge({{2}}, g) == std::vector<double>{-3.25, 7.5});
    CHECK(aggregate_knowledge({{}}, g) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("aggregate_knowledge: mean stays inside the coordinate-wise hull") {
    Rng rng(7);
    for (int iter = 0; iter < 200; ++iter) {
        const auto g = testsup::random_kg(rng);
        ConceptMatchSet matches;
        for (int32_t i = 0; i < static_cast<int32_t>(g.concepts.size()); ++i)
            if (rng.uniform01() < 0.5) matches.concept_ids.push_back(i);
        const auto mean = aggregate_knowledge(matches, g);
        double max_abs_row = 0.0;
        for (int32_t c : matches.concept_ids)
            for (size_t j = 0; j < g.embeddings.cols; ++j)
                max_abs_row = std::max(max_abs_row,
                                       std::abs(g.embeddings.at(static_cast<size_t>(c), j)));
        for (double x : mean) CHECK(std::abs(x) <= max_abs_row + 1e-12);
    }
}

TEST_CASE("kg file: save/load round-trips bit-for-bit") {
    Rng rng(31);
    const std::string path = temp_path("cxrlm_test_kg.json");
    for (int iter = 0; iter < 100; ++iter) {
        const auto g = testsup::random_kg(rng);
        save_kg(g, path);
        const auto back = load_kg(path);
        CHECK(back == g);
        CHECK(back.embeddings.a == g.embeddings.a); // bit-exact doubles
    }
    std::remove(path.c_str());
}

TEST_CASE("kg file: loader rejects bad contents") {
    const std::string path = temp_path("cxrlm_test_kg_bad.json");

    auto write = [&path](const std::string& body) {
        std::ofstream out(path, std::ios::trunc);
        out << body;
    };

    write("{not json");
    CHECK_THROWS_AS(load_kg(path), DataError);

    // edge to nonexistent concept id
    write(R"({"version":1,"d_know":1,
      "concepts":[{"id":0,"name":"a","synonyms":[],"category":"x","is_critical":false}],
      "edges":[{"src":0,"rel":"r","dst":5}],
      "embeddings":[[0.0]]})");
    CHECK_THROWS_AS(load_kg(path), DataError);

    // duplicate surface form across name and synonym
    write(R"({"version":1,"d_know":1,
      "concepts":[{"id":0,"name":"a","synonyms":["b"],"category":"x","is_critical":false},
                  {"id":1,"name":"b","synonyms":[],"category":"x","is_critical":false}],
      "edges":[],
      "embeddings":[[0.0],[0.0]]})");
    CHECK_THROWS_AS(load_kg(path), DataError);

    // missing field
    write(R"({"version":1,"concepts":[],"edges":[],"embeddings":[]})");
    CHECK_THROWS_AS(load_kg(path), DataError);

    std::remove(path.c_str());
}
