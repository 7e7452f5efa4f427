#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "refine/vectorstore.hpp"
#include "test_util.hpp"

using namespace refine;
using Catch::Matchers::WithinAbs;
using testutil::TempDir;

TEST_CASE("cosine matches hand-computed values") {
  CHECK_THAT(cosine({1.0, 0.0}, {1.0, 0.0}), WithinAbs(1.0, 0.0));
  CHECK_THAT(cosine({1.0, 0.0}, {0.0, 1.0}), WithinAbs(0.0, 0.0));
  CHECK_THAT(cosine({1.0, 0.0}, {-1.0, 0.0}), WithinAbs(-1.0, 0.0));
  // (1,0) vs (1,1): 1 / sqrt(2).
  CHECK_THAT(cosine({1.0, 0.0}, {1.0, 1.0}), WithinAbs(0.7071067811865475, 1e-15));
  // Scale invariance.
  CHECK_THAT(cosine({3.0, 4.0}, {30.0, 40.0}), WithinAbs(1.0, 1e-15));
}

TEST_CASE("cosine rejects degenerate inputs") {
  CHECK_THROWS_AS(cosine({1.0, 0.0}, {1.0, 0.0, 0.0}), ValidationError);
  CHECK_THROWS_AS(cosine({0.0, 0.0}, {1.0, 0.0}), NumericError);
  CHECK_THROWS_AS(cosine({1.0, 0.0}, {0.0, 0.0}), NumericError);
}

TEST_CASE("store insert guards dimension, finiteness, and id uniqueness") {
  VectorStore store(2);
  store.insert("a", {1.0, 0.0});
  CHECK(store.size() == 1);
  CHECK(store.contains("a"));
  CHECK_FALSE(store.contains("b"));
  CHECK(store.vector_of("a") == EmbeddingVector{1.0, 0.0});
  CHECK_THROWS_AS(store.vector_of("b"), ValidationError);
  CHECK_THROWS_AS(store.insert("b", {1.0, 0.0, 0.0}), ValidationError);
  CHECK_THROWS_AS(store.insert("b", {1.0, std::nan("")}), NumericError);
  CHECK_THROWS_AS(store.insert("a", {0.0, 1.0}), ValidationError);
  CHECK_THROWS_AS(VectorStore(0), ValidationError);
}

TEST_CASE("search ranks by cosine descending with ascending-id tie break") {
  VectorStore store(2);
  store.insert("far", {-1.0, 0.0});
  store.insert("tie_b", {2.0, 2.0});
  store.insert("near", {1.0, 0.1});
  store.insert("tie_a", {1.0, 1.0});

  const auto results = store.search({1.0, 0.0}, 4);
  REQUIRE(results.size() == 4);
  CHECK(results[0].doc_id == "near");
  // tie_a and tie_b have identical cosine (both along (1,1)); ascending id
  // decides.
  CHECK(results[1].doc_id == "tie_a");
  CHECK(results[2].doc_id == "tie_b");
  CHECK(results[3].doc_id == "far");
  CHECK_THAT(results[1].score, WithinAbs(results[2].score, 0.0));
  CHECK(results[0].score > results[1].score);

  const auto top2 = store.search({1.0, 0.0}, 2);
  REQUIRE(top2.size() == 2);
  CHECK(top2[0].doc_id == results[0].doc_id);
  CHECK(top2[1].doc_id == results[1].doc_id);

  // k beyond the collection clamps.
  CHECK(store.search({1.0, 0.0}, 100).size() == 4);

  CHECK_THROWS_AS(store.search({1.0, 0.0, 0.0}, 2), ValidationError);
  CHECK_THROWS_AS(store.search({1.0, 0.0}, 0), ValidationError);
}

TEST_CASE("binary snapshot round-trips exactly") {
  TempDir dir;
  VectorStore store(3);
  store.insert("doc-1", {0.25, -1.5, 3.0});
  store.insert("doc-2", {1e-300, 2e300, -0.0});
  store.save(dir.file("store.bin"));

  const auto loaded = VectorStore::load(dir.file("store.bin"));
  CHECK(loaded.dimension() == 3);
  CHECK(loaded.size() == 2);
  CHECK(loaded.ids() == store.ids());
  CHECK(loaded.vector_of("doc-1") == store.vector_of("doc-1"));
  CHECK(loaded.vector_of("doc-2") == store.vector_of("doc-2"));
  CHECK(std::signbit(loaded.vector_of("doc-2")[2]));
}

TEST_CASE("snapshot loading rejects corrupt files") {
  TempDir dir;
  testutil::write_text(dir.file("junk.bin"), "not a snapshot");
  CHECK_THROWS_AS(VectorStore::load(dir.file("junk.bin")), ParseError);

  VectorStore store(2);
  store.insert("a", {1.0, 2.0});
  store.save(dir.file("store.bin"));
  const auto bytes = testutil::read_text(dir.file("store.bin"));
  testutil::write_text(dir.file("truncated.bin"), bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(VectorStore::load(dir.file("truncated.bin")), ParseError);

  CHECK_THROWS_AS(VectorStore::load(dir.file("absent.bin")), IoError);
}

TEST_CASE("debug dump lists entries in insertion order") {
  VectorStore store(2);
  store.insert("b", {1.0, 0.0});
  store.insert("a", {0.0, 1.0});
  const json dump = store.debug_dump();
  CHECK(dump["dimension"] == 2);
  CHECK(dump["count"] == 2);
  REQUIRE(dump["entries"].size() == 2);
  CHECK(dump["entries"][0]["id"] == "b");
  CHECK(dump["entries"][1]["id"] == "a");
  CHECK(dump["entries"][0]["values"] == json::array({1.0, 0.0}));
}

TEST_CASE("ingest embeds every document once, any thread count") {
  std::vector<Document> docs = {{"d1", "one"}, {"d2", "two"}, {"d3", "three"}};
  auto embed = [](const std::string& text) {
    return EmbeddingVector{static_cast<double>(text.size()), 1.0};
  };
  const auto serial = ingest(docs, embed, 1);
  const auto parallel = ingest(docs, embed, 4);
  CHECK(serial.ids() == parallel.ids());
  for (const auto& d : docs) CHECK(serial.vector_of(d.id) == parallel.vector_of(d.id));
  CHECK(serial.vector_of("d3") == EmbeddingVector{5.0, 1.0});

  CHECK_THROWS_AS(ingest({}, embed, 1), ValidationError);
}
