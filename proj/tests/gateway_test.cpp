#include "aloftrag/gateway.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "testutil.hpp"

using namespace aloftrag;

namespace {

GatewayOptions fast_options(int parallelism = 4) {
  GatewayOptions opt;
  opt.parallelism = parallelism;
  opt.retry.base_delay_ms = 0;
  return opt;
}

ChatRequest req(const std::string& system, const std::string& user) {
  ChatRequest r;
  r.system = system;
  r.user = user;
  return r;
}

}  // namespace

TEST(MockChat, ExactLookupReturnsCannedString) {
  auto mock = std::make_shared<MockChatBackend>();
  mock->add_exact("sys", "usr", "### Filter score\n9");
  Gateway gw(mock, std::make_shared<MockEmbedBackend>(), fast_options());
  ChatOutcome out = gw.chat_complete(req("sys", "usr"));
  ASSERT_TRUE(out.ok());
  EXPECT_EQ(out.text, "### Filter score\n9");
}

TEST(MockChat, MissWithoutDefaultIsPermanent) {
  auto mock = std::make_shared<MockChatBackend>();
  Gateway gw(mock, std::make_shared<MockEmbedBackend>(), fast_options());
  ChatOutcome out = gw.chat_complete(req("sys", "usr"));
  EXPECT_EQ(out.status, CallStatus::rejected);
  EXPECT_EQ(out.error, "mock_miss");
  EXPECT_TRUE(out.text.empty());
}

TEST(Gateway, RetriesTransientFailuresThenSucceeds) {
  auto mock = std::make_shared<MockChatBackend>();
  mock->add_exact("sys", "usr", "ok", /*fail_times=*/2);
  Gateway gw(mock, std::make_shared<MockEmbedBackend>(), fast_options());
  ChatOutcome out = gw.chat_complete(req("sys", "usr"));
  ASSERT_TRUE(out.ok());
  EXPECT_EQ(out.text, "ok");
  EXPECT_EQ(out.retries, 2);
  EXPECT_EQ(gw.total_retries(), 2);
}

TEST(Gateway, PermanentFailureIsNotRetried) {
  auto mock = std::make_shared<MockChatBackend>();
  mock->add_exact("sys", "usr", "never", /*fail_times=*/5, /*fail_permanent=*/true);
  Gateway gw(mock, std::make_shared<MockEmbedBackend>(), fast_options());
  ChatOutcome out = gw.chat_complete(req("sys", "usr"));
  EXPECT_EQ(out.status, CallStatus::rejected);
  EXPECT_EQ(out.retries, 0);
  EXPECT_EQ(mock->calls(), 1);
}

TEST(Gateway, TransportExhaustionNeverFabricatesText) {
  auto mock = std::make_shared<MockChatBackend>();
  mock->add_exact("sys", "usr", "unreachable", /*fail_times=*/100);
  Gateway gw(mock, std::make_shared<MockEmbedBackend>(), fast_options());
  ChatOutcome out = gw.chat_complete(req("sys", "usr"));
  EXPECT_EQ(out.status, CallStatus::transport_exhausted);
  EXPECT_TRUE(out.text.empty());
  EXPECT_EQ(out.retries, 2);  // 3 attempts = 2 retries
  EXPECT_EQ(mock->calls(), 3);
}

TEST(Gateway, BatchPreservesInputOrder) {
  auto backend = std::make_shared<testutil::InstrumentedChatBackend>(2);
  Gateway gw(backend, std::make_shared<MockEmbedBackend>(), fast_options(4));
  std::vector<ChatRequest> requests;
  for (int i = 0; i < 24; ++i) requests.push_back(req("s", "u" + std::to_string(i)));
  std::vector<ChatOutcome> out = gw.chat_batch(requests);
  ASSERT_EQ(out.size(), requests.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    ASSERT_TRUE(out[i].ok());
    EXPECT_EQ(out[i].text, "resp:u" + std::to_string(i));
  }
}

TEST(Gateway, InFlightWindowIsBounded) {
  auto backend = std::make_shared<testutil::InstrumentedChatBackend>(8);
  Gateway gw(backend, std::make_shared<MockEmbedBackend>(), fast_options(3));
  std::vector<ChatRequest> requests;
  for (int i = 0; i < 18; ++i) requests.push_back(req("s", "u" + std::to_string(i)));
  gw.chat_batch(requests);
  EXPECT_LE(backend->max_in_flight(), 3);
  EXPECT_GE(backend->max_in_flight(), 2);  // actually ran concurrently
}

TEST(Embeddings, DuplicateTextsHitTheCache) {
  auto embed = std::make_shared<MockEmbedBackend>(8);
  Gateway gw(std::make_shared<MockChatBackend>(), embed, fast_options());
  auto vecs = gw.embed_batch({"a", "a"});
  ASSERT_EQ(vecs.size(), 2u);
  EXPECT_EQ(vecs[0].values, vecs[1].values);
  auto again = gw.embed_batch({"a"});
  EXPECT_EQ(again[0].values, vecs[0].values);
  EXPECT_GE(gw.cache_hits(), 2L);
}

TEST(Embeddings, TableVectorsAreOrthogonalAfterNormalization) {
  auto embed = std::make_shared<MockEmbedBackend>(2);
  embed->set_vector("x", {1.0, 0.0});
  embed->set_vector("y", {0.0, 1.0});
  Gateway gw(std::make_shared<MockChatBackend>(), embed, fast_options());
  auto vecs = gw.embed_batch({"x", "y"});
  EXPECT_NEAR(vecs[0].dot(vecs[1]), 0.0, 1e-12);
  EXPECT_NEAR(vecs[0].dot(vecs[0]), 1.0, 1e-6);
}

TEST(Embeddings, AllVectorsUnitNorm) {
  Gateway gw(std::make_shared<MockChatBackend>(), std::make_shared<MockEmbedBackend>(16),
             fast_options());
  std::vector<std::string> texts;
  for (int i = 0; i < 40; ++i) texts.push_back("text " + std::to_string(i));
  for (const auto& v : gw.embed_batch(texts)) {
    EXPECT_NEAR(v.dot(v), 1.0, 1e-6);
    EXPECT_NEAR(v.norm, 1.0, 1e-6);
  }
}

TEST(Embeddings, DimensionMismatchAcrossBatchesIsFatal) {
  auto embed = std::make_shared<MockEmbedBackend>(16);
  embed->set_vector("two-dee", {0.6, 0.8});
  Gateway gw(std::make_shared<MockChatBackend>(), embed, fast_options());
  gw.embed_batch({"two-dee"});
  EXPECT_THROW(gw.embed_batch({"a hash-mode text"}), ConfigError);
}

TEST(Embeddings, ZeroVectorIsFatal) {
  auto embed = std::make_shared<MockEmbedBackend>(4);
  embed->set_vector("zero", {0.0, 0.0, 0.0, 0.0});
  Gateway gw(std::make_shared<MockChatBackend>(), embed, fast_options());
  EXPECT_THROW(gw.embed_batch({"zero"}), ConfigError);
}

TEST(Embeddings, EmptyInputIsAnError) {
  Gateway gw(std::make_shared<MockChatBackend>(), std::make_shared<MockEmbedBackend>(),
             fast_options());
  EXPECT_THROW(gw.embed_batch({}), DataError);
}

TEST(MockFixture, LoadsEntriesRulesAndEmbeddings) {
  auto dir = testutil::fresh_dir("aloftrag_fixture_test");
  json fixture;
  fixture["chat"]["entries"] = json::array({
      json{{"system", "s1"}, {"user", "u1"}, {"response", "r1"}},
  });
  fixture["chat"]["rules"] = json::array({
      json{{"system_contains", "RAG"}, {"response_template", "id {user_sha8}"}},
  });
  fixture["chat"]["default_response"] = "fallback";
  fixture["embedding"] = json{{"mode", "hash"},
                              {"dim", 4},
                              {"table", json{{"x", json::array({1.0, 0.0, 0.0, 0.0})}}}};
  std::string path = testutil::write_json(dir / "fixture.json", fixture);

  MockBackends mocks = load_mock_fixture(path);
  Gateway gw(mocks.chat, mocks.embed, fast_options());
  EXPECT_EQ(gw.chat_complete(req("s1", "u1")).text, "r1");
  std::string templated = gw.chat_complete(req("a RAG system", "payload")).text;
  EXPECT_EQ(templated, "id " + sha256_hex("payload").substr(0, 8));
  EXPECT_EQ(gw.chat_complete(req("other", "other")).text, "fallback");
  auto vecs = gw.embed_batch({"x", "anything else"});
  EXPECT_EQ(vecs[0].values.size(), 4u);
  EXPECT_NEAR(vecs[0].values[0], 1.0, 1e-9);
  std::filesystem::remove_all(dir);
}
