#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "support.hpp"
#include "voxseq/service.hpp"

namespace voxseq {
namespace {

using nlohmann::json;

RunConfig service_config() { return config_from_json(json::parse(R"({"model": {"model_dim": 8, "heads": 2, "layers": 1}})")); }

Service loaded_service() {
  const RunConfig cfg = service_config();
  SequenceModel avd(cfg.model_config(ModelKind::AVD));
  FlowModel flow(cfg.flow_config());
  Rng rng(3);
  for (const auto& [_, t] : flow.params()) t.node()->value = testing::random_matrix(rng, t.rows(), t.cols(), -0.3, 0.3);
  Service s(cfg);
  s.load(std::move(avd), std::move(flow));
  return s;
}

json expert_states(std::uint64_t seed, std::size_t count) {
  const DesignSequence seq = replay(expert_record(seed));
  json arr = json::array();
  for (std::size_t i = 0; i < count && i < seq.states.size(); ++i) arr.push_back(state_to_api(seq.states[i * 7]));
  return arr;
}

TEST(ApiState, RoundTripIsLossless) {
  const DesignSequence seq = replay(expert_record(4));
  for (const auto& s : {seq.states.front(), seq.states[seq.states.size() / 2], seq.states.back()}) {
    const json j = state_to_api(s);
    EXPECT_EQ(state_from_api(json::parse(j.dump())), s);
    EXPECT_EQ(j["rooms"].size(), 1000u);
  }
}

TEST(ApiState, DefaultsToUniformPartition) {
  json j = {{"dims", {{"nx", 2}, {"ny", 2}, {"nz", 1}}}, {"rooms", {0, 6, 7, 1}}};
  const DesignState s = state_from_api(j);
  EXPECT_EQ(s.partition(), GridPartition::uniform({2, 2, 1}));
  EXPECT_EQ(s.at(2), RoomType::Lobby);
}

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ApiError& e) {
    return e.status();
  }
  return 200;
}

TEST(ApiState, MalformedIs400ShapeIs422) {
  EXPECT_EQ(status_of([] { state_from_api(json::parse(R"({"rooms": []})")); }), 400);
  EXPECT_EQ(status_of([] { state_from_api(json::parse(R"({"dims": {"nx": "a"}, "rooms": []})")); }), 400);
  EXPECT_EQ(status_of([] { state_from_api(json::parse(R"({"dims": {"nx": 1, "ny": 1, "nz": 1}, "rooms": [9]})")); }), 400);
  EXPECT_EQ(status_of([] { state_from_api(json::parse(R"({"dims": {"nx": 1, "ny": 1, "nz": 1}, "rooms": [0.5]})")); }), 400);
  EXPECT_EQ(status_of([] { state_from_api(json::parse(R"({"dims": {"nx": 1, "ny": 1, "nz": 2}, "rooms": [1]})")); }), 422);
  EXPECT_EQ(status_of([] { state_from_api(json::parse(R"({"dims": {"nx": 0, "ny": 1, "nz": 1}, "rooms": []})")); }), 422);
}

TEST(Service, NotReadyIs503) {
  Service s(service_config());
  EXPECT_FALSE(s.ready());
  EXPECT_EQ(s.health().status, 503);
  EXPECT_EQ(s.health().body["status"], "loading");
  EXPECT_EQ(s.autocomplete("{}").status, 503);
  EXPECT_EQ(s.preference("{}").status, 503);
  EXPECT_EQ(s.expert("1").status, 503);
}

TEST(Service, HealthReportsCheckpointHashes) {
  const Service s = loaded_service();
  const auto h = s.health();
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body["status"], "ready");
  EXPECT_EQ(h.body["checkpoints"]["encoder"].get<std::string>().size(), 16u);
  EXPECT_EQ(loaded_service().health().body, h.body);
}

TEST(Service, RejectsNonAvdEncoder) {
  const RunConfig cfg = service_config();
  Service s(cfg);
  EXPECT_THROW(s.load(SequenceModel(cfg.model_config(ModelKind::VDR)), FlowModel(cfg.flow_config())), UsageError);
}

TEST(Autocomplete, ExtendsToHorizonKeepingPrefix) {
  const Service s = loaded_service();
  const json states = expert_states(5, 3);
  const auto r = s.autocomplete(json{{"states", states}, {"horizon", 7}}.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  ASSERT_EQ(r.body["states"].size(), 7u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.body["states"][i], states[i]);
  for (std::size_t i = 3; i < 7; ++i) {
    const DesignState prev = state_from_api(r.body["states"][i - 1]);
    const DesignState next = state_from_api(r.body["states"][i]);
    for (std::size_t v = 0; v < 1000; ++v) {
      if (prev.at(v) != RoomType::Empty) {
        EXPECT_NE(next.at(v), RoomType::Empty);
      }
    }
  }
}

TEST(Autocomplete, EchoWhenHorizonEqualsLength) {
  const Service s = loaded_service();
  const json states = expert_states(6, 4);
  const auto r = s.autocomplete(json{{"states", states}, {"horizon", 4}}.dump());
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["states"], states);
}

TEST(Autocomplete, ErrorStatuses) {
  const Service s = loaded_service();
  const json states = expert_states(6, 2);
  EXPECT_EQ(s.autocomplete("not json").status, 400);
  EXPECT_EQ(s.autocomplete("[1, 2]").status, 400);
  EXPECT_EQ(s.autocomplete(json{{"horizon", 5}}.dump()).status, 400);
  EXPECT_EQ(s.autocomplete(json{{"states", states}}.dump()).status, 400);
  EXPECT_EQ(s.autocomplete(json{{"states", json::array()}, {"horizon", 5}}.dump()).status, 400);
  EXPECT_EQ(s.autocomplete(json{{"states", states}, {"horizon", 1}}.dump()).status, 422);
  EXPECT_EQ(s.autocomplete(json{{"states", states}, {"horizon", 201}}.dump()).status, 422);
  json small = {{"dims", {{"nx", 2}, {"ny", 2}, {"nz", 2}}}, {"rooms", std::vector<int>(8, 0)}};
  EXPECT_EQ(s.autocomplete(json{{"states", {small}}, {"horizon", 3}}.dump()).status, 422);
  json bad = states;
  bad[1]["rooms"][0] = 12;
  EXPECT_EQ(s.autocomplete(json{{"states", bad}, {"horizon", 5}}.dump()).status, 400);
}

TEST(Preference, WinnerNamingAntisymmetryAndTie) {
  const Service s = loaded_service();
  const json a = expert_states(7, 5), b = expert_states(8, 5);
  const auto ab = s.preference(json{{"a", a}, {"b", b}}.dump());
  const auto ba = s.preference(json{{"a", b}, {"b", a}}.dump());
  ASSERT_EQ(ab.status, 200) << ab.body.dump();
  EXPECT_EQ(ab.body["scores"]["a"], ba.body["scores"]["b"]);
  const std::string w = ab.body["winner"];
  EXPECT_TRUE(w == "a" || w == "b");
  EXPECT_EQ(ba.body["winner"], w == "a" ? "b" : "a");
  EXPECT_EQ(s.preference(json{{"a", a}, {"b", a}}.dump()).body["winner"], "tie");
  EXPECT_EQ(s.preference(json{{"a", a}}.dump()).status, 400);
}

TEST(Preference, LongSequencesAreSubsampled) {
  const Service s = loaded_service();
  const DesignSequence seq = replay(expert_record(9));
  json arr = json::array();
  for (const auto& st : seq.states) arr.push_back(state_to_api(st));
  ASSERT_GT(arr.size(), 41u);
  EXPECT_EQ(s.preference(json{{"a", arr}, {"b", arr}}.dump()).status, 200);
}

TEST(Expert, SeedValidationAndDeterminism) {
  const Service s = loaded_service();
  EXPECT_EQ(s.expert("").status, 400);
  EXPECT_EQ(s.expert("abc").status, 400);
  EXPECT_EQ(s.expert("-1").status, 400);
  EXPECT_EQ(s.expert("1e3").status, 400);
  const auto r = s.expert("12");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["states"].size(), r.body["actions"].size() + 1);
  EXPECT_EQ(record_from_json(r.body), expert_record(12, service_config().dataset_config()));
  EXPECT_EQ(s.expert("12").body, r.body);
}

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::make_unique<testing::TempDir>("static");
    write_text(dir_->path() / "index.html", "<html>voxseq</html>");
    service_ = std::make_unique<Service>(loaded_service());
    service_->mount(server_, dir_->path());
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

  std::unique_ptr<testing::TempDir> dir_;
  std::unique_ptr<Service> service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(Http, RoutesAndStatuses) {
  auto c = client();
  auto health = c.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->get_header_value("Content-Type"), "application/json");
  auto expert = c.Get("/api/expert?seed=3");
  ASSERT_TRUE(expert);
  EXPECT_EQ(expert->status, 200);
  EXPECT_EQ(c.Get("/api/expert?seed=x")->status, 400);
  EXPECT_EQ(c.Get("/api/expert")->status, 400);
  EXPECT_EQ(c.Post("/api/autocomplete", "{", "application/json")->status, 400);
  const json states = json::parse(expert->body)["states"];
  const json body = {{"states", {states[0], states[1]}}, {"horizon", 2}};
  auto echo = c.Post("/api/autocomplete", body.dump(), "application/json");
  ASSERT_TRUE(echo);
  EXPECT_EQ(echo->status, 200);
  EXPECT_EQ(json::parse(echo->body)["states"], body["states"]);
  auto page = c.Get("/index.html");
  ASSERT_TRUE(page);
  EXPECT_EQ(page->status, 200);
  EXPECT_EQ(page->body, "<html>voxseq</html>");
}

TEST_F(Http, ConcurrentRequestsMatchSerial) {
  const json a = expert_states(10, 4), b = expert_states(11, 4);
  const std::string body = json{{"a", a}, {"b", b}}.dump();
  const std::string serial = client().Post("/api/preference", body, "application/json")->body;
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 6; ++i) {
    futures.push_back(std::async(std::launch::async, [&] {
      auto res = client().Post("/api/preference", body, "application/json");
      return res ? res->body : std::string();
    }));
  }
  for (auto& f : futures) EXPECT_EQ(f.get(), serial);
}

}  // namespace
}  // namespace voxseq
