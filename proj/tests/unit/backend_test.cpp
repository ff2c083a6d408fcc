#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <thread>

#include "../support/harness.hpp"
#include "knobtuner/errors.hpp"

using namespace knobtuner;
using knobtuner::testing::HarnessOptions;
using knobtuner::testing::make_harness;

namespace {

std::unique_ptr<knobtuner::testing::Harness> oracle_harness(double alpha, double noise, std::uint64_t seed = 1) {
  HarnessOptions o;
  o.knobs = 24;
  o.clusters = 4;
  o.oracle.alpha = alpha;
  o.oracle.noise = noise;
  o.oracle.seed = seed;
  return make_harness(o);
}

SearchState after_plan(const knobtuner::testing::Harness& h, DecisionBackend& backend) {
  const SearchState s0 = initial_state(h.bundle.space);
  const auto plan = propose(backend, build_prompt(s0, ActionKind::Plan, h.ctx), 1);
  return apply_action(s0, plan.at(0), h.ctx);
}

}  // namespace

TEST(ExtractJson, StripsFencesAndProse) {
  EXPECT_EQ(extract_json("```json\n{\"a\": 1}\n```"), (nlohmann::json{{"a", 1}}));
  EXPECT_EQ(extract_json("Sure, here it is: {\"a\": [1, 2]} hope that helps"), (nlohmann::json{{"a", {1, 2}}}));
  EXPECT_EQ(extract_json("[1, 2]"), nlohmann::json::array({1, 2}));
  try {
    extract_json("no json at all");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
  }
}

TEST(Oracle, TwoHalfStepsCloseThreeQuartersOfTheGap) {
  auto h = oracle_harness(0.5, 0.0);
  auto& oracle = dynamic_cast<OracleBackend&>(*h->backend);
  int checked = 0;
  for (const Knob& k : h->bundle.space.knobs()) {
    if (!std::holds_alternative<RealRange>(k.domain)) continue;
    const double d = *as_number(k.default_value);
    const double o = *as_number(h->model->optimum().at(k.name));
    const Value once = oracle.step_toward(k, k.default_value, 0.5);
    const Value twice = oracle.step_toward(k, once, 0.5);
    EXPECT_NEAR(*as_number(twice), d + 0.75 * (o - d), 1e-9 * std::max(1.0, std::abs(o))) << k.name;
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(Oracle, IntegerStepsRoundTowardTarget) {
  auto h = oracle_harness(0.5, 0.0);
  auto& oracle = dynamic_cast<OracleBackend&>(*h->backend);
  for (const Knob& k : h->bundle.space.knobs()) {
    if (!std::holds_alternative<IntRange>(k.domain)) continue;
    const double o = *as_number(h->model->optimum().at(k.name));
    Value v = k.default_value;
    for (int i = 0; i < 64 && !values_equal(v, h->model->optimum().at(k.name)); ++i) v = oracle.step_toward(k, v, 0.5);
    EXPECT_DOUBLE_EQ(*as_number(v), o) << k.name;  // converges, never stalls short of the target
  }
}

TEST(Oracle, FullStepLandsHeaviestClusterOnOptimum) {
  auto h = oracle_harness(1.0, 0.0);
  const SearchState s = after_plan(*h, *h->backend);
  const std::string heaviest = h->model->cluster_weights().front().first;
  ASSERT_EQ(s.plan->cluster_order.front(), heaviest);
  const auto cands = propose(*h->backend, build_prompt(s, ActionKind::ClusterTune, h->ctx), 1);
  ASSERT_EQ(cands.size(), 1u);
  const auto& p = std::get<ClusterPayload>(cands[0].payload);
  EXPECT_EQ(p.cluster, heaviest);
  const SearchState next = apply_action(s, cands[0], h->ctx);
  for (const auto& name : h->bundle.space.knobs_in_cluster(heaviest)) {
    EXPECT_TRUE(values_equal(next.config.at(name), h->model->optimum().at(name))) << name;
  }
}

TEST(Oracle, SameSeedSameProposals) {
  auto a = oracle_harness(0.8, 0.1, 42);
  auto b = oracle_harness(0.8, 0.1, 42);
  const SearchState sa = after_plan(*a, *a->backend);
  const SearchState sb = after_plan(*b, *b->backend);
  for (int i = 0; i < 5; ++i) {
    const auto ca = propose(*a->backend, build_prompt(sa, ActionKind::SingleKnob, a->ctx), 1);
    const auto cb = propose(*b->backend, build_prompt(sb, ActionKind::SingleKnob, b->ctx), 1);
    ASSERT_EQ(ca.size(), 1u);
    EXPECT_EQ(ca[0].identity(), cb[0].identity());
  }
}

TEST(Oracle, ThreeSamplesOnSingleKnobAreDistinctAndImprove) {
  auto h = oracle_harness(0.8, 0.1, 3);
  const SearchState s = after_plan(*h, *h->backend);
  const auto cands = propose(*h->backend, build_prompt(s, ActionKind::SingleKnob, h->ctx), 3);
  ASSERT_EQ(cands.size(), 3u);
  std::set<std::string> ids;
  for (const auto& c : cands) {
    ids.insert(c.identity());
    const auto& p = std::get<SingleKnobPayload>(c.payload);
    EXPECT_LE(h->model->knob_loss(p.knob, p.value), h->model->knob_loss(p.knob, s.config.at(p.knob))) << p.knob;
  }
  EXPECT_EQ(ids.size(), 3u);
}

TEST(Oracle, ValidationFlagsBudgetOverruns) {
  auto h = oracle_harness(0.8, 0.0);
  ASSERT_FALSE(h->model->constraints().empty());
  const ResourceConstraint& c = h->model->constraints().front();
  const Knob& k = h->bundle.space.knob(c.knob);
  SearchState s = after_plan(*h, *h->backend);
  Value over = snap_to_domain(k, Value{c.cap + 1e9});
  ASSERT_GT(*as_number(over), c.cap);
  s.config = merge_subconfig(h->bundle.space, s.config, {{c.knob, over}});
  s.tuned.insert(c.knob);
  s.last_action = ActionKind::SingleKnob;
  const auto cands = propose(*h->backend, build_prompt(s, ActionKind::Validate, h->ctx), 1);
  const auto& v = std::get<ValidatePayload>(cands.at(0).payload);
  EXPECT_FALSE(v.valid);
  ASSERT_FALSE(v.issues.empty());
  EXPECT_EQ(v.issues[0].knob, c.knob);
  EXPECT_EQ(v.issues[0].category, IssueCategory::LogicalConflict);
}

TEST(RandomBackend, DeterministicForSeed) {
  HarnessOptions o;
  o.knobs = 16;
  o.clusters = 3;
  o.policy = knobtuner::testing::PolicyKind::Random;
  o.random.seed = 9;
  auto a = make_harness(o);
  auto b = make_harness(o);
  const SearchState sa = after_plan(*a, *a->backend);
  const SearchState sb = after_plan(*b, *b->backend);
  const PromptBundle pa = build_prompt(sa, ActionKind::ClusterTune, a->ctx);
  const PromptBundle pb = build_prompt(sb, ActionKind::ClusterTune, b->ctx);
  EXPECT_EQ(a->backend->query(pa, 4), b->backend->query(pb, 4));
}

TEST(Propose, CollapsesDuplicates) {
  auto h = oracle_harness(0.8, 0.0);
  const SearchState s = after_plan(*h, *h->backend);
  const std::string knob = h->bundle.space.knobs().front().name;
  const std::string reply = nlohmann::json{{"knob", knob}, {"value", value_to_json(h->bundle.space.knobs().front().default_value)}}.dump();
  ScriptedBackend scripted({reply, reply, "not json"});
  const auto cands = propose(scripted, build_prompt(s, ActionKind::SingleKnob, h->ctx), 3);
  EXPECT_EQ(cands.size(), 1u);
  EXPECT_EQ(scripted.usage().interaction_count, 1u);
  EXPECT_GT(scripted.usage().prompt_token_estimate, 0u);
}

TEST(Propose, AllRejected) {
  auto h = oracle_harness(0.8, 0.0);
  const SearchState s = after_plan(*h, *h->backend);
  ScriptedBackend scripted({"{}", "[]", "nope"});
  try {
    propose(scripted, build_prompt(s, ActionKind::SingleKnob, h->ctx), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllCandidatesRejected);
  }
}

TEST(Propose, ArrayReplyContributesEachElement) {
  auto h = oracle_harness(0.8, 0.0);
  const SearchState s = after_plan(*h, *h->backend);
  nlohmann::json arr = nlohmann::json::array();
  for (const Knob& k : h->bundle.space.knobs()) {
    if (arr.size() == 3) break;
    arr.push_back({{"knob", k.name}, {"value", value_to_json(k.default_value)}});
  }
  ScriptedBackend scripted({arr.dump()}, false);
  EXPECT_EQ(propose(scripted, build_prompt(s, ActionKind::SingleKnob, h->ctx), 3).size(), 3u);
}

TEST(ScriptedBackend, StateRoundTripAndExhaustion) {
  ScriptedBackend a({"one", "two", "three"});
  EXPECT_EQ(a.complete("p", 1), std::vector<std::string>{"one"});
  ScriptedBackend b({"one", "two", "three"});
  b.load_state(a.save_state());
  EXPECT_EQ(b.remaining(), 2u);
  EXPECT_EQ(b.complete("p", 2), (std::vector<std::string>{"two", "three"}));
  try {
    b.complete("p", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
}

namespace {

// Chat-completion endpoint on a loopback port. The handler decides each
// response from the request count.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(std::function<void(int, httplib::Response&)> respond) : respond_(std::move(respond)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body_ = req.body;
      respond_(++requests_, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
  int requests() const { return requests_; }
  const std::string& last_body() const { return last_body_; }

 private:
  httplib::Server server_;
  std::function<void(int, httplib::Response&)> respond_;
  std::atomic<int> requests_{0};
  std::string last_body_;
  int port_ = 0;
  std::thread thread_;
};

nlohmann::json choices(const std::vector<std::string>& texts) {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& t : texts) c.push_back({{"message", {{"role", "assistant"}, {"content", t}}}});
  return {{"choices", c}, {"usage", {{"prompt_tokens", 100}, {"completion_tokens", 20}}}};
}

RemoteOptions options_for(const FakeEndpoint& ep, std::vector<std::chrono::milliseconds>* slept) {
  RemoteOptions o;
  o.url = ep.url();
  o.model = "test-model";
  o.api_key = "k";
  o.sleep = [slept](std::chrono::milliseconds d) { slept->push_back(d); };
  return o;
}

}  // namespace

TEST(RemoteBackend, RetriesTransientFailuresWithBackoff) {
  FakeEndpoint ep([](int n, httplib::Response& res) {
    if (n < 3) {
      res.status = 503;
      return;
    }
    res.set_content(choices({"hello"}).dump(), "application/json");
  });
  std::vector<std::chrono::milliseconds> slept;
  RemoteBackend backend(options_for(ep, &slept));
  EXPECT_EQ(backend.complete("hi", 1), std::vector<std::string>{"hello"});
  EXPECT_EQ(ep.requests(), 3);
  EXPECT_EQ(slept, (std::vector<std::chrono::milliseconds>{std::chrono::seconds(1), std::chrono::seconds(4)}));
  EXPECT_EQ(backend.usage().prompt_token_estimate, 100u);
  const auto body = nlohmann::json::parse(ep.last_body());
  EXPECT_EQ(body["model"], "test-model");
}

TEST(RemoteBackend, GivesUpAfterRetries) {
  FakeEndpoint ep([](int, httplib::Response& res) { res.status = 500; });
  std::vector<std::chrono::milliseconds> slept;
  RemoteBackend backend(options_for(ep, &slept));
  try {
    backend.complete("hi", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
  EXPECT_EQ(ep.requests(), 3);
}

TEST(RemoteBackend, NonSchemaRepliesAreAllRejected) {
  FakeEndpoint ep([](int, httplib::Response& res) {
    res.set_content(choices({"I think you should raise it.", "{\"oops\": true}", "```\nnothing\n```"}).dump(), "application/json");
  });
  std::vector<std::chrono::milliseconds> slept;
  RemoteBackend backend(options_for(ep, &slept));
  auto h = oracle_harness(0.8, 0.0);
  const SearchState s = after_plan(*h, *h->backend);
  try {
    propose(backend, build_prompt(s, ActionKind::SingleKnob, h->ctx), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllCandidatesRejected);
  }
}

TEST(RemoteBackend, RejectsMalformedUrl) { EXPECT_THROW(RemoteBackend(RemoteOptions{"ftp://x", "m"}), Error); }
