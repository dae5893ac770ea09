#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "cprobe/annotation.hpp"
#include "cprobe/error.hpp"
#include "cprobe/gateway.hpp"
#include "cprobe/metrics.hpp"
#include "doctest.h"
#include "httplib.h"
#include "support.hpp"

using namespace cprobe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io;
}

ModelProfile persona(const std::string& id, double idv, double pdi, double noise, std::uint64_t seed) {
  return model_profile_from_json(test::persona_model(id, idv, pdi, noise, seed));
}

LexiconSet lexicons() { return load_lexicons(test::data_dir() / "lexicons.json"); }
fs::path bank() { return test::data_dir() / "persona_templates.json"; }

GatewayOptions fast_retries() {
  GatewayOptions o;
  o.backoff_base = std::chrono::milliseconds(1);
  return o;
}

// Chat-completions double on an ephemeral port.
struct MockProvider {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  std::string last_auth;
  json last_body;
  std::mutex mu;

  MockProvider() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockProvider() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
  void note(const httplib::Request& req) {
    std::lock_guard lock(mu);
    last_auth = req.get_header_value("Authorization");
    last_body = json::parse(req.body);
  }
};

ModelProfile http_profile(const MockProvider& mock) {
  return model_profile_from_json({{"model_id", "remote-1"},
                                  {"provider_kind", "http_chat"},
                                  {"endpoint", mock.url("/v1/chat/completions")},
                                  {"embedding_endpoint", mock.url("/v1/embeddings")},
                                  {"remote_model", "gpt-test"},
                                  {"api_key_env", "CPROBE_TEST_KEY"},
                                  {"timeout_s", 5.0},
                                  {"supports_logprobs", true},
                                  {"supports_embeddings", true}});
}

}  // namespace

TEST_CASE("query parameters default to the documented protocol") {
  QueryParams p;
  CHECK(p.temperature == doctest::Approx(0.7));
  CHECK(p.max_tokens == 512);
  CHECK(p.prompt_template ==
        "Consider the following scenario: {probe}. What is the best course of action? Explain your reasoning.");
  CHECK_NOTHROW(p.validate());
  CHECK(query_params_from_json(to_json(p)) == p);
  CHECK(query_params_from_json(to_json(p)).digest() == p.digest());
}

TEST_CASE("query parameters are validated") {
  QueryParams p;
  p.temperature = 2.5;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::precondition);
  p = {};
  p.max_tokens = 0;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::precondition);
  p = {};
  p.prompt_template = "no placeholder";
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::precondition);
  p.prompt_template = "{probe} {probe}";
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::precondition);
}

TEST_CASE("params digest changes with any field") {
  QueryParams a, b;
  CHECK(a.digest() == b.digest());
  b.temperature = 0.0;
  CHECK(a.digest() != b.digest());
  b = {};
  b.max_tokens = 256;
  CHECK(a.digest() != b.digest());
}

TEST_CASE("render_prompt substitutes the language variant") {
  ProbeDataset ds = test::synthetic_dataset(1, true);
  const Probe& p = ds.probes[0];
  QueryParams params;
  std::string en = render_prompt(p, "en", params);
  CHECK(en == "Consider the following scenario: Synthetic IDV-VDP-0 scenario. What is the best course of action? "
              "Explain your reasoning.");
  CHECK(render_prompt(p, "zh-Hans", params).find("合成情景") != std::string::npos);
  CHECK(code_of([&] { render_prompt(p, "fr", params); }) == ErrorCode::missing_variant);
}

TEST_CASE("replay cache persists and survives a torn tail") {
  fs::path dir = test::fresh_dir("gateway-cache");
  fs::path file = dir / "responses.jsonl";
  ModelResponse r;
  r.model_id = "m";
  r.probe_id = "p";
  r.language = "en";
  r.params_digest = QueryParams{}.digest();
  r.response_id = response_id_for(r.key());
  r.text = "hello";
  r.created_at = "2026-01-01T00:00:00Z";
  {
    ReplayCache cache(file);
    cache.record_response(r);
    ModelResponse again = r;
    again.text = "overwritten?";
    cache.record_response(again);
    CHECK(cache.find_response(r.key())->text == "hello");
  }
  {
    std::ofstream out(file, std::ios::app);
    out << R"({"kind":"response","probe_id":"tor)";
  }
  {
    ReplayCache ro(file, /*read_only=*/true);
    CHECK(ro.response_count() == 1);
    CHECK(code_of([&] { ro.record_response(r); }) == ErrorCode::io);
  }
  ReplayCache cache(file);
  REQUIRE(cache.find_response(r.key()));
  CHECK(*cache.find_response(r.key()) == r);
  ModelResponse r2 = r;
  r2.sample = 1;
  r2.response_id = response_id_for(r2.key());
  cache.record_response(r2);
  ReplayCache reopened(file);
  CHECK(reopened.response_count() == 2);
}

TEST_CASE("warm cache answers without provider calls") {
  fs::path dir = test::fresh_dir("gateway-warm");
  ProbeDataset ds = test::synthetic_dataset(3);
  ModelProfile m = persona("W", 1.2, -1.0, 0.5, 7);
  std::vector<std::string> first;
  {
    ReplayCache cache(dir / "responses.jsonl");
    Gateway gw(cache, lexicons(), bank());
    for (const auto& p : ds.probes) first.push_back(gw.query_model(m, p, "en", {}).text);
    CHECK(gw.provider_calls() == ds.probes.size());
  }
  ReplayCache cache(dir / "responses.jsonl");
  GatewayOptions o;
  o.replay_only = true;
  Gateway gw(cache, lexicons(), bank(), o);
  for (std::size_t i = 0; i < ds.probes.size(); ++i) CHECK(gw.query_model(m, ds.probes[i], "en", {}).text == first[i]);
  CHECK(gw.provider_calls() == 0);
  CHECK(code_of([&] { gw.query_model(m, ds.probes[0], "en", {}, 5); }) == ErrorCode::cache_miss);
}

TEST_CASE("replay profiles read a source cache and never call out") {
  fs::path dir = test::fresh_dir("gateway-replay");
  ProbeDataset ds = test::synthetic_dataset(2);
  ModelProfile w = persona("W", 1.0, 1.0, 0.0, 1);
  {
    ReplayCache source(dir / "source.jsonl");
    Gateway gw(source, lexicons(), bank());
    gw.query_model(w, ds.probes[0], "en", {});
  }
  ModelProfile replay = model_profile_from_json(
      {{"model_id", "W"}, {"provider_kind", "replay"}, {"cache_path", (dir / "source.jsonl").string()}});
  ReplayCache cache(dir / "run.jsonl");
  Gateway gw(cache, lexicons(), bank());
  CHECK_FALSE(gw.query_model(replay, ds.probes[0], "en", {}).text.empty());
  CHECK(cache.response_count() == 1);
  CHECK(code_of([&] { gw.query_model(replay, ds.probes[1], "en", {}); }) == ErrorCode::cache_miss);
  CHECK(gw.provider_calls() == 0);
}

TEST_CASE("persona output is deterministic per seed and key") {
  ProbeDataset ds = test::synthetic_dataset(5, true);
  auto a = make_persona_provider(persona("W", 1.2, -1.0, 0.5, 99), bank(), lexicons());
  auto b = make_persona_provider(persona("W", 1.2, -1.0, 0.5, 99), bank(), lexicons());
  auto c = make_persona_provider(persona("W", 1.2, -1.0, 0.5, 100), bank(), lexicons());
  int differ = 0;
  for (const auto& p : ds.probes) {
    for (int s = 0; s < 3; ++s) {
      CompletionRequest req{&p, "en", s, render_prompt(p, "en", {}), {}};
      Completion x = a->complete(req), y = b->complete(req), z = c->complete(req);
      CHECK(x.text == y.text);
      CHECK(x.ground_truth == y.ground_truth);
      if (x.ground_truth->latent != z.ground_truth->latent) ++differ;
      CompletionRequest zh{&p, "zh-Hans", s, render_prompt(p, "zh-Hans", {}), {}};
      CHECK(a->complete(zh).ground_truth == x.ground_truth);
    }
  }
  CHECK(differ > 0);
}

TEST_CASE("auto-scorer reads back the persona's planted score in both languages") {
  ProbeDataset ds = test::synthetic_dataset(60, true);
  LexiconSet lex = lexicons();
  auto prov = make_persona_provider(persona("W", 0.3, -0.4, 1.5, 3), bank(), lex);
  std::set<int> seen;
  for (const auto& p : ds.probes) {
    for (const char* lang : {"en", "zh-Hans"}) {
      Completion c = prov->complete({&p, lang, 0, render_prompt(p, lang, {}), {}});
      ModelResponse r;
      r.text = c.text;
      CHECK(lexicon_auto_score(r, lex.at(p.dimension)).value() == c.ground_truth->pole_score);
      seen.insert(c.ground_truth->pole_score);
    }
  }
  CHECK(seen.size() == 5);
}

TEST_CASE("noise-free persona scores are monotone in the bias") {
  ProbeDataset ds = test::synthetic_dataset(9);
  for (const auto& p : ds.probes) {
    int prev = -3;
    for (double bias = -2.0; bias <= 2.0; bias += 0.25) {
      auto prov = make_persona_provider(persona("M", bias, bias, 0.0, 11), bank(), lexicons());
      int s = prov->complete({&p, "en", 0, render_prompt(p, "en", {}), {}}).ground_truth->pole_score;
      CHECK(s >= prev);
      CHECK(s >= -2);
      CHECK(s <= 2);
      prev = s;
    }
  }
}

TEST_CASE("every template pole sentence carries exactly one keyword of its pole") {
  json doc = json::parse(read_text_file(bank()));
  LexiconSet lex = lexicons();
  for (auto dit = doc.begin(); dit != doc.end(); ++dit) {
    const TargetLexicon& l = lex.at(*parse_dimension(dit.key()));
    for (auto lit = dit->begin(); lit != dit->end(); ++lit) {
      for (const char* pole : {"pole_a", "pole_b"}) {
        for (const auto& s : lit->at(pole)) {
          PoleCounts c = count_poles(s.get<std::string>(), l);
          INFO(s.get<std::string>());
          CHECK(c.pole_a + c.pole_b == 1);
          CHECK((std::string(pole) == "pole_a" ? c.pole_a : c.pole_b) == 1);
        }
      }
      for (const char* filler : {"open", "close"}) {
        for (const auto& s : lit->at(filler)) {
          PoleCounts c = count_poles(s.get<std::string>(), l);
          CHECK(c.pole_a + c.pole_b == 0);
        }
      }
    }
  }
}

TEST_CASE("persona log-probabilities encode the bias symmetrically") {
  LexiconSet lex = lexicons();
  const TargetLexicon& pdi = lex.at(Dimension::pdi);
  REQUIRE(pdi.pole_a.size() == pdi.pole_b.size());
  std::vector<std::string> targets(pdi.pole_a.begin(), pdi.pole_a.end());
  targets.insert(targets.end(), pdi.pole_b.begin(), pdi.pole_b.end());
  for (double bias : {-1.7, -0.4, 0.0, 0.8, 1.9}) {
    auto pos = make_persona_provider(persona("M", 0.0, bias, 0.0, 1), bank(), lex);
    auto neg = make_persona_provider(persona("M", 0.0, -bias, 0.0, 1), bank(), lex);
    double up = preference_log_ratio(pos->logprobs("prompt", targets).logprobs, pdi);
    double down = preference_log_ratio(neg->logprobs("prompt", targets).logprobs, pdi);
    CHECK(up == doctest::Approx(2 * bias).epsilon(1e-12));
    CHECK(up == doctest::Approx(-down).epsilon(1e-12));
    for (const auto& [w, lp] : pos->logprobs("prompt", targets).logprobs) CHECK(lp < 0.0);
  }
}

TEST_CASE("capabilities are enforced by the gateway") {
  fs::path dir = test::fresh_dir("gateway-capability");
  ReplayCache cache(dir / "responses.jsonl");
  Gateway gw(cache, lexicons(), bank());
  json j = test::persona_model("M", 0, 0, 0, 1);
  j["supports_logprobs"] = false;
  j["supports_embeddings"] = false;
  ModelProfile m = model_profile_from_json(j);
  CHECK(code_of([&] { gw.query_logprobs(m, "p", {"obedience"}); }) == ErrorCode::capability);
  CHECK(code_of([&] { gw.embed_text(m, "text"); }) == ErrorCode::capability);
  ModelProfile full = persona("M", 0, 0, 0, 1);
  CHECK(code_of([&] { gw.embed_text(full, ""); }) == ErrorCode::precondition);
  EmbeddingVector v = gw.embed_text(full, "some text");
  CHECK(v.values.size() == 64);
  CHECK(gw.embed_text(full, "some text").values == v.values);
  CHECK(gw.provider_calls() == 1);
}

TEST_CASE("profiles reject incomplete provider configuration") {
  CHECK(code_of([] { model_profile_from_json({{"model_id", "x"}, {"provider_kind", "http_chat"}}); }) ==
        ErrorCode::schema);
  CHECK(code_of([] {
          model_profile_from_json({{"model_id", "x"}, {"provider_kind", "synthetic_persona"}, {"persona", json::object()}});
        }) == ErrorCode::schema);
  CHECK(code_of([] { model_profile_from_json({{"model_id", "x"}, {"provider_kind", "telepathy"}}); }) ==
        ErrorCode::schema);
}

TEST_CASE("HTTP provider speaks chat completions and retries transient failures") {
  MockProvider mock;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    mock.note(req);
    if (++mock.hits < 3) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Help the team first."}}]})",
                    "application/json");
  });
  mock.start();
  ::setenv("CPROBE_TEST_KEY", "sk-test", 1);
  fs::path dir = test::fresh_dir("gateway-http");
  ReplayCache cache(dir / "responses.jsonl");
  Gateway gw(cache, lexicons(), bank(), fast_retries());
  ProbeDataset ds = test::synthetic_dataset(1);
  ModelResponse r = gw.query_model(http_profile(mock), ds.probes[0], "en", {});
  CHECK(r.text == "Help the team first.");
  CHECK(mock.hits == 3);
  CHECK(gw.provider_calls() == 3);
  CHECK(mock.last_auth == "Bearer sk-test");
  CHECK(mock.last_body["model"] == "gpt-test");
  CHECK(mock.last_body["temperature"] == 0.7);
  CHECK(mock.last_body["max_tokens"] == 512);
  CHECK(mock.last_body["messages"][0]["content"] == render_prompt(ds.probes[0], "en", {}));
  gw.query_model(http_profile(mock), ds.probes[0], "en", {});
  CHECK(mock.hits == 3);
  ::unsetenv("CPROBE_TEST_KEY");
}

TEST_CASE("HTTP provider gives up after the configured attempts") {
  MockProvider mock;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++mock.hits;
    res.status = 500;
  });
  mock.start();
  fs::path dir = test::fresh_dir("gateway-http-down");
  ReplayCache cache(dir / "responses.jsonl");
  Gateway gw(cache, lexicons(), bank(), fast_retries());
  ProbeDataset ds = test::synthetic_dataset(1);
  CHECK(code_of([&] { gw.query_model(http_profile(mock), ds.probes[0], "en", {}); }) == ErrorCode::provider);
  CHECK(mock.hits == 3);
  CHECK(cache.response_count() == 0);
}

TEST_CASE("unreachable endpoints surface as provider errors") {
  json j = {{"model_id", "dead"}, {"provider_kind", "http_chat"}, {"endpoint", "http://127.0.0.1:9/v1/chat"},
            {"timeout_s", 1.0}};
  fs::path dir = test::fresh_dir("gateway-http-dead");
  ReplayCache cache(dir / "responses.jsonl");
  Gateway gw(cache, lexicons(), bank(), fast_retries());
  ProbeDataset ds = test::synthetic_dataset(1);
  CHECK(code_of([&] { gw.query_model(model_profile_from_json(j), ds.probes[0], "en", {}); }) == ErrorCode::provider);
}

TEST_CASE("HTTP logprobs match whole tokens and flag first-token fallbacks") {
  MockProvider mock;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    mock.note(req);
    json top = json::array({{{"token", "\xc4\xa0Obedience"}, {"logprob", -1.5}},
                            {{"token", " speak"}, {"logprob", -2.0}},
                            {{"token", "equal"}, {"logprob", -3.25}}});
    json body = {{"choices", {{{"logprobs", {{"content", {{{"token", "x"}, {"top_logprobs", top}}}}}}}}}};
    res.set_content(body.dump(), "application/json");
  });
  mock.server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    mock.note(req);
    res.set_content(R"({"data":[{"embedding":[0.5,-1.0,2.0]}]})", "application/json");
  });
  mock.start();
  fs::path dir = test::fresh_dir("gateway-http-logprobs");
  ReplayCache cache(dir / "responses.jsonl");
  Gateway gw(cache, lexicons(), bank(), fast_retries());
  ModelProfile m = http_profile(mock);
  LogprobResult r = gw.query_logprobs(m, "prompt", {"obedience", "speak up", "equal voice"}, "probe-1");
  CHECK(mock.last_body["logprobs"] == true);
  CHECK(mock.last_body["max_tokens"] == 1);
  CHECK(r.logprobs.at("obedience") == -1.5);
  CHECK(r.logprobs.at("speak up") == -2.0);
  CHECK(r.logprobs.at("equal voice") == -3.25);
  CHECK(r.first_token_only == std::set<std::string>{"equal voice", "speak up"});
  REQUIRE(cache.logprob_records().size() == 1);
  CHECK(cache.logprob_records()[0].probe_id == "probe-1");

  try {
    gw.query_logprobs(m, "prompt", {"hierarchy"});
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::provider);
    CHECK(e.subjects() == std::vector<std::string>{"hierarchy"});
  }

  EmbeddingVector v = gw.embed_text(m, "text");
  CHECK(v.values == std::vector<double>{0.5, -1.0, 2.0});
  CHECK(mock.last_body["input"] == "text");
}
