#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "cprobe/error.hpp"
#include "cprobe/gateway.hpp"
#include "httplib.h"

namespace cprobe {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::schema, "endpoint is not a URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string normalize_token(std::string_view token) {
  std::string t(token);
  // Byte-level BPE vocabularies mark a leading space with U+0120.
  if (t.rfind("\xc4\xa0", 0) == 0) t.erase(0, 2);
  t.erase(0, t.find_first_not_of(' '));
  while (!t.empty() && t.back() == ' ') t.pop_back();
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  return t;
}

class HttpChatProvider final : public Provider {
 public:
  explicit HttpChatProvider(ModelProfile profile) : profile_(std::move(profile)) {}

  Completion complete(const CompletionRequest& req) override {
    json body = {{"model", remote_model()},
                 {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})},
                 {"temperature", req.params.temperature},
                 {"max_tokens", req.params.max_tokens}};
    json reply = post(*profile_.endpoint, body);
    Completion c;
    try {
      c.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::provider, std::string("unexpected chat response shape: ") + e.what());
    }
    return c;
  }

  LogprobResult logprobs(std::string_view prompt, const std::vector<std::string>& targets) override {
    json body = {{"model", remote_model()},
                 {"messages", json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
                 {"temperature", 0.0},
                 {"max_tokens", 1},
                 {"logprobs", true},
                 {"top_logprobs", 20}};
    json reply = post(*profile_.endpoint, body);
    std::vector<std::pair<std::string, double>> top;
    try {
      for (const auto& e : reply.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs")) {
        top.emplace_back(normalize_token(e.at("token").get<std::string>()), e.at("logprob").get<double>());
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::capability, std::string("provider did not return token logprobs: ") + e.what());
    }
    LogprobResult r;
    std::vector<std::string> missing;
    for (const auto& word : targets) {
      std::string w = normalize_token(word);
      auto whole = std::find_if(top.begin(), top.end(), [&](const auto& t) { return t.first == w; });
      if (whole != top.end()) {
        r.logprobs[word] = whole->second;
        continue;
      }
      // Multi-token word: score by the best first sub-token that prefixes it.
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& [tok, lp] : top) {
        if (!tok.empty() && w.rfind(tok, 0) == 0) best = std::max(best, lp);
      }
      if (std::isfinite(best)) {
        r.logprobs[word] = best;
        r.first_token_only.insert(word);
      } else {
        missing.push_back(word);
      }
    }
    if (!missing.empty()) {
      throw Error(ErrorCode::provider, "target words absent from provider top logprobs", missing);
    }
    return r;
  }

  EmbeddingVector embed(std::string_view text) override {
    if (!profile_.embedding_endpoint) {
      throw Error(ErrorCode::capability, "model '" + profile_.model_id + "' has no embedding_endpoint");
    }
    json reply = post(*profile_.embedding_endpoint, {{"model", remote_model()}, {"input", std::string(text)}});
    EmbeddingVector v;
    v.model_id = profile_.model_id;
    try {
      v.values = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::provider, std::string("unexpected embedding response shape: ") + e.what());
    }
    return v;
  }

 private:
  std::string remote_model() const {
    return profile_.remote_model.empty() ? profile_.model_id : profile_.remote_model;
  }

  json post(const std::string& url, const json& body) {
    SplitUrl u = split_url(url);
    httplib::Client client(u.origin);
    auto secs = static_cast<time_t>(profile_.timeout_s);
    auto usecs = static_cast<time_t>((profile_.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (const char* key = std::getenv(profile_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(u.path, headers, body.dump(), "application/json");
    if (!res) {
      throw Error(ErrorCode::provider, "transport error contacting " + u.origin + ": " +
                                           httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw Error(ErrorCode::provider, "HTTP " + std::to_string(res->status) + " from " + url);
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::provider, std::string("malformed provider JSON: ") + e.what());
    }
  }

  ModelProfile profile_;
};

}  // namespace

std::unique_ptr<Provider> make_http_provider(const ModelProfile& profile) {
  if (!profile.endpoint) throw Error(ErrorCode::schema, "http_chat profile without endpoint");
  return std::make_unique<HttpChatProvider>(profile);
}

}  // namespace cprobe
