#include "cprobe/service.hpp"

#include <pthread.h>
#include <signal.h>
#include <sys/socket.h>

#include <algorithm>
#include <set>
#include <thread>

#include "cprobe/error.hpp"
#include "cprobe/pipeline.hpp"
#include "cprobe/util.hpp"
#include "httplib.h"

namespace cprobe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ServiceReply error_reply(int status, std::string_view code, const std::string& message) {
  return {status, json{{"code", code}, {"message", message}}};
}

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  while (!path.empty()) {
    auto slash = path.find('/');
    auto part = path.substr(0, slash);
    if (!part.empty()) parts.push_back(part);
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash + 1);
  }
  return parts;
}

}  // namespace

json scale_legend(Dimension d) {
  static const char* idv[] = {"strongly collectivistic", "somewhat collectivistic", "neutral",
                              "somewhat individualistic", "strongly individualistic"};
  static const char* pdi[] = {"very low power distance preference", "low power distance preference", "neutral",
                              "high power distance preference", "very high power distance preference"};
  const char** labels = d == Dimension::idv ? idv : pdi;
  json out = json::array();
  for (int s = LikertScore::kMin; s <= LikertScore::kMax; ++s) {
    out.push_back({{"score", s}, {"label", labels[s - LikertScore::kMin]}});
  }
  return out;
}

AnnotationService::AnnotationService(const fs::path& run_dir, ServiceOptions options)
    : store_(RunStore::open(run_dir)), options_(std::move(options)) {
  ProbeDataset ds = store_.load_bound_dataset();
  ReplayCache cache(store_.responses_path(), /*read_only=*/true);
  std::vector<ModelResponse> responses = run_responses(store_, cache);
  if (responses.empty()) {
    throw Error(ErrorCode::empty_run, "run '" + store_.manifest.run_id + "' has no responses to annotate");
  }
  for (const auto& r : responses) {
    const Probe* probe = ds.find(r.probe_id);
    if (!probe) throw Error(ErrorCode::invariant, "response for unknown probe '" + r.probe_id + "'", {r.probe_id});
    const LocaleVariant* v = probe->variant(r.language);
    items_[r.response_id] = {v ? v->text : probe->variants.front().text, r.text, probe->dimension};
  }
  const AnnotationPolicy& policy = store_.manifest.annotation;
  session_.session_id = store_.manifest.run_id;
  session_.roster = policy.roster;
  session_.presentation_order_seed = store_.manifest.session_seed;
  session_.raters_per_item = policy.raters_per_item;
  // Sorted so the shuffle does not depend on the order responses were logged.
  for (const auto& [id, _] : items_) session_.responses.push_back(id);
  for (const auto& [annotator, token] : policy.tokens) token_to_annotator_[token] = annotator;
  log_ = std::make_unique<AnnotationLog>(store_.annotations_path());
}

AnnotationService::~AnnotationService() { stop(); }

std::optional<std::string> AnnotationService::annotator_for(std::string_view authorization) const {
  constexpr std::string_view prefix = "Bearer ";
  if (authorization.substr(0, prefix.size()) != prefix) return std::nullopt;
  auto it = token_to_annotator_.find(std::string(authorization.substr(prefix.size())));
  if (it == token_to_annotator_.end()) return std::nullopt;
  return it->second;
}

ServiceReply AnnotationService::handle(std::string_view method, std::string_view path,
                                       std::string_view authorization, std::string_view body) {
  auto parts = split_path(path);
  if (parts.size() < 2 || parts[0] != "api") return error_reply(404, "not_found", "no such endpoint");
  auto annotator = annotator_for(authorization);
  if (!annotator) return error_reply(401, "unauthorized", "unknown or missing bearer token");
  try {
    if (parts.size() == 3 && parts[1] == "session" && method == "GET") {
      if (parts[2] == "next") return next_item(*annotator);
      if (parts[2] == "progress") return progress(*annotator);
      if (parts[2] == "kappa") return kappa();
    }
    if (parts.size() == 4 && parts[1] == "items" && parts[3] == "score") {
      if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
      return submit(*annotator, std::string(parts[2]), body);
    }
  } catch (const Error& e) {
    return error_reply(500, to_string(e.code()), e.message());
  }
  return error_reply(404, "not_found", "no such endpoint");
}

ServiceReply AnnotationService::next_item(const std::string& annotator) {
  std::set<std::string> scored;
  for (const auto& r : log_->snapshot()) {
    if (r.annotator_id == annotator) scored.insert(r.response_ref);
  }
  for (const auto& id : session_.queue_for(annotator)) {
    if (scored.count(id)) continue;
    const Item& item = items_.at(id);
    return {200, json{{"item_id", id},
                      {"probe_text", item.probe_text},
                      {"response_text", item.response_text},
                      {"dimension", to_code(item.dimension)},
                      {"scale_legend", scale_legend(item.dimension)}}};
  }
  return {204, std::nullopt};
}

ServiceReply AnnotationService::submit(const std::string& annotator, const std::string& item_id,
                                       std::string_view body) {
  if (!items_.count(item_id)) return error_reply(404, "unknown_item", "no item '" + item_id + "'");
  json j = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object() || !j.contains("score") || !j["score"].is_number_integer()) {
    return error_reply(400, "bad_request", "body must be {\"score\": integer, \"note\"?: string}");
  }
  if (j.contains("note") && !j["note"].is_null() && !j["note"].is_string()) {
    return error_reply(400, "bad_request", "note must be a string");
  }
  auto score = LikertScore::from_int(j["score"].get<int>());
  if (!score) return error_reply(400, "out_of_range", "score must be an integer in [-2, 2]");
  if (!session_.assigned(annotator, item_id)) {
    return error_reply(409, "not_assigned", "item '" + item_id + "' is not in this annotator's queue");
  }
  AnnotationRecord rec;
  rec.response_ref = item_id;
  rec.annotator_id = annotator;
  rec.score = *score;
  if (j.contains("note") && j["note"].is_string()) rec.note = j["note"].get<std::string>();
  rec.submitted_at = utc_now_iso8601();
  log_->append(rec);
  return {200, json{{"item_id", item_id}, {"score", score->value()}, {"status", "recorded"}}};
}

ServiceReply AnnotationService::progress(const std::string& annotator) {
  std::map<std::string, std::set<std::string>> scored;
  for (const auto& r : log_->snapshot()) {
    if (items_.count(r.response_ref)) scored[r.annotator_id].insert(r.response_ref);
  }
  json per = json::object();
  for (const auto& a : session_.roster) per[a] = scored[a].size();
  std::size_t total = session_.queue_for(annotator).size();
  return {200, json{{"scored", scored[annotator].size()}, {"total", total}, {"per_annotator", per}}};
}

ServiceReply AnnotationService::kappa() {
  std::vector<AnnotationRecord> records;
  for (auto& r : log_->snapshot()) {
    if (items_.count(r.response_ref)) records.push_back(std::move(r));
  }
  auto matrix = kappa_matrix_from_records(records);
  if (!matrix) return error_reply(409, "insufficient_overlap", "no item has been scored by two annotators");
  return {200, to_json(fleiss_kappa(*matrix))};
}

int AnnotationService::bind(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  // Without SO_REUSEPORT a second service on the same port fails to bind.
  server_->set_socket_options([](int sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  auto cors = [this](httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", options_.cors_origin);
    res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  };
  auto dispatch = [this, cors](const httplib::Request& req, httplib::Response& res) {
    ServiceReply reply = handle(req.method, req.path, req.get_header_value("Authorization"), req.body);
    res.status = reply.status;
    if (reply.body) res.set_content(reply.body->dump(), "application/json; charset=utf-8");
    cors(res);
  };
  server_->Get(R"(/api/.*)", dispatch);
  server_->Post(R"(/api/.*)", dispatch);
  server_->Options(R"(/api/.*)", [cors](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    cors(res);
  });
  if (options_.ui_dir) server_->set_mount_point("/", options_.ui_dir->string());

  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
    if (bound < 0) bound = 0;
  } else if (!server_->bind_to_port(host, port)) {
    bound = 0;
  }
  if (bound == 0) {
    throw Error(ErrorCode::address_in_use, "cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void AnnotationService::listen() {
  if (!server_) throw Error(ErrorCode::precondition, "listen() before bind()");
  server_->listen_after_bind();
}

void AnnotationService::stop() {
  if (server_) server_->stop();
}

int cmd_annotate_serve(const fs::path& run_dir, const std::string& bind_address, const ServiceOptions& options,
                       std::ostream& out, std::ostream& err) {
  try {
    auto colon = bind_address.rfind(':');
    if (colon == std::string::npos) {
      throw Error(ErrorCode::precondition, "bind address must be host:port, got '" + bind_address + "'");
    }
    std::string host = bind_address.substr(0, colon);
    int port = 0;
    try {
      port = std::stoi(bind_address.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::precondition, "invalid port in '" + bind_address + "'");
    }

    // Block the stop signals before any thread starts so only sigwait sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    AnnotationService service(run_dir, options);
    int bound = service.bind(host, port);
    out << "annotation service for run " << service.session().session_id << " listening on " << host << ":"
        << bound << std::endl;
    std::thread server([&service] { service.listen(); });
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
    server.join();
    out << "stopped; " << service.log().size() << " annotation records on disk" << std::endl;
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

}  // namespace cprobe
