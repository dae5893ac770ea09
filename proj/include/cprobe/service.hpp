#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cprobe/annotation.hpp"
#include "cprobe/manifest.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace cprobe {

struct ServiceOptions {
  std::string cors_origin = "*";
  std::optional<std::filesystem::path> ui_dir;  // static files served at /
};

struct ServiceReply {
  int status = 200;
  std::optional<nlohmann::json> body;  // absent for 204
};

/// Blind annotation sessions over the responses of one run. Payloads never
/// carry model identity.
class AnnotationService {
 public:
  /// Throws EmptyRun when the run has no responses.
  explicit AnnotationService(const std::filesystem::path& run_dir, ServiceOptions options = {});
  ~AnnotationService();

  /// Transport-independent request handling; the HTTP server delegates here.
  ServiceReply handle(std::string_view method, std::string_view path, std::string_view authorization,
                      std::string_view body);

  /// Binds the listening socket. Throws AddressInUse when the port is taken.
  /// Returns the bound port (useful with port 0).
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  void listen();
  void stop();

  const AnnotationLog& log() const { return *log_; }
  const AnnotationSession& session() const { return session_; }

 private:
  struct Item {
    std::string probe_text;
    std::string response_text;
    Dimension dimension = Dimension::idv;
  };

  std::optional<std::string> annotator_for(std::string_view authorization) const;
  ServiceReply next_item(const std::string& annotator);
  ServiceReply submit(const std::string& annotator, const std::string& item_id, std::string_view body);
  ServiceReply progress(const std::string& annotator);
  ServiceReply kappa();

  RunStore store_;
  ServiceOptions options_;
  AnnotationSession session_;
  std::map<std::string, Item> items_;
  std::map<std::string, std::string> token_to_annotator_;
  std::unique_ptr<AnnotationLog> log_;
  std::unique_ptr<httplib::Server> server_;
};

/// Five labelled scale points for a dimension, as [{score, label}] from -2 to 2.
nlohmann::json scale_legend(Dimension d);

/// Serves until SIGINT or SIGTERM. `bind_address` is host:port.
int cmd_annotate_serve(const std::filesystem::path& run_dir, const std::string& bind_address,
                       const ServiceOptions& options, std::ostream& out, std::ostream& err);

}  // namespace cprobe
