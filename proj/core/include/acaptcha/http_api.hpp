#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "acaptcha/challenge_service.hpp"

namespace acaptcha {

// Wire format shared by the server and the HTTP attack client.
nlohmann::json to_json(const ChallengeDescriptor& d);
ChallengeDescriptor descriptor_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SubmitResult& r);
SubmitResult submit_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VerifyResult& r);
VerifyResult verify_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ServiceStats& s);

/// HTTP JSON front end for a ChallengeService:
///
///   POST /api/v1/challenge   {"site_key"}                  -> descriptor | 429
///   POST /api/v1/answer      {"token", "selection", ["solve_ms"]} -> {"status", ["next_challenge"]}
///   POST /api/v1/verify      {"secret", "token"}           -> {"success", "reason", ["solved_at"]} | 401
///   GET  /img/{token}/{slot}                               -> image/png | 404
///   GET  /api/v1/stats
class HttpFrontend {
 public:
  explicit HttpFrontend(ChallengeService& service);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Serves files under `dir` at "/" (for the browser widget demo).
  bool mount_static(const std::filesystem::path& dir);

  /// Blocks until stop(). Returns false if the socket could not be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port; returns it, or -1 on failure. Follow with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  bool running() const;
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace acaptcha
