#include "acaptcha/http_api.hpp"

#include <httplib.h>

namespace acaptcha {

using nlohmann::json;

json to_json(const ChallengeDescriptor& d) {
  json images = json::array();
  for (const auto& img : d.images) images.push_back({{"slot", img.slot}, {"url", img.url}});
  return {{"token", d.token},
          {"n", d.n},
          {"instruction", d.instruction},
          {"images", std::move(images)},
          {"expires_at", format_rfc3339(d.expires_at)}};
}

ChallengeDescriptor descriptor_from_json(const json& j) {
  ChallengeDescriptor d;
  d.token = j.at("token").get<std::string>();
  d.n = j.at("n").get<int>();
  d.instruction = j.at("instruction").get<std::string>();
  for (const auto& img : j.at("images")) {
    d.images.push_back({img.at("slot").get<int>(), img.at("url").get<std::string>()});
  }
  const auto expires = parse_rfc3339(j.at("expires_at").get<std::string>());
  if (!expires) throw std::invalid_argument("descriptor: bad expires_at");
  d.expires_at = *expires;
  return d;
}

json to_json(const SubmitResult& r) {
  json j = {{"status", std::string(to_string(r.status))}};
  if (r.next_challenge) j["next_challenge"] = to_json(*r.next_challenge);
  return j;
}

SubmitResult submit_result_from_json(const json& j) {
  SubmitResult r;
  const std::string status = j.at("status").get<std::string>();
  if (status == "pass") r.status = SubmitStatus::pass;
  else if (status == "fail") r.status = SubmitStatus::fail;
  else if (status == "expired") r.status = SubmitStatus::expired;
  else if (status == "unknown") r.status = SubmitStatus::unknown;
  else throw std::invalid_argument("unknown answer status '" + status + "'");
  if (const auto it = j.find("next_challenge"); it != j.end() && !it->is_null()) {
    r.next_challenge = descriptor_from_json(*it);
  }
  return r;
}

json to_json(const VerifyResult& r) {
  json j = {{"success", r.success}, {"reason", std::string(to_string(r.reason))}};
  if (r.solved_at) j["solved_at"] = format_rfc3339(*r.solved_at);
  return j;
}

VerifyResult verify_result_from_json(const json& j) {
  VerifyResult r;
  r.success = j.at("success").get<bool>();
  const std::string reason = j.at("reason").get<std::string>();
  if (reason == "ok") r.reason = VerifyReason::ok;
  else if (reason == "unknown-token") r.reason = VerifyReason::unknown_token;
  else if (reason == "not-solved") r.reason = VerifyReason::not_solved;
  else if (reason == "already-consumed") r.reason = VerifyReason::already_consumed;
  else if (reason == "expired") r.reason = VerifyReason::expired;
  else throw std::invalid_argument("unknown verify reason '" + reason + "'");
  if (const auto it = j.find("solved_at"); it != j.end() && it->is_string()) {
    r.solved_at = parse_rfc3339(it->get<std::string>());
  }
  return r;
}

json to_json(const ServiceStats& s) {
  return {{"pool", {{"m", s.pool.m}, {"p", s.pool.p}, {"d", s.pool.d}}},
          {"challenges_issued", s.challenges_issued},
          {"pass_rate", s.pass_rate},
          {"mean_solve_ms", s.mean_solve_ms}};
}

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& code, const std::string& detail) {
  reply(res, status, {{"error", code}, {"detail", detail}});
}

// Parses a JSON object body; answers 400 and returns nullopt otherwise.
std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    reply_error(res, 400, "bad-request", "body must be a JSON object");
    return std::nullopt;
  }
  return body;
}

std::optional<std::string> string_field(const json& body, const char* key) {
  const auto it = body.find(key);
  if (it == body.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

struct HttpFrontend::Impl {
  explicit Impl(ChallengeService& s) : service(s) {}

  ChallengeService& service;
  httplib::Server server;
};

HttpFrontend::HttpFrontend(ChallengeService& service) : impl_(std::make_unique<Impl>(service)) {
  httplib::Server& srv = impl_->server;
  ChallengeService& svc = impl_->service;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Cache-Control", "no-store"}});
  srv.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Post("/api/v1/challenge", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    const auto site_key = string_field(*body, "site_key");
    if (!site_key) return reply_error(res, 400, "bad-request", "site_key must be a string");
    try {
      const auto d = svc.create_challenge(*site_key, client_fingerprint(req.remote_addr, *site_key));
      reply(res, 200, to_json(d));
    } catch (const RateLimitedError& e) {
      reply_error(res, 429, "rate-limited", e.what());
    } catch (const InsufficientPoolError& e) {
      reply_error(res, 503, "pool-exhausted", e.what());
    }
  });

  srv.Post("/api/v1/answer", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    const auto token = string_field(*body, "token");
    const auto sel = body->find("selection");
    if (!token || sel == body->end() || !sel->is_array()) {
      return reply_error(res, 400, "bad-request", "token and selection are required");
    }
    std::set<int> selection;
    for (const auto& v : *sel) {
      if (!v.is_number_integer()) return reply_error(res, 400, "bad-request", "selection must hold integers");
      const auto idx = v.get<std::int64_t>();
      if (idx < 0 || idx > 64) return reply_error(res, 400, "malformed-selection", "index out of range");
      selection.insert(static_cast<int>(idx));
    }
    std::optional<std::int64_t> solve_ms;
    if (const auto it = body->find("solve_ms"); it != body->end() && it->is_number()) {
      solve_ms = it->get<std::int64_t>();
    }
    try {
      reply(res, 200, to_json(svc.submit_answer(*token, selection, solve_ms)));
    } catch (const MalformedSelectionError& e) {
      reply_error(res, 400, "malformed-selection", e.what());
    }
  });

  srv.Post("/api/v1/verify", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    const auto secret = string_field(*body, "secret");
    const auto token = string_field(*body, "token");
    if (!secret || !token) return reply_error(res, 400, "bad-request", "secret and token are required");
    try {
      reply(res, 200, to_json(svc.verify_token(*secret, *token)));
    } catch (const AuthenticationError&) {
      reply_error(res, 401, "unauthorized", "shared secret mismatch");
    }
  });

  srv.Get(R"(/img/([0-9a-f]{32})/(\d{1,2}))", [&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string token = req.matches[1];
    const int slot = std::stoi(req.matches[2]);
    std::optional<std::vector<std::uint8_t>> png;
    try {
      png = svc.image_png(token, slot);
    } catch (const std::exception& e) {
      return reply_error(res, 500, "image-error", e.what());
    }
    if (!png) return reply_error(res, 404, "not-found", "no such image");
    res.status = 200;
    res.set_content(std::string(png->begin(), png->end()), "image/png");
  });

  srv.Get("/api/v1/stats", [&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, to_json(svc.stats()));
  });
}

HttpFrontend::~HttpFrontend() { stop(); }

bool HttpFrontend::mount_static(const std::filesystem::path& dir) {
  return impl_->server.set_mount_point("/", dir.string());
}

bool HttpFrontend::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HttpFrontend::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool HttpFrontend::listen_after_bind() { return impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

bool HttpFrontend::running() const { return impl_->server.is_running(); }

void HttpFrontend::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace acaptcha
