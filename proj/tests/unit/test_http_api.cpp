#include <doctest.h>

#include <httplib.h>
#include <thread>

#include "acaptcha/attack_harness.hpp"
#include "acaptcha/http_api.hpp"
#include "test_support.hpp"

using namespace acaptcha;
using nlohmann::json;
using testing::answer_of;
using testing::wrong_answer_of;

namespace {

// A real server on an ephemeral loopback port.
struct Server {
  std::unique_ptr<ChallengeService> svc;
  std::unique_ptr<HttpFrontend> http;
  std::thread thread;
  int port = -1;

  explicit Server(ServiceConfig cfg, const std::filesystem::path& static_dir = {}) {
    svc = std::make_unique<ChallengeService>(testing::fixture_pool(), cfg);
    http = std::make_unique<HttpFrontend>(*svc);
    if (!static_dir.empty()) REQUIRE(http->mount_static(static_dir));
    port = http->bind_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { http->listen_after_bind(); });
    http->wait_until_ready();
  }
  ~Server() {
    http->stop();
    thread.join();
  }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port); }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

ServiceConfig config() {
  ServiceConfig cfg;
  cfg.shared_secret = "s3cret";
  cfg.seed = 5;
  cfg.polarity_mix = 0.0;
  return cfg;
}

httplib::Result post(httplib::Client& c, const std::string& path, const json& body) {
  return c.Post(path, body.dump(), "application/json");
}

}  // namespace

TEST_CASE("challenge, image, answer and verify over HTTP") {
  Server s(config());
  auto c = s.client();

  auto res = post(c, "/api/v1/challenge", {{"site_key", "demo"}});
  REQUIRE(res);
  REQUIRE(res->status == 200);
  CHECK(res->get_header_value("Content-Type").find("application/json") == 0);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  const json d = json::parse(res->body);
  CHECK(d["n"] == 9);
  CHECK(d["instruction"] == "click on the image that does not look nice");
  CHECK(d["images"].size() == 9);
  CHECK(parse_rfc3339(d["expires_at"].get<std::string>()));
  const std::string token = d["token"];

  auto img = c.Get(d["images"][4]["url"].get<std::string>());
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(img->get_header_value("Content-Type") == "image/png");
  CHECK(img->body.substr(1, 3) == "PNG");
  CHECK(c.Get("/img/" + token + "/9")->status == 404);
  CHECK(c.Get("/img/0123456789abcdef0123456789abcdef/0")->status == 404);

  const auto answer = answer_of(*s.svc, token);
  json sel = json::array();
  for (int i : answer) sel.push_back(i);
  res = post(c, "/api/v1/answer", {{"token", token}, {"selection", sel}, {"solve_ms", 2100}});
  REQUIRE(res->status == 200);
  CHECK(json::parse(res->body) == json{{"status", "pass"}});
  CHECK(c.Get(d["images"][4]["url"].get<std::string>())->status == 404);

  res = post(c, "/api/v1/verify", {{"secret", "wrong"}, {"token", token}});
  CHECK(res->status == 401);
  res = post(c, "/api/v1/verify", {{"secret", "s3cret"}, {"token", token}});
  REQUIRE(res->status == 200);
  json v = json::parse(res->body);
  CHECK(v["success"] == true);
  CHECK(v["reason"] == "ok");
  CHECK(v.contains("solved_at"));
  v = json::parse(post(c, "/api/v1/verify", {{"secret", "s3cret"}, {"token", token}})->body);
  CHECK(v["success"] == false);
  CHECK(v["reason"] == "already-consumed");
  CHECK_FALSE(v.contains("solved_at"));

  const json stats = json::parse(c.Get("/api/v1/stats")->body);
  CHECK(stats["pool"] == json{{"m", 200}, {"p", 100}, {"d", 100}});
  CHECK(stats["challenges_issued"] == 1);
  CHECK(stats["pass_rate"] == 1.0);
  CHECK(stats["mean_solve_ms"] == 2100.0);
}

TEST_CASE("wrong answer returns next_challenge") {
  Server s(config());
  auto c = s.client();
  const json d = json::parse(post(c, "/api/v1/challenge", {{"site_key", "demo"}})->body);
  const std::string token = d["token"];
  json sel = json::array();
  for (int i : wrong_answer_of(*s.svc, token)) sel.push_back(i);
  const json r = json::parse(post(c, "/api/v1/answer", {{"token", token}, {"selection", sel}})->body);
  CHECK(r["status"] == "fail");
  REQUIRE(r.contains("next_challenge"));
  CHECK(r["next_challenge"]["n"] == 9);
  CHECK(r["next_challenge"]["token"] != token);

  const json again = json::parse(post(c, "/api/v1/answer", {{"token", token}, {"selection", sel}})->body);
  CHECK(again == json{{"status", "unknown"}});
}

TEST_CASE("bad requests") {
  Server s(config());
  auto c = s.client();
  CHECK(c.Post("/api/v1/challenge", "not json", "application/json")->status == 400);
  CHECK(post(c, "/api/v1/challenge", {{"site_key", 5}})->status == 400);
  CHECK(post(c, "/api/v1/answer", {{"token", "x"}})->status == 400);
  CHECK(post(c, "/api/v1/answer", {{"token", "x"}, {"selection", {"a"}}})->status == 400);
  CHECK(post(c, "/api/v1/verify", {{"token", "x"}})->status == 400);

  const json d = json::parse(post(c, "/api/v1/challenge", {{"site_key", "demo"}})->body);
  const auto res = post(c, "/api/v1/answer", {{"token", d["token"]}, {"selection", {12}}});
  CHECK(res->status == 400);
  CHECK(json::parse(res->body)["error"] == "malformed-selection");

  CHECK(c.Options("/api/v1/challenge")->status == 204);
  CHECK(c.Get("/api/v1/nothing")->status == 404);
}

TEST_CASE("rate limiting returns 429") {
  ServiceConfig cfg = config();
  cfg.rate_limit_per_minute = 3;
  Server s(cfg);
  auto c = s.client();
  for (int i = 0; i < 3; ++i) CHECK(post(c, "/api/v1/challenge", {{"site_key", "demo"}})->status == 200);
  const auto res = post(c, "/api/v1/challenge", {{"site_key", "demo"}});
  CHECK(res->status == 429);
  CHECK(json::parse(res->body)["error"] == "rate-limited");
  // A different site key is a different fingerprint.
  CHECK(post(c, "/api/v1/challenge", {{"site_key", "other"}})->status == 200);
}

TEST_CASE("exhausted pool returns 503") {
  ServiceConfig cfg = config();
  auto pool = testing::synthetic_pool(3, 3);
  ChallengeService svc(pool, cfg);
  HttpFrontend http(svc);
  const int port = http.bind_any_port("127.0.0.1");
  std::thread t([&] { http.listen_after_bind(); });
  http.wait_until_ready();
  httplib::Client c("127.0.0.1", port);
  CHECK(post(c, "/api/v1/challenge", {{"site_key", "demo"}})->status == 503);
  http.stop();
  t.join();
}

TEST_CASE("HTTP responses contain no pool ids") {
  Server s(config());
  auto c = s.client();
  for (int i = 0; i < 5; ++i) {
    const auto res = post(c, "/api/v1/challenge", {{"site_key", "k" + std::to_string(i)}});
    const json d = json::parse(res->body);
    const auto challenge = s.svc->inspect(d["token"]);
    std::string all = res->body;
    for (const auto& img : d["images"]) all += c.Get(img["url"].get<std::string>())->body;
    for (const auto& slot : challenge->puzzle.slots) CHECK(all.find(slot.image.id) == std::string::npos);
    CHECK(all.find("pleasing") == std::string::npos);
    CHECK(all.find("answer") == std::string::npos);
  }
}

TEST_CASE("wire round trips") {
  ChallengeDescriptor d;
  d.token = "abc";
  d.n = 2;
  d.instruction = "x";
  d.images = {{0, "/img/abc/0"}, {1, "/img/abc/1"}};
  d.expires_at = TimePoint{} + std::chrono::milliseconds(1700000000123LL);
  const auto back = descriptor_from_json(to_json(d));
  CHECK(back.token == d.token);
  CHECK(back.images.size() == 2);
  CHECK(back.images[1].url == "/img/abc/1");
  CHECK(back.expires_at == d.expires_at);

  SubmitResult r;
  r.status = SubmitStatus::fail;
  r.next_challenge = d;
  const auto rb = submit_result_from_json(to_json(r));
  CHECK(rb.status == SubmitStatus::fail);
  CHECK(rb.next_challenge->token == "abc");

  VerifyResult v;
  v.success = false;
  v.reason = VerifyReason::expired;
  CHECK(verify_result_from_json(to_json(v)).reason == VerifyReason::expired);
}

TEST_CASE("HTTP attack target end to end") {
  ServiceConfig cfg = config();
  cfg.rate_limit_per_minute = 0;
  cfg.escalation_enabled = false;
  Server s(cfg);
  HttpTarget target(s.base(), "s3cret");
  const AttackReport r = run_random_guess(target, PuzzleSpec{}, 300, 4);
  CHECK(r.trials == 300);
  CHECK(r.within_sigmas(4.0));

  const ReplayReport replay = run_replay(target, PuzzleSpec{}, 200, {0}, 6);
  CHECK(replay.first_verify_ok);
  CHECK(replay.token_replay.successes == 0);

  HttpTarget wrong_secret(s.base(), "nope");
  const auto d = wrong_secret.create("x");
  CHECK_THROWS_AS(wrong_secret.verify(d.token), AuthenticationError);

  HttpTarget nowhere("http://127.0.0.1:1", "s3cret");
  CHECK_THROWS_AS(nowhere.create("x"), ServiceUnreachableError);
}

TEST_CASE("static mount") {
  testing::TempDir dir;
  dir.write("index.html", "<p>widget</p>");
  Server s(config(), dir.path);
  auto c = s.client();
  CHECK(c.Get("/index.html")->body == "<p>widget</p>");
  CHECK_FALSE(s.http->mount_static(dir.path / "missing"));
}
