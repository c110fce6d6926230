// acaptcha: run the challenge server, attack simulations, or build a demo pool.
//
//   acaptcha serve --manifest pool/manifest.json --port 8080
//   acaptcha attack random --n 9 --k 1 --trials 20000 --seed 7
//   acaptcha attack replay --selection 0 --trials 20000
//   acaptcha attack catalogue --m 200 --n 9 --q 100 --repeats 1000
//   acaptcha attack table
//   acaptcha make-pool --out demo-pool --count 200

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "acaptcha/attack_harness.hpp"
#include "acaptcha/challenge_service.hpp"
#include "acaptcha/http_api.hpp"
#include "acaptcha/raster.hpp"

namespace {

using namespace acaptcha;
using nlohmann::json;

acaptcha::HttpFrontend* g_frontend = nullptr;

void on_signal(int) {
  if (g_frontend) g_frontend->stop();
}

std::string env_secret() {
  const char* s = std::getenv("CAPTCHA_SECRET");
  return s ? s : "";
}

CategoryMode parse_category_mode(const std::string& s) {
  if (s == "mixed") return CategoryMode::mixed;
  if (s == "homogeneous") return CategoryMode::homogeneous;
  throw CLI::ValidationError("--category-mode", "expected mixed or homogeneous");
}

std::set<int> parse_selection(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

void write_json(const std::string& path, const json& j) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

struct ServeArgs {
  std::string manifest;
  std::string host = "127.0.0.1";
  int port = 8080;
  int n = 9;
  int k = 1;
  double polarity_mix = 0.25;
  std::string category_mode = "mixed";
  int ttl_secs = 120;
  int rate_limit = 100;
  bool no_escalation = false;
  std::optional<std::uint64_t> seed;
  std::string static_dir;
  int sweep_ms = 1000;
};

int run_serve(const ServeArgs& a) {
  auto pool = std::make_shared<ImagePool>();
  const PoolStats stats = pool->ingest_manifest(a.manifest);
  std::cerr << "pool: m=" << stats.m << " p=" << stats.p << " d=" << stats.d
            << " (" << max_disjoint_puzzles(stats, static_cast<std::uint64_t>(a.n)) << " disjoint puzzles)\n";

  ServiceConfig cfg;
  cfg.base_spec.n = a.n;
  cfg.base_spec.k = a.k;
  cfg.base_spec.category_mode = parse_category_mode(a.category_mode);
  cfg.polarity_mix = a.polarity_mix;
  cfg.pending_ttl = std::chrono::seconds(a.ttl_secs);
  cfg.solved_ttl = std::chrono::seconds(a.ttl_secs);
  cfg.rate_limit_per_minute = a.rate_limit;
  cfg.escalation_enabled = !a.no_escalation;
  cfg.seed = a.seed;
  cfg.shared_secret = env_secret();
  if (cfg.shared_secret.empty()) std::cerr << "warning: CAPTCHA_SECRET unset; /api/v1/verify will reject all calls\n";

  ChallengeService service(pool, cfg);
  ExpirySweeper sweeper(service, std::chrono::milliseconds(a.sweep_ms));
  HttpFrontend frontend(service);
  if (!a.static_dir.empty() && !frontend.mount_static(a.static_dir)) {
    std::cerr << "cannot serve static files from " << a.static_dir << "\n";
    return 1;
  }
  g_frontend = &frontend;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on http://" << a.host << ":" << a.port << "\n";
  const bool ok = frontend.listen(a.host, a.port);
  g_frontend = nullptr;
  if (!ok) {
    std::cerr << "could not listen on " << a.host << ":" << a.port << "\n";
    return 1;
  }
  return 0;
}

struct AttackArgs {
  int n = 9;
  int k = 1;
  std::uint64_t trials = 20000;
  std::uint64_t seed = 7;
  std::string http;
  std::string json_path;
  std::string selection = "0";
  int workers = 1;
  std::uint64_t pool_m = 200;
  // catalogue
  std::uint64_t m = 200;
  std::optional<std::uint64_t> p;
  std::uint64_t q = 100;
  int repeats = 1000;
  double polarity_mix = 0.25;
};

PuzzleSpec attack_spec(const AttackArgs& a) {
  PuzzleSpec s;
  s.n = a.n;
  s.k = a.k;
  if (!s.valid()) throw CLI::ValidationError("--n/--k", "need 1 <= k < n <= 64");
  return s;
}

// An in-process service measuring the base spec: no rate limit, no escalation.
std::unique_ptr<ChallengeService> measurement_service(const PuzzleSpec& spec, const AttackArgs& a) {
  auto pool = std::make_shared<ImagePool>();
  const std::uint64_t half = std::max<std::uint64_t>(a.pool_m / 2, static_cast<std::uint64_t>(spec.n));
  pool->replace(synthetic_snapshot(half, half));
  ServiceConfig cfg;
  cfg.base_spec = spec;
  cfg.rate_limit_per_minute = 0;
  cfg.escalation_enabled = false;
  cfg.seed = a.seed ^ 0x5eedULL;
  cfg.shared_secret = "harness";
  return std::make_unique<ChallengeService>(std::move(pool), cfg);
}

int run_attack_random(const AttackArgs& a) {
  const PuzzleSpec spec = attack_spec(a);
  RandomGuessOptions opts;
  opts.workers = a.workers;
  AttackReport report;
  if (!a.http.empty()) {
    HttpTarget target(a.http, env_secret());
    report = run_random_guess(target, spec, a.trials, a.seed, opts);
  } else {
    auto service = measurement_service(spec, a);
    InProcessTarget target(*service, "harness");
    report = run_random_guess(target, spec, a.trials, a.seed, opts);
  }
  std::cout << render_reports({report});
  std::cout << "within 3 sigma of 1/C(n,k): " << (report.within_sigmas(3.0) ? "yes" : "no") << "\n";
  write_json(a.json_path, to_json(report));
  return 0;
}

int run_attack_replay(const AttackArgs& a) {
  const PuzzleSpec spec = attack_spec(a);
  const std::set<int> selection = parse_selection(a.selection);
  ReplayReport report;
  if (!a.http.empty()) {
    HttpTarget target(a.http, env_secret());
    report = run_replay(target, spec, a.trials, selection, a.seed);
  } else {
    auto service = measurement_service(spec, a);
    InProcessTarget target(*service, "harness");
    report = run_replay(target, spec, a.trials, selection, a.seed);
  }
  std::cout << render_reports({report.fresh_challenge, report.token_replay});
  std::cout << "legitimate first verify: " << (report.first_verify_ok ? "ok" : "rejected") << "\n";
  write_json(a.json_path, {{"fresh_challenge", to_json(report.fresh_challenge)},
                           {"token_replay", to_json(report.token_replay)},
                           {"first_verify_ok", report.first_verify_ok}});
  return 0;
}

int run_attack_catalogue(const AttackArgs& a) {
  PuzzleSpec spec;
  spec.n = a.n;
  spec.k = a.k;
  PoolStats stats;
  stats.m = a.m;
  stats.p = a.p ? *a.p : a.m / 2;
  if (stats.p > stats.m) throw CLI::ValidationError("--p", "cannot exceed --m");
  stats.d = stats.m - stats.p;
  CatalogueOptions opts;
  opts.repeats = a.repeats;
  opts.polarity_mix = a.polarity_mix;
  const CatalogueResult r = run_catalogue(stats, spec, a.q, a.seed, opts);
  std::cout << render_reports({r.report});
  std::printf("pool m=%llu p=%llu d=%llu, Q=%llu puzzles, %d repeats\n", static_cast<unsigned long long>(stats.m),
              static_cast<unsigned long long>(stats.p), static_cast<unsigned long long>(stats.d),
              static_cast<unsigned long long>(a.q), a.repeats);
  std::printf("mean coverage %.4f (sd %.4f), expected %.4f\n", r.mean_coverage, r.stddev_coverage,
              r.expected_coverage);
  write_json(a.json_path, to_json(r));
  return 0;
}

int run_attack_table(const std::string& json_path) {
  const auto rows = comparison_table();
  std::cout << render_table(rows);
  write_json(json_path, to_json(rows));
  return 0;
}

// Demo pool: pleasing images are smooth gradients with soft discs, displeasing
// ones are dark noisy blocks. Good enough to exercise the server end to end.
int run_make_pool(const std::string& out_dir, int count, std::uint64_t seed) {
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  fs::create_directories(root / "img");
  Rng rng(seed);
  const char* categories[] = {"flowers", "cars", "buildings", "animals", "models"};
  json images = json::array();
  for (int i = 0; i < count; ++i) {
    const bool pleasing = i % 2 == 0;
    Raster r;
    r.width = 96;
    r.height = 80;
    r.rgb.resize(static_cast<std::size_t>(r.width) * r.height * 3);
    std::uniform_int_distribution<int> byte(0, 255);
    const int base[3] = {byte(rng), byte(rng), byte(rng)};
    for (int y = 0; y < r.height; ++y) {
      for (int x = 0; x < r.width; ++x) {
        std::uint8_t* px = r.pixel(x, y);
        for (int c = 0; c < 3; ++c) {
          const int v = pleasing ? (base[c] / 2 + 100 + (x + y) / 3) : (base[c] / 4 + (byte(rng) % 60));
          px[c] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
      }
    }
    const std::string name = "img/" + std::to_string(i) + ".png";
    const auto png = encode_png(r);
    std::ofstream(root / name, std::ios::binary).write(reinterpret_cast<const char*>(png.data()),
                                                       static_cast<std::streamsize>(png.size()));
    images.push_back({{"id", "demo-" + std::to_string(i)},
                      {"path", name},
                      {"category", categories[(i / 2) % 5]},
                      {"valence", pleasing ? "pleasing" : "displeasing"},
                      {"source_url", "generated"},
                      {"license", "CC0-1.0"}});
  }
  std::ofstream(root / "manifest.json") << json{{"version", 1}, {"images", images}}.dump(1) << "\n";
  std::cout << "wrote " << count << " images to " << (root / "manifest.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aesthetic CAPTCHA server and attack harness"};
  app.require_subcommand(1);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP challenge server");
  serve_cmd->add_option("--manifest", serve.manifest, "Pool manifest (JSON)")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--port", serve.port, "Listen port");
  serve_cmd->add_option("--n", serve.n, "Images per puzzle");
  serve_cmd->add_option("--k", serve.k, "Target images per puzzle");
  serve_cmd->add_option("--polarity-mix", serve.polarity_mix, "Share of find-pleasing puzzles")
      ->check(CLI::Range(0.0, 1.0));
  serve_cmd->add_option("--category-mode", serve.category_mode, "mixed or homogeneous");
  serve_cmd->add_option("--ttl-secs", serve.ttl_secs, "Challenge and solved-token lifetime");
  serve_cmd->add_option("--rate-limit", serve.rate_limit, "Challenges per minute per client; 0 disables");
  serve_cmd->add_flag("--no-escalation", serve.no_escalation, "Never escalate after failures");
  serve_cmd->add_option("--seed", serve.seed, "Seed puzzle generation");
  serve_cmd->add_option("--static-dir", serve.static_dir, "Serve files from this directory at /");
  serve_cmd->add_option("--sweep-ms", serve.sweep_ms, "Expiry sweep period");

  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "Run an attacker model");
  attack_cmd->require_subcommand(1);

  auto add_common = [&attack](CLI::App* cmd) {
    cmd->add_option("--n", attack.n, "Images per puzzle");
    cmd->add_option("--k", attack.k, "Target images per puzzle");
    cmd->add_option("--seed", attack.seed, "Random seed");
    cmd->add_option("--json", attack.json_path, "Write a machine-readable report here");
  };
  auto* random_cmd = attack_cmd->add_subcommand("random", "Random-guess bot");
  add_common(random_cmd);
  random_cmd->add_option("--trials", attack.trials, "Challenges to attempt");
  random_cmd->add_option("--http", attack.http, "Attack a running server at this URL");
  random_cmd->add_option("--workers", attack.workers, "Parallel workers");
  random_cmd->add_option("--pool-m", attack.pool_m, "Synthetic pool size for in-process runs");

  auto* replay_cmd = attack_cmd->add_subcommand("replay", "Macro-recorder replay bot");
  add_common(replay_cmd);
  replay_cmd->add_option("--selection", attack.selection, "Recorded slot indices, comma separated");
  replay_cmd->add_option("--trials", attack.trials, "Replays");
  replay_cmd->add_option("--http", attack.http, "Attack a running server at this URL");
  replay_cmd->add_option("--pool-m", attack.pool_m, "Synthetic pool size for in-process runs");

  auto* catalogue_cmd = attack_cmd->add_subcommand("catalogue", "Pool cataloguing attacker");
  add_common(catalogue_cmd);
  catalogue_cmd->add_option("--m", attack.m, "Pool size");
  catalogue_cmd->add_option("--p", attack.p, "Pleasing images (default m/2)");
  catalogue_cmd->add_option("--q", attack.q, "Puzzles observed");
  catalogue_cmd->add_option("--repeats", attack.repeats, "Independent repeats");
  catalogue_cmd->add_option("--polarity-mix", attack.polarity_mix, "Share of reversed puzzles")
      ->check(CLI::Range(0.0, 1.0));

  auto* table_cmd = attack_cmd->add_subcommand("table", "Random-guess probabilities of compared schemes");
  table_cmd->add_option("--json", attack.json_path, "Write the table as JSON here");

  std::string pool_out = "demo-pool";
  int pool_count = 200;
  std::uint64_t pool_seed = 1;
  auto* pool_cmd = app.add_subcommand("make-pool", "Generate a synthetic demo pool");
  pool_cmd->add_option("--out", pool_out, "Output directory");
  pool_cmd->add_option("--count", pool_count, "Number of images")->check(CLI::PositiveNumber);
  pool_cmd->add_option("--seed", pool_seed, "Random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return run_serve(serve);
    if (*random_cmd) return run_attack_random(attack);
    if (*replay_cmd) return run_attack_replay(attack);
    if (*catalogue_cmd) return run_attack_catalogue(attack);
    if (*table_cmd) return run_attack_table(attack.json_path);
    if (*pool_cmd) return run_make_pool(pool_out, pool_count, pool_seed);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
