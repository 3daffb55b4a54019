// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "image_fixtures.hpp"
#include "survey_fixtures.hpp"
#include "train_fixtures.hpp"
#include "training_runs.hpp"
#include "toongan/gradsuite.hpp"
#include "toongan/survey_server.hpp"
#include "toongan/trainer.hpp"

using namespace toongan;
namespace tt = toongan::testing;
namespace fs = std::filesystem;

namespace {

/// Collects failed expectations for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("toongan_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- criteria ---------------------------------------------------------------

void gradient_suite(Check& c) {
  const auto entries = gradsuite::run(5, 30);
  double worst = 0.0;
  for (const auto& e : entries) {
    worst = std::max(worst, e.max_relative_error);
    c.expect(e.passed(), e.name + " max relative error " + fmt("%.3g", e.max_relative_error));
  }
  c.expect(entries.size() == 9, "expected 9 suite entries");
  c.detail = std::to_string(entries.size()) + " entries, 5 seeds, worst " + fmt("%.2e", worst);
}

void shape_contracts(Check& c) {
  Generator<float> g;
  Discriminator<float> d;
  Rng rng(1);
  const auto input = [&](std::size_t h, std::size_t w) {
    Tensor x({1, 3, h, w});
    for (auto& v : x.vec()) v = static_cast<float>(rng.uniform() * 2 - 1);
    return x;
  };
  const Tensor x = input(224, 224);
  c.expect(g.forward(x, Mode::eval).shape() == Shape{1, 3, 224, 224}, "generator 224x224");
  c.expect(d.forward(x, Mode::eval).shape() == Shape{1, 1, 56, 56}, "discriminator 224x224 -> 56x56");
  std::size_t cases = 0;
  for (std::size_t h : {64, 96, 128, 224}) {
    for (std::size_t w : {64, 96, 128, 224}) {
      const Tensor xi = input(h, w);
      const std::string tag = std::to_string(h) + "x" + std::to_string(w);
      c.expect(g.forward(xi, Mode::eval).shape() == Shape{1, 3, h, w}, "generator " + tag);
      c.expect(d.forward(xi, Mode::eval).shape() == Shape{1, 1, h / 4, w / 4}, "discriminator " + tag);
      ++cases;
    }
  }
  c.detail = "default widths, " + std::to_string(cases) + " sweep sizes";
}

void objective_arithmetic(Check& c) {
  const TrainConfig cfg = parse_train_config("omega = 10\n");
  const LossWeights w = cfg.loss_weights();
  c.expect(w.omega == 10.0, "omega not taken from config");
  Rng rng(11);
  std::size_t n = 0;
  for (int i = 0; i < 10000; ++i, ++n) {
    const double adv = rng.uniform() * 20 - 5, con = rng.uniform() * 20;
    if (total_loss(adv, con, w) != adv + 10.0 * con) {
      c.expect(false, "mismatch at adv=" + fmt("%.17g", adv) + " con=" + fmt("%.17g", con));
      break;
    }
  }
  // The trainer reports the same sum with whatever omega the config carries.
  TrainConfig toy = tt::toy_config();
  toy.omega = 3.25;
  toy.init_epochs = 0;
  Trainer tr(toy, tt::toy_data(8, 8));
  const StepStats s = tr.step();
  c.expect(s.gan && s.total == s.g_adv + 3.25 * s.g_con, "trainer total != adv + omega * con");
  c.detail = std::to_string(n) + " grid points exact";
}

void edge_smoothing(Check& c) {
  for (std::uint8_t v : {0, 77, 255}) {
    const RasterImage img(23, 19, v);
    c.expect(edge_smooth(img, {}) == img, "uniform image changed");
  }
  c.expect(tt::fnv1a(edge_smooth(tt::step_edge(32, 20), {}).pixels()) == tt::kGoldenStep32x20, "step edge golden");
  c.expect(tt::fnv1a(edge_smooth(tt::diagonal_edge(40, 40), {}).pixels()) == tt::kGoldenDiagonal40,
           "diagonal golden");
  c.expect(tt::fnv1a(edge_smooth(tt::mosaic(64, 64, 7), {}).pixels()) == tt::kGoldenMosaic64, "mosaic golden");
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RasterImage img = tt::mosaic(48, 40, seed);
    const EdgeMask mask = edge_mask(img, {});
    const RasterImage out = edge_smooth(img, {});
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
      if (mask.bits[i]) continue;
      ++checked;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        if (out.pixels()[i * 3 + ch] != img.pixels()[i * 3 + ch]) {
          c.expect(false, "pixel outside mask changed on image " + std::to_string(seed));
          i = mask.bits.size() - 1;
          break;
        }
      }
    }
  }
  c.detail = "3 goldens, " + std::to_string(checked) + " unmasked pixels over 50 images";
}

void init_descent(Check& c) {
  const auto d = tt::init_descent_run();
  c.expect(d.ratio() <= 0.5, "16-photo run ratio " + fmt("%.3f", d.ratio()) + " > 0.5");
  const auto o = tt::singleton_overfit_run();
  c.expect(o.ratio() <= 0.1, "singleton ratio " + fmt("%.3f", o.ratio()) + " > 0.1");
  c.detail = "16 photos " + fmt("%.3f", d.ratio()) + " of first-10 mean, singleton " + fmt("%.3f", o.ratio());
}

void toy_adversarial(Check& c) {
  const auto r = tt::toy_adversarial_run();
  c.expect(r.p_cartoon >= 0.8, "cartoon patches " + fmt("%.3f", r.p_cartoon) + " < 0.8");
  c.expect(r.p_smoothed <= 0.2, "smoothed patches " + fmt("%.3f", r.p_smoothed) + " > 0.2");
  c.detail = "cartoon " + fmt("%.3f", r.p_cartoon) + ", smoothed " + fmt("%.3f", r.p_smoothed);
}

void determinism_resume(Check& c) {
  TrainConfig cfg = tt::toy_config();
  cfg.init_epochs = 2;
  cfg.gan_epochs = 2;
  Trainer a(cfg, tt::toy_data(8, 8)), b(cfg, tt::toy_data(8, 8));
  a.run();
  b.run();
  const auto expected = serialize_checkpoint(a.checkpoint());
  c.expect(serialize_checkpoint(b.checkpoint()) == expected, "same seed gave different checkpoints");
  const auto dir = scratch("resume");
  std::size_t resumes = 0;
  for (std::uint64_t k = 1; k < a.total_steps(); k += 2) {
    Trainer first(cfg, tt::toy_data(8, 8));
    for (std::uint64_t i = 0; i < k; ++i) first.step();
    save_checkpoint(dir / "ck.cgwt", first.checkpoint());
    Trainer resumed(cfg, tt::toy_data(8, 8), load_checkpoint(dir / "ck.cgwt"));
    resumed.run();
    c.expect(serialize_checkpoint(resumed.checkpoint()) == expected, "resume at step " + std::to_string(k));
    ++resumes;
  }
  c.detail = std::to_string(a.total_steps()) + " steps, " + std::to_string(resumes) + " resume points";
}

void checkpoint_round_trip(Check& c) {
  using Kind = CheckpointError::Kind;
  TrainConfig cfg = tt::toy_config();
  cfg.gan_epochs = 1;
  Trainer tr(cfg, tt::toy_data(8, 8));
  tr.run();  // non-trivial optimizer moments and step counts
  const Checkpoint ck = tr.checkpoint();
  const auto dir = scratch("checkpoint");
  save_checkpoint(dir / "a.cgwt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.cgwt");
  c.expect(back.meta == ck.meta, "metadata differs");
  c.expect(back.tensors.size() == ck.tensors.size(), "tensor count differs");
  std::size_t optimizer_tensors = 0;
  for (const auto& [name, t] : ck.tensors) {
    if (name.find("@m") != std::string::npos || name.find("@v") != std::string::npos) ++optimizer_tensors;
    const auto it = back.tensors.find(name);
    c.expect(it != back.tensors.end() && it->second.shape() == t.shape() &&
                 std::memcmp(it->second.data(), t.data(), t.size() * sizeof(float)) == 0,
             "tensor " + name);
  }
  c.expect(optimizer_tensors > 0, "no optimizer state stored");
  Trainer restored(cfg, tt::toy_data(8, 8), back);
  c.expect(serialize_checkpoint(restored.checkpoint()) == serialize_checkpoint(ck), "restore is not bit-exact");

  const auto good = serialize_checkpoint(ck);
  const auto kind_of = [](const std::vector<std::uint8_t>& bytes) -> std::optional<Kind> {
    try {
      parse_checkpoint(bytes);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    return std::nullopt;
  };
  auto magic = good;
  magic[0] = 'X';
  auto version = good;
  version[4] = 9;
  auto truncated = good;
  truncated.resize(good.size() / 2);
  auto manifest = good;
  const auto pos = std::search(manifest.begin(), manifest.end(), std::begin("f32"), std::end("f32") - 1);
  *pos = 'q';
  c.expect(kind_of(magic) == Kind::bad_magic, "bad magic");
  c.expect(kind_of(version) == Kind::unsupported_version, "unsupported version");
  c.expect(kind_of(truncated) == Kind::truncated_payload, "truncated payload");
  c.expect(kind_of(manifest) == Kind::malformed_manifest, "malformed manifest");
  try {
    load_checkpoint(dir / "missing.cgwt");
    c.expect(false, "missing file accepted");
  } catch (const CheckpointError& e) {
    c.expect(e.kind() == Kind::io, "missing file kind");
  }
  c.detail = std::to_string(ck.tensors.size()) + " tensors (" + std::to_string(optimizer_tensors) +
             " optimizer moments), 5 corruption kinds";
}

void survey_math(Check& c) {
  const auto r = survey::mean_rank_report(tt::published_survey_records());
  const std::map<std::string, std::vector<std::string>> published = {{"aesthetic", {"2.12", "1.64", "2.24"}},
                                                                      {"cartoon", {"1.90", "2.33", "1.78"}}};
  std::string rendered;
  for (const auto& [q, means] : published) {
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string got = survey::format_rank(r.at(q, survey::default_models()[i]).mean());
      c.expect(got == means[i], q + "/" + survey::default_models()[i] + " rendered " + got);
      rendered += (rendered.empty() ? "" : " ") + got;
    }
  }
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (const auto& q : survey::mean_rank_report(tt::random_records(seed, 400, 30)).questions) {
      std::uint64_t sum = 0;
      for (const auto& m : q.models) sum += m.rank_sum;
      c.expect(sum == 6 * q.models.front().count, "rank sums do not total 6 per record, seed " + std::to_string(seed));
    }
  }
  std::size_t agree = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto log = tt::random_records(seed, 20 + seed % 180, 1 + seed % 12);
    const auto oracle = tt::report_oracle(log);
    bool ok = true;
    for (const auto& q : survey::mean_rank_report(log).questions) {
      for (const auto& m : q.models) {
        const auto it = oracle.find({q.question, m.model});
        const auto want = it == oracle.end() ? std::pair<std::uint64_t, std::uint64_t>{0, 0} : it->second;
        ok = ok && m.rank_sum == want.first && m.count == want.second;
      }
    }
    c.expect(ok, "oracle disagrees on seed " + std::to_string(seed));
    agree += ok;
  }
  c.detail = rendered + "; oracle agrees on " + std::to_string(agree) + "/1000";
}

void survey_service(Check& c) {
  const auto dir = scratch("service");
  const auto def = survey::load_definition(tt::write_survey(dir / "s"));
  survey::SurveyService svc(def, dir / "responses.log");
  survey::SurveyServer server(svc);
  const int port = server.start();

  const std::size_t single = tt::run_scripted_client(port);
  c.expect(single == 60, "single session gave " + std::to_string(single) + " inputs");

  std::vector<std::size_t> inputs(10);
  std::vector<std::thread> clients;
  for (int i = 0; i < 10; ++i) clients.emplace_back([&, i] { inputs[i] = tt::run_scripted_client(port); });
  for (auto& t : clients) t.join();
  for (auto n : inputs) c.expect(n == 60, "concurrent client gave " + std::to_string(n) + " inputs");

  // Rejections use a fresh session so the 210 records above stay complete.
  httplib::Client cli("127.0.0.1", port);
  const auto session = survey::json::parse(cli.Post("/api/session")->body);
  const auto& task = session.at("tasks")[0];
  const std::string url = "/api/session/" + session.at("participant_id").get<std::string>() + "/response";
  std::size_t rejected = 0;
  for (const auto& ranks : std::vector<std::array<int, 3>>{{1, 1, 2}, {1, 2, 4}, {0, 1, 2}, {3, 3, 3}}) {
    survey::json body = {{"task_id", task.at("task_id")}, {"rankings", survey::json::object()}};
    for (int i = 0; i < 3; ++i) body["rankings"][task.at("images")[i].at("image_id").get<std::string>()] = ranks[i];
    const auto res = cli.Post(url, body.dump(), "application/json");
    c.expect(res && res->status == 400, "non-bijective ranking not rejected with 400");
    rejected += res && res->status == 400;
  }
  server.stop();

  std::ifstream in(dir / "responses.log");
  std::size_t responses = 0;
  std::set<std::pair<std::string, std::string>> keys;
  for (std::string line; std::getline(in, line);) {
    try {
      const auto j = survey::json::parse(line);
      if (j.at("type") != "response") continue;
      ++responses;
      keys.insert({j.at("participant_id").get<std::string>(), j.at("task_id").get<std::string>()});
    } catch (const std::exception&) {
      c.expect(false, "corrupt log line");
    }
  }
  // 20 from the single session plus 200 from the concurrent ones.
  c.expect(responses == 220 && keys.size() == 220, "log holds " + std::to_string(responses) + " records");
  c.expect(svc.report().records == 220, "report sees " + std::to_string(svc.report().records) + " records");
  c.detail = "60 inputs per session, " + std::to_string(responses - 20) + " concurrent records, " +
             std::to_string(rejected) + " rejections";
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_seconds;  // 0: no runtime bound
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient suite", 120, gradient_suite},
      {"shape contracts", 60, shape_contracts},
      {"objective arithmetic", 0, objective_arithmetic},
      {"edge smoothing", 0, edge_smoothing},
      {"init-phase descent", 600, init_descent},
      {"toy adversarial sanity", 900, toy_adversarial},
      {"determinism and resume", 0, determinism_resume},
      {"checkpoint round trip", 0, checkpoint_round_trip},
      {"survey math", 0, survey_math},
      {"survey service", 0, survey_service},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_seconds > 0 && secs > cr.budget_seconds) {
      c.failures.push_back("took " + fmt("%.1f", secs) + " s, budget " + fmt("%.0f", cr.budget_seconds) + " s");
    }
    const bool ok = c.failures.empty();
    failed += !ok;
    std::printf("%s  %-24s %s [%.1f s]\n", ok ? "PASS" : "FAIL", cr.name, c.detail.c_str(), secs);
    for (const auto& f : c.failures) std::printf("        - %s\n", f.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
