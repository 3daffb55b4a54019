#pragma once

// toongan command dispatcher. Exit codes: 0 success, 1 usage error, 2
// runtime error (including a failed gradient check).

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "toongan/edges.hpp"
#include "toongan/gradsuite.hpp"
#include "toongan/image.hpp"
#include "toongan/phash.hpp"
#include "toongan/survey_server.hpp"
#include "toongan/trainer.hpp"

namespace toongan::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kRuntime = 2;

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

inline void write_image(const std::filesystem::path& path, const RasterImage& img) {
  const std::string ext = lower_ext(path);
  if (ext == ".jpg" || ext == ".jpeg") {
    write_file(path, encode_jpeg(img));
  } else {
    write_png(path, img);
  }
}

/// "HOST:PORT" or ":PORT" or "PORT".
inline std::pair<std::string, int> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  std::string host = colon == std::string::npos ? "127.0.0.1" : bind.substr(0, colon);
  const std::string port = colon == std::string::npos ? bind : bind.substr(colon + 1);
  if (host.empty()) host = "0.0.0.0";
  int p = -1;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), p);
  if (ec != std::errc() || ptr != port.data() + port.size() || p < 0 || p > 65535) {
    throw ConfigError("bad --bind address '" + bind + "'");
  }
  return {host, p};
}

}  // namespace detail

struct SmoothOptions {
  std::string in, out;
  EdgeSmoothParams params;
};

inline int prep_smooth(const SmoothOptions& o, std::ostream& out, std::ostream& err) {
  o.params.validate();
  std::filesystem::create_directories(o.out);
  std::size_t done = 0, skipped = 0;
  for (const auto& path : list_images(o.in)) {
    try {
      write_png(std::filesystem::path(o.out) / (path.stem().string() + ".png"), edge_smooth(read_image(path), o.params));
      ++done;
    } catch (const DecodeError& e) {
      ++skipped;
      err << "warning: skipping " << path.string() << ": " << e.what() << "\n";
    }
  }
  out << "smoothed " << done << " image(s), skipped " << skipped << "\n";
  return kOk;
}

struct DedupOptions {
  std::string in;
  int threshold = 8;
  std::string move_to;  // empty: report only
};

/// Reports near-duplicate pairs and the files that would be dropped: for
/// each pair, the later file in name order unless its partner is already dropped.
inline int prep_dedup(const DedupOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<std::filesystem::path> files;
  std::vector<std::uint64_t> hashes;
  for (const auto& path : list_images(o.in)) {
    try {
      hashes.push_back(perceptual_hash(read_image(path)));
      files.push_back(path);
    } catch (const DecodeError& e) {
      err << "warning: skipping " << path.string() << ": " << e.what() << "\n";
    }
  }
  std::set<std::size_t> dropped;
  for (const auto& d : find_duplicates(hashes, o.threshold)) {
    out << files[d.first].filename().string() << " " << files[d.second].filename().string() << " " << d.distance
        << "\n";
    if (!dropped.count(d.first)) dropped.insert(d.second);
  }
  if (!o.move_to.empty()) {
    std::filesystem::create_directories(o.move_to);
    for (std::size_t i : dropped) std::filesystem::rename(files[i], std::filesystem::path(o.move_to) / files[i].filename());
  }
  out << files.size() << " image(s), " << dropped.size() << " duplicate(s)"
      << (o.move_to.empty() ? "" : " moved to " + o.move_to) << "\n";
  return kOk;
}

struct TrainOptions {
  std::string config;
  std::string resume;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

inline int train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  cfg.validate();
  TrainingData data = load_training_data(cfg, &err);
  std::unique_ptr<Trainer> trainer = o.resume.empty()
                                         ? std::make_unique<Trainer>(cfg, std::move(data))
                                         : std::make_unique<Trainer>(cfg, std::move(data), load_checkpoint(o.resume));
  trainer->run(cfg.out_dir, &out);
  if (!cfg.out_dir.empty()) out << "wrote " << (std::filesystem::path(cfg.out_dir) / "final.cgwt").string() << "\n";
  return kOk;
}

struct StylizeOptions {
  std::string ckpt, in, out;
};

inline int stylize_file(const StylizeOptions& o, std::ostream& out) {
  const RasterImage result = stylize(load_checkpoint(o.ckpt), read_image(o.in));
  detail::write_image(o.out, result);
  out << "wrote " << o.out << " (" << result.width() << "x" << result.height() << ")\n";
  return kOk;
}

struct GradcheckOptions {
  std::size_t seeds = 5;
  std::size_t probes = 30;
};

inline int gradcheck(const GradcheckOptions& o, std::ostream& out) {
  bool ok = true;
  for (const auto& e : gradsuite::run(o.seeds, o.probes)) {
    out << std::left << std::setw(28) << e.name << " max_rel_err " << std::scientific << std::setprecision(3)
        << e.max_relative_error << (e.passed() ? "  ok" : "  FAIL") << std::defaultfloat << "\n";
    ok = ok && e.passed();
  }
  out << (ok ? "all gradients within " : "gradient check failed, tolerance ") << gradsuite::kTolerance << "\n";
  return ok ? kOk : kRuntime;
}

struct ServeOptions {
  std::string def, store, bind = "127.0.0.1:8080", static_dir;
  std::uint64_t seed = 42;
};

inline int survey_serve(const ServeOptions& o, std::ostream& out) {
  const auto def = survey::load_definition(o.def);
  for (const auto& t : def.tasks)
    for (const auto& img : t.images)
      if (!std::filesystem::exists(img.path)) throw ConfigError("missing survey image " + img.path.string());
  const auto [host, port] = detail::split_bind(o.bind);
  survey::SurveyService svc(def, o.store, o.seed);
  survey::SurveyServer server(svc, o.static_dir);
  out << "serving survey on " << host << ":" << port << ", log " << o.store << std::endl;
  server.run(host, port);
  return kOk;
}

struct ReportOptions {
  std::string store, def;
  bool json = false;
};

inline int survey_report(const ReportOptions& o, std::ostream& out, std::ostream& err) {
  if (!std::filesystem::exists(o.store)) throw ConfigError("no survey log at " + o.store);
  const auto log = survey::read_log(o.store);
  if (log.skipped_tail) err << "warning: ignored a torn final line in " << o.store << "\n";
  survey::MeanRankReport r;
  if (o.def.empty()) {
    r = survey::mean_rank_report(log.records);
  } else {
    const auto def = survey::load_definition(o.def);
    std::vector<std::string> qs;
    for (const auto& q : def.questions) qs.push_back(q.id);
    r = survey::mean_rank_report(log.records, qs, def.models);
  }
  if (o.json) {
    out << survey::report_to_json(r).dump(2) << "\n";
  } else {
    out << survey::render_report(r);
  }
  return kOk;
}

/// Parses `args` (without the program name) and runs the chosen command.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cartoon-style GAN workbench: data prep, training, stylization and the ranking survey.", "toongan"};
  app.require_subcommand(1);

  SmoothOptions smooth;
  DedupOptions dedup;
  TrainOptions tr;
  StylizeOptions sty;
  GradcheckOptions gc;
  ServeOptions serve;
  ReportOptions report;
  int code = kOk;

  auto* prep = app.add_subcommand("prep", "Dataset preparation");
  prep->require_subcommand(1);
  auto* ps = prep->add_subcommand("smooth", "Write edge-smoothed copies of every image in a directory");
  ps->add_option("--in", smooth.in, "Input image directory")->required()->check(CLI::ExistingDirectory);
  ps->add_option("--out", smooth.out, "Output directory (PNG)")->required();
  ps->add_option("--canny-low", smooth.params.canny_low, "Hysteresis low threshold")->capture_default_str();
  ps->add_option("--canny-high", smooth.params.canny_high, "Hysteresis high threshold")->capture_default_str();
  ps->add_option("--dilate", smooth.params.dilation_radius, "Edge dilation radius (px)")->capture_default_str();
  ps->add_option("--kernel", smooth.params.blur_kernel, "Gaussian kernel size (odd)")->capture_default_str();
  ps->add_option("--sigma", smooth.params.blur_sigma, "Gaussian sigma, 0 derives it from the kernel")
      ->capture_default_str();
  ps->callback([&] { code = prep_smooth(smooth, out, err); });

  auto* pd = prep->add_subcommand("dedup", "Find near-duplicate images by perceptual hash");
  pd->add_option("--in", dedup.in, "Image directory")->required()->check(CLI::ExistingDirectory);
  pd->add_option("--threshold", dedup.threshold, "Max Hamming distance for a duplicate")
      ->capture_default_str()
      ->check(CLI::Range(0, 64));
  pd->add_option("--move-to", dedup.move_to, "Move dropped duplicates into this directory");
  pd->callback([&] { code = prep_dedup(dedup, out, err); });

  auto* t = app.add_subcommand("train", "Initialization phase then adversarial training");
  t->add_option("--config", tr.config, "Training config file (key = value lines)")->check(CLI::ExistingFile);
  t->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  t->add_option("--out", tr.out_dir, "Output directory (overrides out_dir)");
  t->add_option("--seed", tr.seed, "Seed (overrides the config; default 42)");
  t->callback([&] { code = train(tr, out, err); });

  auto* s = app.add_subcommand("stylize", "Run a trained generator on one image");
  s->add_option("--ckpt", sty.ckpt, "Checkpoint holding the generator")->required()->check(CLI::ExistingFile);
  s->add_option("--in", sty.in, "Input image")->required()->check(CLI::ExistingFile);
  s->add_option("--out", sty.out, "Output image (.png or .jpg)")->required();
  s->callback([&] { code = stylize_file(sty, out); });

  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every layer and loss");
  g->add_option("--seeds", gc.seeds, "Seeds per check")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--probes", gc.probes, "Probed coordinates per check")->capture_default_str()->check(CLI::PositiveNumber);
  g->callback([&] { code = gradcheck(gc, out); });

  auto* sv = app.add_subcommand("survey", "Ranking survey service");
  sv->require_subcommand(1);
  auto* ss = sv->add_subcommand("serve", "Serve the survey over HTTP");
  ss->add_option("--def", serve.def, "Survey definition (JSON)")->required()->check(CLI::ExistingFile);
  ss->add_option("--store", serve.store, "Append-only response log")->required();
  ss->add_option("--bind", serve.bind, "HOST:PORT")->capture_default_str();
  ss->add_option("--static", serve.static_dir, "Directory served at / (browser client)")->check(CLI::ExistingDirectory);
  ss->add_option("--seed", serve.seed, "Seed for participant tokens and shuffles")->capture_default_str();
  ss->callback([&] { code = survey_serve(serve, out); });

  auto* sr = sv->add_subcommand("report", "Mean rank per question and model");
  sr->add_option("--store", report.store, "Response log")->required();
  sr->add_option("--def", report.def, "Survey definition, for row and column order")->check(CLI::ExistingFile);
  sr->add_flag("--json", report.json, "Print JSON instead of a table");
  sr->callback([&] { code = survey_report(report, out, err); });

  if (args.empty()) {
    err << app.help();
    return kUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return code;
}

}  // namespace toongan::cli
