#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "toongan/checkpoint.hpp"
#include "toongan/config.hpp"
#include "toongan/dataset.hpp"
#include "toongan/image.hpp"
#include "toongan/losses.hpp"
#include "toongan/models.hpp"
#include "toongan/optim.hpp"

namespace toongan {

struct TrainingBatch {
  Tensor p;  // photos
  Tensor c;  // cartoons
  Tensor e;  // edge-smoothed cartoons
};

struct StepStats {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  bool gan = false;
  double lr = 0.0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_con = 0.0;
  double total = 0.0;
};

struct EpochStats {
  std::uint64_t epoch = 0;
  std::string phase;  // "init" or "gan"
  std::uint64_t steps = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_con = 0.0;
  double total = 0.0;
  double seconds = 0.0;
};

inline std::string stats_csv_header() { return "epoch,phase,steps,d_loss,g_adv,g_con,total,seconds"; }

inline std::string to_csv(const EpochStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%s,%llu,%.6f,%.6f,%.6f,%.6f,%.3f", static_cast<unsigned long long>(s.epoch),
                s.phase.c_str(), static_cast<unsigned long long>(s.steps), s.d_loss, s.g_adv, s.g_con, s.total,
                s.seconds);
  return buf;
}

namespace detail {

/// Runs `fn`, prefixing any NumericError with the network it concerns.
template <typename F>
auto naming_network(const char* net, F&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(std::string(net) + ": " + e.what());
  }
}

inline void update(Layer<float>& net, double lr, const AdamWOptions& opt, const char* name) {
  naming_network(name, [&] {
    net.visit("", {[&](const std::string&, Parameter<float>& p) {
                     if (!p.frozen) adamw_step(p, lr, opt);
                   },
                   nullptr});
    return 0;
  });
}

inline void require_finite(double v, const char* net, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(net) + ": non-finite " + what);
}

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw CheckpointError(CheckpointError::Kind::malformed_manifest, "bad numeric metadata '" + s + "'");
  }
  return v;
}

}  // namespace detail

/// Discriminator objective on the three populations, evaluated as one
/// concatenated batch so batch statistics cover all of them. With `grads`,
/// backpropagates into D's parameters.
inline DiscriminatorLoss<float> discriminator_pass(Discriminator<float>& d, const TrainingBatch& b, const Tensor& gp,
                                                   const LossWeights& w, Mode mode, bool grads) {
  const std::size_t n = b.c.shape().n;
  const Tensor logits = d.forward(concat_batch<float>({&b.c, &b.e, &gp}), mode);
  const auto loss = adversarial_loss_d(slice_batch(logits, 0, n), slice_batch(logits, n, b.e.shape().n),
                                       slice_batch(logits, n + b.e.shape().n, gp.shape().n), w);
  if (grads) d.backward(concat_batch<float>({&loss.grad_real, &loss.grad_edge, &loss.grad_fake}));
  return loss;
}

/// Reconstruction warm-up step: G minimizes content_loss(p, G(p)) alone.
inline StepStats init_step(Generator<float>& g, Layer<float>& f, const Tensor& p, double lr, const AdamWOptions& opt) {
  zero_grad(g);
  StepStats s;
  s.lr = lr;
  const Tensor gp = detail::naming_network("generator", [&] { return g.forward(p, Mode::train); });
  Tensor grad;
  s.g_con = detail::naming_network("generator", [&] { return content_loss(f, p, gp, &grad); });
  detail::require_finite(s.g_con, "generator", "content loss");
  s.total = s.g_con;
  g.backward(grad);
  detail::update(g, lr, opt, "generator");
  return s;
}

/// One adversarial step: D update on (c -> 1, e -> 0, G(p) -> 0) with G fixed,
/// then G update on the non-saturating adversarial loss plus omega * content
/// loss with D frozen (batch statistics, running statistics untouched).
inline StepStats gan_step(Generator<float>& g, Discriminator<float>& d, Layer<float>& f, const TrainingBatch& b,
                          const LossWeights& w, double lr, const AdamWOptions& opt) {
  b.p.require_same_shape(b.c, "gan_step");
  b.p.require_same_shape(b.e, "gan_step");
  StepStats s;
  s.gan = true;
  s.lr = lr;
  zero_grad(g);
  zero_grad(d);
  const Tensor gp = detail::naming_network("generator", [&] { return g.forward(b.p, Mode::train); });

  const auto dl = detail::naming_network("discriminator", [&] { return discriminator_pass(d, b, gp, w, Mode::train, true); });
  s.d_loss = dl.total;
  detail::require_finite(s.d_loss, "discriminator", "loss");
  detail::update(d, lr, opt, "discriminator");

  set_frozen(d, true);
  Tensor grad_gp;
  try {
    const Tensor logits = detail::naming_network("generator", [&] { return d.forward(gp, Mode::train_frozen_stats); });
    Tensor grad_logits;
    s.g_adv = detail::naming_network("generator", [&] { return adversarial_loss_g(logits, &grad_logits); });
    grad_gp = d.backward(grad_logits);
  } catch (...) {
    set_frozen(d, false);
    throw;
  }
  set_frozen(d, false);
  Tensor grad_con;
  s.g_con = detail::naming_network("generator", [&] { return content_loss(f, b.p, gp, &grad_con, w.omega); });
  s.total = total_loss(s.g_adv, s.g_con, w);
  detail::require_finite(s.total, "generator", "loss");
  grad_gp += grad_con;
  g.backward(grad_gp);
  detail::update(g, lr, opt, "generator");
  return s;
}

struct TrainingData {
  Dataset photos;
  Dataset cartoons;
  Dataset smoothed;
};

inline TrainingData load_training_data(const TrainConfig& cfg, std::ostream* warn = nullptr) {
  TrainingData data;
  data.photos = load_dataset(cfg.photo_dir, cfg.image_size, warn);
  if (cfg.gan_epochs > 0) {
    data.cartoons = load_dataset(cfg.cartoon_dir, cfg.image_size, warn);
    data.smoothed = load_dataset(cfg.smoothed_dir, cfg.image_size, warn);
  }
  return data;
}

/// Config keys that shape the training trajectory; a resume must not change them.
inline const std::vector<std::string>& trajectory_keys() {
  static const std::vector<std::string> keys = {
      "batch_size", "init_epochs", "base_lr",   "max_lr",    "half_cycle",          "weight_decay",
      "omega",      "d_real_weight", "d_edge_weight", "d_fake_weight", "seed",       "image_size",
      "flip",       "gen_base",    "gen_residual_blocks", "disc_base", "feature_base"};
  return keys;
}

/// Owns the three networks and the step counter. Step t runs the
/// initialization phase while t < init_steps(), the adversarial phase after.
/// Batches are pure functions of (seed, t), so a restored checkpoint resumes
/// the exact trajectory.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, TrainingData data)
      : cfg_(validated(cfg)),
        data_(std::move(data)),
        g_(cfg.generator_config(), cfg.seed),
        d_(cfg.discriminator_config(), cfg.seed),
        f_(cfg.feature_config(), cfg.seed),
        photos_(data_.photos.size(), cfg.seed, "photos"),
        steps_per_epoch_(std::max<std::size_t>(1, data_.photos.size() / cfg.batch_size)) {
    if (cfg.gan_epochs > 0) {
      if (data_.cartoons.size() == 0 || data_.smoothed.size() == 0) {
        throw ConfigError("adversarial training needs cartoon and edge-smoothed images");
      }
      cartoons_.emplace(data_.cartoons.size(), cfg.seed, "cartoons");
      smoothed_.emplace(data_.smoothed.size(), cfg.seed, "smoothed");
    }
    schedule_ = cfg.lr_schedule(steps_per_epoch_);
    schedule_.validate();
    if (!cfg.feature_weights.empty()) restore_state(f_, "F", load_checkpoint(cfg.feature_weights), false);
    set_frozen(f_, true);
  }

  /// Continues from a checkpoint written by checkpoint().
  Trainer(const TrainConfig& cfg, TrainingData data, const Checkpoint& ck) : Trainer(cfg, std::move(data)) {
    const auto values = config_values(cfg);
    for (const auto& key : trajectory_keys()) {
      const std::string saved = ck.meta_at("config." + key);
      if (saved != values.at(key)) {
        throw ConfigError("cannot resume: config '" + key + "' is " + values.at(key) + " but the checkpoint has " + saved);
      }
    }
    if (ck.meta_at("photos") != std::to_string(data_.photos.size())) {
      throw ConfigError("cannot resume: photo count differs from the checkpoint (" + ck.meta_at("photos") + ")");
    }
    restore_state(g_, "G", ck);
    restore_state(d_, "D", ck);
    restore_state(f_, "F", ck, false);
    set_frozen(f_, true);
    step_ = std::stoull(ck.meta_at("step"));
    acc_d_ = detail::parse_hexfloat(ck.meta_at("acc.d_loss"));
    acc_adv_ = detail::parse_hexfloat(ck.meta_at("acc.g_adv"));
    acc_con_ = detail::parse_hexfloat(ck.meta_at("acc.g_con"));
    acc_total_ = detail::parse_hexfloat(ck.meta_at("acc.total"));
  }

  std::uint64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::uint64_t init_steps() const { return cfg_.init_epochs * steps_per_epoch_; }
  std::uint64_t total_steps() const { return (cfg_.init_epochs + cfg_.gan_epochs) * steps_per_epoch_; }
  std::uint64_t step_index() const { return step_; }
  bool done() const { return step_ >= total_steps(); }

  Generator<float>& generator() { return g_; }
  Discriminator<float>& discriminator() { return d_; }
  FeatureExtractor<float>& features() { return f_; }
  const TrainConfig& config() const { return cfg_; }
  const LrSchedule& schedule() const { return schedule_; }

  /// Photo batch of step t.
  Tensor photo_batch(std::uint64_t t) {
    const std::uint64_t epoch = t / steps_per_epoch_, k = t % steps_per_epoch_;
    return gather_batch(data_.photos, photos_, epoch * data_.photos.size() + k * cfg_.batch_size, cfg_.batch_size,
                        cfg_.flip);
  }

  /// Full batch of adversarial step t (t >= init_steps()).
  TrainingBatch gan_batch(std::uint64_t t) {
    const std::uint64_t pos = (t - init_steps()) * cfg_.batch_size;
    return {photo_batch(t), gather_batch(data_.cartoons, *cartoons_, pos, cfg_.batch_size, cfg_.flip),
            gather_batch(data_.smoothed, *smoothed_, pos, cfg_.batch_size, cfg_.flip)};
  }

  /// Executes the next step. Completed epochs are appended to history().
  StepStats step() {
    if (done()) throw ConfigError("training already finished");
    if (!epoch_clock_) epoch_clock_ = std::chrono::steady_clock::now();
    const std::uint64_t t = step_;
    const double lr = cyclic_lr(t, schedule_);
    StepStats s = t < init_steps() ? init_step(g_, f_, photo_batch(t), lr, cfg_.adamw())
                                   : gan_step(g_, d_, f_, gan_batch(t), cfg_.loss_weights(), lr, cfg_.adamw());
    s.step = t;
    s.epoch = t / steps_per_epoch_;
    acc_d_ += s.d_loss;
    acc_adv_ += s.g_adv;
    acc_con_ += s.g_con;
    acc_total_ += s.total;
    ++step_;
    if (step_ % steps_per_epoch_ == 0) close_epoch(s.epoch, s.gan);
    return s;
  }

  const std::vector<EpochStats>& history() const { return history_; }

  /// Everything needed to resume: weights, optimizer moments, batch-norm
  /// buffers, the step counter and the current epoch's partial sums.
  Checkpoint checkpoint() {
    Checkpoint ck;
    store_state(g_, "G", ck);
    store_state(d_, "D", ck);
    store_state(f_, "F", ck, false);
    for (const auto& [k, v] : config_values(cfg_)) ck.meta["config." + k] = v;
    ck.meta["step"] = std::to_string(step_);
    ck.meta["photos"] = std::to_string(data_.photos.size());
    ck.meta["acc.d_loss"] = detail::hexfloat(acc_d_);
    ck.meta["acc.g_adv"] = detail::hexfloat(acc_adv_);
    ck.meta["acc.g_con"] = detail::hexfloat(acc_con_);
    ck.meta["acc.total"] = detail::hexfloat(acc_total_);
    return ck;
  }

  /// Runs to completion. With an output directory, appends epoch lines to
  /// stats.csv, writes checkpoint.cgwt every checkpoint_every steps and
  /// final.cgwt at the end. Epoch lines also go to `log`.
  std::vector<EpochStats> run(const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr) {
    std::ofstream csv;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      const auto path = out_dir / "stats.csv";
      const bool fresh = step_ == 0 || !std::filesystem::exists(path);
      csv.open(path, fresh ? std::ios::trunc : std::ios::app);
      if (!csv) throw IoError("cannot write " + path.string());
      if (fresh) csv << stats_csv_header() << "\n";
    }
    if (log) *log << stats_csv_header() << "\n";
    while (!done()) {
      const std::size_t before = history_.size();
      step();
      for (std::size_t i = before; i < history_.size(); ++i) {
        if (csv.is_open()) csv << to_csv(history_[i]) << std::endl;
        if (log) *log << to_csv(history_[i]) << std::endl;
      }
      if (!out_dir.empty() && cfg_.checkpoint_every && step_ % cfg_.checkpoint_every == 0) {
        save_checkpoint(out_dir / "checkpoint.cgwt", checkpoint());
      }
    }
    if (!out_dir.empty()) save_checkpoint(out_dir / "final.cgwt", checkpoint());
    return history_;
  }

 private:
  static const TrainConfig& validated(const TrainConfig& cfg) {
    cfg.validate();
    return cfg;
  }

  void close_epoch(std::uint64_t epoch, bool gan) {
    const double n = static_cast<double>(steps_per_epoch_);
    EpochStats e;
    e.epoch = epoch;
    e.phase = gan ? "gan" : "init";
    e.steps = steps_per_epoch_;
    e.d_loss = acc_d_ / n;
    e.g_adv = acc_adv_ / n;
    e.g_con = acc_con_ / n;
    e.total = acc_total_ / n;
    const auto now = std::chrono::steady_clock::now();
    e.seconds = std::chrono::duration<double>(now - *epoch_clock_).count();
    epoch_clock_ = now;
    history_.push_back(e);
    acc_d_ = acc_adv_ = acc_con_ = acc_total_ = 0.0;
  }

  TrainConfig cfg_;
  TrainingData data_;
  Generator<float> g_;
  Discriminator<float> d_;
  FeatureExtractor<float> f_;
  SampleStream photos_;
  std::optional<SampleStream> cartoons_, smoothed_;
  std::uint64_t steps_per_epoch_;
  LrSchedule schedule_;
  std::uint64_t step_ = 0;
  double acc_d_ = 0.0, acc_adv_ = 0.0, acc_con_ = 0.0, acc_total_ = 0.0;
  std::optional<std::chrono::steady_clock::time_point> epoch_clock_;
  std::vector<EpochStats> history_;
};

/// Rebuilds the generator stored in a checkpoint under "G".
inline Generator<float> generator_from_checkpoint(const Checkpoint& ck) {
  TrainConfig cfg;
  for (const char* key : {"gen_base", "gen_residual_blocks"}) {
    set_config_value(cfg, key, ck.meta_at(std::string("config.") + key));
  }
  Generator<float> g(cfg.generator_config());
  restore_state(g, "G", ck, false);
  return g;
}

/// Eval-mode generator pass on one image. Sides that are not multiples of 4
/// are padded by edge replication and cropped back afterwards.
inline RasterImage stylize(Generator<float>& g, const RasterImage& img) {
  const std::size_t w = img.width(), h = img.height();
  const std::size_t pw = (w + 3) / 4 * 4, ph = (h + 3) / 4 * 4;
  RasterImage padded(pw, ph);
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x)
      for (std::size_t c = 0; c < 3; ++c) padded.at(x, y, c) = img.at(std::min(x, w - 1), std::min(y, h - 1), c);
  const RasterImage out = tensor_to_image(g.forward(image_to_tensor(padded), Mode::eval));
  RasterImage cropped(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) cropped.at(x, y, c) = out.at(x, y, c);
  return cropped;
}

inline RasterImage stylize(const Checkpoint& ck, const RasterImage& img) {
  Generator<float> g = generator_from_checkpoint(ck);
  return stylize(g, img);
}

/// Mean sigmoid of D's patch logits over a batch.
inline double mean_patch_probability(Discriminator<float>& d, const Tensor& x, Mode mode = Mode::eval) {
  const Tensor logits = d.forward(x, mode);
  double acc = 0.0;
  for (float z : logits.span()) acc += sigmoid(z);
  return acc / static_cast<double>(logits.size());
}

}  // namespace toongan
