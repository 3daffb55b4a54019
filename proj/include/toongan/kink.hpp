#pragma once

#include <cstdint>

namespace toongan {

/// Records which side of every non-differentiable point (ReLU/LReLU hinge,
/// |.| at zero) a computation visited. Two evaluations with equal signatures
/// traversed the same linear piece, so finite differences between them are
/// valid. Installed per thread by grad_check; layers report through observe().
class KinkMonitor {
 public:
  void record(bool side) noexcept {
    hash_ ^= side ? 0x9e3779b97f4a7c15ULL : 0x5851f42d4c957f2dULL;
    hash_ = (hash_ << 7 | hash_ >> 57) * 0x100000001b3ULL;
    ++count_;
  }

  std::uint64_t signature() const noexcept { return hash_ ^ count_; }

  static KinkMonitor*& current() noexcept {
    thread_local KinkMonitor* active = nullptr;
    return active;
  }

  static void observe(bool side) noexcept {
    if (auto* m = current()) m->record(side);
  }

  static bool active() noexcept { return current() != nullptr; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  std::uint64_t count_ = 0;
};

/// Installs a monitor on this thread for the lifetime of the guard.
class KinkScope {
 public:
  explicit KinkScope(KinkMonitor& m) noexcept : previous_(KinkMonitor::current()) { KinkMonitor::current() = &m; }
  ~KinkScope() { KinkMonitor::current() = previous_; }
  KinkScope(const KinkScope&) = delete;
  KinkScope& operator=(const KinkScope&) = delete;

 private:
  KinkMonitor* previous_;
};

}  // namespace toongan
