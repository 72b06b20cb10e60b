#pragma once

#include <atomic>
#include <chrono>

#include "blcm/protocol.hpp"

namespace blcm {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }
};

/// Test clock moved by hand.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = 0) : now_(start) {}
  Timestamp now() const override { return now_.load(); }
  void set(Timestamp t) { now_.store(t); }
  void advance(Timestamp dt) { now_.fetch_add(dt); }

 private:
  std::atomic<Timestamp> now_;
};

}  // namespace blcm
