#pragma once

#include <cmath>
#include <stdexcept>

namespace mcssl {

struct SchedulerState {
  int64_t step = 0;
  int64_t total_steps = 1;
};

// start + (end - start) * (1 - cos(pi * step / total)) / 2
inline double cosine_value(double start, double end, const SchedulerState& s) {
  if (s.total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  double frac = static_cast<double>(s.step) / static_cast<double>(s.total_steps);
  return start + (end - start) * (1.0 - std::cos(M_PI * frac)) / 2.0;
}

// Linear warmup from 0 over warmup_steps, then cosine decay base -> final
// over the remaining steps.
inline double warmup_cosine_lr(double base_lr, double final_lr, int64_t warmup_steps,
                               const SchedulerState& s) {
  if (warmup_steps > 0 && s.step < warmup_steps)
    return base_lr * static_cast<double>(s.step) / static_cast<double>(warmup_steps);
  int64_t span = s.total_steps - warmup_steps;
  if (span < 1) span = 1;
  SchedulerState tail{s.step - warmup_steps, span};
  return cosine_value(base_lr, final_lr, tail);
}

}  // namespace mcssl
