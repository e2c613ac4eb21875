#pragma once

#include <vector>

namespace iidm {

enum class ScheduleKind { Linear };

/// Diffusion timebase: strictly increasing betas in (0,1) with the derived
/// alphas and cumulative products. Steps are 1-indexed; alpha_bar(0) == 1.
struct VarianceSchedule {
    int steps = 0;
    std::vector<double> betas;      // beta_1..beta_T
    std::vector<double> alphas;     // 1 - beta_t
    std::vector<double> alpha_bars; // prod_{s<=t} alpha_s

    double beta(int t) const;
    double alpha(int t) const;
    double alpha_bar(int t) const; // t in 0..T
    /// Posterior variance beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t);
    /// zero at t == 1.
    double posterior_variance(int t) const;
};

/// Builds the schedule; T >= 2 and 0 < beta_start < beta_end < 1 are required
/// (equal endpoints would not be strictly increasing).
VarianceSchedule make_schedule(int steps, double beta_start, double beta_end,
                               ScheduleKind kind = ScheduleKind::Linear);

} // namespace iidm
