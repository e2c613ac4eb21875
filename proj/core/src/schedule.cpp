#include "iidm/schedule.hpp"

#include <stdexcept>

namespace iidm {

namespace {

void check_t(int t, int steps) {
    if (t < 1 || t > steps)
        throw std::invalid_argument("schedule: timestep out of range 1..T");
}

} // namespace

double VarianceSchedule::beta(int t) const {
    check_t(t, steps);
    return betas[static_cast<std::size_t>(t - 1)];
}

double VarianceSchedule::alpha(int t) const {
    check_t(t, steps);
    return alphas[static_cast<std::size_t>(t - 1)];
}

double VarianceSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_t(t, steps);
    return alpha_bars[static_cast<std::size_t>(t - 1)];
}

double VarianceSchedule::posterior_variance(int t) const {
    check_t(t, steps);
    return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

VarianceSchedule make_schedule(int steps, double beta_start, double beta_end,
                               ScheduleKind kind) {
    if (kind != ScheduleKind::Linear)
        throw std::invalid_argument("make_schedule: unknown schedule kind");
    if (steps < 2) throw std::invalid_argument("make_schedule: need T >= 2");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw std::invalid_argument(
            "make_schedule: need 0 < beta_start < beta_end < 1 (strictly increasing)");

    VarianceSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alphas.resize(static_cast<std::size_t>(steps));
    s.alpha_bars.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double beta =
            beta_start + (beta_end - beta_start) * static_cast<double>(t) / (steps - 1);
        s.betas[static_cast<std::size_t>(t)] = beta;
        s.alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
        prod *= 1.0 - beta;
        s.alpha_bars[static_cast<std::size_t>(t)] = prod;
    }
    return s;
}

} // namespace iidm
