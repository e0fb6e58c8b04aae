#include "tmclass/schedules.hpp"

#include <cmath>
#include <string>

#include "tmclass/errors.hpp"

namespace tmclass {

namespace {

void check_steepness(double k) {
    if (!(k > 0.0) || !std::isfinite(k)) {
        throw InvalidArgument("logistic steepness k must be > 0, got " + std::to_string(k));
    }
}

void check_dims(const VecRef& a, const VecRef& b, const char* what) {
    if (a.size() != b.size()) {
        throw InvalidArgument(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    }
}

void check_open_unit(double t) {
    if (!(t > 0.0 && t < 1.0)) {
        throw OutOfDomain("time must lie in (0, 1), got " + std::to_string(t));
    }
}

}  // namespace

void ScheduleParams::validate() const {
    if (!(k > 0.0) || !std::isfinite(k)) throw InvalidArgument("schedule.k must be > 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("schedule.sigma must be >= 0");
    if (!(t_eps > 0.0 && t_eps < 0.5)) throw InvalidArgument("schedule.t_eps must lie in (0, 0.5)");
    if (!(t_max > 0.5 && t_max < 1.0)) throw InvalidArgument("schedule.t_max must lie in (0.5, 1)");
}

void ScheduleParams::check_time(double t) const {
    if (!(t >= t_eps && t <= t_max)) {
        throw OutOfDomain("time " + std::to_string(t) + " outside working interval [" + std::to_string(t_eps) +
                          ", " + std::to_string(t_max) + "]");
    }
}

namespace schedule {

double alpha(double t, double k) {
    check_steepness(k);
    if (!(t >= 0.0 && t <= 1.0)) {
        throw OutOfDomain("alpha: time must lie in [0, 1], got " + std::to_string(t));
    }
    const double eh = std::exp(0.5 * k);
    // (1 + eh) / (1 + e^{-k(t-1/2)}) - 1 rewritten as (eh - e^{-k(t-1/2)}) / (1 + e^{-k(t-1/2)})
    // so alpha(0) and alpha(1) cancel exactly.
    const double e = std::exp(-k * (t - 0.5));
    return (eh - e) / ((1.0 + e) * (eh - 1.0));
}

double alpha_derivative(double t, double k) {
    check_steepness(k);
    if (!(t >= 0.0 && t <= 1.0)) {
        throw OutOfDomain("alpha_derivative: time must lie in [0, 1], got " + std::to_string(t));
    }
    const double eh = std::exp(0.5 * k);
    const double e = std::exp(-k * (t - 0.5));
    return (1.0 + eh) / (eh - 1.0) * k * e / ((1.0 + e) * (1.0 + e));
}

Vec mean(const VecRef& x0, const VecRef& x1, double t, double k) {
    check_dims(x0, x1, "mean");
    return x0 + (x1 - x0) * alpha(t, k);
}

Vec mean_derivative(const VecRef& x0, const VecRef& x1, double t, double k) {
    check_dims(x0, x1, "mean_derivative");
    return (x1 - x0) * alpha_derivative(t, k);
}

double std(double t, double sigma) {
    check_open_unit(t);
    if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
    return sigma * std::sqrt(t * (1.0 - t));
}

double std_log_derivative(double t) {
    check_open_unit(t);
    return (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));
}

Vec perturb(const VecRef& x0, const VecRef& x1, double t, const ScheduleParams& params, const VecRef& noise) {
    params.check_time(t);
    check_dims(x0, noise, "perturb");
    return mean(x0, x1, t, params.k) + std(t, params.sigma) * noise;
}

Vec vector_field(const VecRef& x_t, const VecRef& x_ref0, const VecRef& x1, double t,
                 const ScheduleParams& params) {
    params.check_time(t);
    check_dims(x_t, x1, "vector_field");
    return std_log_derivative(t) * (x_t - mean(x_ref0, x1, t, params.k)) +
           mean_derivative(x_ref0, x1, t, params.k);
}

}  // namespace schedule
}  // namespace tmclass
