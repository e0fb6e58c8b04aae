#pragma once

#include <Eigen/Dense>

namespace tmclass {

/// Hyperparameters of the logistic-mean / bridge-variance Gaussian path.
struct ScheduleParams {
    double k = 6.0;        // logistic steepness, > 0
    double sigma = 0.1;    // bridge variance scale, >= 0
    double t_eps = 0.03;   // smallest working time, in (0, 0.5)
    double t_max = 0.97;   // largest working time, in (0.5, 1)

    /// Throws InvalidArgument when any field breaks its range.
    void validate() const;
    /// Throws OutOfDomain unless t_eps <= t <= t_max.
    void check_time(double t) const;

    friend bool operator==(const ScheduleParams&, const ScheduleParams&) = default;
};

using Vec = Eigen::VectorXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

namespace schedule {

/// Logistic interpolation coefficient, alpha(0) = 0, alpha(1) = 1:
///   alpha(t) = ((1 + e^{k/2}) / (1 + e^{-k(t - 1/2)}) - 1) / (e^{k/2} - 1)
double alpha(double t, double k);
/// d alpha / dt.
double alpha_derivative(double t, double k);

/// mu_t = x0 + (x1 - x0) * alpha(t).
Vec mean(const VecRef& x0, const VecRef& x1, double t, double k);
/// d mu_t / dt = (x1 - x0) * alpha'(t).
Vec mean_derivative(const VecRef& x0, const VecRef& x1, double t, double k);

/// sigma_t = sigma * sqrt(t (1 - t)), t in (0, 1).
double std(double t, double sigma);
/// sigma'_t / sigma_t = (1 - 2t) / (2 t (1 - t)); independent of sigma.
double std_log_derivative(double t);

/// x_t = mu_t + sigma_t * noise. t must lie in [t_eps, t_max].
Vec perturb(const VecRef& x0, const VecRef& x1, double t, const ScheduleParams& params, const VecRef& noise);

/// Conditional vector field
///   u = sigma'_t/sigma_t (x_t - mu_t(x_ref0, x1)) + mu'_t(x_ref0, x1)
/// where x_ref0 is the codeword side (true x0 or the estimator output).
Vec vector_field(const VecRef& x_t, const VecRef& x_ref0, const VecRef& x1, double t,
                 const ScheduleParams& params);

}  // namespace schedule
}  // namespace tmclass
