#pragma once

#include <concepts>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vmest/numkit/finite_diff.hpp"
#include "vmest/numkit/rng.hpp"
#include "vmest/numkit/types.hpp"

namespace vmest {

/// A model usable by the profile M-estimation engine. `v` is one term of
/// the variational criterion (the per-datum ELBO) in unconstrained
/// parameterizations of theta (dimension dim_theta) and psi (dim_psi).
///
/// Optional capabilities are detected at compile time:
///   grad_theta_v / grad_psi_v   analytic gradients of v
///   hessian_v                   joint Hessian of v over (theta, psi), theta first
///   hessian_psi_v               the psi block alone, when cheaper
///   psi_closed_form             the inner maximizer in closed form
///   theta_init                  a data-driven starting value for theta
///   simulate                    draw a datum at theta against a template
///   marginal_loglik             log p_theta(x)
///   marginal_score              analytic gradient of marginal_loglik
template <class M>
concept VariationalModel = requires(const M& m, const Vec& theta, const Vec& psi, const typename M::Datum& x) {
  typename M::Datum;
  { m.dim_theta() } -> std::convertible_to<Eigen::Index>;
  { m.dim_psi() } -> std::convertible_to<Eigen::Index>;
  { m.v(theta, psi, x) } -> std::convertible_to<double>;
  { m.psi_init(x) } -> std::convertible_to<Vec>;
};

template <class M>
concept HasPsiHessian = requires(const M& m, const Vec& t, const Vec& p, const typename M::Datum& x) {
  { m.hessian_psi_v(t, p, x) } -> std::convertible_to<Matrix>;
};

template <class M>
concept HasGradTheta = requires(const M& m, const Vec& t, const Vec& p, const typename M::Datum& x) {
  { m.grad_theta_v(t, p, x) } -> std::convertible_to<Vec>;
};

template <class M>
concept HasGradPsi = requires(const M& m, const Vec& t, const Vec& p, const typename M::Datum& x) {
  { m.grad_psi_v(t, p, x) } -> std::convertible_to<Vec>;
};

template <class M>
concept HasHessian = requires(const M& m, const Vec& t, const Vec& p, const typename M::Datum& x) {
  { m.hessian_v(t, p, x) } -> std::convertible_to<Matrix>;
};

template <class M>
concept HasPsiClosedForm = requires(const M& m, const Vec& t, const typename M::Datum& x) {
  { m.psi_closed_form(t, x) } -> std::convertible_to<Vec>;
};

template <class M, class D>
concept HasThetaInit = requires(const M& m, const std::vector<D>& data) {
  { m.theta_init(data) } -> std::convertible_to<Vec>;
};

template <class M>
concept Simulable = requires(const M& m, const Vec& t, const typename M::Datum& x, RngStream& rng) {
  { m.simulate(t, x, rng) } -> std::convertible_to<typename M::Datum>;
};

template <class M>
concept HasMarginalLoglik = requires(const M& m, const Vec& t, const typename M::Datum& x) {
  { m.marginal_loglik(t, x) } -> std::convertible_to<double>;
};

template <class M>
concept HasMarginalScore = requires(const M& m, const Vec& t, const typename M::Datum& x) {
  { m.marginal_score(t, x) } -> std::convertible_to<Vec>;
};

/// Ordered, immutable collection of per-unit observations.
template <class Datum>
class Dataset {
 public:
  Dataset(std::vector<Datum> data, std::string source) : data_(std::move(data)), source_(std::move(source)) {
    if (data_.empty()) throw Error(ErrorKind::InvalidInput, "a dataset needs at least one datum");
  }

  std::size_t n() const { return data_.size(); }
  const Datum& operator[](std::size_t i) const { return data_[i]; }
  const std::vector<Datum>& data() const { return data_; }
  const std::string& source() const { return source_; }

 private:
  std::vector<Datum> data_;
  std::string source_;
};

// Derivative suppliers: analytic when the model has them, finite
// differences otherwise.

template <VariationalModel M>
Vec grad_theta(const M& model, const Vec& theta, const Vec& psi, const typename M::Datum& x) {
  if constexpr (HasGradTheta<M>) {
    return model.grad_theta_v(theta, psi, x);
  } else {
    return grad_fd([&](const Vec& t) { return model.v(t, psi, x); }, theta);
  }
}

template <VariationalModel M>
Vec grad_psi(const M& model, const Vec& theta, const Vec& psi, const typename M::Datum& x) {
  if constexpr (HasGradPsi<M>) {
    return model.grad_psi_v(theta, psi, x);
  } else {
    return grad_fd([&](const Vec& p) { return model.v(theta, p, x); }, psi);
  }
}

/// Joint Hessian of v over (theta, psi), theta block first. Falls back to
/// finite differences of the gradients, then to pure second differences.
template <VariationalModel M>
SymMatrix joint_hessian(const M& model, const Vec& theta, const Vec& psi, const typename M::Datum& x) {
  const Eigen::Index d = theta.size();
  const Eigen::Index k = psi.size();
  if constexpr (HasHessian<M>) {
    return SymMatrix(Matrix(model.hessian_v(theta, psi, x)));
  } else {
    Vec z(d + k);
    z << theta, psi;
    if constexpr (HasGradTheta<M> && HasGradPsi<M>) {
      auto joint_grad = [&](const Vec& zz) {
        Vec g(d + k);
        const Vec t = zz.head(d);
        const Vec p = zz.tail(k);
        g << model.grad_theta_v(t, p, x), model.grad_psi_v(t, p, x);
        return g;
      };
      return SymMatrix(jacobian_fd(joint_grad, z));
    } else {
      return hess_fd([&](const Vec& zz) { return model.v(zz.head(d), zz.tail(k), x); }, z);
    }
  }
}

/// psi-psi block of the joint Hessian.
template <VariationalModel M>
Matrix psi_hessian(const M& model, const Vec& theta, const Vec& psi, const typename M::Datum& x) {
  const Eigen::Index d = theta.size();
  const Eigen::Index k = psi.size();
  if constexpr (HasPsiHessian<M>) {
    return model.hessian_psi_v(theta, psi, x);
  } else if constexpr (HasHessian<M>) {
    return model.hessian_v(theta, psi, x).bottomRightCorner(k, k);
  } else if constexpr (HasGradPsi<M>) {
    const Matrix j = jacobian_fd([&](const Vec& p) { return Vec(model.grad_psi_v(theta, p, x)); }, psi);
    return 0.5 * (j + j.transpose());
  } else {
    (void)d;
    return hess_fd([&](const Vec& p) { return model.v(theta, p, x); }, psi).matrix();
  }
}

}  // namespace vmest
