#include "hopmix/hopfield.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <sstream>

namespace hopmix {

namespace {

// y = M x for rank-1 x, plain value math.
Tensor matvec(const Tensor& m, const Tensor& x) {
  const std::size_t rows = m.rows(), cols = m.cols();
  if (x.numel() != cols) throw ShapeError("matvec: dimension mismatch");
  Tensor y({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += m.at(i, j) * x.at(j);
    y.at(i) = s;
  }
  return y;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace

void HopfieldSystem::validate() const {
  const std::size_t l = sizes.size();
  if (l < 2) throw ShapeError("HopfieldSystem: need at least two layers");
  if (up.size() != l - 1 || down.size() != l - 1)
    throw ShapeError("HopfieldSystem: expected one coupling per adjacent pair");
  if (tau.size() != l || lagr.size() != l)
    throw ShapeError("HopfieldSystem: per-layer tau/Lagrangian required");
  for (std::size_t a = 0; a + 1 < l; ++a) {
    if (up[a].rank() != 2 || up[a].rows() != sizes[a + 1] || up[a].cols() != sizes[a])
      throw ShapeError("HopfieldSystem: up[" + std::to_string(a) + "] shape mismatch");
    if (down[a].rank() != 2 || down[a].rows() != sizes[a] || down[a].cols() != sizes[a + 1])
      throw ShapeError("HopfieldSystem: down[" + std::to_string(a) + "] shape mismatch");
  }
  for (double t : tau)
    if (!(t > 0.0)) throw Error("HopfieldSystem: tau must be positive");
}

HopfieldSystem HopfieldSystem::symmetric_system(std::vector<std::size_t> sizes,
                                                std::vector<Tensor> up, std::vector<double> tau,
                                                std::vector<LagrangianSpec> lagr, double alpha) {
  HopfieldSystem sys;
  sys.sizes = std::move(sizes);
  sys.up = std::move(up);
  sys.down.reserve(sys.up.size());
  for (const Tensor& m : sys.up) sys.down.push_back(transpose(m));
  sys.tau = std::move(tau);
  sys.lagr = std::move(lagr);
  sys.alpha = alpha;
  sys.symmetric = true;
  sys.validate();
  return sys;
}

HopfieldSystem HopfieldSystem::general_system(std::vector<std::size_t> sizes,
                                              std::vector<Tensor> up, std::vector<Tensor> down,
                                              std::vector<double> tau,
                                              std::vector<LagrangianSpec> lagr, double alpha) {
  HopfieldSystem sys;
  sys.sizes = std::move(sizes);
  sys.up = std::move(up);
  sys.down = std::move(down);
  sys.tau = std::move(tau);
  sys.lagr = std::move(lagr);
  sys.alpha = alpha;
  sys.symmetric = false;
  sys.validate();
  return sys;
}

double energy_2layer(const HopfieldSystem& sys, const Tensor& v, const Tensor& h) {
  if (sys.layers() != 2) throw ShapeError("energy_2layer: two-layer system required");
  if (!sys.symmetric) throw Error("energy_2layer: symmetric coupling required");
  if (v.numel() != sys.sizes[0] || h.numel() != sys.sizes[1])
    throw ShapeError("energy_2layer: state sizes mismatch");
  const Tensor g = sys.lagr[0].activation(v);
  const Tensor f = sys.lagr[1].activation(h);
  const double lv = sys.lagr[0].value(v);
  const double lh = sys.lagr[1].value(h);
  const Tensor xg = matvec(sys.up[0], g);  // xi g
  return dot(v, g) - lv + dot(h, f) - lh - dot(f, xg);
}

std::vector<Tensor> dynamics_rhs(const HopfieldSystem& sys, const State& state) {
  const std::size_t l = sys.layers();
  if (state.x.size() != l) throw ShapeError("dynamics_rhs: state layer count mismatch");
  for (std::size_t a = 0; a < l; ++a)
    if (state.x[a].numel() != sys.sizes[a]) throw ShapeError("dynamics_rhs: layer size mismatch");

  // Activations once per layer.
  std::vector<Tensor> act(l);
  for (std::size_t a = 0; a < l; ++a) act[a] = sys.lagr[a].activation(state.x[a]);

  std::vector<Tensor> deriv(l);
  for (std::size_t a = 0; a < l; ++a) {
    Tensor drive = Tensor::zeros({sys.sizes[a]});
    if (a > 0) {
      const Tensor from_below = matvec(sys.up[a - 1], act[a - 1]);
      for (std::size_t i = 0; i < drive.numel(); ++i) drive.at(i) += from_below.at(i);
    }
    if (a + 1 < l) {
      const Tensor from_above = matvec(sys.down[a], act[a + 1]);
      for (std::size_t i = 0; i < drive.numel(); ++i) drive.at(i) += from_above.at(i);
    }
    const double decay = (a == 0) ? sys.alpha : 1.0;
    for (std::size_t i = 0; i < drive.numel(); ++i)
      drive.at(i) = (drive.at(i) - decay * state.x[a].at(i)) / sys.tau[a];
    deriv[a] = std::move(drive);
  }
  return deriv;
}

Trajectory integrate(const HopfieldSystem& sys, const State& initial, double dt,
                     std::size_t steps, std::size_t record_every) {
  if (!(dt > 0.0)) throw Error("integrate: dt must be positive");
  if (record_every == 0) record_every = 1;
  const bool track_energy = sys.layers() == 2 && sys.symmetric;

  Trajectory traj;
  State state = initial;
  state.t = initial.t;

  auto record = [&](const State& s) {
    traj.times.push_back(s.t);
    traj.states.push_back(s);
    if (track_energy) traj.energies.push_back(energy_2layer(sys, s.x[0], s.x[1]));
  };
  record(state);

  for (std::size_t k = 1; k <= steps; ++k) {
    const std::vector<Tensor> deriv = dynamics_rhs(sys, state);
    for (std::size_t a = 0; a < state.x.size(); ++a) {
      for (std::size_t i = 0; i < state.x[a].numel(); ++i)
        state.x[a].at(i) += dt * deriv[a].at(i);
      for (double vv : state.x[a].data()) {
        if (!std::isfinite(vv) || std::abs(vv) > 1e12) {
          std::ostringstream os;
          os << "integrate: blow-up at step " << k << " (t=" << state.t << "), layer " << a
             << ", |x| ~ " << vv;
          throw Diverged(os.str());
        }
      }
    }
    state.t += dt;
    if (k % record_every == 0 || k == steps) record(state);
  }
  traj.final = state;
  return traj;
}

Equilibrium hidden_equilibrium(const HopfieldSystem& sys, const Tensor& v_frozen,
                               double tolerance, std::size_t max_iters) {
  if (sys.layers() != 3) throw ShapeError("hidden_equilibrium: three-layer system required");
  if (v_frozen.numel() != sys.sizes[0]) throw ShapeError("hidden_equilibrium: v size mismatch");

  const Tensor drive = matvec(sys.up[0], sys.lagr[0].activation(v_frozen));
  auto apply = [&](const Tensor& x) {
    // up[0] g(v) + down[1] f(up[1] e(x))
    const Tensor h = matvec(sys.up[1], sys.lagr[1].activation(x));
    const Tensor fh = sys.lagr[2].activation(h);
    Tensor nx = matvec(sys.down[1], fh);
    for (std::size_t i = 0; i < nx.numel(); ++i) nx.at(i) += drive.at(i);
    return nx;
  };

  Tensor x = drive.detached();
  double damping = 1.0;
  double prev_res = std::numeric_limits<double>::infinity();
  std::size_t rising = 0;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    const Tensor target = apply(x);
    Tensor nx({x.numel()});
    for (std::size_t i = 0; i < x.numel(); ++i)
      nx.at(i) = (1.0 - damping) * x.at(i) + damping * target.at(i);
    const double res = max_abs_diff(nx, x);
    x = std::move(nx);
    if (res < tolerance) {
      Equilibrium eq;
      eq.x = x;
      eq.h = matvec(sys.up[1], sys.lagr[1].activation(x));
      eq.iterations = it;
      eq.residual = res;
      return eq;
    }
    if (res > prev_res) {
      if (++rising >= 2 && damping > 0.5) {
        damping = 0.5;
        rising = 0;
      }
    } else {
      rising = 0;
    }
    prev_res = res;
  }
  throw NonConvergence("hidden_equilibrium: no convergence after " + std::to_string(max_iters) +
                           " iterations (last residual " + std::to_string(prev_res) + ")",
                       prev_res);
}

Tensor mixer_update(const HopfieldSystem& sys, const Tensor& v) {
  if (sys.layers() != 2) throw ShapeError("mixer_update: two-layer system required");
  if (sys.lagr[0].kind != LagrangianSpec::Kind::NormLv)
    throw Error("mixer_update: visible layer must use the norm Lagrangian");
  if (sys.lagr[1].kind != LagrangianSpec::Kind::SumPhiGelu)
    throw Error("mixer_update: hidden layer must use the gelu Lagrangian");
  if (sys.alpha != 0.0) throw Error("mixer_update: alpha must be zero");
  const Tensor g = sys.lagr[0].activation(v);
  const Tensor hidden = matvec(sys.up[0], g);
  const Tensor sig = sys.lagr[1].activation(hidden);
  const Tensor delta = matvec(sys.down[0], sig);
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) out.at(i) = v.at(i) + delta.at(i);
  return out;
}

}  // namespace hopmix
