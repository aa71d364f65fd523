#pragma once

#include <functional>
#include <vector>

#include "uasn/mappo.hpp"
#include "uasn/nn.hpp"
#include "uasn/ocean_env.hpp"
#include "uasn/rng.hpp"

namespace uasn::fixture {

struct NodeSpec {
  double x = 0.0, y = 0.0, z = 0.0;
  env::Role role = env::Role::DataRouting;
  bool alive = true;
};

// Hand-placed world with no mobility and a fixed communication range.
inline env::World make_world(const std::vector<NodeSpec>& specs, double range_m, std::uint64_t seed = 7) {
  env::WorldConfig cfg;
  cfg.allow_any_grid = true;
  cfg.node_count = static_cast<int>(specs.size());
  cfg.comm_range_m = range_m;
  cfg.mobility_sigma_m = 0.0;
  cfg.seed = seed;
  std::vector<env::NodeState> nodes(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    auto& n = nodes[k];
    n.id = static_cast<int>(k);
    n.role = specs[k].role;
    n.position = env::Vec3(specs[k].x, specs[k].y, specs[k].z);
    n.energy = cfg.initial_energy;
    n.alive = specs[k].alive;
    n.failed = !specs[k].alive;
  }
  return env::World(cfg, std::move(nodes), {});
}

// Largest relative deviation ||a - b|| / max(||a||, ||b||, floor).
inline double rel_error(const nn::Matrix& a, const nn::Matrix& b, double floor = 1e-10) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

// Central finite difference of f with respect to every entry of m.
inline nn::Matrix numeric_grad(nn::Matrix& m, const std::function<double()>& f, double h = 1e-6) {
  nn::Matrix g(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double keep = m(r, c);
      m(r, c) = keep + h;
      const double up = f();
      m(r, c) = keep - h;
      const double down = f();
      m(r, c) = keep;
      g(r, c) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

inline nn::Matrix numeric_grad(nn::Vector& v, const std::function<double()>& f, double h = 1e-6) {
  nn::Matrix g(v.size(), 1);
  for (Eigen::Index r = 0; r < v.size(); ++r) {
    const double keep = v[r];
    v[r] = keep + h;
    const double up = f();
    v[r] = keep - h;
    const double down = f();
    v[r] = keep;
    g(r, 0) = (up - down) / (2.0 * h);
  }
  return g;
}

inline nn::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  nn::Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace uasn::fixture
