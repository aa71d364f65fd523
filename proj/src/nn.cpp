#include "uasn/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

namespace uasn::nn {
namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

DenseParams make_dense(int in, int out, Rng& rng) {
  require(in > 0 && out > 0, "dense layer needs positive sizes");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  DenseParams p;
  p.weights = uniform_matrix(out, in, bound, rng);
  p.biases = uniform_matrix(out, 1, bound, rng);
  return p;
}

DenseParams zeros_like(const DenseParams& p) {
  return {Matrix::Zero(p.weights.rows(), p.weights.cols()), Vector::Zero(p.biases.size())};
}

Matrix dense_forward(const DenseParams& p, const Matrix& x) {
  require(x.cols() == p.in(), "dense_forward: input width mismatch");
  require(p.biases.size() == p.out(), "dense_forward: bias size mismatch");
  Matrix y = x * p.weights.transpose();
  y.rowwise() += p.biases.transpose();
  return y;
}

DenseBackward dense_backward(const DenseParams& p, const Matrix& x, const Matrix& upstream) {
  require(x.cols() == p.in(), "dense_backward: input width mismatch");
  require(upstream.rows() == x.rows() && upstream.cols() == p.out(),
          "dense_backward: upstream shape mismatch");
  DenseBackward out;
  out.grads.weights = upstream.transpose() * x;
  out.grads.biases = upstream.colwise().sum().transpose();
  out.grad_x = upstream * p.weights;
  return out;
}

Matrix tanh_forward(const Matrix& x) { return x.array().tanh().matrix(); }

Matrix tanh_backward(const Matrix& y, const Matrix& upstream) {
  require(y.rows() == upstream.rows() && y.cols() == upstream.cols(), "tanh_backward: shape mismatch");
  return (upstream.array() * (1.0 - y.array().square())).matrix();
}

Vector softmax(const Vector& logits) {
  require(logits.size() > 0, "softmax of an empty vector");
  const double peak = logits.maxCoeff();
  Vector e = (logits.array() - peak).exp().matrix();
  return e / e.sum();
}

Vector softmax_backward(const Vector& p, const Vector& upstream) {
  require(p.size() == upstream.size(), "softmax_backward: size mismatch");
  const double dot = p.dot(upstream);
  return (p.array() * (upstream.array() - dot)).matrix();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out.row(r) = softmax(logits.row(r).transpose()).transpose();
  return out;
}

AttentionParams make_attention(int in, int head_count, int d_k, Rng& rng) {
  require(in > 0 && head_count > 0 && d_k > 0, "attention needs positive sizes");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  AttentionParams p;
  p.head_count = head_count;
  p.d_k = d_k;
  p.w_q = uniform_matrix(in, head_count * d_k, bound, rng);
  p.w_k = uniform_matrix(in, head_count * d_k, bound, rng);
  p.w_v = uniform_matrix(in, head_count * d_k, bound, rng);
  return p;
}

AttentionParams zeros_like(const AttentionParams& p) {
  AttentionParams z = p;
  z.w_q.setZero();
  z.w_k.setZero();
  z.w_v.setZero();
  return z;
}

Matrix multihead_attention(const AttentionParams& p, const Matrix& queries, const Matrix& keys,
                           const Matrix& values, AttentionCache* cache) {
  const Eigen::Index model = p.model_dim();
  require(p.w_q.cols() == model && p.w_k.cols() == model && p.w_v.cols() == model,
          "attention: projection width must equal head_count * d_k");
  require(queries.rows() >= 1 && keys.rows() >= 1, "attention: empty sequence");
  require(keys.rows() == values.rows(), "attention: keys and values differ in length");
  require(queries.cols() == p.w_q.rows() && keys.cols() == p.w_k.rows() &&
              values.cols() == p.w_v.rows(),
          "attention: input width mismatch");

  AttentionCache local;
  AttentionCache& c = cache ? *cache : local;
  c.q = queries * p.w_q;
  c.k = keys * p.w_k;
  c.v = values * p.w_v;
  c.weights.assign(p.head_count, Matrix());
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d_k));
  Matrix out(queries.rows(), model);
  for (int h = 0; h < p.head_count; ++h) {
    const auto cols = Eigen::seqN(h * p.d_k, p.d_k);
    c.weights[h] = softmax_rows(c.q(Eigen::all, cols) * c.k(Eigen::all, cols).transpose() * scale);
    out(Eigen::all, cols) = c.weights[h] * c.v(Eigen::all, cols);
  }
  return out;
}

AttentionBackward multihead_attention_backward(const AttentionParams& p, const Matrix& queries,
                                               const Matrix& keys, const Matrix& values,
                                               const AttentionCache& cache, const Matrix& upstream) {
  require(upstream.rows() == queries.rows() && upstream.cols() == p.model_dim(),
          "attention_backward: upstream shape mismatch");
  require(static_cast<int>(cache.weights.size()) == p.head_count, "attention_backward: stale cache");
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d_k));
  Matrix dq = Matrix::Zero(cache.q.rows(), cache.q.cols());
  Matrix dk = Matrix::Zero(cache.k.rows(), cache.k.cols());
  Matrix dv = Matrix::Zero(cache.v.rows(), cache.v.cols());
  for (int h = 0; h < p.head_count; ++h) {
    const auto cols = Eigen::seqN(h * p.d_k, p.d_k);
    const Matrix& a = cache.weights[h];
    const Matrix d_out = upstream(Eigen::all, cols);
    dv(Eigen::all, cols) = a.transpose() * d_out;
    const Matrix da = d_out * cache.v(Eigen::all, cols).transpose();
    // Row-wise softmax backward.
    const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
    const Matrix ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dq(Eigen::all, cols) = ds * cache.k(Eigen::all, cols);
    dk(Eigen::all, cols) = ds.transpose() * cache.q(Eigen::all, cols);
  }
  AttentionBackward out;
  out.grads = zeros_like(p);
  out.grads.w_q = queries.transpose() * dq;
  out.grads.w_k = keys.transpose() * dk;
  out.grads.w_v = values.transpose() * dv;
  out.grad_queries = dq * p.w_q.transpose();
  out.grad_keys = dk * p.w_k.transpose();
  out.grad_values = dv * p.w_v.transpose();
  return out;
}

double mse(const Vector& pred, const Vector& target) {
  require(pred.size() == target.size() && pred.size() > 0, "mse: size mismatch");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

Vector mse_grad(const Vector& pred, const Vector& target) {
  require(pred.size() == target.size() && pred.size() > 0, "mse: size mismatch");
  return 2.0 * (pred - target) / static_cast<double>(pred.size());
}

ParamView view(std::string name, Matrix& m) { return {std::move(name), m.data(), m.rows(), m.cols()}; }

ParamView view(std::string name, Vector& v) { return {std::move(name), v.data(), v.size(), 1}; }

double global_norm(const std::vector<ParamView>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (Eigen::Index i = 0; i < g.size(); ++i) sq += g.data[i] * g.data[i];
  }
  return std::sqrt(sq);
}

void clip_global_norm(const std::vector<ParamView>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (!(norm > max_norm) || max_norm <= 0.0) return;
  const double s = max_norm / norm;
  for (const auto& g : grads) {
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data[i] *= s;
  }
}

void Adam::step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient lists differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].rows != grads[k].rows || params[k].cols != grads[k].cols) {
      throw ShapeError("adam: shape mismatch for " + params[k].name);
    }
    for (Eigen::Index i = 0; i < grads[k].size(); ++i) {
      if (!std::isfinite(grads[k].data[i])) throw NonFiniteError("non-finite gradient in " + params[k].name);
    }
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Vector::Zero(p.size()));
      v_.push_back(Vector::Zero(p.size()));
    }
  } else if (m_.size() != params.size()) {
    throw ShapeError("adam: parameter list changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (m_[k].size() != params[k].size()) throw ShapeError("adam: parameter list changed between steps");
    for (Eigen::Index i = 0; i < params[k].size(); ++i) {
      const double g = grads[k].data[i];
      m_[k][i] = config_.beta1 * m_[k][i] + (1.0 - config_.beta1) * g;
      v_[k][i] = config_.beta2 * v_[k][i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m_[k][i] / c1;
      const double v_hat = v_[k][i] / c2;
      params[k].data[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void save_checkpoint(std::ostream& out, const std::vector<ParamView>& params) {
  out << "uasn-checkpoint 1\n";
  char buf[64];
  for (const auto& p : params) {
    out << p.name << ' ' << p.rows << ' ' << p.cols << '\n';
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", p.data[i]);
      out << buf << (i + 1 == p.size() ? '\n' : ' ');
    }
  }
}

void load_checkpoint(std::istream& in, const std::vector<ParamView>& params) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "uasn-checkpoint" || version != 1) {
    throw std::runtime_error("not a uasn checkpoint");
  }
  for (const auto& p : params) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) throw std::runtime_error("checkpoint truncated before " + p.name);
    if (name != p.name || rows != p.rows || cols != p.cols) {
      throw ShapeError("checkpoint tensor " + name + " does not match " + p.name);
    }
    std::string token;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (!(in >> token)) throw std::runtime_error("checkpoint truncated in " + p.name);
      char* end = nullptr;
      p.data[i] = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size()) throw std::runtime_error("bad value in " + p.name);
    }
  }
}

}  // namespace uasn::nn
