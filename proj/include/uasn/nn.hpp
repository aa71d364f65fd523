#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "uasn/rng.hpp"

// Small differentiable blocks with hand-written gradients. Batches are stored
// row-major in the mathematical sense: one sample (or token) per row.
namespace uasn::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DenseParams {
  Matrix weights;  // out x in
  Vector biases;   // out

  Eigen::Index in() const { return weights.cols(); }
  Eigen::Index out() const { return weights.rows(); }
};

// Weights and biases uniform in [-1/sqrt(in), 1/sqrt(in)].
DenseParams make_dense(int in, int out, Rng& rng);
DenseParams zeros_like(const DenseParams& p);

// y = x W^T + 1 b^T for a batch x (n x in).
Matrix dense_forward(const DenseParams& p, const Matrix& x);

struct DenseBackward {
  DenseParams grads;
  Matrix grad_x;
};
DenseBackward dense_backward(const DenseParams& p, const Matrix& x, const Matrix& upstream);

Matrix tanh_forward(const Matrix& x);
// Takes the forward output y = tanh(x).
Matrix tanh_backward(const Matrix& y, const Matrix& upstream);

Vector softmax(const Vector& logits);
// Takes the forward output p = softmax(z).
Vector softmax_backward(const Vector& p, const Vector& upstream);
// Row-wise softmax of a matrix.
Matrix softmax_rows(const Matrix& logits);

struct AttentionParams {
  Matrix w_q;  // in x model
  Matrix w_k;
  Matrix w_v;
  int head_count = 4;
  int d_k = 16;

  int model_dim() const { return head_count * d_k; }
};

AttentionParams make_attention(int in, int head_count, int d_k, Rng& rng);
AttentionParams zeros_like(const AttentionParams& p);

struct AttentionCache {
  Matrix q, k, v;               // projected, tokens x model
  std::vector<Matrix> weights;  // per head, queries x keys
};

// Per head h: softmax(Q_h K_h^T / sqrt(d_k)) V_h, heads concatenated by
// column. queries is (m x in), keys and values are (n x in).
Matrix multihead_attention(const AttentionParams& p, const Matrix& queries, const Matrix& keys,
                           const Matrix& values, AttentionCache* cache = nullptr);

struct AttentionBackward {
  AttentionParams grads;
  Matrix grad_queries, grad_keys, grad_values;
};
AttentionBackward multihead_attention_backward(const AttentionParams& p, const Matrix& queries,
                                               const Matrix& keys, const Matrix& values,
                                               const AttentionCache& cache, const Matrix& upstream);

// Mean of squared errors (no 1/2 factor) and its gradient w.r.t. pred.
double mse(const Vector& pred, const Vector& target);
Vector mse_grad(const Vector& pred, const Vector& target);

// Named mutable window over a parameter or gradient matrix.
struct ParamView {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

ParamView view(std::string name, Matrix& m);
ParamView view(std::string name, Vector& v);

double global_norm(const std::vector<ParamView>& grads);
// Scales gradients in place so that their global norm is at most max_norm.
void clip_global_norm(const std::vector<ParamView>& grads, double max_norm);

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Throws NonFiniteError (parameters untouched) on a non-finite gradient
  // and ShapeError when the view lists disagree.
  void step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<Vector> m_, v_;
};

// Text checkpoint: a "uasn-checkpoint 1" line, then per tensor a
// "<name> <rows> <cols>" line followed by column-major hexfloat values.
void save_checkpoint(std::ostream& out, const std::vector<ParamView>& params);
// Loads into existing tensors; names and shapes must match.
void load_checkpoint(std::istream& in, const std::vector<ParamView>& params);

}  // namespace uasn::nn
