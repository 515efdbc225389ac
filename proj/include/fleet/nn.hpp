#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fleet {

enum class Activation { Identity, Relu, Elu, ReluPlusOne };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpGradients {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  void add(const MlpGradients& other);
  void scale(double s);
};

// Dense multilayer perceptron. Rows of an input matrix are samples.
// forward() caches the pass so backward() can run; apply() is the
// cache-free const evaluation used at decision time.
class Mlp {
 public:
  Mlp() = default;
  // widths = {input, hidden..., output}
  Mlp(std::vector<int> widths, Activation hidden, Activation output, uint64_t seed);

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd apply_one(const Eigen::VectorXd& x) const;

  const Eigen::MatrixXd& forward(const Eigen::MatrixXd& x);
  // dy = dL/d(output), same shape as the cached output. Returns gradients
  // summed over the batch.
  MlpGradients backward(const Eigen::MatrixXd& dy) const;

  MlpGradients zero_gradients() const;

  int input_dim() const { return widths_.empty() ? 0 : widths_.front(); }
  int output_dim() const { return widths_.empty() ? 0 : widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  int n_layers() const { return (int)w_.size(); }

  std::vector<Eigen::MatrixXd>& weights() { return w_; }
  std::vector<Eigen::VectorXd>& biases() { return b_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return w_; }
  const std::vector<Eigen::VectorXd>& biases() const { return b_; }

  void save(const std::string& path) const;
  static Mlp load(const std::string& path);

 private:
  std::vector<int> widths_;
  Activation hidden_ = Activation::Relu;
  Activation output_ = Activation::Identity;
  std::vector<Eigen::MatrixXd> w_;  // layer l: widths[l] x widths[l+1]
  std::vector<Eigen::VectorXd> b_;

  // forward cache
  bool cached_ = false;
  std::vector<Eigen::MatrixXd> acts_;  // acts_[0] = input, acts_[l+1] = layer l output
  std::vector<Eigen::MatrixXd> pre_;   // pre-activation per layer
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;

  static AdamState for_net(const Mlp& net, double lr = 1e-3);
};

void adam_step(AdamState& state, Mlp& net, const MlpGradients& grads);

}  // namespace fleet
