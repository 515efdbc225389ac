#include "fleet/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fleet/rng.hpp"

namespace fleet {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Identity:
      return z;
    case Activation::Relu:
      return z.cwiseMax(0.0);
    case Activation::Elu:
      return z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
    case Activation::ReluPlusOne:
      return z.cwiseMax(0.0).array() + 1.0;
  }
  return z;
}

Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Identity:
      return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    case Activation::Relu:
    case Activation::ReluPlusOne:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::Elu:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::Relu:
      return "relu";
    case Activation::Elu:
      return "elu";
    case Activation::ReluPlusOne:
      return "relu1";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "elu") return Activation::Elu;
  if (name == "relu1") return Activation::ReluPlusOne;
  throw std::invalid_argument("unknown activation: " + name);
}

void MlpGradients::add(const MlpGradients& other) {
  for (size_t l = 0; l < w.size(); ++l) {
    w[l] += other.w[l];
    b[l] += other.b[l];
  }
}

void MlpGradients::scale(double s) {
  for (size_t l = 0; l < w.size(); ++l) {
    w[l] *= s;
    b[l] *= s;
  }
}

Mlp::Mlp(std::vector<int> widths, Activation hidden, Activation output, uint64_t seed)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  Rng rng(substream(seed, {0x6e65746e69746eULL}));
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l], out = widths_[l + 1];
    if (in < 1 || out < 1) throw std::invalid_argument("Mlp widths must be positive");
    const double scale = 1.0 / std::sqrt((double)in);
    Eigen::MatrixXd w(in, out);
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < out; ++j) w(i, j) = rng.uniform_real(-scale, scale);
    w_.push_back(std::move(w));
    b_.push_back(Eigen::VectorXd::Zero(out));
  }
}

Eigen::MatrixXd Mlp::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim()) throw std::invalid_argument("Mlp::apply: input width mismatch");
  Eigen::MatrixXd a = x;
  for (int l = 0; l < n_layers(); ++l) {
    Eigen::MatrixXd z = (a * w_[(size_t)l]).rowwise() + b_[(size_t)l].transpose();
    a = activate(z, l + 1 == n_layers() ? output_ : hidden_);
  }
  return a;
}

Eigen::VectorXd Mlp::apply_one(const Eigen::VectorXd& x) const {
  return apply(x.transpose()).row(0).transpose();
}

const Eigen::MatrixXd& Mlp::forward(const Eigen::MatrixXd& x) {
  if (x.cols() != input_dim()) throw std::invalid_argument("Mlp::forward: input width mismatch");
  acts_.assign(1, x);
  pre_.clear();
  for (int l = 0; l < n_layers(); ++l) {
    pre_.push_back((acts_.back() * w_[(size_t)l]).rowwise() + b_[(size_t)l].transpose());
    acts_.push_back(activate(pre_.back(), l + 1 == n_layers() ? output_ : hidden_));
  }
  cached_ = true;
  return acts_.back();
}

MlpGradients Mlp::backward(const Eigen::MatrixXd& dy) const {
  if (!cached_) throw std::logic_error("Mlp::backward called without a cached forward pass");
  if (dy.rows() != acts_.back().rows() || dy.cols() != acts_.back().cols())
    throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");
  MlpGradients g = zero_gradients();
  Eigen::MatrixXd delta = dy;
  for (int l = n_layers() - 1; l >= 0; --l) {
    const Activation a = l + 1 == n_layers() ? output_ : hidden_;
    Eigen::MatrixXd dz = delta.cwiseProduct(activate_grad(pre_[(size_t)l], a));
    g.w[(size_t)l] = acts_[(size_t)l].transpose() * dz;
    g.b[(size_t)l] = dz.colwise().sum().transpose();
    if (l > 0) delta = dz * w_[(size_t)l].transpose();
  }
  return g;
}

MlpGradients Mlp::zero_gradients() const {
  MlpGradients g;
  for (int l = 0; l < n_layers(); ++l) {
    g.w.push_back(Eigen::MatrixXd::Zero(w_[(size_t)l].rows(), w_[(size_t)l].cols()));
    g.b.push_back(Eigen::VectorXd::Zero(b_[(size_t)l].size()));
  }
  return g;
}

void Mlp::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "fleetnn 1\n";
  out << "widths";
  for (int w : widths_) out << ' ' << w;
  out << "\nhidden " << activation_name(hidden_) << "\noutput " << activation_name(output_) << "\n";
  char buf[40];
  for (int l = 0; l < n_layers(); ++l) {
    out << "W " << l << "\n";
    for (Eigen::Index i = 0; i < w_[(size_t)l].rows(); ++i) {
      for (Eigen::Index j = 0; j < w_[(size_t)l].cols(); ++j) {
        std::snprintf(buf, sizeof(buf), "%a", w_[(size_t)l](i, j));
        out << buf << (j + 1 == w_[(size_t)l].cols() ? '\n' : ' ');
      }
    }
    out << "b " << l << "\n";
    for (Eigen::Index j = 0; j < b_[(size_t)l].size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%a", b_[(size_t)l](j));
      out << buf << (j + 1 == b_[(size_t)l].size() ? '\n' : ' ');
    }
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Mlp Mlp::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "fleetnn" || version != 1)
    throw std::runtime_error("unrecognized checkpoint header in " + path);
  std::string tok;
  in >> tok;
  if (tok != "widths") throw std::runtime_error("malformed checkpoint: " + path);
  std::vector<int> widths;
  {
    std::string rest;
    std::getline(in, rest);
    std::istringstream ws(rest);
    int w;
    while (ws >> w) widths.push_back(w);
  }
  std::string hidden_name, output_name;
  in >> tok >> hidden_name;
  in >> tok >> output_name;
  Mlp net(widths, activation_from_name(hidden_name), activation_from_name(output_name), 0);
  auto read_value = [&in, &path]() {
    std::string s;
    if (!(in >> s)) throw std::runtime_error("truncated checkpoint: " + path);
    return std::strtod(s.c_str(), nullptr);
  };
  for (int l = 0; l < net.n_layers(); ++l) {
    int idx;
    in >> tok >> idx;
    for (Eigen::Index i = 0; i < net.w_[(size_t)l].rows(); ++i)
      for (Eigen::Index j = 0; j < net.w_[(size_t)l].cols(); ++j)
        net.w_[(size_t)l](i, j) = read_value();
    in >> tok >> idx;
    for (Eigen::Index j = 0; j < net.b_[(size_t)l].size(); ++j) net.b_[(size_t)l](j) = read_value();
  }
  return net;
}

AdamState AdamState::for_net(const Mlp& net, double lr) {
  AdamState s;
  s.lr = lr;
  for (int l = 0; l < net.n_layers(); ++l) {
    s.mw.push_back(Eigen::MatrixXd::Zero(net.weights()[(size_t)l].rows(), net.weights()[(size_t)l].cols()));
    s.vw.push_back(Eigen::MatrixXd::Zero(net.weights()[(size_t)l].rows(), net.weights()[(size_t)l].cols()));
    s.mb.push_back(Eigen::VectorXd::Zero(net.biases()[(size_t)l].size()));
    s.vb.push_back(Eigen::VectorXd::Zero(net.biases()[(size_t)l].size()));
  }
  return s;
}

void adam_step(AdamState& state, Mlp& net, const MlpGradients& grads) {
  if ((int)state.mw.size() != net.n_layers() || (int)grads.w.size() != net.n_layers())
    throw std::invalid_argument("adam_step: layer count mismatch");
  for (int l = 0; l < net.n_layers(); ++l) {
    if (grads.w[(size_t)l].rows() != net.weights()[(size_t)l].rows() ||
        grads.w[(size_t)l].cols() != net.weights()[(size_t)l].cols() ||
        grads.b[(size_t)l].size() != net.biases()[(size_t)l].size())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, (double)state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, (double)state.step);
  for (int l = 0; l < net.n_layers(); ++l) {
    auto& mw = state.mw[(size_t)l];
    auto& vw = state.vw[(size_t)l];
    mw = state.beta1 * mw + (1.0 - state.beta1) * grads.w[(size_t)l];
    vw = state.beta2 * vw + (1.0 - state.beta2) * grads.w[(size_t)l].cwiseProduct(grads.w[(size_t)l]);
    net.weights()[(size_t)l].array() -=
        state.lr * (mw.array() / bc1) / ((vw.array() / bc2).sqrt() + state.eps);
    auto& mb = state.mb[(size_t)l];
    auto& vb = state.vb[(size_t)l];
    mb = state.beta1 * mb + (1.0 - state.beta1) * grads.b[(size_t)l];
    vb = state.beta2 * vb + (1.0 - state.beta2) * grads.b[(size_t)l].cwiseProduct(grads.b[(size_t)l]);
    net.biases()[(size_t)l].array() -=
        state.lr * (mb.array() / bc1) / ((vb.array() / bc2).sqrt() + state.eps);
  }
}

}  // namespace fleet
