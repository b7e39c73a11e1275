#include "rlshift/model.hpp"

#include <cmath>
#include <string>

namespace rlshift {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

struct Layout {
  Index w1 = 0, b1 = 0, w2 = 0, b2 = 0;  // offsets
};

Layout layout(const ModelSpec& s) {
  Layout l;
  if (s.kind == ModelKind::logistic) {
    l.w1 = 0;
    l.b1 = s.classes * s.input_dim;
    return l;
  }
  const Index h = s.hidden_units;
  l.w1 = 0;
  l.b1 = h * s.input_dim;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + s.classes * h;
  return l;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double top = row.maxCoeff();
  return top + std::log((row.array() - top).exp().sum());
}

}  // namespace

ModelKind model_kind_from_name(std::string_view name) {
  if (name == "logistic") return ModelKind::logistic;
  if (name == "mlp") return ModelKind::mlp;
  throw Error(ErrorKind::InvalidInput, "unknown model kind '" + std::string(name) + "'");
}

std::string_view model_kind_name(ModelKind kind) {
  return kind == ModelKind::logistic ? "logistic" : "mlp";
}

Index ModelSpec::parameter_count() const {
  if (kind == ModelKind::logistic) return classes * (input_dim + 1);
  return hidden_units * (input_dim + 1) + classes * (hidden_units + 1);
}

void ModelSpec::validate() const {
  if (classes < 2) throw Error(ErrorKind::InvalidInput, "model needs at least 2 classes");
  if (input_dim < 1) throw Error(ErrorKind::InvalidInput, "model input_dim must be >= 1");
  if (kind == ModelKind::mlp && hidden_units < 1) {
    throw Error(ErrorKind::InvalidInput, "mlp needs hidden_units >= 1");
  }
}

VectorXd init_parameters(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  VectorXd params = VectorXd::Zero(spec.parameter_count());
  if (spec.kind == ModelKind::logistic) return params;
  // Scaled-normal init for both weight blocks; biases start at zero.
  RngStream rng(seed, stream::kInit);
  const Layout l = layout(spec);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(spec.hidden_units));
  for (Index i = l.w1; i < l.b1; ++i) params(i) = s1 * rng.normal();
  for (Index i = l.w2; i < l.b2; ++i) params(i) = s2 * rng.normal();
  return params;
}

MatrixXd model_logits(const ModelSpec& spec, const VectorXd& params, const MatrixXd& x) {
  if (x.cols() != spec.input_dim) throw Error(ErrorKind::DimensionError, "feature dimension mismatch");
  const Layout l = layout(spec);
  if (spec.kind == ModelKind::logistic) {
    ConstMap w(params.data() + l.w1, spec.classes, spec.input_dim);
    Eigen::Map<const Eigen::RowVectorXd> b(params.data() + l.b1, spec.classes);
    return (x * w.transpose()).rowwise() + b;
  }
  const Index h = spec.hidden_units;
  ConstMap w1(params.data() + l.w1, h, spec.input_dim);
  Eigen::Map<const Eigen::RowVectorXd> b1(params.data() + l.b1, h);
  ConstMap w2(params.data() + l.w2, spec.classes, h);
  Eigen::Map<const Eigen::RowVectorXd> b2(params.data() + l.b2, spec.classes);
  const MatrixXd hidden = ((x * w1.transpose()).rowwise() + b1).array().tanh().matrix();
  return (hidden * w2.transpose()).rowwise() + b2;
}

double accumulate_cross_entropy(const ModelSpec& spec, const VectorXd& params, const MatrixXd& x,
                                const Labels& labels, const VectorXd& coeffs, VectorXd& grad) {
  if (x.rows() != static_cast<Index>(labels.size()) || coeffs.size() != x.rows()) {
    throw Error(ErrorKind::DimensionError, "batch rows, labels and coefficients differ");
  }
  if (x.cols() != spec.input_dim) throw Error(ErrorKind::DimensionError, "feature dimension mismatch");
  const Layout l = layout(spec);
  const Index k = spec.classes;

  MatrixXd hidden;
  MatrixXd logits;
  if (spec.kind == ModelKind::logistic) {
    logits = model_logits(spec, params, x);
  } else {
    ConstMap w1(params.data() + l.w1, spec.hidden_units, spec.input_dim);
    Eigen::Map<const Eigen::RowVectorXd> b1(params.data() + l.b1, spec.hidden_units);
    ConstMap w2(params.data() + l.w2, k, spec.hidden_units);
    Eigen::Map<const Eigen::RowVectorXd> b2(params.data() + l.b2, k);
    hidden = ((x * w1.transpose()).rowwise() + b1).array().tanh().matrix();
    logits = (hidden * w2.transpose()).rowwise() + b2;
  }

  // dlogits = coeff * (softmax - onehot)
  double loss = 0.0;
  MatrixXd dlogits = softmax_rows(logits);
  for (Index i = 0; i < x.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw Error(ErrorKind::InvalidInput, "label out of range");
    loss += coeffs(i) * (log_sum_exp(logits.row(i)) - logits(i, y));
    dlogits(i, y) -= 1.0;
  }
  dlogits.array().colwise() *= coeffs.array();

  if (spec.kind == ModelKind::logistic) {
    MutMap gw(grad.data() + l.w1, k, spec.input_dim);
    Eigen::Map<Eigen::RowVectorXd> gb(grad.data() + l.b1, k);
    gw.noalias() += dlogits.transpose() * x;
    gb += dlogits.colwise().sum();
    return loss;
  }

  const Index h = spec.hidden_units;
  ConstMap w2(params.data() + l.w2, k, h);
  MutMap gw1(grad.data() + l.w1, h, spec.input_dim);
  Eigen::Map<Eigen::RowVectorXd> gb1(grad.data() + l.b1, h);
  MutMap gw2(grad.data() + l.w2, k, h);
  Eigen::Map<Eigen::RowVectorXd> gb2(grad.data() + l.b2, k);
  gw2.noalias() += dlogits.transpose() * hidden;
  gb2 += dlogits.colwise().sum();
  const MatrixXd dpre = ((dlogits * w2).array() * (1.0 - hidden.array().square())).matrix();
  gw1.noalias() += dpre.transpose() * x;
  gb1 += dpre.colwise().sum();
  return loss;
}

LossGradient cross_entropy_loss(const ModelSpec& spec, const VectorXd& params, const MatrixXd& x,
                                const Labels& labels, const VectorXd* example_weights, double l2) {
  const auto n = x.rows();
  if (n == 0) throw Error(ErrorKind::EmptyInput, "empty batch");
  VectorXd coeffs = VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  if (example_weights) {
    if (example_weights->size() != n) throw Error(ErrorKind::DimensionError, "weight count mismatch");
    coeffs = coeffs.cwiseProduct(*example_weights);
  }
  LossGradient out{0.0, VectorXd::Zero(params.size())};
  out.loss = accumulate_cross_entropy(spec, params, x, labels, coeffs, out.gradient);
  if (l2 > 0.0) {
    out.loss += 0.5 * l2 * params.squaredNorm();
    out.gradient += l2 * params;
  }
  return out;
}

PredictionMatrix Model::predict(const MatrixXd& x) const {
  return PredictionMatrix(softmax_rows(model_logits(spec, parameters, x)));
}

}  // namespace rlshift
