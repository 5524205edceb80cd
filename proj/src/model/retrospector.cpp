#include "model/retrospector.hpp"

#include "core/error.hpp"

namespace rfe {

const char* retro_kind_name(RetroKind kind) {
  switch (kind) {
    case RetroKind::Gated: return "gated";
    case RetroKind::MlpProjection: return "mlp_projection";
    case RetroKind::MlpResidual: return "mlp_residual";
  }
  return "?";
}

Retrospector::Retrospector(int task_, RetroKind kind_, std::size_t feature_dim,
                           std::size_t joint_dim, AuxiliaryExtractor aux_, Rng& rng)
    : task(task_), kind(kind_), aux(std::move(aux_)), feature_dim_(feature_dim) {
  if (task < 2) throw InvalidArgument("retrospector task index must be >= 2");
  std::size_t aux_dim = aux.out_dim();
  if (kind == RetroKind::Gated) {
    if (joint_dim > feature_dim / 2) {
      throw ConfigError("joint dimension " + std::to_string(joint_dim) +
                        " must be at most dim(f)/2 = " + std::to_string(feature_dim / 2));
    }
    a_f = Affine(feature_dim, joint_dim, rng);
    a_h = Affine(aux_dim, joint_dim, rng);
    b = Affine(aux_dim, feature_dim, rng);
    g_f = Affine(joint_dim, feature_dim, rng);
    g_h = Affine(joint_dim, feature_dim, rng);
  } else {
    mlp1 = Affine(feature_dim + aux_dim, feature_dim, rng);
    mlp2 = Affine(feature_dim, feature_dim, rng);
  }
}

Value Retrospector::joint_encode(Tape& t, Value f_x, Value h_x) const {
  if (kind != RetroKind::Gated) {
    throw InvalidArgument("joint_encode is only defined for the gated retrospector");
  }
  return t.mul(a_f(t, f_x), a_h(t, h_x));
}

Value Retrospector::rectify(Tape& t, Value f_x, const std::vector<const Tensor*>& xs) const {
  const Tensor& fv = t.value(f_x);
  bool is_batch = fv.rank() == 2;
  std::size_t rows = is_batch ? fv.shape[0] : 1;
  std::size_t dim = is_batch ? fv.shape[1] : fv.shape[0];
  if (dim != feature_dim_) {
    throw DimensionError("rectify: feature dimension " + std::to_string(dim) +
                         " does not match retrospector dim(f) " + std::to_string(feature_dim_));
  }
  if (xs.size() != rows) {
    throw DimensionError("rectify: " + std::to_string(xs.size()) + " inputs for " +
                         std::to_string(rows) + " feature rows");
  }
  Value h_x = is_batch ? aux.forward_batch(t, xs) : aux.forward(t, *xs[0]);
  if (kind == RetroKind::Gated) {
    Value a = joint_encode(t, f_x, h_x);
    Value gate_f = t.sigmoid(g_f(t, a));
    Value gate_h = t.sigmoid(g_h(t, a));
    Value h_proj = b(t, h_x);
    return t.add(t.mul(gate_f, f_x), t.mul(gate_h, h_proj));
  }
  Value z = t.relu(mlp1(t, t.concat(f_x, h_x)));
  Value y = mlp2(t, z);
  if (kind == RetroKind::MlpResidual) y = t.add(y, f_x);
  return y;
}

std::size_t Retrospector::param_count() {
  std::size_t n = aux.param_count();
  return n + param_count_excl_aux();
}

std::size_t Retrospector::param_count_excl_aux() {
  std::size_t n = 0;
  visit_trainable("r", [&](const std::string&, Parameter& p) { n += p.value.size(); });
  return n;
}

void Retrospector::visit(const std::string& prefix, const ParamVisitor& cb) {
  aux.visit(prefix + ".aux", cb);
  visit_trainable(prefix, cb);
}

void Retrospector::visit_trainable(const std::string& prefix, const ParamVisitor& cb) {
  if (kind == RetroKind::Gated) {
    a_f.visit(prefix + ".a_f", cb);
    a_h.visit(prefix + ".a_h", cb);
    b.visit(prefix + ".b", cb);
    g_f.visit(prefix + ".g_f", cb);
    g_h.visit(prefix + ".g_h", cb);
  } else {
    mlp1.visit(prefix + ".mlp1", cb);
    mlp2.visit(prefix + ".mlp2", cb);
  }
}

void Retrospector::set_trainable(bool trainable) {
  a_f.set_trainable(trainable);
  a_h.set_trainable(trainable);
  b.set_trainable(trainable);
  g_f.set_trainable(trainable);
  g_h.set_trainable(trainable);
  mlp1.set_trainable(trainable);
  mlp2.set_trainable(trainable);
}

std::size_t gated_retrospector_params(std::size_t feature_dim, std::size_t aux_dim,
                                      std::size_t joint_dim) {
  std::size_t a_f = feature_dim * joint_dim + joint_dim;
  std::size_t a_h = aux_dim * joint_dim + joint_dim;
  std::size_t b = aux_dim * feature_dim + feature_dim;
  std::size_t gate = joint_dim * feature_dim + feature_dim;
  return a_f + a_h + b + 2 * gate;
}

std::size_t mlp_retrospector_params(std::size_t feature_dim, std::size_t aux_dim) {
  std::size_t l1 = (feature_dim + aux_dim) * feature_dim + feature_dim;
  std::size_t l2 = feature_dim * feature_dim + feature_dim;
  return l1 + l2;
}

std::size_t aux_extractor_params(const Shape& input_shape, std::size_t aux_dim) {
  if (input_shape.size() == 3) {
    std::size_t c = input_shape[0];
    std::size_t conv1 = 64 * c * 3 * 3 + 64;
    std::size_t conv2 = aux_dim * 64 * 3 * 3 + aux_dim;
    return conv1 + conv2;
  }
  return input_shape[0] * aux_dim + aux_dim;
}

}  // namespace rfe
