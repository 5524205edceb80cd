#pragma once

#include "model/extractor.hpp"

namespace rfe {

enum class RetroKind { Gated, MlpProjection, MlpResidual };

const char* retro_kind_name(RetroKind kind);

// Per-task correction unit r_t mapping t-domain features back toward the
// (t-1)-domain. The gated kind projects f and h into a joint space, combines
// them multiplicatively, and blends f with b(h) under two sigmoid gates. The
// MLP kinds run concat(f, h) through a two-layer MLP, optionally adding f
// back as a residual.
class Retrospector {
 public:
  Retrospector(int task, RetroKind kind, std::size_t feature_dim, std::size_t joint_dim,
               AuxiliaryExtractor aux, Rng& rng);

  // f_x: [B, dim(f)] or [dim(f)]; xs: the raw inputs, one per row.
  Value rectify(Tape& t, Value f_x, const std::vector<const Tensor*>& xs) const;

  // (a_f f_x) * (a_h h_x), gated kind only.
  Value joint_encode(Tape& t, Value f_x, Value h_x) const;

  Value aux_forward(Tape& t, const Tensor& x) const { return aux.forward(t, x); }

  std::size_t param_count();           // including the auxiliary extractor
  std::size_t param_count_excl_aux();

  void visit(const std::string& prefix, const ParamVisitor& cb);
  // Trainable components only; the frozen auxiliary extractor is excluded.
  void visit_trainable(const std::string& prefix, const ParamVisitor& cb);
  void set_trainable(bool trainable);

  int task = 0;
  RetroKind kind = RetroKind::Gated;
  AuxiliaryExtractor aux;
  Affine a_f, a_h, b, g_f, g_h;  // gated
  Affine mlp1, mlp2;             // mlp variants

 private:
  std::size_t feature_dim_ = 0;
  bool batched(Tape& t, Value f_x) const { return t.value(f_x).rank() == 2; }
};

// Closed-form parameter counts for one retrospector of each kind, excluding
// and including the auxiliary extractor.
std::size_t gated_retrospector_params(std::size_t feature_dim, std::size_t aux_dim,
                                      std::size_t joint_dim);
std::size_t mlp_retrospector_params(std::size_t feature_dim, std::size_t aux_dim);
std::size_t aux_extractor_params(const Shape& input_shape, std::size_t aux_dim);

}  // namespace rfe
