#pragma once

#include <string>

#include "nlos/core.hpp"
#include "nlos/fields.hpp"
#include "nlos/render.hpp"

namespace nlos::train {

// The trainable scene representation: all three field networks plus the
// density sharpness, sharing one flat parameter vector.
template <class Real>
struct Model {
  fields::SdfNetwork<Real> sdf;
  fields::ReflectanceNetwork<Real> refl;
  fields::BackgroundNetwork<Real> bg;
  render::DensityTransform<Real> density;
  ad::ParamVector<Real> params;
  fields::GeometricInitReport init_report;

  static Model build(const core::Config& cfg) {
    Model m;
    m.sdf = fields::SdfNetwork<Real>(cfg.bounds, cfg.enc_l_pos, cfg.sdf_hidden_width,
                                     cfg.sdf_hidden_layers);
    m.refl = fields::ReflectanceNetwork<Real>(cfg.bounds, cfg.enc_l_pos, cfg.enc_l_dir,
                                              cfg.refl_hidden_width, cfg.refl_hidden_layers);
    m.bg = fields::BackgroundNetwork<Real>(cfg.bounds, cfg.enc_l_pos, cfg.enc_l_time,
                                           cfg.bg_hidden_width, cfg.bg_hidden_layers);
    m.sdf.register_params(m.params);
    m.refl.register_params(m.params);
    m.bg.register_params(m.params);
    m.density.register_params(m.params, cfg.alpha_init);

    Rng rng(cfg.seed);
    m.init_report = fields::geometric_init(m.sdf, m.params, cfg.geom_init_radius, rng.fork(1));
    Rng refl_rng = rng.fork(2);
    m.refl.mlp().random_init(m.params, refl_rng);
    Rng bg_rng = rng.fork(3);
    m.bg.mlp().random_init(m.params, bg_rng);
    // Start the background near zero output so early xi estimates are tame.
    {
      const auto& entries = m.bg.mlp().weight_entries();
      m.params.view(entries.back()).setZero();
      m.params.view(m.bg.mlp().bias_entries().back()).setConstant(Real(-3));
    }
    return m;
  }

  double alpha() const { return density.alpha(params); }
};

}  // namespace nlos::train
