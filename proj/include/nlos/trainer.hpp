#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include "nlos/carve.hpp"
#include "nlos/checkpoint.hpp"
#include "nlos/core.hpp"
#include "nlos/losses.hpp"
#include "nlos/model.hpp"
#include "nlos/optim.hpp"

namespace nlos::train {

struct FitResult {
  int iterations_run = 0;
  double final_alpha = 0.0;
  losses::LossBreakdown first;
  losses::LossBreakdown last;
  std::string checkpoint_path;
  std::string log_path;
};

namespace detail {

// Per-wall-point work product: gradient contribution plus loss component
// values (already weighted by batch normalization, not by lambda).
template <class Real>
struct RowResult {
  ad::VecX<Real> grads;
  double loss_tau = 0.0;
  double loss_entropy = 0.0;
  double loss_zero = 0.0;
  double xi = 0.0;
  Eigen::VectorXd tau_b_values;   // B, empty when background disabled
  bool finite = true;
};

inline std::vector<int> sample_distinct(int count, int upper, Rng& rng) {
  count = std::min(count, upper);
  std::vector<int> pool(static_cast<size_t>(upper));
  for (int i = 0; i < upper; ++i) pool[static_cast<size_t>(i)] = i;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(count));
  for (int k = 0; k < count; ++k) {
    int j = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(upper - k)));
    std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
    out.push_back(pool[static_cast<size_t>(k)]);
  }
  return out;
}

}  // namespace detail

// Full optimization loop per the training schedule: render a batch of wall
// points, composite background, recompute the object-component mask, take
// one Adam step, log and checkpoint.
template <class Real>
FitResult fit(const core::Config& cfg, const core::TransientVolume& volume,
              const carve::CarveGrid& grid, const std::string& out_dir,
              const std::string& resume_path = "") {
  namespace fs = std::filesystem;
  cfg.validate();
  if ((grid.bounds.min - cfg.bounds.min).norm() > 1e-9 ||
      (grid.bounds.max - cfg.bounds.max).norm() > 1e-9) {
    throw NlosError(ErrorCode::BoundsMismatch, "carve grid bounds differ from config bounds");
  }
  const int m_rows = volume.positions();
  const int n_bins = volume.bins();
  fs::create_directories(out_dir);

  Model<Real> model = Model<Real>::build(cfg);
  AdamState adam;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.eps = cfg.adam_eps;
  adam.init(model.params.size());

  // Per-coordinate learning rate: network lr everywhere, lr_alpha on the
  // density sharpness.
  std::vector<double> lr(static_cast<size_t>(model.params.size()), cfg.lr);
  {
    const auto& e = model.params.entry(model.density.log_alpha_entry);
    for (int i = 0; i < e.rows * e.cols; ++i) {
      lr[static_cast<size_t>(e.offset + i)] = cfg.lr_alpha;
    }
  }

  Rng rng(cfg.seed + 0x5eed);
  std::vector<double> xi(static_cast<size_t>(m_rows), 0.0);
  Eigen::MatrixXf object_component = volume.data;
  std::int64_t start_iteration = 0;

  const std::uint64_t cfg_hash = core::config_hash(cfg);
  if (!resume_path.empty()) {
    Checkpoint<Real> ck = load_checkpoint<Real>(resume_path);
    if (ck.config_hash != cfg_hash) {
      throw NlosError(ErrorCode::BoundsMismatch,
                      "checkpoint was produced by a different config");
    }
    if (static_cast<std::int64_t>(ck.params.size()) != model.params.size()) {
      throw NlosError(ErrorCode::ShapeMismatch, "checkpoint parameter count mismatch");
    }
    model.params.raw() = ck.params;
    if (ck.has_trainer_state) {
      adam.m = ck.adam_m;
      adam.v = ck.adam_v;
      adam.step = ck.adam_step;
      rng.deserialize(ck.rng_state);
      xi = ck.xi;
      object_component = ck.object_component;
    }
    start_iteration = ck.iteration;
  }

  // Acquisition geometry shared by every iteration.
  const Frame wall_frame = Frame::from_normal(volume.wall.normal);
  const double bin_width_s = volume.bin_width_s();
  render::SphereSampleGrid angle_grid(cfg.n_theta, cfg.n_phi);
  std::vector<render::BinRange> ranges(static_cast<size_t>(m_rows));
  for (int r = 0; r < m_rows; ++r) {
    ranges[static_cast<size_t>(r)] =
        cfg.restrict_bins_to_bounds
            ? render::bins_touching_bounds(volume.wall.positions[static_cast<size_t>(r)],
                                           cfg.bounds, bin_width_s, n_bins)
            : render::BinRange{0, n_bins};
    if (ranges[static_cast<size_t>(r)].count() <= 0) {
      throw NlosError(ErrorCode::BoundsMismatch,
                      "scene bounds unreachable from wall point " + std::to_string(r));
    }
  }
  Eigen::VectorXd t_norm(n_bins);
  for (int t = 0; t < n_bins; ++t) {
    t_norm[t] = n_bins > 1 ? static_cast<double>(t) / (n_bins - 1) : 0.0;
  }

  // Free-space voxel pool for the lower-bound loss.
  std::vector<Vec3> free_centers;
  std::vector<double> free_bounds_b;
  for (int i = 0; i < grid.nx; ++i) {
    for (int j = 0; j < grid.ny; ++j) {
      for (int k = 0; k < grid.nz; ++k) {
        std::int64_t idx = grid.index(i, j, k);
        if (grid.labels[static_cast<size_t>(idx)] == 0) {
          free_centers.push_back(grid.voxel_center(i, j, k));
          free_bounds_b.push_back(grid.lower_bound[static_cast<size_t>(idx)]);
        }
      }
    }
  }
  if (free_centers.empty()) {
    std::cerr << "[train] warning: carve grid has no free voxels; free-space loss inactive\n";
  }

  losses::LossWeights weights;
  weights.tau = cfg.lambda_tau;
  weights.eikonal = cfg.lambda_eikonal;
  weights.zero_sdf = cfg.lambda_zero;
  weights.entropy = cfg.lambda_entropy;
  weights.free_space = cfg.lambda_free;
  weights.validate();

  const std::string log_path = out_dir + "/train_log.csv";
  std::ofstream log(log_path, start_iteration > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw NlosError(ErrorCode::IoError, "cannot write log: " + log_path);
  if (start_iteration == 0) {
    log << "iteration,loss_tau,loss_eikonal,loss_zero,loss_entropy,loss_free,total,alpha\n";
  }

  const std::string ck_path = out_dir + "/model.ckpt";
  auto write_checkpoint = [&](std::int64_t iteration) {
    Checkpoint<Real> ck;
    ck.config_hash = cfg_hash;
    ck.iteration = iteration;
    ck.params = model.params.raw();
    ck.has_trainer_state = true;
    ck.adam_m = adam.m;
    ck.adam_v = adam.v;
    ck.adam_step = adam.step;
    ck.rng_state = rng.serialize();
    ck.xi = xi;
    ck.object_component = object_component;
    save_checkpoint(ck_path, ck);
  };

  FitResult result;
  result.checkpoint_path = ck_path;
  result.log_path = log_path;

  const int batch = std::min(cfg.batch_wall_points, m_rows);
  const double d_count = static_cast<double>(angle_grid.directions());

  for (std::int64_t it = start_iteration; it < cfg.iterations; ++it) {
    std::vector<int> rows = detail::sample_distinct(batch, m_rows, rng);
    double mask_threshold = cfg.mask_kappa * static_cast<double>(object_component.maxCoeff());

    // Pre-drawn seeds keep the per-row sampling deterministic under threads.
    std::vector<std::uint64_t> row_seeds(rows.size());
    for (auto& s : row_seeds) s = rng.next_u64();

    std::vector<detail::RowResult<Real>> row_results(rows.size());
    auto process_row = [&](size_t ri) {
      const int row = rows[ri];
      const Vec3& wall_point = volume.wall.positions[static_cast<size_t>(row)];
      const render::BinRange& range = ranges[static_cast<size_t>(row)];
      Rng row_rng(row_seeds[ri]);
      detail::RowResult<Real>& out = row_results[ri];

      ad::Tape<Real> tape(&model.params);
      int alpha_node = model.density.alpha_node(tape);
      render::RenderNodes<Real> rn = render::render_transient_tape(
          tape, model.sdf, model.refl, alpha_node, wall_point, wall_frame, range,
          bin_width_s, angle_grid, cfg.cumulative_weights);

      Eigen::VectorXd tau_m_row =
          volume.data.row(row).transpose().template cast<double>();
      const double tau_o_sum = tape.value(rn.tau_o).sum();

      // Background compositing (xi detached for this step).
      int tau_node = rn.tau_o;  // range rows only
      double loss_tau_const = 0.0;
      const double norm_tau = 1.0 / (static_cast<double>(batch) * n_bins);
      int bg_node = -1;
      if (cfg.background_enabled) {
        bg_node = model.bg.eval_tape(tape, wall_point, t_norm);  // B x 1
        Eigen::VectorXd tau_b_vals =
            tape.value(bg_node).col(0).template cast<double>();
        out.tau_b_values = tau_b_vals;
        double denom = tau_b_vals.sum();
        double raw_xi = denom < 1e-12
                            ? 0.0
                            : (tau_m_row.sum() - tau_o_sum) / denom;
        out.xi = std::max(0.0, raw_xi);
        int bg_scaled = tape.scale_shift(bg_node, static_cast<Real>(out.xi), Real(0));
        int bg_in = tape.slice_rows(bg_scaled, range.lo, range.count());
        tau_node = tape.add(rn.tau_o, bg_in);

        // Out-of-range residual: tau_m - xi*tau_b with tau_o == 0.
        int loss_tau_node = -1;
        {
          ad::MatX<Real> tm_in(range.count(), 1);
          for (int t = 0; t < range.count(); ++t) {
            tm_in(t, 0) = static_cast<Real>(tau_m_row[range.lo + t]);
          }
          int resid_in = tape.sub(tape.constant(std::move(tm_in)), tau_node);
          loss_tau_node = losses::sum_squares_node(tape, resid_in, norm_tau);
        }
        if (range.lo > 0) {
          ad::MatX<Real> tm_pre(range.lo, 1);
          for (int t = 0; t < range.lo; ++t) tm_pre(t, 0) = static_cast<Real>(tau_m_row[t]);
          int resid = tape.sub(tape.constant(std::move(tm_pre)),
                               tape.slice_rows(bg_scaled, 0, range.lo));
          loss_tau_node =
              tape.add(loss_tau_node, losses::sum_squares_node(tape, resid, norm_tau));
        }
        if (range.hi < n_bins) {
          ad::MatX<Real> tm_post(n_bins - range.hi, 1);
          for (int t = range.hi; t < n_bins; ++t) {
            tm_post(t - range.hi, 0) = static_cast<Real>(tau_m_row[t]);
          }
          int resid = tape.sub(tape.constant(std::move(tm_post)),
                               tape.slice_rows(bg_scaled, range.hi, n_bins - range.hi));
          loss_tau_node =
              tape.add(loss_tau_node, losses::sum_squares_node(tape, resid, norm_tau));
        }
        out.loss_tau = static_cast<double>(tape.scalar(loss_tau_node));
        tau_node = loss_tau_node;  // reuse slot: final tau loss node
      } else {
        ad::MatX<Real> tm_in(range.count(), 1);
        for (int t = 0; t < range.count(); ++t) {
          tm_in(t, 0) = static_cast<Real>(tau_m_row[range.lo + t]);
        }
        int resid_in = tape.sub(tape.constant(std::move(tm_in)), rn.tau_o);
        int loss_tau_node = losses::sum_squares_node(tape, resid_in, norm_tau);
        for (int t = 0; t < n_bins; ++t) {
          if (t < range.lo || t >= range.hi) {
            loss_tau_const += tau_m_row[t] * tau_m_row[t] * norm_tau;
          }
        }
        out.loss_tau = static_cast<double>(tape.scalar(loss_tau_node)) + loss_tau_const;
        tau_node = loss_tau_node;
      }

      // Entropy of accumulated weights.
      int ent_node =
          losses::entropy_node(tape, rn.ohat, 1.0 / (static_cast<double>(batch) * d_count));
      out.loss_entropy = static_cast<double>(tape.scalar(ent_node));

      // Zero level-set self-supervision from the current w*rho distribution.
      Eigen::VectorXd row_signal = tau_m_row;
      if (cfg.background_enabled && out.tau_b_values.size() == n_bins) {
        row_signal -= out.xi * out.tau_b_values;
      }
      const ad::MatX<Real>& wrho_vals = tape.value(rn.wrho);
      std::vector<Vec3> surface_points;
      int masked_bins = 0;
      for (int t = 0; t < range.count(); ++t) {
        if (row_signal[range.lo + t] <= mask_threshold) continue;
        ++masked_bins;
        Eigen::VectorXd pdf = wrho_vals.row(t).transpose().template cast<double>();
        double radius = core::bin_to_radius(range.lo + t, bin_width_s);
        std::vector<Vec3> pts =
            losses::sample_surface_points(pdf, angle_grid, wall_frame, wall_point, radius,
                                          cfg.n_zero_samples, row_rng);
        surface_points.insert(surface_points.end(), pts.begin(), pts.end());
      }
      int lz_node = -1;
      if (!surface_points.empty()) {
        Mat3X pts(3, static_cast<Eigen::Index>(surface_points.size()));
        for (size_t i = 0; i < surface_points.size(); ++i) {
          pts.col(static_cast<Eigen::Index>(i)) = surface_points[i];
        }
        double denom = cfg.lz_normalize_masked
                           ? static_cast<double>(batch) * masked_bins * cfg.n_zero_samples
                           : static_cast<double>(batch) * n_bins * cfg.n_zero_samples;
        lz_node = losses::zero_sdf_node(tape, model.sdf, pts, denom);
        out.loss_zero = static_cast<double>(tape.scalar(lz_node));
      }

      // lambda-weighted partial objective for this row.
      int partial = tape.scale_shift(tau_node, static_cast<Real>(weights.tau), Real(0));
      partial = tape.add(
          partial, tape.scale_shift(ent_node, static_cast<Real>(weights.entropy), Real(0)));
      if (lz_node >= 0) {
        partial = tape.add(
            partial, tape.scale_shift(lz_node, static_cast<Real>(weights.zero_sdf), Real(0)));
      }
      if (!std::isfinite(static_cast<double>(tape.scalar(partial)))) {
        out.finite = false;
        out.grads = ad::VecX<Real>::Zero(model.params.size());
        return;
      }
      out.grads = tape.backward(partial);
    };

    if (cfg.threads <= 1 || rows.size() <= 1) {
      for (size_t ri = 0; ri < rows.size(); ++ri) process_row(ri);
    } else {
      std::vector<std::thread> pool;
      std::atomic<size_t> cursor{0};
      int n_workers = std::min<int>(cfg.threads, static_cast<int>(rows.size()));
      for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&]() {
          for (size_t ri = cursor.fetch_add(1); ri < rows.size(); ri = cursor.fetch_add(1)) {
            process_row(ri);
          }
        });
      }
      for (auto& th : pool) th.join();
    }

    // Auxiliary objectives on their own tape.
    ad::Tape<Real> aux(&model.params);
    Mat3X eik_pts(3, cfg.n_eikonal_samples);
    for (int i = 0; i < cfg.n_eikonal_samples; ++i) {
      for (int a = 0; a < 3; ++a) {
        eik_pts(a, i) = rng.uniform(cfg.bounds.min[a], cfg.bounds.max[a]);
      }
    }
    int ei_node = losses::eikonal_node(aux, model.sdf, eik_pts, cfg.fd_epsilon);
    double loss_ei = static_cast<double>(aux.scalar(ei_node));
    int aux_partial = aux.scale_shift(ei_node, static_cast<Real>(weights.eikonal), Real(0));

    double loss_free = 0.0;
    if (!free_centers.empty()) {
      int n_free = std::min<int>(cfg.n_free_samples, static_cast<int>(free_centers.size()));
      Mat3X free_pts(3, n_free);
      Eigen::VectorXd free_b(n_free);
      for (int i = 0; i < n_free; ++i) {
        size_t pick = static_cast<size_t>(rng.below(free_centers.size()));
        free_pts.col(i) = free_centers[pick];
        free_b[i] = free_bounds_b[pick];
      }
      int lf_node = losses::free_space_node(aux, model.sdf, free_pts, free_b);
      loss_free = static_cast<double>(aux.scalar(lf_node));
      aux_partial = aux.add(
          aux_partial, aux.scale_shift(lf_node, static_cast<Real>(weights.free_space), Real(0)));
    }

    // Assemble the breakdown and merge gradients in deterministic order.
    double l_tau = 0.0, l_en = 0.0, l_z = 0.0;
    bool all_finite = true;
    for (const auto& rr : row_results) {
      l_tau += rr.loss_tau;
      l_en += rr.loss_entropy;
      l_z += rr.loss_zero;
      all_finite &= rr.finite;
    }
    losses::LossBreakdown breakdown =
        losses::total_loss(l_tau, loss_ei, l_z, l_en, loss_free, weights);
    if (it == start_iteration) result.first = breakdown;
    result.last = breakdown;

    if (!all_finite || !std::isfinite(breakdown.total)) {
      log.flush();
      throw NlosError(ErrorCode::NumericDivergence,
                      "training loss became non-finite at iteration " + std::to_string(it) +
                          " (last good checkpoint: " + ck_path + ")");
    }

    ad::VecX<Real> grads = ad::VecX<Real>::Zero(model.params.size());
    for (const auto& rr : row_results) grads += rr.grads;
    grads += aux.backward(aux_partial);
    clip_gradient_norm(grads, cfg.grad_clip_norm);
    if (!adam_step(adam, model.params, grads, lr)) {
      std::cerr << "[train] non-finite gradient at iteration " << it << "; step skipped\n";
    }

    // Fold the freshly rendered rows into the background-subtracted signal.
    for (size_t ri = 0; ri < rows.size(); ++ri) {
      const int row = rows[ri];
      xi[static_cast<size_t>(row)] = row_results[ri].xi;
      if (cfg.background_enabled && row_results[ri].tau_b_values.size() == n_bins) {
        for (int t = 0; t < n_bins; ++t) {
          double v = static_cast<double>(volume.data(row, t)) -
                     row_results[ri].xi * row_results[ri].tau_b_values[t];
          object_component(row, t) = static_cast<float>(std::max(0.0, v));
        }
      }
    }

    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations)) {
      log << it << ',' << breakdown.tau << ',' << breakdown.eikonal << ',' << breakdown.zero_sdf
          << ',' << breakdown.entropy << ',' << breakdown.free_space << ',' << breakdown.total
          << ',' << model.alpha() << '\n';
    }
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      log.flush();
      write_checkpoint(it + 1);
    }
    result.iterations_run = static_cast<int>(it - start_iteration) + 1;
  }

  log.flush();
  write_checkpoint(cfg.iterations);
  result.final_alpha = model.alpha();
  return result;
}

}  // namespace nlos::train
