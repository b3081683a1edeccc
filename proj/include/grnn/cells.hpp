// Recurrent cells and prediction heads with exact reverse-mode gradients.
//
// The GRU cell follows the standard gate algebra
//   z = sigmoid(Z [h, x] + b_z)
//   r = sigmoid(R [h, x] + b_r)
//   hc = tanh(W [r . h, x] + b_w)
//   h' = (1 - z) . h + z . hc
// and the GRNN cell is the same algebra over a state split into grounded and
// control parts, with every matrix-vector product routed through a
// semi-diagonal transition. Backward passes are hand-derived and verified
// against central finite differences in the tests.

#ifndef GRNN_CELLS_HPP_
#define GRNN_CELLS_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grnn/linalg.hpp"

namespace grnn {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// GRU cell.
// ---------------------------------------------------------------------------

struct GruParameters {
  DenseMatrix Z, R, W;  // each Dh x (Dh + De'), columns over [h_prev, x]
  Vec b_z, b_r, b_w;    // each Dh

  GruParameters() = default;
  GruParameters(std::size_t hidden, std::size_t input)
      : Z(hidden, hidden + input),
        R(hidden, hidden + input),
        W(hidden, hidden + input),
        b_z(hidden, 0.0),
        b_r(hidden, 0.0),
        b_w(hidden, 0.0) {}

  std::size_t hidden_dim() const { return Z.rows(); }
  std::size_t input_dim() const { return Z.cols() - Z.rows(); }
};

/// Slots appended to the tape by one gru_step, in order.
constexpr std::size_t kGruTapeSlots = 5;  // h_prev, x, z, r, hc

/// One GRU update; appends kGruTapeSlots slots starting at the returned
/// tape size prior to the call.
inline Vec gru_step(const GruParameters& p, const Vec& h_prev, const Vec& x,
                    GradientTape& tape) {
  const std::size_t dh = p.hidden_dim();
  check_shape(h_prev.size() == dh,
              str_cat("gru_step: h_prev has length ", h_prev.size(),
                      ", expected ", dh));
  check_shape(x.size() == p.input_dim(),
              str_cat("gru_step: x has length ", x.size(), ", expected ",
                      p.input_dim()));
  const Vec hx = concat(h_prev, x);
  Vec z = matvec(p.Z, hx, &p.b_z);
  Vec r = matvec(p.R, hx, &p.b_r);
  for (std::size_t i = 0; i < dh; ++i) {
    z[i] = sigmoid(z[i]);
    r[i] = sigmoid(r[i]);
  }
  Vec rh_x = hx;  // reuse layout [r . h_prev, x]
  for (std::size_t i = 0; i < dh; ++i) rh_x[i] = r[i] * h_prev[i];
  Vec hc = matvec(p.W, rh_x, &p.b_w);
  for (double& v : hc) v = std::tanh(v);
  Vec h(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * hc[i];
  }
  tape.save(h_prev);
  tape.save(x);
  tape.save(std::move(z));
  tape.save(std::move(r));
  tape.save(std::move(hc));
  return h;
}

inline Vec gru_step(const GruParameters& p, const Vec& h_prev, const Vec& x) {
  GradientTape scratch;
  return gru_step(p, h_prev, x, scratch);
}

/// Reverse-mode of gru_step. Reads the slots written at `base`; accumulates
/// parameter gradients into `grads` and input gradients into dh_prev / dx.
inline void gru_step_backward(const GruParameters& p, const GradientTape& tape,
                              std::size_t base, const Vec& dh,
                              GruParameters& grads, Vec& dh_prev, Vec& dx) {
  const std::size_t dh_dim = p.hidden_dim();
  const std::size_t de = p.input_dim();
  const Vec& h_prev = tape.slot(base);
  const Vec& x = tape.slot(base + 1);
  const Vec& z = tape.slot(base + 2);
  const Vec& r = tape.slot(base + 3);
  const Vec& hc = tape.slot(base + 4);
  check_shape(h_prev.size() == dh_dim && x.size() == de,
              "gru_step_backward: tape does not match parameters");
  check_shape(dh.size() == dh_dim,
              "gru_step_backward: upstream gradient has wrong length");

  // h = (1 - z) . h_prev + z . hc
  Vec dz(dh_dim), dhc(dh_dim);
  for (std::size_t i = 0; i < dh_dim; ++i) {
    dz[i] = dh[i] * (hc[i] - h_prev[i]);
    dhc[i] = dh[i] * z[i];
    dh_prev[i] += dh[i] * (1.0 - z[i]);
  }

  // hc = tanh(W [r . h_prev, x] + b_w)
  Vec da_w(dh_dim);
  for (std::size_t i = 0; i < dh_dim; ++i) {
    da_w[i] = dhc[i] * (1.0 - hc[i] * hc[i]);
  }
  Vec rh_x = concat(h_prev, x);
  for (std::size_t i = 0; i < dh_dim; ++i) rh_x[i] = r[i] * h_prev[i];
  add_outer(grads.W, da_w, rh_x);
  axpy(1.0, da_w, grads.b_w);
  Vec d_rh_x(dh_dim + de, 0.0);
  add_matvec_transpose(p.W, da_w, d_rh_x);
  Vec dr(dh_dim);
  for (std::size_t i = 0; i < dh_dim; ++i) {
    dh_prev[i] += d_rh_x[i] * r[i];
    dr[i] = d_rh_x[i] * h_prev[i];
  }
  for (std::size_t i = 0; i < de; ++i) dx[i] += d_rh_x[dh_dim + i];

  // Gates.
  const Vec hx = concat(h_prev, x);
  Vec da_r(dh_dim), da_z(dh_dim);
  for (std::size_t i = 0; i < dh_dim; ++i) {
    da_r[i] = dr[i] * r[i] * (1.0 - r[i]);
    da_z[i] = dz[i] * z[i] * (1.0 - z[i]);
  }
  add_outer(grads.R, da_r, hx);
  axpy(1.0, da_r, grads.b_r);
  add_outer(grads.Z, da_z, hx);
  axpy(1.0, da_z, grads.b_z);
  Vec d_hx(dh_dim + de, 0.0);
  add_matvec_transpose(p.R, da_r, d_hx);
  add_matvec_transpose(p.Z, da_z, d_hx);
  for (std::size_t i = 0; i < dh_dim; ++i) dh_prev[i] += d_hx[i];
  for (std::size_t i = 0; i < de; ++i) dx[i] += d_hx[dh_dim + i];
}

// ---------------------------------------------------------------------------
// GRNN cell: GRU algebra over h = [g, c] with semi-diagonal transitions.
// Grounded rows read their own diagonal entry plus [c, x]; other grounded
// coordinates can reach g[l] only through the control rows.
// ---------------------------------------------------------------------------

struct GrnnParameters {
  SemiDiagonalMatrix Z, R, W;  // shared (L, Dc, De')
  Vec b_z, b_r, b_w;           // each L + Dc
  Vec b_p;                     // L, grounded prediction bias

  GrnnParameters() = default;
  GrnnParameters(std::size_t labels, std::size_t control, std::size_t input)
      : Z(labels, control, input),
        R(labels, control, input),
        W(labels, control, input),
        b_z(labels + control, 0.0),
        b_r(labels + control, 0.0),
        b_w(labels + control, 0.0),
        b_p(labels, 0.0) {}

  std::size_t num_labels() const { return Z.num_labels; }
  std::size_t control_dim() const { return Z.control_dim; }
  std::size_t input_dim() const { return Z.input_dim; }
};

struct GrnnState {
  Vec g;  // grounded part, one coordinate per label
  Vec c;  // control part
};

constexpr std::size_t kGrnnTapeSlots = 6;  // g_prev, c_prev, x, z, r, hc

inline GrnnState grnn_step(const GrnnParameters& p, const Vec& g_prev,
                           const Vec& c_prev, const Vec& x,
                           GradientTape& tape) {
  check_shape(p.Z.same_dims(p.R) && p.Z.same_dims(p.W),
              "grnn_step: gate matrices do not share dimensions");
  const std::size_t L = p.num_labels();
  const std::size_t dc = p.control_dim();
  Vec z = semidiag_matvec(p.Z, g_prev, c_prev, x, p.b_z);
  Vec r = semidiag_matvec(p.R, g_prev, c_prev, x, p.b_r);
  for (std::size_t i = 0; i < L + dc; ++i) {
    z[i] = sigmoid(z[i]);
    r[i] = sigmoid(r[i]);
  }
  Vec rg(L), rc(dc);
  for (std::size_t i = 0; i < L; ++i) rg[i] = r[i] * g_prev[i];
  for (std::size_t i = 0; i < dc; ++i) rc[i] = r[L + i] * c_prev[i];
  Vec hc = semidiag_matvec(p.W, rg, rc, x, p.b_w);
  for (double& v : hc) v = std::tanh(v);
  GrnnState out{Vec(L), Vec(dc)};
  for (std::size_t i = 0; i < L; ++i) {
    out.g[i] = (1.0 - z[i]) * g_prev[i] + z[i] * hc[i];
  }
  for (std::size_t i = 0; i < dc; ++i) {
    out.c[i] = (1.0 - z[L + i]) * c_prev[i] + z[L + i] * hc[L + i];
  }
  tape.save(g_prev);
  tape.save(c_prev);
  tape.save(x);
  tape.save(std::move(z));
  tape.save(std::move(r));
  tape.save(std::move(hc));
  return out;
}

inline GrnnState grnn_step(const GrnnParameters& p, const Vec& g_prev,
                           const Vec& c_prev, const Vec& x) {
  GradientTape scratch;
  return grnn_step(p, g_prev, c_prev, x, scratch);
}

/// Gradient accumulation reuses GrnnParameters as the buffer type: a
/// zero-initialized instance of the same dims mirrors every tensor.
inline void grnn_step_backward(const GrnnParameters& p,
                               const GradientTape& tape, std::size_t base,
                               const Vec& dg, const Vec& dc_up,
                               GrnnParameters& grads, Vec& dg_prev,
                               Vec& dc_prev, Vec& dx) {
  const std::size_t L = p.num_labels();
  const std::size_t dc = p.control_dim();
  const Vec& g_prev = tape.slot(base);
  const Vec& c_prev = tape.slot(base + 1);
  const Vec& x = tape.slot(base + 2);
  const Vec& z = tape.slot(base + 3);
  const Vec& r = tape.slot(base + 4);
  const Vec& hc = tape.slot(base + 5);
  check_shape(g_prev.size() == L && c_prev.size() == dc,
              "grnn_step_backward: tape does not match parameters");

  Vec dh = concat(dg, dc_up);  // upstream over [g, c]
  const Vec h_prev = concat(g_prev, c_prev);
  Vec dz(L + dc), dhc(L + dc), dh_prev(L + dc, 0.0);
  for (std::size_t i = 0; i < L + dc; ++i) {
    dz[i] = dh[i] * (hc[i] - h_prev[i]);
    dhc[i] = dh[i] * z[i];
    dh_prev[i] += dh[i] * (1.0 - z[i]);
  }

  Vec da_w(L + dc);
  for (std::size_t i = 0; i < L + dc; ++i) {
    da_w[i] = dhc[i] * (1.0 - hc[i] * hc[i]);
  }
  Vec rg(L), rc(dc);
  for (std::size_t i = 0; i < L; ++i) rg[i] = r[i] * g_prev[i];
  for (std::size_t i = 0; i < dc; ++i) rc[i] = r[L + i] * c_prev[i];
  Vec d_rg(L, 0.0), d_rc(dc, 0.0);
  semidiag_backward_acc(p.W, rg, rc, x, da_w, grads.W, grads.b_w, d_rg, d_rc,
                        dx);
  Vec dr(L + dc);
  for (std::size_t i = 0; i < L; ++i) {
    dh_prev[i] += d_rg[i] * r[i];
    dr[i] = d_rg[i] * g_prev[i];
  }
  for (std::size_t i = 0; i < dc; ++i) {
    dh_prev[L + i] += d_rc[i] * r[L + i];
    dr[L + i] = d_rc[i] * c_prev[i];
  }

  Vec da_r(L + dc), da_z(L + dc);
  for (std::size_t i = 0; i < L + dc; ++i) {
    da_r[i] = dr[i] * r[i] * (1.0 - r[i]);
    da_z[i] = dz[i] * z[i] * (1.0 - z[i]);
  }
  Vec dgp(L, 0.0), dcp(dc, 0.0);
  semidiag_backward_acc(p.R, g_prev, c_prev, x, da_r, grads.R, grads.b_r, dgp,
                        dcp, dx);
  semidiag_backward_acc(p.Z, g_prev, c_prev, x, da_z, grads.Z, grads.b_z, dgp,
                        dcp, dx);
  for (std::size_t i = 0; i < L; ++i) dg_prev[i] += dh_prev[i] + dgp[i];
  for (std::size_t i = 0; i < dc; ++i) dc_prev[i] += dh_prev[L + i] + dcp[i];
}

// ---------------------------------------------------------------------------
// Prediction heads.
// ---------------------------------------------------------------------------

struct PredictionHead {
  DenseMatrix P;  // |L| x Dh
  Vec b_p;        // |L|

  PredictionHead() = default;
  PredictionHead(std::size_t labels, std::size_t hidden)
      : P(labels, hidden), b_p(labels, 0.0) {}
};

/// y_hat = sigmoid(P h + b_p); every component strictly inside (0, 1).
inline Vec predict_affine(const PredictionHead& head, const Vec& h) {
  Vec y = matvec(head.P, h, &head.b_p);
  for (double& v : y) v = sigmoid(v);
  return y;
}

/// Rescales a grounded state in [-1, 1] to a probability, then applies the
/// label-frequency bias in logit space:
///   p = clamp((g + 1) / 2, eps, 1 - eps);  y_hat = sigmoid(logit(p) + b_p)
/// With a zero bias this is the identity on the clamped belief.
inline Vec predict_grounded(const Vec& g, const Vec& b_p, double eps) {
  check_arg(eps > 0.0 && eps < 0.5, "predict_grounded: eps out of (0, 0.5)");
  check_shape(g.size() == b_p.size(),
              str_cat("predict_grounded: g has length ", g.size(),
                      ", bias has length ", b_p.size()));
  Vec y(g.size());
  for (std::size_t l = 0; l < g.size(); ++l) {
    const double p = std::clamp((g[l] + 1.0) / 2.0, eps, 1.0 - eps);
    y[l] = b_p[l] == 0.0 ? p : sigmoid(logit(p) + b_p[l]);
  }
  return y;
}

/// Sum of the two-term binary cross-entropy over all labels.
inline double bce_loss(const Vec& y_hat, const std::vector<std::uint8_t>& y) {
  check_shape(y_hat.size() == y.size(),
              "bce_loss: prediction/label lengths disagree");
  double loss = 0.0;
  for (std::size_t l = 0; l < y.size(); ++l) {
    check_arg(y_hat[l] > 0.0 && y_hat[l] < 1.0,
              "bce_loss: prediction exactly 0 or 1; caller must clamp");
    loss -= y[l] != 0 ? std::log(y_hat[l]) : std::log(1.0 - y_hat[l]);
  }
  return loss;
}

/// BCE with predictions clamped away from {0, 1} so saturated sigmoids yield
/// a finite loss. Gradients are taken on the unclamped values.
inline double bce_loss_clamped(const Vec& y_hat,
                               const std::vector<std::uint8_t>& y) {
  check_shape(y_hat.size() == y.size(),
              "bce_loss: prediction/label lengths disagree");
  constexpr double kFloor = 1e-12;
  double loss = 0.0;
  for (std::size_t l = 0; l < y.size(); ++l) {
    loss -= y[l] != 0 ? std::log(std::max(y_hat[l], kFloor))
                      : std::log(std::max(1.0 - y_hat[l], kFloor));
  }
  return loss;
}

/// BCE through the affine head. Accumulates dP, db_p, dh; returns the loss.
/// Uses the fused logit gradient y_hat - y.
inline double affine_bce_backward(const PredictionHead& head, const Vec& h,
                                  const Vec& y_hat,
                                  const std::vector<std::uint8_t>& y,
                                  PredictionHead& grads, Vec& dh) {
  const double loss = bce_loss_clamped(y_hat, y);
  Vec d_logit(y_hat.size());
  for (std::size_t l = 0; l < y_hat.size(); ++l) {
    d_logit[l] = y_hat[l] - static_cast<double>(y[l]);
  }
  add_outer(grads.P, d_logit, h);
  axpy(1.0, d_logit, grads.b_p);
  add_matvec_transpose(head.P, d_logit, dh);
  return loss;
}

/// BCE through the grounded head. The clamp has zero derivative outside the
/// open interval (eps, 1-eps) of raw beliefs.
inline double grounded_bce_backward(const Vec& g, double eps, const Vec& y_hat,
                                    const std::vector<std::uint8_t>& y,
                                    Vec& db_p, Vec& dg) {
  const double loss = bce_loss_clamped(y_hat, y);
  for (std::size_t l = 0; l < g.size(); ++l) {
    const double d_logit = y_hat[l] - static_cast<double>(y[l]);
    db_p[l] += d_logit;
    const double p_raw = (g[l] + 1.0) / 2.0;
    if (p_raw > eps && p_raw < 1.0 - eps) {
      dg[l] += d_logit / (p_raw * (1.0 - p_raw)) * 0.5;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

struct GradCheckEntry {
  std::string tensor;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 1e-4;

  bool passed() const {
    for (const auto& e : entries) {
      if (!(e.max_rel_err < tol)) return false;
    }
    return true;
  }

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
};

/// A mutable named view over one parameter tensor of a model fragment.
struct TensorRef {
  std::string name;
  Vec* values = nullptr;
};

/// Compares analytic gradients against central finite differences of `loss`,
/// tensor by tensor. `analytic` must be parallel to `tensors`. Relative error
/// is |ga - gn| / max(|ga|, |gn|, 1e-8).
template <typename LossFn>
GradCheckReport grad_check(const std::vector<TensorRef>& tensors,
                           const std::vector<const Vec*>& analytic,
                           LossFn&& loss, double step = 1e-5,
                           double tol = 1e-4) {
  check_arg(tensors.size() == analytic.size(),
            "grad_check: tensor/gradient lists differ in length");
  GradCheckReport report;
  report.tol = tol;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Vec& params = *tensors[t].values;
    const Vec& ga = *analytic[t];
    check_shape(params.size() == ga.size(),
                str_cat("grad_check: gradient for ", tensors[t].name,
                        " has wrong length"));
    GradCheckEntry entry{tensors[t].name, 0.0};
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + step;
      const double up = loss();
      params[i] = saved - step;
      const double down = loss();
      params[i] = saved;
      const double gn = (up - down) / (2.0 * step);
      const double rel = std::abs(ga[i] - gn) /
                         std::max({std::abs(ga[i]), std::abs(gn), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace grnn

#endif  // GRNN_CELLS_HPP_
