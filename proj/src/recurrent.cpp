#include "h4d/recurrent.hpp"

#include <cmath>

namespace h4d {

namespace {
double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Var gru_step(Var gx, Var h, Var w_hh, Var b_hh) {
  const Tensor& H = h.value();
  const Tensor& W = w_hh.value();
  const Tensor& B = b_hh.value();
  const Tensor& G = gx.value();
  const std::size_t hid = H.size();
  if (H.rank() != 1 || W.rank() != 2 || W.dim(0) != hid || W.dim(1) != 3 * hid || B.size() != 3 * hid ||
      G.size() != 3 * hid) {
    throw DimensionError("gru_step: inconsistent shapes (h " + shape_string(H.shape()) + ", w_hh " +
                         shape_string(W.shape()) + ", gx " + shape_string(G.shape()) + ")");
  }
  // gh = h·W_hh + b_hh
  std::vector<double> gh(3 * hid);
  for (std::size_t j = 0; j < 3 * hid; ++j) gh[j] = B[j];
  for (std::size_t i = 0; i < hid; ++i) {
    const double hv = H[i];
    const float* wrow = W.data() + i * 3 * hid;
    for (std::size_t j = 0; j < 3 * hid; ++j) gh[j] += hv * wrow[j];
  }
  Tensor out(Shape{hid});
  for (std::size_t i = 0; i < hid; ++i) {
    const double r = sigm(G[i] + gh[i]);
    const double z = sigm(G[hid + i] + gh[hid + i]);
    const double n = std::tanh(G[2 * hid + i] + r * gh[2 * hid + i]);
    out[i] = static_cast<float>((1.0 - z) * n + z * H[i]);
  }
  return h.tape()->record(std::move(out), {gx, h, w_hh, b_hh}, [gx, h, w_hh, b_hh, hid](Tape& t, const Tensor& g) {
    const Tensor& H = t.value(h);
    const Tensor& W = t.value(w_hh);
    const Tensor& B = t.value(b_hh);
    const Tensor& G = t.value(gx);
    std::vector<double> gh(3 * hid);
    for (std::size_t j = 0; j < 3 * hid; ++j) gh[j] = B[j];
    for (std::size_t i = 0; i < hid; ++i) {
      const double hv = H[i];
      const float* wrow = W.data() + i * 3 * hid;
      for (std::size_t j = 0; j < 3 * hid; ++j) gh[j] += hv * wrow[j];
    }
    std::vector<double> dgx(3 * hid), dgh(3 * hid), dh(hid);
    for (std::size_t i = 0; i < hid; ++i) {
      const double r = sigm(G[i] + gh[i]);
      const double z = sigm(G[hid + i] + gh[hid + i]);
      const double n = std::tanh(G[2 * hid + i] + r * gh[2 * hid + i]);
      const double go = g[i];
      const double dn = go * (1.0 - z);
      const double dz = go * (H[i] - n);
      dh[i] = go * z;
      const double dpre_n = dn * (1.0 - n * n);
      const double dr = dpre_n * gh[2 * hid + i];
      const double dpre_z = dz * z * (1.0 - z);
      const double dpre_r = dr * r * (1.0 - r);
      dgx[i] = dpre_r;
      dgx[hid + i] = dpre_z;
      dgx[2 * hid + i] = dpre_n;
      dgh[i] = dpre_r;
      dgh[hid + i] = dpre_z;
      dgh[2 * hid + i] = dpre_n * r;
    }
    if (t.requires_grad(gx)) {
      Tensor& ggx = t.grad_ref(gx);
      for (std::size_t j = 0; j < 3 * hid; ++j) ggx[j] += static_cast<float>(dgx[j]);
    }
    if (t.requires_grad(b_hh)) {
      Tensor& gb = t.grad_ref(b_hh);
      for (std::size_t j = 0; j < 3 * hid; ++j) gb[j] += static_cast<float>(dgh[j]);
    }
    if (t.requires_grad(w_hh)) {
      Tensor& gw = t.grad_ref(w_hh);
      for (std::size_t i = 0; i < hid; ++i) {
        const double hv = H[i];
        float* grow = gw.data() + i * 3 * hid;
        for (std::size_t j = 0; j < 3 * hid; ++j) grow[j] += static_cast<float>(hv * dgh[j]);
      }
    }
    if (t.requires_grad(h)) {
      Tensor& ghh = t.grad_ref(h);
      for (std::size_t i = 0; i < hid; ++i) {
        const float* wrow = W.data() + i * 3 * hid;
        double s = dh[i];
        for (std::size_t j = 0; j < 3 * hid; ++j) s += wrow[j] * dgh[j];
        ghh[i] += static_cast<float>(s);
      }
    }
  });
}

Var gru_cell(Var x, Var h, const GateWeights& w) {
  if (x.value().rank() != 1) throw DimensionError("gru_cell: input must be a vector");
  Var xr = reshape(x, Shape{1, x.value().size()});
  Var gx = reshape(add_row(matmul(xr, w.w_ih), w.b_ih), Shape{w.b_ih.value().size()});
  return gru_step(gx, h, w.w_hh, w.b_hh);
}

Var stacked_gru(Var seq, std::span<const GateWeights> layers) {
  const Tensor& S = seq.value();
  if (S.rank() != 2 || S.dim(0) == 0) throw DimensionError("stacked_gru: expected a nonempty [L, d_in] sequence");
  if (layers.empty()) throw DimensionError("stacked_gru: no layers");
  Tape& tape = *seq.tape();
  const std::size_t steps = S.dim(0);
  Var input = seq;
  for (const GateWeights& w : layers) {
    const std::size_t hid = w.w_hh.value().dim(0);
    Var gx_all = add_row(matmul(input, w.w_ih), w.b_ih);
    Var h = tape.constant(Tensor(Shape{hid}));
    std::vector<Var> outs;
    outs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      h = gru_step(row(gx_all, t), h, w.w_hh, w.b_hh);
      outs.push_back(h);
    }
    input = stack_rows(outs);
  }
  return input;
}

void init_gru(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
              std::size_t layers, std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(float(hidden));
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string p = prefix + ".l" + std::to_string(k) + ".";
    const std::size_t in = k == 0 ? input : hidden;
    Tensor w_ih(Shape{in, 3 * hidden}), w_hh(Shape{hidden, 3 * hidden});
    Tensor b_ih(Shape{3 * hidden}), b_hh(Shape{3 * hidden});
    init_uniform(w_ih, bound, rng);
    init_uniform(w_hh, bound, rng);
    init_uniform(b_ih, bound, rng);
    init_uniform(b_hh, bound, rng);
    params.set(p + "w_ih", std::move(w_ih));
    params.set(p + "w_hh", std::move(w_hh));
    params.set(p + "b_ih", std::move(b_ih));
    params.set(p + "b_hh", std::move(b_hh));
  }
}

std::vector<GateWeights> bind_gru(Binding& binding, const std::string& prefix, std::size_t layers) {
  std::vector<GateWeights> out;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string p = prefix + ".l" + std::to_string(k) + ".";
    out.push_back(GateWeights{binding[p + "w_ih"], binding[p + "w_hh"], binding[p + "b_ih"], binding[p + "b_hh"]});
  }
  return out;
}

}  // namespace h4d
