#include "mdlab/transformer.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mdlab/checkpoint.hpp"
#include "mdlab/rng.hpp"

namespace mdlab {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// y = x * W (+b), x: L x n, W: n x m row-major.
void matmul(const double* x, const double* w, const double* b, double* y, int L, int n, int m) {
  for (int i = 0; i < L; ++i) {
    double* yi = y + static_cast<std::size_t>(i) * m;
    if (b)
      std::memcpy(yi, b, sizeof(double) * m);
    else
      std::memset(yi, 0, sizeof(double) * m);
    const double* xi = x + static_cast<std::size_t>(i) * n;
    for (int a = 0; a < n; ++a) {
      const double s = xi[a];
      if (s == 0.0) continue;
      const double* wr = w + static_cast<std::size_t>(a) * m;
      for (int j = 0; j < m; ++j) yi[j] += s * wr[j];
    }
  }
}

// Accumulate gradients of y = x * W + b: dW += x^T dy, db += sum dy, dx += dy * W^T.
void matmul_backward(const double* x, const double* w, const double* dy, double* dw, double* db,
                     double* dx, int L, int n, int m) {
  for (int i = 0; i < L; ++i) {
    const double* xi = x + static_cast<std::size_t>(i) * n;
    const double* dyi = dy + static_cast<std::size_t>(i) * m;
    if (db)
      for (int j = 0; j < m; ++j) db[j] += dyi[j];
    for (int a = 0; a < n; ++a) {
      double* dwr = dw + static_cast<std::size_t>(a) * m;
      const double s = xi[a];
      for (int j = 0; j < m; ++j) dwr[j] += s * dyi[j];
    }
    if (dx) {
      double* dxi = dx + static_cast<std::size_t>(i) * n;
      for (int a = 0; a < n; ++a) {
        const double* wr = w + static_cast<std::size_t>(a) * m;
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += wr[j] * dyi[j];
        dxi[a] += acc;
      }
    }
  }
}

// Row-wise layer norm with cached normalized values and inverse stddev.
void layernorm(const double* x, const double* g, const double* b, double* y, double* xhat,
               double* inv, int L, int d) {
  for (int i = 0; i < L; ++i) {
    const double* xi = x + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xi[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + kLnEps);
    inv[i] = is;
    double* xh = xhat + static_cast<std::size_t>(i) * d;
    double* yi = y + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mean) * is;
      yi[j] = g[j] * xh[j] + b[j];
    }
  }
}

void layernorm_backward(const double* xhat, const double* inv, const double* g, const double* dy,
                        double* dg, double* db, double* dx, int L, int d) {
  for (int i = 0; i < L; ++i) {
    const double* xh = xhat + static_cast<std::size_t>(i) * d;
    const double* dyi = dy + static_cast<std::size_t>(i) * d;
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dxh = dyi[j] * g[j];
      m1 += dxh;
      m2 += dxh * xh[j];
      dg[j] += dyi[j] * xh[j];
      db[j] += dyi[j];
    }
    m1 /= d;
    m2 /= d;
    double* dxi = dx + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      const double dxh = dyi[j] * g[j];
      dxi[j] += inv[i] * (dxh - m1 - xh[j] * m2);
    }
  }
}

}  // namespace

TinyNeuralDenoiser::Layout TinyNeuralDenoiser::make_layout(const Vocab& vocab,
                                                           const TransformerConfig& cfg) {
  const int d = cfg.d_model, V = vocab.size, dff = cfg.d_ff;
  Layout lay;
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t o = off;
    off += n;
    return o;
  };
  lay.tok_emb = take(static_cast<std::size_t>(V + 1) * d);  // row V embeds MASK
  lay.pos_emb = take(static_cast<std::size_t>(cfg.max_len) * d);
  lay.blocks.resize(cfg.n_layers);
  for (auto& b : lay.blocks) {
    b.ln1_g = take(d);
    b.ln1_b = take(d);
    b.wq = take(static_cast<std::size_t>(d) * d);
    b.bq = take(d);
    b.wk = take(static_cast<std::size_t>(d) * d);
    b.bk = take(d);
    b.wv = take(static_cast<std::size_t>(d) * d);
    b.bv = take(d);
    b.wo = take(static_cast<std::size_t>(d) * d);
    b.bo = take(d);
    b.ln2_g = take(d);
    b.ln2_b = take(d);
    b.w1 = take(static_cast<std::size_t>(d) * dff);
    b.b1 = take(dff);
    b.w2 = take(static_cast<std::size_t>(dff) * d);
    b.b2 = take(d);
  }
  lay.lnf_g = take(d);
  lay.lnf_b = take(d);
  lay.w_out = take(static_cast<std::size_t>(d) * V);
  lay.b_out = take(V);
  lay.total = off;
  return lay;
}

TinyNeuralDenoiser::TinyNeuralDenoiser(Vocab vocab, TransformerConfig cfg, std::uint64_t init_seed)
    : vocab_(vocab), cfg_(cfg), layout_(make_layout(vocab, cfg)) {
  if (cfg_.d_model % cfg_.n_heads != 0)
    throw std::invalid_argument("TinyNeuralDenoiser: d_model must divide by n_heads");
  theta_.assign(layout_.total, 0.0);

  Stream rng(init_seed, 0x696e6974ULL);
  auto gauss = [&rng]() {
    // Box-Muller; both draws from the stream keep init deterministic.
    const double u1 = std::max(rng.next_u01(), 1e-12);
    const double u2 = rng.next_u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  };
  auto fill_gauss = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) theta_[off + i] = 0.02 * gauss();
  };
  auto fill_ones = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) theta_[off + i] = 1.0;
  };

  const int d = cfg_.d_model, V = vocab_.size, dff = cfg_.d_ff;
  fill_gauss(layout_.tok_emb, static_cast<std::size_t>(V + 1) * d);
  fill_gauss(layout_.pos_emb, static_cast<std::size_t>(cfg_.max_len) * d);
  for (const auto& b : layout_.blocks) {
    fill_ones(b.ln1_g, d);
    fill_ones(b.ln2_g, d);
    fill_gauss(b.wq, static_cast<std::size_t>(d) * d);
    fill_gauss(b.wk, static_cast<std::size_t>(d) * d);
    fill_gauss(b.wv, static_cast<std::size_t>(d) * d);
    fill_gauss(b.wo, static_cast<std::size_t>(d) * d);
    fill_gauss(b.w1, static_cast<std::size_t>(d) * dff);
    fill_gauss(b.w2, static_cast<std::size_t>(dff) * d);
  }
  fill_ones(layout_.lnf_g, d);
  fill_gauss(layout_.w_out, static_cast<std::size_t>(d) * V);
}

std::vector<double>& TinyNeuralDenoiser::mutable_params() {
  if (frozen_) throw std::logic_error("TinyNeuralDenoiser: parameters are frozen");
  return theta_;
}

void TinyNeuralDenoiser::forward(const std::vector<int>& tokens, ForwardCache& c) const {
  const int L = static_cast<int>(tokens.size());
  if (L > cfg_.max_len) throw std::invalid_argument("forward: sequence longer than max_len");
  const int d = cfg_.d_model, V = vocab_.size, dff = cfg_.d_ff;
  const int nh = cfg_.n_heads, dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* th = theta_.data();

  c.tokens = tokens;
  c.L = L;
  const std::size_t Ld = static_cast<std::size_t>(L) * d;
  c.h0.assign(Ld, 0.0);
  for (int i = 0; i < L; ++i) {
    int tok = tokens[i];
    if (tok == kMask) tok = V;
    if (tok < 0 || tok > V) throw std::invalid_argument("forward: token id out of range");
    const double* te = th + layout_.tok_emb + static_cast<std::size_t>(tok) * d;
    const double* pe = th + layout_.pos_emb + static_cast<std::size_t>(i) * d;
    double* hi = c.h0.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) hi[j] = te[j] + pe[j];
  }

  const int nl = cfg_.n_layers;
  auto sized = [&](std::vector<std::vector<double>>& v, std::size_t n) {
    v.assign(nl, std::vector<double>(n, 0.0));
  };
  sized(c.ln1_xhat, Ld);
  c.ln1_inv.assign(nl, std::vector<double>(L, 0.0));
  sized(c.q, Ld);
  sized(c.k, Ld);
  sized(c.v, Ld);
  c.att.assign(nl, std::vector<double>(static_cast<std::size_t>(nh) * L * L, 0.0));
  sized(c.ctx, Ld);
  sized(c.h_attn_in, Ld);
  sized(c.h_mid, Ld);
  sized(c.ln2_xhat, Ld);
  c.ln2_inv.assign(nl, std::vector<double>(L, 0.0));
  sized(c.f1, static_cast<std::size_t>(L) * dff);
  sized(c.g, static_cast<std::size_t>(L) * dff);

  std::vector<double> h = c.h0;
  std::vector<double> a(Ld), o(Ld), f2(Ld);
  for (int l = 0; l < nl; ++l) {
    const auto& B = layout_.blocks[l];
    c.h_attn_in[l] = h;
    layernorm(h.data(), th + B.ln1_g, th + B.ln1_b, a.data(), c.ln1_xhat[l].data(),
              c.ln1_inv[l].data(), L, d);
    matmul(a.data(), th + B.wq, th + B.bq, c.q[l].data(), L, d, d);
    matmul(a.data(), th + B.wk, th + B.bk, c.k[l].data(), L, d, d);
    matmul(a.data(), th + B.wv, th + B.bv, c.v[l].data(), L, d, d);

    for (int hidx = 0; hidx < nh; ++hidx) {
      const int hoff = hidx * dh;
      double* att = c.att[l].data() + static_cast<std::size_t>(hidx) * L * L;
      for (int i = 0; i < L; ++i) {
        const double* qi = c.q[l].data() + static_cast<std::size_t>(i) * d + hoff;
        double* arow = att + static_cast<std::size_t>(i) * L;
        double mx = -1e300;
        for (int j = 0; j < L; ++j) {
          const double* kj = c.k[l].data() + static_cast<std::size_t>(j) * d + hoff;
          double s = 0.0;
          for (int u = 0; u < dh; ++u) s += qi[u] * kj[u];
          arow[j] = s * scale;
          mx = std::max(mx, arow[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < L; ++j) {
          arow[j] = std::exp(arow[j] - mx);
          sum += arow[j];
        }
        for (int j = 0; j < L; ++j) arow[j] /= sum;
        double* ci = c.ctx[l].data() + static_cast<std::size_t>(i) * d + hoff;
        for (int u = 0; u < dh; ++u) ci[u] = 0.0;
        for (int j = 0; j < L; ++j) {
          const double w = arow[j];
          const double* vj = c.v[l].data() + static_cast<std::size_t>(j) * d + hoff;
          for (int u = 0; u < dh; ++u) ci[u] += w * vj[u];
        }
      }
    }
    matmul(c.ctx[l].data(), th + B.wo, th + B.bo, o.data(), L, d, d);
    for (std::size_t i = 0; i < Ld; ++i) h[i] += o[i];
    c.h_mid[l] = h;

    layernorm(h.data(), th + B.ln2_g, th + B.ln2_b, a.data(), c.ln2_xhat[l].data(),
              c.ln2_inv[l].data(), L, d);
    matmul(a.data(), th + B.w1, th + B.b1, c.f1[l].data(), L, d, dff);
    for (std::size_t i = 0; i < static_cast<std::size_t>(L) * dff; ++i)
      c.g[l][i] = gelu(c.f1[l][i]);
    matmul(c.g[l].data(), th + B.w2, th + B.b2, f2.data(), L, dff, d);
    for (std::size_t i = 0; i < Ld; ++i) h[i] += f2[i];
  }

  c.h_final = h;
  c.lnf_xhat.assign(Ld, 0.0);
  c.lnf_inv.assign(L, 0.0);
  c.feat.assign(Ld, 0.0);
  layernorm(h.data(), th + layout_.lnf_g, th + layout_.lnf_b, c.feat.data(), c.lnf_xhat.data(),
            c.lnf_inv.data(), L, d);
  c.logits.assign(static_cast<std::size_t>(L) * V, 0.0);
  matmul(c.feat.data(), th + layout_.w_out, th + layout_.b_out, c.logits.data(), L, d, V);
}

void TinyNeuralDenoiser::backward(const ForwardCache& c, const std::vector<double>& dlogits,
                                  const std::vector<double>& dfeat, std::vector<double>& grad) const {
  const int L = c.L;
  const int d = cfg_.d_model, V = vocab_.size, dff = cfg_.d_ff;
  const int nh = cfg_.n_heads, dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* th = theta_.data();
  if (grad.size() != theta_.size()) throw std::invalid_argument("backward: grad size mismatch");
  const std::size_t Ld = static_cast<std::size_t>(L) * d;

  std::vector<double> dfeat_total(Ld, 0.0);
  if (!dfeat.empty()) {
    if (dfeat.size() != Ld) throw std::invalid_argument("backward: dfeat size mismatch");
    dfeat_total = dfeat;
  }
  if (!dlogits.empty()) {
    if (dlogits.size() != static_cast<std::size_t>(L) * V)
      throw std::invalid_argument("backward: dlogits size mismatch");
    matmul_backward(c.feat.data(), th + layout_.w_out, dlogits.data(), grad.data() + layout_.w_out,
                    grad.data() + layout_.b_out, dfeat_total.data(), L, d, V);
  }

  std::vector<double> dres(Ld, 0.0);
  layernorm_backward(c.lnf_xhat.data(), c.lnf_inv.data(), th + layout_.lnf_g, dfeat_total.data(),
                     grad.data() + layout_.lnf_g, grad.data() + layout_.lnf_b, dres.data(), L, d);

  std::vector<double> da(Ld), dctx(Ld), dq(Ld), dk(Ld), dv(Ld), dmid(Ld);
  std::vector<double> dg(static_cast<std::size_t>(L) * dff), df1(static_cast<std::size_t>(L) * dff);
  std::vector<double> b_ln(Ld);

  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const auto& B = layout_.blocks[l];

    // Feed-forward sub-block: h_out = h_mid + W2 gelu(W1 LN2(h_mid) + b1) + b2.
    layernorm(c.h_mid[l].data(), th + B.ln2_g, th + B.ln2_b, b_ln.data(),
              const_cast<double*>(c.ln2_xhat[l].data()), const_cast<double*>(c.ln2_inv[l].data()),
              L, d);
    std::fill(dg.begin(), dg.end(), 0.0);
    matmul_backward(c.g[l].data(), th + B.w2, dres.data(), grad.data() + B.w2, grad.data() + B.b2,
                    dg.data(), L, dff, d);
    for (std::size_t i = 0; i < dg.size(); ++i) df1[i] = dg[i] * gelu_grad(c.f1[l][i]);
    std::fill(da.begin(), da.end(), 0.0);
    matmul_backward(b_ln.data(), th + B.w1, df1.data(), grad.data() + B.w1, grad.data() + B.b1,
                    da.data(), L, d, dff);
    dmid = dres;  // residual path
    layernorm_backward(c.ln2_xhat[l].data(), c.ln2_inv[l].data(), th + B.ln2_g, da.data(),
                       grad.data() + B.ln2_g, grad.data() + B.ln2_b, dmid.data(), L, d);

    // Attention sub-block: h_mid = h_in + Wo ctx + bo.
    std::fill(dctx.begin(), dctx.end(), 0.0);
    matmul_backward(c.ctx[l].data(), th + B.wo, dmid.data(), grad.data() + B.wo,
                    grad.data() + B.bo, dctx.data(), L, d, d);

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    std::vector<double> datt(static_cast<std::size_t>(L) * L);
    for (int hidx = 0; hidx < nh; ++hidx) {
      const int hoff = hidx * dh;
      const double* att = c.att[l].data() + static_cast<std::size_t>(hidx) * L * L;
      for (int i = 0; i < L; ++i) {
        const double* dci = dctx.data() + static_cast<std::size_t>(i) * d + hoff;
        const double* arow = att + static_cast<std::size_t>(i) * L;
        double* drow = datt.data() + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < L; ++j) {
          const double* vj = c.v[l].data() + static_cast<std::size_t>(j) * d + hoff;
          double acc = 0.0;
          for (int u = 0; u < dh; ++u) acc += dci[u] * vj[u];
          drow[j] = acc;
          double* dvj = dv.data() + static_cast<std::size_t>(j) * d + hoff;
          for (int u = 0; u < dh; ++u) dvj[u] += arow[j] * dci[u];
        }
        // softmax jacobian
        double dot = 0.0;
        for (int j = 0; j < L; ++j) dot += arow[j] * drow[j];
        for (int j = 0; j < L; ++j) {
          const double ds = arow[j] * (drow[j] - dot) * scale;
          const double* kj = c.k[l].data() + static_cast<std::size_t>(j) * d + hoff;
          const double* qi = c.q[l].data() + static_cast<std::size_t>(i) * d + hoff;
          double* dqi = dq.data() + static_cast<std::size_t>(i) * d + hoff;
          double* dkj = dk.data() + static_cast<std::size_t>(j) * d + hoff;
          for (int u = 0; u < dh; ++u) {
            dqi[u] += ds * kj[u];
            dkj[u] += ds * qi[u];
          }
        }
      }
    }

    // a = LN1(h_in); recompute a for weight gradients.
    layernorm(c.h_attn_in[l].data(), th + B.ln1_g, th + B.ln1_b, b_ln.data(),
              const_cast<double*>(c.ln1_xhat[l].data()), const_cast<double*>(c.ln1_inv[l].data()),
              L, d);
    std::fill(da.begin(), da.end(), 0.0);
    matmul_backward(b_ln.data(), th + B.wq, dq.data(), grad.data() + B.wq, grad.data() + B.bq,
                    da.data(), L, d, d);
    matmul_backward(b_ln.data(), th + B.wk, dk.data(), grad.data() + B.wk, grad.data() + B.bk,
                    da.data(), L, d, d);
    matmul_backward(b_ln.data(), th + B.wv, dv.data(), grad.data() + B.wv, grad.data() + B.bv,
                    da.data(), L, d, d);

    dres = dmid;  // residual path into the layer input
    layernorm_backward(c.ln1_xhat[l].data(), c.ln1_inv[l].data(), th + B.ln1_g, da.data(),
                       grad.data() + B.ln1_g, grad.data() + B.ln1_b, dres.data(), L, d);
  }

  for (int i = 0; i < L; ++i) {
    int tok = c.tokens[i];
    if (tok == kMask) tok = V;
    double* dte = grad.data() + layout_.tok_emb + static_cast<std::size_t>(tok) * d;
    double* dpe = grad.data() + layout_.pos_emb + static_cast<std::size_t>(i) * d;
    const double* dhi = dres.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      dte[j] += dhi[j];
      dpe[j] += dhi[j];
    }
  }
}

PredictOut TinyNeuralDenoiser::predict(const MaskedSeq& x) const {
  count_forward();
  ForwardCache c;
  forward(x.tokens, c);
  const int L = c.L, V = vocab_.size;
  PredictOut out;
  out.posterior = PosteriorGrid(L, V);
  for (int i = 0; i < L; ++i) {
    const double* lo = c.logits.data() + static_cast<std::size_t>(i) * V;
    auto row = out.posterior.row(i);
    double mx = lo[0];
    for (int v = 1; v < V; ++v) mx = std::max(mx, lo[v]);
    double sum = 0.0;
    for (int v = 0; v < V; ++v) {
      row[v] = std::exp(lo[v] - mx);
      sum += row[v];
    }
    for (int v = 0; v < V; ++v) row[v] /= sum;
  }
  out.features = FeatureGrid(L, cfg_.d_model);
  out.features.h = c.feat;
  return out;
}

void TinyNeuralDenoiser::save(const std::string& path) const {
  nlohmann::json h;
  h["section"] = "denoiser";
  h["vocab"] = {{"size", vocab_.size}, {"eos_id", vocab_.eos_id}};
  h["arch"] = {{"max_len", cfg_.max_len}, {"d_model", cfg_.d_model}, {"n_heads", cfg_.n_heads},
               {"n_layers", cfg_.n_layers}, {"d_ff", cfg_.d_ff}};
  save_checkpoint(path, h, theta_);
}

TinyNeuralDenoiser TinyNeuralDenoiser::load(const std::string& path) {
  std::vector<double> params;
  const auto h = load_checkpoint(path, "denoiser", params);
  Vocab vocab(h.at("vocab").at("size").get<int>(), h.at("vocab").at("eos_id").get<int>());
  TransformerConfig cfg;
  const auto& a = h.at("arch");
  cfg.max_len = a.at("max_len").get<int>();
  cfg.d_model = a.at("d_model").get<int>();
  cfg.n_heads = a.at("n_heads").get<int>();
  cfg.n_layers = a.at("n_layers").get<int>();
  cfg.d_ff = a.at("d_ff").get<int>();
  TinyNeuralDenoiser model(vocab, cfg, 0);
  if (params.size() != model.theta_.size())
    throw std::runtime_error("checkpoint parameter count mismatch in " + path);
  model.theta_ = std::move(params);
  return model;
}

}  // namespace mdlab
