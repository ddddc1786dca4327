// SPDX-License-Identifier: Apache-2.0
#include "omim/model.hpp"

#include <cmath>

#include "omim/error.hpp"
#include "omim/random.hpp"

namespace omim {

void ModelConfig::validate() const {
  if (patch_size <= 0 || height <= 0 || width <= 0 || height % patch_size || width % patch_size)
    throw ConfigError("model: image size must be a positive multiple of the patch size");
  if (enc_depth < 1 || dec_depth < 1) throw ConfigError("model: depths must be at least 1");
  if (heads < 1 || enc_dim % heads || dec_dim % heads) throw ConfigError("model: dims must be divisible by heads");
  if (enc_dim % 4 || dec_dim % 4) throw ConfigError("model: dims must be multiples of 4 for 2-D positions");
  if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be positive");
}

Mat<double> sincos_positions(int grid_h, int grid_w, int dim) {
  const int quarter = dim / 4;
  Mat<double> pos(grid_h * grid_w, dim);
  for (int i = 0; i < grid_h * grid_w; ++i) {
    const double coords[2] = {static_cast<double>(i / grid_w), static_cast<double>(i % grid_w)};
    for (int a = 0; a < 2; ++a)
      for (int k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
        pos(i, a * 2 * quarter + k) = std::sin(coords[a] * omega);
        pos(i, a * 2 * quarter + quarter + k) = std::cos(coords[a] * omega);
      }
  }
  return pos;
}

namespace {

template <typename S>
BlockParams<S> make_block(int d, int hidden) {
  BlockParams<S> b;
  b.ln1_g = Mat<S>::Ones(1, d);
  b.ln1_b = Mat<S>::Zero(1, d);
  b.qkv_w = Mat<S>::Zero(d, 3 * d);
  b.qkv_b = Mat<S>::Zero(1, 3 * d);
  b.proj_w = Mat<S>::Zero(d, d);
  b.proj_b = Mat<S>::Zero(1, d);
  b.ln2_g = Mat<S>::Ones(1, d);
  b.ln2_b = Mat<S>::Zero(1, d);
  b.fc1_w = Mat<S>::Zero(d, hidden);
  b.fc1_b = Mat<S>::Zero(1, hidden);
  b.fc2_w = Mat<S>::Zero(hidden, d);
  b.fc2_b = Mat<S>::Zero(1, d);
  return b;
}

}  // namespace

template <typename S>
Params<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int E = cfg.enc_dim, D = cfg.dec_dim, P = cfg.patch_dim();
  Params<S> p;
  p.patch_w = Mat<S>::Zero(P, E);
  p.patch_b = Mat<S>::Zero(1, E);
  p.enc_pos = sincos_positions(cfg.grid_h(), cfg.grid_w(), E).cast<S>();
  for (int i = 0; i < cfg.enc_depth; ++i) p.enc_blocks.push_back(make_block<S>(E, E * cfg.mlp_ratio));
  p.enc_norm_g = Mat<S>::Ones(1, E);
  p.enc_norm_b = Mat<S>::Zero(1, E);
  p.dec_embed_w = Mat<S>::Zero(E, D);
  p.dec_embed_b = Mat<S>::Zero(1, D);
  p.mask_token = Mat<S>::Zero(1, D);
  p.dec_pos = sincos_positions(cfg.grid_h(), cfg.grid_w(), D).cast<S>();
  for (int i = 0; i < cfg.dec_depth; ++i) p.dec_blocks.push_back(make_block<S>(D, D * cfg.mlp_ratio));
  p.dec_norm_g = Mat<S>::Ones(1, D);
  p.dec_norm_b = Mat<S>::Zero(1, D);
  p.head_w = Mat<S>::Zero(D, P);
  p.head_b = Mat<S>::Zero(1, P);

  // Xavier-normal, truncated at 3 sigma by resampling.
  Rng rng(seed);
  p.for_each([&](const std::string&, Mat<S>& t, typename Params<S>::Role role) {
    if (role != Params<S>::Role::weight) return;
    const double sigma = std::sqrt(2.0 / static_cast<double>(t.rows() + t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      double z = rng.normal();
      while (std::abs(z) > 3.0) z = rng.normal();
      t.data()[i] = static_cast<S>(z * sigma);
    }
  });
  return p;
}

template <typename S>
Params<S> Params<S>::zeros_like() const {
  Params<S> z = *this;
  z.for_each([](const std::string&, Mat<S>& t, Role) { t.setZero(); });
  return z;
}

template <typename S>
std::int64_t Params<S>::num_trainable() const {
  std::int64_t n = 0;
  for_each([&](const std::string&, const Mat<S>& t, Role r) {
    if (r != Role::frozen) n += t.size();
  });
  return n;
}

template <typename S>
template <typename Other>
Params<Other> Params<S>::cast() const {
  Params<Other> out;
  std::vector<const Mat<S>*> src;
  for_each([&](const std::string&, const Mat<S>& t, Role) { src.push_back(&t); });
  out.enc_blocks.resize(enc_blocks.size());
  out.dec_blocks.resize(dec_blocks.size());
  std::size_t k = 0;
  out.for_each([&](const std::string&, Mat<Other>& t, typename Params<Other>::Role) { t = src[k++]->template cast<Other>(); });
  return out;
}

// --- layers

namespace {

constexpr double kLnEps = 1e-6;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

/// Accumulates dW, db and returns dX.
template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>& dw, Mat<S>& db) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  Mat<S> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, LayerNormCache<S>* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat<S> xhat(n, d);
  Vec<S> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().mean();
    rstd(i) = S(1) / std::sqrt(var + S(kLnEps));
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Mat<S> y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LayerNormCache<S>& c, const Mat<S>& g, Mat<S>& dg, Mat<S>& db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const Mat<S> dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
  const Vec<S> mean_d = dxhat.rowwise().mean();
  const Vec<S> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().mean().matrix();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i)
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - mean_d(i) - c.xhat.row(i).array() * mean_dx(i)).matrix();
  return dx;
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

template <typename S>
Mat<S> gelu(const Mat<S>& x) {
  return x.unaryExpr([](S v) {
    return S(0.5) * v * (S(1) + std::tanh(S(kGeluK) * (v + S(kGeluC) * v * v * v)));
  });
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  const Mat<S> dg = x.unaryExpr([](S v) {
    const S t = std::tanh(S(kGeluK) * (v + S(kGeluC) * v * v * v));
    return S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * S(kGeluK) * (S(1) + S(3 * kGeluC) * v * v);
  });
  return (dy.array() * dg.array()).matrix();
}

/// Multi-head self-attention within each [offsets[s], offsets[s+1]) segment.
template <typename S>
Mat<S> attention(const Mat<S>& qkv, int d, int heads, const std::vector<int>& offsets, std::vector<Mat<S>>* probs) {
  const int dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> out = Mat<S>::Zero(qkv.rows(), d);
  if (probs) probs->clear();
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const int o = offsets[s], n = offsets[s + 1] - offsets[s];
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv.block(o, h * dh, n, dh);
      const auto k = qkv.block(o, d + h * dh, n, dh);
      const auto v = qkv.block(o, 2 * d + h * dh, n, dh);
      Mat<S> a(n, n);
      a.noalias() = q * k.transpose();
      a *= scale;
      for (int i = 0; i < n; ++i) {
        const S mx = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - mx).exp().matrix();
        a.row(i) /= a.row(i).sum();
      }
      out.block(o, h * dh, n, dh).noalias() = a * v;
      if (probs) probs->push_back(std::move(a));
    }
  }
  return out;
}

template <typename S>
Mat<S> attention_backward(const Mat<S>& qkv, const Mat<S>& d_out, int d, int heads, const std::vector<int>& offsets,
                          const std::vector<Mat<S>>& probs) {
  const int dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> dqkv = Mat<S>::Zero(qkv.rows(), 3 * d);
  std::size_t idx = 0;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const int o = offsets[s], n = offsets[s + 1] - offsets[s];
    for (int h = 0; h < heads; ++h) {
      const Mat<S>& a = probs[idx++];
      const auto q = qkv.block(o, h * dh, n, dh);
      const auto k = qkv.block(o, d + h * dh, n, dh);
      const auto v = qkv.block(o, 2 * d + h * dh, n, dh);
      const auto dout = d_out.block(o, h * dh, n, dh);
      Mat<S> da(n, n);
      da.noalias() = dout * v.transpose();
      dqkv.block(o, 2 * d + h * dh, n, dh).noalias() = a.transpose() * dout;
      const Vec<S> row_dot = (da.array() * a.array()).rowwise().sum().matrix();
      Mat<S> ds = (a.array() * (da.colwise() - row_dot).array()).matrix();
      ds *= scale;
      dqkv.block(o, h * dh, n, dh).noalias() = ds * k;
      dqkv.block(o, d + h * dh, n, dh).noalias() = ds.transpose() * q;
    }
  }
  return dqkv;
}

template <typename S>
Mat<S> block_forward(const Mat<S>& x, const BlockParams<S>& p, int heads, const std::vector<int>& offsets,
                     BlockCache<S>* c) {
  const int d = static_cast<int>(x.cols());
  LayerNormCache<S> ln1, ln2;
  Mat<S> a_in = layer_norm(x, p.ln1_g, p.ln1_b, c ? &ln1 : nullptr);
  Mat<S> qkv = linear(a_in, p.qkv_w, p.qkv_b);
  std::vector<Mat<S>> probs;
  Mat<S> attn = attention(qkv, d, heads, offsets, c ? &probs : nullptr);
  Mat<S> x1 = x + linear(attn, p.proj_w, p.proj_b);
  Mat<S> m_in = layer_norm(x1, p.ln2_g, p.ln2_b, c ? &ln2 : nullptr);
  Mat<S> h_pre = linear(m_in, p.fc1_w, p.fc1_b);
  Mat<S> h_act = gelu(h_pre);
  Mat<S> x2 = x1 + linear(h_act, p.fc2_w, p.fc2_b);
  if (c) {
    c->x_in = x;
    c->a_in = std::move(a_in);
    c->qkv = std::move(qkv);
    c->attn = std::move(attn);
    c->x1 = std::move(x1);
    c->m_in = std::move(m_in);
    c->h_pre = std::move(h_pre);
    c->h_act = std::move(h_act);
    c->ln1 = std::move(ln1);
    c->ln2 = std::move(ln2);
    c->probs = std::move(probs);
  }
  return x2;
}

template <typename S>
Mat<S> block_backward(const Mat<S>& dx2, const BlockCache<S>& c, const BlockParams<S>& p, BlockParams<S>& g, int heads,
                      const std::vector<int>& offsets) {
  const int d = static_cast<int>(dx2.cols());
  Mat<S> dh_act = linear_backward(c.h_act, p.fc2_w, dx2, g.fc2_w, g.fc2_b);
  Mat<S> dh_pre = gelu_backward(c.h_pre, dh_act);
  Mat<S> dm_in = linear_backward(c.m_in, p.fc1_w, dh_pre, g.fc1_w, g.fc1_b);
  Mat<S> dx1 = dx2 + layer_norm_backward(dm_in, c.ln2, p.ln2_g, g.ln2_g, g.ln2_b);
  Mat<S> dattn = linear_backward(c.attn, p.proj_w, dx1, g.proj_w, g.proj_b);
  Mat<S> dqkv = attention_backward(c.qkv, dattn, d, heads, offsets, c.probs);
  Mat<S> da_in = linear_backward(c.a_in, p.qkv_w, dqkv, g.qkv_w, g.qkv_b);
  return dx1 + layer_norm_backward(da_in, c.ln1, p.ln1_g, g.ln1_g, g.ln1_b);
}

}  // namespace

template <typename S>
MaskedAutoencoder<S>::MaskedAutoencoder(ModelConfig cfg, Params<S> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  if (params_.patch_w.rows() != cfg_.patch_dim() || params_.patch_w.cols() != cfg_.enc_dim ||
      params_.enc_pos.rows() != cfg_.num_patches() || static_cast<int>(params_.enc_blocks.size()) != cfg_.enc_depth ||
      static_cast<int>(params_.dec_blocks.size()) != cfg_.dec_depth || params_.mask_token.cols() != cfg_.dec_dim)
    throw ConfigError("model: parameters do not match the configuration");
}

template <typename S>
Mat<S> MaskedAutoencoder<S>::forward(const std::vector<ModelInput>& batch, Tape<S>* tape) const {
  const int M = cfg_.num_patches(), P = cfg_.patch_dim(), B = static_cast<int>(batch.size());
  std::vector<int> enc_off{0}, dec_off{0};
  for (const auto& in : batch) {
    if (in.plan->count() != M || in.patches->rows() != M || in.patches->cols() != P)
      throw ConfigError("forward: plan or patches do not match the model grid");
    enc_off.push_back(enc_off.back() + static_cast<int>(in.plan->visible_idx.size()));
    dec_off.push_back(dec_off.back() + M);
  }

  // Only visible patches are read from the input.
  Mat<S> enc_in(enc_off.back(), P);
  Mat<S> x(enc_off.back(), cfg_.enc_dim);
  for (int b = 0; b < B; ++b) {
    const auto& vis = batch[static_cast<std::size_t>(b)].plan->visible_idx;
    for (std::size_t k = 0; k < vis.size(); ++k) {
      const int r = enc_off[static_cast<std::size_t>(b)] + static_cast<int>(k);
      enc_in.row(r) = batch[static_cast<std::size_t>(b)].patches->row(vis[k]).template cast<S>();
      x.row(r) = params_.enc_pos.row(vis[k]);
    }
  }
  x.noalias() += enc_in * params_.patch_w;
  x.rowwise() += params_.patch_b.row(0);

  if (tape) {
    tape->batch = B;
    tape->plans.clear();
    for (const auto& in : batch) tape->plans.push_back(in.plan);
    tape->enc_offsets = enc_off;
    tape->dec_offsets = dec_off;
    tape->enc.assign(params_.enc_blocks.size(), {});
    tape->dec.assign(params_.dec_blocks.size(), {});
  }
  for (std::size_t i = 0; i < params_.enc_blocks.size(); ++i)
    x = block_forward(x, params_.enc_blocks[i], cfg_.heads, enc_off, tape ? &tape->enc[i] : nullptr);
  Mat<S> en = layer_norm(x, params_.enc_norm_g, params_.enc_norm_b, tape ? &tape->enc_norm : nullptr);
  const Mat<S> latent = linear(en, params_.dec_embed_w, params_.dec_embed_b);

  // Decoder sees latents at visible positions and the mask token elsewhere.
  Mat<S> y(dec_off.back(), cfg_.dec_dim);
  for (int b = 0; b < B; ++b) {
    const MaskPlan& plan = *batch[static_cast<std::size_t>(b)].plan;
    for (int i = 0; i < M; ++i) y.row(b * M + i) = params_.mask_token.row(0);
    for (std::size_t k = 0; k < plan.visible_idx.size(); ++k)
      y.row(b * M + plan.visible_idx[k]) = latent.row(enc_off[static_cast<std::size_t>(b)] + static_cast<int>(k));
    y.middleRows(b * M, M) += params_.dec_pos;
  }
  for (std::size_t i = 0; i < params_.dec_blocks.size(); ++i)
    y = block_forward(y, params_.dec_blocks[i], cfg_.heads, dec_off, tape ? &tape->dec[i] : nullptr);
  Mat<S> dn = layer_norm(y, params_.dec_norm_g, params_.dec_norm_b, tape ? &tape->dec_norm : nullptr);
  Mat<S> out = linear(dn, params_.head_w, params_.head_b);
  if (tape) {
    tape->enc_in = std::move(enc_in);
    tape->enc_normed = std::move(en);
    tape->dec_normed = std::move(dn);
  }
  return out;
}

template <typename S>
void MaskedAutoencoder<S>::backward(const Tape<S>& tape, const Mat<S>& d_out, Params<S>& g) const {
  const int M = cfg_.num_patches(), B = tape.batch;
  if (d_out.rows() != static_cast<Eigen::Index>(B) * M || d_out.cols() != cfg_.patch_dim())
    throw ConfigError("backward: output gradient has the wrong shape");
  Mat<S> dy = linear_backward(tape.dec_normed, params_.head_w, d_out, g.head_w, g.head_b);
  dy = layer_norm_backward(dy, tape.dec_norm, params_.dec_norm_g, g.dec_norm_g, g.dec_norm_b);
  for (std::size_t i = params_.dec_blocks.size(); i-- > 0;)
    dy = block_backward(dy, tape.dec[i], params_.dec_blocks[i], g.dec_blocks[i], cfg_.heads, tape.dec_offsets);

  Mat<S> d_latent(tape.enc_offsets.back(), cfg_.dec_dim);
  for (int b = 0; b < B; ++b) {
    const MaskPlan& plan = *tape.plans[static_cast<std::size_t>(b)];
    for (int i : plan.masked_idx) g.mask_token.row(0) += dy.row(b * M + i);
    for (std::size_t k = 0; k < plan.visible_idx.size(); ++k)
      d_latent.row(tape.enc_offsets[static_cast<std::size_t>(b)] + static_cast<int>(k)) =
          dy.row(b * M + plan.visible_idx[k]);
  }
  Mat<S> dx = linear_backward(tape.enc_normed, params_.dec_embed_w, d_latent, g.dec_embed_w, g.dec_embed_b);
  dx = layer_norm_backward(dx, tape.enc_norm, params_.enc_norm_g, g.enc_norm_g, g.enc_norm_b);
  for (std::size_t i = params_.enc_blocks.size(); i-- > 0;)
    dx = block_backward(dx, tape.enc[i], params_.enc_blocks[i], g.enc_blocks[i], cfg_.heads, tape.enc_offsets);
  g.patch_w.noalias() += tape.enc_in.transpose() * dx;
  g.patch_b += dx.colwise().sum();
}

template <typename S>
Mat<S> gather_masked(const Mat<S>& out, int sample, const MaskPlan& plan) {
  const int M = plan.count();
  Mat<S> y(static_cast<Eigen::Index>(plan.masked_idx.size()), out.cols());
  for (std::size_t k = 0; k < plan.masked_idx.size(); ++k)
    y.row(static_cast<Eigen::Index>(k)) = out.row(sample * M + plan.masked_idx[k]);
  return y;
}

template struct Params<float>;
template struct Params<double>;
template Params<double> Params<float>::cast<double>() const;
template Params<float> Params<double>::cast<float>() const;
template Params<float> Params<float>::cast<float>() const;
template Params<double> Params<double>::cast<double>() const;
template Params<float> init_params<float>(const ModelConfig&, std::uint64_t);
template Params<double> init_params<double>(const ModelConfig&, std::uint64_t);
template class MaskedAutoencoder<float>;
template class MaskedAutoencoder<double>;
template Mat<float> gather_masked<float>(const Mat<float>&, int, const MaskPlan&);
template Mat<double> gather_masked<double>(const Mat<double>&, int, const MaskPlan&);

}  // namespace omim
