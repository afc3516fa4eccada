#include "tracekit/model.hpp"

#include <cmath>
#include <string>

namespace tracekit {

const char* component_name(Component c) {
  switch (c) {
    case Component::Residual: return "Residual";
    case Component::MlpOut: return "MlpOut";
    case Component::AttnOut: return "AttnOut";
  }
  return "?";
}

Component component_from_name(std::string_view name) {
  if (name == "Residual" || name == "residual") return Component::Residual;
  if (name == "MlpOut" || name == "mlp") return Component::MlpOut;
  if (name == "AttnOut" || name == "attn") return Component::AttnOut;
  throw error("unknown component '" + std::string(name) + "'");
}

const MatrixRM& ActivationCache::residual_at(int layer) const {
  if (layer < -1 || layer >= n_layer) throw SiteOutOfRange("residual layer out of range");
  return residual[size_t(layer + 1)];
}

const MatrixRM& ActivationCache::component_at(int layer, Component c) const {
  if (c == Component::Residual) return residual_at(layer);
  if (layer < 0 || layer >= n_layer) throw SiteOutOfRange("layer out of range");
  return c == Component::MlpOut ? mlp_out[size_t(layer)] : attn_out[size_t(layer)];
}

namespace {

void layer_norm(const MatrixRM& x, const VectorF& gain, const VectorF& bias, float eps,
                MatrixRM& out) {
  out.resizeLike(x);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    float mean = x.row(r).mean();
    float var = (x.row(r).array() - mean).square().mean();
    float inv = 1.0f / std::sqrt(var + eps);
    out.row(r).array() = ((x.row(r).array() - mean) * inv) * gain.transpose().array() +
                         bias.transpose().array();
  }
}

// tanh approximation, matching published GPT-2 checkpoints
inline float gelu(float x) {
  const float k = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

void validate(const std::vector<int>& tokens, const ModelWeights& w,
              const InterventionSet* iv) {
  const ModelConfig& cfg = w.config;
  if (tokens.empty()) throw error("empty token sequence");
  if (int(tokens.size()) > cfg.n_ctx)
    throw ContextOverflow(std::to_string(tokens.size()) + " tokens exceed context " +
                          std::to_string(cfg.n_ctx));
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw UnknownId(t);
  if (!iv) return;
  const int seq = int(tokens.size());
  if (iv->embedding_noise) {
    const EmbeddingNoise& en = *iv->embedding_noise;
    if (en.span.start < 0 || en.span.end < en.span.start || en.span.end >= seq)
      throw SiteOutOfRange("noise span outside sequence");
    if (en.noise.rows() != en.span.length() || en.noise.cols() != cfg.d_model)
      throw SiteOutOfRange("noise shape does not match span");
  }
  for (const Restoration& r : iv->restorations) {
    if (!r.source) throw error("restoration without a source cache");
    int lo = r.component == Component::Residual ? -1 : 0;
    if (r.layer < lo || r.layer >= cfg.n_layer) throw SiteOutOfRange("restoration layer");
    if (r.position < 0 || r.position >= seq) throw SiteOutOfRange("restoration position");
    if (r.source->seq_len != seq) throw SiteOutOfRange("source cache sequence mismatch");
    for (const Restoration& other : iv->restorations) {
      if (&other == &r) break;
      if (other.layer == r.layer && other.position == r.position &&
          other.component == r.component)
        throw error("duplicate restoration site");
    }
  }
}

// overwrites rows selected by the restorations matching (layer, component)
void apply_restorations(const InterventionSet* iv, int layer, Component c, MatrixRM& x) {
  if (!iv) return;
  for (const Restoration& r : iv->restorations)
    if (r.layer == layer && r.component == c)
      x.row(r.position) = r.source->component_at(layer, c).row(r.position);
}

}  // namespace

ForwardResult forward(const std::vector<int>& tokens, const ModelWeights& w,
                      const InterventionSet* iv, bool capture) {
  validate(tokens, w, iv);
  const ModelConfig& cfg = w.config;
  const int seq = int(tokens.size());
  const int d = cfg.d_model;
  const int nh = cfg.n_head;
  const int hd = d / nh;
  const float eps = float(cfg.layer_norm_epsilon);

  ForwardResult res;
  if (capture) {
    res.cache.emplace();
    res.cache->n_layer = cfg.n_layer;
    res.cache->seq_len = seq;
  }

  MatrixRM x(seq, d);
  for (int t = 0; t < seq; ++t)
    x.row(t) = w.wte.row(tokens[size_t(t)]) + w.wpe.row(t);
  if (iv && iv->embedding_noise) {
    const EmbeddingNoise& en = *iv->embedding_noise;
    x.middleRows(en.span.start, en.span.length()) += en.noise;
  }
  apply_restorations(iv, -1, Component::Residual, x);
  if (capture) res.cache->residual.push_back(x);

  MatrixRM ln(seq, d), qkv(seq, 3 * d), attn_mix(seq, d), attn_out(seq, d),
      probs(seq, seq), mlp_hidden(seq, 4 * d), mlp_out(seq, d);
  for (int l = 0; l < cfg.n_layer; ++l) {
    const LayerWeights& lw = w.layers[size_t(l)];

    layer_norm(x, lw.ln1_g, lw.ln1_b, eps, ln);
    qkv = (ln * lw.qkv_w).rowwise() + lw.qkv_b.transpose();
    for (int h = 0; h < nh; ++h) {
      auto q = qkv.middleCols(h * hd, hd);
      auto k = qkv.middleCols(d + h * hd, hd);
      auto v = qkv.middleCols(2 * d + h * hd, hd);
      probs.noalias() = q * k.transpose();
      probs *= 1.0f / std::sqrt(float(hd));
      for (int i = 0; i < seq; ++i) {
        auto row = probs.row(i).head(i + 1);
        float mx = row.maxCoeff();
        row.array() = (row.array() - mx).exp();
        row /= row.sum();
        probs.row(i).tail(seq - i - 1).setZero();
      }
      attn_mix.middleCols(h * hd, hd).noalias() = probs * v;
    }
    attn_out = (attn_mix * lw.attn_out_w).rowwise() + lw.attn_out_b.transpose();
    apply_restorations(iv, l, Component::AttnOut, attn_out);
    if (capture) res.cache->attn_out.push_back(attn_out);
    x += attn_out;

    layer_norm(x, lw.ln2_g, lw.ln2_b, eps, ln);
    mlp_hidden = (ln * lw.mlp_up_w).rowwise() + lw.mlp_up_b.transpose();
    mlp_hidden = mlp_hidden.unaryExpr([](float v) { return gelu(v); });
    mlp_out.noalias() = mlp_hidden * lw.mlp_down_w;
    mlp_out.rowwise() += lw.mlp_down_b.transpose();
    apply_restorations(iv, l, Component::MlpOut, mlp_out);
    if (capture) res.cache->mlp_out.push_back(mlp_out);
    x += mlp_out;

    apply_restorations(iv, l, Component::Residual, x);
    if (capture) res.cache->residual.push_back(x);
  }

  VectorF final_row = x.row(seq - 1);
  MatrixRM one(1, d);
  one.row(0) = final_row;
  MatrixRM normed(1, d);
  layer_norm(one, w.lnf_g, w.lnf_b, eps, normed);
  res.final_logits = w.wte * normed.row(0).transpose();
  return res;
}

Eigen::VectorXd next_token_distribution(const std::vector<int>& tokens, const ModelWeights& w,
                                        const InterventionSet* iv) {
  VectorF logits = forward(tokens, w, iv, false).final_logits;
  Eigen::VectorXd z = logits.cast<double>();
  double mx = z.maxCoeff();
  z = (z.array() - mx).exp();
  z /= z.sum();
  return z;
}

double object_probability(const std::vector<int>& tokens, int object_first_token_id,
                          const ModelWeights& w, const InterventionSet* iv) {
  if (object_first_token_id < 0 || object_first_token_id >= w.config.vocab_size)
    throw UnknownId(object_first_token_id);
  return next_token_distribution(tokens, w, iv)(object_first_token_id);
}

}  // namespace tracekit
