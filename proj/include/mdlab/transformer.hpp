#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdlab/denoiser.hpp"

// Tiny trainable denoiser: token + position embeddings, pre-LN bidirectional
// self-attention blocks, GELU feed-forward, output projection. Doubles
// throughout so gradients can be checked against finite differences. The
// activation after the final layer norm (input of the output projection) is
// the FeatureGrid exposed to correction heads.

namespace mdlab {

struct TransformerConfig {
  int max_len = 0;
  int d_model = 32;
  int n_heads = 2;
  int n_layers = 2;
  int d_ff = 128;
};

// Everything the backward pass needs from one forward evaluation.
struct ForwardCache {
  std::vector<int> tokens;
  int L = 0;
  std::vector<double> h0;                          // L x d
  std::vector<std::vector<double>> ln1_xhat, ln1_inv;  // per layer: L x d / L
  std::vector<std::vector<double>> q, k, v, att, ctx;  // per layer
  std::vector<std::vector<double>> h_attn_in;      // residual stream entering the layer
  std::vector<std::vector<double>> h_mid;          // after attention residual
  std::vector<std::vector<double>> ln2_xhat, ln2_inv;
  std::vector<std::vector<double>> f1, g;          // pre/post GELU, L x d_ff
  std::vector<double> h_final;                     // residual stream before final LN
  std::vector<double> lnf_xhat, lnf_inv;
  std::vector<double> feat;                        // L x d, the FeatureGrid
  std::vector<double> logits;                      // L x V
};

class TinyNeuralDenoiser : public Denoiser {
 public:
  TinyNeuralDenoiser(Vocab vocab, TransformerConfig cfg, std::uint64_t init_seed);

  PredictOut predict(const MaskedSeq& x) const override;
  int feature_dim() const override { return cfg_.d_model; }
  const Vocab& vocab() const override { return vocab_; }
  const TransformerConfig& config() const { return cfg_; }

  void forward(const std::vector<int>& tokens, ForwardCache& cache) const;
  // Accumulates parameter gradients into grad (size param_count). dfeat may
  // be empty when no loss flows through the feature outputs.
  void backward(const ForwardCache& cache, const std::vector<double>& dlogits,
                const std::vector<double>& dfeat, std::vector<double>& grad) const;

  std::size_t param_count() const { return theta_.size(); }
  const std::vector<double>& params() const { return theta_; }
  std::vector<double>& mutable_params();

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  void save(const std::string& path) const;
  static TinyNeuralDenoiser load(const std::string& path);

 private:
  // Parameter block offsets into theta_.
  struct Layout {
    std::size_t tok_emb, pos_emb;
    struct Block {
      std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
      std::size_t ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    std::size_t lnf_g, lnf_b, w_out, b_out;
    std::size_t total;
  };
  static Layout make_layout(const Vocab& vocab, const TransformerConfig& cfg);

  Vocab vocab_;
  TransformerConfig cfg_;
  Layout layout_;
  std::vector<double> theta_;
  bool frozen_ = false;
};

}  // namespace mdlab
