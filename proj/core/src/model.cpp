#include "taxogloss/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "taxogloss/corpus.hpp"
#include "taxogloss/error.hpp"
#include "taxogloss/rng.hpp"

namespace taxogloss {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void ModelConfig::validate() const {
  if (layers <= 0 || hidden_dim <= 0 || heads <= 0 || ff_dim <= 0 || max_len <= 0)
    throw ValidationError("model config: dimensions must be positive");
  if (vocab_size < 0 || num_labels < 0) throw ValidationError("model config: negative vocab or label count");
  if (hidden_dim % heads != 0)
    throw ValidationError("model config: hidden_dim " + std::to_string(hidden_dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("model config: dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},         {"hidden_dim", c.hidden_dim}, {"heads", c.heads},
                     {"ff_dim", c.ff_dim},         {"vocab_size", c.vocab_size}, {"num_labels", c.num_labels},
                     {"max_len", c.max_len},       {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("heads").get_to(c.heads);
  j.at("ff_dim").get_to(c.ff_dim);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("num_labels").get_to(c.num_labels);
  j.at("max_len").get_to(c.max_len);
  j.at("dropout").get_to(c.dropout);
}

namespace {

template <class Params, class SlotT>
std::vector<SlotT> collect_slots(Params& p) {
  std::vector<SlotT> out;
  out.push_back({"token_embedding", true, &p.token_embedding});
  out.push_back({"position_embedding", true, &p.position_embedding});
  out.push_back({"emb_ln_gamma", false, &p.emb_ln_gamma});
  out.push_back({"emb_ln_beta", false, &p.emb_ln_beta});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.push_back({pre + "wq", true, &L.wq});
    out.push_back({pre + "bq", false, &L.bq});
    out.push_back({pre + "wk", true, &L.wk});
    out.push_back({pre + "bk", false, &L.bk});
    out.push_back({pre + "wv", true, &L.wv});
    out.push_back({pre + "bv", false, &L.bv});
    out.push_back({pre + "wo", true, &L.wo});
    out.push_back({pre + "bo", false, &L.bo});
    out.push_back({pre + "ln1_gamma", false, &L.ln1_gamma});
    out.push_back({pre + "ln1_beta", false, &L.ln1_beta});
    out.push_back({pre + "w1", true, &L.w1});
    out.push_back({pre + "b1", false, &L.b1});
    out.push_back({pre + "w2", true, &L.w2});
    out.push_back({pre + "b2", false, &L.b2});
    out.push_back({pre + "ln2_gamma", false, &L.ln2_gamma});
    out.push_back({pre + "ln2_beta", false, &L.ln2_beta});
  }
  out.push_back({"mlm_w", true, &p.mlm_w});
  out.push_back({"mlm_b", false, &p.mlm_b});
  out.push_back({"cls_w", true, &p.cls_w});
  out.push_back({"cls_b", false, &p.cls_b});
  return out;
}

}  // namespace

std::vector<ModelParameters::Slot> ModelParameters::slots() { return collect_slots<ModelParameters, Slot>(*this); }

std::vector<ModelParameters::ConstSlot> ModelParameters::slots() const {
  return collect_slots<const ModelParameters, ConstSlot>(*this);
}

ModelParameters ModelParameters::zeros_like() const {
  ModelParameters z = *this;
  for (auto& s : z.slots()) s.value->setZero();
  return z;
}

std::size_t ModelParameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& s : slots()) n += static_cast<std::size_t>(s.value->size());
  return n;
}

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

MatrixXd normal_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols) {
  MatrixXd m(rows, cols);
  // Fill row-major so the draw order is independent of Eigen's storage order.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng, 0.0, kInitStd);
  return m;
}

}  // namespace

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  CounterRng rng(derive_seed(seed, Stream::ParamInit));
  const int h = config.hidden_dim;
  ModelParameters p;
  p.token_embedding = normal_matrix(rng, config.vocab_size, h);
  p.position_embedding = normal_matrix(rng, config.max_len, h);
  p.emb_ln_gamma = MatrixXd::Ones(1, h);
  p.emb_ln_beta = MatrixXd::Zero(1, h);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& L : p.layers) {
    L.wq = normal_matrix(rng, h, h);
    L.bq = MatrixXd::Zero(1, h);
    L.wk = normal_matrix(rng, h, h);
    L.bk = MatrixXd::Zero(1, h);
    L.wv = normal_matrix(rng, h, h);
    L.bv = MatrixXd::Zero(1, h);
    L.wo = normal_matrix(rng, h, h);
    L.bo = MatrixXd::Zero(1, h);
    L.ln1_gamma = MatrixXd::Ones(1, h);
    L.ln1_beta = MatrixXd::Zero(1, h);
    L.w1 = normal_matrix(rng, h, config.ff_dim);
    L.b1 = MatrixXd::Zero(1, config.ff_dim);
    L.w2 = normal_matrix(rng, config.ff_dim, h);
    L.b2 = MatrixXd::Zero(1, h);
    L.ln2_gamma = MatrixXd::Ones(1, h);
    L.ln2_beta = MatrixXd::Zero(1, h);
  }
  p.mlm_w = normal_matrix(rng, h, config.vocab_size);
  p.mlm_b = MatrixXd::Zero(1, config.vocab_size);
  init_classifier_head(p, config, seed);
  return p;
}

void init_classifier_head(ModelParameters& params, const ModelConfig& config, std::uint64_t seed) {
  CounterRng rng(derive_seed(seed, Stream::HeadInit));
  params.cls_w = normal_matrix(rng, config.hidden_dim, config.num_labels);
  params.cls_b = MatrixXd::Zero(1, config.num_labels);
}

namespace {

void layer_norm(const MatrixXd& x, const MatrixXd& gamma, const MatrixXd& beta, MatrixXd& y, MatrixXd& hat,
                MatrixXd& rstd) {
  VectorXd mean = x.rowwise().mean();
  hat = x.colwise() - mean;
  VectorXd var = hat.array().square().rowwise().mean();
  rstd = (var.array() + kLayerNormEps).rsqrt().matrix();
  hat.array().colwise() *= rstd.col(0).array();
  y = (hat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

// Returns dx; accumulates dgamma/dbeta.
MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& hat, const MatrixXd& rstd, const MatrixXd& gamma,
                             MatrixXd& dgamma, MatrixXd& dbeta) {
  dgamma += (dy.array() * hat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  MatrixXd dhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
  VectorXd mean_dhat = dhat.rowwise().mean();
  VectorXd mean_dhat_hat = (dhat.array() * hat.array()).rowwise().mean();
  MatrixXd dx = dhat.colwise() - mean_dhat;
  dx -= (hat.array().colwise() * mean_dhat_hat.array()).matrix();
  dx.array().colwise() *= rstd.col(0).array();
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::uint64_t site_key(std::uint64_t sequence_key, int layer, int site, int head) {
  return CounterRng::at(sequence_key, static_cast<std::uint64_t>((layer * 4 + site) * 1024 + head) + 1);
}

void add_bias(MatrixXd& m, const MatrixXd& bias) { m.rowwise() += bias.row(0); }

}  // namespace

ForwardResult forward(const ModelParameters& params, const ModelConfig& config,
                      std::span<const std::vector<int>> sequences, Head head, bool train,
                      std::span<const std::uint64_t> dropout_keys) {
  config.validate();
  if (params.layers.size() != static_cast<std::size_t>(config.layers))
    throw ValidationError("forward: parameters do not match config layer count");
  const MatrixXd& head_w = head == Head::Mlm ? params.mlm_w : params.cls_w;
  const MatrixXd& head_b = head == Head::Mlm ? params.mlm_b : params.cls_b;
  if (head_w.cols() == 0) throw ValidationError("forward: model has no parameters for the requested head");
  const bool dropout_active = train && config.dropout > 0.0;
  if (dropout_active && dropout_keys.size() != sequences.size())
    throw ValidationError("forward: one dropout key per sequence is required in training mode");

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.sequences.assign(sequences.begin(), sequences.end());
  cache.head = head;
  cache.dropout_active = dropout_active;
  cache.dropout = config.dropout;
  cache.offsets.push_back(0);
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ValidationError("forward: empty sequence");
    if (seq.size() > static_cast<std::size_t>(config.max_len))
      throw ValidationError("forward: sequence longer than max_len");
    for (int id : seq)
      if (id < 0 || id >= config.vocab_size)
        throw ValidationError("forward: token id " + std::to_string(id) + " out of range");
    cache.offsets.push_back(cache.offsets.back() + seq.size());
  }
  const auto total = static_cast<Eigen::Index>(cache.offsets.back());
  const int h = config.hidden_dim;
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double keep_scale = dropout_active ? 1.0 / (1.0 - config.dropout) : 1.0;

  MatrixXd x(total, h);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (std::size_t t = 0; t < sequences[s].size(); ++t) {
      auto row = static_cast<Eigen::Index>(cache.offsets[s] + t);
      x.row(row) = params.token_embedding.row(sequences[s][t]) + params.position_embedding.row(static_cast<Eigen::Index>(t));
    }
  }
  {
    MatrixXd y;
    layer_norm(x, params.emb_ln_gamma, params.emb_ln_beta, y, cache.emb_hat, cache.emb_rstd);
    x = std::move(y);
  }

  cache.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    auto& C = cache.layers[l];
    C.input = x;
    C.q = x * L.wq;
    add_bias(C.q, L.bq);
    C.k = x * L.wk;
    add_bias(C.k, L.bk);
    C.v = x * L.wv;
    add_bias(C.v, L.bv);
    C.context = MatrixXd::Zero(total, h);
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      const auto& seq = sequences[s];
      const auto off = static_cast<Eigen::Index>(cache.offsets[s]);
      const auto T = static_cast<Eigen::Index>(seq.size());
      for (int hd = 0; hd < config.heads; ++hd) {
        const Eigen::Index col = hd * dh;
        MatrixXd scores = (C.q.block(off, col, T, dh) * C.k.block(off, col, T, dh).transpose()) * scale;
        MatrixXd attn(T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
          double m = -std::numeric_limits<double>::infinity();
          for (Eigen::Index j = 0; j < T; ++j)
            if (seq[static_cast<std::size_t>(j)] != Vocabulary::kPad) m = std::max(m, scores(i, j));
          if (!std::isfinite(m)) {
            attn.row(i).setConstant(1.0 / static_cast<double>(T));  // every key is padding
            continue;
          }
          double sum = 0.0;
          for (Eigen::Index j = 0; j < T; ++j) {
            double e = seq[static_cast<std::size_t>(j)] == Vocabulary::kPad ? 0.0 : std::exp(scores(i, j) - m);
            attn(i, j) = e;
            sum += e;
          }
          attn.row(i) /= sum;
        }
        if (dropout_active) {
          const auto key = site_key(dropout_keys[s], static_cast<int>(l), 0, hd);
          MatrixXd keep(T, T);
          for (Eigen::Index i = 0; i < T; ++i)
            for (Eigen::Index j = 0; j < T; ++j)
              keep(i, j) = CounterRng::uniform_at(key, static_cast<std::uint64_t>(i * T + j)) < config.dropout
                               ? 0.0
                               : keep_scale;
          C.context.block(off, col, T, dh) = (attn.array() * keep.array()).matrix() * C.v.block(off, col, T, dh);
          C.attention_keep.push_back(std::move(keep));
        } else {
          C.context.block(off, col, T, dh) = attn * C.v.block(off, col, T, dh);
        }
        C.attention.push_back(std::move(attn));
      }
    }
    MatrixXd r1 = C.context * L.wo;
    add_bias(r1, L.bo);
    r1 += x;
    layer_norm(r1, L.ln1_gamma, L.ln1_beta, C.h1, C.ln1_hat, C.ln1_rstd);

    C.ff_pre = C.h1 * L.w1;
    add_bias(C.ff_pre, L.b1);
    C.ff_act = C.ff_pre.unaryExpr([](double v) { return gelu(v); });
    MatrixXd ff = C.ff_act * L.w2;
    add_bias(ff, L.b2);
    if (dropout_active) {
      C.ff_keep.resize(total, h);
      for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto key = site_key(dropout_keys[s], static_cast<int>(l), 1, 0);
        for (std::size_t t = 0; t < sequences[s].size(); ++t)
          for (int c = 0; c < h; ++c)
            C.ff_keep(static_cast<Eigen::Index>(cache.offsets[s] + t), c) =
                CounterRng::uniform_at(key, t * static_cast<std::size_t>(h) + static_cast<std::size_t>(c)) <
                        config.dropout
                    ? 0.0
                    : keep_scale;
      }
      ff.array() *= C.ff_keep.array();
    }
    MatrixXd r2 = C.h1 + ff;
    layer_norm(r2, L.ln2_gamma, L.ln2_beta, x, C.ln2_hat, C.ln2_rstd);
  }
  cache.final_hidden = x;
  result.logits = x * head_w;
  add_bias(result.logits, head_b);
  result.offsets = cache.offsets;
  return result;
}

ForwardResult forward(const ModelParameters& params, const ModelConfig& config, const std::vector<int>& tokens,
                      Head head, bool train, std::uint64_t seed) {
  std::vector<std::vector<int>> batch{tokens};
  std::vector<std::uint64_t> keys{derive_seed(seed, Stream::Dropout)};
  return forward(params, config, batch, head, train, keys);
}

ModelParameters backward(const ModelParameters& params, const ModelConfig& config, const ForwardCache& cache,
                         const MatrixXd& upstream) {
  if (cache.layers.size() != params.layers.size() || cache.offsets.empty())
    throw ValidationError("backward: cache does not match parameters");
  const auto total = static_cast<Eigen::Index>(cache.offsets.back());
  const MatrixXd& head_w = cache.head == Head::Mlm ? params.mlm_w : params.cls_w;
  if (upstream.rows() != total || upstream.cols() != head_w.cols())
    throw ValidationError("backward: upstream gradient shape does not match the cached forward pass");

  ModelParameters g = params.zeros_like();
  MatrixXd& g_head_w = cache.head == Head::Mlm ? g.mlm_w : g.cls_w;
  MatrixXd& g_head_b = cache.head == Head::Mlm ? g.mlm_b : g.cls_b;
  g_head_w.noalias() = cache.final_hidden.transpose() * upstream;
  g_head_b = upstream.colwise().sum();
  MatrixXd dx = upstream * head_w.transpose();

  const int h = config.hidden_dim;
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& L = params.layers[li];
    const auto& C = cache.layers[li];
    auto& G = g.layers[li];

    MatrixXd dr2 = layer_norm_backward(dx, C.ln2_hat, C.ln2_rstd, L.ln2_gamma, G.ln2_gamma, G.ln2_beta);
    MatrixXd dh1 = dr2;
    MatrixXd dff = dr2;
    if (cache.dropout_active) dff.array() *= C.ff_keep.array();
    G.w2.noalias() = C.ff_act.transpose() * dff;
    G.b2 = dff.colwise().sum();
    MatrixXd dpre = dff * L.w2.transpose();
    dpre.array() *= C.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    G.w1.noalias() = C.h1.transpose() * dpre;
    G.b1 = dpre.colwise().sum();
    dh1.noalias() += dpre * L.w1.transpose();

    MatrixXd dr1 = layer_norm_backward(dh1, C.ln1_hat, C.ln1_rstd, L.ln1_gamma, G.ln1_gamma, G.ln1_beta);
    MatrixXd dinput = dr1;
    G.wo.noalias() = C.context.transpose() * dr1;
    G.bo = dr1.colwise().sum();
    MatrixXd dcontext = dr1 * L.wo.transpose();

    MatrixXd dq = MatrixXd::Zero(total, h), dk = MatrixXd::Zero(total, h), dv = MatrixXd::Zero(total, h);
    std::size_t slot = 0;
    for (std::size_t s = 0; s < cache.sequences.size(); ++s) {
      const auto off = static_cast<Eigen::Index>(cache.offsets[s]);
      const auto T = static_cast<Eigen::Index>(cache.sequences[s].size());
      for (int hd = 0; hd < config.heads; ++hd, ++slot) {
        const Eigen::Index col = hd * dh;
        const MatrixXd& attn = C.attention[slot];
        MatrixXd dropped = cache.dropout_active ? MatrixXd(attn.array() * C.attention_keep[slot].array()) : attn;
        auto dctx = dcontext.block(off, col, T, dh);
        dv.block(off, col, T, dh).noalias() = dropped.transpose() * dctx;
        MatrixXd dattn = dctx * C.v.block(off, col, T, dh).transpose();
        if (cache.dropout_active) dattn.array() *= C.attention_keep[slot].array();
        VectorXd row_dot = (dattn.array() * attn.array()).rowwise().sum();
        MatrixXd dscores = (attn.array() * (dattn.colwise() - row_dot).array()).matrix() * scale;
        dq.block(off, col, T, dh).noalias() = dscores * C.k.block(off, col, T, dh);
        dk.block(off, col, T, dh).noalias() = dscores.transpose() * C.q.block(off, col, T, dh);
      }
    }
    G.wq.noalias() = C.input.transpose() * dq;
    G.bq = dq.colwise().sum();
    G.wk.noalias() = C.input.transpose() * dk;
    G.bk = dk.colwise().sum();
    G.wv.noalias() = C.input.transpose() * dv;
    G.bv = dv.colwise().sum();
    dinput.noalias() += dq * L.wq.transpose();
    dinput.noalias() += dk * L.wk.transpose();
    dinput.noalias() += dv * L.wv.transpose();
    dx = std::move(dinput);
  }

  MatrixXd demb = layer_norm_backward(dx, cache.emb_hat, cache.emb_rstd, params.emb_ln_gamma, g.emb_ln_gamma,
                                      g.emb_ln_beta);
  for (std::size_t s = 0; s < cache.sequences.size(); ++s) {
    for (std::size_t t = 0; t < cache.sequences[s].size(); ++t) {
      auto row = static_cast<Eigen::Index>(cache.offsets[s] + t);
      g.token_embedding.row(cache.sequences[s][t]) += demb.row(row);
      g.position_embedding.row(static_cast<Eigen::Index>(t)) += demb.row(row);
    }
  }
  return g;
}

}  // namespace taxogloss
