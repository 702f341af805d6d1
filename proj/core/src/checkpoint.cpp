#include "taxogloss/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "taxogloss/error.hpp"

namespace taxogloss {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "TAXOGLOSS-CKPT 1";
constexpr int kFormatVersion = 1;

void put_le(std::string& out, double value) {
  auto bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::Pretrain;
  if (s == "finetune") return Phase::Finetune;
  throw ParseError("checkpoint: unknown phase '" + s + "'");
}

// Parameter layout implied by a config, used to check shapes on load.
ModelParameters shaped_like(const ModelConfig& config, Phase phase) {
  // Finetuned models drop the MLM head.
  const int mlm_outputs = phase == Phase::Finetune ? 0 : config.vocab_size;
  ModelParameters p;
  const int h = config.hidden_dim;
  p.token_embedding.resize(config.vocab_size, h);
  p.position_embedding.resize(config.max_len, h);
  p.emb_ln_gamma.resize(1, h);
  p.emb_ln_beta.resize(1, h);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& L : p.layers) {
    for (auto* m : {&L.wq, &L.wk, &L.wv, &L.wo}) m->resize(h, h);
    for (auto* m : {&L.bq, &L.bk, &L.bv, &L.bo, &L.ln1_gamma, &L.ln1_beta, &L.b2, &L.ln2_gamma, &L.ln2_beta})
      m->resize(1, h);
    L.w1.resize(h, config.ff_dim);
    L.b1.resize(1, config.ff_dim);
    L.w2.resize(config.ff_dim, h);
  }
  p.mlm_w.resize(h, mlm_outputs);
  p.mlm_b.resize(1, mlm_outputs);
  p.cls_w.resize(h, config.num_labels);
  p.cls_b.resize(1, config.num_labels);
  return p;
}

}  // namespace

std::string_view to_string(Phase phase) noexcept { return phase == Phase::Pretrain ? "pretrain" : "finetune"; }

std::string serialize_checkpoint(const Checkpoint& ck) {
  json header;
  header["format_version"] = kFormatVersion;
  header["phase"] = std::string(to_string(ck.phase));
  header["config"] = ck.config;
  header["vocabulary"] = ck.vocabulary.morphemes();
  header["vocabulary_hash"] = ck.vocabulary.hash();
  header["taxonomy_hash"] = ck.taxonomy_hash;
  header["loss_kind"] = ck.loss_kind ? json(std::string(to_string(*ck.loss_kind))) : json(nullptr);
  header["seed"] = ck.seed;
  json arrays = json::array();
  for (const auto& slot : ck.params.slots())
    arrays.push_back({{"name", slot.name}, {"shape", {slot.value->rows(), slot.value->cols()}}});
  header["arrays"] = std::move(arrays);

  std::string out(kMagic);
  out.push_back('\n');
  out += header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 8 * ck.params.scalar_count());
  for (const auto& slot : ck.params.slots()) {
    const auto& m = *slot.value;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_le(out, m(r, c));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  auto nl1 = bytes.find('\n');
  if (nl1 == std::string_view::npos || bytes.substr(0, nl1) != kMagic)
    throw ParseError("checkpoint: missing or unsupported magic line");
  auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string_view::npos) throw ParseError("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: bad header: ") + e.what());
  }

  Checkpoint ck;
  try {
    if (header.at("format_version").get<int>() != kFormatVersion)
      throw ParseError("checkpoint: unsupported format version");
    ck.phase = parse_phase(header.at("phase").get<std::string>());
    ck.config = header.at("config").get<ModelConfig>();
    ck.vocabulary = Vocabulary::from_morphemes(header.at("vocabulary").get<std::vector<std::string>>());
    ck.taxonomy_hash = header.at("taxonomy_hash").get<std::string>();
    if (!header.at("loss_kind").is_null()) ck.loss_kind = parse_loss_kind(header.at("loss_kind").get<std::string>());
    ck.seed = header.at("seed").get<std::uint64_t>();
    if (header.at("vocabulary_hash").get<std::string>() != ck.vocabulary.hash())
      throw ValidationError("checkpoint: vocabulary hash mismatch");
    ck.config.validate();
    if (static_cast<std::size_t>(ck.config.vocab_size) != ck.vocabulary.size())
      throw ValidationError("checkpoint: config vocab_size disagrees with stored vocabulary");

    ck.params = shaped_like(ck.config, ck.phase);
    auto slots = ck.params.slots();
    const auto& arrays = header.at("arrays");
    if (arrays.size() != slots.size()) throw ValidationError("checkpoint: unexpected number of arrays");
    const char* data = bytes.data() + nl2 + 1;
    const char* end = bytes.data() + bytes.size();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& entry = arrays[i];
      auto& m = *slots[i].value;
      if (entry.at("name").get<std::string>() != slots[i].name)
        throw ValidationError("checkpoint: expected array '" + slots[i].name + "'");
      auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
        throw ValidationError("checkpoint: shape mismatch for '" + slots[i].name + "'");
      if (end - data < static_cast<std::ptrdiff_t>(8 * m.size())) throw ParseError("checkpoint: truncated data");
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c, data += 8) m(r, c) = get_le(data);
    }
    if (data != end) throw ParseError("checkpoint: trailing bytes after arrays");
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: bad header field: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << serialize_checkpoint(checkpoint);
  if (!out) throw Error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

void require_taxonomy(const Checkpoint& checkpoint, const Taxonomy& taxonomy) {
  if (checkpoint.phase != Phase::Finetune) throw ValidationError("checkpoint has no classifier (phase pretrain)");
  if (checkpoint.taxonomy_hash != taxonomy.hash())
    throw ValidationError("checkpoint was trained against a different taxonomy (hash mismatch)");
  if (static_cast<std::size_t>(checkpoint.config.num_labels) != taxonomy.leaf_count())
    throw ValidationError("checkpoint label count does not match taxonomy leaf count");
}

}  // namespace taxogloss
