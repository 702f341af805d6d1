#include "taxogloss/annotate.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "taxogloss/error.hpp"
#include "taxogloss/evaluation.hpp"
#include "taxogloss/losses.hpp"

namespace taxogloss {

using nlohmann::json;

json SuggestionSet::to_json() const {
  json morphs = json::array();
  for (const auto& m : morphemes) {
    json cands = json::array();
    for (const auto& c : m.candidates)
      cands.push_back({{"gloss", c.gloss},
                       {"probability", c.probability},
                       {"taxonomy_path", c.taxonomy_path},
                       {"shared_depth_to_top", c.shared_depth_to_top}});
    morphs.push_back({{"morpheme", m.morpheme}, {"candidates", std::move(cands)}});
  }
  return {{"sentence_id", sentence_id}, {"morphemes", std::move(morphs)}};
}

Suggester::Suggester(Checkpoint checkpoint, Taxonomy taxonomy)
    : checkpoint_(std::move(checkpoint)), taxonomy_(std::move(taxonomy)) {
  require_taxonomy(checkpoint_, taxonomy_);
}

SuggestionSet Suggester::suggest(const IgtSentence& sentence, int k) const {
  if (k < 1) throw ValidationError("suggest: k must be at least 1");
  auto encoded = encode_tokens(sentence, checkpoint_.vocabulary, static_cast<std::size_t>(checkpoint_.config.max_len));
  auto fwd = forward(checkpoint_.params, checkpoint_.config, encoded.token_ids, Head::Classify, false, 0);
  const auto morphemes = sentence.flat_morphemes();
  SuggestionSet out;
  out.sentence_id = sentence.id;
  std::vector<double> row(static_cast<std::size_t>(fwd.logits.cols()));
  const auto separator = taxonomy_.separator_index();
  const std::size_t glossable = taxonomy_.leaf_count() - (separator ? 1 : 0);
  for (std::size_t t = 0; t < encoded.size(); ++t) {
    if (!encoded.eval_mask[t]) continue;
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = fwd.logits(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
    // Morphemes are never glossed [SEP]: rank the remaining leaves, with
    // probabilities renormalized over them.
    auto probs = softmax(row);
    if (separator) {
      const double rest = 1.0 - probs[*separator];
      probs[*separator] = 0.0;
      for (double& p : probs) p /= rest;
    }
    auto ranked = top_k(probs, std::min(static_cast<std::size_t>(k), glossable));
    MorphemeSuggestions ms;
    ms.morpheme = morphemes[static_cast<std::size_t>(encoded.morpheme_index[t])];
    for (auto idx : ranked)
      ms.candidates.push_back({taxonomy_.leaf_name(idx), probs[idx], taxonomy_.path(idx),
                               taxonomy_.shared_depth(idx, ranked.front())});
    out.morphemes.push_back(std::move(ms));
  }
  return out;
}

json AnnotationRecord::to_json() const {
  return {{"sentence_id", sentence_id}, {"annotator", annotator}, {"glosses", glosses},
          {"sources", sources},         {"timestamp", timestamp}};
}

AnnotationRecord AnnotationRecord::from_json(const json& j) {
  if (!j.is_object()) throw AnnotationError("annotation must be a JSON object");
  AnnotationRecord r;
  try {
    r.sentence_id = j.at("sentence_id").get<std::string>();
    r.annotator = j.value("annotator", std::string{});
    r.glosses = j.at("glosses").get<std::vector<std::string>>();
    r.sources = j.value("sources", std::vector<std::string>{});
    r.timestamp = j.value("timestamp", std::string{});
  } catch (const json::exception& e) {
    throw AnnotationError(std::string("malformed annotation: ") + e.what());
  }
  return r;
}

AnnotationJournal::AnnotationJournal(std::string path) : path_(std::move(path)) {}

std::map<std::string, AnnotationRecord> AnnotationJournal::replay() const {
  std::map<std::string, AnnotationRecord> state;
  std::ifstream in(path_);
  if (!in) return state;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto record = AnnotationRecord::from_json(json::parse(line));
      state[record.sentence_id] = std::move(record);
    } catch (const std::exception& e) {
      throw ParseError("journal " + path_ + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return state;
}

void AnnotationJournal::append(const AnnotationRecord& record) {
  const std::string line = record.to_json().dump() + "\n";
  int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("journal: cannot open " + path_ + ": " + std::strerror(errno));
  std::size_t written = 0;
  while (written < line.size()) {
    auto n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error("journal: write failed: " + std::string(std::strerror(errno)));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw Error("journal: fsync failed: " + std::string(std::strerror(errno)));
  }
  ::close(fd);
}

json Progress::to_json() const {
  return {{"annotated", annotated},
          {"remaining", remaining},
          {"histogram", {{"ranks", rank_counts}, {"manual_override", manual_overrides}}}};
}

namespace {

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// 1-based rank of an "accepted-rank-r" source, 0 for a manual override.
int parse_source(const std::string& source) {
  if (source == kManualOverride) return 0;
  if (source.rfind(kAcceptedRankPrefix, 0) == 0) {
    auto digits = source.substr(kAcceptedRankPrefix.size());
    if (!digits.empty() && digits.size() < 6 && digits.find_first_not_of("0123456789") == std::string::npos) {
      int r = std::stoi(digits);
      if (r >= 1) return r;
    }
  }
  throw AnnotationError("invalid source flag '" + source + "'");
}

}  // namespace

AnnotationService::AnnotationService(std::vector<IgtSentence> corpus, std::shared_ptr<const Suggester> suggester,
                                     std::string journal_path, int default_k)
    : corpus_(std::move(corpus)),
      suggester_(std::move(suggester)),
      journal_(std::move(journal_path)),
      default_k_(default_k) {
  if (default_k_ < 1) throw ValidationError("annotation service: k must be at least 1");
  for (std::size_t i = 0; i < corpus_.size(); ++i)
    if (!position_.emplace(corpus_[i].id, i).second)
      throw ValidationError("annotation service: duplicate sentence id '" + corpus_[i].id + "'");
  latest_ = journal_.replay();
}

std::optional<NextItem> AnnotationService::next_sentence(const std::string& /*annotator*/, int k) const {
  if (!suggester_) throw Error("model not loaded");
  const IgtSentence* pending = nullptr;
  {
    std::shared_lock lock(mutex_);
    for (const auto& s : corpus_) {
      if (!latest_.count(s.id)) {
        pending = &s;
        break;
      }
    }
  }
  if (!pending) return std::nullopt;
  return NextItem{*pending, suggester_->suggest(*pending, k)};
}

void AnnotationService::submit(AnnotationRecord record) {
  auto pos = position_.find(record.sentence_id);
  if (pos == position_.end()) throw AnnotationError("unknown sentence id '" + record.sentence_id + "'");
  if (record.annotator.empty()) throw AnnotationError("annotator must not be empty");
  const auto& sentence = corpus_[pos->second];
  const auto count = sentence.morpheme_count();
  if (record.glosses.size() != count)
    throw AnnotationError("sentence '" + record.sentence_id + "' has " + std::to_string(count) + " morphemes but " +
                          std::to_string(record.glosses.size()) + " glosses were submitted");
  if (record.sources.size() != count)
    throw AnnotationError("expected one source flag per morpheme (" + std::to_string(count) + ")");
  if (!suggester_) throw Error("model not loaded");
  const auto& taxonomy = suggester_->taxonomy();
  int max_rank = 0;
  std::vector<int> ranks(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto leaf = taxonomy.find(record.glosses[i]);
    if (!leaf || taxonomy.leaf_name(*leaf) == kSeparatorGloss)
      throw AnnotationError("morpheme " + std::to_string(i) + ": unknown gloss tag '" + record.glosses[i] + "'");
    record.glosses[i] = taxonomy.leaf_name(*leaf);
    ranks[i] = parse_source(record.sources[i]);
    max_rank = std::max(max_rank, ranks[i]);
  }
  if (max_rank > 0) {
    auto suggestions = suggester_->suggest(sentence, max_rank);
    for (std::size_t i = 0; i < count; ++i) {
      if (ranks[i] == 0) continue;
      const auto& cands = suggestions.morphemes[i].candidates;
      if (static_cast<std::size_t>(ranks[i]) > cands.size() || cands[static_cast<std::size_t>(ranks[i] - 1)].gloss != record.glosses[i])
        throw AnnotationError("morpheme " + std::to_string(i) + ": '" + record.glosses[i] + "' is not suggestion rank " +
                              std::to_string(ranks[i]));
    }
  }
  if (record.timestamp.empty()) record.timestamp = utc_now();

  std::unique_lock lock(mutex_);
  journal_.append(record);
  latest_[record.sentence_id] = std::move(record);
}

Progress AnnotationService::progress() const {
  std::shared_lock lock(mutex_);
  Progress p;
  p.annotated = latest_.size();
  p.remaining = corpus_.size() - std::min(corpus_.size(), latest_.size());
  p.rank_counts.assign(static_cast<std::size_t>(default_k_), 0);
  for (const auto& [_, record] : latest_) {
    for (const auto& source : record.sources) {
      int r = parse_source(source);
      if (r == 0) {
        ++p.manual_overrides;
        continue;
      }
      if (static_cast<std::size_t>(r) > p.rank_counts.size()) p.rank_counts.resize(static_cast<std::size_t>(r), 0);
      ++p.rank_counts[static_cast<std::size_t>(r - 1)];
    }
  }
  return p;
}

std::size_t AnnotationService::export_annotations(const std::string& path) const {
  std::vector<IgtSentence> out;
  {
    std::shared_lock lock(mutex_);
    for (const auto& s : corpus_) {
      auto it = latest_.find(s.id);
      if (it == latest_.end()) continue;
      IgtSentence annotated{s.id, s.words, {}};
      std::size_t next = 0;
      for (const auto& word : s.words) {
        std::vector<std::string> glosses;
        for (std::size_t m = 0; m < word.size(); ++m) glosses.push_back(it->second.glosses[next++]);
        annotated.gloss_words.push_back(std::move(glosses));
      }
      out.push_back(std::move(annotated));
    }
  }
  const std::string tmp = path + ".tmp";
  save_corpus(tmp, out);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("export: cannot move into place " + path + ": " + ec.message());
  return out.size();
}

json AnnotationService::taxonomy_json() const {
  if (!suggester_) throw Error("model not loaded");
  const auto& t = suggester_->taxonomy();
  json leaves = json::array();
  for (std::size_t i = 0; i < t.leaf_count(); ++i) {
    if (t.leaf_name(i) == kSeparatorGloss) continue;
    leaves.push_back({{"gloss", t.leaf_name(i)}, {"path", t.path(i)}});
  }
  return {{"depth", t.depth()}, {"leaves", std::move(leaves)}, {"tree", json::parse(t.to_json(-1))}};
}

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const AnnotationError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const ValidationError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 503, {{"error", e.what()}});
  }
}

json sentence_json(const IgtSentence& s) { return {{"id", s.id}, {"words", s.words}}; }

}  // namespace

void register_routes(httplib::Server& server, AnnotationService& service, const ServeOptions& options) {
  server.Get("/api/taxonomy", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, service.taxonomy_json()); });
  });
  server.Get("/api/next", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      int k = service.default_k();
      if (req.has_param("k")) {
        try {
          k = std::stoi(req.get_param_value("k"));
        } catch (const std::exception&) {
          throw ValidationError("k must be an integer");
        }
      }
      auto item = service.next_sentence(req.get_param_value("annotator"), k);
      if (!item) {
        reply(res, 200, {{"done", true}});
        return;
      }
      reply(res, 200, {{"done", false}, {"sentence", sentence_json(item->sentence)}, {"suggestions", item->suggestions.to_json()}});
    });
  });
  server.Post("/api/annotations", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto record = AnnotationRecord::from_json(json::parse(req.body));
      auto id = record.sentence_id;
      service.submit(std::move(record));
      reply(res, 200, {{"status", "ok"}, {"sentence_id", id}});
    });
  });
  server.Get("/api/progress", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, service.progress().to_json()); });
  });
  server.Post("/api/export", [&service, path = options.export_path](const httplib::Request&, httplib::Response& res) {
    try {
      auto count = service.export_annotations(path);
      reply(res, 200, {{"count", count}, {"path", path}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  });
  if (!options.static_dir.empty()) server.set_mount_point("/", options.static_dir);
}

}  // namespace taxogloss
