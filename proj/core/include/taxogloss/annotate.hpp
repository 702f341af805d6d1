#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "taxogloss/checkpoint.hpp"
#include "taxogloss/corpus.hpp"
#include "taxogloss/taxonomy.hpp"

namespace httplib {
class Server;
}

namespace taxogloss {

struct SuggestionCandidate {
  std::string gloss;
  double probability = 0.0;
  /// Node names from the top-level class down to the gloss.
  std::vector<std::string> taxonomy_path;
  int shared_depth_to_top = 0;
};

struct MorphemeSuggestions {
  std::string morpheme;
  std::vector<SuggestionCandidate> candidates;  // descending probability
};

struct SuggestionSet {
  std::string sentence_id;
  std::vector<MorphemeSuggestions> morphemes;

  nlohmann::json to_json() const;
};

/// Ranks glosses for each morpheme of a sentence with a frozen checkpoint.
/// Pure and thread-safe.
class Suggester {
 public:
  /// Throws ValidationError unless the checkpoint was finetuned on this taxonomy.
  Suggester(Checkpoint checkpoint, Taxonomy taxonomy);

  SuggestionSet suggest(const IgtSentence& sentence, int k) const;
  const Taxonomy& taxonomy() const noexcept { return taxonomy_; }

 private:
  Checkpoint checkpoint_;
  Taxonomy taxonomy_;
};

/// "accepted-rank-<r>" (1-based) or "manual-override".
inline constexpr std::string_view kManualOverride = "manual-override";
inline constexpr std::string_view kAcceptedRankPrefix = "accepted-rank-";

struct AnnotationRecord {
  std::string sentence_id;
  std::string annotator;
  /// One gloss per morpheme, flattened across words.
  std::vector<std::string> glosses;
  std::vector<std::string> sources;
  /// ISO-8601 UTC; filled in by the service when absent.
  std::string timestamp;

  nlohmann::json to_json() const;
  static AnnotationRecord from_json(const nlohmann::json& j);
};

/// Rejected submission; the message is suitable for a 4xx body.
class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only JSON-lines journal of AnnotationRecords. The store state is
/// the last record per sentence id (later lines supersede earlier ones).
/// Each append is fsync'ed before returning.
class AnnotationJournal {
 public:
  explicit AnnotationJournal(std::string path);

  /// Re-reads the whole file. Throws ParseError on a corrupt line.
  std::map<std::string, AnnotationRecord> replay() const;
  void append(const AnnotationRecord& record);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct Progress {
  std::size_t annotated = 0;
  std::size_t remaining = 0;
  /// rank_counts[r-1] = morphemes accepted at rank r.
  std::vector<std::size_t> rank_counts;
  std::size_t manual_overrides = 0;

  nlohmann::json to_json() const;
};

struct NextItem {
  IgtSentence sentence;
  SuggestionSet suggestions;
};

/// Human-in-the-loop glossing session over a fixed corpus.
/// Readers run concurrently; submissions are serialized through the journal.
class AnnotationService {
 public:
  AnnotationService(std::vector<IgtSentence> corpus, std::shared_ptr<const Suggester> suggester,
                    std::string journal_path, int default_k = 5);

  /// Lowest-position sentence without an annotation, or nullopt when done.
  std::optional<NextItem> next_sentence(const std::string& annotator, int k) const;
  /// Validates against the sentence and the suggestions the record claims
  /// to have accepted, then appends to the journal. Throws AnnotationError.
  void submit(AnnotationRecord record);
  Progress progress() const;
  /// Latest annotations in corpus order, written in the corpus file format.
  std::size_t export_annotations(const std::string& path) const;

  nlohmann::json taxonomy_json() const;
  int default_k() const noexcept { return default_k_; }

 private:
  std::vector<IgtSentence> corpus_;
  std::map<std::string, std::size_t> position_;
  std::shared_ptr<const Suggester> suggester_;
  AnnotationJournal journal_;
  int default_k_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, AnnotationRecord> latest_;
};

struct ServeOptions {
  std::string export_path = "annotations.igt";
  /// Mounted at / when non-empty (for the browser UI's static build).
  std::string static_dir;
};

/// Registers GET /api/taxonomy, GET /api/next, POST /api/annotations,
/// GET /api/progress and POST /api/export on the server.
void register_routes(httplib::Server& server, AnnotationService& service, const ServeOptions& options);

}  // namespace taxogloss
