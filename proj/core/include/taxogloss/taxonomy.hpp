#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace taxogloss {

/// Label assigned to word-separator positions. Lives in the taxonomy as an
/// ordinary leaf so that it has a logit.
inline constexpr std::string_view kSeparatorGloss = "[SEP]";

/// Trim surrounding whitespace and upper-case ASCII letters. Gloss names are
/// compared in this form everywhere.
std::string normalize_tag(std::string_view tag);

struct TaxonomyNode {
  std::string name;
  std::vector<TaxonomyNode> children;

  bool is_leaf() const noexcept { return children.empty(); }
};

/// One integer per taxonomy level; entry 0 is the topmost class, the last
/// entry identifies the leaf.
using GlossVector = std::vector<int>;

struct LabelsetReport {
  /// Tags observed in the corpus that are not taxonomy leaves.
  std::vector<std::string> missing_from_taxonomy;
  /// Taxonomy leaves never observed in the corpus.
  std::vector<std::string> unused_leaves;

  bool empty() const noexcept { return missing_from_taxonomy.empty() && unused_leaves.empty(); }
};

/// A compiled gloss hierarchy.
///
/// Leaves are indexed in pre-order; that index is also the logit index used by
/// the classifier. Levels are 0-based here: level 0 holds the root's children,
/// level depth()-1 is the leaf identity partition. A leaf whose natural depth
/// is shallower than depth() forms a singleton class at every deeper level.
///
/// Immutable after construction.
class Taxonomy {
 public:
  /// Parse the JSON tree format ({"name": ..., "children": [...]}).
  /// Throws ParseError on malformed text and ValidationError on structural
  /// problems (empty tree, duplicate leaf, duplicate sibling).
  static Taxonomy parse(std::string_view text);
  static Taxonomy load(const std::string& path);
  static Taxonomy from_tree(TaxonomyNode root);
  /// A depth-1 taxonomy whose leaves sit directly under a synthetic root.
  static Taxonomy flat(const std::vector<std::string>& leaves);

  /// Serialize back to the file format; parse(to_json()) reproduces the
  /// same gloss vectors.
  std::string to_json(int indent = 2) const;

  const TaxonomyNode& root() const noexcept { return root_; }
  int depth() const noexcept { return depth_; }
  std::size_t leaf_count() const noexcept { return leaves_.size(); }
  const std::vector<std::string>& leaves() const noexcept { return leaves_; }
  const std::string& leaf_name(std::size_t leaf) const { return leaves_.at(leaf); }

  std::optional<std::size_t> find(std::string_view gloss) const;
  /// Throws LookupError naming the tag when it is not a leaf.
  std::size_t index_of(std::string_view gloss) const;
  std::optional<std::size_t> separator_index() const { return find(kSeparatorGloss); }

  std::span<const int> gloss_vector(std::size_t leaf) const;
  GlossVector gloss_vector(std::string_view gloss) const;

  int class_of(std::size_t leaf, int level) const;
  int class_count(int level) const;
  std::span<const std::size_t> class_members(int level, int cls) const;

  /// Number of leading levels on which the two gloss vectors agree.
  int shared_depth(std::size_t a, std::size_t b) const;
  int shared_depth(std::string_view a, std::string_view b) const;

  /// Node names from the level-0 class down to the leaf (root excluded).
  const std::vector<std::string>& path(std::size_t leaf) const { return paths_.at(leaf); }
  std::string path_string(std::size_t leaf) const;

  LabelsetReport validate_labelset(const std::set<std::string>& inventory) const;

  /// SHA-256 of the compact serialization; stored in checkpoints.
  std::string hash() const;

 private:
  void compile();

  TaxonomyNode root_;
  int depth_ = 0;
  std::vector<std::string> leaves_;
  std::vector<std::vector<std::string>> paths_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<int> vectors_;  // leaf-major, leaf_count x depth
  std::vector<int> class_counts_;
  std::vector<std::vector<std::vector<std::size_t>>> members_;  // [level][class] -> leaves
};

}  // namespace taxogloss
