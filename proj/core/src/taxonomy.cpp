#include "taxogloss/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "taxogloss/error.hpp"
#include "taxogloss/hash.hpp"

namespace taxogloss {

using nlohmann::json;

std::string normalize_tag(std::string_view tag) {
  auto begin = tag.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = tag.find_last_not_of(" \t\r\n");
  std::string out(tag.substr(begin, end - begin + 1));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

namespace {

std::string trimmed(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

// Line and column (1-based) of a byte offset.
std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

TaxonomyNode node_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError("taxonomy: node at " + where + " is not an object");
  auto name_it = j.find("name");
  if (name_it == j.end() || !name_it->is_string())
    throw ParseError("taxonomy: node at " + where + " has no string \"name\"");
  TaxonomyNode node;
  node.name = trimmed(name_it->get<std::string>());
  if (node.name.empty()) throw ParseError("taxonomy: node at " + where + " has an empty name");
  if (auto children = j.find("children"); children != j.end()) {
    if (!children->is_array())
      throw ParseError("taxonomy: \"children\" of '" + node.name + "' is not an array");
    for (std::size_t i = 0; i < children->size(); ++i)
      node.children.push_back(node_from_json((*children)[i], where + "/" + node.name));
  }
  return node;
}

json node_to_json(const TaxonomyNode& node) {
  json j;
  j["name"] = node.name;
  if (!node.is_leaf()) {
    json children = json::array();
    for (const auto& c : node.children) children.push_back(node_to_json(c));
    j["children"] = std::move(children);
  }
  return j;
}

}  // namespace

Taxonomy Taxonomy::parse(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    std::ostringstream msg;
    msg << "taxonomy: syntax error at line " << line << ", column " << col << ": " << e.what();
    throw ParseError(msg.str());
  }
  return from_tree(node_from_json(doc, ""));
}

Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("taxonomy: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

Taxonomy Taxonomy::from_tree(TaxonomyNode root) {
  Taxonomy t;
  t.root_ = std::move(root);
  t.compile();
  return t;
}

Taxonomy Taxonomy::flat(const std::vector<std::string>& leaves) {
  TaxonomyNode root{"root", {}};
  for (const auto& leaf : leaves) root.children.push_back(TaxonomyNode{leaf, {}});
  return from_tree(std::move(root));
}

void Taxonomy::compile() {
  if (root_.children.empty()) throw ValidationError("taxonomy: empty tree (root has no children)");

  // Pre-order walk collecting each leaf's child-index path and name path.
  std::vector<std::vector<int>> index_paths;
  std::vector<int> ipath;
  std::vector<std::string> npath;
  auto walk = [&](auto&& self, const TaxonomyNode& node) -> void {
    std::set<std::string> sibling_names;
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      const auto& child = node.children[i];
      if (!sibling_names.insert(normalize_tag(child.name)).second)
        throw ValidationError("taxonomy: duplicate sibling name '" + child.name + "' under '" +
                              node.name + "'");
      ipath.push_back(static_cast<int>(i));
      npath.push_back(child.name);
      if (child.is_leaf()) {
        auto key = normalize_tag(child.name);
        if (!index_.emplace(key, leaves_.size()).second)
          throw ValidationError("taxonomy: duplicate leaf '" + child.name + "'");
        leaves_.push_back(child.name);
        paths_.push_back(npath);
        index_paths.push_back(ipath);
      } else {
        self(self, child);
      }
      ipath.pop_back();
      npath.pop_back();
    }
  };
  walk(walk, root_);

  depth_ = 0;
  for (const auto& p : index_paths) depth_ = std::max(depth_, static_cast<int>(p.size()));

  const std::size_t n = leaves_.size();
  vectors_.assign(n * static_cast<std::size_t>(depth_), 0);
  class_counts_.assign(static_cast<std::size_t>(depth_), 0);
  members_.assign(static_cast<std::size_t>(depth_), {});
  for (int level = 0; level < depth_; ++level) {
    // A class at this level is identified by the path prefix through the
    // level, truncated at the leaf for shallow leaves.
    std::map<std::vector<int>, int> ids;
    auto& groups = members_[static_cast<std::size_t>(level)];
    for (std::size_t leaf = 0; leaf < n; ++leaf) {
      const auto& p = index_paths[leaf];
      auto len = std::min<std::size_t>(p.size(), static_cast<std::size_t>(level) + 1);
      std::vector<int> key(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(len));
      auto [it, inserted] = ids.emplace(std::move(key), static_cast<int>(ids.size()));
      if (inserted) groups.emplace_back();
      groups[static_cast<std::size_t>(it->second)].push_back(leaf);
      vectors_[leaf * static_cast<std::size_t>(depth_) + static_cast<std::size_t>(level)] = it->second;
    }
    class_counts_[static_cast<std::size_t>(level)] = static_cast<int>(ids.size());
  }
}

std::string Taxonomy::to_json(int indent) const { return node_to_json(root_).dump(indent); }

std::optional<std::size_t> Taxonomy::find(std::string_view gloss) const {
  auto it = index_.find(normalize_tag(gloss));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Taxonomy::index_of(std::string_view gloss) const {
  if (auto idx = find(gloss)) return *idx;
  throw LookupError("unknown gloss '" + std::string(gloss) + "'");
}

std::span<const int> Taxonomy::gloss_vector(std::size_t leaf) const {
  if (leaf >= leaves_.size()) throw LookupError("leaf index out of range");
  return {vectors_.data() + leaf * static_cast<std::size_t>(depth_), static_cast<std::size_t>(depth_)};
}

GlossVector Taxonomy::gloss_vector(std::string_view gloss) const {
  auto v = gloss_vector(index_of(gloss));
  return {v.begin(), v.end()};
}

int Taxonomy::class_of(std::size_t leaf, int level) const {
  return gloss_vector(leaf)[static_cast<std::size_t>(level)];
}

int Taxonomy::class_count(int level) const {
  return class_counts_.at(static_cast<std::size_t>(level));
}

std::span<const std::size_t> Taxonomy::class_members(int level, int cls) const {
  return members_.at(static_cast<std::size_t>(level)).at(static_cast<std::size_t>(cls));
}

int Taxonomy::shared_depth(std::size_t a, std::size_t b) const {
  auto va = gloss_vector(a);
  auto vb = gloss_vector(b);
  int shared = 0;
  while (shared < depth_ && va[static_cast<std::size_t>(shared)] == vb[static_cast<std::size_t>(shared)])
    ++shared;
  return shared;
}

int Taxonomy::shared_depth(std::string_view a, std::string_view b) const {
  return shared_depth(index_of(a), index_of(b));
}

std::string Taxonomy::path_string(std::size_t leaf) const {
  std::string out;
  for (const auto& name : path(leaf)) {
    if (!out.empty()) out += " → ";
    out += name;
  }
  return out;
}

LabelsetReport Taxonomy::validate_labelset(const std::set<std::string>& inventory) const {
  LabelsetReport report;
  std::set<std::string> seen;
  for (const auto& tag : inventory) {
    auto key = normalize_tag(tag);
    if (index_.count(key)) {
      seen.insert(key);
    } else {
      report.missing_from_taxonomy.push_back(tag);
    }
  }
  for (const auto& leaf : leaves_)
    if (!seen.count(normalize_tag(leaf))) report.unused_leaves.push_back(leaf);
  return report;
}

std::string Taxonomy::hash() const { return sha256_hex(node_to_json(root_).dump()); }

}  // namespace taxogloss
