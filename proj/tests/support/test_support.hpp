#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "taxogloss/rng.hpp"
#include "taxogloss/taxonomy.hpp"

namespace taxogloss::testing {

inline std::string bundled_taxonomy_path() { return std::string(TAXOGLOSS_TEST_DATA_DIR) + "/uspanteko_taxonomy.json"; }

inline const Taxonomy& bundled_taxonomy() {
  static const Taxonomy taxonomy = Taxonomy::load(bundled_taxonomy_path());
  return taxonomy;
}

inline std::string fixture_path(const std::string& name) { return std::string(TAXOGLOSS_TEST_FIXTURE_DIR) + "/" + name; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("taxogloss-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Random tree with depth <= max_depth and at least two leaves.
inline Taxonomy random_taxonomy(CounterRng& rng, int max_depth, int max_children = 4) {
  int leaf_counter = 0;
  auto grow = [&](auto& self, int depth) -> TaxonomyNode {
    TaxonomyNode node;
    node.name = "n" + std::to_string(leaf_counter++);
    bool leaf = depth >= max_depth || (depth > 1 && uniform_index(rng, 3) == 0);
    if (leaf) return node;
    std::size_t children = 1 + uniform_index(rng, static_cast<std::size_t>(max_children));
    for (std::size_t c = 0; c < children; ++c) node.children.push_back(self(self, depth + 1));
    return node;
  };
  for (;;) {
    TaxonomyNode root;
    root.name = "root";
    std::size_t tops = 2 + uniform_index(rng, static_cast<std::size_t>(max_children));
    for (std::size_t c = 0; c < tops; ++c) root.children.push_back(grow(grow, 1));
    auto taxonomy = Taxonomy::from_tree(root);
    if (taxonomy.leaf_count() >= 2) return taxonomy;
  }
}

inline std::vector<double> random_logits(CounterRng& rng, std::size_t n, double scale = 3.0) {
  std::vector<double> logits(n);
  for (auto& v : logits) v = normal(rng, 0.0, scale);
  return logits;
}

}  // namespace taxogloss::testing
