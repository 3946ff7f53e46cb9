#pragma once

// Super-class divisions: grouping C fine classes into E super-classes, one
// per expert. Divisions come from dataset coarse labels, a seeded random
// split, or clustering the confusion graph of a trained dense model.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vmoe {

using CountMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

// counts(t, p): examples of true class t predicted as p.
struct ConfusionMatrix {
  CountMatrix counts;

  int num_classes() const { return static_cast<int>(counts.rows()); }
  long long total() const { return counts.sum(); }
};

ConfusionMatrix confusion_from_predictions(int num_classes, std::span<const int> truth, std::span<const int> predicted);

// Symmetric, zero-diagonal class affinity.
struct ConfusionGraph {
  Eigen::MatrixXd weights;

  int num_classes() const { return static_cast<int>(weights.rows()); }
};

// weights = counts + counts^T with the diagonal zeroed.
ConfusionGraph build_graph(const ConfusionMatrix& cm);

struct SuperClassMap {
  std::vector<int> assignment;  // fine class -> super-class
  int num_superclasses = 0;

  int num_classes() const { return static_cast<int>(assignment.size()); }
  int operator[](int fine_class) const { return assignment.at(static_cast<std::size_t>(fine_class)); }
  std::vector<std::vector<int>> members() const;
  std::vector<int> sizes() const;
};

// 2 * ceil(C / E).
int default_balance_cap(int num_classes, int num_superclasses);

// Checks ids in range and every super-class non-empty; with max_size > 0
// also that no super-class is larger than max_size.
void validate(const SuperClassMap& map, int max_size = 0);

// Sum of graph weight over pairs that share a super-class.
double intra_cluster_weight(const ConfusionGraph& g, const SuperClassMap& map);

struct ClusterOptions {
  int max_cluster_size = 0;        // 0: default_balance_cap
  int exact_search_max_classes = 10;  // exhaustive search up to this many classes
};

// Balanced partition into E groups maximizing intra-group weight. Small
// inputs are solved exactly; larger ones by size-capped agglomerative
// merging of the heaviest cluster pair followed by move/swap refinement.
// A graph without edges falls back to round-robin with a warning. The
// result is never worse than round-robin, and super-class ids are numbered
// by their smallest member.
SuperClassMap cluster_graph(const ConfusionGraph& g, int num_superclasses, const ClusterOptions& options = {});

// Fine class c goes to super-class c mod E.
SuperClassMap round_robin_superclasses(int num_classes, int num_superclasses);

// Seeded shuffle, then round-robin: sizes differ by at most one.
SuperClassMap random_superclasses(int num_classes, int num_superclasses, std::uint64_t seed);

// Imports a dataset's own coarse labels, given per example.
SuperClassMap provided_superclasses(std::span<const int> fine_labels, std::span<const int> coarse_labels);

// Text format: one "<fine_class_index> <superclass_index>" line per class.
void write_superclass_map(const SuperClassMap& map, const std::filesystem::path& path);
SuperClassMap read_superclass_map(const std::filesystem::path& path);

// One line per super-class listing its members, optionally by name.
std::string describe(const SuperClassMap& map, std::span<const std::string> class_names = {});

}  // namespace vmoe
