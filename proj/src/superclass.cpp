#include "vmoe/superclass.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "vmoe/errors.hpp"
#include "vmoe/log.hpp"

namespace vmoe {

ConfusionMatrix confusion_from_predictions(int num_classes, std::span<const int> truth,
                                           std::span<const int> predicted) {
  if (truth.empty()) throw ContractError("confusion matrix over an empty split");
  if (truth.size() != predicted.size()) throw ContractError("truth and prediction counts differ");
  ConfusionMatrix cm{CountMatrix::Zero(num_classes, num_classes)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw DataError("class index outside [0, " + std::to_string(num_classes) + ")");
    }
    ++cm.counts(truth[i], predicted[i]);
  }
  return cm;
}

ConfusionGraph build_graph(const ConfusionMatrix& cm) {
  Eigen::MatrixXd c = cm.counts.cast<double>();
  ConfusionGraph g{c + c.transpose()};
  g.weights.diagonal().setZero();
  return g;
}

std::vector<std::vector<int>> SuperClassMap::members() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_superclasses));
  for (int c = 0; c < num_classes(); ++c) out.at(static_cast<std::size_t>(assignment[c])).push_back(c);
  return out;
}

std::vector<int> SuperClassMap::sizes() const {
  std::vector<int> out(static_cast<std::size_t>(num_superclasses), 0);
  for (int s : assignment) ++out.at(static_cast<std::size_t>(s));
  return out;
}

int default_balance_cap(int num_classes, int num_superclasses) {
  return 2 * ((num_classes + num_superclasses - 1) / num_superclasses);
}

void validate(const SuperClassMap& map, int max_size) {
  if (map.num_superclasses < 1) throw ConfigError("super-class map needs at least one super-class");
  if (map.assignment.empty()) throw ConfigError("super-class map covers no classes");
  std::vector<int> sizes(static_cast<std::size_t>(map.num_superclasses), 0);
  for (int s : map.assignment) {
    if (s < 0 || s >= map.num_superclasses) {
      throw ConfigError("super-class id " + std::to_string(s) + " outside [0, " +
                        std::to_string(map.num_superclasses) + ")");
    }
    ++sizes[static_cast<std::size_t>(s)];
  }
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] == 0) throw ConfigError("super-class " + std::to_string(s) + " is empty");
    if (max_size > 0 && sizes[s] > max_size) {
      throw ConfigError("super-class " + std::to_string(s) + " has " + std::to_string(sizes[s]) +
                        " classes, above the cap of " + std::to_string(max_size));
    }
  }
}

double intra_cluster_weight(const ConfusionGraph& g, const SuperClassMap& map) {
  double total = 0;
  for (int a = 0; a < map.num_classes(); ++a)
    for (int b = a + 1; b < map.num_classes(); ++b)
      if (map[a] == map[b]) total += g.weights(a, b);
  return total;
}

SuperClassMap round_robin_superclasses(int num_classes, int num_superclasses) {
  if (num_superclasses < 1 || num_superclasses > num_classes) {
    throw ConfigError("need 1 <= E <= C, got E=" + std::to_string(num_superclasses) + ", C=" +
                      std::to_string(num_classes));
  }
  SuperClassMap m{std::vector<int>(static_cast<std::size_t>(num_classes)), num_superclasses};
  for (int c = 0; c < num_classes; ++c) m.assignment[static_cast<std::size_t>(c)] = c % num_superclasses;
  return m;
}

SuperClassMap random_superclasses(int num_classes, int num_superclasses, std::uint64_t seed) {
  SuperClassMap m = round_robin_superclasses(num_classes, num_superclasses);
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < num_classes; ++i) m.assignment[static_cast<std::size_t>(order[i])] = i % num_superclasses;
  return m;
}

SuperClassMap provided_superclasses(std::span<const int> fine_labels, std::span<const int> coarse_labels) {
  if (fine_labels.size() != coarse_labels.size()) throw DataError("fine and coarse label counts differ");
  if (fine_labels.empty()) throw DataError("no labels to derive super-classes from");
  std::map<int, int> coarse_of;
  int max_fine = -1, max_coarse = -1;
  for (std::size_t i = 0; i < fine_labels.size(); ++i) {
    const int f = fine_labels[i], c = coarse_labels[i];
    if (f < 0 || c < 0) throw DataError("negative label at example " + std::to_string(i));
    auto [it, inserted] = coarse_of.emplace(f, c);
    if (!inserted && it->second != c) {
      throw DataError("fine class " + std::to_string(f) + " maps to coarse labels " + std::to_string(it->second) +
                      " and " + std::to_string(c));
    }
    max_fine = std::max(max_fine, f);
    max_coarse = std::max(max_coarse, c);
  }
  if (static_cast<int>(coarse_of.size()) != max_fine + 1) throw DataError("some fine classes have no examples");
  SuperClassMap m{std::vector<int>(static_cast<std::size_t>(max_fine + 1)), max_coarse + 1};
  for (auto [f, c] : coarse_of) m.assignment[static_cast<std::size_t>(f)] = c;
  validate(m);
  return m;
}

namespace {

// Renumbers super-classes in order of their smallest member.
SuperClassMap canonical(std::vector<int> assignment, int groups) {
  std::vector<int> relabel(static_cast<std::size_t>(*std::max_element(assignment.begin(), assignment.end())) + 1, -1);
  int next = 0;
  for (int& s : assignment) {
    auto& r = relabel[static_cast<std::size_t>(s)];
    if (r < 0) r = next++;
    s = r;
  }
  return {std::move(assignment), groups};
}

class ExactSearch {
 public:
  ExactSearch(const Eigen::MatrixXd& w, int groups, int cap)
      : w_(w), c_(static_cast<int>(w.rows())), groups_(groups), cap_(cap), sizes_(static_cast<std::size_t>(groups), 0) {
    // bound_[i]: positive weight on pairs whose later endpoint is >= i.
    bound_.assign(static_cast<std::size_t>(c_) + 1, 0.0);
    for (int b = c_ - 1; b >= 0; --b) {
      double s = 0;
      for (int a = 0; a < b; ++a) s += std::max(0.0, w_(a, b));
      bound_[static_cast<std::size_t>(b)] = bound_[static_cast<std::size_t>(b) + 1] + s;
    }
  }

  std::vector<int> solve() {
    assign_.assign(static_cast<std::size_t>(c_), -1);
    recurse(0, 0, 0.0);
    return best_assign_;
  }

 private:
  void recurse(int i, int used, double value) {
    if (i == c_) {
      if (used == groups_ && value > best_) {
        best_ = value;
        best_assign_ = assign_;
      }
      return;
    }
    if (c_ - i < groups_ - used) return;
    if (value + bound_[static_cast<std::size_t>(i)] <= best_) return;
    const int limit = std::min(used + 1, groups_);
    for (int g = 0; g < limit; ++g) {
      if (sizes_[static_cast<std::size_t>(g)] >= cap_) continue;
      double gain = 0;
      for (int a = 0; a < i; ++a)
        if (assign_[static_cast<std::size_t>(a)] == g) gain += w_(a, i);
      assign_[static_cast<std::size_t>(i)] = g;
      ++sizes_[static_cast<std::size_t>(g)];
      recurse(i + 1, std::max(used, g + 1), value + gain);
      --sizes_[static_cast<std::size_t>(g)];
      assign_[static_cast<std::size_t>(i)] = -1;
    }
  }

  const Eigen::MatrixXd& w_;
  int c_, groups_, cap_;
  std::vector<int> sizes_;
  std::vector<double> bound_;
  std::vector<int> assign_;
  std::vector<int> best_assign_;
  double best_ = -std::numeric_limits<double>::infinity();
};

// Merges the heaviest-connected pair of clusters whose union fits under the
// cap until `groups` clusters remain. Ties go to the lowest index pair.
std::vector<int> agglomerate(const Eigen::MatrixXd& w, int groups, int cap) {
  const int c = static_cast<int>(w.rows());
  Eigen::MatrixXd between = w;
  std::vector<int> owner(static_cast<std::size_t>(c));
  std::iota(owner.begin(), owner.end(), 0);
  std::vector<int> size(static_cast<std::size_t>(c), 1);
  std::vector<bool> active(static_cast<std::size_t>(c), true);
  for (int remaining = c; remaining > groups; --remaining) {
    int best_a = -1, best_b = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < c; ++a) {
      if (!active[static_cast<std::size_t>(a)]) continue;
      for (int b = a + 1; b < c; ++b) {
        if (!active[static_cast<std::size_t>(b)]) continue;
        if (size[static_cast<std::size_t>(a)] + size[static_cast<std::size_t>(b)] > cap) continue;
        if (between(a, b) > best) {
          best = between(a, b);
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a < 0) throw ConfigError("no merge fits under the super-class size cap");
    between.row(best_a) += between.row(best_b);
    between.col(best_a) += between.col(best_b);
    between(best_a, best_a) = 0;
    active[static_cast<std::size_t>(best_b)] = false;
    size[static_cast<std::size_t>(best_a)] += size[static_cast<std::size_t>(best_b)];
    for (int& o : owner)
      if (o == best_b) o = best_a;
  }
  return canonical(owner, groups).assignment;
}

// Best-improvement single moves and pairwise swaps until neither helps.
std::vector<int> refine(const Eigen::MatrixXd& w, std::vector<int> assign, int groups, int cap) {
  const int c = static_cast<int>(w.rows());
  Eigen::MatrixXd to_group = Eigen::MatrixXd::Zero(c, groups);  // weight from i into group g
  std::vector<int> size(static_cast<std::size_t>(groups), 0);
  for (int i = 0; i < c; ++i) {
    ++size[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    for (int j = 0; j < c; ++j)
      if (j != i) to_group(i, assign[static_cast<std::size_t>(j)]) += w(i, j);
  }
  auto relocate = [&](int i, int to) {
    const int from = assign[static_cast<std::size_t>(i)];
    for (int j = 0; j < c; ++j) {
      if (j == i) continue;
      to_group(j, from) -= w(i, j);
      to_group(j, to) += w(i, j);
    }
    --size[static_cast<std::size_t>(from)];
    ++size[static_cast<std::size_t>(to)];
    assign[static_cast<std::size_t>(i)] = to;
  };
  const double eps = 1e-9 * std::max(1.0, w.cwiseAbs().sum());
  for (int iter = 0; iter < 100 * c * c; ++iter) {
    double best = eps;
    int kind = 0, bi = -1, bj = -1;
    for (int i = 0; i < c; ++i) {
      const int gi = assign[static_cast<std::size_t>(i)];
      if (size[static_cast<std::size_t>(gi)] <= 1) continue;
      for (int g = 0; g < groups; ++g) {
        if (g == gi || size[static_cast<std::size_t>(g)] >= cap) continue;
        const double delta = to_group(i, g) - to_group(i, gi);
        if (delta > best) {
          best = delta;
          kind = 1;
          bi = i;
          bj = g;
        }
      }
    }
    for (int i = 0; i < c; ++i) {
      const int gi = assign[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < c; ++j) {
        const int gj = assign[static_cast<std::size_t>(j)];
        if (gi == gj) continue;
        const double delta = to_group(i, gj) - to_group(i, gi) + to_group(j, gi) - to_group(j, gj) - 2 * w(i, j);
        if (delta > best) {
          best = delta;
          kind = 2;
          bi = i;
          bj = j;
        }
      }
    }
    if (kind == 0) break;
    if (kind == 1) {
      relocate(bi, bj);
    } else {
      const int gi = assign[static_cast<std::size_t>(bi)], gj = assign[static_cast<std::size_t>(bj)];
      relocate(bi, gj);
      relocate(bj, gi);
    }
  }
  return assign;
}

}  // namespace

SuperClassMap cluster_graph(const ConfusionGraph& g, int num_superclasses, const ClusterOptions& options) {
  const int c = g.num_classes();
  if (num_superclasses < 1 || num_superclasses > c) {
    throw ConfigError("cannot cluster " + std::to_string(c) + " classes into E=" + std::to_string(num_superclasses) +
                      " super-classes (need 1 <= E <= C)");
  }
  if (g.weights.cols() != c || !g.weights.isApprox(g.weights.transpose(), 0.0)) {
    throw DataError("confusion graph must be square and symmetric");
  }
  const int cap = options.max_cluster_size > 0 ? options.max_cluster_size : default_balance_cap(c, num_superclasses);
  if (static_cast<long long>(cap) * num_superclasses < c) {
    throw ConfigError("size cap " + std::to_string(cap) + " cannot hold " + std::to_string(c) + " classes");
  }
  SuperClassMap rr = round_robin_superclasses(c, num_superclasses);
  if (g.weights.cwiseAbs().sum() == 0) {
    log_warning("confusion graph has no off-diagonal mass; using a round-robin super-class split");
    return rr;
  }
  SuperClassMap best;
  if (c <= options.exact_search_max_classes) {
    best = canonical(ExactSearch(g.weights, num_superclasses, cap).solve(), num_superclasses);
  } else {
    best = canonical(refine(g.weights, agglomerate(g.weights, num_superclasses, cap), num_superclasses, cap),
                     num_superclasses);
    SuperClassMap alt = canonical(refine(g.weights, rr.assignment, num_superclasses, cap), num_superclasses);
    if (intra_cluster_weight(g, alt) > intra_cluster_weight(g, best)) best = std::move(alt);
  }
  if (intra_cluster_weight(g, rr) > intra_cluster_weight(g, best)) best = canonical(rr.assignment, num_superclasses);
  validate(best, cap);
  return best;
}

void write_superclass_map(const SuperClassMap& map, const std::filesystem::path& path) {
  validate(map);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write super-class map to " + path.string());
  for (int c = 0; c < map.num_classes(); ++c) out << c << ' ' << map[c] << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
}

SuperClassMap read_superclass_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open super-class map " + path.string());
  std::map<int, int> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    int fine = -1, super = -1;
    std::string extra;
    if (!(ls >> fine >> super) || (ls >> extra) || fine < 0 || super < 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected '<fine_class_index> <superclass_index>'");
    }
    if (!entries.emplace(fine, super).second) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": class " + std::to_string(fine) +
                        " listed twice");
    }
  }
  if (entries.empty()) throw FormatError(path.string() + ": empty super-class map");
  const int classes = entries.rbegin()->first + 1;
  if (static_cast<int>(entries.size()) != classes) throw FormatError(path.string() + ": class indices are not contiguous");
  SuperClassMap m;
  for (auto [f, s] : entries) {
    m.assignment.push_back(s);
    m.num_superclasses = std::max(m.num_superclasses, s + 1);
  }
  validate(m);
  return m;
}

std::string describe(const SuperClassMap& map, std::span<const std::string> class_names) {
  std::ostringstream os;
  const auto groups = map.members();
  for (std::size_t s = 0; s < groups.size(); ++s) {
    os << s << ':';
    for (int c : groups[s]) {
      os << ' ';
      if (static_cast<std::size_t>(c) < class_names.size()) {
        os << class_names[static_cast<std::size_t>(c)];
      } else {
        os << c;
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace vmoe
