#include "petrec/folds.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "petrec/random.hpp"

namespace petrec {

FoldAssignment::FoldAssignment(int k, std::map<std::string, int> subject_to_fold)
    : k_(k), subject_to_fold_(std::move(subject_to_fold)) {
  if (k_ < 3) throw std::invalid_argument("folds: k must be >= 3, got " + std::to_string(k_));
  for (const auto& [id, fold] : subject_to_fold_)
    if (fold < 0 || fold >= k_) throw std::invalid_argument("folds: subject '" + id + "' has fold out of range");
}

std::vector<std::string> FoldAssignment::subjects_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : subject_to_fold_)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<int> FoldAssignment::fold_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(k_), 0);
  for (const auto& [id, f] : subject_to_fold_) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

FoldRoles FoldAssignment::roles(int test_fold) const {
  if (test_fold < 0 || test_fold >= k_)
    throw std::out_of_range("folds: test fold " + std::to_string(test_fold) + " outside [0, " + std::to_string(k_) + ")");
  FoldRoles r;
  r.test_fold = test_fold;
  r.validation_fold = (test_fold + 1) % k_;
  for (int f = 0; f < k_; ++f)
    if (f != r.test_fold && f != r.validation_fold) r.train_folds.push_back(f);
  for (const auto& [id, f] : subject_to_fold_) {
    if (f == r.test_fold) {
      r.test.push_back(id);
    } else if (f == r.validation_fold) {
      r.validation.push_back(id);
    } else {
      r.train.push_back(id);
    }
  }
  return r;
}

FoldAssignment make_folds(const std::vector<std::string>& subject_ids, int k, std::uint64_t seed) {
  if (k < 3) throw std::invalid_argument("folds: k must be >= 3, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > subject_ids.size())
    throw std::invalid_argument("folds: k=" + std::to_string(k) + " exceeds subject count " +
                                std::to_string(subject_ids.size()));
  if (std::set<std::string>(subject_ids.begin(), subject_ids.end()).size() != subject_ids.size())
    throw std::invalid_argument("folds: duplicate subject ids");

  std::vector<std::string> order = subject_ids;
  std::sort(order.begin(), order.end());
  Rng rng(derive_seed(seed, "folds"));
  std::shuffle(order.begin(), order.end(), rng);
  std::map<std::string, int> assignment;
  for (std::size_t i = 0; i < order.size(); ++i) assignment[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return FoldAssignment(k, std::move(assignment));
}

}  // namespace petrec
