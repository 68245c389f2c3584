#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace petrec {

struct FoldRoles {
  int test_fold = 0;
  int validation_fold = 0;
  std::vector<int> train_folds;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Subject-level k-fold split. For test fold t, fold (t + 1) mod k validates
/// and the remaining k - 2 folds train.
class FoldAssignment {
 public:
  FoldAssignment(int k, std::map<std::string, int> subject_to_fold);

  int k() const { return k_; }
  const std::map<std::string, int>& subject_to_fold() const { return subject_to_fold_; }
  std::vector<std::string> subjects_in(int fold) const;
  std::vector<int> fold_sizes() const;
  FoldRoles roles(int test_fold) const;

 private:
  int k_;
  std::map<std::string, int> subject_to_fold_;
};

/// Deterministic shuffled assignment; fold sizes differ by at most one.
FoldAssignment make_folds(const std::vector<std::string>& subject_ids, int k, std::uint64_t seed);

}  // namespace petrec
