#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "histomet/rng.hpp"

namespace histomet {

struct PatientLabel {
  std::string patient_id;
  int label = 0;
};

using FoldAssignment = std::map<std::string, int>;

/// Patient-level k-fold split: seeded shuffle then round-robin, stratified
/// by label when every class has at least k patients. The round-robin cursor
/// runs across class groups so fold sizes differ by at most one patient.
inline FoldAssignment make_folds(const std::vector<PatientLabel>& patients,
                                 std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_folds: need k >= 2");
  if (patients.size() < k)
    throw std::invalid_argument("make_folds: fewer patients than folds");

  // group unique patients by the label of their first occurrence
  std::map<int, std::vector<std::string>> by_label;
  std::map<std::string, int> first_label;
  std::vector<std::string> order;
  for (const PatientLabel& p : patients) {
    if (first_label.emplace(p.patient_id, p.label).second)
      order.push_back(p.patient_id);
  }
  for (const std::string& id : order) by_label[first_label[id]].push_back(id);

  bool stratify = true;
  for (const auto& [label, group] : by_label)
    if (group.size() < k) stratify = false;

  std::vector<std::vector<std::string>> groups;
  if (stratify) {
    for (auto& [label, group] : by_label) groups.push_back(group);
  } else {
    groups.push_back(order);
  }

  Rng rng(derive_seed(seed, "fold"));
  FoldAssignment out;
  std::size_t cursor = 0;
  for (auto& group : groups) {
    rng.shuffle(group);
    for (const std::string& id : group) {
      out[id] = static_cast<int>(cursor % k);
      ++cursor;
    }
  }
  return out;
}

}  // namespace histomet
