#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "histomet/errors.hpp"
#include "histomet/model.hpp"

namespace histomet {

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<std::size_t> top_k_indices(const Matrix& attention,
                                              std::size_t row,
                                              std::size_t k) {
  std::vector<std::size_t> idx(attention.cols());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) {
                     return attention.at(row, a) > attention.at(row, b);
                   });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

}  // namespace detail

/// Per-slide interpretation export: raw prototype-to-instance attention, the
/// prototype-to-concept weights, and the top-k most attended patch indices
/// per prototype. Consumers can join the indices with bag coordinates.
inline void write_interpretation(const std::string& path,
                                 const std::string& slide_id,
                                 const SlideForward& forward,
                                 std::size_t top_k = 8) {
  nlohmann::json j;
  j["slide_id"] = slide_id;
  for (ScaleId s : {ScaleId::x10, ScaleId::x20}) {
    const ScaleForward& sf = forward.at(s);
    if (!sf.present) continue;
    nlohmann::json scale;
    if (!sf.attention.empty()) {
      scale["attention"] = detail::matrix_to_json(sf.attention);
      nlohmann::json tops = nlohmann::json::array();
      for (std::size_t p = 0; p < sf.attention.rows(); ++p)
        tops.push_back(detail::top_k_indices(sf.attention, p, top_k));
      scale["top_patches_per_prototype"] = tops;
    }
    if (!sf.alpha.empty())
      scale["concept_attention"] = detail::matrix_to_json(sf.alpha);
    scale["logits"] = sf.logits;
    scale["degenerate_embedding"] = sf.degenerate_embedding;
    j[scale_name(s)] = scale;
  }
  j["fused_logits"] = forward.fused_logits;
  j["probabilities"] = forward.probs;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f << j.dump(2) << "\n";
  if (!f) throw IoError(path + ": write failed");
}

}  // namespace histomet
