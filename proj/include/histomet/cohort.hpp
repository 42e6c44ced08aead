#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "histomet/bag_io.hpp"
#include "histomet/errors.hpp"
#include "histomet/matrix.hpp"
#include "histomet/scale.hpp"

namespace histomet {

// 5-class label space: Primary plus the four metastatic sites.
enum class SlideLabel : int {
  Primary = 0,
  Brain = 1,
  LymphNode = 2,
  Liver = 3,
  SoftTissue = 4,
};

inline constexpr std::size_t kClassCount = 5;
inline constexpr std::size_t kSiteCount = 4;

inline const char* label_name(SlideLabel l) {
  switch (l) {
    case SlideLabel::Primary: return "Primary";
    case SlideLabel::Brain: return "Brain";
    case SlideLabel::LymphNode: return "LymphNode";
    case SlideLabel::Liver: return "Liver";
    case SlideLabel::SoftTissue: return "SoftTissue";
  }
  return "?";
}

inline SlideLabel parse_label(const std::string& s) {
  for (int i = 0; i < int(kClassCount); ++i)
    if (s == label_name(SlideLabel(i))) return SlideLabel(i);
  throw IoError("unknown label \"" + s + "\"");
}

inline bool is_metastatic(SlideLabel l) { return l != SlideLabel::Primary; }

/// Site index in [0, 4) for metastatic labels: Brain 0, LymphNode 1, ...
inline int site_index(SlideLabel l) {
  if (!is_metastatic(l))
    throw std::invalid_argument("site_index: primary has no site");
  return int(l) - 1;
}

inline SlideLabel label_from_site(int site) {
  if (site < 0 || site >= int(kSiteCount))
    throw std::invalid_argument("label_from_site: out of range");
  return SlideLabel(site + 1);
}

struct SlideRecord {
  std::string slide_id;
  std::string patient_id;
  SlideLabel label = SlideLabel::Primary;
  int fold = -1;
  std::string path_10x;  // relative to the manifest directory unless absolute
  std::string path_20x;  // empty when the scale is absent
};

using Manifest = std::vector<SlideRecord>;

/// One manifest line per slide, JSON object per line.
inline void write_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  for (const SlideRecord& r : manifest) {
    nlohmann::json j{{"slide_id", r.slide_id},
                     {"patient_id", r.patient_id},
                     {"label", label_name(r.label)},
                     {"fold", r.fold},
                     {"path_10x", r.path_10x},
                     {"path_20x", r.path_20x}};
    f << j.dump() << "\n";
  }
  if (!f) throw IoError(path + ": write failed");
}

inline Manifest read_manifest(const std::string& path,
                              bool check_paths = false) {
  std::ifstream f(path);
  if (!f) throw IoError(path + ": cannot open manifest");
  const std::filesystem::path base =
      std::filesystem::path(path).parent_path();
  Manifest manifest;
  std::map<std::string, int> seen;  // slide_id -> line number
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": bad JSON: " +
                    e.what());
    }
    SlideRecord r;
    try {
      r.slide_id = j.at("slide_id").get<std::string>();
      r.patient_id = j.at("patient_id").get<std::string>();
      r.label = parse_label(j.at("label").get<std::string>());
      r.fold = j.at("fold").get<int>();
      r.path_10x = j.value("path_10x", std::string());
      r.path_20x = j.value("path_20x", std::string());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": missing field: " + e.what());
    } catch (const IoError& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, inserted] = seen.emplace(r.slide_id, line_no);
    if (!inserted)
      throw IoError(path + ": duplicate slide_id \"" + r.slide_id +
                    "\" at lines " + std::to_string(it->second) + " and " +
                    std::to_string(line_no));
    if (check_paths) {
      for (const std::string& p : {r.path_10x, r.path_20x}) {
        if (p.empty()) continue;
        const std::filesystem::path full =
            std::filesystem::path(p).is_absolute() ? std::filesystem::path(p)
                                                   : base / p;
        if (!std::filesystem::exists(full))
          throw IoError(path + ":" + std::to_string(line_no) +
                        ": bag file missing: " + full.string());
      }
    }
    manifest.push_back(std::move(r));
  }
  return manifest;
}

inline std::string resolve_bag_path(const std::string& manifest_path,
                                    const std::string& bag_path) {
  if (bag_path.empty() || std::filesystem::path(bag_path).is_absolute())
    return bag_path;
  return (std::filesystem::path(manifest_path).parent_path() / bag_path)
      .string();
}

/// Loads every referenced bag once and serves per-slide feature matrices.
class BagCache {
 public:
  BagCache() = default;

  void load(const Manifest& manifest, const std::string& manifest_path) {
    for (const SlideRecord& r : manifest) {
      Entry& e = slides_[r.slide_id];
      if (!r.path_10x.empty())
        e.bag10 = read_bag(resolve_bag_path(manifest_path, r.path_10x)).features;
      if (!r.path_20x.empty())
        e.bag20 = read_bag(resolve_bag_path(manifest_path, r.path_20x)).features;
    }
  }

  void insert(const std::string& slide_id, Matrix bag10, Matrix bag20) {
    Entry& e = slides_[slide_id];
    e.bag10 = std::move(bag10);
    e.bag20 = std::move(bag20);
  }

  const Matrix* bag(const std::string& slide_id, ScaleId s) const {
    auto it = slides_.find(slide_id);
    if (it == slides_.end())
      throw IoError("BagCache: unknown slide " + slide_id);
    const Matrix& m = s == ScaleId::x10 ? it->second.bag10 : it->second.bag20;
    return m.empty() ? nullptr : &m;
  }

  std::size_t size() const { return slides_.size(); }

 private:
  struct Entry {
    Matrix bag10, bag20;
  };
  std::map<std::string, Entry> slides_;
};

}  // namespace histomet
