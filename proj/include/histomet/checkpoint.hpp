#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "histomet/errors.hpp"
#include "histomet/model.hpp"

namespace histomet {

enum class ModuleKind : int { A = 1, B = 2 };

inline const char* module_name(ModuleKind m) {
  return m == ModuleKind::A ? "a" : "b";
}

// Checkpoint container, little-endian:
//   magic "HMCK", version u16 = 1, module u8, scales u8,
//   flags u8 (condensation/alignment/prompts/frozen ablations), baseline u8,
//   fold i32, seed u64,
//   feature_dim/prototype/concept/class counts u32 each,
//   temperature f64, ln_eps f64, normalize_compactness u8,
//   then a count-prefixed list of named matrices (name, rows, cols, f64 data).
inline constexpr char kCheckpointMagic[4] = {'H', 'M', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModuleKind module = ModuleKind::A;
  int fold = -1;
  std::uint64_t seed = 0;
  ModelParams params;
};

namespace detail {

inline void put_u8(std::string& o, std::uint8_t v) { o.push_back(char(v)); }
inline void put_u16ck(std::string& o, std::uint16_t v) {
  o.push_back(char(v & 0xff));
  o.push_back(char(v >> 8));
}
inline void put_u32ck(std::string& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64ck(std::string& o, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) o.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& o, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64ck(o, bits);
}
inline void put_matrix(std::string& o, const std::string& name,
                       const Matrix& m) {
  put_u32ck(o, std::uint32_t(name.size()));
  o.append(name);
  put_u32ck(o, std::uint32_t(m.rows()));
  put_u32ck(o, std::uint32_t(m.cols()));
  for (std::size_t k = 0; k < m.size(); ++k) put_f64(o, m[k]);
}

struct CkReader {
  const std::string& buf;
  const std::string& path;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw IoError(path + ": truncated checkpoint while reading " + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return std::uint8_t(buf[pos++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = std::uint8_t(buf[pos]) |
                      std::uint16_t(std::uint8_t(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  Matrix matrix(const char* what) {
    const std::uint32_t rows = u32(what);
    const std::uint32_t cols = u32(what);
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = f64(what);
    return m;
  }
};

/// Every matrix of the module, learnable or not, in a fixed order.
template <typename Params, typename MatrixPtr>
inline std::vector<std::pair<std::string, MatrixPtr>> matrix_list(Params& p) {
  std::vector<std::pair<std::string, MatrixPtr>> out;
  out.push_back({"queries", &p.queries});
  for (ScaleId s : {ScaleId::x10, ScaleId::x20}) {
    const std::string tag = scale_name(s);
    auto& sp = p.at(s);
    out.push_back({tag + "/wq", &sp.cond.wq});
    out.push_back({tag + "/wk", &sp.cond.wk});
    out.push_back({tag + "/wv", &sp.cond.wv});
    out.push_back({tag + "/ln_gain", &sp.cond.ln_gain});
    out.push_back({tag + "/ln_bias", &sp.cond.ln_bias});
    out.push_back({tag + "/concepts", &sp.concepts});
    out.push_back({tag + "/prompts", &sp.prompts});
    out.push_back({tag + "/cls_w", &sp.cls_w});
    out.push_back({tag + "/cls_b", &sp.cls_b});
  }
  return out;
}

inline std::vector<std::pair<std::string, Matrix*>> all_matrices(
    ModelParams& p) {
  return matrix_list<ModelParams, Matrix*>(p);
}

inline std::vector<std::pair<std::string, const Matrix*>> all_matrices(
    const ModelParams& p) {
  return matrix_list<const ModelParams, const Matrix*>(p);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u16ck(out, kCheckpointVersion);
  detail::put_u8(out, std::uint8_t(int(ck.module)));
  const ModelConfig& c = ck.params.config;
  detail::put_u8(out, std::uint8_t(int(c.scales)));
  std::uint8_t flags = 0;
  flags |= c.no_condensation ? 1 : 0;
  flags |= c.no_concept_alignment ? 2 : 0;
  flags |= c.no_class_prompts ? 4 : 0;
  flags |= c.freeze_text_embeddings ? 8 : 0;
  detail::put_u8(out, flags);
  detail::put_u8(out, std::uint8_t(int(c.baseline)));
  detail::put_u32ck(out, std::uint32_t(ck.fold));
  detail::put_u64ck(out, ck.seed);
  detail::put_u32ck(out, std::uint32_t(c.feature_dim));
  detail::put_u32ck(out, std::uint32_t(c.prototype_count));
  detail::put_u32ck(out, std::uint32_t(c.concept_count));
  detail::put_u32ck(out, std::uint32_t(c.class_count));
  detail::put_f64(out, c.temperature);
  detail::put_f64(out, c.ln_eps);
  detail::put_u8(out, c.normalize_compactness ? 1 : 0);

  auto mats = detail::all_matrices(ck.params);
  detail::put_u32ck(out, std::uint32_t(mats.size()));
  for (const auto& [name, mat] : mats) detail::put_matrix(out, name, *mat);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError(path + ": write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open checkpoint");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  detail::CkReader r{buf, path};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw IoError(path + ": bad magic, not a checkpoint");
  r.pos = 4;
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  Checkpoint ck;
  const std::uint8_t module = r.u8("module");
  if (module != 1 && module != 2)
    throw IoError(path + ": bad module code");
  ck.module = ModuleKind(int(module));
  ModelConfig c;
  c.scales = ScaleMode(int(r.u8("scales")));
  const std::uint8_t flags = r.u8("flags");
  c.no_condensation = flags & 1;
  c.no_concept_alignment = flags & 2;
  c.no_class_prompts = flags & 4;
  c.freeze_text_embeddings = flags & 8;
  c.baseline = Baseline(int(r.u8("baseline")));
  ck.fold = std::int32_t(r.u32("fold"));
  ck.seed = r.u64("seed");
  c.feature_dim = r.u32("feature_dim");
  c.prototype_count = r.u32("prototype_count");
  c.concept_count = r.u32("concept_count");
  c.class_count = r.u32("class_count");
  c.temperature = r.f64("temperature");
  c.ln_eps = r.f64("ln_eps");
  c.normalize_compactness = r.u8("normalize_compactness") != 0;
  ck.params.config = c;

  const std::uint32_t count = r.u32("matrix count");
  auto mats = detail::all_matrices(ck.params);
  if (count != mats.size())
    throw IoError(path + ": unexpected matrix count " + std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("matrix name");
    const std::string name = r.str(name_len, "matrix name");
    if (name != mats[i].first)
      throw IoError(path + ": matrix order mismatch, expected " +
                    mats[i].first + " got " + name);
    *mats[i].second = r.matrix(name.c_str());
  }
  if (r.pos != buf.size())
    throw IoError(path + ": trailing bytes after checkpoint payload");
  return ck;
}

}  // namespace histomet
