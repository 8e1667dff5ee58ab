#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxelfm/encoder.hpp"
#include "voxelfm/io.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

/// Anything that maps a (HU) volume crop to a fixed-length embedding.
template <class E>
concept Embedder = requires(const E& e, const Volume& v) {
  { e(v) } -> std::convertible_to<std::vector<float>>;
};

/// Backbone embedding of a HU crop: normalize, edge-pad to a multiple of
/// 2^stages, then pool the features.
template <class T = float>
struct BackboneEmbedder {
  const EncoderState<T>* state = nullptr;

  explicit BackboneEmbedder(const EncoderState<T>& s) : state(&s) {}

  std::vector<float> operator()(const Volume& hu) const {
    const auto e = embed(*state, edge_pad_to_multiple(normalize_hu(hu), state->config.downsample()), false);
    return std::vector<float>(e.begin(), e.end());
  }
};

/// Cosine similarity for analytics: bitwise-equal nonzero vectors give
/// exactly 1, everything else u.v / (max(|u|,eps) max(|v|,eps)) clamped to [-1, 1].
inline double cosine(std::span<const float> u, std::span<const float> v, double eps = 1e-8) {
  require(u.size() == v.size(), ErrorCode::dimension_mismatch,
          "cosine: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  bool equal = true;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
    equal = equal && u[i] == v[i];
  }
  if (equal && nu > 0.0) return 1.0;
  return std::clamp(dot / (std::max(std::sqrt(nu), eps) * std::max(std::sqrt(nv), eps)), -1.0, 1.0);
}

/// Window corners along each axis: 0, s, 2s, ... plus a final corner flush
/// with the far edge when the stride does not land there.
struct WindowGrid {
  Index3 patch{};
  Index3 stride{};
  std::array<std::vector<int>, 3> corners;

  Index3 dims() const {
    return {static_cast<int>(corners[0].size()), static_cast<int>(corners[1].size()),
            static_cast<int>(corners[2].size())};
  }
  std::size_t size() const { return voxel_count(dims()); }
  Index3 corner(const Index3& g) const { return {corners[0][g[0]], corners[1][g[1]], corners[2][g[2]]}; }
};

inline WindowGrid window_grid(const Index3& shape, const Index3& patch, const Index3& stride) {
  WindowGrid g{patch, stride, {}};
  for (int a = 0; a < 3; ++a) {
    require(patch[a] >= 1 && patch[a] <= shape[a], ErrorCode::no_valid_placement,
            "window " + to_string(patch) + " does not fit in volume " + to_string(shape));
    require(stride[a] >= 1, ErrorCode::invalid_argument, "stride must be >= 1 on every axis");
    for (int p = 0; p + patch[a] <= shape[a]; p += stride[a]) g.corners[a].push_back(p);
    if (g.corners[a].back() != shape[a] - patch[a]) g.corners[a].push_back(shape[a] - patch[a]);
  }
  return g;
}

/// For every voxel coordinate on each axis, the window whose centre is
/// nearest (ties to the lower window). The grid is a product of per-axis
/// corner lists, so per-axis nearest is also the Euclidean nearest window.
inline std::array<std::vector<int>, 3> nearest_windows(const WindowGrid& grid, const Index3& shape) {
  std::array<std::vector<int>, 3> nearest;
  for (int a = 0; a < 3; ++a) {
    const auto& cs = grid.corners[static_cast<std::size_t>(a)];
    for (int p = 0; p < shape[a]; ++p) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < cs.size(); ++g) {
        const double d = std::abs(p - (cs[g] + 0.5 * (grid.patch[a] - 1)));
        if (d < bd) {
          bd = d;
          best = static_cast<int>(g);
        }
      }
      nearest[static_cast<std::size_t>(a)].push_back(best);
    }
  }
  return nearest;
}

struct EmbeddingRecord {
  std::uint64_t id = 0;
  std::vector<float> vector;
  std::optional<std::int32_t> label;
  std::uint64_t scan_id = 0;
  std::optional<Index3> grid_position;  // window corner in voxels

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

/// One record per window in canonical (z, y, x) order. Ids are the flat
/// window index offset by `first_id`.
template <Embedder E>
std::vector<EmbeddingRecord> sliding_window_embed(const E& embedder, const Volume& volume, const Index3& patch,
                                                  const Index3& stride, std::uint64_t scan_id = 0,
                                                  std::uint64_t first_id = 0) {
  const auto grid = window_grid(volume.shape, patch, stride);
  const auto d = grid.dims();
  std::vector<EmbeddingRecord> out;
  out.reserve(grid.size());
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        const Index3 c = grid.corner({i, j, k});
        EmbeddingRecord r;
        r.id = first_id + out.size();
        r.vector = embedder(crop(volume, c, patch));
        r.scan_id = scan_id;
        r.grid_position = c;
        out.push_back(std::move(r));
      }
  return out;
}

enum class AggregateKind { min, mean, max };

inline AggregateKind aggregate_kind_from_string(std::string_view s) {
  if (s == "min") return AggregateKind::min;
  if (s == "mean") return AggregateKind::mean;
  if (s == "max") return AggregateKind::max;
  throw Error(ErrorCode::invalid_argument, "unknown aggregate '" + std::string(s) + "' (min|mean|max)");
}

inline std::vector<float> aggregate(std::span<const EmbeddingRecord> records, AggregateKind kind) {
  require(!records.empty(), ErrorCode::empty_input, "aggregate needs >= 1 record");
  const std::size_t D = records.front().vector.size();
  std::vector<double> acc(records.front().vector.begin(), records.front().vector.end());
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& v = records[r].vector;
    require(v.size() == D, ErrorCode::dimension_mismatch, "aggregate: mixed embedding dimensions");
    for (std::size_t i = 0; i < D; ++i) {
      switch (kind) {
        case AggregateKind::min: acc[i] = std::min(acc[i], static_cast<double>(v[i])); break;
        case AggregateKind::max: acc[i] = std::max(acc[i], static_cast<double>(v[i])); break;
        case AggregateKind::mean: acc[i] += v[i]; break;
      }
    }
  }
  std::vector<float> out(D);
  for (std::size_t i = 0; i < D; ++i)
    out[i] = static_cast<float>(kind == AggregateKind::mean ? acc[i] / static_cast<double>(records.size()) : acc[i]);
  return out;
}

// Store layout:
//   8 bytes  magic "VFMSTOR1"
//   u64 LE   header length H, then H bytes of JSON {dim, count, metric, fields}
//   per record: u64 id, i32 label (-1 none), u64 scan_id, 3 x i32 grid (-1 none), dim x f32
inline constexpr char kStoreMagic[] = "VFMSTOR1";

struct EmbeddingStore {
  int dim = 0;
  std::vector<EmbeddingRecord> records;

  void add(EmbeddingRecord r) {
    require(static_cast<int>(r.vector.size()) == dim, ErrorCode::dimension_mismatch,
            "record has dimension " + std::to_string(r.vector.size()) + ", store has " + std::to_string(dim));
    for (float x : r.vector) require(std::isfinite(x), ErrorCode::non_finite, "non-finite embedding value");
    records.push_back(std::move(r));
  }

  void validate() const {
    std::vector<std::uint64_t> ids;
    ids.reserve(records.size());
    for (const auto& r : records) {
      require(static_cast<int>(r.vector.size()) == dim, ErrorCode::dimension_mismatch, "record dimension mismatch");
      ids.push_back(r.id);
    }
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorCode::invalid_argument,
            "duplicate record ids in store");
  }

  friend bool operator==(const EmbeddingStore&, const EmbeddingStore&) = default;
};

inline std::string serialize_store(const EmbeddingStore& store) {
  store.validate();
  const json header{{"dim", store.dim},
                    {"count", store.records.size()},
                    {"metric", "cosine"},
                    {"fields", {"id", "label", "scan_id", "grid_position", "vector"}}};
  const std::string h = header.dump();
  std::string out(kStoreMagic, 8);
  le::put<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& r : store.records) {
    le::put<std::uint64_t>(out, r.id);
    le::put<std::int32_t>(out, r.label.value_or(-1));
    le::put<std::uint64_t>(out, r.scan_id);
    for (int a = 0; a < 3; ++a) le::put<std::int32_t>(out, r.grid_position ? (*r.grid_position)[a] : -1);
    for (float x : r.vector) le::put<float>(out, x);
  }
  return out;
}

inline EmbeddingStore deserialize_store(std::string_view bytes) {
  require(bytes.size() >= 16 && bytes.substr(0, 8) == std::string_view(kStoreMagic, 8), ErrorCode::corrupt_file,
          "not an embedding store (bad magic)");
  const auto hlen = le::get<std::uint64_t>(bytes.data() + 8);
  require(16 + hlen <= bytes.size(), ErrorCode::corrupt_file, "truncated store header");
  json header;
  try {
    header = json::parse(bytes.substr(16, hlen));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_file, std::string("bad store header: ") + e.what());
  }
  require(header.contains("dim") && header.contains("count") && header.value("metric", "") == "cosine",
          ErrorCode::corrupt_file, "store header needs dim, count and metric \"cosine\"");
  EmbeddingStore store;
  store.dim = header.at("dim").get<int>();
  const auto count = header.at("count").get<std::uint64_t>();
  require(store.dim >= 1, ErrorCode::corrupt_file, "store dim must be >= 1");
  const std::size_t rec = 8 + 4 + 8 + 12 + 4 * static_cast<std::size_t>(store.dim);
  const std::size_t body = bytes.size() - 16 - hlen;
  require(body == rec * count, ErrorCode::corrupt_file,
          "store body is " + std::to_string(body) + " bytes; header promises " + std::to_string(count) +
              " records of dim " + std::to_string(store.dim));
  const char* p = bytes.data() + 16 + hlen;
  store.records.reserve(count);
  for (std::uint64_t n = 0; n < count; ++n) {
    EmbeddingRecord r;
    r.id = le::get<std::uint64_t>(p);
    const auto label = le::get<std::int32_t>(p + 8);
    if (label >= 0) r.label = label;
    r.scan_id = le::get<std::uint64_t>(p + 12);
    Index3 g{le::get<std::int32_t>(p + 20), le::get<std::int32_t>(p + 24), le::get<std::int32_t>(p + 28)};
    if (g[0] >= 0) r.grid_position = g;
    r.vector.resize(static_cast<std::size_t>(store.dim));
    for (int i = 0; i < store.dim; ++i) r.vector[static_cast<std::size_t>(i)] = le::get<float>(p + 32 + 4 * i);
    p += rec;
    store.add(std::move(r));
  }
  store.validate();
  return store;
}

inline void save_store(const EmbeddingStore& store, const fs::path& path) { write_file(path, serialize_store(store)); }

inline EmbeddingStore load_store(const fs::path& path) { return deserialize_store(read_file(path)); }

struct SearchHit {
  std::uint64_t id = 0;
  double similarity = 0.0;
};

/// Exhaustive cosine ranking; exact ties go to the smaller id.
inline std::vector<SearchHit> topk_search(std::span<const float> query, const EmbeddingStore& store, int k) {
  require(k >= 1, ErrorCode::invalid_argument, "k must be >= 1");
  require(static_cast<int>(query.size()) == store.dim, ErrorCode::dimension_mismatch,
          "query has dimension " + std::to_string(query.size()) + ", store has " + std::to_string(store.dim));
  std::vector<SearchHit> hits;
  hits.reserve(store.records.size());
  for (const auto& r : store.records) hits.push_back({r.id, cosine(query, r.vector)});
  const auto keep = std::min(static_cast<std::size_t>(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    [](const SearchHit& a, const SearchHit& b) {
                      return a.similarity > b.similarity || (a.similarity == b.similarity && a.id < b.id);
                    });
  hits.resize(keep);
  return hits;
}

struct RetrievalScores {
  int k = 0;
  double precision_at_k = 0.0;
  double average_precision_at_k = 0.0;
  double hit_rate = 0.0;
  double recall_at_k = 0.0;
  double f1 = 0.0;
};

/// AP@k sums precision@r over relevant ranks r <= k and divides by
/// min(k, corpus_relevant_count); recall divides by corpus_relevant_count.
inline RetrievalScores retrieval_metrics(std::int32_t query_label, std::span<const std::int32_t> ranked_labels,
                                         std::size_t corpus_relevant_count, int k) {
  require(k >= 1, ErrorCode::invalid_argument, "k must be >= 1");
  require(ranked_labels.size() >= static_cast<std::size_t>(k), ErrorCode::invalid_argument,
          "ranked list shorter than k");
  RetrievalScores s;
  s.k = k;
  int relevant = 0;
  double ap_sum = 0.0;
  for (int r = 1; r <= k; ++r) {
    if (ranked_labels[static_cast<std::size_t>(r - 1)] != query_label) continue;
    ++relevant;
    ap_sum += static_cast<double>(relevant) / r;
  }
  require(static_cast<std::size_t>(relevant) <= corpus_relevant_count, ErrorCode::invalid_argument,
          "more relevant items in the top-k than corpus_relevant_count");
  s.precision_at_k = static_cast<double>(relevant) / k;
  s.hit_rate = relevant > 0 ? 1.0 : 0.0;
  if (corpus_relevant_count > 0) {
    s.average_precision_at_k = ap_sum / static_cast<double>(std::min<std::size_t>(k, corpus_relevant_count));
    s.recall_at_k = static_cast<double>(relevant) / static_cast<double>(corpus_relevant_count);
  }
  const double pr = s.precision_at_k + s.recall_at_k;
  s.f1 = pr > 0.0 ? 2.0 * s.precision_at_k * s.recall_at_k / pr : 0.0;
  return s;
}

}  // namespace voxelfm
