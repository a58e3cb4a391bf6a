#include "seqnas/space.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "seqnas/util.hpp"

namespace seqnas {

void validate_space_config(const SpaceConfig& cfg) {
  if (cfg.depths.empty() || cfg.widths.empty() || cfg.modules.empty())
    throw std::invalid_argument("space config needs depths, widths and modules");
  if (cfg.depths.size() != cfg.depth_targets.size())
    throw std::invalid_argument("depth_targets must parallel depths");
  for (int d : cfg.depths)
    if (d < 1) throw std::invalid_argument("depths must be >= 1");
  for (int k : cfg.depth_targets)
    if (k < 1) throw std::invalid_argument("depth targets must be >= 1");
  if (!(cfg.tau_dist > 0.0)) throw std::invalid_argument("tau_dist must be > 0");
  for (int w : cfg.widths)
    if (w <= 0) throw std::invalid_argument("widths must be positive");
  if (!std::is_sorted(cfg.widths.begin(), cfg.widths.end()))
    throw std::invalid_argument("widths must be sorted ascending");
  const bool h0_ok = cfg.h0 <= cfg.widths.front() ||
                     std::find(cfg.widths.begin(), cfg.widths.end(), cfg.h0) != cfg.widths.end();
  if (cfg.h0 <= 0 || !h0_ok)
    throw std::invalid_argument("h0 must be <= min(widths) or one of the widths");
  std::set<BlockKind> kinds(cfg.modules.begin(), cfg.modules.end());
  if (kinds.size() != cfg.modules.size())
    throw std::invalid_argument("duplicate module kinds in config");
}

std::vector<std::vector<int>> enum_dim_paths(const SpaceConfig& cfg, int d) {
  if (std::find(cfg.depths.begin(), cfg.depths.end(), d) == cfg.depths.end())
    throw std::invalid_argument("depth not in config");
  std::vector<int> eligible;
  for (int w : cfg.widths)
    if (w >= cfg.h0) eligible.push_back(w);
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<size_t>(d));
  // non-decreasing tuples in lexicographic order
  std::function<void(int, size_t)> rec = [&](int pos, size_t lo) {
    if (pos == d) {
      out.push_back(cur);
      return;
    }
    for (size_t i = lo; i < eligible.size(); ++i) {
      cur[static_cast<size_t>(pos)] = eligible[i];
      rec(pos + 1, i);
    }
  };
  rec(0, 0);
  return out;
}

double log_distance(const std::vector<int>& ha, const std::vector<int>& hb, int h0) {
  if (ha.size() != hb.size()) throw std::invalid_argument("log_distance: depth mismatch");
  if (h0 <= 0) throw std::invalid_argument("log_distance: non-positive dim");
  double s = 0.0;  // shared h0 term is identically zero but belongs to the sum
  for (size_t i = 0; i < ha.size(); ++i) {
    if (ha[i] <= 0 || hb[i] <= 0) throw std::invalid_argument("log_distance: non-positive dim");
    const double d = std::log2(static_cast<double>(ha[i])) - std::log2(static_cast<double>(hb[i]));
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<std::vector<int>> greedy_select(std::vector<std::vector<int>> paths, double tau,
                                            int h0) {
  std::sort(paths.begin(), paths.end());
  std::vector<std::vector<int>> kept;
  for (const auto& p : paths) {
    bool ok = true;
    for (const auto& q : kept)
      if (log_distance(p, q, h0) < tau) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(p);
  }
  return kept;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// per cluster: member indices sorted ascending by distance to the centroid
std::vector<std::vector<int>> kmeans_clusters(const std::vector<std::vector<double>>& items,
                                              int k, uint64_t seed) {
  const int n = static_cast<int>(items.size());
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  {
    std::set<std::vector<double>> distinct(items.begin(), items.end());
    if (static_cast<size_t>(k) > distinct.size())
      throw std::invalid_argument("kmeans: k exceeds distinct items");
  }
  Rng rng(seed);

  // k-means++ seeding; zero-weight (already chosen) points are never re-picked
  std::vector<std::vector<double>> centers;
  centers.push_back(items[rng.uniform_index(static_cast<size_t>(n))]);
  std::vector<double> d2(static_cast<size_t>(n));
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(items[static_cast<size_t>(i)], c));
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    int pick = -1;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      for (int i = 0; i < n; ++i) {
        cum += d2[static_cast<size_t>(i)];
        if (cum > r) {
          pick = i;
          break;
        }
      }
    }
    if (pick < 0) {  // all remaining mass at chosen points; take the first unused distinct item
      for (int i = 0; i < n && pick < 0; ++i) {
        bool used = false;
        for (const auto& c : centers) used = used || c == items[static_cast<size_t>(i)];
        if (!used) pick = i;
      }
    }
    if (pick < 0) pick = 0;
    centers.push_back(items[static_cast<size_t>(pick)]);
  }

  std::vector<int> assign(static_cast<size_t>(n), 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int bc = 0;
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(items[static_cast<size_t>(i)], centers[static_cast<size_t>(c)]);
        if (d < best) {
          best = d;
          bc = c;
        }
      }
      assign[static_cast<size_t>(i)] = bc;
    }
    // reseed empty clusters to the point farthest from its assigned center
    for (int round = 0; round < k; ++round) {
      std::vector<int> count(static_cast<size_t>(k), 0);
      for (int a : assign) ++count[static_cast<size_t>(a)];
      int empty = -1;
      for (int c = 0; c < k; ++c)
        if (count[static_cast<size_t>(c)] == 0) {
          empty = c;
          break;
        }
      if (empty < 0) break;
      int far = 0;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        const double d =
            sq_dist(items[static_cast<size_t>(i)], centers[static_cast<size_t>(assign[static_cast<size_t>(i)])]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers[static_cast<size_t>(empty)] = items[static_cast<size_t>(far)];
      assign[static_cast<size_t>(far)] = empty;
    }
    for (int c = 0; c < k; ++c) {
      std::fill(centers[static_cast<size_t>(c)].begin(), centers[static_cast<size_t>(c)].end(), 0.0);
    }
    std::vector<int> count(static_cast<size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      const int c = assign[static_cast<size_t>(i)];
      ++count[static_cast<size_t>(c)];
      for (size_t j = 0; j < items[static_cast<size_t>(i)].size(); ++j)
        centers[static_cast<size_t>(c)][j] += items[static_cast<size_t>(i)][j];
    }
    for (int c = 0; c < k; ++c)
      for (auto& v : centers[static_cast<size_t>(c)]) v /= std::max(count[static_cast<size_t>(c)], 1);
    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
      inertia += sq_dist(items[static_cast<size_t>(i)],
                         centers[static_cast<size_t>(assign[static_cast<size_t>(i)])]);
    if (std::abs(prev_inertia - inertia) < 1e-9) break;
    prev_inertia = inertia;
  }

  std::vector<std::vector<int>> ranked(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) ranked[static_cast<size_t>(assign[static_cast<size_t>(i)])].push_back(i);
  for (int c = 0; c < k; ++c) {
    auto& members = ranked[static_cast<size_t>(c)];
    std::vector<double> dist(members.size());
    for (size_t m = 0; m < members.size(); ++m)
      dist[m] = sq_dist(items[static_cast<size_t>(members[m])], centers[static_cast<size_t>(c)]);
    std::vector<size_t> order(members.size());
    for (size_t m = 0; m < order.size(); ++m) order[m] = m;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (dist[a] != dist[b]) return dist[a] < dist[b];
      return members[a] < members[b];
    });
    std::vector<int> sorted;
    for (size_t m : order) sorted.push_back(members[m]);
    members = std::move(sorted);
  }
  return ranked;
}

std::vector<std::vector<BlockKind>> enum_type_paths(const SpaceConfig& cfg, int d) {
  std::vector<std::vector<BlockKind>> out;
  std::vector<size_t> digits(static_cast<size_t>(d), 0);
  const size_t base = cfg.modules.size();
  while (true) {
    std::vector<BlockKind> t;
    for (size_t dig : digits) t.push_back(cfg.modules[dig]);
    out.push_back(std::move(t));
    int pos = d - 1;
    while (pos >= 0) {
      if (++digits[static_cast<size_t>(pos)] < base) break;
      digits[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return out;
}

std::vector<double> encode_dims(const std::vector<int>& dims) {
  std::vector<double> v;
  v.reserve(dims.size());
  for (int h : dims) v.push_back(std::log2(static_cast<double>(h)));
  return v;
}

std::vector<double> encode_types(const std::vector<BlockKind>& types, const SpaceConfig& cfg) {
  std::vector<double> v(types.size() * cfg.modules.size(), 0.0);
  for (size_t i = 0; i < types.size(); ++i) {
    const auto it = std::find(cfg.modules.begin(), cfg.modules.end(), types[i]);
    v[i * cfg.modules.size() + static_cast<size_t>(it - cfg.modules.begin())] = 1.0;
  }
  return v;
}

}  // namespace

std::vector<int> kmeans_reduce(const std::vector<std::vector<double>>& items, int k,
                               uint64_t seed) {
  auto ranked = kmeans_clusters(items, k, seed);
  std::vector<int> reps;
  reps.reserve(static_cast<size_t>(k));
  for (const auto& members : ranked) reps.push_back(members.front());
  return reps;
}

std::vector<Path> compose_space(const SpaceConfig& cfg) {
  validate_space_config(cfg);
  std::vector<Path> all;
  for (size_t di = 0; di < cfg.depths.size(); ++di) {
    const int d = cfg.depths[di];
    const int target = cfg.depth_targets[di];

    auto dim_pool = greedy_select(enum_dim_paths(cfg, d), cfg.tau_dist, cfg.h0);
    auto type_pool = enum_type_paths(cfg, d);
    const int64_t combos = static_cast<int64_t>(dim_pool.size()) * static_cast<int64_t>(type_pool.size());
    if (target > combos)
      throw std::invalid_argument("depth " + std::to_string(d) + " target " +
                                  std::to_string(target) + " exceeds " + std::to_string(combos) +
                                  " available combinations");

    const int nd = std::min<int>(target, static_cast<int>(dim_pool.size()));
    const int nt = std::min<int>(target, static_cast<int>(type_pool.size()));
    std::vector<std::vector<double>> dim_enc, type_enc;
    for (const auto& p : dim_pool) dim_enc.push_back(encode_dims(p));
    for (const auto& t : type_pool) type_enc.push_back(encode_types(t, cfg));
    const uint64_t salt = static_cast<uint64_t>(d) * 0x9e3779b97f4a7c15ULL;
    auto dim_clusters = kmeans_clusters(dim_enc, nd, cfg.seed ^ salt);
    auto type_clusters = kmeans_clusters(type_enc, nt, cfg.seed ^ salt ^ 1);

    std::set<std::pair<std::vector<int>, std::vector<BlockKind>>> used;
    std::vector<Path> depth_paths;
    for (int i = 0; i < target; ++i) {
      const auto& dmem = dim_clusters[static_cast<size_t>(i % nd)];
      const auto& tmem = type_clusters[static_cast<size_t>(i % nt)];
      int pick_d = -1, pick_t = -1;
      // primary pair, then next-nearest candidates within the two clusters
      for (size_t tm = 0; tm < tmem.size() && pick_d < 0; ++tm)
        for (size_t dm = 0; dm < dmem.size(); ++dm)
          if (!used.count({dim_pool[static_cast<size_t>(dmem[dm])],
                           type_pool[static_cast<size_t>(tmem[tm])]})) {
            pick_d = dmem[dm];
            pick_t = tmem[tm];
            break;
          }
      if (pick_d < 0) {  // both clusters exhausted; take the first unused combination
        for (size_t ti = 0; ti < type_pool.size() && pick_d < 0; ++ti)
          for (size_t dj = 0; dj < dim_pool.size(); ++dj)
            if (!used.count({dim_pool[dj], type_pool[ti]})) {
              pick_d = static_cast<int>(dj);
              pick_t = static_cast<int>(ti);
              break;
            }
      }
      Path p;
      p.depth = d;
      p.dims = dim_pool[static_cast<size_t>(pick_d)];
      p.types = type_pool[static_cast<size_t>(pick_t)];
      p.path_id = "d" + std::to_string(d) + "-p" + std::to_string(i);
      used.insert({p.dims, p.types});
      depth_paths.push_back(std::move(p));
    }
    for (auto& p : depth_paths) all.push_back(std::move(p));
  }
  return all;
}

SpaceStats space_stats(const SpaceConfig& cfg) {
  validate_space_config(cfg);
  SpaceStats stats;
  for (size_t di = 0; di < cfg.depths.size(); ++di) {
    const int d = cfg.depths[di];
    DepthStats ds;
    ds.depth = d;
    ds.dim_tuples = static_cast<int64_t>(enum_dim_paths(cfg, d).size());
    ds.type_tuples = 1;
    for (int i = 0; i < d; ++i) ds.type_tuples *= static_cast<int64_t>(cfg.modules.size());
    ds.raw_paths = ds.dim_tuples * ds.type_tuples;
    stats.raw_total += ds.raw_paths;
    stats.composed_total += cfg.depth_targets[di];
    stats.per_depth.push_back(ds);
  }
  return stats;
}

std::string space_to_json(const std::vector<Path>& paths) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : paths) {
    nlohmann::json j;
    j["path_id"] = p.path_id;
    j["depth"] = p.depth;
    j["types"] = nlohmann::json::array();
    for (auto t : p.types) j["types"].push_back(block_kind_name(t));
    j["dims"] = p.dims;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::vector<Path> space_from_json(const std::string& text) {
  nlohmann::json arr = nlohmann::json::parse(text);
  std::vector<Path> paths;
  for (const auto& j : arr) {
    Path p;
    p.path_id = j.at("path_id").get<std::string>();
    p.depth = j.at("depth").get<int>();
    for (const auto& t : j.at("types")) p.types.push_back(block_kind_from_name(t.get<std::string>()));
    p.dims = j.at("dims").get<std::vector<int>>();
    if (static_cast<int>(p.types.size()) != p.depth || static_cast<int>(p.dims.size()) != p.depth)
      throw std::runtime_error("path " + p.path_id + " has inconsistent depth");
    paths.push_back(std::move(p));
  }
  return paths;
}

}  // namespace seqnas
