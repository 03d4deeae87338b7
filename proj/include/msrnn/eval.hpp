#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "msrnn/common.hpp"

namespace msrnn {

struct RankCandidate {
  std::size_t id = 0;
  double score = 0.0;
  int relevance = 0;  // 1 for the positive answer
};

// One query's candidate list. The QA protocol has exactly one positive per
// list; the metrics use the first positive in input order.
struct RankList {
  std::size_t query_id = 0;
  std::vector<RankCandidate> candidates;
};

namespace detail {
// Rank of the first positive, with score ties broken by stable input order.
inline std::size_t positive_rank(const RankList& list) {
  std::size_t pos = list.candidates.size();
  for (std::size_t i = 0; i < list.candidates.size(); ++i) {
    if (list.candidates[i].relevance != 0) {
      pos = i;
      break;
    }
  }
  if (pos == list.candidates.size()) {
    throw InputError("rank list " + std::to_string(list.query_id) + " has no positive");
  }
  std::size_t rank = 1;
  const double s = list.candidates[pos].score;
  for (std::size_t i = 0; i < list.candidates.size(); ++i) {
    if (i == pos) continue;
    if (list.candidates[i].score > s || (list.candidates[i].score == s && i < pos)) ++rank;
  }
  return rank;
}
}  // namespace detail

inline double p_at_1(const std::vector<RankList>& lists) {
  if (lists.empty()) throw InputError("p_at_1: no rank lists");
  std::size_t hits = 0;
  for (const auto& l : lists) {
    if (detail::positive_rank(l) == 1) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(lists.size());
}

inline double mrr(const std::vector<RankList>& lists) {
  if (lists.empty()) throw InputError("mrr: no rank lists");
  double total = 0.0;
  for (const auto& l : lists) {
    total += 1.0 / static_cast<double>(detail::positive_rank(l));
  }
  return total / static_cast<double>(lists.size());
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw InputError("accuracy: prediction/label length mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct ScoredInstance {
  std::size_t query_id = 0;
  std::size_t id = 0;
  double score = 0.0;
  int relevance = 0;
};

// Group scored instances by query id (stable in input order) and validate the
// one-positive-per-list contract.
inline std::vector<RankList> build_ranklists(const std::vector<ScoredInstance>& scored) {
  std::vector<RankList> lists;
  for (const auto& s : scored) {
    RankList* target = nullptr;
    for (auto& l : lists) {
      if (l.query_id == s.query_id) {
        target = &l;
        break;
      }
    }
    if (target == nullptr) {
      lists.push_back(RankList{s.query_id, {}});
      target = &lists.back();
    }
    target->candidates.push_back({s.id, s.score, s.relevance});
  }
  for (const auto& l : lists) {
    std::size_t positives = 0;
    for (const auto& c : l.candidates) positives += c.relevance != 0 ? 1 : 0;
    if (positives != 1) {
      throw InputError("rank list " + std::to_string(l.query_id) + " has " +
                       std::to_string(positives) + " positives, expected exactly 1");
    }
  }
  return lists;
}

// ---------------------------------------------------------------------------
// Regression metrics

inline double mean_squared_error(const std::vector<double>& pred,
                                 const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw InputError("mean_squared_error: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

inline double mean_absolute_error(const std::vector<double>& pred,
                                  const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw InputError("mean_absolute_error: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw InputError("pearson: need two equal-length series");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace msrnn
