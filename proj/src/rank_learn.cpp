#include "dobi/rank_learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "dobi/kernels.hpp"

namespace dobi {

void CompressionTarget::validate() const {
  if (!(r_target > 0.0) || r_target > 1.0)
    throw value_error("CompressionTarget: r_target must lie in (0, 1]");
  if (!(ratio_penalty_weight > 0.0))
    throw value_error("CompressionTarget: penalty weight must be positive");
}

namespace {
double clamp_k(double k, index m, index n) {
  return std::clamp(k, 0.0, static_cast<double>(std::min(m, n)));
}
}  // namespace

std::vector<double> smooth_mask(const std::vector<double>& s, const SmoothTruncation& t) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double pos = static_cast<double>(i + 1);  // 1-based index
    out[i] = s[i] * (0.5 * std::tanh(t.beta * (t.k - pos)) + 0.5);
  }
  return out;
}

std::vector<double> smooth_mask_dk(const std::vector<double>& s, const SmoothTruncation& t) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double pos = static_cast<double>(i + 1);
    const double th = std::tanh(t.beta * (t.k - pos));
    out[i] = s[i] * 0.5 * t.beta * (1.0 - th * th);  // sech² = 1 - tanh²
  }
  return out;
}

DenseMatrix truncate_activation(const DenseMatrix& a, const SmoothTruncation& t) {
  require_finite(a, "truncate_activation");
  SvdFactors f = svd_full(a);
  SmoothTruncation tt = t;
  tt.k = clamp_k(t.k, a.rows(), a.cols());
  const std::vector<double> masked = smooth_mask(f.s, tt);
  return matmul(scale_cols(f.u, masked), f.vt);
}

namespace {
void require_k_range(index m, index n, double k, const char* op) {
  if (k < 0.0 || k > static_cast<double>(std::min(m, n)))
    throw value_error(std::string(op) + ": k out of [0, min(m,n)]");
}
}  // namespace

double ratio_traditional(index m, index n, double k) {
  require_k_range(m, n, k, "ratio_traditional");
  return k * static_cast<double>(m + n) / (static_cast<double>(m) * static_cast<double>(n));
}

double ratio_remapped(index m, index n, double k) {
  require_k_range(m, n, k, "ratio_remapped");
  return k * static_cast<double>(std::max(m, n)) / (static_cast<double>(m) * static_cast<double>(n));
}

index invert_ratio_remapped(index m, index n, double r) {
  const double k = r * static_cast<double>(m) * static_cast<double>(n) /
                   static_cast<double>(std::max(m, n));
  const auto rounded = static_cast<index>(std::llround(k));
  if (rounded < 0 || rounded > std::min(m, n))
    throw value_error("invert_ratio_remapped: ratio out of range");
  return rounded;
}

namespace {
double layer_cost(index m, index n, double k, RatioCounting c) {
  return c == RatioCounting::remapped ? k * static_cast<double>(std::max(m, n))
                                      : k * static_cast<double>(m + n);
}

double layer_cost_slope(index m, index n, RatioCounting c) {
  return c == RatioCounting::remapped ? static_cast<double>(std::max(m, n))
                                      : static_cast<double>(m + n);
}

template <typename Alloc, typename GetK>
double model_ratio_impl(const Alloc& alloc, RatioCounting c, GetK get_k) {
  double cost = 0.0, dense = 0.0;
  for (const auto& e : alloc.entries) {
    cost += layer_cost(e.m, e.n, get_k(e), c);
    dense += static_cast<double>(e.m) * static_cast<double>(e.n);
  }
  if (dense == 0.0) return 0.0;
  return cost / dense;
}
}  // namespace

double model_ratio(const RankAllocation& alloc, RatioCounting counting) {
  return model_ratio_impl(alloc, counting, [](const RankEntry& e) {
    return clamp_k(e.trunc.k, e.m, e.n);
  });
}

double model_ratio(const IntAllocation& alloc, RatioCounting counting) {
  return model_ratio_impl(alloc, counting, [](const IntRankEntry& e) {
    return static_cast<double>(e.k);
  });
}

std::vector<double> model_ratio_grad(const RankAllocation& alloc, RatioCounting counting) {
  double dense = 0.0;
  for (const auto& e : alloc.entries) dense += static_cast<double>(e.m) * static_cast<double>(e.n);
  std::vector<double> g(alloc.entries.size(), 0.0);
  if (dense == 0.0) return g;
  for (std::size_t i = 0; i < alloc.entries.size(); ++i)
    g[i] = layer_cost_slope(alloc.entries[i].m, alloc.entries[i].n, counting) / dense;
  return g;
}

LossBreakdown multi_objective_loss(double task_loss, const RankAllocation& alloc,
                                   const CompressionTarget& target, RatioCounting counting) {
  target.validate();
  if (!std::isfinite(task_loss)) throw numeric_error("multi_objective_loss: non-finite task loss");
  LossBreakdown b;
  b.task_loss = task_loss;
  b.ratio_now = model_ratio(alloc, counting);
  b.penalty = target.ratio_penalty_weight * std::abs(b.ratio_now - target.r_target);
  b.total = b.task_loss + b.penalty;
  return b;
}

std::vector<double> penalty_grad(const RankAllocation& alloc, const CompressionTarget& target,
                                 RatioCounting counting) {
  const double delta = model_ratio(alloc, counting) - target.r_target;
  const double sgn = (delta > 0.0) ? 1.0 : (delta < 0.0 ? -1.0 : 0.0);
  std::vector<double> g = model_ratio_grad(alloc, counting);
  for (double& v : g) v *= target.ratio_penalty_weight * sgn;
  return g;
}

IntAllocation round_ranks(const RankAllocation& alloc, const CompressionTarget& target,
                          RatioCounting counting) {
  target.validate();
  IntAllocation out;
  std::vector<double> residual(alloc.entries.size());
  for (std::size_t i = 0; i < alloc.entries.size(); ++i) {
    const auto& e = alloc.entries[i];
    const index kmin = std::min(e.m, e.n);
    const double kc = clamp_k(e.trunc.k, e.m, e.n);
    index k = static_cast<index>(std::llround(kc));
    k = std::clamp<index>(k, 1, kmin);
    residual[i] = std::abs(kc - static_cast<double>(k));
    out.entries.push_back(IntRankEntry{e.layer, k, e.m, e.n});
  }

  // Greedy ±1 repair: keep taking the single step that most reduces the
  // gap to the target; among equal gaps prefer the layer whose continuous
  // k was closest to a boundary anyway.
  const double eps = 1e-15;
  while (true) {
    const double gap = std::abs(model_ratio(out, counting) - target.r_target);
    double best_gap = gap;
    std::size_t best_layer = out.entries.size();
    index best_delta = 0;
    double best_residual = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < out.entries.size(); ++i) {
      for (index delta : {index{-1}, index{1}}) {
        auto& e = out.entries[i];
        const index nk = e.k + delta;
        if (nk < 1 || nk > std::min(e.m, e.n)) continue;
        e.k = nk;
        const double g = std::abs(model_ratio(out, counting) - target.r_target);
        e.k = nk - delta;
        const bool better = g < best_gap - eps;
        const bool tie = std::abs(g - best_gap) <= eps && residual[i] < best_residual;
        if (better || (tie && best_layer < out.entries.size())) {
          best_gap = g;
          best_layer = i;
          best_delta = delta;
          best_residual = residual[i];
        }
      }
    }
    if (best_layer >= out.entries.size()) break;
    out.entries[best_layer].k += best_delta;
  }
  return out;
}

void AdamOptimizer::step(std::vector<double>& params, const std::vector<double>& grads,
                         double lr_scale) {
  if (params.size() != grads.size()) throw shape_error("AdamOptimizer: size mismatch");
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * lr_scale * mhat / (std::sqrt(vhat) + eps);
  }
}

double cosine_lr(long step, long total_steps, double base_lr) {
  if (total_steps <= 1) return base_lr;
  const double x = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

namespace {
nlohmann::ordered_json entry_json(const std::string& layer, double k, index m, index n) {
  nlohmann::ordered_json j;
  j["k"] = k;
  j["m"] = m;
  j["n"] = n;
  return j;
}
}  // namespace

std::string allocation_to_json(const RankAllocation& alloc) {
  nlohmann::ordered_json j;
  for (const auto& e : alloc.entries) j[e.layer] = entry_json(e.layer, e.trunc.k, e.m, e.n);
  return j.dump(2);
}

std::string allocation_to_json(const IntAllocation& alloc) {
  nlohmann::ordered_json j;
  for (const auto& e : alloc.entries)
    j[e.layer] = entry_json(e.layer, static_cast<double>(e.k), e.m, e.n);
  return j.dump(2);
}

RankAllocation allocation_from_json(const std::string& text) {
  RankAllocation out;
  const auto j = nlohmann::ordered_json::parse(text);
  for (const auto& [name, v] : j.items()) {
    RankEntry e;
    e.layer = name;
    e.trunc.k = v.at("k").get<double>();
    e.m = v.at("m").get<index>();
    e.n = v.at("n").get<index>();
    out.entries.push_back(std::move(e));
  }
  return out;
}

IntAllocation int_allocation_from_json(const std::string& text) {
  IntAllocation out;
  const auto j = nlohmann::ordered_json::parse(text);
  for (const auto& [name, v] : j.items()) {
    IntRankEntry e;
    e.layer = name;
    e.k = static_cast<index>(std::llround(v.at("k").get<double>()));
    e.m = v.at("m").get<index>();
    e.n = v.at("n").get<index>();
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace dobi
