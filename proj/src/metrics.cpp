#include "dgossip/metrics.hpp"

#include <cmath>

#include "dgossip/errors.hpp"

namespace dgossip {

ParamVec mean_params(std::span<const ParamVec> xs) {
  if (xs.empty()) throw ConfigError("mean of zero parameter vectors");
  ParamVec acc = ParamVec::Zero(xs.front().size());
  for (const auto& x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double consensus_distance(std::span<const ParamVec> xs) {
  const ParamVec mean = mean_params(xs);
  double acc = 0.0;
  for (const auto& x : xs) acc += (x - mean).squaredNorm();
  return acc / static_cast<double>(xs.size());
}

double consistency_delta(std::span<const ParamVec> locals, std::span<const ParamVec> mixed) {
  if (locals.size() != mixed.size() || locals.empty()) throw ConfigError("consistency delta needs matching client sets");
  double acc = 0.0;
  for (std::size_t i = 0; i < locals.size(); ++i) acc += (locals[i] - mixed[i]).squaredNorm();
  return acc / static_cast<double>(locals.size());
}

UpdateEnergies update_energies(std::span<const std::vector<ParamVec>> iterates, std::span<const ParamVec> start,
                               const ParamVec& mean_before, const ParamVec& mean_after) {
  if (iterates.size() != start.size() || start.empty()) throw ConfigError("update energies need matching client sets");
  UpdateEnergies out;
  for (std::size_t i = 0; i < start.size(); ++i)
    for (const auto& xk : iterates[i]) out.v1 += (xk - start[i]).squaredNorm();
  out.v1 /= static_cast<double>(start.size());
  out.v2 = (mean_after - mean_before).squaredNorm();
  return out;
}

EvalResult eval_model(const ModelSpec& spec, const ParamVec& x, const LabeledDataset& test) {
  EvalResult out;
  if (test.size() == 0) return out;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    const Eigen::VectorXd scores = predict_scores(spec, x, test.row(r));
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.size(); ++c)
      if (scores[c] > scores[best]) best = c;
    const int label = test.labels[r];
    if (best == label) ++correct;
    const double top = scores.maxCoeff();
    out.loss += std::log((scores.array() - top).exp().sum()) + top - scores[label];
  }
  out.loss /= static_cast<double>(test.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  return out;
}

std::vector<TargetHit> rounds_to_target(std::span<const RoundRecord> series, std::span<const double> targets) {
  std::vector<TargetHit> hits;
  for (double target : targets) {
    TargetHit hit{target, std::nullopt};
    for (const auto& rec : series) {
      if (rec.test_acc >= target) {
        hit.round = rec.t;
        break;
      }
    }
    hits.push_back(hit);
  }
  return hits;
}

}  // namespace dgossip
