#include "dgossip/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string_view>

#include <fmt/format.h>

#include "dgossip/errors.hpp"
#include "dgossip/rng.hpp"

namespace dgossip {

namespace {

constexpr std::size_t kMaxCoverageRetries = 10000;

std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return by_class;
}

void sort_assignments(PartitionPlan& plan) {
  for (auto& a : plan.assignments) std::sort(a.begin(), a.end());
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

void LabeledDataset::validate() const {
  if (labels.empty()) throw ConfigError("empty dataset");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ConfigError("feature rows and labels disagree in count");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw ConfigError(fmt::format("label {} outside [0, {})", y, num_classes));
}

LabeledDataset generate_synthetic(int num_classes, std::size_t dim, std::size_t per_class,
                                  double cluster_spread, std::uint64_t seed) {
  return generate_synthetic(num_classes, dim, per_class, cluster_spread, seed, seed);
}

LabeledDataset generate_synthetic(int num_classes, std::size_t dim, std::size_t per_class,
                                  double cluster_spread, std::uint64_t mean_seed,
                                  std::uint64_t sample_seed) {
  if (num_classes < 2 || dim < 1 || per_class < 1)
    throw ConfigError("synthetic data needs classes >= 2, dim >= 1, per_class >= 1");
  const auto d = static_cast<Eigen::Index>(dim);
  std::normal_distribution<double> normal(0.0, 1.0);

  Rng mean_rng = make_rng(mean_seed, {tag(Stream::Data), 0});
  Eigen::MatrixXd means(num_classes, d);
  for (int c = 0; c < num_classes; ++c) {
    Eigen::VectorXd v(d);
    do {
      for (Eigen::Index j = 0; j < d; ++j) v[j] = normal(mean_rng);
    } while (v.norm() == 0.0);
    means.row(c) = 2.0 * v.transpose() / v.norm();
  }

  Rng rng = make_rng(sample_seed, {tag(Stream::Data), 1});
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.name = "synthetic";
  ds.features.resize(static_cast<Eigen::Index>(per_class) * num_classes, d);
  ds.labels.reserve(per_class * static_cast<std::size_t>(num_classes));
  Eigen::Index r = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++r) {
      for (Eigen::Index j = 0; j < d; ++j) ds.features(r, j) = means(c, j) + cluster_spread * normal(rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

PartitionPlan partition_iid(const LabeledDataset& ds, std::size_t m, std::uint64_t seed) {
  if (m < 1) throw ConfigError("partition needs at least one client");
  if (ds.size() < m)
    throw ConfigError(fmt::format("dataset of {} samples cannot cover {} clients", ds.size(), m));
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, {tag(Stream::Partition), 0});
  std::shuffle(order.begin(), order.end(), rng);

  PartitionPlan plan;
  plan.scheme = PartitionScheme::Iid;
  plan.seed = seed;
  plan.assignments.resize(m);
  for (std::size_t i = 0; i < order.size(); ++i) plan.assignments[i % m].push_back(order[i]);
  sort_assignments(plan);
  return plan;
}

PartitionPlan partition_dirichlet(const LabeledDataset& ds, std::size_t m, double alpha,
                                  std::uint64_t seed) {
  if (!(alpha > 0.0)) throw ConfigError(fmt::format("dirichlet alpha must be > 0, got {}", alpha));
  if (m < 1) throw ConfigError("partition needs at least one client");
  if (ds.size() < m)
    throw ConfigError(fmt::format("dataset of {} samples cannot cover {} clients", ds.size(), m));

  Rng rng = make_rng(seed, {tag(Stream::Partition), 1});
  std::gamma_distribution<double> gamma(alpha, 1.0);
  PartitionPlan plan;
  plan.scheme = PartitionScheme::Dirichlet;
  plan.alpha = alpha;
  plan.seed = seed;
  plan.assignments.resize(m);

  for (auto& members : indices_by_class(ds)) {
    std::shuffle(members.begin(), members.end(), rng);
    std::vector<double> share(m);
    double total = 0.0;
    for (auto& s : share) total += (s = gamma(rng));
    if (!(total > 0.0)) {
      // Every gamma draw underflowed (tiny alpha): fall back to a single random owner.
      std::fill(share.begin(), share.end(), 0.0);
      share[std::uniform_int_distribution<std::size_t>(0, m - 1)(rng)] = 1.0;
      total = 1.0;
    }

    // Largest-remainder integerization of n_c * p_c.
    const std::size_t n_c = members.size();
    std::vector<std::size_t> count(m);
    std::vector<double> remainder(m);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double exact = static_cast<double>(n_c) * share[i] / total;
      count[i] = static_cast<std::size_t>(std::floor(exact));
      remainder[i] = exact - static_cast<double>(count[i]);
      assigned += count[i];
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t r = 0; assigned < n_c; ++r, ++assigned) ++count[order[r % m]];

    std::size_t cursor = 0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < count[i]; ++c) plan.assignments[i].push_back(members[cursor++]);
  }

  // Repair empty clients by taking one sample from the currently largest shard.
  for (std::size_t i = 0; i < m; ++i) {
    if (!plan.assignments[i].empty()) continue;
    auto largest = std::max_element(plan.assignments.begin(), plan.assignments.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    plan.assignments[i].push_back(largest->back());
    largest->pop_back();
  }
  sort_assignments(plan);
  return plan;
}

PartitionPlan partition_pathological(const LabeledDataset& ds, std::size_t m,
                                     std::size_t classes_per_client, std::uint64_t seed) {
  const auto C = static_cast<std::size_t>(ds.num_classes);
  if (classes_per_client < 1 || classes_per_client > C)
    throw ConfigError(fmt::format("classes_per_client must be in [1, {}], got {}", C, classes_per_client));
  if (m * classes_per_client < C)
    throw ConfigError(fmt::format("pathological partition infeasible: {} clients x {} classes < {} classes", m,
                                  classes_per_client, C));

  Rng rng = make_rng(seed, {tag(Stream::Partition), 2});
  std::vector<std::vector<std::size_t>> holders;
  std::vector<std::size_t> classes(C);
  bool covered = false;
  for (std::size_t attempt = 0; attempt < kMaxCoverageRetries && !covered; ++attempt) {
    holders.assign(C, {});
    for (std::size_t i = 0; i < m; ++i) {
      std::iota(classes.begin(), classes.end(), std::size_t{0});
      for (std::size_t s = 0; s < classes_per_client; ++s) {
        std::uniform_int_distribution<std::size_t> pick(s, C - 1);
        std::swap(classes[s], classes[pick(rng)]);
        holders[classes[s]].push_back(i);
      }
    }
    covered = std::all_of(holders.begin(), holders.end(), [](const auto& h) { return !h.empty(); });
  }
  if (!covered) throw ConfigError("pathological partition: could not cover every class");

  PartitionPlan plan;
  plan.scheme = PartitionScheme::Pathological;
  plan.classes_per_client = classes_per_client;
  plan.seed = seed;
  plan.assignments.resize(m);
  auto by_class = indices_by_class(ds);
  for (std::size_t c = 0; c < C; ++c) {
    auto& members = by_class[c];
    const auto& owners = holders[c];
    if (members.size() < owners.size())
      throw ConfigError(fmt::format("class {} has {} samples but {} holders", c, members.size(), owners.size()));
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t base = members.size() / owners.size();
    const std::size_t extra = members.size() % owners.size();
    std::size_t cursor = 0;
    for (std::size_t h = 0; h < owners.size(); ++h) {
      const std::size_t take = base + (h < extra ? 1 : 0);
      for (std::size_t s = 0; s < take; ++s) plan.assignments[owners[h]].push_back(members[cursor++]);
    }
  }
  sort_assignments(plan);
  return plan;
}

LabeledDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open dataset '{}'", path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(fmt::format("{}: empty dataset", path));

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t width = 0;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() < 2) throw IoError(fmt::format("{}:{}: need at least one feature and a label", path, row_no));
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw IoError(fmt::format("{}:{}: expected {} columns, found {}", path, row_no, width, cells.size()));
    std::vector<double> feats(width - 1);
    for (std::size_t j = 0; j + 1 < width; ++j) {
      const auto cell = cells[j];
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), feats[j]);
      if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw IoError(fmt::format("{}:{}: cannot parse feature '{}'", path, row_no, cell));
    }
    long long label = 0;
    const auto cell = cells.back();
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
    if (ec != std::errc() || ptr != cell.data() + cell.size())
      throw IoError(fmt::format("{}:{}: cannot parse label '{}'", path, row_no, cell));
    if (label < 0) throw IoError(fmt::format("{}:{}: negative label {}", path, row_no, label));
    rows.push_back(std::move(feats));
    labels.push_back(static_cast<int>(label));
  }
  if (rows.empty()) throw IoError(fmt::format("{}: empty dataset", path));

  LabeledDataset ds;
  ds.name = path;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j + 1 < width; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  ds.labels = std::move(labels);
  ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

nlohmann::json plan_to_json(const PartitionPlan& plan) {
  nlohmann::json out;
  switch (plan.scheme) {
    case PartitionScheme::Iid: out["scheme"] = "iid"; break;
    case PartitionScheme::Dirichlet:
      out["scheme"] = "dirichlet";
      out["alpha"] = plan.alpha;
      break;
    case PartitionScheme::Pathological:
      out["scheme"] = "pathological";
      out["classes_per_client"] = plan.classes_per_client;
      break;
  }
  out["seed"] = plan.seed;
  auto& clients = out["clients"] = nlohmann::json::object();
  for (std::size_t i = 0; i < plan.assignments.size(); ++i) clients[std::to_string(i)] = plan.assignments[i];
  return out;
}

std::vector<double> label_distribution(const LabeledDataset& ds, std::span<const std::size_t> rows) {
  std::vector<double> hist(static_cast<std::size_t>(ds.num_classes), 0.0);
  for (std::size_t r : rows) hist[static_cast<std::size_t>(ds.labels[r])] += 1.0;
  if (!rows.empty())
    for (auto& h : hist) h /= static_cast<double>(rows.size());
  return hist;
}

double mean_label_tv_distance(const LabeledDataset& ds, const PartitionPlan& plan) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto global = label_distribution(ds, all);
  double acc = 0.0;
  for (const auto& rows : plan.assignments) {
    const auto local = label_distribution(ds, rows);
    double tv = 0.0;
    for (std::size_t c = 0; c < local.size(); ++c) tv += std::abs(local[c] - global[c]);
    acc += 0.5 * tv;
  }
  return acc / static_cast<double>(plan.clients());
}

}  // namespace dgossip
