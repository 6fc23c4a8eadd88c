#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "amplab/common.hpp"
#include "amplab/csv.hpp"
#include "amplab/mlp.hpp"
#include "amplab/rng.hpp"

namespace amplab::nn {

enum class Normalization { none, input_only, input_and_output };

inline std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::input_only: return "input_only";
    case Normalization::input_and_output: return "input_and_output";
  }
  return "?";
}

inline Normalization normalization_from_string(const std::string& s) {
  if (s == "none") return Normalization::none;
  if (s == "input_only") return Normalization::input_only;
  if (s == "input_and_output") return Normalization::input_and_output;
  fail_contract("unknown normalization scheme: ", s,
                " (expected none, input_only or input_and_output)");
}

/// Per-dimension mean and standard deviation, std floored at 1e-8 so constant
/// dimensions do not blow up the scaling.
struct DimStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static DimStats identity(std::size_t dims) {
    return {std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)};
  }
};

inline DimStats compute_stats(std::span<const std::vector<double>> rows) {
  require(!rows.empty(), "cannot compute stats of an empty dataset");
  const std::size_t dims = rows.front().size();
  DimStats stats{std::vector<double>(dims, 0.0), std::vector<double>(dims, 0.0)};
  const double n = static_cast<double>(rows.size());
  for (const auto& row : rows) {
    require(row.size() == dims, "ragged dataset rows");
    for (std::size_t d = 0; d < dims; ++d) stats.mean[d] += row[d];
  }
  for (std::size_t d = 0; d < dims; ++d) stats.mean[d] /= n;
  for (const auto& row : rows)
    for (std::size_t d = 0; d < dims; ++d) {
      const double diff = row[d] - stats.mean[d];
      stats.stddev[d] += diff * diff;
    }
  for (std::size_t d = 0; d < dims; ++d)
    stats.stddev[d] = std::max(std::sqrt(stats.stddev[d] / n), 1e-8);
  return stats;
}

inline std::vector<double> standardize(std::span<const double> x, const DimStats& stats) {
  std::vector<double> out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) out[d] = (x[d] - stats.mean[d]) / stats.stddev[d];
  return out;
}

inline double destandardize_scalar(double y, const DimStats& stats) {
  return y * stats.stddev[0] + stats.mean[0];
}

struct FitConfig {
  int epochs = 10;
  int minibatch = 256;
  AdamConfig adam;
};

/// A value network together with its normalization wrapper, so evaluation is
/// always on the raw scale regardless of how training standardized the data.
class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(Mlp net, Normalization scheme)
      : net_(std::move(net)),
        scheme_(scheme),
        input_stats_(DimStats::identity(static_cast<std::size_t>(net_.input_dim()))),
        output_stats_(DimStats::identity(1)) {
    require(net_.output_dim() == 1, "value nets are scalar-valued");
  }

  /// Standardizes per the scheme (stats recomputed from this dataset), then
  /// runs minibatch Adam. Returns the mean training-space loss of the final
  /// epoch. A non-finite loss aborts with a diagnostic instead of continuing.
  double fit(std::span<const std::vector<double>> inputs, std::span<const double> targets,
             const FitConfig& cfg, RngStream& rng) {
    require(!inputs.empty() && inputs.size() == targets.size(),
            "value fit needs a nonempty dataset with matching targets");
    require(cfg.epochs >= 1 && cfg.minibatch >= 1, "bad fit config");

    input_stats_ = scheme_ == Normalization::none
                       ? DimStats::identity(inputs.front().size())
                       : compute_stats(inputs);
    std::vector<std::vector<double>> x;
    x.reserve(inputs.size());
    for (const auto& row : inputs) x.push_back(standardize(row, input_stats_));

    std::vector<double> y(targets.begin(), targets.end());
    if (scheme_ == Normalization::input_and_output) {
      std::vector<std::vector<double>> cols;
      cols.reserve(y.size());
      for (const double t : y) cols.push_back({t});
      output_stats_ = compute_stats(cols);
      for (double& t : y) t = (t - output_stats_.mean[0]) / output_stats_.stddev[0];
    } else {
      output_stats_ = DimStats::identity(1);
    }

    Adam optimizer(net_);
    std::vector<std::size_t> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double final_epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg.minibatch)) {
        const std::size_t stop =
            std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch));
        std::vector<std::vector<double>> bx;
        std::vector<double> by;
        bx.reserve(stop - start);
        by.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) {
          bx.push_back(x[order[i]]);
          by.push_back(y[order[i]]);
        }
        auto [loss, grads] = mse_loss_and_gradient(net_, bx, by);
        if (!std::isfinite(loss))
          throw std::runtime_error(detail::cat(
              "value fit diverged: non-finite loss at epoch ", epoch + 1, " (scheme ",
              to_string(scheme_), "); inspect the target scale or switch normalization"));
        optimizer.apply(net_, grads, cfg.adam);
        epoch_loss += loss * static_cast<double>(stop - start);
      }
      final_epoch_loss = epoch_loss / static_cast<double>(order.size());
    }
    return final_epoch_loss;
  }

  /// Raw-scale prediction.
  double evaluate(std::span<const double> input) const {
    const auto x = standardize(input, input_stats_);
    return destandardize_scalar(forward(net_, x)[0], output_stats_);
  }

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  Normalization scheme() const { return scheme_; }
  const DimStats& input_stats() const { return input_stats_; }
  const DimStats& output_stats() const { return output_stats_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    require(out.good(), "cannot write checkpoint: ", path.string());
    out << "amplab-valuenet 1\n" << to_string(scheme_) << "\n";
    write_stats(out, input_stats_);
    write_stats(out, output_stats_);
    write_mlp(out, net_);
  }

  static ValueNet load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "cannot read checkpoint: ", path.string());
    std::string tag, version;
    in >> tag >> version;
    require(tag == "amplab-valuenet" && version == "1", "unsupported checkpoint header in ",
            path.string());
    std::string scheme;
    in >> scheme;
    ValueNet net;
    net.scheme_ = normalization_from_string(scheme);
    net.input_stats_ = read_stats(in);
    net.output_stats_ = read_stats(in);
    net.net_ = read_mlp(in);
    return net;
  }

  static void write_mlp(std::ostream& out, const Mlp& net) {
    out << net.layer_sizes.size();
    for (const int s : net.layer_sizes) out << ' ' << s;
    out << '\n';
    for (int l = 0; l < net.num_layers(); ++l) {
      for (const double w : net.weights[static_cast<std::size_t>(l)]) out << g17(w) << ' ';
      out << '\n';
      for (const double b : net.biases[static_cast<std::size_t>(l)]) out << g17(b) << ' ';
      out << '\n';
    }
  }

  static Mlp read_mlp(std::istream& in) {
    std::size_t layers = 0;
    in >> layers;
    require(layers >= 2 && in.good(), "corrupt checkpoint: bad layer count");
    std::vector<int> sizes(layers);
    for (auto& s : sizes) in >> s;
    Mlp net = Mlp::zeros(sizes);
    for (int l = 0; l < net.num_layers(); ++l) {
      for (auto& w : net.weights[static_cast<std::size_t>(l)]) in >> w;
      for (auto& b : net.biases[static_cast<std::size_t>(l)]) in >> b;
    }
    require(in.good(), "corrupt checkpoint: truncated parameters");
    return net;
  }

 private:
  static void write_stats(std::ostream& out, const DimStats& stats) {
    out << stats.mean.size();
    for (const double m : stats.mean) out << ' ' << g17(m);
    for (const double s : stats.stddev) out << ' ' << g17(s);
    out << '\n';
  }

  static DimStats read_stats(std::istream& in) {
    std::size_t dims = 0;
    in >> dims;
    DimStats stats{std::vector<double>(dims), std::vector<double>(dims)};
    for (auto& m : stats.mean) in >> m;
    for (auto& s : stats.stddev) in >> s;
    return stats;
  }

  Mlp net_;
  Normalization scheme_ = Normalization::input_only;
  DimStats input_stats_ = DimStats::identity(0);
  DimStats output_stats_ = DimStats::identity(1);
};

/// Policy network emitting one logit per action template; infeasible actions
/// are masked out of the softmax entirely (probability exactly zero).
class PolicyHead {
 public:
  PolicyHead() = default;
  explicit PolicyHead(Mlp net) : net_(std::move(net)) {}

  int action_count() const { return net_.output_dim(); }

  std::vector<double> logits(std::span<const double> features) const {
    return forward(net_, features);
  }

  static std::vector<double> masked_probabilities(std::span<const double> logits,
                                                  std::span<const std::uint8_t> mask) {
    require(logits.size() == mask.size(), "logit/mask size mismatch");
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i)
      if (mask[i]) max_logit = std::max(max_logit, logits[i]);
    require(std::isfinite(max_logit), "action mask excludes every action");
    std::vector<double> probs(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (!mask[i]) continue;
      probs[i] = std::exp(logits[i] - max_logit);
      total += probs[i];
    }
    for (std::size_t i = 0; i < probs.size(); ++i)
      if (mask[i]) probs[i] /= total;
    return probs;
  }

  std::vector<double> probabilities(std::span<const double> features,
                                    std::span<const std::uint8_t> mask) const {
    const auto z = logits(features);
    return masked_probabilities(z, mask);
  }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    require(out.good(), "cannot write checkpoint: ", path.string());
    out << "amplab-policy 1\n";
    ValueNet::write_mlp(out, net_);
  }

  static PolicyHead load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "cannot read checkpoint: ", path.string());
    std::string tag, version;
    in >> tag >> version;
    require(tag == "amplab-policy" && version == "1", "unsupported checkpoint header in ",
            path.string());
    return PolicyHead(ValueNet::read_mlp(in));
  }

 private:
  Mlp net_;
};

}  // namespace amplab::nn
