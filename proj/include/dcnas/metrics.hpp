#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dcnas {

/// counts(t, p) = pixels of true class t predicted as p. Label 255 is skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void update(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> preds);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return c_; }
  std::uint64_t count(int t, int p) const { return counts_[static_cast<std::size_t>(t) * c_ + p]; }
  std::uint64_t total() const;
  std::uint64_t label_count(int t) const;
  std::uint64_t pred_count(int p) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int c_;
  std::vector<std::uint64_t> counts_;
};

/// Means are taken over classes present in the labels; throw Error when the
/// matrix is empty.
double miou(const ConfusionMatrix& cm);
double fwiou(const ConfusionMatrix& cm);
double macc(const ConfusionMatrix& cm);
/// Geometric mean of the three metrics above.
double reward(const ConfusionMatrix& cm);

struct MetricsReport {
  double miou = 0.0;
  double fwiou = 0.0;
  double macc = 0.0;
  double reward = 0.0;

  /// One-line JSON record.
  std::string to_json() const;
};

MetricsReport evaluate(const ConfusionMatrix& cm);

}  // namespace dcnas
