#include "dcnas/metrics.hpp"

#include <cmath>
#include <json.hpp>

#include "dcnas/ops.hpp"

namespace dcnas {

ConfusionMatrix::ConfusionMatrix(int num_classes) : c_(num_classes) {
  if (c_ < 1 || c_ > 255) throw Error("confusion matrix: class count " + std::to_string(c_) + " outside [1,255]");
  counts_.assign(static_cast<std::size_t>(c_) * c_, 0);
}

void ConfusionMatrix::update(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> preds) {
  if (labels.size() != preds.size()) {
    throw ShapeError("confusion matrix: " + std::to_string(labels.size()) + " labels vs " +
                     std::to_string(preds.size()) + " predictions");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = preds[i];
    if (p >= c_) throw Error("confusion matrix: prediction " + std::to_string(p) + " >= class count " + std::to_string(c_));
    if (t == kIgnoreLabel) continue;
    if (t >= c_) throw Error("confusion matrix: label " + std::to_string(t) + " >= class count " + std::to_string(c_));
    ++counts_[static_cast<std::size_t>(t) * c_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.c_ != c_) throw Error("confusion matrix: merging different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto v : counts_) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::label_count(int t) const {
  std::uint64_t n = 0;
  for (int p = 0; p < c_; ++p) n += count(t, p);
  return n;
}

std::uint64_t ConfusionMatrix::pred_count(int p) const {
  std::uint64_t n = 0;
  for (int t = 0; t < c_; ++t) n += count(t, p);
  return n;
}

namespace {

void require_nonempty(const ConfusionMatrix& cm, const char* who) {
  if (cm.total() == 0) throw Error(std::string(who) + ": no scored pixels");
}

double iou(const ConfusionMatrix& cm, int c) {
  const double tp = static_cast<double>(cm.count(c, c));
  const double denom = static_cast<double>(cm.label_count(c) + cm.pred_count(c)) - tp;
  return tp / denom;
}

}  // namespace

double miou(const ConfusionMatrix& cm) {
  require_nonempty(cm, "miou");
  double s = 0.0;
  int present = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    if (cm.label_count(c) == 0) continue;
    s += iou(cm, c);
    ++present;
  }
  return s / present;
}

double fwiou(const ConfusionMatrix& cm) {
  require_nonempty(cm, "fwiou");
  const double total = static_cast<double>(cm.total());
  double s = 0.0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    const auto n = cm.label_count(c);
    if (n == 0) continue;
    s += static_cast<double>(n) / total * iou(cm, c);
  }
  return s;
}

double macc(const ConfusionMatrix& cm) {
  require_nonempty(cm, "macc");
  double s = 0.0;
  int present = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    const auto n = cm.label_count(c);
    if (n == 0) continue;
    s += static_cast<double>(cm.count(c, c)) / static_cast<double>(n);
    ++present;
  }
  return s / present;
}

double reward(const ConfusionMatrix& cm) { return evaluate(cm).reward; }

MetricsReport evaluate(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.miou = miou(cm);
  r.fwiou = fwiou(cm);
  r.macc = macc(cm);
  r.reward = std::cbrt(r.miou * r.fwiou * r.macc);
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j{{"miou", miou}, {"fwiou", fwiou}, {"macc", macc}, {"reward", reward}};
  return j.dump();
}

}  // namespace dcnas
