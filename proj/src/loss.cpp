#include "lidarseg/loss.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "lidarseg/error.hpp"

namespace lidarseg {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher lower-envelope transform of one row of squared
// distances. f holds sampled values, d receives the transformed row.
void dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
           std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      if (f[v[k]] == kInf) {
        // parabola at v[k] is absent; replace it outright
        if (k > 0) { --k; continue; }
        v[0] = q;
        z[0] = -kInf;
        z[1] = kInf;
        s = -kInf;
        break;
      }
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      if (s <= z[k] && k == 0) {
        v[0] = q;
        z[0] = -kInf;
        z[1] = kInf;
        break;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
      break;
    }
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    if (f[v[0]] == kInf) {
      d[q] = kInf;
      continue;
    }
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}
}  // namespace

std::vector<double> squared_distance_transform(const std::vector<uint8_t>& seeds,
                                               int height, int width) {
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  if (seeds.size() != pixels)
    throw Error(ErrorCode::ShapeMismatch, "distance transform: seed grid size mismatch");
  std::vector<double> dist(pixels);
  for (std::size_t i = 0; i < pixels; ++i) dist[i] = seeds[i] ? 0.0 : kInf;

  const int max_dim = std::max(height, width);
  std::vector<double> f(max_dim), d(max_dim), z(max_dim + 1);
  std::vector<int> v(max_dim);

  // columns first, then rows
  for (int x = 0; x < width; ++x) {
    f.resize(height);
    d.resize(height);
    for (int y = 0; y < height; ++y) f[y] = dist[static_cast<std::size_t>(y) * width + x];
    dt_1d(f, d, v, z);
    for (int y = 0; y < height; ++y) dist[static_cast<std::size_t>(y) * width + x] = d[y];
  }
  for (int y = 0; y < height; ++y) {
    f.resize(width);
    d.resize(width);
    for (int x = 0; x < width; ++x) f[x] = dist[static_cast<std::size_t>(y) * width + x];
    dt_1d(f, d, v, z);
    for (int x = 0; x < width; ++x) dist[static_cast<std::size_t>(y) * width + x] = d[x];
  }
  return dist;
}

void LossConfig::validate() const {
  if (gamma < 0.0) throw Error(ErrorCode::InvalidArgument, "gamma must be >= 0");
  if (border_sigma <= 0.0) throw Error(ErrorCode::InvalidArgument, "sigma must be > 0");
  for (double w : class_weights)
    if (!(w > 0.0)) throw Error(ErrorCode::InvalidArgument, "class weights must be > 0");
}

std::vector<float> border_weight_map(const std::vector<int32_t>& labels,
                                     const std::vector<uint8_t>& mask, int height,
                                     int width, const LossConfig& cfg) {
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  if (labels.size() != pixels || mask.size() != pixels)
    throw Error(ErrorCode::ShapeMismatch, "weight map: labels/mask size mismatch");
  cfg.validate();
  std::vector<double> weights(kNumClasses, 1.0);
  for (std::size_t c = 0; c < cfg.class_weights.size() && c < weights.size(); ++c)
    weights[c] = cfg.class_weights[c];

  // Distance per class to the nearest valid pixel with a different label.
  std::vector<float> out(pixels, 0.0f);
  const double two_sigma_sq = 2.0 * cfg.border_sigma * cfg.border_sigma;
  std::vector<uint8_t> seeds(pixels);
  for (int c = 0; c < kNumClasses; ++c) {
    bool class_used = false;
    for (std::size_t i = 0; i < pixels; ++i) {
      seeds[i] = mask[i] && labels[i] != c;
      if (mask[i] && labels[i] == c) class_used = true;
    }
    if (!class_used) continue;
    const std::vector<double> dist2 = squared_distance_transform(seeds, height, width);
    for (std::size_t i = 0; i < pixels; ++i) {
      if (!mask[i] || labels[i] != c) continue;
      const double border =
          dist2[i] == kInf ? 0.0 : cfg.border_amplitude * std::exp(-dist2[i] / two_sigma_sq);
      out[i] = static_cast<float>(weights[static_cast<std::size_t>(c)] + border);
    }
  }
  return out;
}

IoUReport iou(const std::vector<int32_t>& predicted, const std::vector<int32_t>& truth,
              const std::vector<uint8_t>& mask) {
  if (predicted.size() != truth.size() || predicted.size() != mask.size())
    throw Error(ErrorCode::ShapeMismatch, "iou: input sizes differ");
  std::array<std::array<uint64_t, kNumClasses>, kNumClasses> confusion{};
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!mask[i]) continue;
    const int32_t gt = truth[i];
    const int32_t pr = predicted[i];
    if (gt < 0 || gt >= kNumClasses || pr < 0 || pr >= kNumClasses)
      throw Error(ErrorCode::ShapeMismatch, "iou: class id out of range");
    ++confusion[static_cast<std::size_t>(gt)][static_cast<std::size_t>(pr)];
  }
  return report_from_confusion(confusion);
}

IoUReport report_from_confusion(
    const std::array<std::array<uint64_t, kNumClasses>, kNumClasses>& confusion) {
  IoUReport report;
  report.confusion = confusion;
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    uint64_t gt_total = 0, pred_total = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      gt_total += confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
      pred_total += confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
    }
    const uint64_t inter = confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    const uint64_t uni = gt_total + pred_total - inter;
    report.present[static_cast<std::size_t>(c)] = uni > 0;
    report.iou[static_cast<std::size_t>(c)] =
        uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    if (c != kBackground && uni > 0) {
      sum += report.iou[static_cast<std::size_t>(c)];
      ++counted;
    }
  }
  report.average = counted > 0 ? sum / counted : 0.0;
  return report;
}

std::string IoUReport::table() const {
  char line[256];
  std::string text = "          Cars  Pedestrians  Cyclists  Average\n";
  std::snprintf(line, sizeof(line), "IoU (%%)  %5.1f  %11.1f  %8.1f  %7.1f\n",
                100.0 * iou[kCar], 100.0 * iou[kPedestrian], 100.0 * iou[kCyclist],
                100.0 * average);
  text += line;
  return text;
}

}  // namespace lidarseg
