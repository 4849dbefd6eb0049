// Independent reference implementations used only by tests. These stay plain
// scalar loops, deliberately sharing no code with the library paths they
// check.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace oracles {

// Multi-head attention by definition: per-head projection, scalar softmax,
// weighted sum, concat, output projection. Row-major matrices.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> v;
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  static Mat zero(int r, int c) { return {r, c, std::vector<double>(static_cast<std::size_t>(r) * c, 0.0)}; }
};

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c = Mat::zero(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.cols; ++j) {
      double s = 0;
      for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  }
  return c;
}

inline Mat attention_head(const Mat& q, const Mat& k, const Mat& v) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols));
  Mat out = Mat::zero(q.rows, v.cols);
  for (int i = 0; i < q.rows; ++i) {
    std::vector<double> scores(static_cast<std::size_t>(k.rows));
    for (int j = 0; j < k.rows; ++j) {
      double s = 0;
      for (int c = 0; c < q.cols; ++c) s += q.at(i, c) * k.at(j, c);
      scores[static_cast<std::size_t>(j)] = s * inv;
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0;
    for (auto& s : scores) {
      s = std::exp(s - mx);
      z += s;
    }
    for (int j = 0; j < k.rows; ++j) {
      const double w = scores[static_cast<std::size_t>(j)] / z;
      for (int c = 0; c < v.cols; ++c) out.at(i, c) += w * v.at(j, c);
    }
  }
  return out;
}

inline Mat multi_head_attention(const Mat& q, const Mat& k, const Mat& v,
                                const std::vector<Mat>& wq, const std::vector<Mat>& wk,
                                const std::vector<Mat>& wv, const Mat& wo) {
  Mat concat = Mat::zero(q.rows, 0);
  std::vector<Mat> heads;
  int total = 0;
  for (std::size_t h = 0; h < wq.size(); ++h) {
    heads.push_back(attention_head(matmul(q, wq[h]), matmul(k, wk[h]), matmul(v, wv[h])));
    total += heads.back().cols;
  }
  concat = Mat::zero(q.rows, total);
  int off = 0;
  for (const auto& head : heads) {
    for (int i = 0; i < head.rows; ++i) {
      for (int c = 0; c < head.cols; ++c) concat.at(i, off + c) = head.at(i, c);
    }
    off += head.cols;
  }
  return matmul(concat, wo);
}

// Exact ROC AUC via the Mann-Whitney statistic with mean ranks for ties.
inline double rank_auc(std::span<const float> pred, std::span<const float> truth) {
  const std::size_t n = pred.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&pred](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pred[idx[j + 1]] == pred[idx[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mean_rank;
    i = j + 1;
  }
  double rank_pos = 0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (truth[k] != 0.0f) {
      rank_pos += rank[k];
      ++n_pos;
    }
  }
  const std::size_t n_neg = n - n_pos;
  const double u = rank_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Binary cross entropy from logits, mean over entries.
inline double bce_from_logits(std::span<const float> logits, std::span<const float> truth) {
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    total += truth[i] != 0.0f ? -std::log(s) : -std::log(1.0 - s);
  }
  return total / static_cast<double>(logits.size());
}

// Scalar-loop soft IoU, the literal formula.
inline double soft_iou(std::span<const float> pred, std::span<const float> truth) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    num += static_cast<double>(truth[i]) * pred[i];
    den += static_cast<double>(truth[i]) + pred[i] - static_cast<double>(truth[i]) * pred[i];
  }
  return den == 0.0 ? 0.0 : num / den;
}

// Scanline rasterization of one oriented box: intersect each pixel-center row
// with the rectangle and fill the column interval.
struct ScanBox {
  double cx, cy, theta, length, width;
};

inline void scanline_rasterize(const ScanBox& b, double center_x, double center_y,
                               double extent_m, int px, std::span<float> out) {
  const double mpp = extent_m / px;
  const double half = extent_m / 2.0;
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  // Rectangle corners.
  const double hl = b.length / 2.0, hw = b.width / 2.0;
  struct P {
    double x, y;
  };
  const P corners[4] = {{b.cx + c * hl - s * hw, b.cy + s * hl + c * hw},
                        {b.cx + c * hl + s * hw, b.cy + s * hl - c * hw},
                        {b.cx - c * hl - s * hw, b.cy - s * hl + c * hw},
                        {b.cx - c * hl + s * hw, b.cy - s * hl - c * hw}};
  for (int r = 0; r < px; ++r) {
    const double py = center_y - half + (r + 0.5) * mpp;
    // Intersect the horizontal line y = py with the 4 edges.
    double xmin = 1e18, xmax = -1e18;
    const int edges[4][2] = {{0, 1}, {1, 3}, {3, 2}, {2, 0}};
    bool any = false;
    for (const auto& e : edges) {
      const P& a = corners[e[0]];
      const P& d = corners[e[1]];
      const double y0 = a.y, y1 = d.y;
      if ((y0 <= py && py <= y1) || (y1 <= py && py <= y0)) {
        if (y0 == y1) {
          xmin = std::min({xmin, a.x, d.x});
          xmax = std::max({xmax, a.x, d.x});
          any = true;
        } else {
          const double t = (py - y0) / (y1 - y0);
          const double x = a.x + t * (d.x - a.x);
          xmin = std::min(xmin, x);
          xmax = std::max(xmax, x);
          any = true;
        }
      }
    }
    if (!any) continue;
    for (int col = 0; col < px; ++col) {
      const double pxx = center_x - half + (col + 0.5) * mpp;
      if (pxx >= xmin && pxx <= xmax) {
        out[static_cast<std::size_t>(r) * px + col] = 1.0f;
      }
    }
  }
}

}  // namespace oracles
