#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracle {

namespace {

constexpr double kLnEps = 1e-5;

std::vector<double> row_of(const Matrix& m, std::size_t i) {
  return {m.v.begin() + static_cast<std::ptrdiff_t>(i * m.cols),
          m.v.begin() + static_cast<std::ptrdiff_t>((i + 1) * m.cols)};
}

Matrix linear(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  Matrix out(x.rows, w.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = b.empty() ? 0.0 : b[j];
      for (std::size_t k = 0; k < x.cols; ++k) acc += x(i, k) * w(k, j);
      out(i, j) = acc;
    }
  return out;
}

Matrix ln_rows(const Matrix& x, const std::vector<double>& g, const std::vector<double>& b) {
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto r = layer_norm(row_of(x, i), g, b, kLnEps);
    std::copy(r.begin(), r.end(), out.v.begin() + static_cast<std::ptrdiff_t>(i * x.cols));
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto r = normalize(row_of(m, i));
    std::copy(r.begin(), r.end(), out.v.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double Generator::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return static_cast<double>(static_cast<float>(d(rng_)));
}

std::size_t Generator::index(std::size_t lo, std::size_t hi) {
  std::uniform_int_distribution<std::size_t> d(lo, hi);
  return d(rng_);
}

Matrix Generator::matrix(std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (auto& x : m.v) x = static_cast<double>(static_cast<float>(uniform() * scale));
  return m;
}

Matrix Generator::unit_rows(std::size_t rows, std::size_t cols) {
  Matrix m = matrix(rows, cols);
  Matrix n = normalize_rows(m);
  for (auto& x : n.v) x = static_cast<double>(static_cast<float>(x));
  return n;
}

std::vector<double> Generator::vec(std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(static_cast<float>(uniform() * scale));
  return v;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

std::vector<double> softmax(const std::vector<double>& x, double scale) {
  double hi = -1e300;
  for (double v : x) hi = std::max(hi, scale * v);
  std::vector<double> e(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += (e[i] = std::exp(scale * x[i] - hi));
  for (double& v : e) v /= sum;
  return e;
}

std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (x[i] - mean) / std::sqrt(var + eps) * gamma[i] + beta[i];
  }
  return out;
}

double quick_gelu(double x) { return x * (1.0 / (1.0 + std::exp(-1.702 * x))); }

std::vector<double> normalize(const std::vector<double>& x) {
  const double n = std::sqrt(dot(x, x));
  std::vector<double> out(x.size(), 0.0);
  if (n == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
  return out;
}

double bilinear_at(const Matrix& grid, std::size_t out_h, std::size_t out_w, std::size_t y,
                   std::size_t x) {
  const double sy = out_h > 1 && grid.rows > 1
                        ? static_cast<double>(y) * (grid.rows - 1) / static_cast<double>(out_h - 1)
                        : 0.0;
  const double sx = out_w > 1 && grid.cols > 1
                        ? static_cast<double>(x) * (grid.cols - 1) / static_cast<double>(out_w - 1)
                        : 0.0;
  const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, grid.rows - 1);
  const std::size_t x1 = std::min(x0 + 1, grid.cols - 1);
  const double wy = sy - y0, wx = sx - x0;
  return (1 - wy) * (1 - wx) * grid(y0, x0) + (1 - wy) * wx * grid(y0, x1) +
         wy * (1 - wx) * grid(y1, x0) + wy * wx * grid(y1, x1);
}

Matrix bilinear(const Matrix& grid, std::size_t out_h, std::size_t out_w) {
  Matrix out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) out(y, x) = bilinear_at(grid, out_h, out_w, y, x);
  return out;
}

Matrix minmax(const Matrix& m) {
  const auto [lo, hi] = std::minmax_element(m.v.begin(), m.v.end());
  Matrix out(m.rows, m.cols, 0.0);
  if (*hi == *lo) return out;
  for (std::size_t i = 0; i < m.v.size(); ++i) out.v[i] = (m.v[i] - *lo) / (*hi - *lo);
  return out;
}

AttentionOut attention(const Matrix& x, const Block& b, std::size_t heads, double scale,
                       bool consistent) {
  const std::size_t n = x.rows, c = x.cols, hd = c / heads;
  const Matrix q = linear(x, b.wq, b.bq);
  const Matrix k = linear(x, b.wk, b.bk);
  const Matrix v = linear(x, b.wv, b.bv);
  const Matrix& left = consistent ? v : q;
  const Matrix& right = consistent ? v : k;

  AttentionOut res;
  Matrix concat(n, c);
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix logits(n, n), attn(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(n);
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < hd; ++d) s += left(i, h * hd + d) * right(j, h * hd + d);
        row[j] = s;
        logits(i, j) = scale * s;
      }
      const auto p = softmax(row, scale);
      for (std::size_t j = 0; j < n; ++j) attn(i, j) = p[j];
      for (std::size_t d = 0; d < hd; ++d) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += p[j] * v(j, h * hd + d);
        concat(i, h * hd + d) = s;
      }
    }
    res.logits.push_back(std::move(logits));
    res.attn.push_back(std::move(attn));
  }
  res.out = linear(concat, b.wo, b.bo);
  return res;
}

ForwardOut forward(const std::vector<double>& image, const Model& m, std::size_t depth) {
  const std::size_t s = m.image_size, p = m.patch, g = s / p, c = m.dim;
  const std::size_t n = g * g + 1;
  Matrix x(n, c);
  for (std::size_t j = 0; j < c; ++j) x(0, j) = m.cls[j] + m.pos(0, j);
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      const std::size_t t = gy * g + gx + 1;
      for (std::size_t j = 0; j < c; ++j) {
        double acc = m.patch_b[j];
        std::size_t k = 0;
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t py = 0; py < p; ++py)
            for (std::size_t px = 0; px < p; ++px, ++k)
              acc += m.patch_w(j, k) * image[(ch * s + gy * p + py) * s + gx * p + px];
        x(t, j) = acc + m.pos(t, j);
      }
    }
  }
  if (m.has_pre_ln) x = ln_rows(x, m.pre_g, m.pre_b);

  ForwardOut out;
  Matrix x_hat;
  for (std::size_t layer = 1; layer <= m.blocks.size(); ++layer) {
    const Block& b = m.blocks[layer - 1];
    const Matrix h = ln_rows(x, b.ln1_g, b.ln1_b);
    const AttentionOut raw = attention(h, b, m.heads, m.scale, false);
    out.class_records.push_back(row_of(raw.out, 0));
    if (depth > 0 && layer >= depth) {
      const AttentionOut con = attention(h, b, m.heads, m.scale, true);
      x_hat = add(con.out, layer == depth ? x : x_hat);
    }
    const Matrix mid = add(raw.out, x);
    Matrix hidden = linear(ln_rows(mid, b.ln2_g, b.ln2_b), b.w1, b.b1);
    for (double& v : hidden.v) v = quick_gelu(v);
    const Matrix ffn = linear(hidden, b.w2, b.b2);
    out.class_records.push_back(row_of(ffn, 0));
    x = add(ffn, mid);
  }

  const Matrix embeds = normalize_rows(linear(ln_rows(x, m.final_g, m.final_b), m.proj, {}));
  out.class_embed = row_of(embeds, 0);
  out.original_image_embeds = Matrix(n - 1, m.proj_dim);
  std::copy(embeds.v.begin() + static_cast<std::ptrdiff_t>(m.proj_dim), embeds.v.end(),
            out.original_image_embeds.v.begin());
  if (depth > 0) {
    out.surgery_tokens = ln_rows(x_hat, m.final_g, m.final_b);
    Matrix image_tokens(n - 1, c);
    std::copy(out.surgery_tokens.v.begin() + static_cast<std::ptrdiff_t>(c),
              out.surgery_tokens.v.end(), image_tokens.v.begin());
    out.surgery_image_embeds = normalize_rows(linear(image_tokens, m.proj, {}));
  }
  return out;
}

std::vector<double> class_weights(const std::vector<double>& class_embed, const Matrix& text,
                                  double tau) {
  const auto fc = normalize(class_embed);
  std::vector<double> sims(text.rows);
  for (std::size_t t = 0; t < text.rows; ++t) sims[t] = dot(fc, normalize(row_of(text, t)));
  const auto s = softmax(sims, tau);
  const double mu = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  std::vector<double> w(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) w[t] = s[t] / mu;
  return w;
}

Matrix feature_surgery(const Matrix& image_feats, const std::vector<double>& class_embed,
                       const Matrix& text_feats, double tau) {
  const Matrix fi = normalize_rows(image_feats);
  const Matrix ft = normalize_rows(text_feats);
  const auto w = class_weights(class_embed, ft, tau);
  const std::size_t ni = fi.rows, nt = ft.rows, c = fi.cols;
  Matrix s(ni, nt);
  for (std::size_t i = 0; i < ni; ++i) {
    std::vector<double> redundant(c, 0.0);
    for (std::size_t t = 0; t < nt; ++t)
      for (std::size_t k = 0; k < c; ++k) redundant[k] += fi(i, k) * ft(t, k) * w[t] / nt;
    for (std::size_t t = 0; t < nt; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += fi(i, k) * ft(t, k) - redundant[k];
      s(i, t) = acc;
    }
  }
  return s;
}

Matrix feature_surgery_empty(const Matrix& image_feats, const Matrix& text_feats,
                             const std::vector<double>& empty) {
  const Matrix fi = normalize_rows(image_feats);
  const Matrix ft = normalize_rows(text_feats);
  const auto e = normalize(empty);
  Matrix s(fi.rows, ft.rows);
  for (std::size_t i = 0; i < fi.rows; ++i)
    for (std::size_t t = 0; t < ft.rows; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < fi.cols; ++k) acc += fi(i, k) * ft(t, k) - fi(i, k) * e[k];
      s(i, t) = acc;
    }
  return s;
}

double score_contrast(const Matrix& map, const std::vector<int>& gt) {
  double fg = 0.0, bg = 0.0;
  double nfg = 0.0, nbg = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i]) {
      fg += map.v[i];
      nfg += 1.0;
    } else {
      bg += map.v[i];
      nbg += 1.0;
    }
  }
  return fg / nfg - bg / nbg;
}

double mfsr(const HeadStack& attn, std::size_t token, const std::vector<int>& gt_grid) {
  double num = 0.0, den = 0.0;
  for (std::size_t cell = 0; cell < gt_grid.size(); ++cell) {
    double a = 0.0;
    for (const auto& head : attn) a += head(token, cell + 1);
    a /= static_cast<double>(attn.size());
    num += a * gt_grid[cell];
    den += a;
  }
  return num / den;
}

double iou_binary(const Matrix& map, const std::vector<int>& gt, double threshold) {
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int p = map.v[i] >= threshold ? 1 : 0;
    inter += p * gt[i];
    uni += std::max(p, gt[i]);
  }
  return uni == 0.0 ? 1.0 : inter / uni;
}

double miou_multiclass(const std::vector<int>& pred, const std::vector<int>& gt,
                       std::size_t classes, int ignore) {
  double total = 0.0;
  double present = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double inter = 0.0, uni = 0.0, in_gt = 0.0;
    const int ci = static_cast<int>(c);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      const bool g = gt[i] == ci, p = pred[i] == ci;
      in_gt += g;
      inter += g && p;
      uni += g || p;
    }
    if (in_gt == 0.0) continue;
    total += inter / uni;
    present += 1.0;
  }
  return total / present;
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& positive) {
  // rank(i) = 1 + #{j : s_j > s_i or (s_j == s_i and j < i)}
  auto ahead = [&](std::size_t j, std::size_t i) {
    return scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
  };
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    double rank = 1.0, hits = 1.0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (j == i || !ahead(j, i)) continue;
      rank += 1.0;
      hits += positive[j];
    }
    total += hits / rank;
    count += 1.0;
  }
  return total / count;
}

double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& positive) {
  const std::size_t classes = scores.front().size();
  double total = 0.0, used = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> col;
    std::vector<int> lab;
    int any = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      col.push_back(scores[i][c]);
      lab.push_back(positive[i][c]);
      any |= positive[i][c];
    }
    if (!any) continue;
    total += average_precision(col, lab);
    used += 1.0;
  }
  return total / used;
}

double points_accuracy(const std::vector<std::pair<int, int>>& points, const std::vector<int>& gt,
                       std::size_t width) {
  double inside = 0.0;
  for (const auto& [x, y] : points) inside += gt[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] != 0;
  return inside / static_cast<double>(points.size());
}

double l1_distance(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += std::fabs(a.v[i] - b.v[i]);
  return s / static_cast<double>(a.v.size());
}

PointSelection select_points(const Matrix& map, double threshold) {
  std::vector<std::size_t> all(map.v.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) {
    if (map.v[a] != map.v[b]) return map.v[a] > map.v[b];
    return a < b;
  });
  std::size_t above = 0;
  while (above < all.size() && map.v[all[above]] > threshold) ++above;
  const std::size_t k = std::min(above, all.size() - above);

  PointSelection sel;
  sel.foreground.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> low(all.begin() + static_cast<std::ptrdiff_t>(above), all.end());
  std::sort(low.begin(), low.end(), [&](std::size_t a, std::size_t b) {
    if (map.v[a] != map.v[b]) return map.v[a] < map.v[b];
    return a < b;
  });
  sel.background.assign(low.begin(), low.begin() + static_cast<std::ptrdiff_t>(k));
  return sel;
}

std::vector<std::size_t> argsort_desc(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return a < b;
  });
  return idx;
}

}  // namespace oracle
