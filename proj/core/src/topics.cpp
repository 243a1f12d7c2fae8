// SPDX-License-Identifier: Apache-2.0
#include "udaforge/topics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "udaforge/rng.hpp"

namespace udaforge {

CountMatrix count_matrix(const Corpus& corpus, const Vocabulary& vocab) {
  CountMatrix counts(corpus.size(), vocab.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    TokenizedDoc doc = tokenize(corpus.documents[i].text, vocab);
    for (int id : doc.tokens) counts(i, static_cast<std::size_t>(id))++;
  }
  return counts;
}

namespace {

std::vector<int> argmax_assignment(const FeatureMatrix& doc_topic) {
  std::vector<int> out(doc_topic.rows, 0);
  for (std::size_t i = 0; i < doc_topic.rows; ++i) {
    auto row = doc_topic.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < doc_topic.cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

TopicModel lda_gibbs(const CountMatrix& counts, std::size_t k, double alpha,
                     double beta, std::size_t iters, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("lda_gibbs: k must be >= 2");
  const std::size_t n_docs = counts.rows;
  const std::size_t vocab = counts.cols;
  if (alpha <= 0.0) alpha = 50.0 / static_cast<double>(k);

  TopicModel model;
  model.algorithm = "lda";
  model.k = k;

  // Explode counts into token instances with per-token topic assignments.
  std::vector<std::uint32_t> tok_doc;
  std::vector<std::uint32_t> tok_word;
  for (std::size_t d = 0; d < n_docs; ++d) {
    for (std::size_t w = 0; w < vocab; ++w) {
      for (std::uint32_t c = 0; c < counts(d, w); ++c) {
        tok_doc.push_back(static_cast<std::uint32_t>(d));
        tok_word.push_back(static_cast<std::uint32_t>(w));
      }
    }
  }

  std::vector<std::uint32_t> n_dk(n_docs * k, 0);
  std::vector<std::uint32_t> n_kw(k * vocab, 0);
  std::vector<std::uint32_t> n_k(k, 0);
  std::vector<std::uint32_t> n_d(n_docs, 0);
  std::vector<std::uint8_t> z(tok_doc.size());

  Rng rng = make_rng(seed);
  for (std::size_t t = 0; t < z.size(); ++t) {
    const auto topic = static_cast<std::uint8_t>(uniform_index(rng, k));
    z[t] = topic;
    n_dk[tok_doc[t] * k + topic]++;
    n_kw[topic * vocab + tok_word[t]]++;
    n_k[topic]++;
    n_d[tok_doc[t]]++;
  }

  const double vbeta = beta * static_cast<double>(vocab);
  std::vector<double> probs(k);
  for (std::size_t iter = 0; iter < iters; ++iter) {
    for (std::size_t t = 0; t < z.size(); ++t) {
      const std::uint32_t d = tok_doc[t];
      const std::uint32_t w = tok_word[t];
      const std::uint8_t old = z[t];
      n_dk[d * k + old]--;
      n_kw[old * vocab + w]--;
      n_k[old]--;

      for (std::size_t topic = 0; topic < k; ++topic) {
        probs[topic] = (static_cast<double>(n_dk[d * k + topic]) + alpha) *
                       (static_cast<double>(n_kw[topic * vocab + w]) + beta) /
                       (static_cast<double>(n_k[topic]) + vbeta);
      }
      const auto pick = static_cast<std::uint8_t>(sample_discrete(rng, probs));
      z[t] = pick;
      n_dk[d * k + pick]++;
      n_kw[pick * vocab + w]++;
      n_k[pick]++;
    }
  }

  model.doc_topic = FeatureMatrix(n_docs, k);
  for (std::size_t d = 0; d < n_docs; ++d) {
    auto row = model.doc_topic.row(d);
    if (n_d[d] == 0) {
      // Empty document: uniform posterior, no evidence.
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(k));
      model.warnings.push_back("empty document " + std::to_string(d) + " skipped");
      continue;
    }
    const double denom = static_cast<double>(n_d[d]) + alpha * static_cast<double>(k);
    for (std::size_t topic = 0; topic < k; ++topic) {
      row[topic] = (static_cast<double>(n_dk[d * k + topic]) + alpha) / denom;
    }
  }
  model.topic_term = FeatureMatrix(k, vocab);
  for (std::size_t topic = 0; topic < k; ++topic) {
    auto row = model.topic_term.row(topic);
    const double denom = static_cast<double>(n_k[topic]) + vbeta;
    for (std::size_t w = 0; w < vocab; ++w) {
      row[w] = (static_cast<double>(n_kw[topic * vocab + w]) + beta) / denom;
    }
  }
  model.assignment = argmax_assignment(model.doc_topic);
  return model;
}

TopicModel nmf(const FeatureMatrix& x, std::size_t k, std::size_t iters, double tol,
               std::uint64_t seed) {
  for (double v : x.data) {
    if (v < 0.0) throw std::invalid_argument("nmf: negative input entry");
  }
  if (k == 0) throw std::invalid_argument("nmf: k must be >= 1");
  constexpr double kEps = 1e-12;
  const std::size_t n = x.rows;
  const std::size_t v = x.cols;

  TopicModel model;
  model.algorithm = "nmf";
  model.k = k;

  double mean = 0.0;
  for (double e : x.data) mean += e;
  mean /= std::max<std::size_t>(1, x.data.size());
  const double scale = std::sqrt(std::max(mean, kEps) / static_cast<double>(k));

  Rng rng = make_rng(seed);
  FeatureMatrix w(n, k);
  FeatureMatrix h(k, v);
  for (double& e : w.data) e = scale * (0.1 + 0.9 * uniform_real(rng));
  for (double& e : h.data) e = scale * (0.1 + 0.9 * uniform_real(rng));

  auto objective = [&]() {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto wi = w.row(i);
      auto xi = x.row(i);
      for (std::size_t j = 0; j < v; ++j) {
        double pred = 0.0;
        for (std::size_t c = 0; c < k; ++c) pred += wi[c] * h(c, j);
        const double diff = xi[j] - pred;
        obj += diff * diff;
      }
    }
    return obj;
  };

  double prev = objective();
  model.objective_trace.push_back(prev);
  for (std::size_t iter = 0; iter < iters; ++iter) {
    // H <- H .* (W^T X) ./ (W^T W H + eps)
    FeatureMatrix wtx(k, v);
    for (std::size_t i = 0; i < n; ++i) {
      auto wi = w.row(i);
      auto xi = x.row(i);
      for (std::size_t c = 0; c < k; ++c) {
        if (wi[c] == 0.0) continue;
        auto dst = wtx.row(c);
        for (std::size_t j = 0; j < v; ++j) dst[j] += wi[c] * xi[j];
      }
    }
    FeatureMatrix wtw(k, k);
    for (std::size_t i = 0; i < n; ++i) {
      auto wi = w.row(i);
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) wtw(a, b) += wi[a] * wi[b];
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < v; ++j) {
        double denom = kEps;
        for (std::size_t b = 0; b < k; ++b) denom += wtw(c, b) * h(b, j);
        h(c, j) *= wtx(c, j) / denom;
      }
    }

    // W <- W .* (X H^T) ./ (W H H^T + eps)
    FeatureMatrix xht(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      auto dst = xht.row(i);
      for (std::size_t c = 0; c < k; ++c) {
        auto hc = h.row(c);
        double acc = 0.0;
        for (std::size_t j = 0; j < v; ++j) acc += xi[j] * hc[j];
        dst[c] = acc;
      }
    }
    FeatureMatrix hht(k, k);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) hht(a, b) = dot(h.row(a), h.row(b));
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto wi = w.row(i);
      for (std::size_t c = 0; c < k; ++c) {
        double denom = kEps;
        for (std::size_t b = 0; b < k; ++b) denom += wi[b] * hht(b, c);
        wi[c] *= xht(i, c) / denom;
      }
    }

    const double obj = objective();
    model.objective_trace.push_back(obj);
    if (prev > 0.0 && (prev - obj) / std::max(prev, kEps) < tol) break;
    prev = obj;
  }

  model.doc_topic = std::move(w);
  model.topic_term = std::move(h);
  model.assignment = argmax_assignment(model.doc_topic);
  return model;
}

namespace {

// Modified Gram-Schmidt; rank-deficient columns are replaced with a
// deterministic pseudo-random direction and re-orthogonalized.
void orthonormalize(FeatureMatrix& y, Rng& refill_rng) {
  const std::size_t dim = y.rows;   // stored column-major: y is dim x p
  const std::size_t p = y.cols;
  for (std::size_t c = 0; c < p; ++c) {
    for (int attempt = 0; attempt < 3; ++attempt) {
      for (std::size_t prev = 0; prev < c; ++prev) {
        double proj = 0.0;
        for (std::size_t i = 0; i < dim; ++i) proj += y(i, c) * y(i, prev);
        for (std::size_t i = 0; i < dim; ++i) y(i, c) -= proj * y(i, prev);
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < dim; ++i) norm += y(i, c) * y(i, c);
      norm = std::sqrt(norm);
      if (norm > 1e-150) {
        for (std::size_t i = 0; i < dim; ++i) y(i, c) /= norm;
        break;
      }
      for (std::size_t i = 0; i < dim; ++i) y(i, c) = normal(refill_rng);
    }
  }
}

// Jacobi eigendecomposition of a small symmetric matrix (in place).
void jacobi_eigen(FeatureMatrix& a, FeatureMatrix& vecs) {
  const std::size_t p = a.rows;
  vecs = FeatureMatrix(p, p);
  for (std::size_t i = 0; i < p; ++i) vecs(i, i) = 1.0;
  double frob = 0.0;
  for (double e : a.data) frob += e * e;
  for (std::size_t sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = i + 1; j < p; ++j) off += a(i, j) * a(i, j);
    }
    if (off <= 1e-28 * std::max(1.0, frob)) break;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = i + 1; j < p; ++j) {
        if (std::abs(a(i, j)) < 1e-300) continue;
        const double theta = (a(j, j) - a(i, i)) / (2.0 * a(i, j));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t r = 0; r < p; ++r) {
          const double ari = a(r, i);
          const double arj = a(r, j);
          a(r, i) = c * ari - s * arj;
          a(r, j) = s * ari + c * arj;
        }
        for (std::size_t r = 0; r < p; ++r) {
          const double air = a(i, r);
          const double ajr = a(j, r);
          a(i, r) = c * air - s * ajr;
          a(j, r) = s * air + c * ajr;
        }
        for (std::size_t r = 0; r < p; ++r) {
          const double vri = vecs(r, i);
          const double vrj = vecs(r, j);
          vecs(r, i) = c * vri - s * vrj;
          vecs(r, j) = s * vri + c * vrj;
        }
      }
    }
  }
}

}  // namespace

TopicModel lsa(const FeatureMatrix& x, std::size_t k) {
  const std::size_t n = x.rows;
  const std::size_t v = x.cols;
  if (k == 0 || k > std::min(n, v)) {
    throw std::invalid_argument("lsa: need 1 <= k <= min(rows, cols)");
  }

  TopicModel model;
  model.algorithm = "lsa";
  model.k = k;

  const std::size_t p = std::min(k + 4, std::min(n, v));
  Rng rng = derive_rng(0x15a5eedULL, 0);

  FeatureMatrix y(v, p);
  for (double& e : y.data) e = normal(rng);
  orthonormalize(y, rng);

  auto apply_gram = [&](const FeatureMatrix& in) {
    // out = X^T (X in); in and out are v x p.
    FeatureMatrix xy(n, p);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      auto dst = xy.row(i);
      for (std::size_t j = 0; j < v; ++j) {
        if (xi[j] == 0.0) continue;
        for (std::size_t c = 0; c < p; ++c) dst[c] += xi[j] * in(j, c);
      }
    }
    FeatureMatrix out(v, p);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      auto src = xy.row(i);
      for (std::size_t j = 0; j < v; ++j) {
        if (xi[j] == 0.0) continue;
        auto dst = out.row(j);
        for (std::size_t c = 0; c < p; ++c) dst[c] += xi[j] * src[c];
      }
    }
    return out;
  };

  std::vector<double> prev_sigma(p, 0.0);
  for (std::size_t iter = 0; iter < 300; ++iter) {
    FeatureMatrix z = apply_gram(y);
    std::vector<double> sigma(p, 0.0);
    for (std::size_t c = 0; c < p; ++c) {
      double norm = 0.0;
      for (std::size_t i = 0; i < v; ++i) norm += z(i, c) * z(i, c);
      sigma[c] = std::sqrt(std::sqrt(norm));  // |X^T X y| ~ sigma^2 for unit y
    }
    y = std::move(z);
    orthonormalize(y, rng);

    double rel = 0.0;
    for (std::size_t c = 0; c < p; ++c) {
      rel = std::max(rel, std::abs(sigma[c] - prev_sigma[c]) /
                              std::max(1e-30, sigma[c]));
    }
    prev_sigma = sigma;
    if (iter > 4 && rel < 1e-13) break;
  }

  // Rayleigh-Ritz: eigendecompose Y^T (X^T X) Y to split the subspace.
  FeatureMatrix g = apply_gram(y);
  FeatureMatrix small(p, p);
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < p; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < v; ++i) acc += y(i, a) * g(i, b);
      small(a, b) = acc;
    }
  }
  // Symmetrize against round-off.
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = a + 1; b < p; ++b) {
      const double m = 0.5 * (small(a, b) + small(b, a));
      small(a, b) = m;
      small(b, a) = m;
    }
  }
  FeatureMatrix q;
  jacobi_eigen(small, q);

  std::vector<std::size_t> order(p);
  for (std::size_t i = 0; i < p; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return small(a, a) > small(b, b);
  });

  model.singular_values.resize(k);
  FeatureMatrix vk(v, k);  // right singular vectors, column-major
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t src = order[c];
    model.singular_values[c] = std::sqrt(std::max(0.0, small(src, src)));
    for (std::size_t i = 0; i < v; ++i) {
      double acc = 0.0;
      for (std::size_t b = 0; b < p; ++b) acc += y(i, b) * q(b, src);
      vk(i, c) = acc;
    }
  }
  if (model.singular_values.back() < 1e-10 * std::max(1.0, model.singular_values.front())) {
    model.warnings.push_back("k exceeds numerical rank; trailing singular values ~ 0");
  }

  // doc_topic = X V = U Sigma; topic_term = V^T.
  model.doc_topic = FeatureMatrix(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    auto dst = model.doc_topic.row(i);
    for (std::size_t j = 0; j < v; ++j) {
      if (xi[j] == 0.0) continue;
      for (std::size_t c = 0; c < k; ++c) dst[c] += xi[j] * vk(j, c);
    }
  }
  model.topic_term = FeatureMatrix(k, v);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < v; ++j) model.topic_term(c, j) = vk(j, c);
  }

  // Assignment by largest absolute component.
  model.assignment.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = model.doc_topic.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (std::abs(row[c]) > std::abs(row[best])) best = c;
    }
    model.assignment[i] = static_cast<int>(best);
  }
  return model;
}

TopicModel plsa_em(const CountMatrix& counts, std::size_t k, std::size_t iters,
                   double tol, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("plsa_em: k must be >= 2");
  const std::size_t n = counts.rows;
  const std::size_t v = counts.cols;

  TopicModel model;
  model.algorithm = "plsa";
  model.k = k;

  Rng rng = make_rng(seed);
  FeatureMatrix p_zd(n, k);   // P(z|d)
  FeatureMatrix p_wz(k, v);   // P(w|z)
  for (std::size_t d = 0; d < n; ++d) {
    auto row = p_zd.row(d);
    double sum = 0.0;
    for (std::size_t z = 0; z < k; ++z) {
      row[z] = 0.1 + uniform_real(rng);
      sum += row[z];
    }
    for (std::size_t z = 0; z < k; ++z) row[z] /= sum;
  }
  for (std::size_t z = 0; z < k; ++z) {
    auto row = p_wz.row(z);
    double sum = 0.0;
    for (std::size_t w = 0; w < v; ++w) {
      row[w] = 0.1 + uniform_real(rng);
      sum += row[w];
    }
    for (std::size_t w = 0; w < v; ++w) row[w] /= sum;
  }

  std::vector<double> post(k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < iters; ++iter) {
    FeatureMatrix new_zd(n, k);
    FeatureMatrix new_wz(k, v);
    double loglik = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
      auto zd = p_zd.row(d);
      for (std::size_t w = 0; w < v; ++w) {
        const double c = counts(d, w);
        if (c == 0.0) continue;
        double denom = 0.0;
        for (std::size_t z = 0; z < k; ++z) {
          post[z] = zd[z] * p_wz(z, w);
          denom += post[z];
        }
        if (denom <= 0.0) denom = 1e-300;
        loglik += c * std::log(denom);
        for (std::size_t z = 0; z < k; ++z) {
          const double r = c * post[z] / denom;
          new_zd(d, z) += r;
          new_wz(z, w) += r;
        }
      }
    }
    model.objective_trace.push_back(loglik);
    if (iter > 0 && loglik - prev_ll < tol) break;
    prev_ll = loglik;

    for (std::size_t d = 0; d < n; ++d) {
      auto row = new_zd.row(d);
      double sum = 0.0;
      for (std::size_t z = 0; z < k; ++z) sum += row[z];
      auto dst = p_zd.row(d);
      if (sum <= 0.0) continue;  // empty document keeps its prior
      for (std::size_t z = 0; z < k; ++z) dst[z] = row[z] / sum;
    }
    for (std::size_t z = 0; z < k; ++z) {
      auto row = new_wz.row(z);
      double sum = 0.0;
      for (std::size_t w = 0; w < v; ++w) sum += row[w];
      auto dst = p_wz.row(z);
      if (sum <= 0.0) continue;
      for (std::size_t w = 0; w < v; ++w) dst[w] = row[w] / sum;
    }
  }

  model.doc_topic = std::move(p_zd);
  model.topic_term = std::move(p_wz);
  model.assignment = argmax_assignment(model.doc_topic);
  return model;
}

std::vector<int> assign_domains(const TopicModel& model) {
  if (model.k == 0) throw std::invalid_argument("assign_domains: model has no topics");
  return model.assignment;
}

std::vector<int> assign_domains(const ClusterModel& model, const FeatureMatrix& x) {
  if (model.k == 0) throw std::invalid_argument("assign_domains: model has no clusters");
  std::vector<int> out = model.assignment;

  bool has_noise = false;
  for (int a : out) has_noise |= a < 0;
  if (!has_noise) return out;

  // Map noise to the nearest cluster by centroid distance.
  FeatureMatrix centers(model.k, x.cols);
  std::vector<std::size_t> counts(model.k, 0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (out[i] < 0) continue;
    auto c = centers.row(static_cast<std::size_t>(out[i]));
    auto row = x.row(i);
    for (std::size_t d = 0; d < x.cols; ++d) c[d] += row[d];
    counts[static_cast<std::size_t>(out[i])]++;
  }
  for (std::size_t c = 0; c < model.k; ++c) {
    if (counts[c] == 0) continue;
    auto center = centers.row(c);
    for (double& v : center) v /= static_cast<double>(counts[c]);
  }
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (out[i] >= 0) continue;
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (std::size_t c = 0; c < model.k; ++c) {
      if (counts[c] == 0) continue;
      const double d = squared_distance(x.row(i), centers.row(c));
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    out[i] = best_c;
  }
  return out;
}

void save_topics_txt(const TopicModel& model, const Vocabulary& vocab,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write topic report: " + path);
  for (std::size_t topic = 0; topic < model.k; ++topic) {
    auto row = model.topic_term.row(topic);
    std::vector<std::size_t> order(row.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (std::abs(row[a]) != std::abs(row[b])) {
        return std::abs(row[a]) > std::abs(row[b]);
      }
      return a < b;
    });
    out << "topic " << topic << ":";
    const std::size_t top = std::min<std::size_t>(10, order.size());
    char buf[64];
    for (std::size_t r = 0; r < top; ++r) {
      std::snprintf(buf, sizeof(buf), " %s(%.4f)",
                    vocab.id_to_token[order[r]].c_str(), row[order[r]]);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace udaforge
