#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oracle {

namespace {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Mat& a) {
    Rows r(a.rows(), std::vector<double>(a.cols()));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) r[i][j] = a(i, j);
    return r;
}

std::vector<double> layer_norm(const std::vector<double>& x, const Vec& g, const Vec& b) {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv * g(i) + b(i);
    return out;
}

// y = m x, m given as out x in
std::vector<double> matvec(const Mat& m, const std::vector<double>& x) {
    std::vector<double> y(m.rows(), 0.0);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) acc += m(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

Svd jacobi_svd(const Mat& a_in) {
    const bool wide = a_in.rows() < a_in.cols();
    Rows a = to_rows(wide ? Mat(a_in.transpose()) : a_in);
    const std::size_t m = a.size();
    const std::size_t n = m ? a[0].size() : 0;
    Rows v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += a[i][p] * a[i][p];
                    beta += a[i][q] * a[i][q];
                    gamma += a[i][p] * a[i][q];
                }
                if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double ap = a[i][p], aq = a[i][q];
                    a[i][p] = c * ap - s * aq;
                    a[i][q] = s * ap + c * aq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[i][p], vq = v[i][q];
                    v[i][p] = c * vp - s * vq;
                    v[i][q] = s * vp + c * vq;
                }
            }
        }
        if (off < 1e-15) break;
    }

    std::vector<double> sig(n);
    for (std::size_t j = 0; j < n; ++j) {
        double ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) ss += a[i][j] * a[i][j];
        sig[j] = std::sqrt(ss);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

    Svd out;
    out.u = Mat::Zero(m, n);
    out.v = Mat::Zero(n, n);
    out.s = Vec::Zero(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.s(k) = sig[j];
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = sig[j] > 0 ? a[i][j] / sig[j] : 0.0;
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v[i][j];
    }
    if (wide) std::swap(out.u, out.v);
    return out;
}

Mat gauss_jordan_inverse(const Mat& a_in) {
    const std::size_t n = a_in.rows();
    if (a_in.cols() != a_in.rows()) throw std::invalid_argument("square matrix required");
    Rows a = to_rows(a_in);
    Rows inv(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (a[piv][col] == 0.0) throw std::runtime_error("singular");
        std::swap(a[piv], a[col]);
        std::swap(inv[piv], inv[col]);
        const double d = a[col][col];
        for (std::size_t j = 0; j < n; ++j) {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    Mat out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = inv[i][j];
    return out;
}

Vec householder_lstsq(const Mat& a_in, const Vec& b_in) {
    Rows a = to_rows(a_in);
    const std::size_t m = a.size();
    const std::size_t n = a_in.cols();
    if (m < n) throw std::invalid_argument("need rows >= cols");
    std::vector<double> b(b_in.data(), b_in.data() + b_in.size());

    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < m; ++i) norm += a[i][k] * a[i][k];
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        const double alpha = a[k][k] > 0 ? -norm : norm;
        std::vector<double> v(m - k);
        for (std::size_t i = k; i < m; ++i) v[i - k] = a[i][k];
        v[0] -= alpha;
        double vn = 0.0;
        for (double x : v) vn += x * x;
        if (vn == 0.0) continue;
        for (std::size_t j = k; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < m; ++i) dot += v[i - k] * a[i][j];
            const double f = 2.0 * dot / vn;
            for (std::size_t i = k; i < m; ++i) a[i][j] -= f * v[i - k];
        }
        double dot = 0.0;
        for (std::size_t i = k; i < m; ++i) dot += v[i - k] * b[i];
        const double f = 2.0 * dot / vn;
        for (std::size_t i = k; i < m; ++i) b[i] -= f * v[i - k];
    }

    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double acc = b[ii];
        for (std::size_t j = ii + 1; j < n; ++j) acc -= a[ii][j] * x(j);
        x(ii) = acc / a[ii][ii];
    }
    return x;
}

EigenDecomp jacobi_eigen(const Mat& a_in) {
    Rows a = to_rows(a_in);
    const std::size_t n = a.size();
    Rows v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diag += a[i][i] * a[i][i];
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) off += a[i][j] * a[i][j];
        }
        if (off <= 1e-30 * std::max(diag, 1e-300)) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vp = v[k][p], vq = v[k][q];
                    v[k][p] = c * vp - s * vq;
                    v[k][q] = s * vp + c * vq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
    EigenDecomp out;
    out.values = Vec(n);
    out.vectors = Mat(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        out.values(k) = a[order[k]][order[k]];
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v[i][order[k]];
    }
    return out;
}

double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

NaiveTrace naive_forward(const cae::model::TransformerWeights& w, std::span<const cae::model::Token> tokens) {
    const auto& cfg = w.config;
    const std::size_t T = tokens.size();
    const std::size_t d = cfg.d_model;
    const std::size_t H = cfg.n_heads;
    const std::size_t dh = d / H;

    NaiveTrace out;
    Rows h(T, std::vector<double>(d));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i) h[t][i] = w.tok_emb(tokens[t], i) + w.pos_emb(t, i);
    out.hidden.push_back(h);

    for (const auto& L : w.layers) {
        Rows q(T), k(T), v(T), act(T);
        Rows n2(T);
        for (std::size_t t = 0; t < T; ++t) {
            const auto n1 = layer_norm(h[t], L.ln1_g, L.ln1_b);
            q[t] = matvec(L.wq, n1);
            k[t] = matvec(L.wk, n1);
            v[t] = matvec(L.wv, n1);
            n2[t] = layer_norm(h[t], L.ln2_g, L.ln2_b);
            const auto pre = matvec(L.w_in, n2[t]);
            act[t].resize(pre.size());
            for (std::size_t j = 0; j < pre.size(); ++j) act[t][j] = gelu(pre[j]);
        }
        Rows next = h;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> ctx(d, 0.0);
            for (std::size_t head = 0; head < H; ++head) {
                const std::size_t o = head * dh;
                std::vector<double> sc(t + 1);
                double mx = -1e300;
                for (std::size_t j = 0; j <= t; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += q[t][o + c] * k[j][o + c];
                    sc[j] = s / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, sc[j]);
                }
                double z = 0.0;
                for (auto& s : sc) {
                    s = std::exp(s - mx);
                    z += s;
                }
                for (std::size_t j = 0; j <= t; ++j)
                    for (std::size_t c = 0; c < dh; ++c) ctx[o + c] += sc[j] / z * v[j][o + c];
            }
            const auto a = matvec(L.wo, ctx);
            const auto m = matvec(L.w_out, act[t]);
            for (std::size_t i = 0; i < d; ++i) next[t][i] = h[t][i] + a[i] + m[i];
        }
        out.mlp_act.push_back(act);
        h = next;
        out.hidden.push_back(h);
    }

    for (std::size_t t = 0; t < T; ++t) out.logits.push_back(matvec(w.unembed, layer_norm(h[t], w.lnf_g, w.lnf_b)));
    return out;
}

Mat double_loop_covariance(const std::vector<Vec>& keys, double scale) {
    const std::size_t d = keys.empty() ? 0 : keys[0].size();
    Mat c = Mat::Zero(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (const auto& k : keys) acc += k(i) * k(j);
            c(i, j) = scale * acc / static_cast<double>(keys.size());
        }
    return c;
}

std::pair<std::size_t, std::size_t> exhaustive_window(std::span<const cae::trace::TraceGrid> grids, std::size_t span) {
    const std::size_t n_blocks = grids[0].effect.rows() - 1;
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t s = 0; s + span <= n_blocks; ++s) {
        double score = 0.0;
        for (std::size_t l = s; l < s + span; ++l)
            for (const auto& g : grids) score += g.effect(l + 1, g.last_subject_token) / grids.size();
        if (score > best_score + 1e-12) {
            best_score = score;
            best = s;
        }
    }
    return {best, best + span - 1};
}

SelectOracle exhaustive_select(const Mat& keys, double tau_rank, double tau_energy) {
    const Svd dec = jacobi_svd(keys);
    const std::size_t k = std::min<std::size_t>(keys.rows(), keys.cols());
    const std::size_t u = keys.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += dec.s(i) * dec.s(i);

    SelectOracle out;
    out.rank = k;
    for (std::size_t r = 1; r <= k; ++r) {
        double cum = 0.0;
        for (std::size_t i = 0; i < r; ++i) cum += dec.s(i) * dec.s(i);
        if (cum >= tau_rank * total) {
            out.rank = r;
            break;
        }
    }

    std::vector<double> score(u);
    for (std::size_t j = 0; j < u; ++j) {
        double ss = 0.0;
        for (std::size_t c = 0; c < out.rank; ++c) {
            double dot = 0.0;
            for (Eigen::Index i = 0; i < keys.rows(); ++i) dot += dec.u(i, c) * keys(i, j);
            ss += dot * dot;
        }
        score[j] = std::sqrt(ss);
    }

    std::vector<std::size_t> order;
    std::vector<bool> used(u, false);
    for (std::size_t m = 0; m < u; ++m) {
        std::size_t best = u;
        for (std::size_t j = 0; j < u; ++j)
            if (!used[j] && (best == u || score[j] > score[best])) best = j;
        used[best] = true;
        order.push_back(best);
    }

    double energy = 0.0;
    for (double s : score) energy += s * s;
    std::size_t keep = u;
    if (tau_energy < 1.0) {
        for (std::size_t m = 1; m <= u; ++m) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += score[order[i]] * score[order[i]];
            if (acc >= tau_energy * energy) {
                keep = m;
                break;
            }
        }
    }
    out.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    return out;
}

long last_occurrence(std::span<const cae::model::Token> hay, std::span<const cae::model::Token> needle) {
    if (needle.empty() || needle.size() > hay.size()) return -1;
    long found = -1;
    for (std::size_t s = 0; s + needle.size() <= hay.size(); ++s) {
        bool ok = true;
        for (std::size_t j = 0; j < needle.size() && ok; ++j) ok = hay[s + j] == needle[j];
        if (ok) found = static_cast<long>(s);
    }
    return found;
}

}  // namespace oracle
