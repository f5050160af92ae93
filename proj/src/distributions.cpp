#include "ldtcc/distributions.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "ldtcc/rng.hpp"

namespace ldtcc {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

void GaussianSpec::validate() const {
    require(mean.size() >= 1, "GaussianSpec: dimension must be >= 1");
    require(cov.rows() == mean.size() && cov.cols() == mean.size(),
            "GaussianSpec: covariance shape does not match mean");
    double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
            "GaussianSpec: covariance is not symmetric");
    Eigen::LLT<Matrix> llt(cov);
    require(llt.info() == Eigen::Success, "GaussianSpec: covariance is not positive definite");
}

void MixtureSpec::validate() const {
    require(!components.empty(), "MixtureSpec: at least one component required");
    int n = components.front().gaussian.dim();
    double wsum = 0.0;
    for (const auto& c : components) {
        require(c.weight > 0.0, "MixtureSpec: weights must be strictly positive");
        require(c.gaussian.dim() == n, "MixtureSpec: components must share dimension");
        c.gaussian.validate();
        wsum += c.weight;
    }
    require(std::fabs(wsum - 1.0) <= 1e-12 * components.size(),
            "MixtureSpec: weights must sum to 1");
}

Vector MixtureSpec::mean() const {
    Vector m = Vector::Zero(dim());
    for (const auto& c : components) m += c.weight * c.gaussian.mean;
    return m;
}

GaussianSpec MixtureSpec::moment_match() const {
    Vector m = mean();
    Matrix cov = Matrix::Zero(dim(), dim());
    for (const auto& c : components) {
        Vector d = c.gaussian.mean - m;
        cov += c.weight * (c.gaussian.cov + d * d.transpose());
    }
    return GaussianSpec{m, cov};
}

MixtureSpec MixtureSpec::single(GaussianSpec g) {
    MixtureSpec d;
    d.components.push_back({1.0, std::move(g)});
    return d;
}

CholeskyCache::CholeskyCache(const GaussianSpec& g) {
    Eigen::LLT<Matrix> llt(g.cov);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("CholeskyCache: covariance is not positive definite");
    lower_ = llt.matrixL();
    log_det_ = 2.0 * lower_.diagonal().array().log().sum();
    Eigen::SelfAdjointEigenSolver<Matrix> es(g.cov);
    sqrt_ = es.operatorSqrt();
}

Vector CholeskyCache::solve(const Vector& x) const {
    Vector y = lower_.triangularView<Eigen::Lower>().solve(x);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix CholeskyCache::inverse() const {
    Matrix id = Matrix::Identity(lower_.rows(), lower_.cols());
    Matrix y = lower_.triangularView<Eigen::Lower>().solve(id);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Vector CholeskyCache::whiten(const Vector& d) const {
    return lower_.triangularView<Eigen::Lower>().solve(d);
}

double CholeskyCache::mahalanobis2(const Vector& d) const { return whiten(d).squaredNorm(); }

// ---------------------------------------------------------------------------
// Cumulant generating function
// ---------------------------------------------------------------------------

namespace {

// Per-component log terms log w_i + eta'mu_i + eta'Sigma_i eta / 2.
Vector cgf_log_terms(const MixtureSpec& dist, const Vector& eta) {
    require(eta.size() == dist.dim(), "cgf: eta has wrong dimension");
    Vector t(dist.size());
    for (int i = 0; i < dist.size(); ++i) {
        const auto& c = dist.components[i];
        t[i] = std::log(c.weight) + eta.dot(c.gaussian.mean) +
               0.5 * eta.dot(c.gaussian.cov * eta);
    }
    return t;
}

}  // namespace

double cgf(const MixtureSpec& dist, const Vector& eta) {
    return log_sum_exp(cgf_log_terms(dist, eta));
}

Vector cgf_component_weights(const MixtureSpec& dist, const Vector& eta) {
    Vector t = cgf_log_terms(dist, eta);
    double lse = log_sum_exp(t);
    Vector p(t.size());
    for (int i = 0; i < t.size(); ++i) p[i] = std::exp(t[i] - lse);
    return p;
}

Vector cgf_grad(const MixtureSpec& dist, const Vector& eta) {
    Vector p = cgf_component_weights(dist, eta);
    Vector g = Vector::Zero(dist.dim());
    for (int i = 0; i < dist.size(); ++i) {
        const auto& c = dist.components[i];
        g += p[i] * (c.gaussian.mean + c.gaussian.cov * eta);
    }
    return g;
}

Matrix cgf_hess(const MixtureSpec& dist, const Vector& eta) {
    Vector p = cgf_component_weights(dist, eta);
    Vector g = Vector::Zero(dist.dim());
    std::vector<Vector> gi(dist.size());
    for (int i = 0; i < dist.size(); ++i) {
        const auto& c = dist.components[i];
        gi[i] = c.gaussian.mean + c.gaussian.cov * eta;
        g += p[i] * gi[i];
    }
    // Centered form keeps the Hessian numerically PSD.
    Matrix h = Matrix::Zero(dist.dim(), dist.dim());
    for (int i = 0; i < dist.size(); ++i) {
        Vector d = gi[i] - g;
        h += p[i] * (dist.components[i].gaussian.cov + d * d.transpose());
    }
    return h;
}

// ---------------------------------------------------------------------------
// Rate functions
// ---------------------------------------------------------------------------

double rate_gaussian(const GaussianSpec& g, const Vector& xi) {
    require(xi.size() == g.dim(), "rate_gaussian: xi has wrong dimension");
    CholeskyCache chol(g);
    return 0.5 * chol.mahalanobis2(xi - g.mean);
}

double rate_gaussian(const CholeskyCache& chol, const Vector& mean, const Vector& xi) {
    return 0.5 * chol.mahalanobis2(xi - mean);
}

RateResult rate_mixture(const MixtureSpec& dist, const Vector& xi) {
    require(xi.size() == dist.dim(), "rate_mixture: xi has wrong dimension");
    if (dist.size() == 1) {
        const auto& g = dist.components.front().gaussian;
        CholeskyCache chol(g);
        RateResult r;
        r.eta = chol.solve(xi - g.mean);
        r.value = 0.5 * chol.mahalanobis2(xi - g.mean);
        return r;
    }
    GaussianSpec mm = dist.moment_match();
    CholeskyCache mmchol(mm);
    Vector eta = mmchol.solve(xi - mm.mean);

    auto objective = [&](const Vector& e) { return e.dot(xi) - cgf(dist, e); };
    double f = objective(eta);
    const double tol = 1e-8 * (1.0 + xi.norm());
    double resid = kInf;
    for (int it = 0; it < 200; ++it) {
        Vector r = xi - cgf_grad(dist, eta);
        resid = r.norm();
        if (resid <= tol) {
            RateResult out;
            out.eta = eta;
            out.value = f;
            return out;
        }
        Matrix h = cgf_hess(dist, eta);
        Eigen::LLT<Matrix> llt(h);
        Vector d;
        if (llt.info() == Eigen::Success) {
            d = llt.solve(r);
        } else {
            d = r;  // gradient ascent fallback
        }
        double slope = r.dot(d);
        if (slope <= 0) {
            d = r;
            slope = r.squaredNorm();
        }
        double t = 1.0;
        while (t > 1e-16) {
            Vector cand = eta + t * d;
            double fc = objective(cand);
            if (fc >= f + 1e-4 * t * slope) {
                eta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if (t <= 1e-16) break;  // line search stalled
    }
    std::ostringstream msg;
    msg << "rate_mixture: Newton iteration did not converge, residual " << resid;
    throw NumericError(msg.str());
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

Matrix sample(const MixtureSpec& dist, long long count, std::uint64_t seed) {
    require(count >= 1, "sample: count must be >= 1");
    int n = dist.dim();
    int M = dist.size();
    std::vector<CholeskyCache> chols;
    chols.reserve(M);
    std::vector<double> cumw(M);
    double acc = 0.0;
    for (int i = 0; i < M; ++i) {
        chols.emplace_back(dist.components[i].gaussian);
        acc += dist.components[i].weight;
        cumw[i] = acc;
    }
    cumw[M - 1] = 1.0;

    Rng rng(seed);
    Matrix out(count, n);
    for (long long r = 0; r < count; ++r) {
        int idx = 0;
        if (M > 1) {
            double u = rng.uniform();
            idx = static_cast<int>(std::lower_bound(cumw.begin(), cumw.end(), u) - cumw.begin());
        }
        Vector z = rng.normal_vector(n);
        out.row(r) =
            (dist.components[idx].gaussian.mean + chols[idx].lower() * z).transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// EM fitting
// ---------------------------------------------------------------------------

namespace {

double log_gaussian_pdf(const Vector& x, const Vector& mean, const CholeskyCache& chol) {
    double m2 = chol.mahalanobis2(x - mean);
    return -0.5 * (x.size() * kLog2Pi + chol.log_det() + m2);
}

void floor_eigenvalues(Matrix& cov, double floor) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.eigenvalues().minCoeff() >= floor) return;
    Vector ev = es.eigenvalues().cwiseMax(floor);
    cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

MixtureSpec fit_em(const Matrix& data, int M, std::uint64_t seed,
                   std::vector<double>* loglik_trace) {
    const long long N = data.rows();
    const int n = static_cast<int>(data.cols());
    require(M >= 1, "fit_em: M must be >= 1");
    require(N > 10LL * M * n, "fit_em: need more than 10*M*n data rows");

    Vector mean = data.colwise().mean();
    Matrix centered = data.rowwise() - mean.transpose();
    Matrix sample_cov = (centered.transpose() * centered) / static_cast<double>(N);
    {
        Eigen::LLT<Matrix> llt(sample_cov);
        require(llt.info() == Eigen::Success,
                "fit_em: sample covariance is rank deficient");
    }
    if (M == 1) {
        MixtureSpec out;
        out.components.push_back({1.0, GaussianSpec{mean, sample_cov}});
        return out;
    }

    const double cov_floor = 1e-8 * sample_cov.trace() / n;

    // k-means++ style seeding on the data rows.
    Rng rng(seed);
    std::vector<Vector> centers;
    centers.push_back(data.row(static_cast<long long>(rng.uniform() * N)).transpose());
    Vector d2 = Vector::Constant(N, kInf);
    while (static_cast<int>(centers.size()) < M) {
        for (long long i = 0; i < N; ++i) {
            double d = (data.row(i).transpose() - centers.back()).squaredNorm();
            d2[i] = std::min(d2[i], d);
        }
        double total = d2.sum();
        double target = rng.uniform() * total;
        long long pick = 0;
        double run = 0.0;
        for (long long i = 0; i < N; ++i) {
            run += d2[i];
            if (run >= target) {
                pick = i;
                break;
            }
        }
        centers.push_back(data.row(pick).transpose());
    }

    std::vector<double> w(M, 1.0 / M);
    std::vector<Vector> mu(centers);
    std::vector<Matrix> cov(M, sample_cov);

    Matrix log_resp(N, M);
    double prev_ll = -kInf;
    for (int iter = 0; iter < 500; ++iter) {
        std::vector<CholeskyCache> chols;
        chols.reserve(M);
        for (int k = 0; k < M; ++k) chols.emplace_back(GaussianSpec{mu[k], cov[k]});

        double ll = 0.0;
        for (long long i = 0; i < N; ++i) {
            Vector row(M);
            for (int k = 0; k < M; ++k)
                row[k] = std::log(w[k]) + log_gaussian_pdf(data.row(i).transpose(), mu[k], chols[k]);
            double lse = log_sum_exp(row);
            ll += lse;
            for (int k = 0; k < M; ++k) log_resp(i, k) = row[k] - lse;
        }
        if (loglik_trace) loglik_trace->push_back(ll);

        for (int k = 0; k < M; ++k) {
            double nk = 0.0;
            Vector m = Vector::Zero(n);
            for (long long i = 0; i < N; ++i) {
                double r = std::exp(log_resp(i, k));
                nk += r;
                m += r * data.row(i).transpose();
            }
            m /= nk;
            Matrix c = Matrix::Zero(n, n);
            for (long long i = 0; i < N; ++i) {
                Vector d = data.row(i).transpose() - m;
                c += std::exp(log_resp(i, k)) * (d * d.transpose());
            }
            c /= nk;
            floor_eigenvalues(c, cov_floor);
            w[k] = nk / N;
            mu[k] = m;
            cov[k] = c;
        }

        if (iter > 0 && ll - prev_ll < 1e-8 * (1.0 + std::fabs(ll))) {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }

    // Renormalize weights against accumulated round-off.
    double wsum = 0.0;
    for (double v : w) wsum += v;
    MixtureSpec out;
    for (int k = 0; k < M; ++k)
        out.components.push_back({w[k] / wsum, GaussianSpec{mu[k], cov[k]}});
    out.validate();
    return out;
}

}  // namespace ldtcc
