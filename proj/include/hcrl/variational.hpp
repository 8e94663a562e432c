#ifndef HCRL_VARIATIONAL_HPP
#define HCRL_VARIATIONAL_HPP

#include "hcrl/common.hpp"
#include "hcrl/hierarchy.hpp"
#include "hcrl/special.hpp"

#include <map>
#include <string>
#include <vector>

// Closed-form variational quantities: the Laplace Dirichlet bridge, the
// level posterior omega, the path posterior S, every ELBO term of the
// hierarchical model, and the flat VaDE ELBO used as baseline.

namespace hcrl {

struct DirichletPrior {
    Vec alpha;
    double alpha0() const { return alpha.sum(); }
};

struct LatentPosterior {
    Vec mu_z;
    Vec sigma2_z;
};

struct LevelProportionPosterior {
    Vec mu_eta;
    Vec sigma2_eta;
    Vec alpha_tilde; // derived by laplace_alpha, positive
};

/// Normalized posterior over full paths; leaf_ids follow the tree's
/// full_path_ids() order. Inner-path weights are descendant sums.
struct PathPosterior {
    std::vector<int> leaf_ids;
    Vec weights; // simplex over full paths

    double weight_of(int leaf_id) const {
        for (std::size_t i = 0; i < leaf_ids.size(); ++i)
            if (leaf_ids[i] == leaf_id)
                return weights[static_cast<Eigen::Index>(i)];
        throw invalid_input("PathPosterior: unknown leaf id");
    }
};

constexpr double kAlphaFloor = 1e-4;

/// Laplace bridge from a logistic-normal to Dirichlet parameters:
/// alpha_l = (1 - 2/L + exp(-mu_l)/L^2 * sum_l' exp(-mu_l')) / sigma2_l,
/// clamped to stay positive.
inline Vec laplace_alpha(const Vec &mu_eta, const Vec &sigma2_eta, double floor = kAlphaFloor) {
    require(mu_eta.size() == sigma2_eta.size(), "laplace_alpha: size mismatch");
    require((sigma2_eta.array() > 0.0).all(), "laplace_alpha: variances must be positive");
    if (!mu_eta.allFinite() || !sigma2_eta.allFinite())
        throw numeric_error("laplace_alpha: non-finite inputs");
    const double L = static_cast<double>(mu_eta.size());
    const Vec em = (-mu_eta.array()).exp().matrix();
    const double s = em.sum();
    Vec alpha(mu_eta.size());
    for (Eigen::Index l = 0; l < mu_eta.size(); ++l)
        alpha[l] = std::max(floor, (1.0 - 2.0 / L + em[l] * s / (L * L)) / sigma2_eta[l]);
    return alpha;
}

/// Vector-Jacobian product of laplace_alpha: maps dL/dalpha back to
/// (dL/dmu_eta, dL/dlog sigma2_eta). Clamped coordinates pass no gradient.
inline std::pair<Vec, Vec> laplace_alpha_vjp(const Vec &mu_eta, const Vec &sigma2_eta,
                                             const Vec &alpha, const Vec &dalpha,
                                             double floor = kAlphaFloor) {
    const Eigen::Index L = mu_eta.size();
    const double Ld = static_cast<double>(L);
    const Vec em = (-mu_eta.array()).exp().matrix();
    const double s = em.sum();
    Vec dmu = Vec::Zero(L), dls2 = Vec::Zero(L);
    for (Eigen::Index l = 0; l < L; ++l) {
        if (alpha[l] <= floor)
            continue; // clamped: subgradient zero
        dls2[l] += -alpha[l] * dalpha[l];
        for (Eigen::Index k = 0; k < L; ++k) {
            double jac = -em[l] * ((l == k ? s : 0.0) + em[k]) / (Ld * Ld * sigma2_eta[l]);
            dmu[k] += jac * dalpha[l];
        }
    }
    return {dmu, dls2};
}

/// E_{q(z)}[log N(z | mu, sigma2)] for diagonal Gaussians:
/// sum_j -log(2 pi sigma2_j)/2 - (mu_z - mu)^2/(2 sigma2) - sigma2_z/(2 sigma2).
inline double gaussian_cross(const Vec &mu_z, const Vec &sigma2_z, const Vec &mu, const Vec &sigma2) {
    require(mu_z.size() == mu.size() && sigma2_z.size() == sigma2.size() && mu_z.size() == sigma2.size(),
            "gaussian_cross: dimension mismatch");
    require((sigma2.array() > 0.0).all(), "gaussian_cross: nonpositive component variance");
    double t = 0.0;
    for (Eigen::Index j = 0; j < mu_z.size(); ++j) {
        double d = mu_z[j] - mu[j];
        t += -0.5 * std::log(2.0 * M_PI * sigma2[j]) - (d * d + sigma2_z[j]) / (2.0 * sigma2[j]);
    }
    return t;
}

inline double gaussian_cross(const Vec &mu_z, const Vec &sigma2_z, const TreeNode &node) {
    return gaussian_cross(mu_z, sigma2_z, node.mu, node.sigma2);
}

/// gaussian_cross against every tree node, keyed by node id.
inline std::map<int, double> node_cross_terms(const Hierarchy &tree, const Vec &mu_z,
                                              const Vec &sigma2_z) {
    std::map<int, double> out;
    for (int id : tree.all_ids())
        out[id] = gaussian_cross(mu_z, sigma2_z, tree.node(id));
    return out;
}

/// Mass each node receives from a path posterior: sum of S over the full
/// paths running through it (prefix sums; the root always carries 1).
inline std::map<int, double> node_prefix_mass(const Hierarchy &tree, const PathPosterior &S) {
    std::map<int, double> leaf_mass;
    for (std::size_t i = 0; i < S.leaf_ids.size(); ++i)
        leaf_mass[S.leaf_ids[i]] = S.weights[static_cast<Eigen::Index>(i)];
    return complete_path_mass(tree, leaf_mass);
}

/// omega_l ∝ exp{ sum_paths S * gaussian_cross(level-l node) + psi(alpha_l) - psi(alpha_0) }.
inline Vec level_posterior(const Hierarchy &tree, const PathPosterior &S, const Vec &alpha_tilde,
                           const Vec &mu_z, const Vec &sigma2_z) {
    const int L = tree.depth();
    require(alpha_tilde.size() == L, "level_posterior: alpha_tilde size != depth");
    auto cross = node_cross_terms(tree, mu_z, sigma2_z);
    auto mass = node_prefix_mass(tree, S);
    double a0 = alpha_tilde.sum();
    Vec logw(L);
    for (int l = 1; l <= L; ++l) {
        double g = 0.0;
        for (int id : tree.all_ids())
            if (tree.node(id).level == l)
                g += mass[id] * cross[id];
        logw[l - 1] = g + digamma(alpha_tilde[l - 1]) - digamma(a0);
    }
    return softmax_from_log(logw);
}

/// S_zeta ∝ exp{ E[log p(zeta|v)] + sum_l omega_l * gaussian_cross(node at level l) }
/// over full paths; returned normalized.
inline PathPosterior path_posterior(const Hierarchy &tree, const Vec &omega, const Vec &mu_z,
                                    const Vec &sigma2_z) {
    require(omega.size() == tree.depth(), "path_posterior: omega size != depth");
    PathPosterior out;
    out.leaf_ids = tree.full_path_ids();
    require(!out.leaf_ids.empty(), "path_posterior: tree has no full paths");
    auto cross = node_cross_terms(tree, mu_z, sigma2_z);
    auto priors = full_path_log_priors(tree);
    Vec logw(static_cast<Eigen::Index>(out.leaf_ids.size()));
    for (std::size_t i = 0; i < out.leaf_ids.size(); ++i) {
        auto chain = tree.path_nodes(out.leaf_ids[i]);
        double g = priors.at(out.leaf_ids[i]);
        for (std::size_t l = 0; l < chain.size(); ++l)
            g += omega[static_cast<Eigen::Index>(l)] * cross[chain[l]];
        logw[static_cast<Eigen::Index>(i)] = g;
    }
    out.weights = softmax_from_log(logw);
    return out;
}

/// sum over nodes of -KL(Beta(a,b) || Beta(1,gamma)); zero exactly at the prior.
inline double beta_term(const Hierarchy &tree, double gamma) {
    require(gamma > 0.0, "beta_term: gamma must be positive");
    double total = 0.0;
    for (int id : tree.all_ids()) {
        const TreeNode &n = tree.node(id);
        require(n.a > 0.0 && n.b > 0.0, "beta_term: nonpositive Beta parameters");
        total += std::log(gamma) + log_beta(n.a, n.b) - (n.a - 1.0) * digamma(n.a) -
                 (n.b - gamma) * digamma(n.b) + (n.a + n.b - 1.0 - gamma) * digamma(n.a + n.b);
    }
    return total;
}

/// E_q[log p(eta | alpha)] with q(eta) = Dirichlet(alpha_tilde).
inline double dirichlet_prior_cross(const DirichletPrior &prior, const Vec &alpha_tilde) {
    require(prior.alpha.size() == alpha_tilde.size(), "dirichlet_prior_cross: size mismatch");
    require((prior.alpha.array() > 0.0).all() && (alpha_tilde.array() > 0.0).all(),
            "dirichlet_prior_cross: nonpositive parameters");
    double a0t = alpha_tilde.sum();
    double t = std::lgamma(prior.alpha0());
    for (Eigen::Index i = 0; i < prior.alpha.size(); ++i)
        t += -std::lgamma(prior.alpha[i]) +
             (prior.alpha[i] - 1.0) * (digamma(alpha_tilde[i]) - digamma(a0t));
    return t;
}

/// E_q[log q(eta)] (negative entropy) of Dirichlet(alpha_tilde).
inline double dirichlet_neg_entropy(const Vec &alpha_tilde) {
    require((alpha_tilde.array() > 0.0).all(), "dirichlet_neg_entropy: nonpositive parameters");
    double a0 = alpha_tilde.sum();
    double t = std::lgamma(a0);
    for (Eigen::Index i = 0; i < alpha_tilde.size(); ++i)
        t += -std::lgamma(alpha_tilde[i]) +
             (alpha_tilde[i] - 1.0) * (digamma(alpha_tilde[i]) - digamma(a0));
    return t;
}

/// E_q[log p(l | eta)] = sum_l omega_l (psi(alpha_l) - psi(alpha_0)).
inline double level_loglik(const Vec &alpha_tilde, const Vec &omega) {
    require(alpha_tilde.size() == omega.size(), "level_loglik: size mismatch");
    double a0 = alpha_tilde.sum();
    double t = 0.0;
    for (Eigen::Index l = 0; l < omega.size(); ++l)
        t += omega[l] * (digamma(alpha_tilde[l]) - digamma(a0));
    return t;
}

/// E_q[log p(eta)] + E_q[log p(l|eta)] - E_q[log q(eta)] for one instance.
inline double dirichlet_terms(const DirichletPrior &prior, const Vec &alpha_tilde, const Vec &omega) {
    return dirichlet_prior_cross(prior, alpha_tilde) + level_loglik(alpha_tilde, omega) -
           dirichlet_neg_entropy(alpha_tilde);
}

/// d/d alpha_tilde of (prior cross + level term - neg entropy); the level
/// weight may be a per-instance omega or an accumulated sum of omegas (in
/// which case omega_weight is the number of instances behind it).
inline Vec dirichlet_terms_grad_alpha(const DirichletPrior &prior, const Vec &alpha_tilde,
                                      const Vec &omega, double omega_weight = 1.0) {
    double a0 = alpha_tilde.sum();
    double tg0 = trigamma(a0);
    Vec g(alpha_tilde.size());
    for (Eigen::Index k = 0; k < alpha_tilde.size(); ++k)
        g[k] = (prior.alpha[k] + omega[k] - alpha_tilde[k]) * trigamma(alpha_tilde[k]) -
               (prior.alpha0() + omega_weight - a0) * tg0;
    return g;
}

inline double categorical_neg_entropy(const Vec &p) {
    double t = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p[i] > 0.0)
            t += p[i] * std::log(p[i]);
    return t;
}

/// E_q[log q(z)] of the diagonal Gaussian posterior.
inline double gaussian_neg_entropy(const Vec &sigma2_z) {
    double t = -0.5 * static_cast<double>(sigma2_z.size()) * std::log(2.0 * M_PI);
    for (Eigen::Index j = 0; j < sigma2_z.size(); ++j)
        t -= 0.5 * (1.0 + std::log(sigma2_z[j]));
    return t;
}

enum class Observation { gaussian, bernoulli };

/// Log-likelihood of one instance given decoder output for one z sample.
/// Gaussian: out = [mu_x ; log sigma2_x], 2D wide. Bernoulli: out = logits, D wide.
inline double reconstruction_loglik(const Vec &x, const Vec &out, Observation obs) {
    if (obs == Observation::gaussian) {
        const Eigen::Index D = x.size();
        require(out.size() == 2 * D, "reconstruction_loglik: gaussian head must be 2D wide");
        double t = 0.0;
        for (Eigen::Index d = 0; d < D; ++d) {
            double ls2 = out[D + d];
            double diff = x[d] - out[d];
            t += -0.5 * (std::log(2.0 * M_PI) + ls2) - diff * diff / (2.0 * std::exp(ls2));
        }
        return t;
    }
    require(out.size() == x.size(), "reconstruction_loglik: bernoulli head must be D wide");
    double t = 0.0;
    for (Eigen::Index d = 0; d < x.size(); ++d)
        t += x[d] * log_sigmoid(out[d]) + (1.0 - x[d]) * log_sigmoid(-out[d]);
    return t;
}

/// d loglik / d decoder-output for one instance/sample.
inline Vec reconstruction_loglik_grad(const Vec &x, const Vec &out, Observation obs) {
    Vec g(out.size());
    if (obs == Observation::gaussian) {
        const Eigen::Index D = x.size();
        for (Eigen::Index d = 0; d < D; ++d) {
            double s2 = std::exp(out[D + d]);
            double diff = x[d] - out[d];
            g[d] = diff / s2;
            g[D + d] = -0.5 + diff * diff / (2.0 * s2);
        }
        return g;
    }
    for (Eigen::Index d = 0; d < x.size(); ++d)
        g[d] = x[d] - sigmoid(out[d]);
    return g;
}

/// Everything the hierarchical ELBO of one batch decomposes into.
/// tree_terms are counted with the caller's scale (1 for full batches,
/// batch/N inside an epoch) so that an epoch sums them exactly once.
struct ElboBreakdown {
    double recon = 0.0;      // E_q[log p(x|z)], R-sample average
    double sticks = 0.0;     // -KL(q(v)||p(v)), whole tree
    double path_prior = 0.0; // E_q[log p(zeta|v)]
    double dir_prior = 0.0;  // E_q[log p(eta)]
    double level_ll = 0.0;   // E_q[log p(l|eta)]
    double gauss_cross = 0.0;// E_q[log p(z|zeta,l)]
    double ent_path = 0.0;   // -E[log q(zeta)]
    double ent_level = 0.0;  // -E[log q(l)]
    double ent_eta = 0.0;    // -E[log q(eta)]
    double ent_z = 0.0;      // -E[log q(z)]

    double total() const {
        return recon + sticks + path_prior + dir_prior + level_ll + gauss_cross + ent_path +
               ent_level + ent_eta + ent_z;
    }

    ElboBreakdown &operator+=(const ElboBreakdown &o) {
        recon += o.recon; sticks += o.sticks; path_prior += o.path_prior;
        dir_prior += o.dir_prior; level_ll += o.level_ll; gauss_cross += o.gauss_cross;
        ent_path += o.ent_path; ent_level += o.ent_level; ent_eta += o.ent_eta; ent_z += o.ent_z;
        return *this;
    }

    static const std::vector<std::string> &names() {
        static const std::vector<std::string> n = {"recon",    "sticks",   "path_prior", "dir_prior",
                                                   "level_ll", "gauss_cross", "ent_path", "ent_level",
                                                   "ent_eta",  "ent_z"};
        return n;
    }
    std::vector<double> values() const {
        return {recon, sticks, path_prior, dir_prior, level_ll, gauss_cross, ent_path,
                ent_level, ent_eta, ent_z};
    }
};

/// Complete per-instance variational state.
struct InstanceState {
    LatentPosterior z;
    Vec alpha_tilde; // per-instance (HCRL2) or the shared global vector
    Vec omega;
    PathPosterior S;
};

/// Full hierarchical ELBO of a batch, Eq.-by-term. decoder_outputs[r] holds
/// the decoder head for the r-th reparameterized z sample, rows aligned
/// with X. With global_eta the Dirichlet prior/entropy enter once (scaled
/// by tree_scale) and only the level term stays per instance.
inline ElboBreakdown elbo_hcrl(const Mat &X, const Hierarchy &tree, double gamma,
                               const DirichletPrior &prior,
                               const std::vector<InstanceState> &states,
                               const std::vector<Mat> &decoder_outputs, Observation obs,
                               bool global_eta, double tree_scale = 1.0) {
    const Eigen::Index N = X.rows();
    require(static_cast<Eigen::Index>(states.size()) == N, "elbo_hcrl: state per instance required");
    require(!decoder_outputs.empty(), "elbo_hcrl: need at least one reparameterized sample (R >= 1)");
    for (const auto &D : decoder_outputs)
        require(D.rows() == N, "elbo_hcrl: decoder output rows must match batch");

    ElboBreakdown bd;
    bd.sticks = tree_scale * beta_term(tree, gamma);
    if (global_eta) {
        const Vec &at = states.empty() ? prior.alpha : states.front().alpha_tilde;
        bd.dir_prior = tree_scale * dirichlet_prior_cross(prior, at);
        bd.ent_eta = tree_scale * (-dirichlet_neg_entropy(at));
    }

    auto priors = full_path_log_priors(tree);
    const double R = static_cast<double>(decoder_outputs.size());

    for (Eigen::Index n = 0; n < N; ++n) {
        const InstanceState &st = states[static_cast<std::size_t>(n)];
        require(st.omega.size() == tree.depth(), "elbo_hcrl: incomplete state (omega)");
        require(st.S.weights.size() > 0, "elbo_hcrl: incomplete state (S)");

        for (const auto &D : decoder_outputs)
            bd.recon += reconstruction_loglik(X.row(n).transpose(), D.row(n).transpose(), obs) / R;

        for (std::size_t i = 0; i < st.S.leaf_ids.size(); ++i)
            bd.path_prior += st.S.weights[static_cast<Eigen::Index>(i)] * priors.at(st.S.leaf_ids[i]);

        auto mass = node_prefix_mass(tree, st.S);
        for (int id : tree.all_ids()) {
            const TreeNode &node = tree.node(id);
            bd.gauss_cross += mass[id] * st.omega[node.level - 1] *
                              gaussian_cross(st.z.mu_z, st.z.sigma2_z, node);
        }

        if (!global_eta) {
            bd.dir_prior += dirichlet_prior_cross(prior, st.alpha_tilde);
            bd.ent_eta += -dirichlet_neg_entropy(st.alpha_tilde);
        }
        bd.level_ll += level_loglik(st.alpha_tilde, st.omega);
        bd.ent_path += -categorical_neg_entropy(st.S.weights);
        bd.ent_level += -categorical_neg_entropy(st.omega);
        bd.ent_z += -gaussian_neg_entropy(st.z.sigma2_z);
    }
    if (!std::isfinite(bd.total()))
        throw numeric_error("elbo_hcrl: non-finite ELBO");
    return bd;
}

/// Flat mixture for the VaDE baseline.
struct FlatMixture {
    Vec kappa;  // simplex over components
    Mat mu;     // K x J
    Mat sigma2; // K x J, positive
    Eigen::Index K() const { return kappa.size(); }
};

/// q(c|x) = p(c | mu_z): responsibilities at the posterior mean embedding.
inline Vec vade_responsibilities(const FlatMixture &mix, const Vec &mu_z) {
    require(mix.K() >= 1, "vade_responsibilities: empty mixture");
    Vec logw(mix.K());
    for (Eigen::Index c = 0; c < mix.K(); ++c) {
        double t = std::log(std::max(mix.kappa[c], 1e-300));
        for (Eigen::Index j = 0; j < mu_z.size(); ++j) {
            double d = mu_z[j] - mix.mu(c, j);
            t += -0.5 * std::log(2.0 * M_PI * mix.sigma2(c, j)) - d * d / (2.0 * mix.sigma2(c, j));
        }
        logw[c] = t;
    }
    return softmax_from_log(logw);
}

/// VaDE ELBO of a batch (Eq. 1 shape): reconstruction plus the mixture
/// cross terms under q(c|x), plus the q(z) entropy. q_c rows align with X.
inline ElboBreakdown elbo_vade(const Mat &X, const FlatMixture &mix,
                               const std::vector<LatentPosterior> &zs, const Mat &q_c,
                               const std::vector<Mat> &decoder_outputs, Observation obs) {
    const Eigen::Index N = X.rows();
    require(static_cast<Eigen::Index>(zs.size()) == N, "elbo_vade: state per instance required");
    require(q_c.rows() == N && q_c.cols() == mix.K(), "elbo_vade: responsibility shape mismatch");
    require((mix.kappa.array() > 0.0).all(), "elbo_vade: degenerate mixture weights");
    require(std::abs(mix.kappa.sum() - 1.0) < 1e-8, "elbo_vade: kappa must be a simplex");

    ElboBreakdown bd;
    const double R = static_cast<double>(decoder_outputs.size());
    for (Eigen::Index n = 0; n < N; ++n) {
        for (const auto &D : decoder_outputs)
            bd.recon += reconstruction_loglik(X.row(n).transpose(), D.row(n).transpose(), obs) / R;
        for (Eigen::Index c = 0; c < mix.K(); ++c) {
            double q = q_c(n, c);
            if (q <= 0.0)
                continue;
            bd.gauss_cross += q * gaussian_cross(zs[static_cast<std::size_t>(n)].mu_z,
                                                 zs[static_cast<std::size_t>(n)].sigma2_z,
                                                 mix.mu.row(c).transpose(),
                                                 mix.sigma2.row(c).transpose());
            bd.path_prior += q * std::log(mix.kappa[c]); // cluster prior term
            bd.ent_path += -q * std::log(q);             // assignment entropy
        }
        bd.ent_z += -gaussian_neg_entropy(zs[static_cast<std::size_t>(n)].sigma2_z);
    }
    if (!std::isfinite(bd.total()))
        throw numeric_error("elbo_vade: non-finite ELBO");
    return bd;
}

} // namespace hcrl

#endif
