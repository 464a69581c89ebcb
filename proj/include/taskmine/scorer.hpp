#ifndef TASKMINE_SCORER_HPP
#define TASKMINE_SCORER_HPP

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "trajectory.hpp"

namespace taskmine {

struct ShapeMismatch : Error {
    ShapeMismatch(long got, long want)
        : Error("input length " + std::to_string(got) + " does not match scorer input " +
                std::to_string(want)) {}
};

struct EmptyTrajectory : Error {
    EmptyTrajectory() : Error("trajectory has no states") {}
};

struct DivergedLoss : Error {
    DivergedLoss() : Error("training loss became non-finite") {}
};

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Two-layer MLP mapping a state vector to a landmark score in [0, 1]:
/// sigmoid(W2 . relu(W1 x + b1) + b2).
struct ScorerParams {
    Eigen::MatrixXd w1;    // hidden x input
    Eigen::VectorXd b1;    // hidden
    Eigen::RowVectorXd w2; // 1 x hidden
    double b2 = 0.0;

    int hidden_dim() const { return static_cast<int>(w1.rows()); }
    int input_dim() const { return static_cast<int>(w1.cols()); }

    static ScorerParams zeros(int input, int hidden) {
        ScorerParams p;
        p.w1 = Eigen::MatrixXd::Zero(hidden, input);
        p.b1 = Eigen::VectorXd::Zero(hidden);
        p.w2 = Eigen::RowVectorXd::Zero(hidden);
        p.b2 = 0.0;
        return p;
    }

    static ScorerParams init(int input, int hidden, std::uint64_t seed) {
        ScorerParams p = zeros(input, hidden);
        Rng rng(seed);
        for (Eigen::Index i = 0; i < p.w1.rows(); ++i)
            for (Eigen::Index j = 0; j < p.w1.cols(); ++j)
                p.w1(i, j) = rng.uniform(-0.1, 0.1);
        for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = rng.uniform(-0.1, 0.1);
        for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2(i) = rng.uniform(-0.1, 0.1);
        p.b2 = rng.uniform(-0.1, 0.1);
        return p;
    }

    nlohmann::json to_json(const std::string& vocab_hash = "") const {
        nlohmann::json jw1 = nlohmann::json::array();
        for (Eigen::Index i = 0; i < w1.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index j = 0; j < w1.cols(); ++j) row.push_back(w1(i, j));
            jw1.push_back(row);
        }
        nlohmann::json jb1 = nlohmann::json::array(), jw2 = nlohmann::json::array();
        for (Eigen::Index i = 0; i < b1.size(); ++i) jb1.push_back(b1(i));
        for (Eigen::Index i = 0; i < w2.size(); ++i) jw2.push_back(w2(i));
        return {{"hidden_dim", hidden_dim()}, {"input_dim", input_dim()},
                {"vocab_hash", vocab_hash},   {"w1", jw1},
                {"b1", jb1},                  {"w2", jw2},
                {"b2", b2}};
    }

    static ScorerParams from_json(const nlohmann::json& j) {
        int hidden = j.at("hidden_dim").get<int>();
        int input = j.at("input_dim").get<int>();
        ScorerParams p = zeros(input, hidden);
        for (int i = 0; i < hidden; ++i)
            for (int k = 0; k < input; ++k) p.w1(i, k) = j.at("w1")[i][k].get<double>();
        for (int i = 0; i < hidden; ++i) p.b1(i) = j.at("b1")[i].get<double>();
        for (int i = 0; i < hidden; ++i) p.w2(i) = j.at("w2")[i].get<double>();
        p.b2 = j.at("b2").get<double>();
        return p;
    }
};

struct TrainConfig {
    double learning_rate = 0.05;
    int epochs = 3000;
    int pairs_per_epoch = 64;
    int hidden_dim = 64;
    std::uint64_t seed = 0;
    double threshold = 0.9; // candidate cutoff in (0, 1)

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate}, {"epochs", epochs},
                {"pairs_per_epoch", pairs_per_epoch}, {"hidden_dim", hidden_dim},
                {"seed", seed}, {"threshold", threshold}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.learning_rate = j.value("learning_rate", 0.05);
        c.epochs = j.value("epochs", 3000);
        c.pairs_per_epoch = j.value("pairs_per_epoch", 64);
        c.hidden_dim = j.value("hidden_dim", 64);
        c.seed = j.value("seed", std::uint64_t(0));
        c.threshold = j.value("threshold", 0.9);
        if (c.learning_rate <= 0.0) throw InvalidConfig("learning_rate must be > 0");
        if (c.threshold <= 0.0 || c.threshold >= 1.0)
            throw InvalidConfig("threshold must be in (0,1)");
        return c;
    }
};

inline double score(const ScorerParams& p, const Eigen::VectorXd& x) {
    if (x.size() != p.w1.cols())
        throw ShapeMismatch(static_cast<long>(x.size()), static_cast<long>(p.w1.cols()));
    Eigen::VectorXd h = (p.w1 * x + p.b1).array().max(0.0);
    return sigmoid(p.w2.dot(h) + p.b2);
}

inline double score(const ScorerParams& p, const std::vector<double>& x) {
    Eigen::Map<const Eigen::VectorXd> m(x.data(), static_cast<Eigen::Index>(x.size()));
    return score(p, Eigen::VectorXd(m));
}

inline double score_state(const ScorerParams& p, const SymbolicState& s,
                          const Vocabulary& vocab) {
    return score(p, state_to_vector(s, vocab));
}

struct ScorerGrad {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::RowVectorXd w2;
    double b2 = 0.0;

    static ScorerGrad zeros(const ScorerParams& p) {
        ScorerGrad g;
        g.w1 = Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols());
        g.b1 = Eigen::VectorXd::Zero(p.b1.size());
        g.w2 = Eigen::RowVectorXd::Zero(p.w2.size());
        return g;
    }

    void add_scaled(const ScorerGrad& o, double c) {
        w1 += c * o.w1;
        b1 += c * o.b1;
        w2 += c * o.w2;
        b2 += c * o.b2;
    }
};

namespace detail {

/// d(sum of scores)/d(params) for one trajectory's state vectors.
inline ScorerGrad score_sum_grad(const ScorerParams& p,
                                 const std::vector<Eigen::VectorXd>& xs, double& sum) {
    ScorerGrad g = ScorerGrad::zeros(p);
    sum = 0.0;
    for (const auto& x : xs) {
        Eigen::VectorXd z = p.w1 * x + p.b1;
        Eigen::VectorXd h = z.array().max(0.0);
        double f = sigmoid(p.w2.dot(h) + p.b2);
        sum += f;
        double df = f * (1.0 - f);
        Eigen::VectorXd dh = df * p.w2.transpose();
        for (Eigen::Index i = 0; i < dh.size(); ++i)
            if (z(i) <= 0.0) dh(i) = 0.0;
        g.w2 += df * h.transpose();
        g.b2 += df;
        g.w1 += dh * x.transpose();
        g.b1 += dh;
    }
    return g;
}

inline std::vector<Eigen::VectorXd> trajectory_vectors(const Trajectory& t,
                                                       const Vocabulary& vocab) {
    std::vector<Eigen::VectorXd> out;
    for (const auto& s : t.states) {
        std::vector<double> v = state_to_vector(s, vocab);
        out.push_back(
            Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    return out;
}

} // namespace detail

/// Pairwise contrastive loss, softplus(S_n - S_p) with S the per-trajectory
/// score sums. Stable reformulation of the log-ratio objective; minimizing it
/// maximizes that objective.
inline double pair_loss(const ScorerParams& p, const std::vector<Eigen::VectorXd>& pos,
                        const std::vector<Eigen::VectorXd>& neg) {
    if (pos.empty() || neg.empty()) throw EmptyTrajectory();
    double sp = 0.0, sn = 0.0;
    for (const auto& x : pos) sp += score(p, x);
    for (const auto& x : neg) sn += score(p, x);
    return softplus(sn - sp);
}

inline double pair_loss(const ScorerParams& p, const Trajectory& pos,
                        const Trajectory& neg, const Vocabulary& vocab) {
    return pair_loss(p, detail::trajectory_vectors(pos, vocab),
                     detail::trajectory_vectors(neg, vocab));
}

/// Analytic gradient of pair_loss; returns the loss.
inline double pair_loss_grad(const ScorerParams& p,
                             const std::vector<Eigen::VectorXd>& pos,
                             const std::vector<Eigen::VectorXd>& neg, ScorerGrad& grad) {
    if (pos.empty() || neg.empty()) throw EmptyTrajectory();
    double sp = 0.0, sn = 0.0;
    ScorerGrad gp = detail::score_sum_grad(p, pos, sp);
    ScorerGrad gn = detail::score_sum_grad(p, neg, sn);
    double d = sn - sp;
    double w = sigmoid(d); // d softplus(d) / dd
    grad = ScorerGrad::zeros(p);
    grad.add_scaled(gn, w);
    grad.add_scaled(gp, -w);
    return softplus(d);
}

struct TrainResult {
    ScorerParams params;
    std::vector<double> loss_curve; // mean pair loss per epoch
};

/// Gradient descent on the mean pair loss over freshly sampled pairs each
/// epoch. Deterministic given (dataset, config.seed).
inline TrainResult train(const Dataset& dataset, const TrainConfig& config,
                         const Vocabulary& vocab) {
    if (dataset.positives.empty()) throw EmptySide("positive");
    if (dataset.negatives.empty()) throw EmptySide("negative");
    TrainResult out;
    out.params = ScorerParams::init(static_cast<int>(vocab.vector_size()),
                                    config.hidden_dim, config.seed);
    // state vectors are shared across trajectories; cache by symbolic state
    std::map<SymbolicState, Eigen::VectorXd> cache;
    auto vectors = [&](const Trajectory& t) {
        std::vector<Eigen::VectorXd> xs;
        for (const auto& s : t.states) {
            auto it = cache.find(s);
            if (it == cache.end()) {
                std::vector<double> v = state_to_vector(s, vocab);
                it = cache
                         .emplace(s, Eigen::Map<Eigen::VectorXd>(
                                         v.data(), static_cast<Eigen::Index>(v.size())))
                         .first;
            }
            xs.push_back(it->second);
        }
        return xs;
    };
    std::vector<std::vector<Eigen::VectorXd>> pos_vecs, neg_vecs;
    for (const auto& t : dataset.positives) pos_vecs.push_back(vectors(t));
    for (const auto& t : dataset.negatives) neg_vecs.push_back(vectors(t));

    Rng rng(derive_seed(config.seed, 0x70a1ULL));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        ScorerGrad total = ScorerGrad::zeros(out.params);
        double mean_loss = 0.0;
        for (int k = 0; k < config.pairs_per_epoch; ++k) {
            const auto& pv = pos_vecs[rng.below(pos_vecs.size())];
            const auto& nv = neg_vecs[rng.below(neg_vecs.size())];
            ScorerGrad g;
            mean_loss += pair_loss_grad(out.params, pv, nv, g);
            total.add_scaled(g, 1.0);
        }
        mean_loss /= config.pairs_per_epoch;
        if (!std::isfinite(mean_loss)) throw DivergedLoss();
        double scale = -config.learning_rate / config.pairs_per_epoch;
        out.params.w1 += scale * total.w1;
        out.params.b1 += scale * total.b1;
        out.params.w2 += scale * total.w2;
        out.params.b2 += scale * total.b2;
        out.loss_curve.push_back(mean_loss);
    }
    return out;
}

/// Unique states from positive trajectories scoring at or above the cutoff.
inline std::set<SymbolicState> candidates(const ScorerParams& params,
                                          const Dataset& dataset, double threshold,
                                          const Vocabulary& vocab) {
    std::set<SymbolicState> seen, out;
    for (const auto& t : dataset.positives)
        for (const auto& s : t.states)
            if (seen.insert(s).second && score_state(params, s, vocab) >= threshold)
                out.insert(s);
    return out;
}

} // namespace taskmine

#endif
