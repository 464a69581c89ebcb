#ifndef TASKMINE_TRAJECTORY_HPP
#define TASKMINE_TRAJECTORY_HPP

#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "env.hpp"

namespace taskmine {

struct QuotaUnreachable : Error {
    QuotaUnreachable(int got_pos, int got_neg)
        : Error("episode cap exceeded with " + std::to_string(got_pos) + " positive / " +
                std::to_string(got_neg) + " negative trajectories collected") {}
};

struct IoError : Error {
    explicit IoError(const std::string& path) : Error("cannot open " + path) {}
};

struct SchemaError : Error {
    SchemaError(std::size_t line, const std::string& what)
        : Error("schema error at line " + std::to_string(line) + ": " + what),
          line_number(line) {}
    std::size_t line_number;
};

struct EmptySide : Error {
    explicit EmptySide(const std::string& side)
        : Error("dataset has no " + side + " trajectories") {}
};

struct Trajectory {
    std::vector<SymbolicState> states;
    std::vector<std::string> actions;
    std::vector<double> rewards;
    bool positive = false;
    std::string env_name;
    std::uint64_t seed = 0;

    bool operator==(const Trajectory&) const = default;

    /// True iff some state of the trajectory contains every atom of `atoms`.
    bool visits(const std::set<GroundAtom>& atoms) const {
        for (const auto& s : states)
            if (s.contains_all(atoms)) return true;
        return false;
    }
};

struct Dataset {
    std::vector<Trajectory> positives;
    std::vector<Trajectory> negatives;

    bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------

struct CollectorSpec {
    std::string kind = "scripted"; // scripted | neural
    double epsilon = 0.1;          // noise on goal-directed episodes
    // neural collector
    int neural_hidden = 16;
    int neural_train_episodes = 40;
    double neural_lr = 0.05;

    nlohmann::json to_json() const {
        return {{"kind", kind},
                {"epsilon", epsilon},
                {"neural_hidden", neural_hidden},
                {"neural_train_episodes", neural_train_episodes},
                {"neural_lr", neural_lr}};
    }

    static CollectorSpec from_json(const nlohmann::json& j) {
        CollectorSpec s;
        s.kind = j.value("kind", std::string("scripted"));
        s.epsilon = j.value("epsilon", 0.1);
        s.neural_hidden = j.value("neural_hidden", 16);
        s.neural_train_episodes = j.value("neural_train_episodes", 40);
        s.neural_lr = j.value("neural_lr", 0.05);
        return s;
    }
};

namespace detail {

using Policy = std::function<Action(const Env&, const EnvState&, Rng&)>;

inline Trajectory rollout(const Env& env, const Policy& policy, std::uint64_t seed) {
    Rng rng(seed);
    Trajectory t;
    t.env_name = env.config().env_name;
    t.seed = seed;
    EnvState s = env.reset();
    t.states.push_back(env.symbolize(s));
    while (s.terminal == Terminal::none) {
        Action a = policy(env, s, rng);
        StepResult r = env.step(s, a);
        s = r.state;
        t.actions.push_back(action_name(a));
        t.rewards.push_back(r.reward);
        t.states.push_back(env.symbolize(s));
    }
    t.positive = s.terminal == Terminal::success;
    return t;
}

inline Action random_action(Rng& rng) {
    return static_cast<Action>(rng.below(action_names().size()));
}

/// Cells of required pickup objects, ascending and deduplicated.
inline std::vector<int> required_cells(const EnvConfig& cfg) {
    std::set<int> cells;
    std::set<std::string> required;
    for (const auto& req : cfg.subtask_spec)
        if (!req.is_door)
            for (const auto& n : req.objects) required.insert(n);
    for (const auto& o : cfg.object_layout)
        if (required.count(o.name)) cells.insert(o.cell);
    return {cells.begin(), cells.end()};
}

/// True while any distractor object is still on the grid.
inline bool distractors_remain(const Env& env, const EnvState& s) {
    std::set<std::string> req = env.required_objects();
    for (const auto& [name, cell] : s.objects_on_grid) {
        (void)cell;
        bool is_door = false;
        for (const auto& o : env.config().object_layout)
            if (o.name == name && o.kind == "door") is_door = true;
        if (!is_door && !req.count(name)) return true;
    }
    return false;
}

/// Goal-directed scripted episode along the canonical route (distractor sweep
/// first, then rightward); each step is replaced by a random action with
/// probability epsilon. During the sweep, noise never moves right, so no
/// pickup can happen out of route order and every success visits the same
/// subtask-completion states.
inline Trajectory ambitious_episode(const Env& env, const CollectorSpec& spec,
                                    std::uint64_t seed) {
    Policy policy = [&](const Env& e, const EnvState& s, Rng& rng) {
        if (rng.chance(spec.epsilon)) {
            Action a = random_action(rng);
            if (a == Action::move_right && distractors_remain(e, s)) a = Action::noop;
            return a;
        }
        return e.canonical_action(s);
    };
    return rollout(env, policy, seed);
}

/// Timid episode: follow the canonical route through the distractor sweep (so
/// negatives visit every pre-progress state positives do), walk right up to
/// the cell just before the first required pickup, then jitter below it until
/// the clock runs out. Never touches a required object: pickups happen on
/// walk-over, so a negative that reached a required cell would contain that
/// subtask's completion state and contaminate the contrastive signal.
inline Trajectory timid_episode(const Env& env, const CollectorSpec& spec,
                                std::uint64_t seed) {
    (void)spec;
    std::vector<int> cells = required_cells(env.config());
    const int cap = cells.empty() ? 0 : cells.front() - 1;

    Policy policy = [cap](const Env& e, const EnvState& s, Rng& rng) {
        if (distractors_remain(e, s)) return e.canonical_action(s);
        if (s.agent_pos < cap && rng.chance(0.9)) return Action::move_right;
        double u = rng.uniform01();
        Action a;
        if (u < 0.6)
            a = Action::move_left;
        else if (u < 0.8)
            a = Action::move_right;
        else if (u < 0.9)
            a = Action::noop;
        else
            a = Action::jump;
        if (a == Action::move_right && s.agent_pos >= cap) a = Action::noop;
        return a;
    };
    return rollout(env, policy, seed);
}

/// Tiny softmax MLP policy trained briefly with REINFORCE; stands in for the
/// "early stage of training" neural collector.
class NeuralAgent {
  public:
    NeuralAgent(const Env& env, int hidden, std::uint64_t seed)
        : env_(env), input_(static_cast<int>(env.vocabulary().vector_size())) {
        Rng rng(seed);
        auto init = [&](Eigen::MatrixXd& m) {
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j)
                    m(i, j) = rng.uniform(-0.1, 0.1);
        };
        w1_ = Eigen::MatrixXd(hidden, input_);
        b1_ = Eigen::VectorXd::Zero(hidden);
        w2_ = Eigen::MatrixXd(4, hidden);
        b2_ = Eigen::VectorXd::Zero(4);
        init(w1_);
        init(w2_);
    }

    void train(int episodes, double lr, std::uint64_t seed) {
        double baseline = 0.0;
        for (int ep = 0; ep < episodes; ++ep) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(ep)));
            std::vector<Eigen::VectorXd> xs, hs, probs;
            std::vector<int> acts;
            std::vector<double> rewards;
            EnvState s = env_.reset();
            while (s.terminal == Terminal::none) {
                Eigen::VectorXd x = vec(env_.symbolize(s));
                Eigen::VectorXd h = (w1_ * x + b1_).array().max(0.0);
                Eigen::VectorXd p = softmax(w2_ * h + b2_);
                int a = sample(p, rng);
                StepResult r = env_.step(s, static_cast<Action>(a));
                xs.push_back(x);
                hs.push_back(h);
                probs.push_back(p);
                acts.push_back(a);
                rewards.push_back(r.reward);
                s = r.state;
            }
            double ret = 0.0;
            for (double r : rewards) ret += r;
            baseline = ep == 0 ? ret : 0.9 * baseline + 0.1 * ret;
            double g = ret;
            for (std::size_t t = 0; t < xs.size(); ++t) {
                Eigen::VectorXd dlogit = -probs[t];
                dlogit(acts[t]) += 1.0;
                double adv = g - baseline;
                Eigen::VectorXd dh = w2_.transpose() * dlogit;
                for (Eigen::Index i = 0; i < dh.size(); ++i)
                    if (hs[t](i) <= 0.0) dh(i) = 0.0;
                w2_ += lr * adv * dlogit * hs[t].transpose();
                b2_ += lr * adv * dlogit;
                w1_ += lr * adv * dh * xs[t].transpose();
                b1_ += lr * adv * dh;
                g -= rewards[t];
            }
        }
    }

    Action act(const EnvState& s, Rng& rng) const {
        Eigen::VectorXd x = vec(env_.symbolize(s));
        Eigen::VectorXd h = (w1_ * x + b1_).array().max(0.0);
        Eigen::VectorXd p = softmax(w2_ * h + b2_);
        return static_cast<Action>(sample(p, rng));
    }

  private:
    Eigen::VectorXd vec(const SymbolicState& s) const {
        std::vector<double> v = state_to_vector(s, env_.vocabulary());
        return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    static Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
        Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
        return e / e.sum();
    }

    static int sample(const Eigen::VectorXd& p, Rng& rng) {
        double u = rng.uniform01(), acc = 0.0;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            acc += p(i);
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(p.size() - 1);
    }

    const Env& env_;
    int input_;
    Eigen::MatrixXd w1_, w2_;
    Eigen::VectorXd b1_, b2_;
};

} // namespace detail

/// Run episodes until the positive and negative quotas are both met.
/// Deterministic given (config, spec, seed).
inline Dataset collect(const EnvConfig& config, const CollectorSpec& spec, int n_pos,
                       int n_neg, std::uint64_t seed) {
    if (n_pos < 1 || n_neg < 1) throw InvalidConfig("quotas must be >= 1");
    Env env(config);
    Dataset out;
    const std::uint64_t cap =
        100ULL * (static_cast<std::uint64_t>(n_pos) + static_cast<std::uint64_t>(n_neg));

    std::optional<detail::NeuralAgent> agent;
    if (spec.kind == "neural") {
        agent.emplace(env, spec.neural_hidden, derive_seed(seed, 0xaaULL));
        agent->train(spec.neural_train_episodes, spec.neural_lr,
                     derive_seed(seed, 0xbbULL));
    } else if (spec.kind != "scripted") {
        throw InvalidConfig("unknown collector kind: " + spec.kind);
    }

    for (std::uint64_t ep = 0;; ++ep) {
        bool need_pos = out.positives.size() < static_cast<std::size_t>(n_pos);
        bool need_neg = out.negatives.size() < static_cast<std::size_t>(n_neg);
        if (!need_pos && !need_neg) break;
        if (ep >= cap)
            throw QuotaUnreachable(static_cast<int>(out.positives.size()),
                                   static_cast<int>(out.negatives.size()));
        std::uint64_t ep_seed = derive_seed(seed, ep);
        Trajectory t;
        if (agent) {
            // epsilon noise keeps failure episodes coming even once the
            // agent's softmax policy has saturated on an easy layout
            t = detail::rollout(
                env,
                [&](const Env&, const EnvState& s, Rng& rng) {
                    if (rng.chance(spec.epsilon)) return detail::random_action(rng);
                    return agent->act(s, rng);
                },
                ep_seed);
        } else if (need_pos) {
            t = detail::ambitious_episode(env, spec, ep_seed);
        } else {
            t = detail::timid_episode(env, spec, ep_seed);
        }
        if (t.positive && need_pos)
            out.positives.push_back(std::move(t));
        else if (!t.positive && need_neg)
            out.negatives.push_back(std::move(t));
    }
    return out;
}

// --- JSONL persistence ------------------------------------------------------

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
    nlohmann::json states = nlohmann::json::array();
    for (const auto& s : t.states) states.push_back(state_to_json(s));
    return {{"label", t.positive ? "pos" : "neg"}, {"seed", t.seed},
            {"env", t.env_name},                   {"states", states},
            {"actions", t.actions},                {"rewards", t.rewards}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    std::string label = j.at("label").get<std::string>();
    if (label != "pos" && label != "neg") throw Error("bad label: " + label);
    t.positive = label == "pos";
    t.seed = j.at("seed").get<std::uint64_t>();
    t.env_name = j.value("env", std::string());
    for (const auto& s : j.at("states")) t.states.push_back(state_from_json(s));
    t.actions = j.at("actions").get<std::vector<std::string>>();
    t.rewards = j.at("rewards").get<std::vector<double>>();
    if (t.actions.size() != t.rewards.size() ||
        t.states.size() != t.actions.size() + 1)
        throw Error("inconsistent lengths");
    return t;
}

/// One trajectory per line, UTF-8, alphabetical key order for byte-stable output.
inline void save(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path);
    for (const auto& t : dataset.positives) out << trajectory_to_json(t).dump() << "\n";
    for (const auto& t : dataset.negatives) out << trajectory_to_json(t).dump() << "\n";
}

inline Dataset load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path);
    Dataset out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            Trajectory t = trajectory_from_json(nlohmann::json::parse(line));
            (t.positive ? out.positives : out.negatives).push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(lineno, e.what());
        } catch (const Error& e) {
            throw SchemaError(lineno, e.what());
        }
    }
    return out;
}

/// Uniform independent draws from each side.
inline std::pair<const Trajectory*, const Trajectory*> sample_pair(const Dataset& d,
                                                                   Rng& rng) {
    if (d.positives.empty()) throw EmptySide("positive");
    if (d.negatives.empty()) throw EmptySide("negative");
    return {&d.positives[rng.below(d.positives.size())],
            &d.negatives[rng.below(d.negatives.size())]};
}

} // namespace taskmine

#endif
