#ifndef TASKMINE_POLICY_HPP
#define TASKMINE_POLICY_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "search.hpp"

namespace taskmine {

struct DivergedWeights : Error {
    DivergedWeights() : Error("policy weights became non-finite") {}
};

struct DuplicateRule : Error {
    explicit DuplicateRule(const std::string& text)
        : Error("duplicate rule in composition: " + text) {}
};

/// Sequencing guard attached to a rule by compose_subtask_policies. The rule
/// is active only while require_atoms all hold (predecessor subtasks done;
/// empty set = trivially done) and fresh_atoms do not yet all hold (own
/// subtask incomplete; empty set = never done).
struct RuleGuard {
    std::set<GroundAtom> require_atoms;
    std::set<GroundAtom> fresh_atoms;

    bool active(const SymbolicState& s) const {
        if (!s.contains_all(require_atoms)) return false;
        if (!fresh_atoms.empty() && s.contains_all(fresh_atoms)) return false;
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json req = nlohmann::json::array(), fresh = nlohmann::json::array();
        for (const auto& a : require_atoms) req.push_back(atom_to_json(a));
        for (const auto& a : fresh_atoms) fresh.push_back(atom_to_json(a));
        return {{"require", req}, {"fresh", fresh}};
    }

    static RuleGuard from_json(const nlohmann::json& j) {
        RuleGuard g;
        for (const auto& a : j.at("require")) g.require_atoms.insert(atom_from_json(a));
        for (const auto& a : j.at("fresh")) g.fresh_atoms.insert(atom_from_json(a));
        return g;
    }
};

struct WeightedRuleSet {
    std::vector<Rule> rules;
    std::vector<double> weights;
    std::vector<std::string> action_order = action_names();
    std::vector<RuleGuard> guards; // empty, or one per rule
    std::vector<int> groups;       // empty, or composing subtask index per rule

    std::size_t size() const { return rules.size(); }

    void check() const {
        if (weights.size() != rules.size())
            throw InvalidConfig("weights/rules length mismatch");
        if (!guards.empty() && guards.size() != rules.size())
            throw InvalidConfig("guards/rules length mismatch");
        for (double w : weights)
            if (!std::isfinite(w)) throw DivergedWeights();
        for (const auto& r : rules)
            if (std::find(action_order.begin(), action_order.end(), r.head.pred) ==
                action_order.end())
                throw InvalidConfig("rule head not in action_order: " + r.head.pred);
    }

    static WeightedRuleSet unit(std::vector<Rule> rules) {
        WeightedRuleSet rs;
        rs.rules = std::move(rules);
        rs.weights.assign(rs.rules.size(), 1.0);
        return rs;
    }
};

/// Rule activation: guard gate times crisp body satisfaction.
inline double rule_activation(const WeightedRuleSet& rs, std::size_t i,
                              const SymbolicState& state, const Vocabulary& vocab) {
    if (!rs.guards.empty() && !rs.guards[i].active(state)) return 0.0;
    return ground_body(rs.rules[i], state, vocab);
}

/// Softmax over per-action logits, logit(a) = sum of weight * activation over
/// rules with head a. Actions without rules keep logit 0.
inline std::vector<double> action_distribution(const WeightedRuleSet& rs,
                                               const SymbolicState& state,
                                               const Vocabulary& vocab) {
    rs.check();
    std::vector<double> logits(rs.action_order.size(), 0.0);
    for (std::size_t i = 0; i < rs.rules.size(); ++i) {
        double act = rule_activation(rs, i, state, vocab);
        if (act == 0.0) continue;
        auto it = std::find(rs.action_order.begin(), rs.action_order.end(),
                            rs.rules[i].head.pred);
        logits[static_cast<std::size_t>(it - rs.action_order.begin())] +=
            rs.weights[i] * act;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t a = 0; a < logits.size(); ++a) {
        p[a] = std::exp(logits[a] - mx);
        total += p[a];
    }
    for (double& x : p) x /= total;
    return p;
}

inline std::pair<std::string, double> sample_action(const WeightedRuleSet& rs,
                                                    const SymbolicState& state,
                                                    const Vocabulary& vocab, Rng& rng) {
    std::vector<double> p = action_distribution(rs, state, vocab);
    double u = rng.uniform01(), acc = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t a = 0; a < p.size(); ++a) {
        acc += p[a];
        if (u < acc) {
            pick = a;
            break;
        }
    }
    return {rs.action_order[pick], std::log(p[pick])};
}

/// Greedy action; ties resolved to the lowest action_order index.
inline std::string greedy_action(const WeightedRuleSet& rs, const SymbolicState& state,
                                 const Vocabulary& vocab) {
    std::vector<double> p = action_distribution(rs, state, vocab);
    std::size_t best = 0;
    for (std::size_t a = 1; a < p.size(); ++a)
        if (p[a] > p[best]) best = a;
    return rs.action_order[best];
}

/// d log pi(a|s) / d w_r = act_r * (1[head_r == a] - pi(head_r | s)).
inline std::vector<double> log_prob_grad(const WeightedRuleSet& rs,
                                         const SymbolicState& state,
                                         const std::string& action,
                                         const Vocabulary& vocab) {
    std::vector<double> p = action_distribution(rs, state, vocab);
    std::vector<double> g(rs.rules.size(), 0.0);
    for (std::size_t i = 0; i < rs.rules.size(); ++i) {
        double act = rule_activation(rs, i, state, vocab);
        if (act == 0.0) continue;
        const std::string& head = rs.rules[i].head.pred;
        auto it = std::find(rs.action_order.begin(), rs.action_order.end(), head);
        double p_head = p[static_cast<std::size_t>(it - rs.action_order.begin())];
        g[i] = act * ((head == action ? 1.0 : 0.0) - p_head);
    }
    return g;
}

struct PolicyTrainConfig {
    double gamma = 0.99;
    double learning_rate = 0.01;
    int episodes = 200;
    std::string baseline = "running-mean"; // none | running-mean
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"gamma", gamma},       {"learning_rate", learning_rate},
                {"episodes", episodes}, {"baseline", baseline},
                {"seed", seed}};
    }

    static PolicyTrainConfig from_json(const nlohmann::json& j) {
        PolicyTrainConfig c;
        c.gamma = j.value("gamma", 0.99);
        c.learning_rate = j.value("learning_rate", 0.01);
        c.episodes = j.value("episodes", 200);
        c.baseline = j.value("baseline", std::string("running-mean"));
        c.seed = j.value("seed", std::uint64_t(0));
        if (c.gamma < 0.0 || c.gamma > 1.0) throw InvalidConfig("gamma must be in [0,1]");
        if (c.baseline != "none" && c.baseline != "running-mean")
            throw InvalidConfig("baseline must be none or running-mean");
        return c;
    }
};

struct PolicyTrainResult {
    WeightedRuleSet ruleset;
    std::vector<double> return_curve; // undiscounted return per episode
};

/// REINFORCE on the rule weights with a running-mean baseline over observed
/// discounted returns. Deterministic given config.seed.
inline PolicyTrainResult train_reinforce(const WeightedRuleSet& initial, const Env& env,
                                         const PolicyTrainConfig& config) {
    initial.check();
    if (initial.rules.empty()) throw InvalidConfig("cannot train an empty ruleset");
    PolicyTrainResult out;
    out.ruleset = initial;
    const Vocabulary& vocab = env.vocabulary();
    double baseline_mean = 0.0;
    long baseline_n = 0;
    for (int ep = 0; ep < config.episodes; ++ep) {
        Rng rng(derive_seed(config.seed, 0x9e0100ULL + static_cast<std::uint64_t>(ep)));
        std::vector<SymbolicState> states;
        std::vector<std::string> actions;
        std::vector<double> rewards;
        EnvState s = env.reset();
        while (s.terminal == Terminal::none) {
            SymbolicState sym = env.symbolize(s);
            auto [a, logp] = sample_action(out.ruleset, sym, vocab, rng);
            (void)logp;
            StepResult r = env.step(s, action_from_name(a));
            states.push_back(sym);
            actions.push_back(a);
            rewards.push_back(r.reward);
            s = r.state;
        }
        std::vector<double> returns(rewards.size());
        double g = 0.0, undiscounted = 0.0;
        for (std::size_t t = rewards.size(); t-- > 0;) {
            g = rewards[t] + config.gamma * g;
            returns[t] = g;
            undiscounted += rewards[t];
        }
        std::vector<double> grad(out.ruleset.rules.size(), 0.0);
        for (std::size_t t = 0; t < states.size(); ++t) {
            double adv = returns[t];
            if (config.baseline == "running-mean") {
                adv -= baseline_mean;
                ++baseline_n;
                baseline_mean += (returns[t] - baseline_mean) / baseline_n;
            }
            std::vector<double> gl = log_prob_grad(out.ruleset, states[t], actions[t], vocab);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += adv * gl[i];
        }
        for (std::size_t i = 0; i < grad.size(); ++i) {
            out.ruleset.weights[i] += config.learning_rate * grad[i];
            if (!std::isfinite(out.ruleset.weights[i])) throw DivergedWeights();
        }
        out.return_curve.push_back(undiscounted);
    }
    return out;
}

/// Greedy-policy evaluation: mean and sample standard deviation of the
/// undiscounted return over n_episodes.
inline std::pair<double, double> evaluate(const WeightedRuleSet& rs, const Env& env,
                                          int n_episodes, std::uint64_t seed) {
    rs.check();
    if (n_episodes < 1) throw InvalidConfig("n_episodes must be >= 1");
    (void)seed; // greedy rollouts are deterministic; seed kept for interface parity
    const Vocabulary& vocab = env.vocabulary();
    std::vector<double> scores;
    for (int ep = 0; ep < n_episodes; ++ep) {
        EnvState s = env.reset();
        double total = 0.0;
        while (s.terminal == Terminal::none) {
            std::string a = greedy_action(rs, env.symbolize(s), vocab);
            StepResult r = env.step(s, action_from_name(a));
            total += r.reward;
            s = r.state;
        }
        scores.push_back(total);
    }
    double mean = 0.0;
    for (double x : scores) mean += x;
    mean /= scores.size();
    double var = 0.0;
    if (scores.size() > 1) {
        for (double x : scores) var += (x - mean) * (x - mean);
        var /= static_cast<double>(scores.size() - 1);
    }
    return {mean, std::sqrt(var)};
}

namespace detail {

/// Atoms over predicates that, once true, stay true for the rest of an
/// episode; only these are usable as sequencing guards.
inline std::set<GroundAtom> persistent_atoms(const std::set<GroundAtom>& atoms) {
    static const std::set<std::string> persistent = {"picked", "have", "all_collected",
                                                     "at_door"};
    std::set<GroundAtom> out;
    for (const auto& a : atoms)
        if (persistent.count(a.pred)) out.insert(a);
    return out;
}

} // namespace detail

/// Concatenate per-subtask rulesets in the given order, gating each group so
/// it activates only after its predecessors' persistent atoms hold and before
/// its own do.
inline WeightedRuleSet compose_subtask_policies(
    const std::vector<WeightedRuleSet>& per_subtask,
    const std::vector<Subtask>& subtask_order) {
    if (per_subtask.size() != subtask_order.size())
        throw InvalidConfig("one ruleset per subtask required");
    WeightedRuleSet out;
    std::set<std::string> seen;
    std::set<GroundAtom> done_so_far;
    for (std::size_t k = 0; k < per_subtask.size(); ++k) {
        per_subtask[k].check();
        RuleGuard guard;
        guard.require_atoms = done_so_far;
        guard.fresh_atoms = detail::persistent_atoms(subtask_order[k].atoms);
        for (std::size_t i = 0; i < per_subtask[k].rules.size(); ++i) {
            std::string text = format_rule(per_subtask[k].rules[i]);
            if (!seen.insert(text).second) throw DuplicateRule(text);
            out.rules.push_back(per_subtask[k].rules[i]);
            out.weights.push_back(per_subtask[k].weights[i]);
            out.guards.push_back(guard);
            out.groups.push_back(static_cast<int>(k));
        }
        for (const auto& a : guard.fresh_atoms) done_so_far.insert(a);
    }
    return out;
}

inline nlohmann::json policy_to_json(const WeightedRuleSet& rs) {
    rs.check();
    nlohmann::json rules = nlohmann::json::array();
    for (std::size_t i = 0; i < rs.rules.size(); ++i) {
        nlohmann::json e = {{"rule", format_rule(rs.rules[i])},
                            {"weight", rs.weights[i]}};
        if (!rs.guards.empty()) e["guard"] = rs.guards[i].to_json();
        if (!rs.groups.empty()) e["group"] = rs.groups[i];
        rules.push_back(e);
    }
    return {{"action_order", rs.action_order}, {"rules", rules}};
}

inline WeightedRuleSet policy_from_json(const nlohmann::json& j,
                                        const Vocabulary* vocab = nullptr) {
    WeightedRuleSet rs;
    rs.action_order = j.at("action_order").get<std::vector<std::string>>();
    for (const auto& e : j.at("rules")) {
        rs.rules.push_back(parse_rule(e.at("rule").get<std::string>(), vocab));
        rs.weights.push_back(e.at("weight").get<double>());
        if (e.contains("guard")) rs.guards.push_back(RuleGuard::from_json(e.at("guard")));
        if (e.contains("group")) rs.groups.push_back(e.at("group").get<int>());
    }
    rs.check();
    return rs;
}

inline void save_policy(const WeightedRuleSet& rs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << policy_to_json(rs).dump(2) << "\n";
}

inline WeightedRuleSet load_policy(const std::string& path,
                                   const Vocabulary* vocab = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return policy_from_json(nlohmann::json::parse(in), vocab);
}

inline void save_eval_csv(int episodes, double mean, double stddev,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g\n", episodes, mean, stddev);
    out << "episodes,mean,std\n" << buf;
}

} // namespace taskmine

#endif
