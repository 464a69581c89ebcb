#ifndef TASKMINE_SEARCH_HPP
#define TASKMINE_SEARCH_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorer.hpp"

namespace taskmine {

struct EmptyRoot : Error {
    EmptyRoot() : Error("root node has no unique states") {}
};

struct EmptyFrontier : Error {
    EmptyFrontier() : Error("cannot select from an empty frontier") {}
};

struct LeafNode : Error {
    LeafNode() : Error("cannot expand a single-predicate node") {}
};

struct TooManyPredicates : Error {
    explicit TooManyPredicates(std::size_t n)
        : Error("brute force limited to 16 predicates, got " + std::to_string(n)) {}
};

/// A node in the predicate-subset lattice. Level counts removed predicates;
/// unique_states are the projections of the candidate pool onto preds.
struct SearchNode {
    std::set<std::string> preds;
    int level = 0;
    int node_id = 0;
    std::set<SymbolicState> unique_states;
};

struct Subtask {
    std::set<std::string> preds;
    std::set<GroundAtom> atoms;
    int level = 0;

    nlohmann::json to_json() const {
        nlohmann::json jp = nlohmann::json::array();
        for (const auto& p : preds) jp.push_back(p);
        nlohmann::json ja = nlohmann::json::array();
        for (const auto& a : atoms) ja.push_back(atom_to_json(a));
        return {{"preds", jp}, {"atoms", ja}, {"level", level}};
    }

    static Subtask from_json(const nlohmann::json& j) {
        Subtask s;
        for (const auto& p : j.at("preds")) s.preds.insert(p.get<std::string>());
        for (const auto& a : j.at("atoms")) s.atoms.insert(atom_from_json(a));
        s.level = j.at("level").get<int>();
        return s;
    }
};

struct SearchConfig {
    int neg_test_size = 10;
    double softmax_temperature = 1.0;
    int max_expansions = 20000;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"neg_test_size", neg_test_size},
                {"softmax_temperature", softmax_temperature},
                {"max_expansions", max_expansions},
                {"seed", seed}};
    }

    static SearchConfig from_json(const nlohmann::json& j) {
        SearchConfig c;
        c.neg_test_size = j.value("neg_test_size", 10);
        c.softmax_temperature = j.value("softmax_temperature", 1.0);
        c.max_expansions = j.value("max_expansions", 20000);
        c.seed = j.value("seed", std::uint64_t(0));
        if (c.neg_test_size < 1) throw InvalidConfig("neg_test_size must be >= 1");
        return c;
    }
};

/// f(Node) = -(#unique states in node / #unique states in root) - level.
inline double node_score(const SearchNode& node, const SearchNode& root) {
    if (root.unique_states.empty()) throw EmptyRoot();
    return -(static_cast<double>(node.unique_states.size()) /
             static_cast<double>(root.unique_states.size())) -
           node.level;
}

/// Softmax sample over node scores (max-subtracted). Near-zero temperature
/// degenerates to argmax with ties broken by lowest node_id.
inline std::size_t select_node(const std::vector<SearchNode>& frontier,
                               const SearchNode& root, double temperature, Rng& rng) {
    if (frontier.empty()) throw EmptyFrontier();
    std::vector<double> f(frontier.size());
    for (std::size_t i = 0; i < frontier.size(); ++i) f[i] = node_score(frontier[i], root);
    double mx = *std::max_element(f.begin(), f.end());
    if (temperature < 1e-9) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < frontier.size(); ++i)
            if (f[i] > f[best] || (f[i] == f[best] && frontier[i].node_id < frontier[best].node_id))
                best = i;
        return best;
    }
    std::vector<double> w(frontier.size());
    double total = 0.0;
    for (std::size_t i = 0; i < frontier.size(); ++i) {
        w[i] = std::exp((f[i] - mx) / temperature);
        total += w[i];
    }
    double u = rng.uniform01() * total, acc = 0.0;
    for (std::size_t i = 0; i < frontier.size(); ++i) {
        acc += w[i];
        if (u < acc) return i;
    }
    return frontier.size() - 1;
}

/// True iff the conjunction holds in some state of every positive and in no
/// state of at least one trajectory from the negative test sample.
inline bool verify_subtask(const std::set<GroundAtom>& atoms,
                           const std::vector<Trajectory>& positives,
                           const std::vector<const Trajectory*>& neg_test) {
    auto holds_somewhere = [&](const Trajectory& t) {
        for (const auto& s : t.states)
            if (s.contains_all(atoms)) return true;
        return false;
    };
    for (const auto& p : positives)
        if (!holds_somewhere(p)) return false;
    for (const Trajectory* n : neg_test)
        if (!holds_somewhere(*n)) return true;
    return false;
}

namespace detail {

inline std::set<SymbolicState> project_pool(const std::set<SymbolicState>& pool,
                                            const std::set<std::string>& preds) {
    std::set<SymbolicState> out;
    for (const auto& s : pool) {
        SymbolicState proj = project_state(s, preds);
        if (!proj.atoms.empty()) out.insert(proj);
    }
    return out;
}

/// All inclusion-maximal verified projections of one candidate state. Only
/// predicates actually present in the candidate change its projection, so the
/// enumeration runs over that (small) subset.
inline std::vector<Subtask> maximal_projections(const SymbolicState& cand,
                                                const std::vector<Trajectory>& positives,
                                                const std::vector<const Trajectory*>& neg_test,
                                                std::size_t root_size) {
    std::vector<std::string> present;
    {
        std::set<std::string> seen;
        for (const auto& a : cand.atoms) seen.insert(a.pred);
        present.assign(seen.begin(), seen.end());
    }
    std::size_t n = present.size();
    std::vector<Subtask> verified;
    for (std::uint64_t mask = 1; mask < (std::uint64_t(1) << n); ++mask) {
        std::set<std::string> preds;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (std::uint64_t(1) << i)) preds.insert(present[i]);
        SymbolicState proj = project_state(cand, preds);
        if (proj.atoms.empty()) continue;
        if (!verify_subtask(proj.atoms, positives, neg_test)) continue;
        Subtask s;
        s.preds = preds;
        s.atoms = proj.atoms;
        s.level = static_cast<int>(root_size - preds.size());
        verified.push_back(s);
    }
    // keep inclusion-maximal atom sets
    std::vector<Subtask> out;
    for (const auto& a : verified) {
        bool dominated = false;
        for (const auto& b : verified) {
            if (a.atoms == b.atoms && a.preds.size() < b.preds.size()) continue;
            if (a.atoms != b.atoms &&
                std::includes(b.atoms.begin(), b.atoms.end(), a.atoms.begin(),
                              a.atoms.end(), std::less<GroundAtom>())) {
                dominated = true;
                break;
            }
        }
        if (!dominated) {
            bool dup = false;
            for (const auto& o : out)
                if (o.atoms == a.atoms) dup = true;
            if (!dup) out.push_back(a);
        }
    }
    return out;
}

inline void subsume_filter(std::vector<Subtask>& subtasks) {
    std::vector<Subtask> keep;
    for (std::size_t i = 0; i < subtasks.size(); ++i) {
        bool dominated = false, dup = false;
        for (std::size_t j = 0; j < subtasks.size(); ++j) {
            if (i == j) continue;
            if (subtasks[i].atoms == subtasks[j].atoms) {
                if (j < i) dup = true;
                continue;
            }
            if (std::includes(subtasks[j].atoms.begin(), subtasks[j].atoms.end(),
                              subtasks[i].atoms.begin(), subtasks[i].atoms.end()))
                dominated = true;
        }
        if (!dominated && !dup) keep.push_back(subtasks[i]);
    }
    subtasks = keep;
}

} // namespace detail

inline std::vector<SearchNode> expand(const SearchNode& node,
                                      const std::set<SymbolicState>& pool,
                                      std::set<std::set<std::string>>& visited,
                                      int& next_id) {
    if (node.preds.size() < 2) throw LeafNode();
    std::vector<SearchNode> children;
    for (const auto& removed : node.preds) {
        std::set<std::string> child_preds = node.preds;
        child_preds.erase(removed);
        if (!visited.insert(child_preds).second) continue;
        SearchNode child;
        child.preds = child_preds;
        child.level = node.level + 1;
        child.node_id = next_id++;
        child.unique_states = detail::project_pool(pool, child_preds);
        children.push_back(child);
    }
    return children;
}

struct SearchResult {
    std::vector<Subtask> subtasks;
    bool exhausted = false;
    int expansions = 0;
};

/// Algorithm-1 search with restarts: each run walks the subset lattice from
/// the full predicate set, verifying every projected state of the selected
/// node; on a find, all inclusion-maximal verified conjunctions of the
/// matching candidates are recorded and those candidates leave the pool.
inline SearchResult search(const std::set<SymbolicState>& candidates,
                           const Dataset& dataset, const Vocabulary& vocab,
                           const SearchConfig& config) {
    if (candidates.empty()) throw Error("search requires a nonempty candidate set");
    if (dataset.positives.empty()) throw EmptySide("positive");
    if (dataset.negatives.empty()) throw EmptySide("negative");

    std::set<std::string> all_preds;
    for (const auto& p : vocab.predicates()) all_preds.insert(p.name);

    SearchResult result;
    std::set<SymbolicState> pool = candidates;
    Rng rng(derive_seed(config.seed, 0x5ea2ULL));

    while (!pool.empty() && result.expansions < config.max_expansions) {
        // sample the negative test set for this run (without replacement)
        std::vector<const Trajectory*> neg_test;
        {
            std::vector<std::size_t> idx(dataset.negatives.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            std::size_t take =
                std::min<std::size_t>(static_cast<std::size_t>(config.neg_test_size),
                                      idx.size());
            for (std::size_t i = 0; i < take; ++i) {
                std::size_t j = i + rng.below(idx.size() - i);
                std::swap(idx[i], idx[j]);
                neg_test.push_back(&dataset.negatives[idx[i]]);
            }
        }

        int next_id = 0;
        SearchNode root;
        root.preds = all_preds;
        root.level = 0;
        root.node_id = next_id++;
        root.unique_states = detail::project_pool(pool, all_preds);
        if (root.unique_states.empty()) break;

        std::vector<SearchNode> frontier{root};
        std::set<std::set<std::string>> visited{all_preds};
        bool found = false;
        std::set<GroundAtom> found_atoms;

        while (!frontier.empty() && result.expansions < config.max_expansions) {
            std::size_t pick = select_node(frontier, root, config.softmax_temperature, rng);
            SearchNode node = frontier[pick];
            frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
            ++result.expansions;
            for (const auto& proj : node.unique_states) {
                if (verify_subtask(proj.atoms, dataset.positives, neg_test)) {
                    found = true;
                    found_atoms = proj.atoms;
                    break;
                }
            }
            if (found) break;
            if (node.preds.size() >= 2) {
                auto children = expand(node, pool, visited, next_id);
                frontier.insert(frontier.end(), children.begin(), children.end());
            }
        }

        if (!found) {
            result.exhausted = true;
            break;
        }

        // gather the candidate cluster explained by this find and record all
        // of its maximal verified conjunctions before removing it
        std::vector<SymbolicState> cluster;
        for (const auto& c : pool)
            if (c.contains_all(found_atoms)) cluster.push_back(c);
        for (const auto& c : cluster) {
            for (auto& s :
                 detail::maximal_projections(c, dataset.positives, neg_test,
                                             all_preds.size()))
                result.subtasks.push_back(std::move(s));
            pool.erase(c);
        }
    }
    if (!pool.empty() && !result.exhausted) result.exhausted = true;
    detail::subsume_filter(result.subtasks);
    return result;
}

/// Oracle: every predicate subset against every candidate, inclusion-maximal
/// verified conjunctions kept.
inline std::vector<Subtask> brute_force_subtasks(const std::set<SymbolicState>& candidates,
                                                 const Dataset& dataset,
                                                 const Vocabulary& vocab,
                                                 const std::vector<const Trajectory*>& neg_test) {
    std::size_t n = vocab.predicates().size();
    if (n > 16) throw TooManyPredicates(n);
    std::vector<Subtask> all;
    for (const auto& c : candidates)
        for (auto& s : detail::maximal_projections(c, dataset.positives, neg_test, n))
            all.push_back(std::move(s));
    detail::subsume_filter(all);
    return all;
}

inline std::vector<const Trajectory*> all_negatives(const Dataset& d) {
    std::vector<const Trajectory*> out;
    for (const auto& t : d.negatives) out.push_back(&t);
    return out;
}

inline void save_subtasks(const std::vector<Subtask>& subtasks, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : subtasks) j.push_back(s.to_json());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

inline std::vector<Subtask> load_subtasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    std::vector<Subtask> out;
    for (const auto& e : j) out.push_back(Subtask::from_json(e));
    return out;
}

} // namespace taskmine

#endif
