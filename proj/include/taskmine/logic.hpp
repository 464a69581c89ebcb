#ifndef TASKMINE_LOGIC_HPP
#define TASKMINE_LOGIC_HPP

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace taskmine {

struct SyntaxError : Error {
    SyntaxError(std::size_t pos, const std::string& expected, const std::string& got)
        : Error("syntax error at position " + std::to_string(pos) + ": expected " +
                expected + ", got '" + got + "'"),
          position(pos) {}
    std::size_t position;
};

struct UnknownPredicate : Error {
    explicit UnknownPredicate(const std::string& name)
        : Error("unknown predicate: " + name) {}
};

struct SortMismatch : Error {
    explicit SortMismatch(const std::string& var)
        : Error("variable " + var + " used with conflicting sorts") {}
};

struct UnknownAtom : Error {
    explicit UnknownAtom(const std::string& atom)
        : Error("atom not in vocabulary enumeration: " + atom) {}
};

// ---------------------------------------------------------------------------

struct PredicateSig {
    std::string name;
    std::vector<std::string> arg_sorts;

    std::size_t arity() const { return arg_sorts.size(); }

    bool operator==(const PredicateSig&) const = default;
    bool operator<(const PredicateSig& o) const {
        if (name != o.name) return name < o.name;
        return arg_sorts < o.arg_sorts;
    }
};

struct GroundAtom {
    std::string pred;
    std::vector<std::string> args;

    bool operator==(const GroundAtom&) const = default;
    bool operator<(const GroundAtom& o) const {
        if (pred != o.pred) return pred < o.pred;
        return args < o.args;
    }

    std::string str() const {
        if (args.empty()) return pred;
        std::string out = pred + "(";
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (i) out += ", ";
            out += args[i];
        }
        return out + ")";
    }
};

/// A finite set of ground atoms true at one timestep.
struct SymbolicState {
    std::set<GroundAtom> atoms;

    bool operator==(const SymbolicState&) const = default;
    bool operator<(const SymbolicState& o) const { return atoms < o.atoms; }

    bool contains(const GroundAtom& a) const { return atoms.count(a) > 0; }

    /// True iff every atom of `sub` is in this state.
    bool contains_all(const std::set<GroundAtom>& sub) const {
        return std::includes(atoms.begin(), atoms.end(), sub.begin(), sub.end());
    }

    std::string str() const {
        std::string out;
        for (const auto& a : atoms) {
            if (!out.empty()) out += ", ";
            out += a.str();
        }
        return out;
    }
};

inline std::string atoms_str(const std::set<GroundAtom>& atoms) {
    std::string out;
    for (const auto& a : atoms) {
        if (!out.empty()) out += ", ";
        out += a.str();
    }
    return out;
}

// ---------------------------------------------------------------------------

inline bool is_variable(const std::string& term) {
    return !term.empty() && std::isupper(static_cast<unsigned char>(term[0]));
}

/// Atom that may contain variables; appears in rule heads and bodies.
struct Literal {
    std::string pred;
    std::vector<std::string> args;

    bool operator==(const Literal&) const = default;
    bool operator<(const Literal& o) const {
        if (pred != o.pred) return pred < o.pred;
        return args < o.args;
    }

    std::string str() const {
        if (args.empty()) return pred;
        std::string out = pred + "(";
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (i) out += ", ";
            out += args[i];
        }
        return out + ")";
    }
};

struct Rule {
    Literal head;
    std::vector<Literal> body;

    bool operator==(const Rule&) const = default;
    bool operator<(const Rule& o) const {
        if (!(head == o.head)) return head < o.head;
        return body < o.body;
    }
};

// ---------------------------------------------------------------------------

/// Predicate vocabulary with per-sort constants and action predicates.
/// Orderings are canonicalized at construction so vectorization is
/// deterministic across runs and machines.
class Vocabulary {
  public:
    Vocabulary() = default;

    Vocabulary(std::vector<PredicateSig> predicates,
               std::map<std::string, std::vector<std::string>> constants,
               std::vector<PredicateSig> actions)
        : predicates_(std::move(predicates)),
          constants_(std::move(constants)),
          actions_(std::move(actions)) {
        std::sort(predicates_.begin(), predicates_.end());
        predicates_.erase(std::unique(predicates_.begin(), predicates_.end()),
                          predicates_.end());
        std::sort(actions_.begin(), actions_.end());
        for (auto& [sort, cs] : constants_) {
            std::sort(cs.begin(), cs.end());
            cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
        }
        build_enumeration();
    }

    const std::vector<PredicateSig>& predicates() const { return predicates_; }
    const std::vector<PredicateSig>& actions() const { return actions_; }
    const std::map<std::string, std::vector<std::string>>& constants() const {
        return constants_;
    }

    const PredicateSig* find_predicate(const std::string& name) const {
        for (const auto& p : predicates_)
            if (p.name == name) return &p;
        return nullptr;
    }

    const PredicateSig* find_action(const std::string& name) const {
        for (const auto& a : actions_)
            if (a.name == name) return &a;
        return nullptr;
    }

    const std::vector<std::string>& constants_of(const std::string& sort) const {
        static const std::vector<std::string> empty;
        auto it = constants_.find(sort);
        return it == constants_.end() ? empty : it->second;
    }

    /// All ground atoms in stable order; defines the state-vector layout.
    const std::vector<GroundAtom>& ground_atoms() const { return enumeration_; }

    std::size_t vector_size() const { return enumeration_.size(); }

    std::optional<std::size_t> atom_index(const GroundAtom& a) const {
        auto it = index_.find(a);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<std::string> action_names() const {
        std::vector<std::string> out;
        for (const auto& a : actions_) out.push_back(a.name);
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json preds = nlohmann::json::array();
        for (const auto& p : predicates_)
            preds.push_back({{"name", p.name},
                             {"arity", p.arity()},
                             {"arg_sorts", p.arg_sorts}});
        nlohmann::json acts = nlohmann::json::array();
        for (const auto& a : actions_)
            acts.push_back({{"name", a.name},
                            {"arity", a.arity()},
                            {"arg_sorts", a.arg_sorts}});
        nlohmann::json consts = nlohmann::json::object();
        for (const auto& [sort, cs] : constants_) consts[sort] = cs;
        return {{"predicates", preds}, {"constants", consts}, {"actions", acts}};
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        std::vector<PredicateSig> preds, acts;
        for (const auto& p : j.at("predicates"))
            preds.push_back({p.at("name").get<std::string>(),
                             p.at("arg_sorts").get<std::vector<std::string>>()});
        for (const auto& a : j.at("actions"))
            acts.push_back({a.at("name").get<std::string>(),
                            a.at("arg_sorts").get<std::vector<std::string>>()});
        std::map<std::string, std::vector<std::string>> consts;
        for (auto it = j.at("constants").begin(); it != j.at("constants").end(); ++it)
            consts[it.key()] = it.value().get<std::vector<std::string>>();
        return Vocabulary(std::move(preds), std::move(consts), std::move(acts));
    }

    std::string hash() const { return fnv1a_hex(to_json().dump()); }

  private:
    void build_enumeration() {
        enumeration_.clear();
        index_.clear();
        for (const auto& p : predicates_) {
            std::vector<std::size_t> idx(p.arity(), 0);
            bool any_empty = false;
            for (const auto& s : p.arg_sorts)
                if (constants_of(s).empty()) any_empty = true;
            if (any_empty) continue;
            // odometer over typed constant tuples
            while (true) {
                GroundAtom a;
                a.pred = p.name;
                for (std::size_t k = 0; k < p.arity(); ++k)
                    a.args.push_back(constants_of(p.arg_sorts[k])[idx[k]]);
                index_[a] = enumeration_.size();
                enumeration_.push_back(std::move(a));
                if (p.arity() == 0) break;
                std::size_t k = p.arity();
                while (k > 0) {
                    --k;
                    if (++idx[k] < constants_of(p.arg_sorts[k]).size()) break;
                    idx[k] = 0;
                    if (k == 0) goto done;
                }
            }
        done:;
        }
    }

    std::vector<PredicateSig> predicates_;
    std::map<std::string, std::vector<std::string>> constants_;
    std::vector<PredicateSig> actions_;
    std::vector<GroundAtom> enumeration_;
    std::map<GroundAtom, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Rule text format: `head(args) :- atom1(args), ..., atomN(args).`
// Identifiers are [a-z][a-z0-9_]*, variables [A-Z][a-z0-9_]*.

namespace detail {

class RuleParser {
  public:
    RuleParser(const std::string& text, const Vocabulary* vocab)
        : text_(text), vocab_(vocab) {}

    Rule parse() {
        Rule rule;
        skip_ws();
        rule.head = literal();
        skip_ws();
        if (peek() == ':') {
            expect(':');
            expect('-');
            do {
                skip_ws();
                rule.body.push_back(literal());
                skip_ws();
            } while (accept(','));
        }
        expect('.');
        skip_ws();
        if (pos_ != text_.size())
            throw SyntaxError(pos_, "end of input", tail());
        check(rule);
        return rule;
    }

  private:
    char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

    std::string tail() const {
        return pos_ < text_.size() ? text_.substr(pos_, 8) : "<end>";
    }

    void skip_ws() {
        while (pos_ < text_.size() &&
               std::isspace(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
    }

    bool accept(char c) {
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c))
            throw SyntaxError(pos_, std::string("'") + c + "'", tail());
    }

    std::string name() {
        skip_ws();
        std::size_t start = pos_;
        if (pos_ >= text_.size() ||
            !std::isalpha(static_cast<unsigned char>(text_[pos_])))
            throw SyntaxError(pos_, "identifier or variable", tail());
        ++pos_;
        while (pos_ < text_.size() &&
               (std::islower(static_cast<unsigned char>(text_[pos_])) ||
                std::isdigit(static_cast<unsigned char>(text_[pos_])) ||
                text_[pos_] == '_'))
            ++pos_;
        return text_.substr(start, pos_ - start);
    }

    Literal literal() {
        Literal lit;
        lit.pred = name();
        if (is_variable(lit.pred))
            throw SyntaxError(pos_ - lit.pred.size(), "predicate identifier", lit.pred);
        skip_ws();
        if (accept('(')) {
            do {
                lit.args.push_back(name());
                skip_ws();
            } while (accept(','));
            expect(')');
        }
        return lit;
    }

    void check(const Rule& rule) const {
        if (!vocab_) return;
        const PredicateSig* head = vocab_->find_action(rule.head.pred);
        if (!head) throw UnknownPredicate(rule.head.pred);
        for (const auto& b : rule.body)
            if (!vocab_->find_predicate(b.pred)) throw UnknownPredicate(b.pred);
    }

    const std::string& text_;
    const Vocabulary* vocab_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parse a rule; when `vocab` is given, head must be an action predicate and
/// body predicates must exist.
inline Rule parse_rule(const std::string& text, const Vocabulary* vocab = nullptr) {
    return detail::RuleParser(text, vocab).parse();
}

/// Canonical text form; parse(format(r)) == r.
inline std::string format_rule(const Rule& rule) {
    std::string out = rule.head.str();
    if (!rule.body.empty()) {
        out += " :- ";
        for (std::size_t i = 0; i < rule.body.size(); ++i) {
            if (i) out += ", ";
            out += rule.body[i].str();
        }
    }
    return out + ".";
}

// ---------------------------------------------------------------------------

namespace detail {

/// Infer a sort for every variable in the body from predicate signatures.
inline std::map<std::string, std::string> variable_sorts(const Rule& rule,
                                                         const Vocabulary& vocab) {
    std::map<std::string, std::string> sorts;
    for (const auto& lit : rule.body) {
        const PredicateSig* sig = vocab.find_predicate(lit.pred);
        if (!sig) throw UnknownPredicate(lit.pred);
        for (std::size_t i = 0; i < lit.args.size() && i < sig->arity(); ++i) {
            if (!is_variable(lit.args[i])) continue;
            auto [it, inserted] = sorts.emplace(lit.args[i], sig->arg_sorts[i]);
            if (!inserted && it->second != sig->arg_sorts[i])
                throw SortMismatch(lit.args[i]);
        }
    }
    return sorts;
}

inline bool match_body(const Rule& rule, std::size_t idx, const SymbolicState& state,
                       std::map<std::string, std::string>& binding) {
    if (idx == rule.body.size()) return true;
    const Literal& lit = rule.body[idx];
    for (const auto& atom : state.atoms) {
        if (atom.pred != lit.pred || atom.args.size() != lit.args.size()) continue;
        std::vector<std::string> newly_bound;
        bool ok = true;
        for (std::size_t i = 0; i < lit.args.size(); ++i) {
            if (is_variable(lit.args[i])) {
                auto it = binding.find(lit.args[i]);
                if (it == binding.end()) {
                    binding[lit.args[i]] = atom.args[i];
                    newly_bound.push_back(lit.args[i]);
                } else if (it->second != atom.args[i]) {
                    ok = false;
                    break;
                }
            } else if (lit.args[i] != atom.args[i]) {
                ok = false;
                break;
            }
        }
        if (ok && match_body(rule, idx + 1, state, binding)) return true;
        for (const auto& v : newly_bound) binding.erase(v);
    }
    return false;
}

} // namespace detail

/// Crisp valuation: 1.0 iff some substitution of constants for variables makes
/// every body atom a member of the state. The empty body is vacuously true.
inline double ground_body(const Rule& rule, const SymbolicState& state,
                          const Vocabulary& vocab) {
    detail::variable_sorts(rule, vocab); // sort-consistency check
    std::map<std::string, std::string> binding;
    return detail::match_body(rule, 0, state, binding) ? 1.0 : 0.0;
}

/// Binary indicator vector over the vocabulary's ground-atom enumeration.
inline std::vector<double> state_to_vector(const SymbolicState& state,
                                           const Vocabulary& vocab) {
    std::vector<double> v(vocab.vector_size(), 0.0);
    for (const auto& a : state.atoms) {
        auto idx = vocab.atom_index(a);
        if (!idx) throw UnknownAtom(a.str());
        v[*idx] = 1.0;
    }
    return v;
}

/// Restrict a state to atoms whose predicate is in `preds`.
inline SymbolicState project_state(const SymbolicState& state,
                                   const std::set<std::string>& preds) {
    SymbolicState out;
    for (const auto& a : state.atoms)
        if (preds.count(a.pred)) out.atoms.insert(a);
    return out;
}

// --- JSON helpers shared by trajectory and subtask serialization -----------

inline nlohmann::json atom_to_json(const GroundAtom& a) {
    return nlohmann::json::array({a.pred, a.args});
}

inline GroundAtom atom_from_json(const nlohmann::json& j) {
    return GroundAtom{j.at(0).get<std::string>(),
                      j.at(1).get<std::vector<std::string>>()};
}

inline nlohmann::json state_to_json(const SymbolicState& s) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& a : s.atoms) out.push_back(atom_to_json(a));
    return out;
}

inline SymbolicState state_from_json(const nlohmann::json& j) {
    SymbolicState s;
    for (const auto& a : j) s.atoms.insert(atom_from_json(a));
    return s;
}

} // namespace taskmine

#endif
