#include <catch2/catch_amalgamated.hpp>

#include "taskmine/logic.hpp"

using namespace taskmine;

namespace {

Vocabulary test_vocab() {
    std::vector<PredicateSig> preds = {
        {"closeby", {"agent", "object"}},
        {"have_key", {"agent"}},
        {"at", {"agent", "object"}},
        {"type", {"object", "kind"}},
    };
    std::map<std::string, std::vector<std::string>> consts = {
        {"agent", {"agent1"}},
        {"object", {"coin1", "door", "enemy"}},
        {"kind", {"coin", "door"}},
    };
    std::vector<PredicateSig> actions = {
        {"jump", {"agent"}},
        {"move_left", {"agent"}},
        {"move_right", {"agent"}},
        {"noop", {"agent"}},
    };
    return Vocabulary(preds, consts, actions);
}

GroundAtom atom(const std::string& pred, std::vector<std::string> args) {
    return GroundAtom{pred, std::move(args)};
}

} // namespace

TEST_CASE("parse_rule handles the basic grammar", "[logic][parse]") {
    Rule r = parse_rule("jump(X) :- closeby(X, enemy).");
    CHECK(r.head.pred == "jump");
    REQUIRE(r.head.args.size() == 1);
    CHECK(r.head.args[0] == "X");
    REQUIRE(r.body.size() == 1);
    CHECK(r.body[0].pred == "closeby");
    CHECK(r.body[0].args == std::vector<std::string>{"X", "enemy"});
}

TEST_CASE("parse_rule is whitespace-insensitive", "[logic][parse]") {
    Rule tight = parse_rule("jump(X):-closeby(X,enemy),have_key(X).");
    Rule loose = parse_rule("  jump( X )  :-  closeby( X , enemy ) , have_key( X ) .  ");
    CHECK(tight == loose);
}

TEST_CASE("parse_rule rejects malformed input", "[logic][parse]") {
    CHECK_THROWS_AS(parse_rule(""), SyntaxError);
    CHECK_THROWS_AS(parse_rule("jump(X)"), SyntaxError);           // missing period
    CHECK_THROWS_AS(parse_rule("jump(X) :- ."), SyntaxError);      // dangling neck
    CHECK_THROWS_AS(parse_rule("jump(X) :- closeby(X,."), SyntaxError);
    CHECK_THROWS_AS(parse_rule("jump(X). trailing"), SyntaxError);
    CHECK_THROWS_AS(parse_rule("X(Y) :- closeby(Y, enemy)."), SyntaxError);
}

TEST_CASE("parse_rule reports the error position", "[logic][parse]") {
    try {
        parse_rule("jump(X) :- closeby(X enemy).");
        FAIL("expected SyntaxError");
    } catch (const SyntaxError& e) {
        CHECK(e.position == 21); // where ',' or ')' was expected
    }
}

TEST_CASE("parse_rule validates predicates against a vocabulary", "[logic][parse]") {
    Vocabulary v = test_vocab();
    CHECK_NOTHROW(parse_rule("jump(X) :- closeby(X, enemy).", &v));
    CHECK_THROWS_AS(parse_rule("fly(X) :- closeby(X, enemy).", &v), UnknownPredicate);
    CHECK_THROWS_AS(parse_rule("jump(X) :- warp(X).", &v), UnknownPredicate);
    // body predicates are not valid heads
    CHECK_THROWS_AS(parse_rule("closeby(X, enemy) :- have_key(X).", &v),
                    UnknownPredicate);
}

TEST_CASE("format_rule emits canonical text", "[logic][format]") {
    Rule r;
    r.head = Literal{"jump", {"X"}};
    r.body = {Literal{"closeby", {"X", "enemy"}}};
    CHECK(format_rule(r) == "jump(X) :- closeby(X, enemy).");

    Rule facty;
    facty.head = Literal{"noop", {"X"}};
    CHECK(format_rule(facty) == "noop(X)."); // empty body has no neck
}

TEST_CASE("parse and format are mutually inverse on samples", "[logic][format]") {
    for (const std::string text : {
             "jump(X) :- closeby(X, enemy).",
             "noop(X).",
             "move_right(A) :- have_key(A), at(A, door).",
             "move_left(A) :- type(coin1, coin), closeby(A, coin1).",
         }) {
        Rule r = parse_rule(text);
        CHECK(format_rule(r) == text);
        CHECK(parse_rule(format_rule(r)) == r);
    }
}

TEST_CASE("parse(format(r)) == r for 1000 generated rules", "[logic][format][property]") {
    Vocabulary v = test_vocab();
    Rng rng(20240817);
    std::vector<std::string> vars = {"X", "Y", "Z", "A1", "Obj"};
    for (int i = 0; i < 1000; ++i) {
        Rule r;
        const PredicateSig& head = v.actions()[rng.below(v.actions().size())];
        r.head.pred = head.name;
        for (std::size_t k = 0; k < head.arity(); ++k)
            r.head.args.push_back(vars[0]);
        std::size_t body_len = rng.below(4) + (head.arity() ? 1 : 0);
        for (std::size_t b = 0; b < body_len; ++b) {
            const PredicateSig& sig = v.predicates()[rng.below(v.predicates().size())];
            Literal lit;
            lit.pred = sig.name;
            for (std::size_t k = 0; k < sig.arity(); ++k) {
                if (rng.chance(0.5)) {
                    lit.args.push_back(vars[rng.below(vars.size())]);
                } else {
                    const auto& cs = v.constants_of(sig.arg_sorts[k]);
                    lit.args.push_back(cs[rng.below(cs.size())]);
                }
            }
            r.body.push_back(lit);
        }
        if (r.body.empty()) r.head.args.assign(head.arity(), "X");
        INFO(format_rule(r));
        CHECK(parse_rule(format_rule(r)) == r);
    }
}

TEST_CASE("ground_body valuates crisp conjunctions", "[logic][ground]") {
    Vocabulary v = test_vocab();
    SymbolicState s;
    s.atoms = {atom("have_key", {"agent1"})};

    Rule empty_body;
    empty_body.head = Literal{"noop", {"X"}};
    CHECK(ground_body(empty_body, s, v) == 1.0);
    CHECK(ground_body(empty_body, SymbolicState{}, v) == 1.0);

    Rule have = parse_rule("jump(X) :- have_key(X).", &v);
    CHECK(ground_body(have, s, v) == 1.0);

    Rule both = parse_rule("jump(X) :- have_key(X), at(X, door).", &v);
    CHECK(ground_body(both, s, v) == 0.0);

    s.atoms.insert(atom("at", {"agent1", "door"}));
    CHECK(ground_body(both, s, v) == 1.0);
}

TEST_CASE("ground_body requires a single consistent substitution", "[logic][ground]") {
    Vocabulary v = test_vocab();
    SymbolicState s;
    s.atoms = {atom("closeby", {"agent1", "coin1"}), atom("type", {"door", "door"})};
    // Y must bind to the same object in both conjuncts.
    Rule r = parse_rule("jump(X) :- closeby(X, Y), type(Y, door).", &v);
    CHECK(ground_body(r, s, v) == 0.0);
    s.atoms.insert(atom("closeby", {"agent1", "door"}));
    CHECK(ground_body(r, s, v) == 1.0);
}

TEST_CASE("ground_body rejects conflicting variable sorts", "[logic][ground]") {
    Vocabulary v = test_vocab();
    SymbolicState s;
    // X used both as agent (have_key) and object (type)
    Rule r = parse_rule("jump(X) :- have_key(X), type(X, coin).", &v);
    CHECK_THROWS_AS(ground_body(r, s, v), SortMismatch);
}

TEST_CASE("ground_body is monotone in the state", "[logic][ground][property]") {
    Vocabulary v = test_vocab();
    Rng rng(99);
    const auto& all = v.ground_atoms();
    Rule r = parse_rule("jump(X) :- closeby(X, Y), type(Y, coin).", &v);
    for (int i = 0; i < 200; ++i) {
        SymbolicState small, big;
        for (const auto& a : all) {
            bool in_small = rng.chance(0.3);
            if (in_small) small.atoms.insert(a);
            if (in_small || rng.chance(0.3)) big.atoms.insert(a);
        }
        CHECK(ground_body(r, small, v) <= ground_body(r, big, v));
    }
}

TEST_CASE("state_to_vector maps states to indicator vectors", "[logic][vector]") {
    Vocabulary v = test_vocab();

    std::vector<double> zero = state_to_vector(SymbolicState{}, v);
    CHECK(zero.size() == v.vector_size());
    CHECK(std::count(zero.begin(), zero.end(), 0.0) ==
          static_cast<long>(zero.size()));

    SymbolicState full;
    for (const auto& a : v.ground_atoms()) full.atoms.insert(a);
    std::vector<double> ones = state_to_vector(full, v);
    CHECK(std::count(ones.begin(), ones.end(), 1.0) ==
          static_cast<long>(ones.size()));

    SymbolicState bad;
    bad.atoms = {atom("flies", {"agent1"})};
    CHECK_THROWS_AS(state_to_vector(bad, v), UnknownAtom);
}

TEST_CASE("state_to_vector is injective over a fixed vocabulary", "[logic][vector][property]") {
    Vocabulary v = test_vocab();
    Rng rng(7);
    std::map<std::vector<double>, SymbolicState> seen;
    for (int i = 0; i < 300; ++i) {
        SymbolicState s;
        for (const auto& a : v.ground_atoms())
            if (rng.chance(0.4)) s.atoms.insert(a);
        auto vec = state_to_vector(s, v);
        auto [it, inserted] = seen.emplace(vec, s);
        if (!inserted) CHECK(it->second == s); // same vector ⇒ same state
    }
}

TEST_CASE("project_state filters by predicate", "[logic][project]") {
    SymbolicState s;
    s.atoms = {atom("have_key", {"agent1"}), atom("at", {"agent1", "door"})};

    SymbolicState have = project_state(s, {"have_key"});
    CHECK(have.atoms == std::set<GroundAtom>{atom("have_key", {"agent1"})});

    CHECK(project_state(s, {"have_key", "at"}) == s);       // all predicates
    CHECK(project_state(s, {}).atoms.empty());              // none
    CHECK(project_state(have, {"have_key"}) == have);       // idempotent
}

TEST_CASE("project_state commutes with state union", "[logic][project][property]") {
    Vocabulary v = test_vocab();
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        SymbolicState a, b;
        for (const auto& g : v.ground_atoms()) {
            if (rng.chance(0.3)) a.atoms.insert(g);
            if (rng.chance(0.3)) b.atoms.insert(g);
        }
        std::set<std::string> preds = {"closeby", "type"};
        SymbolicState unioned;
        unioned.atoms = a.atoms;
        unioned.atoms.insert(b.atoms.begin(), b.atoms.end());
        SymbolicState lhs = project_state(unioned, preds);
        SymbolicState rhs = project_state(a, preds);
        auto rb = project_state(b, preds);
        rhs.atoms.insert(rb.atoms.begin(), rb.atoms.end());
        CHECK(lhs == rhs);
    }
}

TEST_CASE("vocabulary enumeration is stable and JSON round-trips", "[logic][vocab]") {
    Vocabulary v = test_vocab();
    // lexicographic by predicate name, then constant tuples in sort order
    REQUIRE(v.vector_size() > 0);
    CHECK(v.ground_atoms().front() == atom("at", {"agent1", "coin1"}));

    Vocabulary back = Vocabulary::from_json(v.to_json());
    CHECK(back.to_json() == v.to_json());
    CHECK(back.hash() == v.hash());
    CHECK(back.ground_atoms() == v.ground_atoms());
}

TEST_CASE("atom and state JSON round trip", "[logic][json]") {
    GroundAtom a = atom("closeby", {"agent1", "coin1"});
    CHECK(atom_from_json(atom_to_json(a)) == a);

    SymbolicState s;
    s.atoms = {a, atom("have_key", {"agent1"})};
    CHECK(state_from_json(state_to_json(s)) == s);
}
