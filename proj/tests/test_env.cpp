#include <catch2/catch_amalgamated.hpp>

#include "taskmine/env.hpp"

using namespace taskmine;

namespace {

/// Run an action sequence from reset, returning final state and reward total.
std::pair<EnvState, double> replay(const Env& env, const std::vector<Action>& actions) {
    EnvState s = env.reset();
    double total = 0.0;
    for (Action a : actions) {
        StepResult r = env.step(s, a);
        s = r.state;
        total += r.reward;
    }
    return {s, total};
}

const std::vector<Action> getout_optimal = {
    Action::move_left,  Action::move_left,  // fetch the red key at cell 0
    Action::move_right, Action::move_right, Action::move_right, // to coins (3)
    Action::move_right,                                         // flag (4)
    Action::move_right,                                         // blue key (5)
    Action::move_right,                                         // door (6)
};

} // namespace

TEST_CASE("getout reset places every object", "[env][reset]") {
    Env env(getout_config());
    EnvState s = env.reset();
    CHECK(s.agent_pos == 2);
    CHECK(s.objects_on_grid.size() == 6);
    for (const char* name : {"coin1", "coin2", "flag1", "key_blue", "key_red", "door1"})
        CHECK(s.objects_on_grid.count(name) == 1);
    CHECK(s.inventory.empty());
    CHECK(s.terminal == Terminal::none);
}

TEST_CASE("reset is deterministic", "[env][reset]") {
    Env env(getout_config(42));
    CHECK(env.reset() == env.reset());
    Env env2(getout_config(42));
    CHECK(env.reset() == env2.reset());
}

TEST_CASE("invalid configs are rejected", "[env][config]") {
    EnvConfig c = getout_config();
    c.object_layout[0].cell = 99;
    CHECK_THROWS_AS(Env(c), InvalidConfig);

    c = getout_config();
    c.subtask_spec.clear();
    CHECK_THROWS_AS(Env(c), InvalidConfig);

    c = getout_config();
    c.agent_start = -1;
    CHECK_THROWS_AS(Env(c), InvalidConfig);

    c = getout_config();
    c.object_layout.push_back({"coin1", "coin", 1, ""}); // duplicate name
    CHECK_THROWS_AS(Env(c), InvalidConfig);

    CHECK_THROWS_AS(default_env_config("minecraft"), InvalidConfig);
}

TEST_CASE("movement clamps at the walls", "[env][step]") {
    EnvConfig c = getout_config();
    c.agent_start = 0;
    c.object_layout.erase(c.object_layout.begin()); // no pickup at cell 0
    Env env(c);
    EnvState s = env.reset();
    StepResult r = env.step(s, Action::move_left);
    CHECK(r.state.agent_pos == 0);
    CHECK(r.reward == c.rewards.step_penalty);
    CHECK_FALSE(r.done);
}

TEST_CASE("jump and noop hold position", "[env][step]") {
    Env env(getout_config());
    EnvState s = env.reset();
    CHECK(env.step(s, Action::jump).state.agent_pos == s.agent_pos);
    CHECK(env.step(s, Action::noop).state.agent_pos == s.agent_pos);
}

TEST_CASE("stepping a terminal state throws", "[env][step]") {
    Env env(getout_config());
    auto [s, total] = replay(env, getout_optimal);
    REQUIRE(s.terminal == Terminal::success);
    CHECK_THROWS_AS(env.step(s, Action::noop), SteppedAfterTerminal);
}

TEST_CASE("getout optimal route reward matches the hand replay", "[env][reward]") {
    Env env(getout_config());
    auto [s, total] = replay(env, getout_optimal);
    CHECK(s.terminal == Terminal::success);
    CHECK(s.achieved == std::set<std::string>{"coins", "flag", "blue_key", "door"});
    // 8 steps at -0.02, three +5 subtask bonuses, +20 completion
    CHECK_THAT(total, Catch::Matchers::WithinAbs(8 * -0.02 + 3 * 5.0 + 20.0, 1e-12));
}

TEST_CASE("loot optimal route reward matches the hand replay", "[env][reward]") {
    Env env(loot_config());
    auto [s, total] =
        replay(env, {Action::move_right, Action::move_right, Action::move_right});
    CHECK(s.terminal == Terminal::success);
    // 3 steps at -0.02, two +5 subtask bonuses, +20 completion (no door)
    CHECK_THAT(total, Catch::Matchers::WithinAbs(3 * -0.02 + 2 * 5.0 + 20.0, 1e-12));
}

TEST_CASE("timeout yields failure with penalty", "[env][reward]") {
    Env env(getout_config());
    EnvState s = env.reset();
    double last = 0.0;
    while (s.terminal == Terminal::none) {
        StepResult r = env.step(s, Action::noop);
        s = r.state;
        last = r.reward;
    }
    CHECK(s.terminal == Terminal::failure);
    CHECK(s.steps_elapsed == env.config().max_steps);
    CHECK_THAT(last, Catch::Matchers::WithinAbs(
                         env.config().rewards.step_penalty +
                             env.config().rewards.failure_penalty,
                         1e-12));
}

TEST_CASE("door requires all pickups", "[env][step]") {
    EnvConfig c = getout_config();
    c.agent_start = 5; // next to the door, nothing collected
    Env env(c);
    StepResult r = env.step(env.reset(), Action::move_right);
    CHECK(r.state.agent_pos == 6);
    CHECK_FALSE(r.done);
    CHECK(r.state.achieved.empty());
}

TEST_CASE("chests need their key in hand", "[env][step]") {
    Env env(loot_config());
    // walk onto chest1's cell with key1 absent from the episode: stays closed
    EnvState bare = env.reset();
    bare.objects_on_grid.erase("key1");
    StepResult r = env.step(bare, Action::move_right); // 1 -> 2
    r = env.step(r.state, Action::move_right);         // 2 -> 3 (chest1 cell)
    CHECK(r.state.objects_on_grid.count("chest1") == 1);
    CHECK(r.state.picked.count("chest1") == 0);
}

TEST_CASE("objects are collected at most once", "[env][invariant]") {
    Env env(getout_config());
    EnvState s = env.reset();
    // walk the full route; count pickup transitions per object
    std::map<std::string, int> collected;
    for (Action a : getout_optimal) {
        StepResult r = env.step(s, a);
        for (const auto& [name, cell] : s.objects_on_grid)
            if (!r.state.objects_on_grid.count(name)) collected[name] += 1;
        s = r.state;
    }
    for (const auto& [name, times] : collected) {
        INFO(name);
        CHECK(times == 1);
    }
}

TEST_CASE("symbolize emits adjacency and possession atoms", "[env][symbolize]") {
    Env env(getout_config());
    EnvState s = env.reset();
    s.agent_pos = 2; // coin1 at 3 is adjacent
    SymbolicState sym = env.symbolize(s);
    CHECK(sym.contains({"closeby", {"agent", "coin1"}}));
    CHECK(sym.contains({"on_left", {"agent", "coin1"}}));
    CHECK(sym.contains({"on_right", {"agent", "key_red"}}));
    CHECK(sym.contains({"type", {"coin1", "coin"}}));
    CHECK_FALSE(sym.contains({"closeby", {"agent", "key_blue"}}));
    CHECK_FALSE(sym.contains({"at_door", {"agent"}}));
    CHECK_FALSE(sym.contains({"all_collected", {"agent"}}));
}

TEST_CASE("picked persists on every later step", "[env][symbolize]") {
    Env env(getout_config());
    EnvState s = env.reset();
    std::vector<Action> route = getout_optimal;
    bool flag_seen = false;
    for (Action a : route) {
        s = env.step(s, a).state;
        SymbolicState sym = env.symbolize(s);
        if (s.picked.count("flag1")) flag_seen = true;
        if (flag_seen) {
            CHECK(sym.contains({"picked", {"flag1"}}));
            CHECK(sym.contains({"have", {"agent", "flag1"}}));
        }
        if (s.terminal != Terminal::none) break;
    }
    CHECK(flag_seen);
}

TEST_CASE("ablated vocabulary omits have and picked everywhere", "[env][symbolize]") {
    Env env(getout_config(0, /*ablate=*/true));
    CHECK(env.vocabulary().find_predicate("have") == nullptr);
    CHECK(env.vocabulary().find_predicate("picked") == nullptr);
    EnvState s = env.reset();
    for (Action a : getout_optimal) {
        s = env.step(s, a).state;
        for (const auto& atom : env.symbolize(s).atoms) {
            CHECK(atom.pred != "have");
            CHECK(atom.pred != "picked");
        }
        if (s.terminal != Terminal::none) break;
    }
    CHECK(s.terminal == Terminal::success);
}

TEST_CASE("symbolize is a pure function of the state", "[env][symbolize]") {
    Env env(getout_config());
    EnvState s = env.reset();
    s.agent_pos = 4;
    s.inventory.insert("coin1");
    s.picked.insert("coin1");
    CHECK(env.symbolize(s) == env.symbolize(s));
}

TEST_CASE("determinism across identical action sequences", "[env][invariant]") {
    Env a(getout_config(123));
    Env b(getout_config(123));
    EnvState sa = a.reset(), sb = b.reset();
    for (Action act : getout_optimal) {
        StepResult ra = a.step(sa, act), rb = b.step(sb, act);
        CHECK(ra.state == rb.state);
        CHECK(ra.reward == rb.reward);
        CHECK(a.symbolize(ra.state) == b.symbolize(rb.state));
        sa = ra.state;
        sb = rb.state;
    }
}

TEST_CASE("success trajectories visit every planted conjunction", "[env][planted]") {
    for (bool ablate : {false, true}) {
        for (const char* name : {"getout", "loot"}) {
            Env env(default_env_config(name, 0, ablate));
            auto planted = env.planted_subtasks();
            CHECK(planted.size() == env.config().subtask_spec.size());

            // canonical rollout
            std::vector<SymbolicState> states;
            EnvState s = env.reset();
            states.push_back(env.symbolize(s));
            while (s.terminal == Terminal::none) {
                s = env.step(s, env.canonical_action(s)).state;
                states.push_back(env.symbolize(s));
            }
            REQUIRE(s.terminal == Terminal::success);
            for (const auto& p : planted) {
                bool visited = false;
                for (const auto& sym : states)
                    if (sym.contains_all(p.atoms)) visited = true;
                INFO(name << (ablate ? "*" : "") << " subtask " << p.id);
                CHECK(visited);
            }
        }
    }
}

TEST_CASE("planted conjunctions carry no distractor positions", "[env][planted]") {
    Env env(getout_config());
    for (const auto& p : env.planted_subtasks())
        for (const auto& a : p.atoms)
            if (a.pred == "closeby" || a.pred == "on_left" || a.pred == "on_right")
                for (const auto& arg : a.args) CHECK(arg != "key_red");
}

TEST_CASE("env config JSON round trips", "[env][json]") {
    for (const char* name : {"getout", "loot"}) {
        EnvConfig c = default_env_config(name, 7, true);
        EnvConfig back = EnvConfig::from_json(c.to_json());
        CHECK(back.to_json() == c.to_json());
        CHECK(Env(back).vocabulary().hash() == Env(c).vocabulary().hash());
    }
}

TEST_CASE("action names round trip", "[env][actions]") {
    for (const auto& n : action_names()) CHECK(action_name(action_from_name(n)) == n);
    CHECK_THROWS_AS(action_from_name("teleport"), InvalidConfig);
}
