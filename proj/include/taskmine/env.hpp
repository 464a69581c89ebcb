#ifndef TASKMINE_ENV_HPP
#define TASKMINE_ENV_HPP

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "logic.hpp"

namespace taskmine {

struct InvalidConfig : Error {
    explicit InvalidConfig(const std::string& what) : Error("invalid config: " + what) {}
};

struct SteppedAfterTerminal : Error {
    SteppedAfterTerminal() : Error("step called on a terminal state") {}
};

enum class Action { jump = 0, move_left, move_right, noop };

inline const std::vector<std::string>& action_names() {
    static const std::vector<std::string> names = {"jump", "move_left", "move_right",
                                                   "noop"};
    return names;
}

inline std::string action_name(Action a) {
    return action_names()[static_cast<std::size_t>(a)];
}

inline Action action_from_name(const std::string& name) {
    for (std::size_t i = 0; i < action_names().size(); ++i)
        if (action_names()[i] == name) return static_cast<Action>(i);
    throw InvalidConfig("unknown action: " + name);
}

struct ObjectSpec {
    std::string name;
    std::string kind; // coin | flag | key | door | chest
    int cell = 0;
    std::string requires_key; // chests only: key consumed-free requirement
};

struct SubtaskRequirement {
    std::string id;
    std::vector<std::string> objects; // all must be picked/opened
    bool is_door = false;             // door: reach it with everything else done
};

struct RewardConstants {
    double step_penalty = -0.02;
    double subtask_bonus = 5.0;
    double completion_bonus = 20.0;
    // Larger in magnitude than the sum of all subtask bonuses: an episode that
    // completes every pickup but never finishes still scores negative.
    double failure_penalty = -20.0;
};

struct EnvConfig {
    std::string env_name; // getout | loot
    int grid_width = 7;
    int grid_height = 1;
    int agent_start = 2;
    std::vector<ObjectSpec> object_layout;
    std::vector<SubtaskRequirement> subtask_spec;
    RewardConstants rewards;
    int max_steps = 50;
    std::uint64_t seed = 0;
    bool ablate_vocab = false; // GetOut* / Loot*: drop have & picked

    nlohmann::json to_json() const {
        nlohmann::json objs = nlohmann::json::array();
        for (const auto& o : object_layout)
            objs.push_back({{"name", o.name},
                            {"kind", o.kind},
                            {"cell", o.cell},
                            {"requires_key", o.requires_key}});
        nlohmann::json subs = nlohmann::json::array();
        for (const auto& s : subtask_spec)
            subs.push_back({{"id", s.id}, {"objects", s.objects}, {"is_door", s.is_door}});
        return {{"env_name", env_name},
                {"grid_width", grid_width},
                {"grid_height", grid_height},
                {"agent_start", agent_start},
                {"object_layout", objs},
                {"subtask_spec", subs},
                {"rewards",
                 {{"step_penalty", rewards.step_penalty},
                  {"subtask_bonus", rewards.subtask_bonus},
                  {"completion_bonus", rewards.completion_bonus},
                  {"failure_penalty", rewards.failure_penalty}}},
                {"max_steps", max_steps},
                {"seed", seed},
                {"ablate_vocab", ablate_vocab}};
    }

    static EnvConfig from_json(const nlohmann::json& j) {
        EnvConfig c;
        c.env_name = j.at("env_name").get<std::string>();
        c.grid_width = j.at("grid_width").get<int>();
        c.grid_height = j.value("grid_height", 1);
        c.agent_start = j.at("agent_start").get<int>();
        for (const auto& o : j.at("object_layout")) {
            ObjectSpec s;
            s.name = o.at("name").get<std::string>();
            s.kind = o.at("kind").get<std::string>();
            s.cell = o.at("cell").get<int>();
            s.requires_key = o.value("requires_key", std::string());
            c.object_layout.push_back(s);
        }
        for (const auto& s : j.at("subtask_spec")) {
            SubtaskRequirement r;
            r.id = s.at("id").get<std::string>();
            r.objects = s.at("objects").get<std::vector<std::string>>();
            r.is_door = s.value("is_door", false);
            c.subtask_spec.push_back(r);
        }
        if (j.contains("rewards")) {
            const auto& r = j.at("rewards");
            c.rewards.step_penalty = r.value("step_penalty", -0.02);
            c.rewards.subtask_bonus = r.value("subtask_bonus", 5.0);
            c.rewards.completion_bonus = r.value("completion_bonus", 20.0);
            c.rewards.failure_penalty = r.value("failure_penalty", -20.0);
        }
        c.max_steps = j.at("max_steps").get<int>();
        c.seed = j.value("seed", std::uint64_t(0));
        c.ablate_vocab = j.value("ablate_vocab", false);
        return c;
    }
};

enum class Terminal { none = 0, success, failure };

struct EnvState {
    int agent_pos = 0;
    std::map<std::string, int> objects_on_grid; // name -> cell
    std::set<std::string> inventory;            // held objects
    std::set<std::string> picked;               // ever collected/opened
    std::set<std::string> achieved;             // completed subtask ids
    int steps_elapsed = 0;
    Terminal terminal = Terminal::none;

    bool operator==(const EnvState&) const = default;
};

struct StepResult {
    EnvState state;
    double reward = 0.0;
    bool done = false;
};

/// Planted ground truth: the defining ground-atom conjunction of one subtask.
struct PlantedSubtask {
    std::string id;
    std::set<GroundAtom> atoms;
};

/// Deterministic 1-D gridworld with walk-over pickups. The row layouts place
/// required objects consecutively so each subtask completion is a distinct
/// landmark state.
class Env {
  public:
    explicit Env(EnvConfig config) : config_(std::move(config)) {
        validate();
        build_vocabulary();
    }

    const EnvConfig& config() const { return config_; }
    const Vocabulary& vocabulary() const { return vocab_; }

    EnvState reset() const {
        EnvState s;
        s.agent_pos = config_.agent_start;
        for (const auto& o : config_.object_layout) s.objects_on_grid[o.name] = o.cell;
        return s;
    }

    StepResult step(const EnvState& state, Action action) const {
        if (state.terminal != Terminal::none) throw SteppedAfterTerminal();
        StepResult out;
        out.state = state;
        EnvState& s = out.state;
        double reward = config_.rewards.step_penalty;

        int pos = s.agent_pos;
        if (action == Action::move_left) pos -= 1;
        if (action == Action::move_right) pos += 1;
        if (pos < 0) pos = 0;
        if (pos >= config_.grid_width) pos = config_.grid_width - 1;
        s.agent_pos = pos;
        s.steps_elapsed += 1;

        // walk-over pickups; chests open only with their key in hand
        for (const auto& o : config_.object_layout) {
            auto it = s.objects_on_grid.find(o.name);
            if (it == s.objects_on_grid.end() || it->second != pos) continue;
            if (o.kind == "door") continue;
            if (o.kind == "chest") {
                if (!o.requires_key.empty() && !s.inventory.count(o.requires_key))
                    continue;
                s.objects_on_grid.erase(it);
                s.picked.insert(o.name);
            } else {
                s.objects_on_grid.erase(it);
                s.inventory.insert(o.name);
                s.picked.insert(o.name);
            }
        }

        // newly completed pickup subtasks
        for (const auto& req : config_.subtask_spec) {
            if (req.is_door || s.achieved.count(req.id)) continue;
            bool done = true;
            for (const auto& name : req.objects)
                if (!s.picked.count(name)) done = false;
            if (done) {
                s.achieved.insert(req.id);
                reward += config_.rewards.subtask_bonus;
            }
        }

        bool all_pickups = pickups_done(s);
        const SubtaskRequirement* door = door_requirement();
        if (door) {
            if (all_pickups && agent_at_door(s)) {
                s.achieved.insert(door->id);
                s.terminal = Terminal::success;
                reward += config_.rewards.completion_bonus;
            }
        } else if (all_pickups) {
            s.terminal = Terminal::success;
            reward += config_.rewards.completion_bonus;
        }

        if (s.terminal == Terminal::none && s.steps_elapsed >= config_.max_steps) {
            s.terminal = Terminal::failure;
            reward += config_.rewards.failure_penalty;
        }

        out.reward = reward;
        out.done = s.terminal != Terminal::none;
        return out;
    }

    /// Pure function of the environment state.
    SymbolicState symbolize(const EnvState& s) const {
        SymbolicState out;
        for (const auto& o : config_.object_layout)
            out.atoms.insert({"type", {o.name, o.kind}});
        for (const auto& [name, cell] : s.objects_on_grid) {
            if (std::abs(s.agent_pos - cell) <= 1)
                out.atoms.insert({"closeby", {"agent", name}});
            if (s.agent_pos < cell) out.atoms.insert({"on_left", {"agent", name}});
            if (s.agent_pos > cell) out.atoms.insert({"on_right", {"agent", name}});
        }
        if (!config_.ablate_vocab) {
            for (const auto& name : s.inventory)
                out.atoms.insert({"have", {"agent", name}});
            for (const auto& name : s.picked) out.atoms.insert({"picked", {name}});
        }
        if (agent_at_door(s)) out.atoms.insert({"at_door", {"agent"}});
        if (pickups_done(s)) out.atoms.insert({"all_collected", {"agent"}});
        return out;
    }

    /// Objects whose collection (or reaching, for doors) the task requires,
    /// including keys that required chests depend on. Everything else is a
    /// distractor.
    std::set<std::string> required_objects() const {
        std::set<std::string> req;
        for (const auto& r : config_.subtask_spec)
            for (const auto& name : r.objects) req.insert(name);
        for (const auto& o : config_.object_layout)
            if (o.kind == "chest" && !o.requires_key.empty() && req.count(o.name))
                req.insert(o.requires_key);
        if (door_requirement()) req.insert(door_object_name());
        return req;
    }

    /// Scripted optimal-route action: sweep up any distractors first (so their
    /// positional atoms vanish from landmark states), then walk right.
    Action canonical_action(const EnvState& s) const {
        std::set<std::string> req = required_objects();
        int target = -1;
        for (const auto& o : config_.object_layout) {
            if (o.kind == "door" || req.count(o.name)) continue;
            auto it = s.objects_on_grid.find(o.name);
            if (it == s.objects_on_grid.end()) continue;
            if (target < 0 || it->second < target) target = it->second;
        }
        if (target >= 0 && target != s.agent_pos)
            return target < s.agent_pos ? Action::move_left : Action::move_right;
        return Action::move_right;
    }

    /// Ground truth landmark conjunctions: one snapshot per subtask completion
    /// along the canonical route, minus positional atoms about distractor
    /// objects (objects no subtask requires).
    std::vector<PlantedSubtask> planted_subtasks() const {
        std::set<std::string> required = required_objects();

        std::vector<PlantedSubtask> out;
        EnvState s = reset();
        std::set<std::string> seen = s.achieved;
        int guard = 0;
        while (s.terminal == Terminal::none && guard++ < config_.max_steps) {
            s = step(s, canonical_action(s)).state;
            for (const auto& req : config_.subtask_spec) {
                if (!s.achieved.count(req.id) || seen.count(req.id)) continue;
                seen.insert(req.id);
                PlantedSubtask p;
                p.id = req.id;
                for (const auto& a : symbolize(s).atoms) {
                    bool positional = a.pred == "closeby" || a.pred == "on_left" ||
                                      a.pred == "on_right";
                    bool about_distractor = false;
                    for (const auto& arg : a.args)
                        if (arg != "agent" && object_exists(arg) && !required.count(arg))
                            about_distractor = true;
                    if (positional && about_distractor) continue;
                    p.atoms.insert(a);
                }
                out.push_back(std::move(p));
            }
        }
        if (out.size() != config_.subtask_spec.size())
            throw InvalidConfig("canonical route does not complete every subtask");
        return out;
    }

    /// Plain-language overview used in LLM prompts.
    std::string description() const {
        std::string d = "Environment '" + config_.env_name +
                        "': a one-dimensional grid of width " +
                        std::to_string(config_.grid_width) +
                        ". The agent can move_left, move_right, jump (in place) or "
                        "noop, and collects an object by walking onto its cell.\n"
                        "Objects:";
        for (const auto& o : config_.object_layout)
            d += " " + o.name + " (" + o.kind + ")";
        d += ".\nPredicates describing a state:";
        for (const auto& p : vocab_.predicates()) {
            d += " " + p.name + "/" + std::to_string(p.arity());
        }
        d += ".";
        return d;
    }

    bool pickups_done(const EnvState& s) const {
        for (const auto& req : config_.subtask_spec) {
            if (req.is_door) continue;
            for (const auto& name : req.objects)
                if (!s.picked.count(name)) return false;
        }
        return true;
    }

  private:
    void validate() const {
        if (config_.grid_width < 2) throw InvalidConfig("grid_width must be >= 2");
        if (config_.max_steps < 1) throw InvalidConfig("max_steps must be >= 1");
        if (config_.subtask_spec.empty()) throw InvalidConfig("subtask_spec is empty");
        if (config_.agent_start < 0 || config_.agent_start >= config_.grid_width)
            throw InvalidConfig("agent_start out of bounds");
        std::set<std::string> names;
        for (const auto& o : config_.object_layout) {
            if (o.cell < 0 || o.cell >= config_.grid_width)
                throw InvalidConfig("object " + o.name + " out of bounds");
            if (!names.insert(o.name).second)
                throw InvalidConfig("duplicate object name " + o.name);
            if (o.kind == "chest" && !o.requires_key.empty() &&
                !object_exists(o.requires_key))
                throw InvalidConfig("chest " + o.name + " requires missing key");
        }
        int doors = 0;
        for (const auto& req : config_.subtask_spec) {
            if (req.is_door) ++doors;
            for (const auto& name : req.objects)
                if (!req.is_door && !object_exists(name))
                    throw InvalidConfig("subtask " + req.id + " references missing " +
                                        name);
        }
        if (doors > 1) throw InvalidConfig("at most one door subtask");
    }

    bool object_exists(const std::string& name) const {
        for (const auto& o : config_.object_layout)
            if (o.name == name) return true;
        return false;
    }

    const SubtaskRequirement* door_requirement() const {
        for (const auto& req : config_.subtask_spec)
            if (req.is_door) return &req;
        return nullptr;
    }

    std::string door_object_name() const {
        for (const auto& o : config_.object_layout)
            if (o.kind == "door") return o.name;
        return {};
    }

    bool agent_at_door(const EnvState& s) const {
        for (const auto& o : config_.object_layout)
            if (o.kind == "door" && s.agent_pos == o.cell) return true;
        return false;
    }

    void build_vocabulary() {
        std::map<std::string, std::vector<std::string>> constants;
        constants["agent"] = {"agent"};
        std::set<std::string> kinds;
        for (const auto& o : config_.object_layout) {
            constants["object"].push_back(o.name);
            kinds.insert(o.kind);
        }
        constants["kind"] = {kinds.begin(), kinds.end()};

        std::vector<PredicateSig> preds = {
            {"type", {"object", "kind"}},      {"closeby", {"agent", "object"}},
            {"on_left", {"agent", "object"}},  {"on_right", {"agent", "object"}},
            {"at_door", {"agent"}},            {"all_collected", {"agent"}},
        };
        if (!config_.ablate_vocab) {
            preds.push_back({"have", {"agent", "object"}});
            preds.push_back({"picked", {"object"}});
        }
        std::vector<PredicateSig> actions = {
            {"jump", {"agent"}},
            {"move_left", {"agent"}},
            {"move_right", {"agent"}},
            {"noop", {"agent"}},
        };
        vocab_ = Vocabulary(std::move(preds), std::move(constants), std::move(actions));
    }

    EnvConfig config_;
    Vocabulary vocab_;
};

/// GetOut-mini: two coins, a flag, a blue key, a red key distractor, a door.
/// Required objects sit on consecutive cells right of the start; the red key
/// lies off the path to the left.
inline EnvConfig getout_config(std::uint64_t seed = 0, bool ablate = false) {
    EnvConfig c;
    c.env_name = "getout";
    c.grid_width = 7;
    c.agent_start = 2;
    c.object_layout = {
        {"key_red", "key", 0, ""}, {"coin1", "coin", 3, ""}, {"coin2", "coin", 3, ""},
        {"flag1", "flag", 4, ""},  {"key_blue", "key", 5, ""}, {"door1", "door", 6, ""},
    };
    c.subtask_spec = {
        {"coins", {"coin1", "coin2"}, false},
        {"flag", {"flag1"}, false},
        {"blue_key", {"key_blue"}, false},
        {"door", {"door1"}, true},
    };
    // close to the scripted route length: keeps failed episodes about as long
    // as successful ones, which conditions the contrastive objective
    c.max_steps = 14;
    c.seed = seed;
    c.ablate_vocab = ablate;
    return c;
}

/// Loot-mini: two key+chest pairs, each pair one subtask; the key shares the
/// chest's cell so a pair opens in a single step.
inline EnvConfig loot_config(std::uint64_t seed = 0, bool ablate = false) {
    EnvConfig c;
    c.env_name = "loot";
    c.grid_width = 6;
    c.agent_start = 1;
    c.object_layout = {
        {"key1", "key", 3, ""},
        {"chest1", "chest", 3, "key1"},
        {"key2", "key", 4, ""},
        {"chest2", "chest", 4, "key2"},
    };
    c.subtask_spec = {
        {"chest1", {"chest1"}, false},
        {"chest2", {"chest2"}, false},
    };
    c.max_steps = 7;
    c.seed = seed;
    c.ablate_vocab = ablate;
    return c;
}

inline EnvConfig default_env_config(const std::string& name, std::uint64_t seed = 0,
                                    bool ablate = false) {
    if (name == "getout") return getout_config(seed, ablate);
    if (name == "loot") return loot_config(seed, ablate);
    throw InvalidConfig("unknown env: " + name);
}

} // namespace taskmine

#endif
