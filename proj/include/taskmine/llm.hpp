#ifndef TASKMINE_LLM_HPP
#define TASKMINE_LLM_HPP

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

// policy.hpp (and Eigen underneath) must precede httplib.h: httplib drags in
// <resolv.h>, whose _res macro corrupts Eigen's internal declarations
#include "policy.hpp"

#include <httplib.h>
#ifdef _res
#undef _res
#endif

namespace taskmine {

struct InsufficientExamples : Error {
    InsufficientExamples()
        : Error("need at least 2 few-shot examples from other environments") {}
};

struct Timeout : Error {
    explicit Timeout(const std::string& endpoint)
        : Error("no response from " + endpoint + " within retry budget") {}
};

struct HttpStatus : Error {
    int code;
    explicit HttpStatus(int c)
        : Error("backend returned HTTP status " + std::to_string(c)), code(c) {}
};

struct MissingRecording : Error {
    explicit MissingRecording(const std::string& hash)
        : Error("no recorded response for prompt hash " + hash) {}
};

struct NoRulesParsed : Error {
    NoRulesParsed() : Error("no valid rules parsed after retry budget") {}
};

enum class Directive { base, generalize, specialize };

inline std::string directive_name(Directive d) {
    switch (d) {
        case Directive::base: return "base";
        case Directive::generalize: return "generalize";
        case Directive::specialize: return "specialize";
    }
    return "base";
}

struct FewShotExample {
    std::string env_name;
    std::string text; // rendered description + rule block
};

/// Two built-in worked examples from environments that never occur in this
/// suite, so any current environment keeps >= 2 foreign examples.
inline const std::vector<FewShotExample>& builtin_few_shot_bank() {
    static const std::vector<FewShotExample> bank = {
        {"riverworld",
         "Environment 'riverworld': a one-dimensional grid with a gem to fetch.\n"
         "Subtask conjunction: closeby(agent, gem1), picked(gem1)\n"
         "Rules:\n"
         "```\n"
         "move_right(A) :- on_left(A, gem1).\n"
         "move_left(A) :- on_right(A, gem1).\n"
         "```"},
        {"cliffside",
         "Environment 'cliffside': a one-dimensional grid with a rope before a gap.\n"
         "Subtask conjunction: picked(rope1), all_collected(agent)\n"
         "Rules:\n"
         "```\n"
         "move_right(A) :- on_left(A, rope1).\n"
         "jump(A) :- closeby(A, gap1).\n"
         "```"},
        {"mazerun",
         "Environment 'mazerun': a one-dimensional corridor ending at a lever.\n"
         "Subtask conjunction: closeby(agent, lever1), picked(lever1)\n"
         "Rules:\n"
         "```\n"
         "move_right(A) :- type(lever1, lever), on_left(A, lever1).\n"
         "```"},
    };
    return bank;
}

struct PromptBundle {
    std::string constant_section; // predicate definitions + environment overview
    std::vector<std::string> few_shot;
    std::string subtask_section; // rendered conjunction
    Directive directive = Directive::base;
    std::string rules_section;                 // refinement only
    std::optional<std::string> failed_state;   // specialize only

    std::string render() const {
        std::string out = constant_section;
        out += "\n\n## Examples from other environments\n";
        for (const auto& ex : few_shot) out += "\n" + ex + "\n";
        out += "\n## Subtask\nThe agent must reach a state satisfying:\n" +
               subtask_section + "\n";
        if (directive == Directive::base) {
            out += "\n## Task\nWrite first-order rules that drive the agent to this "
                   "subtask.\n";
        } else {
            out += "\n## Current rules\n```\n" + rules_section + "```\n";
            if (directive == Directive::generalize) {
                out += "\n## Task\nThese rules never achieve the subtask. Remove "
                       "predicates from rule bodies to make them more general.\n";
            } else {
                out += "\n## Failed state\n" + failed_state.value() + "\n";
                out += "\n## Task\nThese rules sometimes fail, most recently in the "
                       "state above. Add predicates to rule bodies to make them more "
                       "specific.\n";
            }
        }
        out += "\nRespond with the rules inside a single fenced code block, one rule "
               "per line, each of the form `action(Var) :- predicate(args), ... .`\n";
        return out;
    }
};

struct LlmBackendSpec {
    std::string kind = "replay"; // http | replay
    std::string endpoint;        // http kind
    std::string model;           // http kind
    std::string api_key_env;     // env var holding the key; never stored in config
    int timeout_ms = 30000;
    int max_retries = 3;
    double temperature = 0.2;
    std::string replay_path; // replay kind: recording to read
    std::string record_path; // optional: append hash -> response after http calls

    void check() const {
        if (kind == "http") {
            if (endpoint.empty() || model.empty())
                throw InvalidConfig("http backend requires endpoint and model");
        } else if (kind == "replay") {
            if (replay_path.empty())
                throw InvalidConfig("replay backend requires replay_path");
        } else {
            throw InvalidConfig("backend kind must be http or replay");
        }
    }

    nlohmann::json to_json() const {
        return {{"kind", kind},           {"endpoint", endpoint},
                {"model", model},         {"api_key_env", api_key_env},
                {"timeout_ms", timeout_ms}, {"max_retries", max_retries},
                {"temperature", temperature}, {"replay_path", replay_path},
                {"record_path", record_path}};
    }

    static LlmBackendSpec from_json(const nlohmann::json& j) {
        LlmBackendSpec s;
        s.kind = j.value("kind", std::string("replay"));
        s.endpoint = j.value("endpoint", std::string());
        s.model = j.value("model", std::string());
        s.api_key_env = j.value("api_key_env", std::string());
        s.timeout_ms = j.value("timeout_ms", 30000);
        s.max_retries = j.value("max_retries", 3);
        s.temperature = j.value("temperature", 0.2);
        s.replay_path = j.value("replay_path", std::string());
        s.record_path = j.value("record_path", std::string());
        s.check();
        return s;
    }
};

inline std::string render_conjunction(const std::set<GroundAtom>& atoms) {
    std::string out;
    for (const auto& a : atoms) {
        if (!out.empty()) out += ", ";
        out += a.str();
    }
    return out;
}

inline PromptBundle build_base_prompt(const Subtask& subtask,
                                      const std::string& env_description,
                                      const std::string& env_name,
                                      const std::vector<FewShotExample>& bank) {
    PromptBundle b;
    b.constant_section =
        "You write control rules for a symbolic agent. A rule fires an action when "
        "its body atoms all hold in the current state.\n\n" +
        env_description;
    for (const auto& ex : bank) {
        if (ex.env_name == env_name) continue;
        if (b.few_shot.size() == 2) break;
        b.few_shot.push_back(ex.text);
    }
    if (b.few_shot.size() < 2) throw InsufficientExamples();
    b.subtask_section = render_conjunction(subtask.atoms);
    b.directive = Directive::base;
    return b;
}

namespace detail {

inline nlohmann::json load_replay_store(const std::string& path) {
    std::ifstream in(path);
    if (!in) return nlohmann::json::object();
    return nlohmann::json::parse(in);
}

inline void record_response(const std::string& path, const std::string& hash,
                            const std::string& response) {
    nlohmann::json store = load_replay_store(path);
    store[hash] = response;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << store.dump(2) << "\n";
}

inline std::string http_complete(const LlmBackendSpec& spec, const std::string& prompt) {
    // split endpoint into base url and path
    std::string base = spec.endpoint, path = "/";
    auto scheme = base.find("://");
    auto slash = base.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        path = base.substr(slash);
        base = base.substr(0, slash);
    }
    httplib::Client cli(base);
    cli.set_connection_timeout(0, spec.timeout_ms * 1000);
    cli.set_read_timeout(spec.timeout_ms / 1000, (spec.timeout_ms % 1000) * 1000);

    httplib::Headers headers;
    if (!spec.api_key_env.empty()) {
        const char* key = std::getenv(spec.api_key_env.c_str());
        if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    nlohmann::json body = {
        {"model", spec.model},
        {"messages", nlohmann::json::array(
                         {{{"role", "user"}, {"content", prompt}}})},
        {"temperature", spec.temperature}};
    std::string payload = body.dump();

    int last_status = 0;
    for (int attempt = 0; attempt <= spec.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(50 * (1 << (attempt - 1))));
        auto res = cli.Post(path, headers, payload, "application/json");
        if (!res) continue;
        last_status = res->status;
        if (res->status >= 500) continue;
        if (res->status != 200) throw HttpStatus(res->status);
        nlohmann::json reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    }
    if (last_status >= 500) throw HttpStatus(last_status);
    throw Timeout(spec.endpoint);
}

} // namespace detail

/// One blocking completion. Replay backends look the prompt hash up in the
/// recording; http backends post the chat request and optionally record the
/// response for later replay.
inline std::string complete(const LlmBackendSpec& spec, const std::string& prompt) {
    spec.check();
    std::string hash = fnv1a_hex(prompt);
    if (spec.kind == "replay") {
        nlohmann::json store = detail::load_replay_store(spec.replay_path);
        if (!store.contains(hash)) throw MissingRecording(hash);
        return store.at(hash).get<std::string>();
    }
    std::string response = detail::http_complete(spec, prompt);
    if (!spec.record_path.empty())
        detail::record_response(spec.record_path, hash, response);
    return response;
}

namespace detail {

/// First fenced block's inner lines, or nullopt when no complete fence exists.
inline std::optional<std::vector<std::string>> fenced_lines(const std::string& text) {
    auto open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    auto eol = text.find('\n', open);
    if (eol == std::string::npos) return std::nullopt;
    auto close = text.find("```", eol + 1);
    if (close == std::string::npos) return std::nullopt;
    std::vector<std::string> lines;
    std::string body = text.substr(eol + 1, close - eol - 1);
    std::string line;
    for (char c : body) {
        if (c == '\n') {
            if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos)
                lines.push_back(line);
            line.clear();
        } else if (c != '\r') {
            line += c;
        }
    }
    if (!line.empty() && line.find_first_not_of(" \t") != std::string::npos)
        lines.push_back(line);
    return lines;
}

struct ParseAttempt {
    std::vector<Rule> rules;
    std::string first_error; // empty when every line parsed
};

inline ParseAttempt parse_response(const std::string& text, const Vocabulary& vocab) {
    ParseAttempt out;
    auto lines = fenced_lines(text);
    if (!lines) {
        out.first_error = "no fenced code block found";
        return out;
    }
    for (const auto& line : *lines) {
        try {
            out.rules.push_back(parse_rule(line, &vocab));
        } catch (const Error& e) {
            if (out.first_error.empty())
                out.first_error = "line `" + line + "`: " + e.what();
        }
    }
    return out;
}

} // namespace detail

/// Prompt, parse, and on any parse failure re-prompt once with the error
/// appended; the retry is parsed leniently (valid lines kept).
inline std::vector<Rule> generate_rules(const LlmBackendSpec& spec,
                                        const PromptBundle& bundle,
                                        const Vocabulary& vocab) {
    std::string prompt = bundle.render();
    detail::ParseAttempt first = detail::parse_response(complete(spec, prompt), vocab);
    if (first.first_error.empty() && !first.rules.empty()) return first.rules;
    std::string retry_prompt =
        prompt + "\nYour previous output failed to parse at: " +
        (first.first_error.empty() ? std::string("empty rule list") : first.first_error) +
        "\nRespond again with only valid rules in one fenced code block.\n";
    detail::ParseAttempt second =
        detail::parse_response(complete(spec, retry_prompt), vocab);
    if (!second.rules.empty()) return second.rules;
    if (!first.rules.empty()) return first.rules;
    throw NoRulesParsed();
}

struct RefineResult {
    std::vector<Rule> rules;
    bool fell_back = false; // true when the backend produced nothing usable
};

/// Generalize/specialize refinement exchange. Never returns an empty rule
/// set: an unusable response falls back to the input rules with a warning.
inline RefineResult refine_rules(const LlmBackendSpec& spec,
                                 const std::vector<Rule>& rules,
                                 const std::optional<SymbolicState>& failed_state,
                                 Directive direction, const std::string& env_description,
                                 const Vocabulary& vocab) {
    if (direction == Directive::base)
        throw InvalidConfig("refine direction must be generalize or specialize");
    if (direction == Directive::specialize && !failed_state)
        throw InvalidConfig("specialize requires a failed state");
    PromptBundle b;
    b.constant_section =
        "You revise control rules for a symbolic agent. A rule fires an action when "
        "its body atoms all hold in the current state.\n\n" +
        env_description;
    b.few_shot = {"(see the rules below)", "(revise, do not restart)"};
    b.subtask_section = "(unchanged from the original task)";
    b.directive = direction;
    for (const auto& r : rules) b.rules_section += format_rule(r) + "\n";
    if (failed_state) b.failed_state = atoms_str(failed_state->atoms);
    try {
        std::vector<Rule> out = generate_rules(spec, b, vocab);
        return {out, false};
    } catch (const NoRulesParsed&) {
        return {rules, true};
    }
}

/// Success rate of the greedy unit-weight policy on subtask-truncated
/// episodes, plus the final symbolic state of the lowest-return episode.
inline std::pair<double, SymbolicState> evaluate_templates(const std::vector<Rule>& rules,
                                                           const Env& env,
                                                           const Subtask& subtask,
                                                           int n_episodes) {
    if (rules.empty()) throw InvalidConfig("evaluate_templates requires rules");
    if (n_episodes <= 0) return {0.0, env.symbolize(env.reset())};
    WeightedRuleSet rs = WeightedRuleSet::unit(rules);
    const Vocabulary& vocab = env.vocabulary();
    int successes = 0;
    double worst_return = std::numeric_limits<double>::infinity();
    SymbolicState worst_final;
    for (int ep = 0; ep < n_episodes; ++ep) {
        EnvState s = env.reset();
        double total = 0.0;
        bool achieved = false;
        SymbolicState sym = env.symbolize(s);
        while (s.terminal == Terminal::none) {
            if (sym.contains_all(subtask.atoms)) {
                achieved = true;
                break;
            }
            StepResult r = env.step(s, action_from_name(greedy_action(rs, sym, vocab)));
            total += r.reward;
            s = r.state;
            sym = env.symbolize(s);
        }
        if (!achieved && sym.contains_all(subtask.atoms)) achieved = true;
        if (achieved) ++successes;
        if (total < worst_return) {
            worst_return = total;
            worst_final = sym;
        }
    }
    return {static_cast<double>(successes) / n_episodes, worst_final};
}

} // namespace taskmine

#endif
