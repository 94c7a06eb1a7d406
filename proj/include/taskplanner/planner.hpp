#pragma once

// Behavior-tree planner and the single-prompt baseline. Both map model output
// to the same Action vocabulary.

#include "taskplanner/llm_gateway.hpp"
#include "taskplanner/prompt.hpp"
#include "taskplanner/recipe_graph.hpp"
#include "taskplanner/skill_codegen.hpp"
#include "taskplanner/state.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace taskplanner::planner {

namespace fs = std::filesystem;

// ------------------------------------------------------------- capabilities

enum class Verdict { Ok, CapabilityViolation };

/// Leading-verb patterns per agent. "*" accepts anything.
struct CapabilityTable {
    std::map<std::string, std::vector<std::string>> verbs;

    static CapabilityTable from_json(const json& j)
    {
        CapabilityTable t;
        for (const auto& [agent, list] : j.items()) t.verbs[agent] = list.get<std::vector<std::string>>();
        return t;
    }

    bool can(const std::string& agent, std::string_view label) const
    {
        auto it = verbs.find(agent);
        if (it == verbs.end()) return false;
        auto l = to_lower(trim(label));
        for (const auto& v : it->second) {
            if (v == "*") return true;
            auto p = to_lower(v);
            if (l.rfind(p, 0) == 0 && (l.size() == p.size() || l[p.size()] == ' ')) return true;
        }
        return false;
    }

    /// First robot (R2, then R1) able to take the subtask.
    std::string robot_for(std::string_view label) const
    {
        for (const auto& id : robot_ids())
            if (can(id, label)) return id;
        return {};
    }
};

inline Verdict validate_assignment(const CapabilityTable& caps, const std::string& agent, std::string_view label)
{
    return caps.can(agent, label) ? Verdict::Ok : Verdict::CapabilityViolation;
}

// ------------------------------------------------------------------- config

struct NodeConfig {
    std::string name;
    bool decision = false;
    std::string prompt_file;
    std::vector<std::string> children;
    std::string handler; // action nodes: set_recipe | reply | modify_queues | interrupt | no_op
};

struct TreeConfig {
    std::string root = "Decision";
    std::string fallback = "Overall_Clarify";
    std::map<std::string, NodeConfig> nodes;
    int max_retries = 3;
    std::string assistant_name = "Assistant"; // speaker of planner messages in chat history

    static TreeConfig from_json(const json& j)
    {
        TreeConfig t;
        t.root = j.value("root", t.root);
        t.fallback = j.value("fallback", t.fallback);
        t.max_retries = j.value("max_retries", t.max_retries);
        t.assistant_name = j.value("assistant_name", t.assistant_name);
        for (const auto& [name, n] : j.at("nodes").items()) {
            NodeConfig c;
            c.name = name;
            c.decision = n.at("kind").get<std::string>() == "Decision";
            c.prompt_file = n.value("prompt", "");
            c.children = n.value("children", std::vector<std::string>{});
            c.handler = n.value("handler", "");
            t.nodes[name] = std::move(c);
        }
        t.validate();
        return t;
    }

    /// Every decision node has children that exist, and the tree is acyclic
    /// from the root.
    void validate() const
    {
        if (!nodes.count(root)) throw std::invalid_argument("tree root '" + root + "' is not defined");
        if (!nodes.count(fallback)) throw std::invalid_argument("fallback node '" + fallback + "' is not defined");
        for (const auto& [name, n] : nodes) {
            if (n.decision && n.children.empty()) throw std::invalid_argument("decision node " + name + " has no children");
            if (!n.decision && n.handler.empty()) throw std::invalid_argument("action node " + name + " has no handler");
            for (const auto& c : n.children)
                if (!nodes.count(c)) throw std::invalid_argument("node " + name + " names unknown child " + c);
        }
        std::set<std::string> on_path;
        std::function<void(const std::string&)> dfs = [&](const std::string& n) {
            if (!on_path.insert(n).second) throw std::invalid_argument("behavior tree has a cycle through " + n);
            for (const auto& c : nodes.at(n).children) dfs(c);
            on_path.erase(n);
        };
        dfs(root);
    }

    bool is_edge(const std::string& parent, const std::string& child) const
    {
        auto it = nodes.find(parent);
        return it != nodes.end() &&
               std::find(it->second.children.begin(), it->second.children.end(), child) != it->second.children.end();
    }
};

/// Everything a planner needs, loaded from the data directory.
struct PlannerAssets {
    TreeConfig tree;
    std::map<std::string, prompt::PromptSpec> prompts; // by tree node name
    prompt::PromptSpec one_prompt;
    std::string codegen_template;
    recipe::RecipeLibrary recipes;
    CapabilityTable capabilities;
    std::string capability_text;
    skills::SkillTable skill_table;
    std::map<std::string, std::string> instructions; // rendered once per node

    /// Layout: tree.json, skills.json, prompts/, recipes/.
    static PlannerAssets load(const fs::path& data_dir)
    {
        PlannerAssets a;
        auto tree_json = json::parse(read_file(data_dir / "tree.json"));
        a.tree = TreeConfig::from_json(tree_json);
        auto prompts_dir = data_dir / "prompts";
        for (const auto& [name, n] : a.tree.nodes)
            if (!n.prompt_file.empty()) a.prompts[name] = prompt::load_prompt(prompts_dir / n.prompt_file);
        a.one_prompt = prompt::load_prompt(prompts_dir / tree_json.at("one_prompt").get<std::string>());
        a.codegen_template = read_file(prompts_dir / tree_json.at("code_generation").get<std::string>());
        a.capabilities = CapabilityTable::from_json(tree_json.at("capabilities"));
        a.capability_text = tree_json.value("capability_text", "");
        a.skill_table = skills::SkillTable::from_json(json::parse(read_file(data_dir / "skills.json")));
        a.recipes = recipe::RecipeLibrary::load_directory(data_dir / "recipes");
        a.render_instructions();
        return a;
    }

    void render_instructions()
    {
        instructions.clear();
        std::map<std::string, std::string> subs{{"recipes", recipe_list_text()}, {"robot_capabilities", capability_text}};
        for (const auto& [name, spec] : prompts) instructions[name] = prompt::render_instructions(spec, subs);
        instructions["All_Actions"] = prompt::render_instructions(one_prompt, subs);
    }

    std::string recipe_list_text() const
    {
        std::string out = "[";
        auto names = recipes.names();
        for (std::size_t i = 0; i < names.size(); ++i) out += (i ? ", '" : "'") + names[i] + "'";
        return out + "]";
    }
};

// -------------------------------------------------------------- node runner

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NodeExhausted : public std::runtime_error {
public:
    explicit NodeExhausted(const std::string& node)
        : std::runtime_error("NodeExhausted: " + node + " produced no valid output"), node_(node)
    {
    }
    const std::string& node() const noexcept { return node_; }

private:
    std::string node_;
};

class BackendUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One model call made while planning.
struct LlmExchange {
    std::string node;
    int attempt = 0;
    std::string request_hash;
    std::string response;
    bool accepted = false;
    std::string error;

    json to_json() const
    {
        json j{{"node", node}, {"attempt", attempt}, {"request_hash", request_hash}, {"response", response}, {"accepted", accepted}};
        if (!error.empty()) j["error"] = error;
        return j;
    }
};

struct NodeOutcome {
    std::string decision;        // decision nodes
    std::vector<Action> actions; // action nodes
    json output;
    int retries = 0;
};

inline llm::CompletionRequest make_request(const PlannerAssets& assets, const std::string& node_name,
                                           const prompt::PromptSpec& spec, const Observation& obs)
{
    llm::CompletionRequest req;
    req.node_name = node_name;
    req.system = spec.system;
    auto cached = assets.instructions.find(node_name);
    req.instructions = cached != assets.instructions.end()
                           ? cached->second
                           : prompt::render_instructions(spec, {{"recipes", assets.recipe_list_text()},
                                                                {"robot_capabilities", assets.capability_text}});
    req.rendered_observation = obs.render();
    req.observation = obs.to_json();
    return req;
}

/// Model output sometimes pads keys with whitespace ("completed_subtask_list ").
inline json trim_keys(const json& out)
{
    if (!out.is_object()) return out;
    json clean = json::object();
    for (const auto& [k, v] : out.items()) clean[trim(k)] = v;
    return clean;
}

namespace handlers {

inline const json* find_key(const json& out, std::initializer_list<const char*> keys)
{
    for (const char* k : keys)
        if (out.contains(k)) return &out.at(k);
    return nullptr;
}

inline std::string required_string(const json& out, std::initializer_list<const char*> keys)
{
    auto* v = find_key(out, keys);
    if (!v || !v->is_string() || trim(v->get<std::string>()).empty())
        throw ValidationError(std::string("missing or empty '") + *keys.begin() + "'");
    return trim(v->get<std::string>());
}

inline std::vector<std::string> string_list(const json& v, const char* key)
{
    std::vector<std::string> out;
    if (v.is_string()) {
        if (!trim(v.get<std::string>()).empty()) out.push_back(trim(v.get<std::string>()));
        return out;
    }
    if (!v.is_array()) throw ValidationError(std::string("'") + key + "' is not a list");
    for (const auto& e : v) {
        if (!e.is_string()) throw ValidationError(std::string("'") + key + "' holds a non-string entry");
        auto s = trim(e.get<std::string>());
        if (!s.empty()) out.push_back(s);
    }
    return out;
}

inline bool contains_ci(const std::vector<std::string>& v, const std::string& s) { return detail::contains_ci(v, s); }

inline std::vector<Action> set_recipe(const json& out, const PlannerAssets& assets, bool strict)
{
    std::string reply;
    if (auto* r = find_key(out, {"reply"}); r && r->is_string()) reply = trim(r->get<std::string>());
    auto* name_v = find_key(out, {"recipe name", "recipe_name"});
    if (!name_v || !name_v->is_string()) throw ValidationError("missing 'recipe name'");
    const auto* dag = assets.recipes.find(name_v->get<std::string>());
    if (!dag) {
        if (strict) throw ValidationError("UnknownRecipe: " + name_v->get<std::string>());
        return reply.empty() ? std::vector<Action>{Action::no_op()} : std::vector<Action>{Action::say(reply)};
    }
    std::vector<Action> actions{Action::set_recipe(dag->name())};
    if (!reply.empty()) actions.push_back(Action::say(reply));
    return actions;
}

inline std::vector<Action> reply(const json& out)
{
    return {Action::say(required_string(out, {"reply", "decision"}))};
}

/// Diffs whole-queue output against the observation.
inline std::vector<Action> modify_queues(const json& out, const Observation& obs, const PlannerAssets& assets, bool strict)
{
    struct Q {
        std::string agent;
        const char* key;
        const char* alt;
        const std::vector<std::string>* old;
    };
    const Q queues[] = {{"R2", "updated R2_subtask_queue", "R2_subtask_queue", &obs.r2.queue},
                        {"R1", "updated R1_subtask_queue", "R1_subtask_queue", &obs.r1.queue},
                        {"User", "updated user_subtask_queue", "user_subtask_queue", &obs.user_queue}};
    std::vector<Action> assigns;
    for (const auto& q : queues) {
        auto* v = find_key(out, {q.key, q.alt});
        if (!v) {
            if (strict) throw ValidationError(std::string("missing '") + q.key + "'");
            continue;
        }
        auto now = string_list(*v, q.key);
        std::vector<std::string> added;
        for (const auto& s : now) {
            if (contains_ci(*q.old, s) || contains_ci(added, s)) continue;
            if (strict && validate_assignment(assets.capabilities, q.agent, s) != Verdict::Ok)
                throw ValidationError("CapabilityViolation: " + q.agent + " cannot '" + s + "'");
            added.push_back(s);
        }
        if (!added.empty()) assigns.push_back(Action::assign(q.agent, added));
    }
    std::vector<Action> actions;
    auto* cv = find_key(out, {"updated completed_subtask_list", "completed_subtask_list"});
    if (!cv && strict) throw ValidationError("missing 'updated completed_subtask_list'");
    if (cv) {
        std::vector<std::string> done;
        for (const auto& s : string_list(*cv, "completed_subtask_list"))
            if (!contains_ci(obs.completed, s) && !contains_ci(done, s)) done.push_back(s);
        if (!done.empty()) actions.push_back(Action::mark_complete(done));
    }
    actions.insert(actions.end(), assigns.begin(), assigns.end());
    if (auto* r = find_key(out, {"reply"}); r && r->is_string() && !trim(r->get<std::string>()).empty())
        actions.push_back(Action::say(trim(r->get<std::string>())));
    if (actions.empty()) actions.push_back(Action::no_op());
    return actions;
}

inline std::vector<Action> interrupt(const json& out, const Observation& obs, bool strict)
{
    std::vector<Action> actions;
    for (const auto& id : robot_ids()) {
        auto* v = find_key(out, {(id + "_status").c_str()});
        if (!v) {
            if (strict) throw ValidationError("missing '" + id + "_status'");
            continue;
        }
        if (!v->is_string()) throw ValidationError(id + "_status is not a string");
        auto st = parse_status(v->get<std::string>());
        if (!st) {
            if (strict) throw ValidationError("unknown status '" + v->get<std::string>() + "'");
            continue;
        }
        if (*st != AgentStatus::Interrupted) continue;
        auto prev = obs.robot(id).status;
        if (prev == AgentStatus::Running)
            actions.push_back(Action::interrupt(id));
        else if (prev != AgentStatus::Interrupted && strict)
            throw ValidationError(id + " can only be stopped while Running");
    }
    if (auto* cv = find_key(out, {"completed_subtask_list", "updated completed_subtask_list"})) {
        std::vector<std::string> done;
        for (const auto& s : string_list(*cv, "completed_subtask_list"))
            if (!contains_ci(obs.completed, s) && !contains_ci(done, s)) done.push_back(s);
        if (!done.empty()) actions.push_back(Action::mark_complete(done));
    }
    if (auto* r = find_key(out, {"reply"}); r && r->is_string() && !trim(r->get<std::string>()).empty())
        actions.push_back(Action::say(trim(r->get<std::string>())));
    if (actions.empty()) actions.push_back(Action::no_op());
    return actions;
}

} // namespace handlers

/// Validates an action node's output and maps it to actions.
inline std::vector<Action> actions_for(const NodeConfig& node, const json& out, const Observation& obs,
                                       const PlannerAssets& assets)
{
    if (!out.is_object()) throw ValidationError("output is not an object");
    if (node.handler == "set_recipe") return handlers::set_recipe(out, assets, true);
    if (node.handler == "reply") return handlers::reply(out);
    if (node.handler == "modify_queues") return handlers::modify_queues(out, obs, assets, true);
    if (node.handler == "interrupt") return handlers::interrupt(out, obs, true);
    if (node.handler == "no_op") return {Action::no_op()};
    throw ValidationError("unknown handler '" + node.handler + "'");
}

inline std::string decision_for(const NodeConfig& node, const json& out)
{
    if (!out.is_object()) throw ValidationError("output is not an object");
    if (!out.contains("reasoning") || !out["reasoning"].is_string()) throw ValidationError("missing 'reasoning'");
    if (!out.contains("decision") || !out["decision"].is_string()) throw ValidationError("missing 'decision'");
    auto d = trim(out["decision"].get<std::string>());
    if (std::find(node.children.begin(), node.children.end(), d) == node.children.end())
        throw ValidationError("decision '" + d + "' is not a child of " + node.name);
    return d;
}

/// Queries one node, rerunning on malformed or invalid output up to the
/// configured retry limit.
inline NodeOutcome run_node(const NodeConfig& node, const Observation& obs, const PlannerAssets& assets,
                            llm::Backend& backend, llm::RecordingLog* log, std::vector<LlmExchange>& exchanges)
{
    const auto& spec = assets.prompts.at(node.name);
    auto req = make_request(assets, node.name, spec, obs);
    auto hash = llm::request_hash(req);
    for (int attempt = 0; attempt <= assets.tree.max_retries; ++attempt) {
        std::string text;
        try {
            text = llm::complete(req, backend, log);
        } catch (const llm::LlmError& e) {
            if (e.kind() == llm::ErrorKind::TransportError) throw BackendUnavailable(e.what());
            throw;
        }
        LlmExchange ex{node.name, attempt, hash, text, false, {}};
        try {
            NodeOutcome outcome;
            outcome.output = trim_keys(llm::extract_json(text));
            if (node.decision)
                outcome.decision = decision_for(node, outcome.output);
            else
                outcome.actions = actions_for(node, outcome.output, obs, assets);
            outcome.retries = attempt;
            ex.accepted = true;
            exchanges.push_back(std::move(ex));
            return outcome;
        } catch (const llm::LlmError& e) {
            ex.error = e.what();
        } catch (const ValidationError& e) {
            ex.error = e.what();
        } catch (const json::exception& e) {
            ex.error = e.what();
        }
        exchanges.push_back(std::move(ex));
    }
    throw NodeExhausted(node.name);
}

struct TickResult {
    std::vector<std::string> node_path;
    std::vector<Action> actions;
    std::vector<LlmExchange> llm_io;
    std::vector<std::string> errors;
};

/// One root-to-leaf walk of the behavior tree.
inline TickResult tick_tree(const Observation& obs, const PlannerAssets& assets, llm::Backend& backend,
                            llm::RecordingLog* log = nullptr)
{
    TickResult r;
    const auto& tree = assets.tree;
    std::string current = tree.root;
    for (std::size_t depth = 0; depth <= tree.nodes.size(); ++depth) {
        r.node_path.push_back(current);
        const auto& node = tree.nodes.at(current);
        if (node.decision) {
            try {
                current = run_node(node, obs, assets, backend, log, r.llm_io).decision;
            } catch (const NodeExhausted& e) {
                r.errors.push_back(e.what());
                current = tree.fallback;
            }
            continue;
        }
        if (node.handler == "no_op") {
            r.actions = {Action::no_op()};
            return r;
        }
        try {
            r.actions = run_node(node, obs, assets, backend, log, r.llm_io).actions;
        } catch (const NodeExhausted& e) {
            r.errors.push_back(e.what());
            r.actions = {Action::no_op()};
        }
        return r;
    }
    throw std::logic_error("behavior tree walk did not reach an action node");
}

/// Single-prompt baseline: one call, lenient mapping, no rerun.
inline TickResult plan_one_prompt(const Observation& obs, const PlannerAssets& assets, llm::Backend& backend,
                                  llm::RecordingLog* log = nullptr)
{
    TickResult r;
    r.node_path = {"All_Actions"};
    auto req = make_request(assets, "All_Actions", assets.one_prompt, obs);
    std::string text;
    try {
        text = llm::complete(req, backend, log);
    } catch (const llm::LlmError& e) {
        if (e.kind() == llm::ErrorKind::TransportError) throw BackendUnavailable(e.what());
        throw;
    }
    LlmExchange ex{"All_Actions", 0, llm::request_hash(req), text, false, {}};
    try {
        auto out = trim_keys(llm::extract_json(text));
        if (!out.is_object()) throw ValidationError("output is not an object");
        if (handlers::find_key(out, {"recipe_name", "recipe name"}))
            r.actions = handlers::set_recipe(out, assets, false);
        else if (handlers::find_key(out, {"R2_subtask_queue", "R1_subtask_queue", "user_subtask_queue",
                                          "updated R2_subtask_queue", "updated R1_subtask_queue",
                                          "updated user_subtask_queue"}))
            r.actions = handlers::modify_queues(out, obs, assets, false);
        else if (handlers::find_key(out, {"R2_status", "R1_status"}))
            r.actions = handlers::interrupt(out, obs, false);
        else if (auto* rep = handlers::find_key(out, {"reply"}); rep && rep->is_string() && !trim(rep->get<std::string>()).empty())
            r.actions = {Action::say(trim(rep->get<std::string>()))};
        else
            r.actions = {Action::no_op()};
        ex.accepted = true;
    } catch (const std::exception& e) {
        ex.error = std::string("UnparseableResponse: ") + e.what();
        r.errors.push_back(ex.error);
        r.actions = {Action::no_op()};
    }
    r.llm_io.push_back(std::move(ex));
    return r;
}

/// Reason an action cannot be applied to the current state, or empty.
inline std::string check_action(const SessionState& s, const Action& a, const PlannerAssets& assets)
{
    switch (a.kind) {
    case Action::Kind::Say:
        return trim(a.text).empty() ? "empty say message" : "";
    case Action::Kind::SetRecipe:
        return assets.recipes.find(a.text) ? "" : "UnknownRecipe: " + a.text;
    case Action::Kind::Assign:
        if (!is_agent(a.agent)) return "UnknownAgent: " + a.agent;
        if (a.subtasks.empty()) return "assign with no subtasks";
        for (const auto& t : a.subtasks)
            if (validate_assignment(assets.capabilities, a.agent, t) != Verdict::Ok)
                return "CapabilityViolation: " + a.agent + " cannot '" + t + "'";
        return "";
    case Action::Kind::MarkComplete:
        for (const auto& t : a.subtasks) {
            bool in_dag = s.dag && !s.dag->ids_for_label(t).empty();
            if (!in_dag && s.pending_count(t) == 0 && !detail::contains_ci(s.completed, t))
                return "UnknownSubtaskLabel: " + t;
        }
        return "";
    case Action::Kind::Interrupt:
        return is_robot(a.agent) ? "" : "UnknownAgent: " + a.agent;
    case Action::Kind::NoOp:
        return "";
    }
    return "";
}

} // namespace taskplanner::planner
