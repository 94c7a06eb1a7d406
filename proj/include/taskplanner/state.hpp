#pragma once

// Session state for one cooking session. State changes only through
// `apply_event`, so a snapshot is always the fold of its event log.

#include "taskplanner/common.hpp"
#include "taskplanner/recipe_graph.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace taskplanner::planner {

using json = nlohmann::json;

enum class AgentStatus { Idle, Running, Interrupted };

inline std::string to_string(AgentStatus s)
{
    switch (s) {
    case AgentStatus::Idle: return "Idle";
    case AgentStatus::Running: return "Running";
    case AgentStatus::Interrupted: return "Interrupted";
    }
    return "Idle";
}

/// Prompt documents call the interrupted state "Killed".
inline std::string prompt_string(AgentStatus s) { return s == AgentStatus::Interrupted ? "Killed" : to_string(s); }

inline std::optional<AgentStatus> parse_status(std::string_view text)
{
    auto t = to_lower(trim(text));
    if (t == "idle") return AgentStatus::Idle;
    if (t == "running") return AgentStatus::Running;
    if (t == "interrupted" || t == "killed") return AgentStatus::Interrupted;
    return std::nullopt;
}

inline const std::vector<std::string>& robot_ids()
{
    static const std::vector<std::string> ids{"R2", "R1"};
    return ids;
}

inline bool is_robot(std::string_view a) { return a == "R1" || a == "R2"; }
inline bool is_agent(std::string_view a) { return is_robot(a) || a == "User"; }

struct ChatEntry {
    std::string speaker; // "User" or the assistant's name
    std::string text;
    bool operator==(const ChatEntry&) const = default;
};

struct AgentView {
    std::vector<std::string> queue;
    std::string current;
    AgentStatus status = AgentStatus::Idle;
    bool operator==(const AgentView&) const = default;
};

/// Everything the planner sees. Equality is structural over all fields.
struct Observation {
    std::string recipe_name;
    std::vector<std::string> available_subtasks;
    AgentView r2;
    AgentView r1;
    std::vector<std::string> user_queue;
    std::vector<std::string> completed;
    std::vector<ChatEntry> chat_history;
    std::string user_input;

    bool operator==(const Observation&) const = default;

    const AgentView& robot(std::string_view id) const { return id == "R1" ? r1 : r2; }

    /// Canonical text form with a fixed field order. This is the text sent to
    /// the model and the input of the replay hash.
    std::string render() const
    {
        auto q = [](const std::string& s) { return json(s).dump(); };
        auto list = [](const std::vector<std::string>& v) { return json(v).dump(); };
        std::string out;
        out += "recipe_name: " + q(recipe_name) + "\n";
        out += "available_subtasks: " + list(available_subtasks) + "\n";
        for (const auto& id : robot_ids()) {
            const auto& a = robot(id);
            out += id + "_subtask_queue: " + list(a.queue) + "\n";
            out += id + "_current_subtask: " + q(a.current) + "\n";
            out += id + "_status: " + q(prompt_string(a.status)) + "\n";
        }
        out += "user_subtask_queue: " + list(user_queue) + "\n";
        out += "completed_subtask_list: " + list(completed) + "\n";
        out += "chat_history:[\n";
        for (const auto& c : chat_history) out += "- " + c.speaker + ": " + c.text + "\n";
        out += "]\n";
        out += "user_input: " + q(user_input) + "\n";
        return out;
    }

    json to_json() const
    {
        auto agent = [](const AgentView& a) {
            return json{{"subtask_queue", a.queue}, {"current_subtask", a.current}, {"status", to_string(a.status)}};
        };
        json chat = json::array();
        for (const auto& c : chat_history) chat.push_back({{"speaker", c.speaker}, {"text", c.text}});
        return json{{"recipe_name", recipe_name},
                    {"available_subtasks", available_subtasks},
                    {"R2", agent(r2)},
                    {"R1", agent(r1)},
                    {"user_subtask_queue", user_queue},
                    {"completed_subtask_list", completed},
                    {"chat_history", chat},
                    {"user_input", user_input}};
    }

    static Observation from_json(const json& j)
    {
        Observation o;
        auto agent = [](const json& a) {
            AgentView v;
            v.queue = a.at("subtask_queue").get<std::vector<std::string>>();
            v.current = a.at("current_subtask").get<std::string>();
            v.status = parse_status(a.at("status").get<std::string>()).value_or(AgentStatus::Idle);
            return v;
        };
        o.recipe_name = j.at("recipe_name").get<std::string>();
        o.available_subtasks = j.at("available_subtasks").get<std::vector<std::string>>();
        o.r2 = agent(j.at("R2"));
        o.r1 = agent(j.at("R1"));
        o.user_queue = j.at("user_subtask_queue").get<std::vector<std::string>>();
        o.completed = j.at("completed_subtask_list").get<std::vector<std::string>>();
        for (const auto& c : j.at("chat_history"))
            o.chat_history.push_back({c.at("speaker").get<std::string>(), c.at("text").get<std::string>()});
        o.user_input = j.at("user_input").get<std::string>();
        return o;
    }

    std::string hash() const { return hex64(fnv1a(render())); }
};

// ------------------------------------------------------------------ actions

/// The planner's action vocabulary, shared by every planner kind.
struct Action {
    enum class Kind { Say, SetRecipe, Assign, MarkComplete, Interrupt, NoOp };
    Kind kind = Kind::NoOp;
    std::string text;  // say message or recipe name
    std::string agent; // assign / interrupt
    std::vector<std::string> subtasks;

    static Action say(std::string msg) { return {Kind::Say, std::move(msg), {}, {}}; }
    static Action set_recipe(std::string name) { return {Kind::SetRecipe, std::move(name), {}, {}}; }
    static Action assign(std::string agent, std::vector<std::string> s) { return {Kind::Assign, {}, std::move(agent), std::move(s)}; }
    static Action mark_complete(std::vector<std::string> s) { return {Kind::MarkComplete, {}, {}, std::move(s)}; }
    static Action interrupt(std::string agent) { return {Kind::Interrupt, {}, std::move(agent), {}}; }
    static Action no_op() { return {}; }

    bool operator==(const Action&) const = default;

    static const char* kind_name(Kind k)
    {
        switch (k) {
        case Kind::Say: return "say";
        case Kind::SetRecipe: return "set_recipe";
        case Kind::Assign: return "assign";
        case Kind::MarkComplete: return "mark_complete";
        case Kind::Interrupt: return "interrupt";
        case Kind::NoOp: return "no_op";
        }
        return "no_op";
    }

    json to_json() const
    {
        json j{{"type", kind_name(kind)}};
        switch (kind) {
        case Kind::Say: j["msg"] = text; break;
        case Kind::SetRecipe: j["name"] = text; break;
        case Kind::Assign: j["agent"] = agent; j["subtasks"] = subtasks; break;
        case Kind::MarkComplete: j["subtasks"] = subtasks; break;
        case Kind::Interrupt: j["agent"] = agent; break;
        case Kind::NoOp: break;
        }
        return j;
    }

    static Action from_json(const json& j)
    {
        auto t = j.at("type").get<std::string>();
        if (t == "say") return say(j.at("msg").get<std::string>());
        if (t == "set_recipe") return set_recipe(j.at("name").get<std::string>());
        if (t == "assign") return assign(j.at("agent").get<std::string>(), j.at("subtasks").get<std::vector<std::string>>());
        if (t == "mark_complete") return mark_complete(j.at("subtasks").get<std::vector<std::string>>());
        if (t == "interrupt") return interrupt(j.at("agent").get<std::string>());
        if (t == "no_op") return no_op();
        throw std::invalid_argument("unknown action type '" + t + "'");
    }
};

// -------------------------------------------------------------------- state

struct Event {
    std::uint64_t seq = 0;
    std::string kind;
    json payload = json::object();

    json to_json() const { return json{{"seq", seq}, {"kind", kind}, {"payload", payload}}; }
    static Event from_json(const json& j)
    {
        return {j.at("seq").get<std::uint64_t>(), j.at("kind").get<std::string>(), j.value("payload", json::object())};
    }
};

struct RobotState {
    AgentView view;
    std::string location;
    bool operator==(const RobotState&) const = default;
};

struct SessionState {
    std::string session_id;
    std::string planner_kind = "tree";
    std::optional<recipe::RecipeDag> dag;
    std::vector<ChatEntry> chat;
    std::string user_input;
    std::map<std::string, RobotState> robots{{"R1", {}}, {"R2", {}}};
    std::vector<std::string> user_queue;
    std::vector<std::string> completed;
    std::int64_t tick_counter = 0;
    std::uint64_t last_seq = 0;
    std::vector<std::string> warnings; // out-of-order completions, recipe switches

    bool operator==(const SessionState&) const = default;

    std::string recipe_name() const { return dag ? dag->name() : std::string(); }

    AgentView& agent(const std::string& id) { return robots.at(id).view; }
    const AgentView& agent(const std::string& id) const { return robots.at(id).view; }

    std::vector<std::string>* queue_of(const std::string& id)
    {
        if (id == "User") return &user_queue;
        auto it = robots.find(id);
        return it == robots.end() ? nullptr : &it->second.view.queue;
    }

    /// True iff `label` sits in some queue or is a robot's current subtask.
    std::size_t pending_count(const std::string& label) const
    {
        std::size_t n = 0;
        auto count = [&](const std::vector<std::string>& v) {
            for (const auto& s : v)
                if (to_lower(s) == to_lower(label)) ++n;
        };
        count(user_queue);
        for (const auto& [id, r] : robots) {
            count(r.view.queue);
            if (to_lower(r.view.current) == to_lower(label)) ++n;
        }
        return n;
    }

    json to_json() const
    {
        json robots_j = json::object();
        for (const auto& [id, r] : robots)
            robots_j[id] = {{"subtask_queue", r.view.queue},
                            {"current_subtask", r.view.current},
                            {"status", to_string(r.view.status)},
                            {"location", r.location}};
        json chat_j = json::array();
        for (const auto& c : chat) chat_j.push_back({{"speaker", c.speaker}, {"text", c.text}});
        json dag_j = nullptr;
        if (dag) {
            json nodes = json::array();
            for (const auto& n : dag->nodes()) nodes.push_back({{"id", n.id}, {"label", n.label}, {"done", n.done}});
            json edges = json::array();
            for (const auto& [a, b] : dag->edges()) edges.push_back({a, b});
            dag_j = {{"name", dag->name()}, {"nodes", nodes}, {"edges", edges}};
        }
        return json{{"session_id", session_id},
                    {"planner_kind", planner_kind},
                    {"recipe_name", recipe_name()},
                    {"dag", dag_j},
                    {"chat_history", chat_j},
                    {"user_input", user_input},
                    {"agents", robots_j},
                    {"user_subtask_queue", user_queue},
                    {"completed_subtask_list", completed},
                    {"tick_counter", tick_counter},
                    {"last_seq", last_seq},
                    {"warnings", warnings}};
    }
};

namespace detail {

inline bool erase_first(std::vector<std::string>& v, const std::string& label)
{
    for (auto it = v.begin(); it != v.end(); ++it) {
        if (to_lower(*it) == to_lower(label)) {
            v.erase(it);
            return true;
        }
    }
    return false;
}

inline bool contains_ci(const std::vector<std::string>& v, const std::string& label)
{
    return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return to_lower(s) == to_lower(label); });
}

// Undone node with this label, preferring one whose parents are done.
inline std::optional<std::string> resolve_label(const recipe::RecipeDag& dag, const std::string& label)
{
    auto ids = dag.ids_for_label(label);
    std::optional<std::string> fallback;
    for (const auto& id : ids) {
        if (dag.is_done(id)) continue;
        auto parents = dag.parents(id);
        bool ready = std::all_of(parents.begin(), parents.end(), [&](const std::string& p) { return dag.is_done(p); });
        if (ready) return id;
        if (!fallback) fallback = id;
    }
    return fallback;
}

inline void complete_label(SessionState& s, const std::string& label)
{
    if (!contains_ci(s.completed, label)) s.completed.push_back(label);
    if (!s.dag) return;
    if (auto id = resolve_label(*s.dag, label)) {
        auto r = recipe::mark_done(*s.dag, *id);
        if (r.out_of_order) s.warnings.push_back("out-of-order completion: " + label);
        *s.dag = std::move(r.dag);
    }
}

} // namespace detail

/// Pure left-fold step.
inline SessionState apply_event(SessionState s, const Event& e)
{
    const auto& p = e.payload;
    s.last_seq = e.seq;
    if (e.kind == "session_created") {
        s.session_id = p.value("session_id", s.session_id);
        s.planner_kind = p.value("planner_kind", s.planner_kind);
        if (p.contains("locations"))
            for (const auto& [id, loc] : p["locations"].items())
                if (s.robots.count(id)) s.robots[id].location = loc.get<std::string>();
    } else if (e.kind == "user_message") {
        auto text = p.at("text").get<std::string>();
        s.chat.push_back({"User", text});
        s.user_input = text;
    } else if (e.kind == "tick") {
        s.tick_counter = p.at("tick_id").get<std::int64_t>();
        s.user_input.clear();
    } else if (e.kind == "say") {
        s.chat.push_back({p.value("speaker", "Assistant"), p.at("msg").get<std::string>()});
    } else if (e.kind == "recipe_set") {
        auto dag = recipe::parse_recipe_file(p.at("source").get<std::string>());
        dag.set_name(p.at("name").get<std::string>());
        bool pending = !s.user_queue.empty();
        for (auto& [id, r] : s.robots) pending = pending || !r.view.queue.empty();
        if (s.dag) s.warnings.push_back("recipe switch: " + s.dag->name() + " -> " + dag.name() + (pending ? " (queues cleared)" : ""));
        s.dag = std::move(dag);
        s.user_queue.clear();
        for (auto& [id, r] : s.robots) r.view.queue.clear();
        s.completed.clear();
    } else if (e.kind == "assigned") {
        auto agent = p.at("agent").get<std::string>();
        auto* q = s.queue_of(agent);
        if (q) {
            for (const auto& t : p.at("subtasks")) {
                auto label = t.get<std::string>();
                // assigning moves a queued subtask, it never duplicates it
                if (agent != "User") detail::erase_first(s.user_queue, label);
                for (auto& [id, r] : s.robots)
                    if (id != agent) detail::erase_first(r.view.queue, label);
                if (!detail::contains_ci(*q, label)) q->push_back(label);
            }
        }
    } else if (e.kind == "marked_complete") {
        for (const auto& t : p.at("subtasks")) {
            auto label = t.get<std::string>();
            detail::erase_first(s.user_queue, label);
            for (auto& [id, r] : s.robots) detail::erase_first(r.view.queue, label);
            detail::complete_label(s, label);
        }
    } else if (e.kind == "dequeued") {
        auto* q = s.queue_of(p.at("agent").get<std::string>());
        if (q) detail::erase_first(*q, p.at("subtask").get<std::string>());
    } else if (e.kind == "interrupted" || e.kind == "subtask_interrupted") {
        auto& a = s.agent(p.at("agent").get<std::string>());
        if (a.status == AgentStatus::Running || e.kind == "interrupted") {
            a.current.clear();
            a.status = AgentStatus::Interrupted;
        }
    } else if (e.kind == "subtask_started") {
        auto& a = s.agent(p.at("agent").get<std::string>());
        auto label = p.at("subtask").get<std::string>();
        detail::erase_first(a.queue, label);
        a.current = label;
        a.status = AgentStatus::Running;
    } else if (e.kind == "subtask_completed") {
        auto& a = s.agent(p.at("agent").get<std::string>());
        a.current.clear();
        a.status = AgentStatus::Idle;
        detail::complete_label(s, p.at("subtask").get<std::string>());
    } else if (e.kind == "subtask_failed") {
        auto& a = s.agent(p.at("agent").get<std::string>());
        a.current.clear();
        a.status = AgentStatus::Idle;
    } else if (e.kind == "skill_result") {
        if (p.value("status", "") == "Done" && p.value("skill", "") == "go_to")
            s.robots[p.at("agent").get<std::string>()].location = p.at("args")[0].get<std::string>();
    }
    // Other kinds (skill messages, failures, rejections, world effects) carry
    // no planner-visible state.
    return s;
}

inline SessionState fold(const std::vector<Event>& events, SessionState initial = {})
{
    for (const auto& e : events) initial = apply_event(std::move(initial), e);
    return initial;
}

/// Frontier labels, minus those already queued or running.
inline std::vector<std::string> available_labels(const SessionState& s)
{
    std::vector<std::string> out;
    if (!s.dag) return out;
    std::map<std::string, std::size_t> skipped;
    for (const auto& id : recipe::available_subtasks(*s.dag)) {
        const auto& label = s.dag->node(id).label;
        auto key = to_lower(label);
        if (skipped[key] < s.pending_count(label)) {
            ++skipped[key];
            continue;
        }
        out.push_back(label);
    }
    return out;
}

inline Observation observe(const SessionState& s)
{
    Observation o;
    o.recipe_name = s.recipe_name();
    o.available_subtasks = available_labels(s);
    o.r2 = s.agent("R2");
    o.r1 = s.agent("R1");
    o.user_queue = s.user_queue;
    o.completed = s.completed;
    o.chat_history = s.chat;
    o.user_input = s.user_input;
    return o;
}

} // namespace taskplanner::planner
