#pragma once

// Simulated robots. Each agent runs one subtask at a time: the subtask is
// turned into a skill program, and skills are sent one at a time as
// Request -> Feedback* -> Result messages on a discrete simulated clock.

#include "taskplanner/common.hpp"
#include "taskplanner/skill_codegen.hpp"
#include "taskplanner/state.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace taskplanner::runtime {

using json = nlohmann::json;
using planner::AgentStatus;
using skills::SkillCall;

inline constexpr const char* kVisuomotor = "VisuomotorSkill";
inline constexpr const char* kTaskPlanner = "InteractiveTaskPlanner";
inline constexpr const char* kMotionForecasting = "HumanMotionForecasting";

/// Module that owns each failure category A-F.
inline const char* fault_module(char category)
{
    switch (category) {
    case 'A':
    case 'B':
    case 'C': return kVisuomotor;
    case 'D':
    case 'E': return kTaskPlanner;
    case 'F': return kMotionForecasting;
    }
    return kVisuomotor;
}

// -------------------------------------------------------------------- world

class World {
public:
    /// {"locations": {name: parent|null}, "agents": {id: {location, mobile}},
    ///  "objects": {name: location}, "stir_tools": [...],
    ///  "skill_durations": {skill: ticks}, "feedback_interval": n}
    static World from_json(const json& j)
    {
        World w;
        for (const auto& [name, parent] : j.at("locations").items())
            w.locations_[name] = parent.is_null() ? std::optional<std::string>() : parent.get<std::string>();
        for (const auto& [id, a] : j.at("agents").items()) {
            w.agent_location_[id] = a.at("location").get<std::string>();
            w.mobile_[id] = a.value("mobile", false);
        }
        for (const auto& [name, where] : j.at("objects").items()) w.objects_[name] = where.get<std::string>();
        for (const auto& t : j.value("stir_tools", json::array())) w.stir_tools_.insert(t.get<std::string>());
        auto durations = j.value("skill_durations", json::object());
        for (const auto& [s, d] : durations.items()) w.durations_[s] = d.get<int>();
        auto targets = j.value("gripper_targets", json::object());
        for (const auto& [id, loc] : targets.items())
            w.gripper_target_[id] = loc.get<std::string>();
        w.feedback_interval_ = j.value("feedback_interval", 2);
        w.check();
        return w;
    }

    json to_json() const
    {
        json locs = json::object();
        for (const auto& [n, p] : locations_) locs[n] = p ? json(*p) : json(nullptr);
        json agents = json::object();
        for (const auto& [id, loc] : agent_location_) agents[id] = {{"location", loc}, {"mobile", mobile_.at(id)}};
        return json{{"locations", locs},
                    {"agents", agents},
                    {"objects", objects_},
                    {"stir_tools", stir_tools_},
                    {"skill_durations", durations_},
                    {"gripper_targets", gripper_target_},
                    {"feedback_interval", feedback_interval_}};
    }

    bool operator==(const World&) const = default;

    bool is_location(const std::string& l) const { return locations_.count(l) > 0; }
    bool has_object(const std::string& o) const { return objects_.count(o) > 0; }
    bool has_agent(const std::string& a) const { return agent_location_.count(a) > 0; }
    const std::string& agent_location(const std::string& a) const { return agent_location_.at(a); }
    bool mobile(const std::string& a) const { return mobile_.at(a); }
    const std::map<std::string, std::string>& objects() const { return objects_; }
    int feedback_interval() const { return feedback_interval_; }

    int duration(const std::string& skill) const
    {
        auto it = durations_.find(skill);
        return it == durations_.end() ? 5 : std::max(1, it->second);
    }

    static std::string gripper_of(const std::string& agent) { return "gripper:" + agent; }

    std::optional<std::string> held(const std::string& agent) const
    {
        auto g = gripper_of(agent);
        for (const auto& [o, where] : objects_)
            if (where == g) return o;
        return std::nullopt;
    }

    const std::string& placement(const std::string& obj) const { return objects_.at(obj); }

    /// A location is reachable when the agent stands at it or at its parent.
    bool reachable(const std::string& agent, const std::string& loc) const
    {
        auto it = locations_.find(loc);
        if (it == locations_.end()) return false;
        const auto& here = agent_location_.at(agent);
        return loc == here || (it->second && *it->second == here);
    }

    std::set<std::string> constants() const
    {
        std::set<std::string> c;
        for (const auto& [l, _] : locations_) c.insert(l);
        for (const auto& [o, _] : objects_) c.insert(o);
        return c;
    }

    bool is_stir_tool(const std::string& o) const { return stir_tools_.count(o) > 0; }

    void move_object(const std::string& obj, const std::string& where) { objects_.at(obj) = where; }
    void move_agent(const std::string& agent, const std::string& loc) { agent_location_.at(agent) = loc; }
    void set_gripper_target(const std::string& agent, const std::string& loc) { gripper_target_[agent] = loc; }
    std::string gripper_target(const std::string& agent) const
    {
        auto it = gripper_target_.find(agent);
        return it == gripper_target_.end() ? agent_location_.at(agent) : it->second;
    }

    /// Conservation against a reference world: same objects, every object in
    /// exactly one valid place, at most one object per gripper.
    std::vector<std::string> conservation_errors(const World& reference) const
    {
        std::vector<std::string> errors;
        if (objects_.size() != reference.objects_.size()) errors.push_back("object count changed");
        std::map<std::string, int> per_gripper;
        for (const auto& [o, where] : objects_) {
            if (!reference.objects_.count(o)) errors.push_back("object appeared: " + o);
            if (where.rfind("gripper:", 0) == 0) {
                if (!agent_location_.count(where.substr(8))) errors.push_back(o + " held by unknown agent");
                if (++per_gripper[where] > 1) errors.push_back(where + " holds more than one object");
            } else if (!is_location(where)) {
                errors.push_back(o + " at unknown location " + where);
            }
        }
        for (const auto& [o, _] : reference.objects_)
            if (!objects_.count(o)) errors.push_back("object vanished: " + o);
        return errors;
    }

private:
    void check() const
    {
        for (const auto& [l, p] : locations_)
            if (p && !locations_.count(*p)) throw std::invalid_argument("location " + l + " has unknown parent " + *p);
        for (const auto& [id, loc] : agent_location_)
            if (!is_location(loc)) throw std::invalid_argument("agent " + id + " starts at unknown location " + loc);
        for (const auto& [o, where] : objects_) {
            bool held = where.rfind("gripper:", 0) == 0 && agent_location_.count(where.substr(8));
            if (!held && !is_location(where)) throw std::invalid_argument("object " + o + " starts at unknown location " + where);
        }
    }

    std::map<std::string, std::optional<std::string>> locations_;
    std::map<std::string, std::string> agent_location_;
    std::map<std::string, bool> mobile_;
    std::map<std::string, std::string> objects_;
    std::map<std::string, std::string> gripper_target_;
    std::set<std::string> stir_tools_;
    std::map<std::string, int> durations_;
    int feedback_interval_ = 2;
};

// ------------------------------------------------------------------- faults

struct FaultConfig {
    std::map<char, double> probability;
    struct Trigger {
        char category;
        std::uint64_t run;
        std::int64_t tick;
    };
    std::vector<Trigger> triggers;

    double p(char c) const
    {
        auto it = probability.find(c);
        return it == probability.end() ? 0.0 : it->second;
    }

    /// {"probabilities": {"A": 0.5, ...}, "triggers": [{"category": "C", "run": 0, "tick": 40}]}
    static FaultConfig from_json(const json& j)
    {
        FaultConfig f;
        auto probabilities = j.value("probabilities", json::object());
        for (const auto& [k, v] : probabilities.items()) {
            if (k.size() != 1 || k[0] < 'A' || k[0] > 'F') throw std::invalid_argument("unknown fault category '" + k + "'");
            double p = v.get<double>();
            if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("fault probability out of [0,1] for " + k);
            f.probability[k[0]] = p;
        }
        for (const auto& t : j.value("triggers", json::array())) {
            auto c = t.at("category").get<std::string>();
            if (c.size() != 1 || c[0] < 'A' || c[0] > 'F') throw std::invalid_argument("unknown fault category '" + c + "'");
            f.triggers.push_back({c[0], t.value("run", std::uint64_t{0}), t.at("tick").get<std::int64_t>()});
        }
        return f;
    }
};

/// Category a skill is exposed to, or 0.
inline char fault_category_for(const std::string& skill)
{
    if (skill == "pick_up_item") return 'A';
    if (skill == "place_item_at") return 'B';
    if (skill == "stir" || skill == "pour" || skill == "spread") return 'C';
    if (skill == "move_gripper_to" || skill == "get_obj_from_user") return 'F';
    return 0;
}

/// Decides injected faults. Randomness is drawn only for categories with a
/// non-zero probability, so adding an unused category never shifts a run.
class FaultInjector {
public:
    FaultInjector(FaultConfig cfg, std::uint64_t seed, std::uint64_t run) : cfg_(std::move(cfg)), rng_(seed), run_(run)
    {
        fired_.assign(cfg_.triggers.size(), false);
    }

    /// Returns the injected category, or 0.
    char draw(char category, std::int64_t tick)
    {
        if (!category) return 0;
        for (std::size_t i = 0; i < cfg_.triggers.size(); ++i) {
            const auto& t = cfg_.triggers[i];
            if (!fired_[i] && t.category == category && t.run == run_ && tick >= t.tick) {
                fired_[i] = true;
                return category;
            }
        }
        double p = cfg_.p(category);
        if (p > 0.0 && rng_.bernoulli(p)) return category;
        return 0;
    }

    const FaultConfig& config() const { return cfg_; }

private:
    FaultConfig cfg_;
    Rng rng_;
    std::uint64_t run_;
    std::vector<bool> fired_;
};

// ------------------------------------------------------------------ skills

struct SkillResult {
    std::string status = "Done"; // Done | Failed | Cancelled
    std::string reason;          // ObjectNotHere, GripperEmpty, ..., InjectedFault(A)
    std::string category;        // A-F for injected faults
    std::string module;
};

namespace detail {

inline std::optional<std::string> apply_effect(World& w, const std::string& agent, const SkillCall& call)
{
    const auto& s = call.skill;
    auto arg = [&](std::size_t i) -> const std::string& { return call.args.at(i); };
    auto object_reachable = [&](const std::string& o) {
        if (!w.has_object(o)) return false;
        const auto& where = w.placement(o);
        return where == World::gripper_of(agent) || w.reachable(agent, where);
    };
    if (s == "go_to") {
        if (!w.is_location(arg(0))) return "UnknownLocation";
        if (!w.mobile(agent)) return "NotMobile";
        w.move_agent(agent, arg(0));
        w.set_gripper_target(agent, arg(0));
        return std::nullopt;
    }
    if (s == "pick_up_item" || s == "get_obj_from_user") {
        if (w.held(agent)) return "GripperFull";
        if (!w.has_object(arg(0)) || !w.reachable(agent, w.placement(arg(0)))) return "ObjectNotHere";
        w.move_object(arg(0), World::gripper_of(agent));
        return std::nullopt;
    }
    if (s == "place_item_at") {
        auto held = w.held(agent);
        if (!held) return "GripperEmpty";
        if (!w.reachable(agent, arg(0))) return "NotReachable";
        w.move_object(*held, arg(0));
        return std::nullopt;
    }
    if (s == "move_gripper_to") {
        if (!w.reachable(agent, arg(0))) return "NotReachable";
        w.set_gripper_target(agent, arg(0));
        return std::nullopt;
    }
    if (s == "stir") {
        for (const auto& [o, where] : w.objects())
            if (w.is_stir_tool(o) && where.rfind("gripper:", 0) != 0 && w.reachable(agent, where) && where != w.agent_location(agent))
                return std::nullopt;
        return "NoTool";
    }
    if (s == "pour") {
        if (!object_reachable(arg(0))) return "ObjectNotHere";
        if (!w.reachable(agent, arg(1))) return "NotReachable";
        w.move_object(arg(0), arg(1));
        return std::nullopt;
    }
    if (s == "spread") {
        if (!w.has_object(arg(0)) || w.placement(arg(0)) != World::gripper_of(agent)) return "GripperEmpty";
        w.move_object(arg(0), w.gripper_target(agent));
        return std::nullopt;
    }
    return "UnknownSkill";
}

} // namespace detail

/// Runs one skill to completion against a copy of the world.
inline std::pair<SkillResult, World> execute_skill(World world, const std::string& agent, const SkillCall& call,
                                                   FaultInjector& faults, std::int64_t tick)
{
    SkillResult r;
    World before = world;
    if (auto err = detail::apply_effect(world, agent, call)) {
        r.status = "Failed";
        r.reason = *err;
        r.module = kVisuomotor;
        return {r, before};
    }
    if (char c = faults.draw(fault_category_for(call.skill), tick)) {
        r.status = "Failed";
        r.reason = std::string("InjectedFault(") + c + ")";
        r.category = std::string(1, c);
        r.module = fault_module(c);
        return {r, before};
    }
    return {r, world};
}

/// Call text in the quoted form used by completed_action_functions.
inline std::string quoted_call(const SkillCall& c)
{
    std::string out = c.skill + "(";
    for (std::size_t i = 0; i < c.args.size(); ++i) out += (i ? ", '" : "'") + c.args[i] + "'";
    return out + ")";
}

// ----------------------------------------------------------------- protocol

struct SkillMessage {
    enum class Kind { Request, Feedback, Result, Cancel };
    Kind kind = Kind::Request;
    std::uint64_t correlation_id = 0;
    std::string agent;
    std::string subtask;
    SkillCall call;
    double progress = 0.0;
    SkillResult result;
    std::int64_t tick = 0;

    static const char* kind_name(Kind k)
    {
        switch (k) {
        case Kind::Request: return "Request";
        case Kind::Feedback: return "Feedback";
        case Kind::Result: return "Result";
        case Kind::Cancel: return "Cancel";
        }
        return "?";
    }

    json to_json() const
    {
        json j{{"kind", kind_name(kind)},
               {"correlation_id", correlation_id},
               {"agent", agent},
               {"subtask", subtask},
               {"skill", call.skill},
               {"args", call.args},
               {"tick", tick}};
        if (kind == Kind::Feedback) j["progress"] = progress;
        if (kind == Kind::Result) {
            j["status"] = result.status;
            if (!result.reason.empty()) j["reason"] = result.reason;
            if (!result.category.empty()) j["category"] = result.category;
            if (!result.module.empty()) j["module"] = result.module;
        }
        return j;
    }
};

struct RuntimeEvent {
    std::string kind;
    json payload;
};

/// Generates the skill program for a subtask. May throw; any exception is
/// reported as a code-generation failure.
using CodeProvider = std::function<skills::SkillProgram(const std::string& agent, const std::string& subtask,
                                                        const std::vector<std::string>& completed_calls)>;

struct Executor {
    std::string id;
    std::deque<std::string> queue;
    std::string current;
    AgentStatus status = AgentStatus::Idle;
    std::vector<SkillCall> program;
    std::size_t next_call = 0;
    struct InFlight {
        std::uint64_t correlation_id;
        SkillCall call;
        int duration;
        int elapsed;
    };
    std::optional<InFlight> inflight;
    bool cancel_pending = false;
    // Calls already done for a failed subtask, offered to code generation
    // when the same subtask is the agent's next one.
    std::string resume_label;
    std::vector<std::string> resume_calls;
    std::string held_origin; // where the gripped object was picked from
};

class AgentRuntime {
public:
    AgentRuntime(World world, skills::SkillTable table, FaultConfig faults, std::uint64_t seed, CodeProvider provider,
                 std::uint64_t run = 0)
        : world_(std::move(world)), initial_world_(world_), table_(std::move(table)),
          faults_(std::move(faults), seed ^ 0xFA017ULL, run), provider_(std::move(provider))
    {
        for (const auto& id : planner::robot_ids()) {
            if (!world_.has_agent(id)) throw std::invalid_argument("world defines no agent " + id);
            executors_[id].id = id;
        }
    }

    const World& world() const { return world_; }
    const World& initial_world() const { return initial_world_; }
    std::int64_t now() const { return now_; }
    const Executor& executor(const std::string& id) const { return executors_.at(id); }
    const std::vector<SkillMessage>& messages() const { return messages_; }
    FaultInjector& faults() { return faults_; }
    std::uint64_t next_correlation() const { return next_correlation_; }

    /// Continues a persisted session: the clock and correlation counter pick
    /// up where they stopped so ids stay unique.
    void restore_clock(std::int64_t now, std::uint64_t next_correlation)
    {
        now_ = now;
        next_correlation_ = next_correlation;
    }

    void assign(const std::string& agent, const std::vector<std::string>& labels)
    {
        auto& ex = executors_.at(agent);
        for (const auto& l : labels)
            if (std::none_of(ex.queue.begin(), ex.queue.end(), [&](const std::string& q) { return to_lower(q) == to_lower(l); }))
                ex.queue.push_back(l);
    }

    bool remove_queued(const std::string& agent, const std::string& label)
    {
        auto& q = executors_.at(agent).queue;
        auto it = std::find_if(q.begin(), q.end(), [&](const std::string& s) { return to_lower(s) == to_lower(label); });
        if (it == q.end()) return false;
        q.erase(it);
        return true;
    }

    void clear_queue(const std::string& agent) { executors_.at(agent).queue.clear(); }

    void set_queue(const std::string& agent, const std::vector<std::string>& labels)
    {
        auto& q = executors_.at(agent).queue;
        q.assign(labels.begin(), labels.end());
    }

    /// Idempotent. When the agent is running, a Cancel message is sent for the
    /// in-flight skill and the result lands on the next step.
    std::vector<RuntimeEvent> cancel(const std::string& agent)
    {
        auto& ex = executors_.at(agent);
        if (ex.status != AgentStatus::Running || ex.cancel_pending || !ex.inflight) return {};
        ex.cancel_pending = true;
        SkillMessage m;
        m.kind = SkillMessage::Kind::Cancel;
        m.correlation_id = ex.inflight->correlation_id;
        m.agent = agent;
        m.subtask = ex.current;
        m.call = ex.inflight->call;
        m.tick = now_;
        return {emit(m)};
    }

    /// Moves an object to the table when the user reports getting or fetching it.
    std::vector<RuntimeEvent> apply_user_effect(const std::string& label)
    {
        auto l = to_lower(trim(label));
        std::size_t verb = l.rfind("get ", 0) == 0 ? 4 : l.rfind("fetch ", 0) == 0 ? 6 : 0;
        if (!verb) return {};
        auto obj = to_upper(trim(l.substr(verb)));
        std::replace(obj.begin(), obj.end(), ' ', '_');
        if (!world_.has_object(obj) || world_.placement(obj).rfind("gripper:", 0) == 0 || world_.placement(obj) == "TABLE")
            return {};
        world_.move_object(obj, "TABLE");
        return {{"world_effect", json{{"object", obj}, {"to", "TABLE"}, {"cause", "user completed " + label}}}};
    }

    bool quiescent() const
    {
        return std::all_of(executors_.begin(), executors_.end(), [](const auto& kv) {
            return kv.second.status != AgentStatus::Running && kv.second.queue.empty();
        });
    }

    /// Advances the simulated clock by one tick.
    std::vector<RuntimeEvent> step()
    {
        ++now_;
        std::vector<RuntimeEvent> out;
        for (const auto& id : planner::robot_ids()) step_agent(executors_.at(id), out);
        return out;
    }

private:
    RuntimeEvent emit(const SkillMessage& m)
    {
        messages_.push_back(m);
        return {std::string("skill_") + to_lower(SkillMessage::kind_name(m.kind)), m.to_json()};
    }

    void finish(Executor& ex, std::vector<RuntimeEvent>& out, const std::string& kind, json extra = json::object())
    {
        extra["agent"] = ex.id;
        extra["subtask"] = ex.current;
        out.push_back({kind, extra});
        ex.current.clear();
        ex.program.clear();
        ex.next_call = 0;
        ex.inflight.reset();
        ex.cancel_pending = false;
        ex.status = kind == "subtask_interrupted" ? AgentStatus::Interrupted : AgentStatus::Idle;
    }

    void send_next(Executor& ex, std::vector<RuntimeEvent>& out)
    {
        const auto& call = ex.program.at(ex.next_call);
        ex.inflight = Executor::InFlight{++next_correlation_, call, world_.duration(call.skill), 0};
        SkillMessage m;
        m.kind = SkillMessage::Kind::Request;
        m.correlation_id = ex.inflight->correlation_id;
        m.agent = ex.id;
        m.subtask = ex.current;
        m.call = call;
        m.tick = now_;
        out.push_back(emit(m));
    }

    void start_subtask(Executor& ex, std::vector<RuntimeEvent>& out)
    {
        auto label = ex.queue.front();
        ex.queue.pop_front();
        ex.current = label;
        ex.status = AgentStatus::Running;
        out.push_back({"subtask_started", json{{"agent", ex.id}, {"subtask", label}}});

        std::vector<std::string> done_before;
        if (to_lower(ex.resume_label) == to_lower(label)) {
            done_before = ex.resume_calls;
        } else if (auto held = world_.held(ex.id)) {
            // a different subtask starts: hand back what the failed one left in the gripper
            auto to = world_.is_location(ex.held_origin) ? ex.held_origin : world_.agent_location(ex.id);
            world_.move_object(*held, to);
            out.push_back({"world_effect", json{{"object", *held}, {"to", to}, {"cause", "released by " + ex.id}}});
        }
        ex.resume_label = label;
        ex.resume_calls.clear();
        try {
            auto program = provider_(ex.id, label, done_before);
            auto issues = skills::validate_program(program, ex.id, table_, world_.constants());
            if (!issues.empty())
                throw skills::SkillError(issues.front().kind, issues.front().detail);
            ex.program = std::move(program.calls);
            ex.next_call = 0;
            ex.resume_calls = done_before;
        } catch (const std::exception& e) {
            finish(ex, out, "subtask_failed",
                   json{{"category", "CodeGeneration"}, {"module", kTaskPlanner}, {"reason", e.what()}});
            return;
        }
        send_next(ex, out);
    }

    void step_agent(Executor& ex, std::vector<RuntimeEvent>& out)
    {
        if (ex.status == AgentStatus::Running && ex.inflight) {
            auto& f = *ex.inflight;
            SkillMessage m;
            m.correlation_id = f.correlation_id;
            m.agent = ex.id;
            m.subtask = ex.current;
            m.call = f.call;
            m.tick = now_;
            if (ex.cancel_pending) {
                m.kind = SkillMessage::Kind::Result;
                m.result.status = "Cancelled";
                out.push_back(emit(m));
                finish(ex, out, "subtask_interrupted");
                return;
            }
            ++f.elapsed;
            if (f.elapsed < f.duration) {
                if (f.elapsed % world_.feedback_interval() == 0) {
                    m.kind = SkillMessage::Kind::Feedback;
                    m.progress = static_cast<double>(f.elapsed) / f.duration;
                    out.push_back(emit(m));
                }
                return;
            }
            std::string origin;
            if ((f.call.skill == "pick_up_item" || f.call.skill == "get_obj_from_user") && !f.call.args.empty() &&
                world_.has_object(f.call.args[0]))
                origin = world_.placement(f.call.args[0]);
            auto [result, next_world] = execute_skill(world_, ex.id, f.call, faults_, now_);
            world_ = std::move(next_world);
            m.kind = SkillMessage::Kind::Result;
            m.result = result;
            out.push_back(emit(m));
            if (result.status != "Done") {
                json info{{"reason", result.reason}, {"module", result.module}, {"skill", f.call.text()}};
                info["category"] = result.category.empty() ? "Precondition" : result.category;
                finish(ex, out, "subtask_failed", info);
                return;
            }
            if (!origin.empty()) ex.held_origin = origin;
            ex.resume_calls.push_back(quoted_call(f.call));
            ++ex.next_call;
            if (ex.next_call >= ex.program.size()) {
                ex.resume_label.clear();
                ex.resume_calls.clear();
                finish(ex, out, "subtask_completed");
                return;
            }
            send_next(ex, out);
            return;
        }
        if (ex.status != AgentStatus::Running && !ex.queue.empty()) start_subtask(ex, out);
    }

    World world_;
    World initial_world_;
    skills::SkillTable table_;
    FaultInjector faults_;
    CodeProvider provider_;
    std::map<std::string, Executor> executors_;
    std::vector<SkillMessage> messages_;
    std::int64_t now_ = 0;
    std::uint64_t next_correlation_ = 0;
};

} // namespace taskplanner::runtime
