#pragma once

// One cooking session: planner, simulated robots and model backend joined
// through a single ordered event log. The log doubles as the transcript.

#include "taskplanner/agent_runtime.hpp"
#include "taskplanner/llm_gateway.hpp"
#include "taskplanner/planner.hpp"
#include "taskplanner/skill_codegen.hpp"
#include "taskplanner/state.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace taskplanner::engine {

using json = nlohmann::json;
using planner::Action;
using planner::Event;
using planner::Observation;
using planner::SessionState;

inline constexpr const char* kCodegenNode = "Code_Generation";

struct EngineConfig {
    std::string session_id = "session";
    std::string planner_kind = "tree"; // tree | one-prompt
    std::string backend_kind = "scripted";
    std::uint64_t seed = 0;
    std::uint64_t run = 0;
    int max_ticks_per_settle = 6;
    json meta = json::object(); // extra fields for the session_created record
};

/// Structured observation handed to the model for code generation.
inline llm::CompletionRequest codegen_request(const planner::PlannerAssets& assets, const std::string& agent,
                                              const std::string& subtask, const std::vector<std::string>& completed)
{
    llm::CompletionRequest req;
    req.node_name = kCodegenNode;
    req.system = "You write robot programs as flat sequences of skill calls.";
    req.instructions = skills::render_codegen_prompt(assets.codegen_template, subtask, completed);
    req.observation = json{{"agent", agent}, {"subtask", subtask}, {"completed", completed}};
    req.rendered_observation = req.observation.dump();
    return req;
}

class Engine {
public:
    Engine(const planner::PlannerAssets& assets, runtime::World world, runtime::FaultConfig faults, llm::Backend& backend,
           EngineConfig cfg)
        : assets_(assets), backend_(backend), cfg_(std::move(cfg))
    {
        if (cfg_.planner_kind != "tree" && cfg_.planner_kind != "one-prompt")
            throw std::invalid_argument("unknown planner kind '" + cfg_.planner_kind + "'");
        runtime_ = std::make_unique<runtime::AgentRuntime>(
            std::move(world), assets_.skill_table, std::move(faults), cfg_.seed,
            [this](const std::string& agent, const std::string& subtask, const std::vector<std::string>& completed) {
                return generate_code(agent, subtask, completed);
            },
            cfg_.run);
        json created = cfg_.meta;
        created["session_id"] = cfg_.session_id;
        created["planner_kind"] = cfg_.planner_kind;
        created["backend_kind"] = cfg_.backend_kind;
        created["seed"] = cfg_.seed;
        created["run"] = cfg_.run;
        json locations = json::object();
        for (const auto& id : planner::robot_ids()) locations[id] = runtime_->world().agent_location(id);
        created["locations"] = locations;
        emit("session_created", created);
        last_observation_ = planner::observe(state_);
    }

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    const SessionState& state() const { return state_; }
    const std::vector<Event>& events() const { return events_; }
    const runtime::AgentRuntime& agents() const { return *runtime_; }
    const EngineConfig& config() const { return cfg_; }
    llm::RecordingLog& recordings() { return recordings_; }
    std::int64_t now() const { return runtime_->now(); }

    /// Called for every event as it is appended.
    std::function<void(const Event&)> on_event;

    bool finished() const
    {
        if (!state_.dag || !recipe::is_finished(*state_.dag) || !runtime_->quiescent()) return false;
        return std::none_of(planner::robot_ids().begin(), planner::robot_ids().end(), [&](const std::string& id) {
            return state_.agent(id).status == planner::AgentStatus::Running;
        });
    }

    /// Appends a user message and runs planner ticks until the observation
    /// settles. Returns the events this call produced.
    std::vector<Event> post_user(const std::string& text, json meta = json::object())
    {
        if (trim(text).empty()) throw std::invalid_argument("empty chat message");
        auto mark = events_.size();
        recover_if_needed();
        json payload = meta.is_object() ? meta : json::object();
        payload["text"] = trim(text);
        emit("user_message", payload);
        settle();
        return since(mark);
    }

    /// Advances simulated time, feeding robot events back to the planner.
    std::vector<Event> advance(int steps = 1)
    {
        auto mark = events_.size();
        recover_if_needed();
        for (int i = 0; i < steps; ++i) {
            codegen_records_.clear();
            auto produced = runtime_->step();
            for (auto& ev : produced) {
                emit(ev.kind, ev.payload);
                if (ev.kind == "subtask_started") flush_codegen(ev.payload.at("agent").get<std::string>());
            }
            flush_codegen({});
            sync_runtime();
            settle();
        }
        return since(mark);
    }

    /// Ticks while the observation differs from the one last planned on.
    std::vector<Event> settle()
    {
        auto mark = events_.size();
        for (int i = 0; i < cfg_.max_ticks_per_settle; ++i) {
            auto obs = planner::observe(state_);
            if (obs == last_observation_) break;
            if (!tick(obs)) break;
        }
        return since(mark);
    }

    void end(json info)
    {
        info["tick_counter"] = state_.tick_counter;
        info["now"] = runtime_->now();
        info["finished"] = state_.dag ? recipe::is_finished(*state_.dag) : false;
        emit("scenario_end", info);
    }

    std::string transcript_jsonl() const
    {
        std::string out;
        for (const auto& e : events_) out += e.to_json().dump() + "\n";
        return out;
    }

    /// Runtime-side data that the event log does not capture.
    json runtime_snapshot() const
    {
        return json{{"world", runtime_->world().to_json()},
                    {"now", runtime_->now()},
                    {"next_correlation", runtime_->next_correlation()},
                    {"last_seq", state_.last_seq}};
    }

    /// Rebuilds a persisted session from its event log and runtime snapshot.
    /// Subtasks that were running when the session stopped are reported as
    /// interrupted on the next call that advances the session.
    void restore(const std::vector<Event>& events, const json& snapshot)
    {
        events_ = events;
        state_ = planner::fold(events_);
        runtime_ = std::make_unique<runtime::AgentRuntime>(
            runtime::World::from_json(snapshot.at("world")), assets_.skill_table, runtime_->faults().config(), cfg_.seed,
            [this](const std::string& agent, const std::string& subtask, const std::vector<std::string>& completed) {
                return generate_code(agent, subtask, completed);
            },
            cfg_.run);
        runtime_->restore_clock(snapshot.at("now").get<std::int64_t>(),
                                snapshot.at("next_correlation").get<std::uint64_t>());
        sync_runtime();
        last_observation_ = planner::observe(state_);
        for (auto it = events_.rbegin(); it != events_.rend(); ++it)
            if (it->kind == "tick") {
                last_observation_ = Observation::from_json(it->payload.at("observation"));
                break;
            }
        needs_recovery_ = std::any_of(planner::robot_ids().begin(), planner::robot_ids().end(), [&](const std::string& id) {
            return state_.agent(id).status == planner::AgentStatus::Running;
        });
    }

private:
    const Event& emit(const std::string& kind, json payload)
    {
        Event e{state_.last_seq + 1, kind, std::move(payload)};
        state_ = planner::apply_event(std::move(state_), e);
        events_.push_back(std::move(e));
        if (on_event) on_event(events_.back());
        return events_.back();
    }

    std::vector<Event> since(std::size_t mark) const { return {events_.begin() + static_cast<std::ptrdiff_t>(mark), events_.end()}; }

    void recover_if_needed()
    {
        if (!needs_recovery_) return;
        needs_recovery_ = false;
        for (const auto& id : planner::robot_ids()) {
            const auto& a = state_.agent(id);
            if (a.status == planner::AgentStatus::Running)
                emit("subtask_interrupted", json{{"agent", id}, {"subtask", a.current}, {"reason", "session restored"}});
        }
    }

    void sync_runtime()
    {
        for (const auto& id : planner::robot_ids()) runtime_->set_queue(id, state_.agent(id).queue);
    }

    skills::SkillProgram generate_code(const std::string& agent, const std::string& subtask,
                                       const std::vector<std::string>& completed)
    {
        auto req = codegen_request(assets_, agent, subtask, completed);
        json record{{"agent", agent}, {"subtask", subtask}, {"completed", completed}, {"request_hash", llm::request_hash(req)}};
        try {
            auto text = llm::complete(req, backend_, &recordings_);
            record["response"] = text;
            auto program = skills::parse_skill_program(text, assets_.skill_table);
            record["calls"] = json::array();
            for (const auto& c : program.calls) record["calls"].push_back(c.text());
            codegen_records_.push_back(record);
            return program;
        } catch (const std::exception& e) {
            record["error"] = e.what();
            codegen_records_.push_back(record);
            throw;
        }
    }

    void flush_codegen(const std::string& agent)
    {
        std::vector<json> keep;
        for (auto& r : codegen_records_) {
            if (agent.empty() || r.at("agent") == agent)
                emit("codegen", r);
            else
                keep.push_back(std::move(r));
        }
        codegen_records_ = std::move(keep);
    }

    bool tick(const Observation& obs)
    {
        planner::TickResult result;
        try {
            result = cfg_.planner_kind == "tree" ? planner::tick_tree(obs, assets_, backend_, &recordings_)
                                                 : planner::plan_one_prompt(obs, assets_, backend_, &recordings_);
        } catch (const planner::BackendUnavailable& e) {
            emit("planner_error", json{{"error", "BackendUnavailable"}, {"detail", e.what()}});
            return false;
        } catch (const llm::LlmError& e) {
            emit("planner_error", json{{"error", llm::to_string(e.kind())}, {"detail", e.what()}});
            return false;
        }
        last_observation_ = obs;
        json io = json::array();
        for (const auto& x : result.llm_io) io.push_back(x.to_json());
        json actions = json::array();
        for (const auto& a : result.actions) actions.push_back(a.to_json());
        emit("tick", json{{"tick_id", state_.tick_counter + 1},
                          {"planner", cfg_.planner_kind},
                          {"node_path", result.node_path},
                          {"raw_llm_io", io},
                          {"actions", actions},
                          {"errors", result.errors},
                          {"observation_hash", obs.hash()},
                          {"observation", obs.to_json()}});
        for (const auto& a : result.actions) apply_action(a);
        sync_runtime();
        return true;
    }

    void reject(const Action& a, const std::string& reason)
    {
        emit("action_rejected", json{{"action", a.to_json()}, {"reason", reason}});
    }

    void apply_action(Action a)
    {
        auto why = planner::check_action(state_, a, assets_);
        if (!why.empty()) {
            reject(a, why);
            return;
        }
        switch (a.kind) {
        case Action::Kind::Say:
            emit("say", json{{"msg", a.text}, {"speaker", assets_.tree.assistant_name}});
            break;
        case Action::Kind::SetRecipe: {
            const auto* dag = assets_.recipes.find(a.text);
            auto source = assets_.recipes.source(a.text);
            if (trim(source).empty()) source = recipe::render_recipe_file(*dag);
            emit("recipe_set", json{{"name", dag->name()}, {"source", source}});
            break;
        }
        case Action::Kind::Assign:
            if (planner::is_robot(a.agent) && runtime_->faults().draw('E', runtime_->now())) {
                // wrong-subtask fault: the robot receives a different subtask
                auto options = planner::available_labels(state_);
                std::string wrong;
                for (const auto& l : options)
                    if (!planner::detail::contains_ci(a.subtasks, l)) {
                        wrong = l;
                        break;
                    }
                emit("fault_injected", json{{"category", "E"},
                                            {"module", runtime::fault_module('E')},
                                            {"action", a.to_json()},
                                            {"substituted", wrong}});
                if (wrong.empty()) return;
                a.subtasks = {wrong};
            }
            emit("assigned", json{{"agent", a.agent}, {"subtasks", a.subtasks}});
            break;
        case Action::Kind::MarkComplete:
            emit("marked_complete", json{{"subtasks", a.subtasks}});
            for (const auto& label : a.subtasks)
                for (auto& ev : runtime_->apply_user_effect(label)) emit(ev.kind, ev.payload);
            break;
        case Action::Kind::Interrupt:
            if (state_.agent(a.agent).status != planner::AgentStatus::Running) {
                reject(a, "NotRunning: " + a.agent);
                return;
            }
            if (runtime_->faults().draw('D', runtime_->now())) {
                // the stop request is lost before it reaches the robot
                emit("fault_injected",
                     json{{"category", "D"}, {"module", runtime::fault_module('D')}, {"action", a.to_json()}});
                return;
            }
            emit("interrupted", json{{"agent", a.agent}});
            for (auto& ev : runtime_->cancel(a.agent)) emit(ev.kind, ev.payload);
            break;
        case Action::Kind::NoOp:
            break;
        }
    }

    const planner::PlannerAssets& assets_;
    llm::Backend& backend_;
    EngineConfig cfg_;
    std::unique_ptr<runtime::AgentRuntime> runtime_;
    SessionState state_;
    std::vector<Event> events_;
    Observation last_observation_;
    llm::RecordingLog recordings_;
    std::vector<json> codegen_records_;
    bool needs_recovery_ = false;
};

} // namespace taskplanner::engine
