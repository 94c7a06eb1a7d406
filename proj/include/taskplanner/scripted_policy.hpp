#pragma once

// Deterministic stand-ins for the model. The compliant policy follows the
// rules written in the node prompts; the sloppy wrapper corrupts a fraction
// of its answers into schema-invalid output.

#include "taskplanner/common.hpp"
#include "taskplanner/engine.hpp"
#include "taskplanner/llm_gateway.hpp"
#include "taskplanner/planner.hpp"
#include "taskplanner/state.hpp"
#include "taskplanner/text_match.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace taskplanner::policy {

using json = nlohmann::json;
using planner::Observation;

// ------------------------------------------------------------ conversation

inline std::string proposal_text(const std::string& agent, const std::string& label)
{
    if (agent == "User") return "None of the robots can " + label + ". Can you do it and let me know when you are done?";
    return "Shall " + agent + " go " + label + " for you?";
}

struct Proposal {
    std::string agent;
    std::string label;
};

/// Reads a proposal back out of a planner message.
inline std::optional<Proposal> parse_proposal(const std::string& msg)
{
    static const std::regex robot(R"(Shall (R1|R2) go (.+?) for you\?)");
    static const std::regex user(R"(None of the robots can (.+?)\. Can you do it)");
    std::smatch m;
    if (std::regex_search(msg, m, robot)) return Proposal{m[1].str(), trim(m[2].str())};
    if (std::regex_search(msg, m, user)) return Proposal{"User", trim(m[1].str())};
    return std::nullopt;
}

/// The planner message the current user input answers, if any.
inline std::optional<std::string> message_before_input(const Observation& o)
{
    if (o.user_input.empty()) return std::nullopt;
    std::size_t last_user = o.chat_history.size();
    for (std::size_t i = o.chat_history.size(); i-- > 0;)
        if (o.chat_history[i].speaker == "User") {
            last_user = i;
            break;
        }
    for (std::size_t i = last_user; i-- > 0;) {
        if (o.chat_history[i].speaker == "User") break;
        return o.chat_history[i].text;
    }
    return std::nullopt;
}

/// True when the planner's last message is a question still unanswered.
inline bool awaiting_user(const Observation& o)
{
    if (o.chat_history.empty()) return false;
    const auto& last = o.chat_history.back();
    return last.speaker != "User" && !trim(last.text).empty() && trim(last.text).back() == '?';
}

// --------------------------------------------------------------- code gen

inline std::string location_constant(const std::string& word)
{
    static const std::map<std::string, std::string> places{{"pot", "POT"},           {"soup", "POT"},   {"bowl", "BOWL"},
                                                           {"salad", "BOWL"},        {"pan", "PAN"},    {"sandwich", "SANDWICH"},
                                                           {"bread", "SANDWICH"},    {"toast", "SANDWICH"},
                                                           {"table", "TABLE"},       {"user", "USER"},  {"me", "USER"},
                                                           {"shelf", "SHELF"},       {"pantry", "PANTRY"}};
    auto it = places.find(word);
    return it == places.end() ? to_upper(word) : it->second;
}

inline std::string object_constant(const std::vector<std::string>& ws)
{
    std::vector<std::string> kept;
    for (const auto& w : ws)
        if (!text::is_stop_word(w)) kept.push_back(to_upper(w));
    return join(kept, "_");
}

/// Skill program for a subtask using the verb templates of the code prompt.
/// Calls already completed are emitted commented out.
inline std::string program_for(const std::string& subtask, const std::vector<std::string>& completed)
{
    auto ws = text::words(subtask);
    std::vector<std::string> content;
    for (const auto& w : ws)
        if (w != "the" && w != "a" && w != "an" && w != "some") content.push_back(w);
    std::vector<std::pair<std::string, std::vector<std::string>>> calls;
    auto split_at_prep = [&](std::size_t from, std::vector<std::string>& obj, std::vector<std::string>& loc) {
        bool after = false;
        for (std::size_t i = from; i < content.size(); ++i) {
            const auto& w = content[i];
            if (!after && (w == "into" || w == "in" || w == "at" || w == "on" || w == "onto" || w == "to")) {
                after = true;
                continue;
            }
            (after ? loc : obj).push_back(w);
        }
    };
    std::string verb = content.empty() ? "" : content[0];
    if ((verb == "get" || verb == "fetch") && content.size() > 1) {
        auto obj = object_constant({content.begin() + 1, content.end()});
        calls = {{"go_to", {"PANTRY"}}, {"pick_up_item", {obj}}, {"go_to", {"TABLE"}}, {"place_item_at", {"TABLE"}}};
    } else if (verb == "put" && content.size() > 2 && content[1] == "away") {
        auto obj = object_constant({content.begin() + 2, content.end()});
        calls = {{"get_obj_from_user", {obj}}, {"go_to", {"SHELF"}}, {"place_item_at", {"SHELF"}}};
    } else if (verb == "stir" || verb == "mix") {
        std::string loc = "POT";
        for (std::size_t i = 1; i < content.size(); ++i) {
            auto c = location_constant(content[i]);
            if (c == "POT" || c == "BOWL" || c == "PAN") loc = c;
        }
        calls = {{"pick_up_item", {"LADLE"}}, {"place_item_at", {loc}}, {"stir", {}}};
    } else if (verb == "pour" && content.size() > 1) {
        std::vector<std::string> obj, loc;
        split_at_prep(1, obj, loc);
        calls = {{"pour", {object_constant(obj), loc.empty() ? "POT" : location_constant(loc.back())}}};
    } else if ((verb == "stack" || verb == "spread") && content.size() > 1) {
        std::vector<std::string> obj, loc;
        split_at_prep(1, obj, loc);
        auto o = object_constant(obj);
        auto l = loc.empty() ? std::string("SANDWICH") : location_constant(loc.back());
        if (verb == "stack")
            calls = {{"pick_up_item", {o}}, {"move_gripper_to", {l}}, {"place_item_at", {l}}};
        else
            calls = {{"pick_up_item", {o}}, {"move_gripper_to", {l}}, {"spread", {o}}};
    } else if ((verb == "hand" && content.size() > 2 && content[1] == "over") || verb == "handover") {
        auto obj = object_constant({content.begin() + (verb == "hand" ? 2 : 1), content.end()});
        calls = {{"pick_up_item", {obj}}, {"move_gripper_to", {"USER"}}, {"place_item_at", {"USER"}}};
    }
    if (calls.empty()) return "# no robot skill sequence performs '" + subtask + "'\n";
    std::string out;
    std::size_t done = 0;
    for (const auto& [skill, args] : calls) {
        skills::SkillCall c{skill, args};
        std::string quoted = skill + "(";
        for (std::size_t i = 0; i < args.size(); ++i) quoted += (i ? ", '" : "'") + args[i] + "'";
        quoted += ")";
        if (done < completed.size() && completed[done] == quoted) {
            out += "# " + c.text() + "  # already completed this action\n";
            ++done;
        } else {
            out += c.text() + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------- planning

struct PolicyOptions {
    bool refuse_reassign = false; // decline requests to move a subtask to another agent
};

/// What the compliant planner intends to do for an observation.
struct Plan {
    std::string branch; // Recipe | Execution | Overall_Clarify
    std::string leaf;   // action node name
    std::string reasoning;
    json payload; // output in the action node's own format
};

class CompliantPolicy {
public:
    explicit CompliantPolicy(const planner::PlannerAssets& assets, PolicyOptions options = {})
        : assets_(assets), options_(options)
    {
    }

    std::string respond(const llm::CompletionRequest& req) const
    {
        if (req.node_name == engine::kCodegenNode) {
            const auto& o = req.observation;
            return program_for(o.at("subtask").get<std::string>(), o.value("completed", std::vector<std::string>{}));
        }
        auto plan = make_plan(Observation::from_json(req.observation));
        return answer(req.node_name, plan).dump(2);
    }

    Plan make_plan(const Observation& o) const
    {
        auto u = trim(o.user_input);
        if (u.empty()) return idle_plan(o);
        if (o.recipe_name.empty()) return recipe_plan(o, u);
        if (auto r = recipe_mentioned(u); r && to_lower(*r) != to_lower(o.recipe_name))
            return set_recipe(*r, "The user wants to switch to a recipe from the list.");
        return execution_plan(o, u);
    }

    /// Output for one node, consistent with the plan.
    json answer(const std::string& node, const Plan& plan) const
    {
        if (node == "All_Actions") return one_prompt(plan);
        const auto& tree = assets_.tree;
        auto it = tree.nodes.find(node);
        if (it != tree.nodes.end() && it->second.decision) {
            std::string decision;
            if (node == tree.root)
                decision = plan.branch;
            else if (plan.branch == node)
                decision = plan.leaf;
            else
                decision = node == "Recipe" ? "Clarify_Recipe" : "No_op";
            return json{{"reasoning", plan.reasoning}, {"decision", decision}};
        }
        if (node == plan.leaf) return plan.payload;
        // reached off the planned path, e.g. through the fallback node
        return json{{"reasoning", "The request is unclear at this point."},
                    {"reply", "Sorry, could you tell me again what you would like me to do?"}};
    }

private:
    static Plan reply_plan(std::string branch, std::string leaf, std::string reasoning, std::string reply)
    {
        json payload{{"reasoning", reasoning}, {"reply", reply}};
        return {std::move(branch), std::move(leaf), std::move(reasoning), std::move(payload)};
    }

    static Plan no_op(std::string reasoning)
    {
        return {"Execution", "No_op", reasoning, json{{"reasoning", reasoning}}};
    }

    Plan set_recipe(const std::string& name, std::string reasoning) const
    {
        json payload{{"reasoning", reasoning}, {"recipe name", name}, {"reply", "Let's make " + name + "!"}};
        return {"Recipe", "Set_Recipe", std::move(reasoning), std::move(payload)};
    }

    static json one_prompt(const Plan& plan)
    {
        json out = json::object();
        for (const auto& [k, v] : plan.payload.items()) {
            auto key = k;
            if (key.rfind("updated ", 0) == 0) key = key.substr(8);
            if (key == "recipe name") key = "recipe_name";
            out[key] = v;
        }
        if (plan.leaf == "No_op") out["reply"] = "";
        return out;
    }

    std::optional<std::string> recipe_mentioned(const std::string& u) const
    {
        auto lu = text::normalize(u);
        std::optional<std::string> best;
        for (const auto& name : assets_.recipes.names()) {
            auto n = text::normalize(name);
            if ((" " + lu + " ").find(" " + n + " ") != std::string::npos && (!best || n.size() > best->size())) best = name;
        }
        return best;
    }

    /// Recipes matching a dish category or an ingredient in the message.
    std::vector<std::string> vague_candidates(const std::string& u) const
    {
        std::vector<std::string> out;
        auto have = text::content_stems(u);
        for (const auto& name : assets_.recipes.names()) {
            auto name_words = text::words(name);
            bool hit = !name_words.empty() && have.count(text::stem(name_words.back()));
            const auto* dag = assets_.recipes.find(name);
            for (const auto& n : dag->nodes()) {
                auto ws = text::words(n.label);
                if (ws.size() < 2 || (ws[0] != "get" && ws[0] != "fetch")) continue;
                auto need = text::content_stems(std::string_view(n.label).substr(ws[0].size() + 1));
                if (!need.empty() && std::all_of(need.begin(), need.end(), [&](const std::string& w) { return have.count(w); }))
                    hit = true;
            }
            if (hit) out.push_back(name);
        }
        return out;
    }

    static std::string name_list(const std::vector<std::string>& names)
    {
        if (names.size() == 1) return names[0];
        std::string out;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (i) out += i + 1 == names.size() ? " and " : ", ";
            out += names[i];
        }
        return out;
    }

    Plan recipe_plan(const Observation&, const std::string& u) const
    {
        if (auto r = recipe_mentioned(u)) return set_recipe(*r, "The user named a recipe that is in the recipe list.");
        auto candidates = vague_candidates(u);
        if (!candidates.empty()) {
            auto reply = candidates.size() == 1 ? "Do you mean " + candidates[0] + "? Let me know if you want to make it."
                                                : "We have " + name_list(candidates) + ". Which one would you like to make?";
            return reply_plan("Recipe", "Clarify_Recipe", "The request is vague and matches several recipes in the list.", reply);
        }
        return reply_plan("Recipe", "Suggest_Alternative_Recipe", "Nothing in the recipe list matches the request.",
                          "Sorry, that recipe is not in my list. We can make " + name_list(assets_.recipes.names()) +
                              ". Which one would you like?");
    }

    std::optional<std::string> next_proposal(const Observation& o) const
    {
        for (const auto& l : o.available_subtasks) return l;
        return std::nullopt;
    }

    Plan confirm(const Observation& o, const std::string& label) const
    {
        auto agent = assets_.capabilities.robot_for(label);
        (void)o;
        return reply_plan("Execution", "Confirm_Subtask", "The next available subtask needs the user's permission first.",
                          proposal_text(agent.empty() ? "User" : agent, label));
    }

    Plan idle_plan(const Observation& o) const
    {
        if (o.recipe_name.empty()) return no_op("No recipe is set and the user said nothing new.");
        if (awaiting_user(o)) return no_op("Waiting for the user to answer my last question.");
        if (auto label = next_proposal(o)) return confirm(o, *label);
        return no_op("Nothing is available to assign right now.");
    }

    std::vector<std::string> known_labels(const Observation& o) const
    {
        std::vector<std::string> out = o.available_subtasks;
        for (const auto* a : {&o.r2, &o.r1}) {
            out.insert(out.end(), a->queue.begin(), a->queue.end());
            if (!a->current.empty()) out.push_back(a->current);
        }
        out.insert(out.end(), o.user_queue.begin(), o.user_queue.end());
        return out;
    }

    json modify(const Observation& o, const std::vector<Proposal>& add, const std::vector<std::string>& done,
                const std::string& reply, const std::string& reasoning) const
    {
        std::map<std::string, std::vector<std::string>> q{{"R2", o.r2.queue}, {"R1", o.r1.queue}, {"User", o.user_queue}};
        for (const auto& d : done)
            for (auto& [_, v] : q)
                v.erase(std::remove_if(v.begin(), v.end(), [&](const std::string& s) { return text::same_label(s, d); }), v.end());
        for (const auto& p : add) {
            for (auto& [agent, v] : q)
                if (agent != p.agent)
                    v.erase(std::remove_if(v.begin(), v.end(), [&](const std::string& s) { return text::same_label(s, p.label); }), v.end());
            auto& mine = q[p.agent];
            if (std::none_of(mine.begin(), mine.end(), [&](const std::string& s) { return text::same_label(s, p.label); }))
                mine.push_back(p.label);
        }
        auto completed = o.completed;
        for (const auto& d : done) completed.push_back(d);
        return json{{"reasoning", reasoning},
                    {"updated R2_subtask_queue", q["R2"]},
                    {"updated R1_subtask_queue", q["R1"]},
                    {"updated user_subtask_queue", q["User"]},
                    {"updated completed_subtask_list", completed},
                    {"reply", reply}};
    }

    Plan modify_plan(const Observation& o, const std::vector<Proposal>& add, const std::vector<std::string>& done,
                     const std::string& reply, const std::string& reasoning) const
    {
        return {"Execution", "Modify_Subtask", reasoning, modify(o, add, done, reply, reasoning)};
    }

    Plan interrupt_plan(const Observation& o, const std::vector<std::string>& targets, const std::vector<std::string>& done,
                        const std::string& reply) const
    {
        std::string reasoning = "The user asked to stop a running robot.";
        json payload{{"reasoning", reasoning}};
        for (const auto& id : planner::robot_ids()) {
            bool stop = std::find(targets.begin(), targets.end(), id) != targets.end();
            payload[id + "_status"] = stop ? std::string("Killed") : planner::prompt_string(o.robot(id).status);
        }
        auto completed = o.completed;
        completed.insert(completed.end(), done.begin(), done.end());
        payload["completed_subtask_list"] = completed;
        payload["reply"] = reply;
        return {"Execution", "Interrupt_Subtask", reasoning, payload};
    }

    static std::string requested_fetch(const std::string& u)
    {
        auto ws = text::words(u);
        for (std::size_t i = 0; i < ws.size(); ++i) {
            if (ws[i] != "get" && ws[i] != "fetch" && ws[i] != "bring" && ws[i] != "grab") continue;
            std::vector<std::string> obj;
            for (std::size_t j = i + 1; j < ws.size(); ++j) {
                const auto& w = ws[j];
                if (w == "me" || w == "us" || w == "a" || w == "an" || w == "some" || w == "the") {
                    if (obj.empty()) continue;
                    break;
                }
                if (w == "please" || w == "for" || w == "from" || w == "now" || w == "too" || w == "and") break;
                obj.push_back(w);
            }
            if (!obj.empty()) return "get " + join(obj, " ");
        }
        return {};
    }

    Plan robot_request(const Observation& o, const std::string& agent, const std::string& label) const
    {
        if (assets_.capabilities.can(agent, label))
            return modify_plan(o, {{agent, label}}, {}, "Sure, " + agent + " will " + label + ".",
                               "The user asked " + agent + " to take a subtask within its capabilities.");
        auto other = assets_.capabilities.robot_for(label);
        auto reply = agent + " cannot " + label + ". " + proposal_text(other.empty() ? "User" : other, label);
        return reply_plan("Overall_Clarify", "Overall_Clarify", "The requested robot lacks the capability for this subtask.", reply);
    }

    Plan execution_plan(const Observation& o, const std::string& u) const
    {
        auto known = known_labels(o);
        auto answered = message_before_input(o);
        std::optional<Proposal> pending = answered ? parse_proposal(*answered) : std::nullopt;
        if (pending) known.push_back(pending->label);
        auto labels = text::mentioned_labels(u, known);
        auto robots = text::robots_mentioned(u);

        if (text::has_word(u, {"stop", "halt", "freeze", "abort", "cancel"})) {
            std::vector<std::string> targets;
            for (const auto& id : robots.empty() ? planner::robot_ids() : robots)
                if (o.robot(id).status == planner::AgentStatus::Running) targets.push_back(id);
            if (targets.empty())
                return reply_plan("Overall_Clarify", "Overall_Clarify", "No robot is running.", "None of the robots is running right now.");
            return interrupt_plan(o, targets, {}, "Okay, I stopped " + name_list(targets) + ".");
        }

        bool self = text::has_word(u, {"i will", "ill", "i can", "let me", "myself", "i want to do", "i do"});
        bool reported = text::has_word(u, {"finished", "done", "completed", "already", "got", "did"});
        if (reported && !labels.empty() && !text::has_word(u, {"i will", "ill", "myself"})) {
            for (const auto& id : planner::robot_ids()) {
                const auto& cur = o.robot(id).current;
                if (!cur.empty() && o.robot(id).status == planner::AgentStatus::Running &&
                    std::any_of(labels.begin(), labels.end(), [&](const std::string& l) { return text::same_label(l, cur); }))
                    return interrupt_plan(o, {id}, {cur}, "Great, " + cur + " is done, so I stopped " + id + ".");
            }
            return modify_plan(o, {}, labels, "Great job! I marked " + name_list(labels) + " as done.",
                               "The user reported finishing a subtask.");
        }

        if (self && !labels.empty()) {
            if (options_.refuse_reassign)
                return reply_plan("Overall_Clarify", "Overall_Clarify", "Keeping the current plan.",
                                  "Sorry, I prefer to keep the current plan.");
            std::vector<Proposal> add;
            for (const auto& l : labels) add.push_back({"User", l});
            return modify_plan(o, add, {}, "Okay, you will " + name_list(labels) + ". Let me know when you are done.",
                               "The user wants to do the subtask themselves.");
        }

        if (!robots.empty()) {
            std::string label = labels.empty() ? requested_fetch(u) : labels.front();
            if (!label.empty()) {
                if (options_.refuse_reassign && !labels.empty())
                    return reply_plan("Overall_Clarify", "Overall_Clarify", "Keeping the current plan.",
                                      "Sorry, I prefer to keep the current plan.");
                return robot_request(o, robots.front(), label);
            }
        }

        if (auto fetch = requested_fetch(u); !fetch.empty() && text::has_word(u, {"someone", "anyone", "can you", "could you", "please"})) {
            auto agent = assets_.capabilities.robot_for(fetch);
            if (!agent.empty()) return robot_request(o, agent, fetch);
        }

        bool approve = text::has_word(u, {"yes", "sure", "ok", "okay", "yeah", "yep", "please do", "go ahead", "sounds good", "alright"});
        bool reject = text::has_word(u, {"no", "nope", "not yet", "dont"});
        if (pending && approve && !reject) {
            std::string reply = pending->agent == "User"
                                    ? "Thank you! Please let me know when you finish " + pending->label + "."
                                    : "Okay, " + pending->agent + " will " + pending->label + ".";
            return modify_plan(o, {*pending}, {}, reply, "The user approved my proposal in the chat history.");
        }
        if (pending && reject)
            return reply_plan("Overall_Clarify", "Overall_Clarify", "The user declined my proposal.", "Okay, I will hold off on that for now.");

        if (text::has_word(u, {"what next", "whats next", "what should we do", "what now", "what do we do"})) {
            if (!awaiting_user(o))
                if (auto label = next_proposal(o)) return confirm(o, *label);
            return reply_plan("Overall_Clarify", "Overall_Clarify", "Nothing new can start yet.",
                              "We are waiting for the current subtasks to finish.");
        }
        if (text::has_word(u, {"thanks", "thank you"}))
            return reply_plan("Overall_Clarify", "Overall_Clarify", "The user is being polite.", "You're welcome!");
        return reply_plan("Overall_Clarify", "Overall_Clarify", "I do not understand the request.",
                          "Sorry, I did not catch that. Could you say it differently?");
    }

    const planner::PlannerAssets& assets_;
    PolicyOptions options_;
};

// ------------------------------------------------------------------ sloppy

/// Corrupts planner answers with probability `p` into one of four kinds of
/// schema-invalid output. Code generation is left untouched.
class SloppyPolicy {
public:
    SloppyPolicy(std::shared_ptr<const CompliantPolicy> inner, const planner::PlannerAssets& assets, double p,
                 std::uint64_t seed)
        : inner_(std::move(inner)), assets_(assets), p_(p), rng_(seed ^ 0x5109B7ULL)
    {
    }

    std::string respond(const llm::CompletionRequest& req)
    {
        auto text = inner_->respond(req);
        if (req.node_name == engine::kCodegenNode || !rng_.bernoulli(p_)) return text;
        ++corrupted_;
        switch (rng_.below(4)) {
        case 0: return "Let me think about the best way to proceed with the cooking.";
        case 1: return text.substr(0, text.size() / 2);
        case 2: return break_schema(json::parse(text)).dump(2);
        default: return misassign(req, json::parse(text)).dump(2);
        }
    }

    std::size_t corrupted() const { return corrupted_; }

private:
    static json break_schema(json out)
    {
        if (out.contains("decision")) {
            out["decision"] = "Make_Coffee";
        } else if (out.contains("recipe name") || out.contains("recipe_name")) {
            out[out.contains("recipe name") ? "recipe name" : "recipe_name"] = "Mystery Stew";
        } else if (out.contains("R2_status")) {
            out["R2_status"] = "Sleeping";
            out["R1_status"] = "Sleeping";
        } else {
            for (const char* k : {"reply", "updated R2_subtask_queue", "R2_subtask_queue", "updated user_subtask_queue",
                                  "user_subtask_queue"})
                out.erase(k);
        }
        return out;
    }

    /// Moves subtasks the answer adds into a queue of an agent that cannot do them.
    json misassign(const llm::CompletionRequest& req, json out) const
    {
        struct Key {
            std::string agent;
            std::string key;
            std::vector<std::string> old;
        };
        std::vector<Key> keys;
        if (req.observation.is_object() && req.observation.contains("R2")) {
            auto obs = Observation::from_json(req.observation);
            for (const auto& prefix : {std::string("updated "), std::string()}) {
                keys.push_back({"R2", prefix + "R2_subtask_queue", obs.r2.queue});
                keys.push_back({"R1", prefix + "R1_subtask_queue", obs.r1.queue});
                keys.push_back({"User", prefix + "user_subtask_queue", obs.user_queue});
            }
        }
        bool moved = false;
        for (const auto& k : keys) {
            if (!out.contains(k.key) || !out[k.key].is_array()) continue;
            json keep = json::array();
            for (const auto& s : out[k.key]) {
                auto label = s.get<std::string>();
                bool added = std::none_of(k.old.begin(), k.old.end(), [&](const std::string& o) { return text::same_label(o, label); });
                if (!added) {
                    keep.push_back(label);
                    continue;
                }
                std::string wrong;
                for (const auto& a : {"R1", "R2"})
                    if (a != k.agent && !assets_.capabilities.can(a, label)) wrong = a;
                if (wrong.empty()) {
                    keep.push_back(label);
                    continue;
                }
                auto prefix = k.key.rfind("updated ", 0) == 0 ? std::string("updated ") : std::string();
                auto target = prefix + wrong + "_subtask_queue";
                if (!out.contains(target) || !out[target].is_array()) out[target] = json::array();
                out[target].push_back(label);
                moved = true;
            }
            out[k.key] = keep;
        }
        return moved ? out : break_schema(std::move(out));
    }

    std::shared_ptr<const CompliantPolicy> inner_;
    const planner::PlannerAssets& assets_;
    double p_;
    Rng rng_;
    std::size_t corrupted_ = 0;
};

/// Backend answering every node through a responder function.
inline std::unique_ptr<llm::ScriptedBackend> make_backend(llm::Responder responder)
{
    auto backend = std::make_unique<llm::ScriptedBackend>();
    llm::ScriptedRule rule;
    rule.node = "*";
    rule.responder = std::move(responder);
    backend->add_rule(std::move(rule));
    return backend;
}

} // namespace taskplanner::policy
