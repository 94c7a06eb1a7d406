#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "taskplanner/engine.hpp"

using namespace taskplanner;
using namespace taskplanner::engine;

namespace {

// One-prompt responses: a recipe on the first turn, then fixed queue edits.
std::unique_ptr<llm::ScriptedBackend> one_prompt_backend(json later)
{
    return policy::make_backend([later](const llm::CompletionRequest& r) {
        if (r.node_name == kCodegenNode)
            return policy::program_for(r.observation.at("subtask").get<std::string>(),
                                       r.observation.at("completed").get<std::vector<std::string>>());
        if (r.observation.at("recipe_name") == "") return std::string(R"({"recipe_name": "Caesar Salad"})");
        return later.dump();
    });
}

EngineConfig one_prompt_config()
{
    EngineConfig c;
    c.planner_kind = "one-prompt";
    c.max_ticks_per_settle = 1;
    return c;
}

runtime::FaultConfig only(char category, double p)
{
    runtime::FaultConfig f;
    f.probability[category] = p;
    return f;
}

} // namespace

TEST(Engine, SameSeedSameTranscript)
{
    auto script = checks::persona("hard_caesar_salad");
    auto a = checks::sloppy_run(script, 11, 0.3, "mixed");
    auto b = checks::sloppy_run(script, 11, 0.3, "mixed");
    auto c = checks::sloppy_run(script, 12, 0.3, "mixed");
    EXPECT_EQ(a.transcript, b.transcript);
    EXPECT_EQ(a.recordings, b.recordings);
    EXPECT_NE(a.transcript, c.transcript);
}

TEST(Engine, LiveStateEqualsFoldOfLog)
{
    auto run = checks::sloppy_run(checks::persona("hard_turkey_sandwich"), 5, 0.2, "mixed", "one-prompt");
    auto replayed = planner::fold(eval::parse_transcript(run.transcript));
    EXPECT_EQ(replayed, planner::fold(run.events));
    EXPECT_EQ(replayed.last_seq, run.events.back().seq);
    for (std::size_t i = 0; i < run.events.size(); ++i) EXPECT_EQ(run.events[i].seq, i + 1);
}

TEST(Engine, FailuresCarryTheirModule)
{
    std::map<std::string, int> seen;
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        auto run = checks::sloppy_run(checks::persona("hard_tomato_soup"), seed, 0.2, "mixed");
        for (const auto& e : run.events) {
            if (e.kind != "subtask_failed" && e.kind != "fault_injected") continue;
            auto category = e.payload.at("category").get<std::string>();
            auto module = e.payload.at("module").get<std::string>();
            ++seen[category];
            if (category.size() == 1)
                EXPECT_EQ(module, runtime::fault_module(category[0])) << e.to_json().dump();
            else if (category == "CodeGeneration")
                EXPECT_EQ(module, runtime::kTaskPlanner);
            else
                EXPECT_EQ(category, "Precondition") << e.to_json().dump();
        }
    }
    EXPECT_GT(seen["A"] + seen["B"] + seen["C"], 0);
}

TEST(Engine, RejectsEmptyMessagesAndUnknownPlanners)
{
    auto backend = one_prompt_backend(json::object());
    Engine eng(checks::assets(), checks::world(), {}, *backend, one_prompt_config());
    EXPECT_THROW(eng.post_user("   "), std::invalid_argument);
    auto bad = one_prompt_config();
    bad.planner_kind = "three-prompt";
    EXPECT_THROW(Engine(checks::assets(), checks::world(), {}, *backend, bad), std::invalid_argument);
}

TEST(Engine, InapplicableActionsAreRejectedWithoutEffect)
{
    auto backend = one_prompt_backend(json{{"R1_subtask_queue", {"get pepper"}}});
    Engine eng(checks::assets(), checks::world(), {}, *backend, one_prompt_config());
    eng.post_user("Let's make a caesar salad.");
    ASSERT_EQ(eng.state().recipe_name(), "Caesar Salad");
    auto events = eng.post_user("What now?");
    bool rejected = false;
    for (const auto& e : events) rejected = rejected || e.kind == "action_rejected";
    EXPECT_TRUE(rejected);
    EXPECT_TRUE(eng.state().agent("R1").queue.empty());
}

TEST(Engine, WrongSubtaskFaultSubstitutesAvailableLabel)
{
    auto backend = one_prompt_backend(json{{"R2_subtask_queue", {"Get pepper"}}});
    Engine eng(checks::assets(), checks::world(), only('E', 1.0), *backend, one_prompt_config());
    eng.post_user("Let's make a caesar salad.");
    auto events = eng.post_user("Please get the pepper.");
    const Event* fault = nullptr;
    const Event* assigned = nullptr;
    for (const auto& e : events) {
        if (e.kind == "fault_injected") fault = &e;
        if (e.kind == "assigned") assigned = &e;
    }
    ASSERT_NE(fault, nullptr);
    EXPECT_EQ(fault->payload.at("module"), runtime::kTaskPlanner);
    ASSERT_NE(assigned, nullptr);
    EXPECT_NE(assigned->payload.at("subtasks")[0], "Get pepper");
}

TEST(Engine, LostStopRequestLeavesRobotRunning)
{
    auto backend = policy::make_backend([](const llm::CompletionRequest& r) {
        if (r.node_name == kCodegenNode)
            return policy::program_for(r.observation.at("subtask").get<std::string>(),
                                       r.observation.at("completed").get<std::vector<std::string>>());
        auto obs = planner::Observation::from_json(r.observation);
        if (obs.recipe_name.empty()) return std::string(R"({"recipe_name": "Caesar Salad"})");
        if (obs.r2.status == planner::AgentStatus::Running) return std::string(R"({"R2_status": "Killed", "R1_status": "Idle"})");
        return std::string(R"({"R2_subtask_queue": ["Get pepper"]})");
    });
    Engine eng(checks::assets(), checks::world(), only('D', 1.0), *backend, one_prompt_config());
    eng.post_user("Let's make a caesar salad.");
    eng.post_user("R2, get the pepper.");
    for (int i = 0; i < 3 && eng.state().agent("R2").status != planner::AgentStatus::Running; ++i) eng.advance(1);
    ASSERT_EQ(eng.state().agent("R2").status, planner::AgentStatus::Running);
    auto events = eng.post_user("Stop R2!");
    bool lost = false, stopped = false;
    for (const auto& e : events) {
        lost = lost || (e.kind == "fault_injected" && e.payload.at("category") == "D");
        stopped = stopped || e.kind == "interrupted";
    }
    EXPECT_TRUE(lost);
    EXPECT_FALSE(stopped);
    EXPECT_EQ(eng.state().agent("R2").status, planner::AgentStatus::Running);
}

TEST(Engine, SayEventsNameTheAssistant)
{
    auto run = checks::sloppy_run(checks::persona("easy_corn_soup"), 1, 0.0, "none");
    auto s = planner::fold(run.events);
    bool any = false;
    for (const auto& c : s.chat)
        if (c.speaker != "User") {
            any = true;
            EXPECT_EQ(c.speaker, checks::assets().tree.assistant_name);
        }
    EXPECT_TRUE(any);
}
