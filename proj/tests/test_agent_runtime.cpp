#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "taskplanner/agent_runtime.hpp"

using namespace taskplanner;
using namespace taskplanner::runtime;

namespace {

AgentRuntime make_runtime(FaultConfig faults = {}, std::uint64_t seed = 1)
{
    return AgentRuntime(checks::world(), checks::skill_table(), std::move(faults), seed, checks::scripted_code());
}

std::vector<RuntimeEvent> run_until_quiet(AgentRuntime& rt, int limit = 2000)
{
    std::vector<RuntimeEvent> all;
    for (int i = 0; i < limit; ++i) {
        auto ev = rt.step();
        all.insert(all.end(), ev.begin(), ev.end());
        if (rt.quiescent()) break;
    }
    return all;
}

std::vector<std::string> kinds(const std::vector<RuntimeEvent>& events, const std::string& prefix)
{
    std::vector<std::string> out;
    for (const auto& e : events)
        if (e.kind.rfind(prefix, 0) == 0) out.push_back(e.kind);
    return out;
}

} // namespace

TEST(Runtime, GetSaltRunsFourSkillsInOrder)
{
    auto rt = make_runtime();
    rt.assign("R2", {"get salt"});
    auto events = run_until_quiet(rt);
    std::vector<std::string> requested;
    for (const auto& e : events)
        if (e.kind == "skill_request") requested.push_back(e.payload.at("skill").get<std::string>() + "(" + join(e.payload.at("args").get<std::vector<std::string>>(), ", ") + ")");
    EXPECT_EQ(requested, (std::vector<std::string>{"go_to(PANTRY)", "pick_up_item(SALT)", "go_to(TABLE)", "place_item_at(TABLE)"}));
    EXPECT_EQ(events.front().kind, "subtask_started");
    EXPECT_EQ(events.back().kind, "subtask_completed");
    EXPECT_EQ(rt.executor("R2").status, planner::AgentStatus::Idle);
    EXPECT_TRUE(rt.executor("R2").current.empty());
    EXPECT_EQ(rt.world().placement("SALT"), "TABLE");
}

TEST(Runtime, RequestsAreStrictlySequential)
{
    auto rt = make_runtime();
    rt.assign("R2", {"get salt", "get pepper"});
    auto events = run_until_quiet(rt);
    int open = 0;
    for (const auto& e : events) {
        if (e.kind == "skill_request") EXPECT_EQ(open++, 0);
        if (e.kind == "skill_result") --open;
    }
    EXPECT_EQ(open, 0);
}

TEST(Runtime, CancelMidSkill)
{
    auto rt = make_runtime();
    rt.assign("R2", {"get salt"});
    rt.step();
    rt.step();
    ASSERT_EQ(rt.executor("R2").status, planner::AgentStatus::Running);
    auto ack = rt.cancel("R2");
    ASSERT_EQ(ack.size(), 1u);
    EXPECT_EQ(ack.front().kind, "skill_cancel");
    EXPECT_TRUE(rt.cancel("R2").empty());
    auto events = rt.step();
    ASSERT_EQ(events.size(), 2u);
    EXPECT_EQ(events[0].kind, "skill_result");
    EXPECT_EQ(events[0].payload.at("status"), "Cancelled");
    EXPECT_EQ(events[1].kind, "subtask_interrupted");
    EXPECT_EQ(rt.executor("R2").status, planner::AgentStatus::Interrupted);
    EXPECT_TRUE(rt.executor("R2").current.empty());
    for (int i = 0; i < 20; ++i) EXPECT_TRUE(kinds(rt.step(), "skill_request").empty());
}

TEST(Runtime, CancelWhileIdleIsANoOp)
{
    auto rt = make_runtime();
    EXPECT_TRUE(rt.cancel("R1").empty());
    EXPECT_EQ(rt.executor("R1").status, planner::AgentStatus::Idle);
}

TEST(Runtime, R1CannotNavigate)
{
    auto rt = make_runtime();
    rt.assign("R1", {"get salt"});
    auto events = run_until_quiet(rt);
    ASSERT_EQ(events.back().kind, "subtask_failed");
    EXPECT_EQ(events.back().payload.at("category"), "CodeGeneration");
    EXPECT_EQ(events.back().payload.at("module"), kTaskPlanner);
}

TEST(Runtime, PreconditionFailureKeepsWorldConsistent)
{
    auto rt = make_runtime();
    rt.assign("R1", {"pour salt into bowl"});
    auto events = run_until_quiet(rt);
    ASSERT_EQ(events.back().kind, "subtask_failed");
    EXPECT_EQ(events.back().payload.at("category"), "Precondition");
    EXPECT_TRUE(rt.world().conservation_errors(rt.initial_world()).empty());
}

TEST(Runtime, InjectedFaultCarriesModule)
{
    FaultConfig f;
    f.probability['A'] = 1.0;
    auto rt = make_runtime(f);
    rt.assign("R2", {"get salt"});
    auto events = run_until_quiet(rt);
    ASSERT_EQ(events.back().kind, "subtask_failed");
    EXPECT_EQ(events.back().payload.at("category"), "A");
    EXPECT_EQ(events.back().payload.at("module"), kVisuomotor);
    EXPECT_EQ(rt.world().placement("SALT"), "PANTRY");
}

TEST(Runtime, ResumedSubtaskSkipsCompletedCalls)
{
    FaultConfig f;
    f.triggers.push_back({'B', 0, 0});
    auto rt = make_runtime(f);
    rt.assign("R2", {"get salt"});
    auto first = run_until_quiet(rt);
    ASSERT_EQ(first.back().kind, "subtask_failed");
    EXPECT_EQ(first.back().payload.at("category"), "B");
    EXPECT_EQ(rt.world().held("R2"), std::optional<std::string>("SALT"));
    rt.assign("R2", {"get salt"});
    auto second = run_until_quiet(rt);
    EXPECT_EQ(second.back().kind, "subtask_completed");
    EXPECT_EQ(kinds(second, "skill_request").size(), 1u);
    EXPECT_EQ(rt.world().placement("SALT"), "TABLE");
}

TEST(Runtime, TriggersFireOnlyForTheirRun)
{
    FaultConfig f;
    f.triggers.push_back({'A', 1, 0});
    AgentRuntime run0(checks::world(), checks::skill_table(), f, 5, checks::scripted_code(), 0);
    AgentRuntime run1(checks::world(), checks::skill_table(), f, 5, checks::scripted_code(), 1);
    run0.assign("R2", {"get salt"});
    run1.assign("R2", {"get salt"});
    EXPECT_EQ(run_until_quiet(run0).back().kind, "subtask_completed");
    EXPECT_EQ(run_until_quiet(run1).back().kind, "subtask_failed");
}

TEST(Runtime, UserFetchMovesObjectToTable)
{
    auto rt = make_runtime();
    auto ev = rt.apply_user_effect("get pepper");
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(rt.world().placement("PEPPER"), "TABLE");
    EXPECT_TRUE(rt.apply_user_effect("get pepper").empty());
    EXPECT_TRUE(rt.apply_user_effect("chop onions").empty());
}

TEST(Runtime, FeedbackAtConfiguredInterval)
{
    auto rt = make_runtime();
    rt.assign("R2", {"get salt"});
    auto events = run_until_quiet(rt);
    for (const auto& e : events)
        if (e.kind == "skill_feedback") {
            double p = e.payload.at("progress").get<double>();
            EXPECT_GT(p, 0.0);
            EXPECT_LT(p, 1.0);
        }
    EXPECT_FALSE(kinds(events, "skill_feedback").empty());
}

TEST(Runtime, WorldRoundTripsThroughJson)
{
    auto w = checks::world();
    EXPECT_EQ(World::from_json(w.to_json()), w);
    EXPECT_THROW(World::from_json(json::parse(R"({"locations": {"A": "B"}, "agents": {}, "objects": {}})")), std::invalid_argument);
    EXPECT_THROW(FaultConfig::from_json(json::parse(R"({"probabilities": {"Z": 0.1}})")), std::invalid_argument);
    EXPECT_THROW(FaultConfig::from_json(json::parse(R"({"probabilities": {"A": 1.5}})")), std::invalid_argument);
}

TEST(RuntimeProperties, RandomScenariosKeepInvariants)
{
    auto s = checks::runtime_scenarios(40, 7);
    EXPECT_TRUE(s.clean()) << join(s.notes, "; ");
    EXPECT_GT(s.cancels, 0);
    EXPECT_GT(s.failures, 0);
    EXPECT_EQ(s.illegal_transitions, 0);
    EXPECT_EQ(s.duplicate_results, 0);
    EXPECT_EQ(s.conservation_breaches, 0);
    EXPECT_EQ(s.late_cancellations, 0);
}

TEST(RuntimeProperties, FaultFreeQueuesTerminate)
{
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        auto rt = make_runtime({}, static_cast<std::uint64_t>(trial));
        std::vector<std::string> labels;
        for (int k = 0; k < 4; ++k) labels.push_back("get " + checks::pantry_items()[rng.below(checks::pantry_items().size())]);
        rt.assign("R2", labels);
        rt.assign("R1", {"stir pot", "mix bowl"});
        // linear in total skill time: at most five calls per subtask, one tick of start-up each
        int longest = 0;
        for (const auto& [skill, _] : checks::skill_table().arity) longest = std::max(longest, rt.world().duration(skill));
        int bound = static_cast<int>(labels.size() + 2) * 5 * (longest + 1);
        run_until_quiet(rt, bound);
        EXPECT_TRUE(rt.quiescent()) << trial;
    }
}

TEST(FaultAttribution, PickFaultsMatchAnalyticRate)
{
    auto st = checks::fault_attribution_runs(100);
    EXPECT_EQ(st.misattributed, 0);
    EXPECT_EQ(st.completed + st.failed, st.assigned);
    EXPECT_NEAR(st.rate(), 0.5, 0.07);
}
