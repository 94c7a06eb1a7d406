#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "taskplanner/skill_codegen.hpp"

using namespace taskplanner;
using namespace taskplanner::skills;

namespace {

const SkillTable& table() { return checks::skill_table(); }

std::set<std::string> constants() { return checks::world().constants(); }

ErrorKind parse_error(std::string_view text)
{
    try {
        parse_skill_program(text, table());
    } catch (const SkillError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "accepted: " << text;
    return ErrorKind::NoSkills;
}

} // namespace

TEST(SkillParser, StirExampleWithCompletedCall)
{
    auto p = parse_skill_program("# pick_up_item(LADLE)  # already completed this action\nplace_item_at(POT)\nstir()\n", table());
    EXPECT_EQ(checks::call_texts(p), (std::vector<std::string>{"place_item_at(POT)", "stir()"}));
    EXPECT_EQ(p.skipped, (std::vector<std::string>{"pick_up_item(LADLE)"}));
}

TEST(SkillParser, TemplateExamplesParseToExactCalls)
{
    auto examples = checks::template_examples(checks::assets().codegen_template);
    for (const auto& want : checks::expected_examples()) {
        ASSERT_TRUE(examples.count(want.subtask)) << want.subtask;
        auto p = parse_skill_program(examples.at(want.subtask), table());
        EXPECT_EQ(checks::call_texts(p), want.calls) << want.subtask;
        EXPECT_EQ(p.skipped, want.skipped) << want.subtask;
    }
}

TEST(SkillParser, EveryTemplateExampleIsValidForSomeRobot)
{
    auto examples = checks::template_examples(checks::assets().codegen_template);
    EXPECT_GE(examples.size(), 10u);
    for (const auto& [subtask, body] : examples) {
        auto p = parse_skill_program(body, table());
        bool ok = validate_program(p, "R1", table(), constants()).empty() || validate_program(p, "R2", table(), constants()).empty();
        EXPECT_TRUE(ok) << subtask;
    }
}

TEST(SkillParser, ImportsFencesAndQuotedArgs)
{
    auto p = parse_skill_program("```python\nfrom robot_utils import *\nimport numpy as np\n\npick_up_item('ranch sauce')\nplace_item_at(\"TABLE\")  # done\n```",
                                 table());
    EXPECT_EQ(checks::call_texts(p), (std::vector<std::string>{"pick_up_item(RANCH_SAUCE)", "place_item_at(TABLE)"}));
}

TEST(SkillParser, RejectsRicherPrograms)
{
    EXPECT_EQ(parse_error("x = 1\nstir()"), ErrorKind::DisallowedConstruct);
    EXPECT_EQ(parse_error("for i in range(3):\n    stir()"), ErrorKind::DisallowedConstruct);
    EXPECT_EQ(parse_error("pick_up_item(get(SALT))"), ErrorKind::DisallowedConstruct);
    EXPECT_EQ(parse_error("stir(); stir()"), ErrorKind::DisallowedConstruct);
    EXPECT_EQ(parse_error("fly(PANTRY)"), ErrorKind::UnknownSkill);
    EXPECT_EQ(parse_error("pour(SALT)"), ErrorKind::ArityMismatch);
    EXPECT_EQ(parse_error("# only comments\n\n"), ErrorKind::NoSkills);
}

TEST(SkillParser, UnknownSkillAbortsWholeProgram)
{
    try {
        parse_skill_program("go_to(PANTRY)\nteleport(TABLE)\nplace_item_at(TABLE)", table());
        FAIL();
    } catch (const SkillError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnknownSkill);
        EXPECT_EQ(e.line(), 2);
    }
}

TEST(SkillValidation, PerRobotCapabilities)
{
    auto r2 = parse_skill_program("go_to(PANTRY)\npick_up_item(SALT)\ngo_to(TABLE)\nplace_item_at(TABLE)", table());
    EXPECT_TRUE(validate_program(r2, "R2", table(), constants()).empty());
    auto issues = validate_program(r2, "R1", table(), constants());
    ASSERT_FALSE(issues.empty());
    EXPECT_EQ(issues.front().kind, ErrorKind::SkillNotAvailable);
    auto unknown = parse_skill_program("pick_up_item(UNOBTAINIUM)", table());
    EXPECT_EQ(validate_program(unknown, "R1", table(), constants()).front().kind, ErrorKind::UnknownConstant);
}

TEST(SkillParser, FuzzedInputsAreClassified)
{
    auto o = checks::skill_parser(2000, 0, 99);
    EXPECT_TRUE(o.pass) << o.detail;
}

TEST(SkillParser, SerializeRoundTrip)
{
    auto o = checks::skill_parser(0, 1000, 98);
    EXPECT_TRUE(o.pass) << o.detail;
}

TEST(CodegenPrompt, AppendsQueryBlock)
{
    auto text = render_codegen_prompt("header\n", "  stir the soup ", {"pick_up_item('LADLE')"});
    EXPECT_NE(text.find("stir the soup\n\ncompleted_action_functions: [\"pick_up_item('LADLE')\"]"), std::string::npos);
    EXPECT_TRUE(text.rfind("<query_code_separator>\n") == text.size() - 23);
    EXPECT_THROW(render_codegen_prompt("h", " ", {}), SkillError);
}

// A backend that answers the template's own examples reproduces them.
TEST(CodegenPrompt, EchoedExamplesReproduceCalls)
{
    auto examples = checks::template_examples(checks::assets().codegen_template);
    for (const auto& [subtask, body] : examples) {
        auto prompt = render_codegen_prompt(checks::assets().codegen_template, subtask, {});
        auto query = prompt.substr(prompt.rfind("<example_separator>"));
        EXPECT_NE(query.find(subtask), std::string::npos);
        EXPECT_EQ(serialize_program(parse_skill_program(body, table())),
                  serialize_program(parse_skill_program(serialize_program(parse_skill_program(body, table())), table())));
    }
}
