#pragma once

// Parsing and validation of the restricted skill programs that robots run.
// A program is a straight-line list of skill calls with constant arguments.

#include "taskplanner/common.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace taskplanner::skills {

using json = nlohmann::json;

enum class ErrorKind {
    DisallowedConstruct,
    UnknownSkill,
    ArityMismatch,
    NoSkills,
    EmptySubtask,
    SkillNotAvailable,
    UnknownConstant,
};

inline const char* to_string(ErrorKind k)
{
    switch (k) {
    case ErrorKind::DisallowedConstruct: return "DisallowedConstruct";
    case ErrorKind::UnknownSkill: return "UnknownSkill";
    case ErrorKind::ArityMismatch: return "ArityMismatch";
    case ErrorKind::NoSkills: return "NoSkills";
    case ErrorKind::EmptySubtask: return "EmptySubtask";
    case ErrorKind::SkillNotAvailable: return "SkillNotAvailable";
    case ErrorKind::UnknownConstant: return "UnknownConstant";
    }
    return "?";
}

class SkillError : public std::runtime_error {
public:
    SkillError(ErrorKind kind, const std::string& msg, int line = 0)
        : std::runtime_error(std::string(to_string(kind)) + ": " + msg + (line ? " (line " + std::to_string(line) + ")" : "")),
          kind_(kind), line_(line)
    {
    }
    ErrorKind kind() const noexcept { return kind_; }
    int line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    int line_;
};

struct SkillCall {
    std::string skill;
    std::vector<std::string> args;

    std::string text() const { return skill + "(" + join(args, ", ") + ")"; }
    bool operator==(const SkillCall&) const = default;
};

struct SkillProgram {
    std::vector<SkillCall> calls;
    std::vector<std::string> skipped; // calls the generator marked as already done
    bool operator==(const SkillProgram&) const = default;
};

/// Skill signatures and the skills each robot can execute.
struct SkillTable {
    std::map<std::string, int> arity;
    std::map<std::string, std::set<std::string>> executable; // agent -> skills

    bool knows(const std::string& skill) const { return arity.count(skill) > 0; }
    bool can_execute(const std::string& agent, const std::string& skill) const
    {
        auto it = executable.find(agent);
        return it != executable.end() && it->second.count(skill) > 0;
    }

    /// {"skills": {"name": arity, ...}, "executable": {"R1": [...], ...}}
    static SkillTable from_json(const json& j)
    {
        SkillTable t;
        for (const auto& [name, a] : j.at("skills").items()) t.arity[name] = a.get<int>();
        for (const auto& [agent, list] : j.at("executable").items())
            for (const auto& s : list) t.executable[agent].insert(s.get<std::string>());
        return t;
    }
};

namespace detail {

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

inline std::string normalize_quoted(std::string_view s)
{
    std::string out;
    for (char c : trim(s)) {
        if (c == ' ' || c == '-')
            out += '_';
        else
            out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

// Parses `IDENT(args)` followed by optional whitespace and an optional
// comment. Returns false when the line has any other shape.
inline bool parse_call(std::string_view line, SkillCall& out)
{
    std::size_t i = 0;
    auto skip_ws = [&] {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    };
    skip_ws();
    if (i >= line.size() || !ident_start(line[i])) return false;
    std::size_t b = i;
    while (i < line.size() && ident_char(line[i])) ++i;
    out.skill = std::string(line.substr(b, i - b));
    out.args.clear();
    if (i >= line.size() || line[i] != '(') return false;
    ++i;
    skip_ws();
    if (i < line.size() && line[i] == ')') {
        ++i;
    } else {
        while (true) {
            skip_ws();
            if (i >= line.size()) return false;
            if (line[i] == '\'' || line[i] == '"') {
                char q = line[i++];
                auto end = line.find(q, i);
                if (end == std::string_view::npos) return false;
                auto inner = line.substr(i, end - i);
                if (inner.find_first_of("'\"\\") != std::string_view::npos || trim(inner).empty()) return false;
                out.args.push_back(normalize_quoted(inner));
                i = end + 1;
            } else if (ident_start(line[i])) {
                std::size_t a = i;
                while (i < line.size() && ident_char(line[i])) ++i;
                out.args.emplace_back(line.substr(a, i - a));
            } else {
                return false;
            }
            skip_ws();
            if (i < line.size() && line[i] == ',') {
                ++i;
                continue;
            }
            if (i < line.size() && line[i] == ')') {
                ++i;
                break;
            }
            return false;
        }
    }
    skip_ws();
    return i == line.size() || line[i] == '#';
}

inline bool is_import(const std::string& t)
{
    return t.rfind("import ", 0) == 0 || (t.rfind("from ", 0) == 0 && t.find(" import ") != std::string::npos);
}

} // namespace detail

/// Parses generated code. Imports, code fences, blank lines and comments are
/// ignored, except that a comment wrapping a skill call is recorded in `skipped`.
inline SkillProgram parse_skill_program(std::string_view text, const SkillTable& table)
{
    SkillProgram program;
    auto lines = split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        int lineno = static_cast<int>(n) + 1;
        auto t = trim(lines[n]);
        if (t.empty() || detail::is_import(t) || t.rfind("```", 0) == 0) continue;
        if (t[0] == '#') {
            SkillCall c;
            if (detail::parse_call(trim(t.substr(1)), c) && table.knows(c.skill)) program.skipped.push_back(c.text());
            continue;
        }
        SkillCall call;
        if (!detail::parse_call(t, call)) throw SkillError(ErrorKind::DisallowedConstruct, "'" + t + "'", lineno);
        auto it = table.arity.find(call.skill);
        if (it == table.arity.end()) throw SkillError(ErrorKind::UnknownSkill, call.skill, lineno);
        if (static_cast<int>(call.args.size()) != it->second)
            throw SkillError(ErrorKind::ArityMismatch,
                             call.skill + " takes " + std::to_string(it->second) + " argument(s), got " +
                                 std::to_string(call.args.size()),
                             lineno);
        program.calls.push_back(std::move(call));
    }
    if (program.calls.empty()) throw SkillError(ErrorKind::NoSkills, "program contains no skill calls");
    return program;
}

struct ValidationIssue {
    ErrorKind kind;
    std::size_t call_index;
    std::string detail;
};

/// Checks a program against one robot's executable skills and the world's
/// known constants. An empty result means the program is valid.
inline std::vector<ValidationIssue> validate_program(const SkillProgram& program, const std::string& agent,
                                                     const SkillTable& table, const std::set<std::string>& constants)
{
    std::vector<ValidationIssue> issues;
    for (std::size_t k = 0; k < program.calls.size(); ++k) {
        const auto& c = program.calls[k];
        auto it = table.arity.find(c.skill);
        if (it == table.arity.end()) {
            issues.push_back({ErrorKind::UnknownSkill, k, c.skill});
            continue;
        }
        if (static_cast<int>(c.args.size()) != it->second)
            issues.push_back({ErrorKind::ArityMismatch, k, c.text()});
        if (!table.can_execute(agent, c.skill))
            issues.push_back({ErrorKind::SkillNotAvailable, k, agent + " cannot run " + c.skill});
        for (const auto& a : c.args)
            if (!constants.count(a)) issues.push_back({ErrorKind::UnknownConstant, k, a});
    }
    return issues;
}

/// Canonical text form; parses back to an equal program.
inline std::string serialize_program(const SkillProgram& program)
{
    std::string out;
    for (const auto& s : program.skipped) out += "# " + s + "  # already completed this action\n";
    for (const auto& c : program.calls) out += c.text() + "\n";
    return out;
}

/// Appends a query block for `subtask` to the code-generation template.
/// `completed` lists calls already executed for this subtask.
inline std::string render_codegen_prompt(const std::string& template_text, const std::string& subtask,
                                         const std::vector<std::string>& completed)
{
    if (trim(subtask).empty()) throw SkillError(ErrorKind::EmptySubtask, "subtask text is empty");
    std::string list;
    for (std::size_t k = 0; k < completed.size(); ++k) {
        if (k) list += ", ";
        list += "\"" + completed[k] + "\"";
    }
    std::string out = template_text;
    if (!out.empty() && out.back() != '\n') out += '\n';
    out += "<example_separator>\n\"\"\"\n" + trim(subtask) + "\n\ncompleted_action_functions: [" + list +
           "]\n\"\"\"\n<query_code_separator>\n";
    return out;
}

} // namespace taskplanner::skills
