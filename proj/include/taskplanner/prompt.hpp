#pragma once

// Loader for the YAML-like prompt documents under data/prompts. The format is
// a flat set of `key: value` and `key: |` block scalars plus an `examples:`
// section whose items are `- description:`, `- observation: |` and
// `- response: |` entries.

#include "taskplanner/common.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace taskplanner::prompt {

class PromptError : public std::runtime_error {
public:
    PromptError(const std::string& msg, int line) : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

struct PromptExample {
    std::string description;
    std::string observation;
    std::string response;
};

struct PromptSpec {
    std::string version;
    std::string node_type;
    std::string node_name;
    std::string prompt_description;
    std::string prompt_version;
    std::string system;
    std::string instructions;
    std::vector<PromptExample> examples;
};

namespace detail {

inline std::size_t indent_of(const std::string& line)
{
    auto p = line.find_first_not_of(' ');
    return p == std::string::npos ? line.size() : p;
}

inline bool blank(const std::string& line) { return trim(line).empty(); }

// Collects an indented block starting at `i` and returns it dedented by the
// smallest indentation of its non-blank lines. `i` ends at the first line
// that is not part of the block.
inline std::string read_block(const std::vector<std::string>& lines, std::size_t& i)
{
    std::vector<std::string> body;
    while (i < lines.size() && (blank(lines[i]) || lines[i][0] == ' ' || lines[i][0] == '\t')) {
        body.push_back(lines[i]);
        ++i;
    }
    while (!body.empty() && blank(body.back())) body.pop_back();
    std::size_t common = std::string::npos;
    for (const auto& l : body)
        if (!blank(l)) common = std::min(common, indent_of(l));
    std::string out;
    for (std::size_t k = 0; k < body.size(); ++k) {
        if (k) out += '\n';
        if (!blank(body[k])) out += body[k].substr(common);
    }
    return out;
}

inline bool split_key(const std::string& line, std::string& key, std::string& value)
{
    auto colon = line.find(':');
    if (colon == std::string::npos || colon == 0) return false;
    for (std::size_t k = 0; k < colon; ++k) {
        char c = line[k];
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
    }
    key = line.substr(0, colon);
    value = trim(line.substr(colon + 1));
    return true;
}

} // namespace detail

inline PromptSpec parse_prompt(std::string_view text)
{
    auto lines = split_lines(text);
    PromptSpec spec;
    std::map<std::string, std::string> scalars;
    bool in_examples = false;
    std::size_t i = 0;
    while (i < lines.size()) {
        const auto& line = lines[i];
        int lineno = static_cast<int>(i) + 1;
        if (detail::blank(line)) {
            ++i;
            continue;
        }
        if (line[0] == '-' && in_examples) {
            std::string key, value;
            if (!detail::split_key(trim(line.substr(1)), key, value))
                throw PromptError("malformed example entry", lineno);
            ++i;
            if (value == "|") value = detail::read_block(lines, i);
            if (key == "description") {
                spec.examples.push_back({value, {}, {}});
            } else if (key == "observation" || key == "response") {
                if (spec.examples.empty() || (key == "observation" && !spec.examples.back().observation.empty()))
                    spec.examples.push_back({});
                (key == "observation" ? spec.examples.back().observation : spec.examples.back().response) = value;
            } else {
                throw PromptError("unknown example field '" + key + "'", lineno);
            }
            continue;
        }
        if (line[0] == ' ' || line[0] == '\t') throw PromptError("unexpected indented line", lineno);
        std::string key, value;
        if (!detail::split_key(line, key, value)) throw PromptError("expected 'key: value'", lineno);
        ++i;
        if (key == "examples") {
            in_examples = true;
            continue;
        }
        in_examples = false;
        if (value == "|") value = detail::read_block(lines, i);
        scalars[key] = value;
    }
    auto get = [&](const char* k) { return scalars.count(k) ? scalars[k] : std::string(); };
    spec.version = get("version");
    spec.node_type = get("node_type");
    spec.node_name = get("node_name");
    spec.prompt_description = get("prompt_description");
    spec.prompt_version = get("prompt_version");
    spec.system = get("system");
    spec.instructions = get("instructions");
    if (spec.system.empty() && spec.instructions.empty()) throw PromptError("prompt has neither system nor instructions", 1);
    if (!spec.node_type.empty() && spec.node_type != "DecisionNode" && spec.node_type != "ActionNode")
        throw PromptError("unknown node_type '" + spec.node_type + "'", 1);
    return spec;
}

inline PromptSpec load_prompt(const std::filesystem::path& path) { return parse_prompt(read_file(path)); }

inline std::string indent_block(const std::string& text, std::string_view pad)
{
    std::string out;
    auto lines = split_lines(text);
    for (std::size_t k = 0; k < lines.size(); ++k) {
        if (k) out += '\n';
        if (!trim(lines[k]).empty()) out += std::string(pad) + lines[k];
    }
    return out;
}

/// Few-shot examples in the same layout as the source document.
inline std::string render_examples(const std::vector<PromptExample>& examples)
{
    if (examples.empty()) return {};
    std::string out = "examples:\n";
    for (const auto& ex : examples) {
        out += "- description: " + ex.description + "\n";
        out += "- observation: |\n" + indent_block(ex.observation, "    ") + "\n";
        out += "- response: |\n" + indent_block(ex.response, "    ") + "\n";
    }
    return out;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to)
{
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
    return s;
}

/// Instructions with placeholders filled in and the examples appended.
inline std::string render_instructions(const PromptSpec& spec, const std::map<std::string, std::string>& substitutions)
{
    auto text = spec.instructions;
    for (const auto& [k, v] : substitutions) text = replace_all(text, "<" + k + ">", v);
    auto ex = render_examples(spec.examples);
    if (!ex.empty()) text += "\n" + ex;
    return text;
}

} // namespace taskplanner::prompt
