#pragma once

// Recipe dependency graphs: nested-list parsing, done-state tracking and the
// available-subtask frontier.

#include "taskplanner/common.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace taskplanner::recipe {

enum class ErrorKind {
    IndentationJump,
    InconsistentIndent,
    EmptyRecipe,
    DuplicateLabel,
    UnknownSubtask,
    CycleDetected,
    InvalidEdge,
    EmptyLabel,
};

inline const char* to_string(ErrorKind k)
{
    switch (k) {
    case ErrorKind::IndentationJump: return "IndentationJump";
    case ErrorKind::InconsistentIndent: return "InconsistentIndent";
    case ErrorKind::EmptyRecipe: return "EmptyRecipe";
    case ErrorKind::DuplicateLabel: return "DuplicateLabel";
    case ErrorKind::UnknownSubtask: return "UnknownSubtask";
    case ErrorKind::CycleDetected: return "CycleDetected";
    case ErrorKind::InvalidEdge: return "InvalidEdge";
    case ErrorKind::EmptyLabel: return "EmptyLabel";
    }
    return "?";
}

class RecipeError : public std::runtime_error {
public:
    RecipeError(ErrorKind kind, std::string message, int line = 0)
        : std::runtime_error(std::string(to_string(kind)) + (line > 0 ? " at line " + std::to_string(line) : "") +
                             ": " + message),
          kind_(kind), line_(line)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }
    int line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    int line_;
};

struct Subtask {
    std::string id;
    std::string label;
    bool done = false;

    friend bool operator==(const Subtask&, const Subtask&) = default;
};

/// Directed acyclic graph of subtasks. Edges point from a prerequisite to the
/// subtask that depends on it. A virtual, always-done root precedes every
/// parentless node. Only sequential and AND dependencies are expressible.
class RecipeDag {
public:
    RecipeDag() = default;
    explicit RecipeDag(std::string name) : name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    void add_node(std::string id, std::string label)
    {
        label = trim(label);
        if (label.empty()) throw RecipeError(ErrorKind::EmptyLabel, "subtask label is empty");
        if (index_.count(id)) throw RecipeError(ErrorKind::DuplicateLabel, "duplicate subtask id '" + id + "'");
        index_.emplace(id, nodes_.size());
        nodes_.push_back(Subtask{std::move(id), std::move(label), false});
        parents_.emplace_back();
        children_.emplace_back();
    }

    /// Adds prerequisite edge from -> to. Rejects self-edges, duplicates,
    /// dangling endpoints and anything that would close a cycle.
    void add_edge(const std::string& from, const std::string& to)
    {
        auto f = index_.find(from);
        auto t = index_.find(to);
        if (f == index_.end() || t == index_.end())
            throw RecipeError(ErrorKind::InvalidEdge, "edge endpoint does not exist: " + from + " -> " + to);
        if (from == to) throw RecipeError(ErrorKind::InvalidEdge, "self edge on '" + from + "'");
        if (edges_.count({from, to})) throw RecipeError(ErrorKind::InvalidEdge, "duplicate edge " + from + " -> " + to);
        if (reaches(t->second, f->second))
            throw RecipeError(ErrorKind::CycleDetected, "edge " + from + " -> " + to + " closes a cycle");
        edges_.insert({from, to});
        parents_[t->second].push_back(f->second);
        children_[f->second].push_back(t->second);
    }

    const std::vector<Subtask>& nodes() const noexcept { return nodes_; }
    const std::set<std::pair<std::string, std::string>>& edges() const noexcept { return edges_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    const Subtask& node(const std::string& id) const
    {
        auto it = index_.find(id);
        if (it == index_.end()) throw RecipeError(ErrorKind::UnknownSubtask, "unknown subtask '" + id + "'");
        return nodes_[it->second];
    }

    std::vector<std::string> parents(const std::string& id) const
    {
        std::vector<std::string> out;
        for (auto p : parents_[index_of(id)]) out.push_back(nodes_[p].id);
        return out;
    }

    std::vector<std::string> children(const std::string& id) const
    {
        std::vector<std::string> out;
        for (auto c : children_[index_of(id)]) out.push_back(nodes_[c].id);
        return out;
    }

    /// Node ids whose label matches (case-insensitive), in insertion order.
    std::vector<std::string> ids_for_label(std::string_view label) const
    {
        std::vector<std::string> out;
        auto want = to_lower(trim(label));
        for (const auto& n : nodes_)
            if (to_lower(n.label) == want) out.push_back(n.id);
        return out;
    }

    bool is_done(const std::string& id) const { return nodes_[index_of(id)].done; }

    // Only mark_done() should flip done flags; exposed for it.
    void set_done(const std::string& id) { nodes_[index_of(id)].done = true; }

    /// Full structural check: endpoints exist, no self/duplicate edges, acyclic.
    void validate() const
    {
        for (const auto& [from, to] : edges_) {
            if (!contains(from) || !contains(to)) throw RecipeError(ErrorKind::InvalidEdge, "dangling edge");
            if (from == to) throw RecipeError(ErrorKind::InvalidEdge, "self edge");
        }
        // Kahn's algorithm
        std::vector<std::size_t> indeg(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) indeg[i] = parents_[i].size();
        std::vector<std::size_t> ready;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (indeg[i] == 0) ready.push_back(i);
        std::size_t seen = 0;
        while (!ready.empty()) {
            auto n = ready.back();
            ready.pop_back();
            ++seen;
            for (auto c : children_[n])
                if (--indeg[c] == 0) ready.push_back(c);
        }
        if (seen != nodes_.size()) throw RecipeError(ErrorKind::CycleDetected, "graph contains a cycle");
    }

    friend bool operator==(const RecipeDag& a, const RecipeDag& b)
    {
        return a.name_ == b.name_ && a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
    }

private:
    std::size_t index_of(const std::string& id) const
    {
        auto it = index_.find(id);
        if (it == index_.end()) throw RecipeError(ErrorKind::UnknownSubtask, "unknown subtask '" + id + "'");
        return it->second;
    }

    bool reaches(std::size_t from, std::size_t target) const
    {
        std::vector<std::size_t> stack{from};
        std::vector<bool> seen(nodes_.size(), false);
        while (!stack.empty()) {
            auto n = stack.back();
            stack.pop_back();
            if (n == target) return true;
            if (seen[n]) continue;
            seen[n] = true;
            for (auto c : children_[n]) stack.push_back(c);
        }
        return false;
    }

    std::string name_;
    std::vector<Subtask> nodes_;
    std::map<std::string, std::size_t> index_;
    std::set<std::pair<std::string, std::string>> edges_;
    std::vector<std::vector<std::size_t>> parents_;
    std::vector<std::vector<std::size_t>> children_;
};

/// Undone subtasks all of whose parents are done, in insertion order.
inline std::vector<std::string> available_subtasks(const RecipeDag& dag)
{
    std::vector<std::string> out;
    for (const auto& n : dag.nodes()) {
        if (n.done) continue;
        bool ready = true;
        for (const auto& p : dag.parents(n.id)) {
            if (!dag.is_done(p)) {
                ready = false;
                break;
            }
        }
        if (ready) out.push_back(n.id);
    }
    return out;
}

struct MarkResult {
    RecipeDag dag;
    bool out_of_order = false; // some parent was still undone
};

/// Marks a subtask done. Idempotent. Completing a subtask before its
/// prerequisites is allowed and reported through `out_of_order`.
inline MarkResult mark_done(RecipeDag dag, const std::string& id)
{
    bool out_of_order = false;
    if (!dag.is_done(id)) {
        for (const auto& p : dag.parents(id))
            if (!dag.is_done(p)) out_of_order = true;
        dag.set_done(id);
    }
    return {std::move(dag), out_of_order};
}

inline bool is_finished(const RecipeDag& dag)
{
    for (const auto& n : dag.nodes())
        if (!n.done) return false;
    return available_subtasks(dag).empty();
}

namespace detail {

struct BulletLine {
    int line_no;
    std::size_t indent;
    std::string label;
};

inline std::optional<BulletLine> parse_bullet(const std::string& raw, int line_no)
{
    std::string line;
    for (char c : raw) {
        if (c == '\t')
            line += "    ";
        else
            line += c;
    }
    std::size_t indent = 0;
    while (indent < line.size() && line[indent] == ' ') ++indent;
    if (indent + 1 >= line.size()) return std::nullopt;
    char marker = line[indent];
    if (marker != '-' && marker != '*' && marker != '+') return std::nullopt;
    if (line[indent + 1] != ' ') return std::nullopt;
    auto label = trim(std::string_view(line).substr(indent + 2));
    if (label.empty()) return std::nullopt;
    return BulletLine{line_no, indent, label};
}

} // namespace detail

/// Parses nested-list recipe markup. Non-bullet lines are ignored. An item at
/// depth d+1 depends on every member of the run of consecutive depth-d siblings
/// that immediately precedes it; a deeper block in between breaks a run.
inline RecipeDag parse_nested_list(std::string_view text, std::string recipe_name = {})
{
    std::vector<detail::BulletLine> bullets;
    int line_no = 0;
    for (const auto& raw : split_lines(text)) {
        ++line_no;
        if (auto b = detail::parse_bullet(raw, line_no)) bullets.push_back(std::move(*b));
    }
    if (bullets.empty()) throw RecipeError(ErrorKind::EmptyRecipe, "no list items found");

    std::size_t base = bullets.front().indent;
    std::size_t unit = 0;
    for (const auto& b : bullets) {
        if (b.indent < base)
            throw RecipeError(ErrorKind::IndentationJump, "item is indented less than the first item", b.line_no);
        auto rel = b.indent - base;
        if (rel > 0 && (unit == 0 || rel < unit)) unit = rel;
    }

    RecipeDag dag(std::move(recipe_name));
    std::map<std::string, int> label_counts;
    // runs[d]: current run of consecutive siblings at depth d.
    // block_parents[d]: parents shared by every item in the open block at depth d.
    std::vector<std::vector<std::string>> runs;
    std::vector<std::vector<std::string>> block_parents;
    int prev_depth = -1;

    for (const auto& b : bullets) {
        auto rel = b.indent - base;
        if (unit != 0 && rel % unit != 0)
            throw RecipeError(ErrorKind::InconsistentIndent,
                              "indentation is not a multiple of " + std::to_string(unit) + " spaces", b.line_no);
        int depth = unit == 0 ? 0 : static_cast<int>(rel / unit);
        if (depth > prev_depth + 1)
            throw RecipeError(ErrorKind::IndentationJump,
                              "item at depth " + std::to_string(depth) + " follows depth " + std::to_string(prev_depth),
                              b.line_no);

        auto& count = label_counts[to_lower(b.label)];
        ++count;
        std::string id = count == 1 ? b.label : b.label + "#" + std::to_string(count);
        dag.add_node(id, b.label);

        auto d = static_cast<std::size_t>(depth);
        if (runs.size() <= d) {
            runs.resize(d + 1);
            block_parents.resize(d + 1);
        }
        if (depth == prev_depth + 1) {
            block_parents[d] = d == 0 ? std::vector<std::string>{} : runs[d - 1];
            runs[d] = {id};
        } else if (depth == prev_depth) {
            runs[d].push_back(id);
        } else {
            runs[d] = {id};
        }
        runs.resize(d + 1);
        block_parents.resize(d + 1);
        for (const auto& p : block_parents[d]) dag.add_edge(p, id);
        prev_depth = depth;
    }
    return dag;
}

/// Renders a DAG produced by parse_nested_list back to nested-list markup.
/// Requires the graph to follow the run/block structure the parser produces.
inline std::string render_nested_list(const RecipeDag& dag)
{
    // Group nodes into blocks keyed by their (sorted) parent set.
    std::map<std::vector<std::string>, std::vector<std::string>> blocks;
    for (const auto& n : dag.nodes()) {
        auto ps = dag.parents(n.id);
        std::sort(ps.begin(), ps.end());
        blocks[ps].push_back(n.id);
    }
    std::string out;
    auto emit_block = [&](auto&& self, const std::vector<std::string>& members, int depth) -> void {
        std::set<std::string> placed;
        std::vector<std::string> leaves;
        for (const auto& id : members) {
            if (placed.count(id)) continue;
            auto kids = dag.children(id);
            if (kids.empty()) {
                leaves.push_back(id);
                continue;
            }
            auto run = dag.parents(kids.front());
            std::sort(run.begin(), run.end());
            std::vector<std::string> ordered;
            for (const auto& m : members)
                if (std::binary_search(run.begin(), run.end(), m)) ordered.push_back(m);
            for (const auto& m : ordered) {
                out += std::string(static_cast<std::size_t>(depth) * 4, ' ') + "- " +
                       dag.node(m).label + '\n';
                placed.insert(m);
            }
            self(self, blocks.at(run), depth + 1);
        }
        for (const auto& id : leaves)
            out += std::string(static_cast<std::size_t>(depth) * 4, ' ') + "- " +
                   dag.node(id).label + '\n';
    };
    if (auto it = blocks.find({}); it != blocks.end()) emit_block(emit_block, it->second, 0);
    return out;
}

/// Recipe file: optional `recipe: <name>` header line followed by a nested list.
inline RecipeDag parse_recipe_file(std::string_view text)
{
    std::string name;
    for (const auto& line : split_lines(text)) {
        auto t = trim(line);
        if (starts_with_ci(t, "recipe:")) {
            name = trim(std::string_view(t).substr(7));
            break;
        }
    }
    return parse_nested_list(text, std::move(name));
}

inline std::string render_recipe_file(const RecipeDag& dag)
{
    return "recipe: " + dag.name() + "\n" + render_nested_list(dag);
}

/// Seed recipes keyed by lowercase name.
class RecipeLibrary {
public:
    void add(RecipeDag dag, std::string source = {})
    {
        auto key = to_lower(dag.name());
        sources_[key] = std::move(source);
        recipes_.insert_or_assign(key, std::move(dag));
    }

    static RecipeLibrary load_directory(const std::filesystem::path& dir)
    {
        RecipeLibrary lib;
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            auto text = read_file(f);
            auto dag = parse_recipe_file(text);
            if (dag.name().empty()) dag.set_name(f.stem().string());
            lib.add(std::move(dag), text);
        }
        return lib;
    }

    const RecipeDag* find(std::string_view name) const
    {
        auto it = recipes_.find(to_lower(trim(name)));
        return it == recipes_.end() ? nullptr : &it->second;
    }

    const std::string& source(std::string_view name) const { return sources_.at(to_lower(trim(name))); }

    /// Display names in sorted order.
    std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        for (const auto& [_, dag] : recipes_) out.push_back(dag.name());
        return out;
    }

    bool empty() const noexcept { return recipes_.empty(); }

private:
    std::map<std::string, RecipeDag> recipes_;
    std::map<std::string, std::string> sources_;
};

} // namespace taskplanner::recipe
