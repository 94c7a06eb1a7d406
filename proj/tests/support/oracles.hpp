#pragma once

// Independent reference implementations used as test oracles. They are
// written naively on purpose and share no code with the library.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "taskplanner/common.hpp"

namespace oracle {

struct Item {
    int depth;
    std::string label;
};

/// Random nested-list shape: depth of item i+1 is anywhere in [0, depth_i + 1].
inline std::vector<Item> random_outline(taskplanner::Rng& rng, std::size_t n)
{
    std::vector<Item> items;
    int depth = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) depth = static_cast<int>(rng.below(static_cast<std::size_t>(depth) + 2));
        items.push_back({depth, "task " + std::to_string(i)});
    }
    return items;
}

/// Renders an outline with a random indent style, random markers and
/// interleaved prose lines.
inline std::string outline_text(taskplanner::Rng& rng, const std::vector<Item>& items)
{
    static const char* markers = "-*+";
    const std::size_t unit = 2 + rng.below(3);
    const bool tabs = rng.below(4) == 0;
    std::string out = "# Subtasks as nested list:\n";
    for (const auto& it : items) {
        if (rng.below(6) == 0) out += "some prose that is not a bullet\n";
        if (tabs)
            out += std::string(static_cast<std::size_t>(it.depth), '\t');
        else
            out += std::string(static_cast<std::size_t>(it.depth) * unit, ' ');
        out += markers[rng.below(3)];
        out += ' ' + it.label + "\n";
    }
    return out;
}

/// Edges by backward scan: the item's parent is the nearest earlier item one
/// level up, together with the unbroken run of same-depth items right before
/// that parent.
inline std::set<std::pair<std::string, std::string>> outline_edges(const std::vector<Item>& items)
{
    std::set<std::pair<std::string, std::string>> edges;
    for (std::size_t i = 0; i < items.size(); ++i) {
        int d = items[i].depth;
        if (d == 0) continue;
        std::size_t j = i;
        while (j > 0 && items[j - 1].depth != d - 1) --j;
        if (j == 0) continue;
        std::size_t k = j - 1; // nearest parent
        while (true) {
            edges.insert({items[k].label, items[i].label});
            if (k == 0 || items[k - 1].depth != d - 1) break;
            --k;
        }
    }
    return edges;
}

struct Graph {
    std::size_t n = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges; // from < to
};

inline Graph random_dag(taskplanner::Rng& rng, std::size_t max_nodes)
{
    Graph g;
    g.n = 1 + rng.below(max_nodes);
    double density = rng.uniform() * 0.5;
    for (std::size_t a = 0; a < g.n; ++a)
        for (std::size_t b = a + 1; b < g.n; ++b)
            if (rng.uniform() < density) g.edges.push_back({a, b});
    return g;
}

/// All-parents-done frontier by exhaustive edge scan.
inline std::set<std::size_t> frontier(const Graph& g, const std::vector<bool>& done)
{
    std::set<std::size_t> out;
    for (std::size_t v = 0; v < g.n; ++v) {
        if (done[v]) continue;
        bool ready = true;
        for (const auto& [a, b] : g.edges)
            if (b == v && !done[a]) ready = false;
        if (ready) out.insert(v);
    }
    return out;
}

/// Every topological order of a small graph.
inline void topological_orders(const Graph& g, std::vector<std::size_t>& prefix, std::vector<bool>& used,
                               std::vector<std::vector<std::size_t>>& out)
{
    if (prefix.size() == g.n) {
        out.push_back(prefix);
        return;
    }
    for (std::size_t v = 0; v < g.n; ++v) {
        if (used[v]) continue;
        bool ready = true;
        for (const auto& [a, b] : g.edges)
            if (b == v && !used[a]) ready = false;
        if (!ready) continue;
        used[v] = true;
        prefix.push_back(v);
        topological_orders(g, prefix, used, out);
        prefix.pop_back();
        used[v] = false;
    }
}

} // namespace oracle
