#pragma once

// Loose matching between free text and subtask labels: lowercase, strip
// punctuation and articles, and compare crude word stems.

#include "taskplanner/common.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace taskplanner::text {

inline bool is_stop_word(const std::string& w)
{
    static const std::set<std::string> words{"a",  "an", "the", "some", "into", "in",  "on",   "at",   "to",
                                             "of", "for", "with", "my",  "me",   "your", "our", "this", "that"};
    return words.count(w) > 0;
}

/// Lowercase words with punctuation removed ("R2's" -> "r2s").
inline std::vector<std::string> words(std::string_view s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur += static_cast<char>(std::tolower(u));
        } else if (c == '\'') {
            continue;
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string stem(std::string w)
{
    if (w == "got" || w == "gotten") return "get";
    if (w == "brought") return "bring";
    // minimum stem length keeps short words such as "bread" or "bring" intact
    auto ends = [&](std::string_view suf, std::size_t min_stem) {
        return w.size() >= suf.size() + min_stem && w.compare(w.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends("ing", 3))
        w.resize(w.size() - 3);
    else if (ends("ed", 4))
        w.resize(w.size() - 2);
    else if (ends("oes", 2) || ends("xes", 2) || ends("ches", 2) || ends("shes", 2))
        w.resize(w.size() - 2);
    else if (ends("s", 3) && !ends("ss", 1))
        w.resize(w.size() - 1);
    else
        return w;
    if (w.size() > 2 && w.back() == w[w.size() - 2] && std::string_view("aeiouls").find(w.back()) == std::string_view::npos)
        w.pop_back();
    return w;
}

/// Label normalized for comparison: lowercase, no punctuation, no articles.
inline std::string normalize(std::string_view label)
{
    std::vector<std::string> kept;
    for (auto& w : words(label))
        if (w != "a" && w != "an" && w != "the" && w != "some") kept.push_back(std::move(w));
    return join(kept, " ");
}

inline bool same_label(std::string_view a, std::string_view b) { return normalize(a) == normalize(b); }

/// Stemmed content words of a label.
inline std::set<std::string> content_stems(std::string_view text)
{
    std::set<std::string> out;
    for (const auto& w : words(text))
        if (!is_stop_word(w)) out.insert(stem(w));
    return out;
}

/// True when every content word of `label` occurs in `text`.
inline bool mentions(std::string_view text, std::string_view label)
{
    auto need = content_stems(label);
    if (need.empty()) return false;
    auto have = content_stems(text);
    return std::all_of(need.begin(), need.end(), [&](const std::string& w) { return have.count(w) > 0; });
}

/// Labels from `candidates` mentioned in `text`. A label is dropped when a
/// longer mentioned label contains all of its words.
inline std::vector<std::string> mentioned_labels(std::string_view text, const std::vector<std::string>& candidates)
{
    std::vector<std::string> hits;
    for (const auto& c : candidates)
        if (mentions(text, c) && std::none_of(hits.begin(), hits.end(), [&](const std::string& h) { return same_label(h, c); }))
            hits.push_back(c);
    std::vector<std::string> out;
    for (const auto& h : hits) {
        auto mine = content_stems(h);
        bool covered = std::any_of(hits.begin(), hits.end(), [&](const std::string& o) {
            if (same_label(o, h)) return false;
            auto theirs = content_stems(o);
            return theirs.size() > mine.size() &&
                   std::includes(theirs.begin(), theirs.end(), mine.begin(), mine.end());
        });
        if (!covered) out.push_back(h);
    }
    return out;
}

inline bool has_word(std::string_view text, std::initializer_list<const char*> options)
{
    auto ws = words(text);
    for (const char* o : options) {
        auto ow = words(o);
        if (ow.empty()) continue;
        for (std::size_t i = 0; i + ow.size() <= ws.size(); ++i)
            if (std::equal(ow.begin(), ow.end(), ws.begin() + static_cast<std::ptrdiff_t>(i))) return true;
    }
    return false;
}

/// Robot ids mentioned in the text, in R2, R1 order.
inline std::vector<std::string> robots_mentioned(std::string_view text)
{
    std::vector<std::string> out;
    auto ws = words(text);
    for (const char* id : {"R2", "R1"}) {
        auto l = to_lower(id);
        if (std::any_of(ws.begin(), ws.end(), [&](const std::string& w) { return w == l || w == l + "s"; })) out.push_back(id);
    }
    return out;
}

} // namespace taskplanner::text
