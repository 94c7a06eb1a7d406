#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "taskplanner/recipe_graph.hpp"

#include <set>

using namespace taskplanner;
using namespace taskplanner::recipe;

namespace {

std::set<std::string> labels_of(const RecipeDag& dag, const std::vector<std::string>& ids)
{
    std::set<std::string> out;
    for (const auto& id : ids) out.insert(dag.node(id).label);
    return out;
}

RecipeDag load_fixture(const std::string& file)
{
    return parse_recipe_file(read_file(std::string(TASKPLANNER_DATA_DIR) + "/recipes/" + file));
}

std::string id_for(const RecipeDag& dag, const std::string& label)
{
    auto ids = dag.ids_for_label(label);
    EXPECT_FALSE(ids.empty()) << label;
    return ids.empty() ? std::string() : ids.front();
}

} // namespace

TEST(NestedList, ChildDependsOnParent)
{
    auto dag = parse_nested_list("- fetch butter\n    * melt butter\n");
    EXPECT_EQ(dag.nodes().size(), 2u);
    EXPECT_EQ(dag.edges(), (std::set<std::pair<std::string, std::string>>{{"fetch butter", "melt butter"}}));
}

TEST(NestedList, SingleItem)
{
    auto dag = parse_nested_list("- get salt");
    EXPECT_TRUE(dag.edges().empty());
    EXPECT_EQ(labels_of(dag, available_subtasks(dag)), (std::set<std::string>{"get salt"}));
}

TEST(NestedList, RunOfSiblingsAllBecomeParents)
{
    auto dag = parse_nested_list("- a\n- b\n    - c\n");
    EXPECT_EQ(dag.parents("c"), (std::vector<std::string>{"a", "b"}));
}

TEST(NestedList, DeeperBlockBreaksRun)
{
    auto dag = parse_nested_list("- a\n    - x\n- b\n    - c\n");
    EXPECT_EQ(dag.parents("c"), (std::vector<std::string>{"b"}));
    EXPECT_EQ(dag.parents("x"), (std::vector<std::string>{"a"}));
}

TEST(NestedList, ProseIgnored)
{
    auto dag = parse_nested_list("# Reasoning\nfirst do this\n- a\nthen\n  - b\n");
    EXPECT_EQ(dag.nodes().size(), 2u);
    EXPECT_EQ(dag.parents("b"), (std::vector<std::string>{"a"}));
}

TEST(NestedList, TabsCountAsFourSpaces)
{
    auto a = parse_nested_list("- a\n\t- b\n\t\t- c\n");
    auto b = parse_nested_list("- a\n    - b\n        - c\n");
    EXPECT_EQ(a.edges(), b.edges());
}

TEST(NestedList, Errors)
{
    try {
        parse_nested_list("- a\n        - b\n    - c\n");
        FAIL();
    } catch (const RecipeError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::IndentationJump);
        EXPECT_EQ(e.line(), 2);
    }
    try {
        parse_nested_list("just prose\n");
        FAIL();
    } catch (const RecipeError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyRecipe);
    }
    try {
        parse_nested_list("- a\n    - b\n      - c\n");
        FAIL();
    } catch (const RecipeError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InconsistentIndent);
        EXPECT_EQ(e.line(), 3);
    }
}

TEST(NestedList, DuplicateLabelsGetSuffix)
{
    auto dag = parse_nested_list("- stir pot\n    - add salt\n        - stir pot\n");
    EXPECT_TRUE(dag.contains("stir pot"));
    EXPECT_TRUE(dag.contains("stir pot#2"));
    EXPECT_EQ(dag.node("stir pot#2").label, "stir pot");
}

TEST(NestedList, MatchesReferenceParserOnRandomOutlines)
{
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        auto items = oracle::random_outline(rng, 1 + rng.below(20));
        auto text = oracle::outline_text(rng, items);
        auto dag = parse_nested_list(text);
        ASSERT_EQ(dag.nodes().size(), items.size()) << text;
        ASSERT_EQ(dag.edges(), oracle::outline_edges(items)) << text;
    }
}

TEST(NestedList, RenderRoundTrip)
{
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        auto items = oracle::random_outline(rng, 1 + rng.below(20));
        auto dag = parse_nested_list(oracle::outline_text(rng, items), "r");
        auto again = parse_nested_list(render_nested_list(dag), "r");
        ASSERT_EQ(again.edges(), dag.edges()) << render_nested_list(dag);
        std::set<std::string> a, b;
        for (const auto& n : dag.nodes()) a.insert(n.id);
        for (const auto& n : again.nodes()) b.insert(n.id);
        ASSERT_EQ(a, b);
    }
}

TEST(Dag, RejectsMalformedEdges)
{
    RecipeDag dag("x");
    dag.add_node("a", "a");
    dag.add_node("b", "b");
    dag.add_edge("a", "b");
    auto kind_of = [&](auto f) {
        try {
            f();
        } catch (const RecipeError& e) {
            return e.kind();
        }
        return ErrorKind::EmptyRecipe;
    };
    EXPECT_EQ(kind_of([&] { dag.add_edge("a", "a"); }), ErrorKind::InvalidEdge);
    EXPECT_EQ(kind_of([&] { dag.add_edge("a", "b"); }), ErrorKind::InvalidEdge);
    EXPECT_EQ(kind_of([&] { dag.add_edge("a", "zzz"); }), ErrorKind::InvalidEdge);
    EXPECT_EQ(kind_of([&] { dag.add_edge("b", "a"); }), ErrorKind::CycleDetected);
    EXPECT_EQ(kind_of([&] { dag.add_node("a", "again"); }), ErrorKind::DuplicateLabel);
    EXPECT_EQ(kind_of([&] { dag.add_node("c", "  "); }), ErrorKind::EmptyLabel);
    EXPECT_EQ(kind_of([&] { mark_done(dag, "nope"); }), ErrorKind::UnknownSubtask);
}

TEST(Dag, InjectedBackEdgesAreRejected)
{
    Rng rng(5);
    int rejected = 0;
    for (int trial = 0; trial < 300; ++trial) {
        auto g = oracle::random_dag(rng, 12);
        if (g.edges.empty()) continue;
        RecipeDag dag("r");
        for (std::size_t v = 0; v < g.n; ++v) dag.add_node("n" + std::to_string(v), "n" + std::to_string(v));
        for (const auto& [a, b] : g.edges) dag.add_edge("n" + std::to_string(a), "n" + std::to_string(b));
        // walk a path forward, then try to close it
        auto [a, b] = g.edges[rng.below(g.edges.size())];
        std::size_t end = b;
        for (bool moved = true; moved;) {
            moved = false;
            for (const auto& [x, y] : g.edges)
                if (x == end && rng.below(2)) {
                    end = y;
                    moved = true;
                    break;
                }
        }
        try {
            dag.add_edge("n" + std::to_string(end), "n" + std::to_string(a));
            FAIL() << "cycle accepted";
        } catch (const RecipeError& e) {
            EXPECT_EQ(e.kind(), ErrorKind::CycleDetected);
            ++rejected;
        }
    }
    EXPECT_GT(rejected, 100);
}

TEST(Frontier, MatchesBruteForceOnRandomDags)
{
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto g = oracle::random_dag(rng, 12);
        RecipeDag dag("r");
        for (std::size_t v = 0; v < g.n; ++v) dag.add_node(std::to_string(v), "t" + std::to_string(v));
        for (const auto& [a, b] : g.edges) dag.add_edge(std::to_string(a), std::to_string(b));
        std::vector<std::size_t> order(g.n);
        for (std::size_t i = 0; i < g.n; ++i) order[i] = i;
        for (std::size_t i = g.n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        std::vector<bool> done(g.n, false);
        for (std::size_t k = 0; k <= g.n; ++k) {
            std::set<std::size_t> got;
            for (const auto& id : available_subtasks(dag)) got.insert(std::stoul(id));
            ASSERT_EQ(got, oracle::frontier(g, done));
            bool all_done = std::all_of(done.begin(), done.end(), [](bool b) { return b; });
            ASSERT_EQ(is_finished(dag), all_done);
            if (k == g.n) break;
            auto before = available_subtasks(dag);
            dag = mark_done(dag, std::to_string(order[k])).dag;
            done[order[k]] = true;
            // monotonicity: only the marked node may leave the frontier
            auto after = available_subtasks(dag);
            for (const auto& id : before)
                if (id != std::to_string(order[k]))
                    ASSERT_NE(std::find(after.begin(), after.end(), id), after.end());
        }
    }
}

TEST(Frontier, EveryTopologicalOrderFinishes)
{
    Rng rng(9);
    for (int trial = 0; trial < 60; ++trial) {
        auto g = oracle::random_dag(rng, 8);
        RecipeDag dag("r");
        for (std::size_t v = 0; v < g.n; ++v) dag.add_node(std::to_string(v), "t" + std::to_string(v));
        for (const auto& [a, b] : g.edges) dag.add_edge(std::to_string(a), std::to_string(b));
        std::vector<std::vector<std::size_t>> orders;
        std::vector<std::size_t> prefix;
        std::vector<bool> used(g.n, false);
        oracle::topological_orders(g, prefix, used, orders);
        ASSERT_FALSE(orders.empty());
        for (const auto& order : orders) {
            auto d = dag;
            for (auto v : order) {
                ASSERT_FALSE(is_finished(d));
                auto r = mark_done(d, std::to_string(v));
                ASSERT_FALSE(r.out_of_order);
                d = r.dag;
            }
            ASSERT_TRUE(is_finished(d));
            ASSERT_TRUE(available_subtasks(d).empty());
        }
    }
}

TEST(Frontier, MarkDoneIdempotentAndOutOfOrderFlagged)
{
    auto dag = parse_nested_list("- a\n    - b\n");
    auto once = mark_done(dag, "a").dag;
    EXPECT_EQ(mark_done(once, "a").dag, once);
    auto skip = mark_done(dag, "b");
    EXPECT_TRUE(skip.out_of_order);
    EXPECT_TRUE(skip.dag.is_done("b"));
}

TEST(Fixtures, CaesarSaladFrontier)
{
    auto dag = load_fixture("caesar_salad.txt");
    EXPECT_EQ(dag.name(), "Caesar Salad");
    EXPECT_EQ(labels_of(dag, available_subtasks(dag)),
              (std::set<std::string>{"Prepare lettuce", "Get pepper", "Get ranch sauce"}));
    dag = mark_done(dag, id_for(dag, "Get pepper")).dag;
    auto now = labels_of(dag, available_subtasks(dag));
    EXPECT_TRUE(now.count("Pour pepper into bowl"));
    EXPECT_FALSE(now.count("Get pepper"));
}

TEST(Fixtures, ChickenNoodleSoup)
{
    auto text = read_file(std::string(TASKPLANNER_DATA_DIR) + "/recipes/chicken_noodle_soup.txt");
    std::size_t bullets = 0;
    for (const auto& line : split_lines(text)) {
        auto t = trim(line);
        if (t.size() > 2 && (t[0] == '-' || t[0] == '*' || t[0] == '+') && t[1] == ' ') ++bullets;
    }
    auto dag = parse_recipe_file(text);
    EXPECT_EQ(dag.nodes().size(), bullets);
    EXPECT_NO_THROW(dag.validate());

    auto first = dag.parents("stir pot");
    std::set<std::string> first_stir(first.begin(), first.end());
    EXPECT_EQ(first_stir, (std::set<std::string>{"pour onion into pot", "pour celery into pot"}));

    auto second = dag.parents("stir pot#2");
    std::set<std::string> got(second.begin(), second.end());
    std::set<std::string> want{"pour chicken broth into pot", "pour vegetable broth into pot", "pour chicken into pot",
                               "pour egg noodles into pot",   "poor carrots into pot",          "pour basil into pot",
                               "pour oregano into pot",       "season soup with salt",          "season soup with pepper"};
    EXPECT_EQ(got, want);
    EXPECT_EQ(dag.parents("simmer for 20 minutes"), (std::vector<std::string>{"stir pot#2"}));
}

TEST(Library, LoadsAllSeedRecipes)
{
    auto lib = RecipeLibrary::load_directory(std::string(TASKPLANNER_DATA_DIR) + "/recipes");
    auto names = lib.names();
    EXPECT_GE(names.size(), 8u);
    ASSERT_NE(lib.find("tossed salad"), nullptr);
    EXPECT_EQ(lib.find("TOSSED SALAD")->name(), "Tossed Salad");
    EXPECT_EQ(lib.find("burger"), nullptr);
    for (const auto& n : names) {
        auto dag = *lib.find(n);
        EXPECT_EQ(render_recipe_file(parse_recipe_file(render_recipe_file(dag))), render_recipe_file(dag));
    }
}
