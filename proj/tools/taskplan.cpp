// Headless driver: scenario runs, suite evaluation, DAG inspection,
// transcript replay and checking, and the HTTP service.
//
// Exit codes: 0 success, 1 scenario or check failure, 2 configuration error.

#include "taskplanner/eval_harness.hpp"
#include "taskplanner/http_api.hpp"
#include "taskplanner/live_backend.hpp"
#include "taskplanner/recipe_graph.hpp"
#include "taskplanner/scripted_policy.hpp"
#include "taskplanner/session_service.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <iostream>
#include <memory>
#include <string>

#ifndef TASKPLANNER_DEFAULT_DATA_DIR
#define TASKPLANNER_DEFAULT_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace taskplanner;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string data_dir = TASKPLANNER_DEFAULT_DATA_DIR;
    std::string world;
    std::string faults;
    std::string planner = "tree";
    std::string backend = "scripted";
    std::string recordings;
    double sloppy = 0.0;
    bool refuse_reassign = false;
};

fs::path in_data(const Common& c, const std::string& value, const std::string& fallback)
{
    fs::path p(value.empty() ? fallback : value);
    if (p.is_absolute() || fs::exists(p)) return p;
    return fs::path(c.data_dir) / p;
}

std::string require_file(const fs::path& p, const std::string& what)
{
    if (!fs::exists(p)) throw ConfigError(what + " not found: " + p.string());
    return read_file(p);
}

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--data", c.data_dir, "Asset directory (tree.json, skills.json, prompts/, recipes/)");
    cmd->add_option("--world", c.world, "World file (default: <data>/world.json)");
    cmd->add_option("--faults", c.faults, "Fault file (default: <data>/faults/none.json)");
    cmd->add_option("--planner", c.planner, "Planner kind")->check(CLI::IsMember({"tree", "one-prompt"}));
    cmd->add_option("--backend", c.backend, "Model backend")->check(CLI::IsMember({"scripted", "replay", "live"}));
    cmd->add_option("--recordings", c.recordings, "Recorded model responses for the replay backend");
    cmd->add_option("--sloppy", c.sloppy, "Scripted backend: corrupt this fraction of planner answers")->check(CLI::Range(0.0, 1.0));
    cmd->add_flag("--refuse-reassign", c.refuse_reassign, "Scripted backend: decline reassignment requests");
}

struct Env {
    planner::PlannerAssets assets;
    runtime::World world;
    runtime::FaultConfig faults;
};

Env load_env(const Common& c)
{
    if (!fs::exists(fs::path(c.data_dir) / "tree.json")) throw ConfigError("no tree.json under data directory " + c.data_dir);
    try {
        Env e{planner::PlannerAssets::load(c.data_dir),
              runtime::World::from_json(json::parse(require_file(in_data(c, c.world, "world.json"), "world file"))),
              runtime::FaultConfig::from_json(json::parse(require_file(in_data(c, c.faults, "faults/none.json"), "fault file")))};
        return e;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& ex) {
        throw ConfigError(std::string("cannot load assets: ") + ex.what());
    }
}

/// Backend plus whatever it borrows.
struct BackendHandle {
    std::shared_ptr<const policy::CompliantPolicy> compliant;
    std::shared_ptr<policy::SloppyPolicy> sloppy;
    std::unique_ptr<llm::Backend> backend;
};

BackendHandle make_backend(const Common& c, const planner::PlannerAssets& assets, std::uint64_t seed)
{
    BackendHandle h;
    if (c.backend == "replay") {
        if (c.recordings.empty()) throw ConfigError("--backend replay needs --recordings");
        h.backend = std::make_unique<llm::ReplayBackend>(llm::RecordingLog::parse_jsonl(require_file(c.recordings, "recordings file")));
        return h;
    }
    if (c.backend == "live") {
        auto cfg = llm::LiveConfig::from_env();
        if (cfg.base_url.empty()) throw ConfigError("the live backend needs TASKPLANNER_LLM_BASE_URL");
        h.backend = llm::make_live_backend(cfg);
        return h;
    }
    h.compliant = std::make_shared<const policy::CompliantPolicy>(assets, policy::PolicyOptions{c.refuse_reassign});
    if (c.sloppy > 0.0) {
        auto sloppy = std::make_shared<policy::SloppyPolicy>(h.compliant, assets, c.sloppy, seed);
        h.sloppy = sloppy;
        h.backend = policy::make_backend([sloppy](const llm::CompletionRequest& r) { return sloppy->respond(r); });
    } else {
        auto pol = h.compliant;
        h.backend = policy::make_backend([pol](const llm::CompletionRequest& r) { return pol->respond(r); });
    }
    return h;
}

eval::PersonaScript nominal_persona(const std::string& recipe)
{
    eval::PersonaScript p;
    p.name = "nominal";
    p.recipe = recipe;
    p.level = "nominal";
    return p;
}

// -------------------------------------------------------------------- run

struct RunArgs {
    Common common;
    std::string recipe;
    std::string persona;
    std::uint64_t seed = 0;
    std::string out = "out";
};

int cmd_run(const RunArgs& a)
{
    auto env = load_env(a.common);
    eval::PersonaScript persona;
    if (!a.persona.empty()) {
        if (!fs::exists(a.persona)) throw ConfigError("persona file not found: " + a.persona);
        try {
            persona = eval::PersonaScript::load(a.persona);
        } catch (const eval::EvalError& e) {
            throw ConfigError(e.what());
        }
        if (!a.recipe.empty()) persona.recipe = a.recipe;
    } else if (!a.recipe.empty()) {
        persona = nominal_persona(a.recipe);
    } else {
        throw ConfigError("run needs --persona or --recipe");
    }
    if (!env.assets.recipes.find(persona.recipe)) throw ConfigError("recipe '" + persona.recipe + "' is not in the library");

    auto handle = make_backend(a.common, env.assets, a.seed);
    eval::ScenarioOptions opt;
    opt.planner_kind = a.common.planner;
    opt.backend_kind = a.common.backend;
    opt.seed = a.seed;
    opt.session_id = persona.name + "-" + std::to_string(a.seed);
    auto result = eval::run_scenario(env.assets, env.world, env.faults, persona, *handle.backend, opt);
    auto record = eval::make_record(result, persona, env.assets, opt);

    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "transcript.jsonl", result.transcript);
    write_file(fs::path(a.out) / "recordings.jsonl", result.recordings);
    json report = record.to_json();
    auto check = eval::revalidate_committed(result.events, env.assets);
    report["revalidation"] = json{{"committed", check.committed}, {"invalid", check.invalid}, {"problems", check.problems}};
    write_file(fs::path(a.out) / "report.json", report.dump(2) + "\n");
    std::cout << eval::runs_table({record});
    if (!result.finished) std::cerr << "scenario did not finish: " << result.outcome << "\n";
    return result.finished ? kOk : kFailure;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    Common common;
    std::string suite;
    std::string out = "eval_out";
    std::vector<std::string> planners;
    std::vector<double> sweep;
    int seeds = 50;
    std::uint64_t seed = 1;
};

int cmd_sweep(const EvalArgs& a, const Env& env, const eval::Suite& suite)
{
    auto inner = std::make_shared<const policy::CompliantPolicy>(env.assets);
    std::vector<std::vector<std::string>> rows;
    json cells = json::array();
    auto planners = a.planners.empty() ? std::vector<std::string>{"tree", "one-prompt"} : a.planners;
    for (double p : a.sweep) {
        json row{{"p", p}};
        std::vector<std::string> cells_text{eval::fixed(p, 2)};
        for (const auto& pk : planners) {
            int passed = 0, injected = 0, invalid = 0, committed = 0;
            for (int s = 0; s < a.seeds; ++s) {
                auto seed = a.seed + static_cast<std::uint64_t>(s);
                const auto& persona = eval::sweep_persona(suite.personas, seed);
                auto sloppy = std::make_shared<policy::SloppyPolicy>(inner, env.assets, p, seed);
                auto backend = policy::make_backend([sloppy](const llm::CompletionRequest& r) { return sloppy->respond(r); });
                eval::ScenarioOptions opt;
                opt.planner_kind = pk;
                opt.seed = seed;
                opt.session_id = persona.name + "-" + std::to_string(seed);
                auto r = eval::run_scenario(env.assets, env.world, env.faults, persona, *backend, opt);
                auto score = eval::score_unit_tests(r.events, persona, env.assets);
                passed += score.passed;
                injected += score.injected;
                auto c = eval::revalidate_committed(r.events, env.assets);
                committed += c.committed;
                invalid += c.invalid;
            }
            double rate = injected ? static_cast<double>(passed) / injected : 1.0;
            row[pk] = json{{"passed", passed}, {"injected", injected}, {"pass_rate", rate}, {"committed", committed}, {"invalid", invalid}};
            cells_text.push_back(eval::fixed(rate));
        }
        cells.push_back(row);
        rows.push_back(cells_text);
    }
    std::vector<std::string> header{"p"};
    header.insert(header.end(), planners.begin(), planners.end());
    auto table = eval::format_table(header, rows);
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "sweep.json", json{{"seeds", a.seeds}, {"cells", cells}}.dump(2) + "\n");
    write_file(fs::path(a.out) / "sweep.txt", table);
    std::cout << table;
    return kOk;
}

int cmd_eval(const EvalArgs& a)
{
    auto env = load_env(a.common);
    eval::Suite suite;
    try {
        suite = eval::Suite::load(a.suite);
    } catch (const eval::EvalError& e) {
        throw ConfigError(e.what());
    }
    for (const auto& p : suite.personas)
        if (!env.assets.recipes.find(p.recipe)) throw ConfigError("suite recipe '" + p.recipe + "' is not in the library");
    if (!a.sweep.empty()) return cmd_sweep(a, env, suite);

    auto planners = a.planners.empty() ? suite.planners : a.planners;
    std::vector<eval::RunRecord> records;
    fs::path runs_dir = fs::path(a.out) / "runs";
    fs::create_directories(runs_dir);
    for (const auto& pk : planners)
        for (std::size_t i = 0; i < suite.personas.size(); ++i)
            for (int rep = 0; rep < suite.reps; ++rep) {
                const auto& persona = suite.personas[i];
                auto seed = eval::run_seed(suite.seed, i, rep);
                auto handle = make_backend(a.common, env.assets, seed);
                eval::ScenarioOptions opt;
                opt.planner_kind = pk;
                opt.backend_kind = a.common.backend;
                opt.seed = seed;
                opt.run = static_cast<std::uint64_t>(rep);
                opt.session_id = persona.name + "-" + std::to_string(seed);
                auto r = eval::run_scenario(env.assets, env.world, env.faults, persona, *handle.backend, opt);
                write_file(runs_dir / (persona.name + "_" + pk + "_" + std::to_string(seed) + ".jsonl"), r.transcript);
                records.push_back(eval::make_record(r, persona, env.assets, opt));
            }
    auto aggs = eval::aggregate(records);
    json report{{"suite", suite.name}, {"runs", json::array()}, {"aggregate", json::array()}};
    for (const auto& r : records) report["runs"].push_back(r.to_json());
    for (const auto& g : aggs) report["aggregate"].push_back(g.to_json());
    auto text = eval::runs_table(records) + "\n" + eval::aggregate_table(aggs);
    write_file(fs::path(a.out) / "report.json", report.dump(2) + "\n");
    write_file(fs::path(a.out) / "report.txt", text);
    std::cout << text;
    return kOk;
}

// -------------------------------------------------------------------- dag

int cmd_dag(const std::string& path, bool as_json)
{
    auto text = require_file(path, "recipe file");
    recipe::RecipeDag dag("");
    try {
        dag = recipe::parse_recipe_file(text);
    } catch (const recipe::RecipeError& e) {
        std::cerr << path << ": " << e.what() << "\n";
        return kFailure;
    }
    auto frontier = recipe::available_subtasks(dag);
    if (as_json) {
        json nodes = json::array();
        for (const auto& n : dag.nodes()) nodes.push_back({{"id", n.id}, {"label", n.label}});
        json edges = json::array();
        for (const auto& [from, to] : dag.edges()) edges.push_back({from, to});
        std::cout << json{{"name", dag.name()}, {"nodes", nodes}, {"edges", edges}, {"frontier", frontier}}.dump(2) << "\n";
        return kOk;
    }
    std::cout << "recipe: " << dag.name() << "\n";
    std::cout << "nodes (" << dag.nodes().size() << "):\n";
    for (const auto& n : dag.nodes()) std::cout << "  " << n.id << (n.id != n.label ? "  [" + n.label + "]" : "") << "\n";
    std::cout << "edges (" << dag.edges().size() << "):\n";
    for (const auto& [from, to] : dag.edges()) std::cout << "  " << from << " -> " << to << "\n";
    std::cout << "frontier (" << frontier.size() << "):\n";
    for (const auto& id : frontier) std::cout << "  " << id << "\n";
    return kOk;
}

// ------------------------------------------------------- replay and check

int cmd_check(const std::string& path, const std::string& persona_path, const Common& c)
{
    auto events = eval::parse_transcript(require_file(path, "transcript"));
    std::vector<eval::ViolationReport> reports;
    try {
        reports = eval::check_violations(events);
    } catch (const eval::EvalError& e) {
        std::cerr << e.what() << "\n";
        return kConfigError;
    }
    json out{{"violations", json::array()}, {"counts", eval::count_by_category(reports)}};
    for (const auto& r : reports) out["violations"].push_back(r.to_json());
    if (!persona_path.empty()) {
        auto env = load_env(c);
        out["unit_tests"] = eval::score_unit_tests(events, eval::PersonaScript::load(persona_path), env.assets).to_json();
    }
    std::cout << out.dump(2) << "\n";
    return reports.empty() ? kOk : kFailure;
}

/// Folds a transcript and, given recordings, re-executes it through the
/// replay backend and compares the result byte for byte.
int cmd_replay(const std::string& path, const Common& c)
{
    auto text = require_file(path, "transcript");
    auto events = eval::parse_transcript(text);
    auto state = planner::fold(events);
    std::cout << state.to_json().dump(2) << "\n";
    if (c.recordings.empty()) return kOk;

    if (events.empty() || events.front().kind != "session_created") throw ConfigError("transcript does not start with session_created");
    const auto& created = events.front().payload;
    if (!created.contains("persona")) throw ConfigError("transcript carries no persona; it was not produced by a scenario run");
    auto env = load_env(c);
    auto persona = eval::PersonaScript::from_json(created.at("persona"));
    llm::ReplayBackend backend(llm::RecordingLog::parse_jsonl(require_file(c.recordings, "recordings file")));
    eval::ScenarioOptions opt;
    opt.planner_kind = created.value("planner_kind", "tree");
    opt.backend_kind = created.value("backend_kind", "scripted");
    opt.seed = created.value("seed", std::uint64_t{0});
    opt.run = created.value("run", std::uint64_t{0});
    opt.session_id = created.value("session_id", "scenario");
    auto again = eval::run_scenario(env.assets, env.world, env.faults, persona, backend, opt);
    bool same = again.transcript == text;
    std::cerr << (same ? "replay identical" : "replay differs") << "\n";
    return same ? kOk : kFailure;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const std::string& root, const std::string& host, int port, int tick_ms, const Common& c)
{
    service::SessionService svc(root, fs::absolute(c.data_dir));
    httplib::Server server;
    service::mount(server, svc);
    std::unique_ptr<service::BackgroundClock> clock;
    if (tick_ms > 0) clock = std::make_unique<service::BackgroundClock>(svc, std::chrono::milliseconds(tick_ms));
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    std::thread watcher([&] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
    });
    std::cerr << "listening on " << host << ":" << port << " (sessions under " << root << ")\n";
    bool ok = server.listen(host, port);
    g_stop = true;
    watcher.join();
    return ok ? kOk : kFailure;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Kitchen task planner: scenarios, evaluation and service"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Run one scripted scenario and write its transcript");
    add_common(run_cmd, run.common);
    run_cmd->add_option("--recipe", run.recipe, "Recipe name (overrides the persona's)");
    run_cmd->add_option("--persona", run.persona, "Persona file");
    run_cmd->add_option("--seed", run.seed, "Seed")->required();
    run_cmd->add_option("--out", run.out, "Output directory");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Run a suite of personas and write report tables");
    add_common(eval_cmd, ev.common);
    eval_cmd->add_option("--suite", ev.suite, "Suite manifest")->required();
    eval_cmd->add_option("--out", ev.out, "Output directory");
    eval_cmd->add_option("--planners", ev.planners, "Planner kinds (default: from the suite)")->delimiter(',');
    eval_cmd->add_option("--sweep", ev.sweep, "Sloppy-backend sweep over these corruption rates")->delimiter(',');
    eval_cmd->add_option("--seeds", ev.seeds, "Seeds per sweep cell")->check(CLI::PositiveNumber);
    eval_cmd->add_option("--seed", ev.seed, "First sweep seed");

    std::string dag_path;
    bool dag_json = false;
    auto* dag_cmd = app.add_subcommand("dag", "Print nodes, edges and initial frontier of a recipe file");
    dag_cmd->add_option("path", dag_path, "Recipe file")->required();
    dag_cmd->add_flag("--json", dag_json, "Machine-readable output");

    std::string replay_path;
    Common replay_common;
    auto* replay_cmd = app.add_subcommand("replay", "Fold a transcript; with --recordings, re-execute and compare");
    replay_cmd->add_option("transcript", replay_path, "Transcript (JSON lines)")->required();
    add_common(replay_cmd, replay_common);

    std::string check_path, check_persona;
    Common check_common;
    auto* check_cmd = app.add_subcommand("check", "Report constraint violations in a transcript");
    check_cmd->add_option("transcript", check_path, "Transcript (JSON lines)")->required();
    check_cmd->add_option("--persona", check_persona, "Persona file, to also score unit tests");
    check_cmd->add_option("--data", check_common.data_dir, "Asset directory");

    std::string root = "sessions", host = "127.0.0.1";
    int port = 8080, tick_ms = 0;
    Common serve_common;
    auto* serve_cmd = app.add_subcommand("serve", "Serve sessions over HTTP");
    serve_cmd->add_option("--root", root, "Session storage directory");
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--port", port, "Port");
    serve_cmd->add_option("--tick-ms", tick_ms, "Advance the robot clock every N ms (0: only via /advance)");
    serve_cmd->add_option("--data", serve_common.data_dir, "Default asset directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*run_cmd) return cmd_run(run);
        if (*eval_cmd) return cmd_eval(ev);
        if (*dag_cmd) return cmd_dag(dag_path, dag_json);
        if (*replay_cmd) return cmd_replay(replay_path, replay_common);
        if (*check_cmd) return cmd_check(check_path, check_persona, check_common);
        if (*serve_cmd) return cmd_serve(root, host, port, tick_ms, serve_common);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const eval::EvalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kConfigError;
}
