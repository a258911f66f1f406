// Command-line front end: phantom generation, graph diagnostics, training,
// prediction, evaluation, CDVH export and multi-model reports.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dosegnn/error.hpp"
#include "dosegnn/eval.hpp"
#include "dosegnn/graph.hpp"
#include "dosegnn/model.hpp"
#include "dosegnn/phantom.hpp"
#include "dosegnn/plan_io.hpp"
#include "dosegnn/train.hpp"

#ifndef DOSEGNN_VERSION
#define DOSEGNN_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dosegnn;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Common {
    std::uint64_t seed = 7;
    int threads = 1;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
    cmd->add_option("--seed", c.seed, "root random seed")->capture_default_str();
    cmd->add_option("--threads", c.threads, "worker threads (never changes outputs)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    auto* out = cmd->add_option("--out", c.out, "output path");
    if (out_required) out->required();
}

void print_config(const std::string& command, const json& config) {
    std::cout << command << " config: " << config.dump() << std::endl;
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

// File outputs may point into directories that do not exist yet.
void write_output(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, text);
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

struct Dataset {
    json manifest;
    std::vector<PlanBundle> plans;
};

Dataset read_dataset(const fs::path& dir) {
    Dataset d;
    d.manifest = read_json(dir / "dataset.json");
    try {
        for (const auto& name : d.manifest.at("cases")) d.plans.push_back(read_plan(dir / name.get<std::string>()));
    } catch (const json::exception& e) {
        throw DataError((dir / "dataset.json").string() + ": " + e.what());
    }
    if (d.plans.empty()) throw DataError(dir.string() + ": dataset lists no cases");
    return d;
}

VoxelGrid read_prediction(const fs::path& path, const PlanBundle& plan) {
    const fs::path file = fs::is_directory(path) ? path / "pred.f32" : path;
    const GridGeometry& g = plan.target_geometry();
    return VoxelGrid(g, read_f32(file, g.voxel_count()), "Gy");
}

// --- phantom generate ------------------------------------------------------

struct PhantomArgs {
    Common common;
    std::size_t count = 20;
    PhantomConfig cfg;
};

int run_phantom(const PhantomArgs& a) {
    PhantomConfig cfg = a.cfg;
    cfg.seed = derive_seed(a.common.seed, "phantom");
    cfg.validate();
    json config = {{"seed", a.common.seed}, {"count", a.count}, {"phantom", to_json(cfg)}};
    print_config("phantom generate", config);

    const fs::path out = a.common.out;
    fs::create_directories(out);
    json cases = json::array();
    for (std::size_t i = 0; i < a.count; ++i) {
        const PlanBundle plan = generate_phantom(cfg, i);
        write_plan(out / plan.name, plan);
        cases.push_back(plan.name);
    }
    config["cases"] = cases;
    write_text(out / "dataset.json", pretty(config));
    std::cout << "wrote " << a.count << " cases to " << out.string() << std::endl;
    return 0;
}

// --- graph stats -----------------------------------------------------------

struct GraphArgs {
    Common common;
    std::string plan;
    GraphConfig cfg;
};

int run_graph_stats(const GraphArgs& a) {
    json config = {{"plan", a.plan}, {"graph", to_json(a.cfg)}, {"threads", a.common.threads}};
    print_config("graph stats", config);
    const PlanBundle plan = read_plan(a.plan);
    const BipartiteGraph g = build_graph(plan.ct.geometry(), plan.target_geometry(), a.cfg, a.common.threads);
    json summary = graph_summary(g);
    summary["config"] = config;
    std::cout << pretty(summary);
    if (!a.common.out.empty()) write_output(a.common.out, pretty(summary));
    return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string data;
    std::string model = "dosegnn";
    std::string encoder = "mlp";
    double threshold = 5.0;
    int epochs = 200;
    double lr = 1e-3;
    std::size_t n_train = 15;
    std::size_t n_test = 5;
    int embed_dim = 64;
    int k = 8;
    std::string report;
};

int run_train(const TrainArgs& a) {
    ModelConfig mc;
    mc.kind = model_kind_from_string(a.model);
    mc.encoder.kind = encoder_kind_from_string(a.encoder);
    mc.encoder.embed_dim = a.embed_dim;
    mc.graph.threshold = a.threshold;
    mc.k = a.k;
    mc.validate();
    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.learning_rate = a.lr;
    tc.seed = a.common.seed;
    tc.n_train = a.n_train;
    tc.n_test = a.n_test;
    tc.threads = a.common.threads;
    tc.validate();

    json config = {{"data", a.data}, {"model", to_json(mc)}, {"train", to_json(tc)}};
    print_config("train", config);

    const Dataset data = read_dataset(a.data);
    const DatasetSplit split = split_dataset(data.plans.size(), tc);
    std::vector<PlanBundle> train_set;
    json train_cases = json::array();
    for (auto i : split.train) {
        train_set.push_back(data.plans[i]);
        train_cases.push_back(data.plans[i].name);
    }

    auto [model, report] = train_model(mc, train_set, tc, [&](int epoch, double loss) {
        if (epoch % 10 == 0 || epoch + 1 == tc.epochs) {
            std::cout << "epoch " << epoch << " loss " << loss << std::endl;
        }
    });

    json model_json = model_to_json(model);
    model_json["train"] = to_json(tc);
    model_json["train_cases"] = train_cases;
    write_output(a.common.out, pretty(model_json));

    json report_json = to_json(report);
    report_json["config"] = config;
    report_json["train_cases"] = train_cases;
    const fs::path report_path = a.report.empty() ? fs::path(a.common.out).parent_path() / "report.json" : fs::path(a.report);
    write_output(report_path, pretty(report_json));
    std::cout << "model written to " << a.common.out << ", report to " << report_path.string() << std::endl;
    return 0;
}

// --- predict ---------------------------------------------------------------

struct PredictArgs {
    Common common;
    std::string model;
    std::string plan;
};

int run_predict(const PredictArgs& a) {
    const json model_json = read_json(a.model);
    Model model = model_from_json(model_json);
    json config = {{"model", a.model}, {"plan", a.plan}, {"model_config", to_json(model.config())}};
    print_config("predict", config);

    const PlanBundle plan = read_plan(a.plan);
    const VoxelGrid pred = predict_dose(model, plan, a.common.threads);
    const fs::path out = a.common.out;
    fs::create_directories(out);
    write_f32(out / "pred.f32", pred.values());
    json meta = geometry_to_json(pred.geometry());
    meta["file"] = "pred.f32";
    meta["unit"] = "Gy";
    meta["config"] = config;
    write_text(out / "pred.json", pretty(meta));
    std::cout << "wrote " << (out / "pred.f32").string() << std::endl;
    return 0;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
    Common common;
    std::string plan;
    std::string pred;
    std::string structure;
};

int run_evaluate(const EvaluateArgs& a) {
    json config = {{"plan", a.plan}, {"pred", a.pred}, {"rmse_structure", a.structure}};
    print_config("evaluate", config);
    const PlanBundle plan = read_plan(a.plan);
    if (!plan.dose) throw DataError("plan '" + plan.name + "' has no ground-truth dose");
    const VoxelGrid pred = read_prediction(a.pred, plan);
    auto p = to_double(pred.values());
    auto t = to_double(plan.dose->values());
    if (!a.structure.empty()) {
        const auto structures = dose_grid_structures(plan);
        const auto it = std::find_if(structures.begin(), structures.end(),
                                     [&](const StructureMask& s) { return s.name == a.structure; });
        if (it == structures.end()) throw DataError("no structure '" + a.structure + "' on the dose grid");
        std::vector<double> pm, tm;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (it->values[i]) {
                pm.push_back(p[i]);
                tm.push_back(t[i]);
            }
        }
        p = std::move(pm);
        t = std::move(tm);
    }
    json result = {{"plan", plan.name}, {"rmse_gy", rmse(p, t)}, {"config", config}};
    std::cout << pretty(result);
    if (!a.common.out.empty()) write_output(a.common.out, pretty(result));
    return 0;
}

// --- cdvh ------------------------------------------------------------------

struct CdvhArgs {
    Common common;
    std::string plan;
    std::string pred;
    std::string structure = "PTV";
    int bins = 100;
};

int run_cdvh(const CdvhArgs& a) {
    json config = {{"plan", a.plan}, {"pred", a.pred}, {"structure", a.structure}, {"bins", a.bins}};
    print_config("cdvh", config);
    const PlanBundle plan = read_plan(a.plan);
    std::vector<double> dose;
    if (!a.pred.empty()) {
        dose = to_double(read_prediction(a.pred, plan).values());
    } else {
        if (!plan.dose) throw DataError("plan '" + plan.name + "' has no dose; pass --pred");
        dose = to_double(plan.dose->values());
    }
    const auto structures = dose_grid_structures(plan);
    const auto it = std::find_if(structures.begin(), structures.end(),
                                 [&](const StructureMask& s) { return s.name == a.structure; });
    if (it == structures.end()) throw DataError("no structure '" + a.structure + "' on the dose grid");
    const DvhCurve curve = cdvh(dose, *it, default_dvh_bins(plan.prescription_dose, a.bins));
    write_output(a.common.out, cdvh_csv(curve));
    std::cout << "wrote " << a.common.out << std::endl;
    return 0;
}

// --- report ----------------------------------------------------------------

struct ReportArgs {
    Common common;
    std::string data;
    std::vector<std::string> models;
    std::size_t n_train = 15;
    std::size_t n_test = 5;
    std::string rmse_structure;
    int bins = 100;
};

int run_report(const ReportArgs& a) {
    TrainConfig tc;
    tc.seed = a.common.seed;
    tc.n_train = a.n_train;
    tc.n_test = a.n_test;
    json config = {{"data", a.data},   {"models", a.models}, {"split", to_json(tc)},
                   {"bins", a.bins},   {"rmse_structure", a.rmse_structure}};
    print_config("report", config);

    const Dataset data = read_dataset(a.data);
    const DatasetSplit split = split_dataset(data.plans.size(), tc);
    std::vector<PlanBundle> test_set;
    for (auto i : split.test) test_set.push_back(data.plans[i]);

    std::vector<Model> models;
    std::vector<std::string> names;
    std::map<std::string, int> seen;
    for (const auto& path : a.models) {
        if (!fs::exists(path)) throw DataError("model file not found: " + path);
        const json mj = read_json(path);
        Model model = model_from_json(mj);
        const std::set<std::string> trained_on = mj.value("train_cases", std::set<std::string>{});
        for (const auto& plan : test_set) {
            if (trained_on.count(plan.name)) {
                throw DataError("model '" + path + "' was trained on test plan '" + plan.name +
                                "'; use the same --seed and split as training");
            }
        }
        std::string name = to_string(model.kind());
        if (int n = ++seen[name]; n > 1) name += "_" + std::to_string(n);
        names.push_back(name);
        models.push_back(std::move(model));
    }

    std::vector<Predictor> predictors;
    for (std::size_t i = 0; i < models.size(); ++i) {
        Model* m = &models[i];
        const int threads = a.common.threads;
        predictors.push_back({names[i], [m, threads](const PlanBundle& p) { return predict_dose(*m, p, threads); }});
    }
    EvalOptions options;
    options.bins = a.bins;
    if (!a.rmse_structure.empty()) options.rmse_structure = a.rmse_structure;
    const EvalReport report = compare_models(predictors, test_set, options);

    json metrics = report_to_json(report);
    metrics["config"] = config;
    const fs::path out = a.common.out;
    fs::create_directories(out);
    write_text(out / "metrics.json", pretty(metrics));
    write_cdvh_files(out, report);
    for (const auto& m : report.models) {
        std::cout << m.name << ": mean RMSE " << m.mean_rmse << " Gy, mean PTV CDVH gap " << m.mean_ptv_cdvh_gap
                  << " %" << std::endl;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dosegnn: dose prediction on mismatched CT/dose grids"};
    app.set_version_flag("--version", std::string("dosegnn ") + DOSEGNN_VERSION);
    app.require_subcommand(1);

    PhantomArgs phantom;
    auto* phantom_cmd = app.add_subcommand("phantom", "synthetic plan generation");
    phantom_cmd->require_subcommand(1);
    auto* generate = phantom_cmd->add_subcommand("generate", "write a synthetic dataset");
    add_common(generate, phantom.common, true);
    generate->add_option("--count", phantom.count, "number of cases")->check(CLI::PositiveNumber)->capture_default_str();
    generate->add_option("--rx", phantom.cfg.prescription_dose, "prescription dose (Gy)")->capture_default_str();
    generate->add_option("--tau", phantom.cfg.falloff_tau, "dose falloff length (mm)")->capture_default_str();
    generate->add_option("--angular-amplitude", phantom.cfg.angular_amplitude, "angular modulation in [0,1)")
        ->capture_default_str();
    generate->add_option("--jitter-mm", phantom.cfg.dose_origin_jitter, "dose origin jitter (mm)")->capture_default_str();
    generate->add_option("--n-oars", phantom.cfg.n_oars, "organs at risk per case")->capture_default_str();

    GraphArgs graph;
    auto* graph_cmd = app.add_subcommand("graph", "bipartite graph diagnostics");
    graph_cmd->require_subcommand(1);
    auto* stats = graph_cmd->add_subcommand("stats", "node, edge and degree counts for one plan");
    add_common(stats, graph.common, false);
    stats->add_option("--plan", graph.plan, "plan bundle directory")->required();
    stats->add_option("--threshold-mm", graph.cfg.threshold, "edge distance threshold")->capture_default_str();

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train one predictor on the training split");
    add_common(train_cmd, train.common, true);
    train_cmd->add_option("--data", train.data, "dataset directory")->required();
    train_cmd->add_option("--model", train.model, "dosegnn|heuristic1|heuristic2")
        ->check(CLI::IsMember({"dosegnn", "heuristic1", "heuristic2"}))
        ->capture_default_str();
    train_cmd->add_option("--encoder", train.encoder, "mlp|cnn3d")
        ->check(CLI::IsMember({"mlp", "cnn3d"}))
        ->capture_default_str();
    train_cmd->add_option("--threshold-mm", train.threshold, "edge distance threshold")->capture_default_str();
    train_cmd->add_option("--epochs", train.epochs, "training epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--n-train", train.n_train, "training plans")->capture_default_str();
    train_cmd->add_option("--n-test", train.n_test, "held-out plans")->capture_default_str();
    train_cmd->add_option("--embed-dim", train.embed_dim, "embedding width")->capture_default_str();
    train_cmd->add_option("--k", train.k, "heuristic 2 neighbour count")->capture_default_str();
    train_cmd->add_option("--report", train.report, "training report path (default: next to --out)");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "predict dose for one plan");
    add_common(predict_cmd, predict.common, true);
    predict_cmd->add_option("--model", predict.model, "model file")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--plan", predict.plan, "plan bundle directory")->required();

    EvaluateArgs evaluate;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "RMSE of a prediction against a plan's dose");
    add_common(evaluate_cmd, evaluate.common, false);
    evaluate_cmd->add_option("--plan", evaluate.plan, "plan bundle directory")->required();
    evaluate_cmd->add_option("--pred", evaluate.pred, "pred.f32 or predict output directory")->required();
    evaluate_cmd->add_option("--structure", evaluate.structure, "restrict RMSE to one structure");

    CdvhArgs cdvh_args;
    auto* cdvh_cmd = app.add_subcommand("cdvh", "export a cumulative DVH as CSV");
    add_common(cdvh_cmd, cdvh_args.common, true);
    cdvh_cmd->add_option("--plan", cdvh_args.plan, "plan bundle directory")->required();
    cdvh_cmd->add_option("--pred", cdvh_args.pred, "predicted dose (default: plan ground truth)");
    cdvh_cmd->add_option("--structure", cdvh_args.structure, "structure name")->capture_default_str();
    cdvh_cmd->add_option("--bins", cdvh_args.bins, "number of thresholds")->check(CLI::Range(2, 100000))->capture_default_str();

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "compare models on the test split");
    add_common(report_cmd, report.common, true);
    report_cmd->add_option("--data", report.data, "dataset directory")->required();
    report_cmd->add_option("--models", report.models, "model files")->required()->expected(1, -1);
    report_cmd->add_option("--n-train", report.n_train, "training plans")->capture_default_str();
    report_cmd->add_option("--n-test", report.n_test, "held-out plans")->capture_default_str();
    report_cmd->add_option("--rmse-structure", report.rmse_structure, "restrict RMSE to one structure");
    report_cmd->add_option("--bins", report.bins, "CDVH thresholds")->check(CLI::Range(2, 100000))->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (generate->parsed()) return run_phantom(phantom);
        if (stats->parsed()) return run_graph_stats(graph);
        if (train_cmd->parsed()) return run_train(train);
        if (predict_cmd->parsed()) return run_predict(predict);
        if (evaluate_cmd->parsed()) return run_evaluate(evaluate);
        if (cdvh_cmd->parsed()) return run_cdvh(cdvh_args);
        if (report_cmd->parsed()) return run_report(report);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << std::endl;
        return kExitNumerical;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        return kExitData;
    } catch (const std::out_of_range& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitData;
    }
    return kExitUsage;
}
