#include "refground/cli.hpp"

#include <algorithm>
#include <cctype>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "refground/actuation.hpp"
#include "refground/api.hpp"
#include "refground/eval.hpp"
#include "refground/pipeline.hpp"
#include "refground/training.hpp"

namespace refground {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string env_name(const std::string& option) {
    std::string name = "REFGROUND_";
    for (char c : option) {
        name += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return name;
}

std::string scalar_text(const nlohmann::json& value) {
    if (value.is_string()) {
        return value.get<std::string>();
    }
    if (value.is_boolean()) {
        return value.get<bool>() ? "true" : "false";
    }
    if (value.is_number()) {
        return value.dump();
    }
    throw UsageError("config values must be strings, numbers or booleans");
}

std::filesystem::path partition_dir(const std::filesystem::path& corpus, const char* name) {
    const auto sub = corpus / name;
    return std::filesystem::is_directory(sub) ? sub : corpus;
}

std::vector<double> parse_list(const std::string& text, std::size_t count, const char* what) {
    std::vector<double> values;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw UsageError(std::string("malformed ") + what + ": '" + text + "'");
        }
    }
    if (values.size() != count) {
        throw UsageError(std::string(what) + " expects " + std::to_string(count) + " comma-separated numbers");
    }
    return values;
}

struct Settings {
    // gen-corpus
    std::string corpus_out;
    std::size_t scenes = 2300;
    std::uint64_t seed = 42;
    std::string ratios = "0.8,0.1,0.1";
    int min_objects = 5;
    int max_objects = 12;
    // train
    std::string role;
    std::string corpus;
    std::string model_out;
    int epochs = 0;
    double learning_rate = 0.0;
    int batch_size = 0;
    std::uint64_t train_seed = 0;
    double margin = 1.0;
    double margin_weight = 1.0;
    // ground / act / serve / eval
    std::string scene;
    std::string query;
    std::string models;
    std::string aggregation = "noisy-or";
    std::string proposals = "ground_truth";
    bool diagnostics = false;
    int k = kDefaultTopK;
    std::string report_out;
    bool runtime = false;
    std::string object;
    std::string gripper = "0.08,0.05";
    int points = 500;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    double session_minutes = 30.0;
    std::string synonyms;
    std::string nouns;
};

void log_info(std::ostream& err, const std::string& message) { err << "[refground] " << message << '\n'; }

int cmd_gen_corpus(const Settings& s, std::ostream& out, std::ostream& err) {
    const auto ratio_values = parse_list(s.ratios, 3, "--ratios");
    SceneConfig scene_config;
    scene_config.min_objects = s.min_objects;
    scene_config.max_objects = s.max_objects;
    auto corpus = generate_corpus(s.scenes, s.seed, scene_config);
    auto split = split_dataset(std::move(corpus), {ratio_values[0], ratio_values[1], ratio_values[2]},
                               mix_seed(s.seed, 0x5eed));
    const std::filesystem::path root(s.corpus_out);
    nlohmann::ordered_json summary;
    for (auto [name, part] : {std::pair{"train", &split.train}, std::pair{"val", &split.val},
                              std::pair{"test", &split.test}}) {
        const auto dir = root / name;
        std::filesystem::create_directories(dir);
        std::size_t expressions = 0;
        for (const auto& annotated : *part) {
            save_scene(annotated, dir / (annotated.scene.id + ".json"));
            expressions += annotated.expressions.size();
        }
        summary[name] = {{"scenes", part->size()}, {"expressions", expressions}};
        log_info(err, std::string("wrote ") + std::to_string(part->size()) + " scenes to " + dir.string());
    }
    out << summary.dump() << '\n';
    return kExitOk;
}

int cmd_train(const Settings& s, std::ostream& out, std::ostream& err) {
    if (s.role != "semantic" && s.role != "spatial") {
        throw UsageError("--role must be semantic or spatial");
    }
    const bool semantic = s.role == "semantic";
    const auto corpus = load_scene_dir(partition_dir(s.corpus, "train"));
    if (corpus.empty()) {
        throw std::runtime_error("no scenes found in " + s.corpus);
    }
    TrainConfig config = semantic ? default_semantic_config() : default_spatial_config();
    if (s.epochs > 0) config.epochs = s.epochs;
    if (s.learning_rate > 0.0) config.learning_rate = s.learning_rate;
    if (s.batch_size > 0) config.batch_size = s.batch_size;
    if (s.train_seed > 0) config.seed = s.train_seed;
    config.on_epoch = [&](int epoch, double loss) {
        log_info(err, s.role + " epoch " + std::to_string(epoch + 1) + "/" +
                          std::to_string(config.epochs) + " loss " + std::to_string(loss));
    };
    nlohmann::ordered_json summary;
    summary["role"] = s.role;
    std::vector<double> losses;
    if (semantic) {
        auto trained = train_semantic_stage(corpus, config);
        save_semantic_model(trained.model, s.model_out);
        summary["examples"] = trained.examples;
        losses = trained.epoch_losses;
    } else {
        auto trained = train_spatial_stage(corpus, config, {s.margin, s.margin_weight});
        save_spatial_model(trained.model, s.model_out);
        summary["examples"] = trained.examples;
        summary["skipped"] = trained.skipped;
        losses = trained.epoch_losses;
    }
    summary["epochs"] = config.epochs;
    summary["final_loss"] = losses.back();
    summary["out"] = s.model_out;
    out << summary.dump() << '\n';
    return kExitOk;
}

GroundingEngine load_engine(const Settings& s) {
    EngineConfig config;
    config.k = s.k;
    config.aggregation = parse_aggregation(s.aggregation);
    return GroundingEngine::load(s.models, config,
                                 s.synonyms.empty() ? default_synonyms() : load_synonyms(s.synonyms));
}

int cmd_ground(const Settings& s, std::ostream& out, std::ostream&) {
    const auto annotated = load_scene(s.scene);
    const auto engine = load_engine(s);
    const auto proposals = make_proposals(annotated.scene, parse_proposal_mode(s.proposals), 0);
    const auto result = engine.ground(annotated.scene, proposals, s.query);
    auto body = to_json(result, s.diagnostics);
    nlohmann::ordered_json printed;
    printed["scene_id"] = annotated.scene.id;
    for (auto& [key, value] : body.items()) {
        printed[key] = value;
    }
    out << printed.dump() << '\n';
    return kExitOk;
}

int cmd_eval(const Settings& s, std::ostream& out, std::ostream& err) {
    const std::filesystem::path root(s.corpus);
    auto val = load_scene_dir(root / "val");
    auto test = load_scene_dir(root / "test");
    if (val.empty() || test.empty()) {
        throw std::runtime_error("eval expects non-empty val/ and test/ under " + s.corpus);
    }
    const auto engine = load_engine(s);
    const EnginePredictor predictor(engine);
    const auto partitions = make_partitions(std::move(val), std::move(test));
    BenchmarkConfig config;
    NounLexicon lexicon;
    if (!s.nouns.empty()) {
        lexicon = load_noun_lexicon(s.nouns);
        config.lexicon = &lexicon;
    }
    const auto report = run_benchmark(predictor, partitions, config);
    {
        std::ofstream file(s.report_out);
        if (!file) {
            throw std::runtime_error("cannot write report: " + s.report_out);
        }
        file << to_json(report, s.runtime).dump(2) << '\n';
    }
    log_info(err, "evaluated " + std::to_string(report.runtime.queries) + " queries in " +
                      std::to_string(report.runtime.total_seconds) + " s (mean " +
                      std::to_string(report.runtime.mean_ms) + " ms, max " +
                      std::to_string(report.runtime.max_ms) + " ms)");
    out << format_table(report);
    return kExitOk;
}

int cmd_act(const Settings& s, std::ostream& out, std::ostream&) {
    const auto annotated = load_scene(s.scene);
    const SceneObject* object = annotated.scene.find(s.object);
    if (object == nullptr) {
        throw std::runtime_error("scene " + annotated.scene.id + " has no object '" + s.object + "'");
    }
    const auto g = parse_list(s.gripper, 2, "--gripper");
    const GripperSpec gripper{g[0], g[1]};
    if (!gripper.valid()) {
        throw UsageError("--gripper values must be positive");
    }
    const auto cloud = sample_object_cloud(*object, s.points, mix_seed(s.seed, 0xac7));
    const auto center = centroid(cloud);
    nlohmann::ordered_json body;
    body["scene_id"] = annotated.scene.id;
    body["object"] = object->id;
    body["centroid"] = {center.x(), center.y(), center.z()};
    body["extent"] = {object->extent.width, object->extent.height, object->extent.depth};
    body["grasp"] = to_string(select_grasp(object->extent, gripper));
    out << body.dump() << '\n';
    return kExitOk;
}

ApiServer* g_server = nullptr;

int cmd_serve(const Settings& s, std::ostream&, std::ostream& err) {
    auto engine = std::make_shared<const GroundingEngine>(load_engine(s));
    std::vector<AnnotatedScene> scenes;
    const std::filesystem::path root(s.corpus);
    for (const char* name : {"val", "test"}) {
        if (std::filesystem::is_directory(root / name)) {
            auto part = load_scene_dir(root / name);
            std::move(part.begin(), part.end(), std::back_inserter(scenes));
        }
    }
    if (scenes.empty()) {
        scenes = load_scene_dir(root);
    }
    ApiConfig config;
    config.session_timeout = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double, std::ratio<60>>(s.session_minutes));
    config.proposals = parse_proposal_mode(s.proposals);
    GroundingService service(engine, std::move(scenes), config);
    ApiServer server(service, s.static_dir);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server != nullptr) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server != nullptr) g_server->stop();
    });
    log_info(err, "serving on http://" + s.host + ":" + std::to_string(s.port));
    server.run(s.host, s.port);
    g_server = nullptr;
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Settings s;
    CLI::App app{"refground: two-stage referring-expression grounding"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for all subcommands");
    std::string config_path;
    app.add_option("--config", config_path, "JSON file with option defaults")->envname("REFGROUND_CONFIG");

    std::map<std::string, std::vector<std::pair<CLI::App*, CLI::Option*>>> options;
    auto add = [&](CLI::App* sub, const std::string& name, auto& target, const std::string& help) {
        auto* opt = sub->add_option("--" + name, target, help)->envname(env_name(name));
        options[name].emplace_back(sub, opt);
        return opt;
    };
    auto add_flag = [&](CLI::App* sub, const std::string& name, bool& target, const std::string& help) {
        auto* opt = sub->add_flag("--" + name, target, help)->envname(env_name(name));
        options[name].emplace_back(sub, opt);
        return opt;
    };

    const CLI::IsMember aggregations({"noisy-or", "max"});
    const CLI::IsMember modes({"ground_truth", "degraded"});

    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic scene corpus split into train/val/test");
    add(gen, "out", s.corpus_out, "Output directory")->required();
    add(gen, "scenes", s.scenes, "Number of scenes")->capture_default_str();
    add(gen, "seed", s.seed, "Corpus seed")->capture_default_str();
    add(gen, "ratios", s.ratios, "train,val,test ratios")->capture_default_str();
    add(gen, "min-objects", s.min_objects, "Minimum objects per scene")->capture_default_str();
    add(gen, "max-objects", s.max_objects, "Maximum objects per scene")->capture_default_str();

    auto* tr = app.add_subcommand("train", "Train the semantic or spatial model");
    add(tr, "role", s.role, "semantic | spatial")->required()->check(CLI::IsMember({"semantic", "spatial"}));
    add(tr, "corpus", s.corpus, "Corpus directory (its train/ subdirectory if present)")->required();
    add(tr, "out", s.model_out, "Model bundle output file")->required();
    add(tr, "epochs", s.epochs, "Epochs (default per role)");
    add(tr, "lr", s.learning_rate, "Learning rate (default per role)");
    add(tr, "batch", s.batch_size, "Minibatch size (default per role)");
    add(tr, "seed", s.train_seed, "Shuffling seed (default per role)");
    add(tr, "margin", s.margin, "Spatial hinge margin")->capture_default_str();
    add(tr, "margin-weight", s.margin_weight, "Spatial hinge weight")->capture_default_str();

    auto* gr = app.add_subcommand("ground", "Ground a referring expression in a scene");
    add(gr, "scene", s.scene, "Scene file")->required();
    add(gr, "query", s.query, "Referring expression")->required();
    add(gr, "models", s.models, "Directory with semantic.json and spatial.json")->required();
    add(gr, "aggregation", s.aggregation, "noisy-or | max")->capture_default_str()->check(aggregations);
    add(gr, "proposals", s.proposals, "ground_truth | degraded")->capture_default_str()->check(modes);
    add(gr, "k", s.k, "Top-k of the semantic stage")->capture_default_str();
    add_flag(gr, "emit-diagnostics", s.diagnostics, "Include per-stage diagnostics");
    add(gr, "synonyms", s.synonyms, "Synonym groups file for the caption metric");

    auto* ev = app.add_subcommand("eval", "Run the benchmark over val/ and test/");
    add(ev, "corpus", s.corpus, "Corpus directory")->required();
    add(ev, "models", s.models, "Directory with semantic.json and spatial.json")->required();
    add(ev, "out", s.report_out, "Report JSON file")->required();
    add(ev, "k", s.k, "Top-k of the semantic stage")->capture_default_str();
    add_flag(ev, "runtime", s.runtime, "Include wall-clock statistics in the report");
    add(ev, "synonyms", s.synonyms, "Synonym groups file for the caption metric");
    add(ev, "nouns", s.nouns, "Noun lexicon used to prune expressions");

    auto* act = app.add_subcommand("act", "Centroid and grasp choice for a scene object");
    add(act, "scene", s.scene, "Scene file")->required();
    add(act, "object", s.object, "Object id")->required();
    add(act, "gripper", s.gripper, "max_opening,finger_length in meters")->capture_default_str();
    add(act, "points", s.points, "Point-cloud samples")->capture_default_str();
    add(act, "seed", s.seed, "Sampling seed")->capture_default_str();

    auto* sv = app.add_subcommand("serve", "Serve the HTTP JSON API");
    add(sv, "models", s.models, "Directory with semantic.json and spatial.json")->required();
    add(sv, "corpus", s.corpus, "Corpus directory with scenes to expose")->required();
    add(sv, "host", s.host, "Bind address")->capture_default_str();
    add(sv, "port", s.port, "Port")->capture_default_str();
    add(sv, "aggregation", s.aggregation, "Default aggregation")->capture_default_str()->check(aggregations);
    add(sv, "proposals", s.proposals, "ground_truth | degraded")->capture_default_str()->check(modes);
    add(sv, "k", s.k, "Top-k of the semantic stage")->capture_default_str();
    add(sv, "static", s.static_dir, "Directory of UI assets served at /");
    add(sv, "session-minutes", s.session_minutes, "Idle session timeout")->capture_default_str();
    add(sv, "synonyms", s.synonyms, "Synonym groups file for the caption metric");

    // Config file values become defaults below flags and environment.
    std::optional<nlohmann::json> file_config;
    try {
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i] == "--config" && i + 1 < args.size()) {
                config_path = args[i + 1];
            } else if (args[i].starts_with("--config=")) {
                config_path = args[i].substr(9);
            }
        }
        if (config_path.empty()) {
            if (const char* env = std::getenv("REFGROUND_CONFIG")) {
                config_path = env;
            }
        }
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) {
                throw UsageError("cannot read config file " + config_path);
            }
            try {
                file_config = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& error) {
                throw UsageError("config file " + config_path + ": " + error.what());
            }
            if (!file_config->is_object()) {
                throw UsageError("config file must hold a JSON object");
            }
            for (const auto& [key, value] : file_config->items()) {
                if (!options.contains(key)) {
                    throw UsageError("unknown config key '" + key + "'");
                }
                scalar_text(value);
                for (auto [sub, opt] : options[key]) {
                    opt->required(false);
                }
            }
        }

        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);

        if (file_config) {
            for (const auto& [key, value] : file_config->items()) {
                for (auto [sub, opt] : options[key]) {
                    if (sub->parsed() == 0 || opt->count() > 0 ||
                        std::getenv(env_name(key).c_str()) != nullptr) {
                        continue;
                    }
                    opt->add_result(scalar_text(value));
                    opt->run_callback();
                }
            }
            for (auto* sub : app.get_subcommands()) {
                for (const auto* opt : sub->get_options()) {
                    if (opt->get_required() && opt->count() == 0) {
                        throw UsageError(opt->get_name() + " is required");
                    }
                }
            }
        }
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& error) {
        err << "error: " << error.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const UsageError& error) {
        err << "error: " << error.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_corpus(s, out, err);
        if (tr->parsed()) return cmd_train(s, out, err);
        if (gr->parsed()) return cmd_ground(s, out, err);
        if (ev->parsed()) return cmd_eval(s, out, err);
        if (act->parsed()) return cmd_act(s, out, err);
        if (sv->parsed()) return cmd_serve(s, out, err);
    } catch (const UsageError& error) {
        err << "error: " << error.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& error) {
        err << "error: " << error.what() << '\n';
        return kExitRuntime;
    }
    err << app.help();
    return kExitUsage;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace refground
