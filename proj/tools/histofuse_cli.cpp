// histofuse: breast-histopathology CNN engine CLI.
//
// Subcommands: scan, train, tune, evaluate, predict, report.
// Exit codes: 0 success, 2 user/config error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "histofuse/histofuse.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace histofuse;

namespace {

constexpr int kExitUserError = 2;
constexpr int kExitNumericError = 3;

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

struct DataConfig {
    std::string manifest;
    bool synthetic = false;
    std::size_t synthetic_classes = 8, synthetic_per_class = 50, synthetic_size = 64;
    std::uint64_t synthetic_seed = 7;
    std::optional<int> magnification;
    std::optional<std::size_t> balance_per_class;
    double val_fraction = 0.2;
};

struct TuneConfig {
    std::size_t swarm_size = 20;
    std::size_t iterations = 30;
    std::size_t train_epochs = 5;
    double lr_min = 1e-5, lr_max = 1e-2;
    double dropout_min = 0.3, dropout_max = 0.7;
    bool parallel = true;
};

struct RunConfig {
    ModelKind model = ModelKind::fusion_binary;
    std::uint64_t seed = 1;
    std::size_t epochs = 0;      // 0 = kind default
    std::size_t batch_size = 0;  // 0 = kind default
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 0;  // 0 = rule default
    double dropout = 0.45;
    std::optional<bool> scheduler;
    std::optional<bool> early_stopping;
    std::size_t input_size = 0;  // 0 = kind default
    bool malignant_category = false;
    BackboneConfig backbone;
    double l2_lambda = 0.001;
    DataConfig data;
    bool augment_enabled = false;
    AugmentationConfig augmentation;
    std::string output_dir;
    TuneConfig tune;
};

void require_keys(const json& obj, const std::string& where,
                  const std::vector<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: field '" + key + "' has the wrong type");
    }
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    if (!root.is_object()) throw ConfigError("config must be a JSON object");
    require_keys(root, "$",
                 {"model", "seed", "epochs", "batch_size", "optimizer", "learning_rate", "dropout",
                  "scheduler", "early_stopping", "input_size", "subtype_category", "backbone",
                  "l2_lambda", "data", "augmentation", "output_dir", "tune"});

    RunConfig cfg;
    if (!root.contains("model")) throw ConfigError("config: missing required field 'model'");
    cfg.model = model_kind_from_name(root.at("model").get<std::string>());
    cfg.seed = get_or<std::uint64_t>(root, "seed", 1);
    cfg.epochs = get_or<std::size_t>(root, "epochs", 0);
    cfg.batch_size = get_or<std::size_t>(root, "batch_size", 0);
    if (root.contains("optimizer"))
        cfg.optimizer = optimizer_kind_from_name(root.at("optimizer").get<std::string>());
    cfg.learning_rate = get_or<double>(root, "learning_rate", 0.0);
    cfg.dropout = get_or<double>(root, "dropout", 0.45);
    if (root.contains("scheduler")) cfg.scheduler = root.at("scheduler").get<bool>();
    if (root.contains("early_stopping")) cfg.early_stopping = root.at("early_stopping").get<bool>();
    cfg.input_size = get_or<std::size_t>(root, "input_size", 0);
    if (root.contains("subtype_category")) {
        const std::string cat = root.at("subtype_category").get<std::string>();
        if (cat != "benign" && cat != "malignant")
            throw ConfigError("config: subtype_category must be 'benign' or 'malignant'");
        cfg.malignant_category = cat == "malignant";
    }
    if (cfg.model == ModelKind::fusion_malignant) cfg.malignant_category = true;
    if (cfg.model == ModelKind::fusion_benign) cfg.malignant_category = false;
    cfg.l2_lambda = get_or<double>(root, "l2_lambda", 0.001);

    if (root.contains("backbone")) {
        const json& b = root.at("backbone");
        require_keys(b, "$.backbone",
                     {"stem_filters", "layers_per_block", "growth", "compression", "concat_enabled"});
        cfg.backbone.stem_filters = get_or<std::size_t>(b, "stem_filters", 16);
        cfg.backbone.layers_per_block = get_or<std::size_t>(b, "layers_per_block", 4);
        cfg.backbone.growth = get_or<std::size_t>(b, "growth", 12);
        cfg.backbone.compression = get_or<double>(b, "compression", 0.5);
        cfg.backbone.concat_enabled = get_or<bool>(b, "concat_enabled", true);
    }

    if (!root.contains("data")) throw ConfigError("config: missing required field 'data'");
    const json& d = root.at("data");
    require_keys(d, "$.data",
                 {"manifest", "synthetic", "magnification", "balance_per_class", "val_fraction"});
    cfg.data.val_fraction = get_or<double>(d, "val_fraction", 0.2);
    if (d.contains("manifest") == d.contains("synthetic"))
        throw ConfigError("config: $.data needs exactly one of 'manifest' or 'synthetic'");
    if (d.contains("manifest")) cfg.data.manifest = d.at("manifest").get<std::string>();
    if (d.contains("synthetic")) {
        cfg.data.synthetic = true;
        const json& s = d.at("synthetic");
        require_keys(s, "$.data.synthetic", {"classes", "per_class", "size", "seed"});
        cfg.data.synthetic_classes = get_or<std::size_t>(s, "classes", 8);
        cfg.data.synthetic_per_class = get_or<std::size_t>(s, "per_class", 50);
        cfg.data.synthetic_size = get_or<std::size_t>(s, "size", 64);
        cfg.data.synthetic_seed = get_or<std::uint64_t>(s, "seed", 7);
    }
    if (d.contains("magnification")) {
        const int mag = d.at("magnification").get<int>();
        if (mag != 40 && mag != 100 && mag != 200 && mag != 400)
            throw ConfigError("config: magnification must be 40, 100, 200 or 400");
        cfg.data.magnification = mag;
    }
    if (d.contains("balance_per_class"))
        cfg.data.balance_per_class = d.at("balance_per_class").get<std::size_t>();

    if (root.contains("augmentation")) {
        const json& a = root.at("augmentation");
        require_keys(a, "$.augmentation",
                     {"enabled", "width_shift", "height_shift", "shear", "zoom", "horizontal_flip"});
        cfg.augment_enabled = get_or<bool>(a, "enabled", true);
        cfg.augmentation.width_shift = get_or<double>(a, "width_shift", 0.2);
        cfg.augmentation.height_shift = get_or<double>(a, "height_shift", 0.2);
        cfg.augmentation.shear = get_or<double>(a, "shear", 0.2);
        cfg.augmentation.zoom = get_or<double>(a, "zoom", 0.2);
        cfg.augmentation.horizontal_flip = get_or<bool>(a, "horizontal_flip", true);
        cfg.augmentation.validate();
    }

    cfg.output_dir = get_or<std::string>(root, "output_dir", "out");

    if (root.contains("tune")) {
        const json& t = root.at("tune");
        require_keys(t, "$.tune",
                     {"swarm_size", "iterations", "train_epochs", "lr_min", "lr_max", "dropout_min",
                      "dropout_max", "parallel"});
        cfg.tune.swarm_size = get_or<std::size_t>(t, "swarm_size", 20);
        cfg.tune.iterations = get_or<std::size_t>(t, "iterations", 30);
        cfg.tune.train_epochs = get_or<std::size_t>(t, "train_epochs", 5);
        cfg.tune.lr_min = get_or<double>(t, "lr_min", 1e-5);
        cfg.tune.lr_max = get_or<double>(t, "lr_max", 1e-2);
        cfg.tune.dropout_min = get_or<double>(t, "dropout_min", 0.3);
        cfg.tune.dropout_max = get_or<double>(t, "dropout_max", 0.7);
        cfg.tune.parallel = get_or<bool>(t, "parallel", true);
    }
    return cfg;
}

/// Per-architecture defaults (the tables' values) for anything the config
/// left at zero.
void apply_kind_defaults(RunConfig& cfg) {
    if (cfg.input_size == 0) cfg.input_size = default_input_size(cfg.model);
    const bool fusion = cfg.model == ModelKind::fusion_binary ||
                        cfg.model == ModelKind::fusion_benign ||
                        cfg.model == ModelKind::fusion_malignant;
    if (cfg.epochs == 0) {
        switch (cfg.model) {
            case ModelKind::baseline: cfg.epochs = 20; break;
            case ModelKind::subclass_initial: cfg.epochs = 30; break;
            default: cfg.epochs = 50; break;
        }
    }
    if (cfg.batch_size == 0) cfg.batch_size = cfg.model == ModelKind::subclass_initial ? 32 : 16;
    if (cfg.learning_rate == 0) cfg.learning_rate = default_learning_rate(cfg.optimizer);
    if (!cfg.scheduler) cfg.scheduler = fusion;
    if (!cfg.early_stopping) cfg.early_stopping = fusion;
}

// ---------------------------------------------------------------------------
// dataset assembly
// ---------------------------------------------------------------------------

std::size_t model_classes(ModelKind kind) { return kind == ModelKind::baseline || kind == ModelKind::fusion_binary ? 2 : 4; }

/// Label a manifest record under the model's class ordering; nullopt = the
/// record does not belong to this task (wrong category for a 4-way model).
std::optional<int> label_for(const BiopsyRecord& r, ModelKind kind, bool malignant_category) {
    if (kind == ModelKind::baseline || kind == ModelKind::fusion_binary)
        return r.tumor_class == TumorClass::malignant ? 1 : 0;
    const TumorClass want = malignant_category ? TumorClass::malignant : TumorClass::benign;
    if (r.tumor_class != want) return std::nullopt;
    return subtype_index(r.subtype, want);
}

struct AssembledData {
    LabeledDataset<float> train;
    LabeledDataset<float> val;
    std::string split_report;
};

AssembledData assemble_from_manifest(const RunConfig& cfg) {
    Manifest manifest = load_manifest(cfg.data.manifest);
    if (cfg.data.magnification) {
        auto groups = split_by_magnification(manifest);
        manifest = groups.at(*cfg.data.magnification);
    }
    if (cfg.data.balance_per_class)
        manifest = balance_classes(manifest, *cfg.data.balance_per_class, cfg.seed);

    const auto split = stratified_split(manifest, cfg.data.val_fraction, cfg.seed);

    AssembledData out;
    const std::size_t classes = model_classes(cfg.model);
    out.train.num_classes = out.val.num_classes = classes;
    auto fill = [&](const Manifest& m, LabeledDataset<float>& ds) {
        for (const auto& r : m.records) {
            const auto label = label_for(r, cfg.model, cfg.malignant_category);
            if (!label) continue;
            ds.images.push_back(load_image<float>(r.path, cfg.input_size));
            ds.labels.push_back(*label);
        }
    };
    fill(split.train, out.train);
    fill(split.val, out.val);

    std::ostringstream report;
    report << "records=" << manifest.size() << "\n";
    report << "train=" << out.train.size() << "\n";
    report << "val=" << out.val.size() << "\n";
    for (const auto& w : split.warnings) report << "warning=" << w << "\n";
    if (!split.leaked_patients.empty()) {
        report << "patient_leakage=";
        for (std::size_t i = 0; i < split.leaked_patients.size(); ++i)
            report << (i ? ";" : "") << split.leaked_patients[i];
        report << "\n";
    }
    out.split_report = report.str();
    return out;
}

AssembledData assemble_synthetic(const RunConfig& cfg) {
    const auto& d = cfg.data;
    auto full = make_synthetic_dataset<float>(d.synthetic_classes, d.synthetic_per_class,
                                              cfg.input_size, d.synthetic_seed);
    const std::size_t classes = model_classes(cfg.model);
    LabeledDataset<float> task;
    if (classes == 2) {
        task = d.synthetic_classes == 2 ? full : to_binary_superclasses(full);
    } else {
        if (d.synthetic_classes == 4)
            task = full;
        else if (d.synthetic_classes == 8)
            task = slice_category(full, cfg.malignant_category);
        else
            throw ConfigError("config: a 4-way model needs synthetic classes 4 or 8");
    }
    auto [train, val] = split_labeled(task, d.val_fraction, cfg.seed);
    AssembledData out;
    out.train = std::move(train);
    out.val = std::move(val);
    std::ostringstream report;
    report << "records=" << task.size() << "\n";
    report << "train=" << out.train.size() << "\n";
    report << "val=" << out.val.size() << "\n";
    out.split_report = report.str();
    return out;
}

AssembledData assemble(const RunConfig& cfg) {
    AssembledData data = cfg.data.synthetic ? assemble_synthetic(cfg) : assemble_from_manifest(cfg);
    // synthetic sets are generated at the model's input size already;
    // manifest images were resized by load_image
    if (cfg.data.synthetic && cfg.data.synthetic_size != cfg.input_size) {
        for (auto* ds : {&data.train, &data.val})
            for (auto& img : ds->images) img = resize_bilinear(img, cfg.input_size, cfg.input_size);
    }
    return data;
}

Model<float> build_from_config(const RunConfig& cfg) {
    BuildOptions opts;
    opts.input_size = cfg.input_size;
    opts.backbone = cfg.backbone;
    opts.dropout = cfg.dropout;
    opts.malignant_category = cfg.malignant_category;
    Model<float> model;
    model.graph = build_model(cfg.model, opts);
    model.params = init_params<float>(model.graph, cfg.seed);
    return model;
}

TrainConfig train_config_of(const RunConfig& cfg) {
    TrainConfig tc;
    tc.batch_size = cfg.batch_size;
    tc.epochs = cfg.epochs;
    tc.seed = cfg.seed;
    tc.optimizer = cfg.optimizer;
    tc.learning_rate = cfg.learning_rate;
    tc.use_scheduler = *cfg.scheduler;
    tc.use_early_stopping = *cfg.early_stopping;
    tc.l2_lambda = cfg.l2_lambda;
    return tc;
}

void write_metrics(const MetricsReport& report, const fs::path& dir) {
    write_file((dir / "metrics.txt").string(), report.to_key_values());
    write_file((dir / "metrics.csv").string(),
               MetricsReport::csv_header() + "\n" + report.to_csv_row() + "\n");
    write_file((dir / "confusion.csv").string(), report.confusion.to_csv());
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_scan(const std::string& root, const std::string& out) {
    const ScanResult scan = scan_directory(root);
    write_file(out, manifest_to_csv(scan.manifest));
    write_file(out + ".skip.txt", skip_report_text(scan.skipped));
    std::cout << "scanned " << scan.manifest.size() << " records, skipped " << scan.skipped.size()
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path) {
    RunConfig cfg = parse_run_config(config_path);
    apply_kind_defaults(cfg);
    fs::create_directories(cfg.output_dir);
    const fs::path dir(cfg.output_dir);

    AssembledData data = assemble(cfg);
    Model<float> model = build_from_config(cfg);

    AugmentFn<float> augment_fn = nullptr;
    if (cfg.augment_enabled) {
        const AugmentationConfig acfg = cfg.augmentation;
        augment_fn = [acfg](const Tensor<float>& img, Rng& rng) { return augment(img, acfg, rng); };
    }

    const EpochHistory history = train(model, data.train, data.val, train_config_of(cfg), augment_fn);
    const MetricsReport report = evaluate(model, data.val);

    save_weights(model, (dir / "weights.bin").string());
    write_file((dir / "history.csv").string(), history.to_csv());
    write_file((dir / "split_report.txt").string(), data.split_report);
    write_metrics(report, dir);

    std::cout << "trained " << model_kind_name(cfg.model) << " for " << history.rows.size()
              << " epochs; val accuracy " << report.accuracy << "\n";
    if (data.split_report.find("patient_leakage=") != std::string::npos)
        std::cout << "warning: train/val splits share patients (see split_report.txt)\n";
    return 0;
}

int cmd_tune(const std::string& config_path, bool mock_objective) {
    RunConfig cfg = parse_run_config(config_path);
    apply_kind_defaults(cfg);
    fs::create_directories(cfg.output_dir);
    const fs::path dir(cfg.output_dir);

    const SearchSpace space = hyperparameter_space(cfg.tune.lr_min, cfg.tune.lr_max,
                                                   cfg.tune.dropout_min, cfg.tune.dropout_max);
    SwarmConfig swarm;
    swarm.swarm_size = cfg.tune.swarm_size;
    swarm.iterations = cfg.tune.iterations;
    swarm.seed = cfg.seed;

    TuneResult result;
    if (mock_objective) {
        auto mock = [](double lr, double dropout) {
            const double a = std::log10(lr) + 3.0;
            const double b = dropout - 0.5;
            return a * a + b * b;
        };
        result = pso_tune_hyperparams(mock, space, swarm, false);
    } else {
        bool has_dropout = false;
        Model<float> probe = build_from_config(cfg);
        for (const auto& l : probe.graph.layers)
            if (l.kind == LayerKind::dropout) has_dropout = true;
        if (!has_dropout)
            throw ConfigError("tune: model '" + std::string(model_kind_name(cfg.model)) +
                              "' has no dropout rate to search");
        const AssembledData data = assemble(cfg);
        RunConfig inner = cfg;
        inner.epochs = cfg.tune.train_epochs;
        auto train_fn = [&](double lr, double dropout) {
            RunConfig trial = inner;
            trial.learning_rate = lr;
            trial.dropout = dropout;
            Model<float> model = build_from_config(trial);
            TrainConfig tc = train_config_of(trial);
            const EpochHistory h = train(model, data.train, data.val, tc);
            double best = std::numeric_limits<double>::infinity();
            for (const auto& row : h.rows) best = std::min(best, row.val_loss);
            return best;
        };
        result = pso_tune_hyperparams(train_fn, space, swarm, cfg.tune.parallel);
    }

    write_file((dir / "pso_trace.csv").string(),
               tune_trace_csv(result.trace, result.best_decoded_trace));
    std::ostringstream best;
    best << std::setprecision(9);
    best << "learning_rate=" << result.learning_rate << "\n";
    best << "dropout=" << result.dropout << "\n";
    best << "fitness=" << result.best_fitness << "\n";
    write_file((dir / "best_hyperparams.txt").string(), best.str());
    std::cout << "best learning_rate=" << result.learning_rate << " dropout=" << result.dropout
              << " fitness=" << result.best_fitness << "\n";
    return 0;
}

int cmd_evaluate(const std::string& weights, const std::string& manifest_path,
                 const std::string& out) {
    Model<float> model = load_model(weights);
    const Manifest manifest = load_manifest(manifest_path);
    const std::size_t input =
        model.graph.layers.front().input_shape[0];

    const bool malignant_cat =
        model.graph.kind == ModelKind::fusion_malignant ||
        (model.graph.meta.count("malignant_category") && model.graph.meta.at("malignant_category") != 0.0);
    LabeledDataset<float> ds;
    ds.num_classes = model_classes(model.graph.kind);
    for (const auto& r : manifest.records) {
        const auto label = label_for(r, model.graph.kind, malignant_cat);
        if (!label) continue;
        ds.images.push_back(load_image<float>(r.path, input));
        ds.labels.push_back(*label);
    }
    if (ds.size() == 0) throw ConfigError("evaluate: no manifest records belong to this model's task");

    const MetricsReport report = evaluate(model, ds);
    fs::create_directories(out);
    write_metrics(report, fs::path(out));
    std::cout << report.to_key_values();
    return 0;
}

int cmd_predict(const std::string& binary_w, const std::string& benign_w,
                const std::string& malignant_w, const std::string& image_path) {
    Model<float> binary = load_model(binary_w);
    Model<float> benign = load_model(benign_w);
    Model<float> malignant = load_model(malignant_w);

    auto category_of = [](const Model<float>& m) {
        return m.graph.kind == ModelKind::fusion_malignant ||
               (m.graph.meta.count("malignant_category") &&
                m.graph.meta.at("malignant_category") != 0.0);
    };
    if (model_classes(binary.graph.kind) != 2)
        throw ConfigError("predict: --binary weights are not a binary model");
    if (model_classes(benign.graph.kind) != 4 || category_of(benign))
        throw ConfigError("predict: --benign weights are not a benign subtype model");
    if (model_classes(malignant.graph.kind) != 4 || !category_of(malignant))
        throw ConfigError("predict: --malignant weights are not a malignant subtype model");

    const RgbImage raw = read_ppm(image_path);
    Tensor<float> img({raw.height, raw.width, 3});
    for (std::size_t i = 0; i < raw.pixels.size(); ++i)
        img[i] = static_cast<float>(raw.pixels[i]) / 255.0f;

    const Diagnosis d = hierarchical_predict(binary, benign, malignant, img);

    const char* class_name = d.tumor_class == TumorClass::malignant ? "malignant" : "benign";
    const auto& taxonomy =
        d.tumor_class == TumorClass::malignant ? malignant_subtypes() : benign_subtypes();
    std::cout << std::setprecision(6);
    std::cout << "class: " << class_name << " (benign " << d.class_probs[0] << ", malignant "
              << d.class_probs[1] << ")\n";
    std::cout << "subtype: " << d.subtype << " (";
    for (std::size_t i = 0; i < 4; ++i)
        std::cout << (i ? ", " : "") << taxonomy[i] << " " << d.subtype_probs[i];
    std::cout << ")\n";

    json machine;
    machine["class"] = class_name;
    machine["class_probs"] = {d.class_probs[0], d.class_probs[1]};
    machine["subtype"] = d.subtype;
    machine["subtype_probs"] = {d.subtype_probs[0], d.subtype_probs[1], d.subtype_probs[2],
                                d.subtype_probs[3]};
    std::cout << machine.dump() << "\n";
    return 0;
}

EpochHistory parse_history_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open history '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "epoch,train_loss,train_acc,val_loss,val_acc,lr")
        throw ParseError(path + ": line 1: unexpected header '" + line + "'");
    EpochHistory h;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        EpochRow r;
        char c;
        if (!(row >> r.epoch >> c >> r.train_loss >> c >> r.train_acc >> c >> r.val_loss >> c >>
              r.val_acc >> c >> r.lr))
            throw ParseError(path + ": line " + std::to_string(lineno) + ": malformed row");
        h.rows.push_back(r);
    }
    if (h.rows.empty()) throw ParseError(path + ": no data rows");
    return h;
}

ConfusionMatrix parse_confusion_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open confusion matrix '" + path + "'");
    std::vector<std::vector<std::uint64_t>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::uint64_t> row;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stoull(cell));
            } catch (const std::exception&) {
                throw ParseError(path + ": line " + std::to_string(lineno) + ": non-numeric cell '" +
                                 cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(path + ": empty confusion matrix");
    const std::size_t k = rows.size();
    ConfusionMatrix cm(k);
    for (std::size_t a = 0; a < k; ++a) {
        if (rows[a].size() != k)
            throw ParseError(path + ": line " + std::to_string(a + 1) + ": expected " +
                             std::to_string(k) + " cells, got " + std::to_string(rows[a].size()));
        for (std::size_t p = 0; p < k; ++p) cm.at(a, p) = rows[a][p];
    }
    return cm;
}

int cmd_report(const std::string& history_path, const std::string& confusion_path,
               const std::string& out) {
    fs::create_directories(out);
    const EpochHistory history = parse_history_csv(history_path);
    write_file((fs::path(out) / "curves.svg").string(), history_curves_svg(history));
    if (!confusion_path.empty()) {
        const ConfusionMatrix cm = parse_confusion_csv(confusion_path);
        write_file((fs::path(out) / "confusion.svg").string(), confusion_heatmap_svg(cm));
    }
    std::cout << "report written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"histopathology CNN engine: multi-scale fusion classifiers over BreaKHis-style data"};
    app.require_subcommand(1);

    std::string scan_root, scan_out;
    auto* scan = app.add_subcommand("scan", "index a BreaKHis-style directory into a manifest CSV");
    scan->add_option("root", scan_root, "directory to scan")->required();
    scan->add_option("--out", scan_out, "manifest CSV path")->required();

    std::string train_config;
    auto* train = app.add_subcommand("train", "train a model from a JSON run config");
    train->add_option("--config", train_config, "run config JSON")->required();

    std::string tune_config;
    bool mock_objective = false;
    auto* tune = app.add_subcommand("tune", "PSO search over learning rate and dropout");
    tune->add_option("--config", tune_config, "run config JSON")->required();
    tune->add_flag("--mock-objective", mock_objective,
                   "optimize a closed-form mock objective instead of training");

    std::string eval_weights, eval_manifest, eval_out;
    auto* evaluate = app.add_subcommand("evaluate", "evaluate saved weights against a manifest");
    evaluate->add_option("--weights", eval_weights, "weights file")->required();
    evaluate->add_option("--manifest", eval_manifest, "manifest CSV")->required();
    evaluate->add_option("--out", eval_out, "output directory")->required();

    std::string pred_binary, pred_benign, pred_malignant, pred_image;
    auto* predict = app.add_subcommand("predict", "hierarchical two-stage diagnosis of one image");
    predict->add_option("--binary", pred_binary, "binary model weights")->required();
    predict->add_option("--benign", pred_benign, "benign subtype model weights")->required();
    predict->add_option("--malignant", pred_malignant, "malignant subtype model weights")->required();
    predict->add_option("image", pred_image, "image file (binary PPM)")->required();

    std::string report_history, report_confusion, report_out;
    auto* report = app.add_subcommand("report", "render history curves and confusion heatmap SVGs");
    report->add_option("--history", report_history, "history CSV")->required();
    report->add_option("--confusion", report_confusion, "confusion CSV");
    report->add_option("--out", report_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUserError;
    }

    try {
        if (scan->parsed()) return cmd_scan(scan_root, scan_out);
        if (train->parsed()) return cmd_train(train_config);
        if (tune->parsed()) return cmd_tune(tune_config, mock_objective);
        if (evaluate->parsed()) return cmd_evaluate(eval_weights, eval_manifest, eval_out);
        if (predict->parsed()) return cmd_predict(pred_binary, pred_benign, pred_malignant, pred_image);
        if (report->parsed()) return cmd_report(report_history, report_confusion, report_out);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumericError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUserError;
    }
    return kExitUserError;
}
