#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "salfx/ablation.hpp"
#include "salfx/checkpoint.hpp"
#include "salfx/data.hpp"
#include "salfx/image_io.hpp"
#include "salfx/metrics.hpp"
#include "salfx/net.hpp"
#include "salfx/priors.hpp"
#include "salfx/report.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace salfx;

constexpr const char* kToolVersion = "0.1.0";

struct Common {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;
    bool quiet = false;
};

/// Raised for entry-level failures that should not stop the whole run.
struct EntryError {
    std::string id;
    std::string message;
};

void say(const Common& c, const std::string& msg)
{
    if (!c.quiet) std::cerr << msg << '\n';
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t digest_bytes(const std::vector<unsigned char>& b, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()), h);
}

std::string file_digest(const fs::path& p) { return hex64(digest_bytes(io::read_bytes(p))); }

/// One digest over several files, chained in the given order.
std::string files_digest(const std::vector<fs::path>& files)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files)
        if (fs::exists(f)) h = digest_bytes(io::read_bytes(f), h);
    return hex64(h);
}

std::vector<fs::path> data_files(const data::DatasetManifest& m)
{
    std::vector<fs::path> out;
    for (const auto& e : m.entries) {
        out.push_back(m.resolve(e.image));
        out.push_back(m.resolve(e.fixations));
        if (e.density) out.push_back(m.resolve(*e.density));
    }
    return out;
}

json report_header(const std::string& command, const Common& c, json config, json inputs)
{
    json j;
    j["tool"] = "salfx";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["seed"] = c.seed;
    j["config"] = std::move(config);
    j["inputs"] = std::move(inputs);
    return j;
}

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) throw io::IoError("cannot create " + p.string());
    out << text;
    if (!out) throw io::IoError("write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json error_list(const std::vector<EntryError>& errors)
{
    json arr = json::array();
    for (const auto& e : errors) arr.push_back({{"id", e.id}, {"message", e.message}});
    return arr;
}

int finish(const Common& c, const std::vector<EntryError>& errors)
{
    for (const auto& e : errors) std::cerr << "error: entry '" << e.id << "': " << e.message << '\n';
    if (!errors.empty()) {
        std::cerr << errors.size() << " entr" << (errors.size() == 1 ? "y" : "ies") << " failed\n";
        return 1;
    }
    say(c, "done");
    return 0;
}

/// Runs fn(i) for i in [0, n) on `jobs` threads. Failures are collected per
/// index and returned in index order.
template <class Fn>
std::vector<std::optional<std::string>> parallel_for(std::size_t n, std::size_t jobs, Fn fn)
{
    std::vector<std::optional<std::string>> failures(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return failures;
}

fs::path require_out(const Common& c)
{
    if (c.out.empty()) throw std::invalid_argument("--out is required");
    fs::create_directories(c.out);
    return c.out;
}

// ---------------------------------------------------------------------------
// Config files: keys are long option names without dashes, either at the top
// level or under the subcommand's name. Flags given on the command line win.

std::string scalar_to_arg(const json& v)
{
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw std::invalid_argument("config values must be strings, numbers or booleans");
}

void apply_config(CLI::App& sub, const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config " + path + ": top level must be an object");
    json flat = json::object();
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!it.value().is_object()) flat[it.key()] = it.value();
    if (j.contains(sub.get_name()) && j[sub.get_name()].is_object())
        for (auto it = j[sub.get_name()].begin(); it != j[sub.get_name()].end(); ++it) flat[it.key()] = it.value();

    for (auto it = flat.begin(); it != flat.end(); ++it) {
        if (it.key() == "config") continue;
        CLI::Option* opt = sub.get_option_no_throw("--" + it.key());
        if (opt == nullptr) throw std::invalid_argument("config " + path + ": unknown option '" + it.key() + "'");
        if (opt->count() > 0) continue;
        if (it.value().is_array()) {
            for (const auto& v : it.value()) opt->add_result(scalar_to_arg(v));
        } else {
            opt->add_result(scalar_to_arg(it.value()));
        }
        opt->run_callback();
    }
}

void add_common(CLI::App& sub, Common& c)
{
    sub.add_option("--seed", c.seed, "Master seed; all randomness derives from it")->capture_default_str();
    sub.add_option("--config", c.config, "JSON file with option values (flags win)");
    sub.add_option("--out", c.out, "Output directory");
    sub.add_flag("--quiet", c.quiet, "Suppress progress messages");
}

data::DatasetManifest load_manifest(const std::string& path)
{
    if (path.empty()) throw std::invalid_argument("--manifest is required");
    return data::DatasetManifest::load(path);
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
    std::size_t n = 100;
    std::size_t classes = 8;
    std::size_t canvas = 64;
    std::size_t distractors = 5;
    std::size_t fixations = 10;
    std::string feature = "color";
    std::string placement = "uniform";
    double noise_rate = 0.0;
    double center_sigma = 1.0 / 6.0;
    // 64 px spanning the 32 degrees of a 1280 px display at 40 px/deg.
    double pxva = 2.0;
};

int run_gen(const Common& c, const GenArgs& a)
{
    const fs::path out = require_out(c);
    data::PopoutSpec spec;
    spec.count = a.n;
    spec.num_classes = a.classes;
    spec.canvas = a.canvas;
    spec.distractors = a.distractors;
    spec.fixations_per_image = a.fixations;
    spec.feature = data::parse_feature(a.feature);
    spec.placement = data::parse_placement(a.placement);
    spec.noise_rate = a.noise_rate;
    spec.center_sigma = a.center_sigma;
    spec.seed = derive_seed(c.seed, "gen.stimuli");
    data::validate(spec);
    if (!(a.pxva > 0.0)) throw std::invalid_argument("--pxva must be positive");

    for (const char* d : {"images", "fixations", "masks", "density"}) fs::create_directories(out / d);
    data::DatasetManifest m;
    m.name = "popout";
    m.pxva = a.pxva;
    m.root = out;
    std::map<int, std::size_t> histogram;
    for (std::size_t i = 0; i < a.n; ++i) {
        const data::PopoutSample s = data::gen_popout_item(spec, i);
        char id[32];
        std::snprintf(id, sizeof id, "img%05zu", i);
        data::ManifestEntry e;
        e.id = id;
        e.image = fs::path("images") / (e.id + ".ppm");
        e.fixations = fs::path("fixations") / (e.id + ".csv");
        e.mask = fs::path("masks") / (e.id + ".pgm");
        e.density = fs::path("density") / (e.id + ".pgm");
        e.label = s.label;
        io::save_ppm(m.resolve(e.image), s.image);
        data::save_fixations(m.resolve(e.fixations), e.id, s.fixations);
        io::save_pgm16(m.resolve(*e.mask), s.mask);
        io::save_map_pgm16(m.resolve(*e.density), data::fixations_to_density(s.fixations, a.pxva).map());
        m.entries.push_back(std::move(e));
        ++histogram[s.label];
    }
    m.save(out / "manifest.json");

    json config = {{"n", a.n},
                   {"classes", a.classes},
                   {"canvas", a.canvas},
                   {"distractors", a.distractors},
                   {"fixations", a.fixations},
                   {"feature", a.feature},
                   {"placement", a.placement},
                   {"noise-rate", a.noise_rate},
                   {"center-sigma", a.center_sigma},
                   {"pxva", a.pxva}};
    json report = report_header("gen", c, config, json::object());
    json labels = json::object();
    for (const auto& [label, count] : histogram) labels[std::to_string(label)] = count;
    report["count"] = a.n;
    report["labels"] = labels;
    report["manifest"] = "manifest.json";
    write_json(out / "gen_report.json", report);
    say(c, "wrote " + std::to_string(a.n) + " stimuli to " + out.string());
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string manifest;
    std::size_t epochs = 4;
    std::size_t pretrain_epochs = 7;
    double lr = 0.05;
    double pretrain_lr = 0.05;
    std::size_t batch = 16;
    std::size_t input_size = 64;
    double holdout = 0.0;
};

json phase_json(const std::string& name, const TrainOptions& o, const TrainLog& log)
{
    json j;
    j["phase"] = name;
    j["epochs"] = o.epochs;
    j["lr"] = o.lr;
    j["batch"] = o.batch_size;
    j["batch_losses"] = log.batch_losses;
    j["epoch_losses"] = log.epoch_losses;
    j["heldout_accuracy"] = std::isfinite(log.heldout_accuracy) ? json(log.heldout_accuracy) : json(nullptr);
    return j;
}

int run_train(const Common& c, const TrainArgs& a)
{
    const fs::path out = require_out(c);
    const auto m = load_manifest(a.manifest);
    if (m.entries.empty()) throw std::invalid_argument("manifest has no entries");
    if (a.holdout < 0.0 || a.holdout >= 1.0) throw std::invalid_argument("--holdout must be in [0,1)");
    if (a.batch == 0) throw std::invalid_argument("--batch must be positive");

    LabeledSet all;
    int max_label = -1;
    for (const auto& e : m.entries) {
        if (!e.label) throw data::DataError("entry '" + e.id + "' has no label");
        if (*e.label < 0) throw data::DataError("entry '" + e.id + "' has a negative label");
        Tensor img = io::load_image(m.resolve(e.image));
        if (img.dim(1) != a.input_size || img.dim(2) != a.input_size)
            img = ops::bilinear_resize(img.reshaped(Shape{1, 3, img.dim(1), img.dim(2)}), a.input_size,
                                       a.input_size)
                      .reshaped(Shape{3, a.input_size, a.input_size});
        all.images.push_back(std::move(img));
        all.labels.push_back(*e.label);
        max_label = std::max(max_label, *e.label);
    }
    const auto classes = static_cast<std::size_t>(std::max(max_label + 1, 2));

    LabeledSet train, heldout;
    const auto part = data::split(all.size(), 1.0 - a.holdout, derive_seed(c.seed, "train.holdout"));
    for (std::size_t i : part.train) {
        train.images.push_back(all.images[i]);
        train.labels.push_back(all.labels[i]);
    }
    for (std::size_t i : part.test) {
        heldout.images.push_back(all.images[i]);
        heldout.labels.push_back(all.labels[i]);
    }
    all = {};
    if (train.size() == 0) throw std::invalid_argument("no training images left after the holdout split");

    TwoBranchNet net(NetworkConfig::for_input(a.input_size, classes));
    init_network(net, derive_seed(c.seed, "train.init"));

    auto progress = [&c](const char* phase) {
        return [&c, phase](std::size_t epoch, std::size_t batch, double loss) {
            if (!c.quiet && batch == 0)
                std::cerr << phase << " epoch " << epoch << " first batch loss " << format_double(loss) << '\n';
        };
    };
    TrainOptions pre;
    pre.epochs = a.pretrain_epochs;
    pre.lr = a.pretrain_lr;
    pre.batch_size = a.batch;
    pre.seed = derive_seed(c.seed, "train.pretrain");
    pre.heldout = heldout.size() ? &heldout : nullptr;
    pre.on_batch = progress("pretrain");
    say(c, "phase pretrain: " + std::to_string(a.pretrain_epochs) + " epochs on " +
               std::to_string(train.size()) + " images");
    const TrainLog pre_log = pretrain_rgb(net, train, pre);
    checkpoint::save(out / "pretrain.salf", net);

    TrainOptions sel = pre;
    sel.epochs = a.epochs;
    sel.lr = a.lr;
    sel.seed = derive_seed(c.seed, "train.selective");
    sel.on_batch = progress("selective");
    say(c, "phase selective: " + std::to_string(a.epochs) + " epochs");
    const TrainLog sel_log = train_selective(net, train, sel);
    checkpoint::save(out / "model.salf", net);

    json config = {{"manifest", a.manifest},      {"epochs", a.epochs}, {"pretrain-epochs", a.pretrain_epochs},
                   {"lr", a.lr},                  {"pretrain-lr", a.pretrain_lr},
                   {"batch", a.batch},            {"input-size", a.input_size},
                   {"holdout", a.holdout},        {"classes", classes}};
    json inputs = {{"manifest", file_digest(a.manifest)}, {"data", files_digest(data_files(m))}};
    json report = report_header("train", c, config, inputs);
    report["train_count"] = train.size();
    report["heldout_count"] = heldout.size();
    report["phases"] = json::array({phase_json("pretrain", pre, pre_log), phase_json("selective", sel, sel_log)});
    report["checkpoints"] = {{"pretrain", "pretrain.salf"}, {"model", "model.salf"}};
    write_json(out / "loss.json", report);
    say(c, "wrote " + (out / "model.salf").string());
    return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
    std::string checkpoint;
    std::string manifest;
    double blur = 0.0;
    std::size_t jobs = 1;
};

int run_predict(const Common& c, const PredictArgs& a)
{
    const fs::path out = require_out(c);
    if (a.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
    if (a.blur < 0.0) throw std::invalid_argument("--blur must be nonnegative");
    const TwoBranchNet net = checkpoint::load(a.checkpoint);
    const auto m = load_manifest(a.manifest);

    std::vector<json> rows(m.entries.size());
    const auto failures = parallel_for(m.entries.size(), a.jobs, [&](std::size_t i) {
        const auto& e = m.entries[i];
        const Tensor image = io::load_image(m.resolve(e.image));
        const SaliencyMap map = predict_saliency(net, image, a.blur);
        io::save_map_pgm16(out / (e.id + ".pgm"), map);
        rows[i] = {{"id", e.id}, {"width", map.width()}, {"height", map.height()}, {"file", e.id + ".pgm"}};
    });

    std::vector<EntryError> errors;
    json done = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (failures[i])
            errors.push_back({m.entries[i].id, *failures[i]});
        else
            done.push_back(rows[i]);
    }
    json config = {{"checkpoint", a.checkpoint}, {"manifest", a.manifest}, {"blur", a.blur}};
    json inputs = {{"checkpoint", file_digest(a.checkpoint)},
                   {"manifest", file_digest(a.manifest)},
                   {"data", files_digest(data_files(m))}};
    json report = report_header("predict", c, config, inputs);
    report["predictions"] = done;
    report["errors"] = error_list(errors);
    write_json(out / "predict_report.json", report);
    return finish(c, errors);
}

// ---------------------------------------------------------------------------
// centerbias

struct CenterBiasArgs {
    std::string shape = "circular";
    double dva = 2.0;
    double pxva = 35.0;
    double stretch = 1.5;
    std::size_t width = 0;
    std::size_t height = 0;
    std::string supervised;
};

int run_centerbias(const Common& c, const CenterBiasArgs& a)
{
    const fs::path out = require_out(c);
    json config = {{"shape", a.shape}, {"dva", a.dva},       {"pxva", a.pxva},
                   {"stretch", a.stretch}, {"width", a.width}, {"height", a.height},
                   {"supervised", a.supervised}};
    if (a.supervised.empty()) {
        CenterBiasSpec spec;
        spec.dva_factor = a.dva;
        spec.pxva = a.pxva;
        spec.shape = parse_center_bias_shape(a.shape);
        spec.horizontal_stretch = a.stretch;
        spec.width = a.width;
        spec.height = a.height;
        const SaliencyMap cb = make_gaussian_cb(spec);
        io::save_pgm16(out / "cb.pgm", cb);
        json report = report_header("centerbias", c, config, json::object());
        const double sy = dva_to_sigma(a.dva, a.pxva);
        report["sigma_y"] = sy;
        report["sigma_x"] = spec.shape == CenterBiasShape::ellipsoid ? sy * a.stretch : sy;
        report["files"] = {"cb.pgm"};
        write_json(out / "centerbias_report.json", report);
        return finish(c, {});
    }

    const auto m = load_manifest(a.supervised);
    std::vector<DensityMap> maps;
    for (const auto& e : m.entries) maps.push_back(data::load_entry(m, e).density);
    const std::uint64_t split_seed = derive_seed(c.seed, "centerbias.split");
    const SupervisedCenterBias scb = make_supervised_cb(maps, split_seed);
    io::save_pgm16(out / "cb_A.pgm", scb.cb_a);
    io::save_pgm16(out / "cb_B.pgm", scb.cb_b);
    json assignment = json::object();
    for (std::size_t i = 0; i < m.entries.size(); ++i) assignment[m.entries[i].id] = scb.in_a[i] ? "A" : "B";
    json inputs = {{"manifest", file_digest(a.supervised)}, {"data", files_digest(data_files(m))}};
    json report = report_header("centerbias", c, config, inputs);
    report["split_seed"] = split_seed;
    report["assignment"] = assignment;
    report["files"] = {"cb_A.pgm", "cb_B.pgm"};
    write_json(out / "assignment.json", report);
    return finish(c, {});
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string pred;
    std::string manifest;
    std::string cb;
    std::string fusion = "sum";
    std::size_t splits = 100;
    std::size_t jobs = 1;
    bool heatmaps = false;
};

/// A single prior map, or a supervised pair with the per-image assignment.
struct PriorSource {
    std::optional<SaliencyMap> single;
    SaliencyMap a, b;
    std::map<std::string, bool> in_a;
    std::vector<fs::path> files;

    [[nodiscard]] const SaliencyMap& for_image(const std::string& id) const
    {
        if (single) return *single;
        auto it = in_a.find(id);
        if (it == in_a.end()) throw std::invalid_argument("no supervised split assignment for this image");
        return it->second ? b : a; // evaluated with the opposite half
    }
};

std::optional<PriorSource> load_prior(const std::string& path)
{
    if (path.empty()) return std::nullopt;
    PriorSource p;
    if (fs::is_directory(path)) {
        const fs::path dir(path);
        p.files = {dir / "assignment.json", dir / "cb_A.pgm", dir / "cb_B.pgm"};
        std::ifstream in(p.files[0]);
        if (!in) throw std::invalid_argument("cannot open " + p.files[0].string());
        json j;
        in >> j;
        if (!j.contains("assignment") || !j["assignment"].is_object())
            throw std::invalid_argument(p.files[0].string() + " has no assignment object");
        for (auto it = j["assignment"].begin(); it != j["assignment"].end(); ++it)
            p.in_a[it.key()] = it.value().get<std::string>() == "A";
        p.a = io::load_pgm(p.files[1]);
        p.b = io::load_pgm(p.files[2]);
    } else {
        p.files = {path};
        p.single = io::load_pgm(path);
    }
    return p;
}

int run_eval(const Common& c, const EvalArgs& a)
{
    const fs::path out = require_out(c);
    if (a.pred.empty()) throw std::invalid_argument("--pred is required");
    if (a.splits == 0) throw std::invalid_argument("--splits must be positive");
    const auto m = load_manifest(a.manifest);
    const FusionSpec fusion{parse_fusion_mode(a.fusion)};
    const auto prior = load_prior(a.cb);
    if (a.heatmaps) fs::create_directories(out / "fused");

    // Ground truth is loaded up front: every image's sAUC pool needs the
    // fixations of all the others.
    std::vector<std::optional<data::LoadedEntry>> gt(m.entries.size());
    std::vector<std::optional<std::string>> load_failures(m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        try {
            gt[i] = data::load_entry(m, m.entries[i]);
        } catch (const std::exception& e) {
            load_failures[i] = e.what();
        }
    }

    const std::uint64_t eval_seed = derive_seed(c.seed, "eval");
    const metrics::EvalOptions opts{a.splits};
    std::vector<metrics::MetricRow> rows(m.entries.size());
    auto failures = parallel_for(m.entries.size(), a.jobs, [&](std::size_t i) {
        const auto& e = m.entries[i];
        if (load_failures[i]) throw std::runtime_error(*load_failures[i]);
        SaliencyMap pred = io::load_pgm(fs::path(a.pred) / (e.id + ".pgm"));
        if (prior) {
            const SaliencyMap& cb = prior->for_image(e.id);
            pred = fuse(pred, resize_bilinear(cb, pred.width(), pred.height()), fusion);
            if (a.heatmaps) io::save_pgm16(out / "fused" / (e.id + ".pgm"), pred);
        }
        std::vector<Point> pool;
        for (std::size_t j = 0; j < gt.size(); ++j)
            if (j != i && gt[j]) pool.insert(pool.end(), gt[j]->fixations.points.begin(), gt[j]->fixations.points.end());
        rows[i] = metrics::evaluate_all(pred, gt[i]->fixations, gt[i]->density, pool,
                                        derive_seed(eval_seed, e.id), opts);
        rows[i].image_id = e.id;
    });

    MetricReport report;
    std::vector<EntryError> errors;
    std::vector<fs::path> pred_files;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        pred_files.push_back(fs::path(a.pred) / (m.entries[i].id + ".pgm"));
        if (failures[i])
            errors.push_back({m.entries[i].id, *failures[i]});
        else
            report.rows.push_back(rows[i]);
    }
    json config = {{"pred", a.pred},     {"manifest", a.manifest}, {"cb", a.cb},
                   {"fusion", a.fusion}, {"splits", a.splits},     {"heatmaps", a.heatmaps}};
    json inputs = {{"manifest", file_digest(a.manifest)},
                   {"data", files_digest(data_files(m))},
                   {"predictions", files_digest(pred_files)}};
    if (prior) inputs["cb"] = files_digest(prior->files);
    json header = report_header("eval", c, config, inputs);
    report.config = header["config"];
    json j = report.to_json();
    for (const char* key : {"tool", "version", "command", "seed", "inputs"}) j[key] = header[key];
    j["errors"] = error_list(errors);
    write_json(out / "report.json", j);
    write_text(out / "report.csv", report.to_csv());
    return finish(c, errors);
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
    std::vector<std::string> preds;
    std::vector<std::string> manifests;
};

int run_ablate(const Common& c, const AblateArgs& a)
{
    const fs::path out = require_out(c);
    if (a.manifests.empty()) throw std::invalid_argument("--manifest is required");
    if (a.preds.size() != a.manifests.size())
        throw std::invalid_argument("give one --pred directory per --manifest");

    const auto grid = ablation_grid();
    std::vector<std::string> names;
    std::vector<AblationColumn> columns;
    json inputs = json::object();
    for (std::size_t k = 0; k < a.manifests.size(); ++k) {
        const auto m = load_manifest(a.manifests[k]);
        std::string name = m.name;
        while (std::find(names.begin(), names.end(), name) != names.end()) name += "_" + std::to_string(k);
        AblationInput in;
        in.pxva = m.pxva;
        std::vector<fs::path> pred_files;
        for (const auto& e : m.entries) {
            const auto loaded = data::load_entry(m, e);
            pred_files.push_back(fs::path(a.preds[k]) / (e.id + ".pgm"));
            in.predictions.push_back(io::load_pgm(pred_files.back()));
            in.fixations.push_back(loaded.fixations);
            in.densities.push_back(loaded.density);
        }
        say(c, "ablating " + name + " (" + std::to_string(m.entries.size()) + " images)");
        columns.push_back(run_ablation(in, derive_seed(derive_seed(c.seed, "ablate.scb"), name)));
        inputs[name] = {{"manifest", file_digest(a.manifests[k])},
                        {"data", files_digest(data_files(m))},
                        {"predictions", files_digest(pred_files)}};
        names.push_back(name);
    }

    std::ostringstream csv;
    csv << "row,prior,shape,dva,fusion";
    for (const auto& n : names) csv << ',' << n;
    csv << '\n';
    json rows = json::array();
    for (std::size_t r = 0; r < grid.size(); ++r) {
        const auto& g = grid[r];
        csv << g.label() << ',' << (g.supervised ? "SCB" : "UCB") << ','
            << (g.supervised ? "" : std::string(to_string(g.shape))) << ','
            << (g.supervised ? "" : format_double(g.dva)) << ',' << to_string(g.fusion);
        json rj = {{"row", g.label()}, {"fusion", std::string(to_string(g.fusion))}};
        for (std::size_t k = 0; k < names.size(); ++k) {
            csv << ',' << format_double(columns[k].scores[r]);
            rj[names[k]] = columns[k].scores[r];
        }
        csv << '\n';
        rows.push_back(rj);
    }
    json baseline = json::object();
    for (std::size_t k = 0; k < names.size(); ++k) baseline[names[k]] = columns[k].baseline;

    json config = {{"pred", a.preds}, {"manifest", a.manifests}, {"metric", "auc_judd"}};
    json report = report_header("ablate", c, config, inputs);
    report["baseline"] = baseline;
    report["rows"] = rows;
    write_text(out / "ablation.csv", csv.str());
    write_json(out / "ablation.json", report);
    return finish(c, {});
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"salfx: side-effect saliency toolkit"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    Common common;
    GenArgs gen;
    TrainArgs train;
    PredictArgs predict;
    CenterBiasArgs cb;
    EvalArgs eval;
    AblateArgs ablate;

    auto* g = app.add_subcommand("gen", "Generate a synthetic pop-out dataset");
    add_common(*g, common);
    g->add_option("--n", gen.n, "Number of images")->capture_default_str();
    g->add_option("--classes", gen.classes, "Number of target classes (max 32)")->capture_default_str();
    g->add_option("--canvas", gen.canvas, "Canvas size in pixels")->capture_default_str();
    g->add_option("--distractors", gen.distractors, "Distractors per image")->capture_default_str();
    g->add_option("--fixations", gen.fixations, "Synthetic fixations per image")->capture_default_str();
    g->add_option("--feature", gen.feature, "Pop-out feature: color, orientation or size")->capture_default_str();
    g->add_option("--placement", gen.placement, "Target placement: uniform or center")->capture_default_str();
    g->add_option("--noise-rate", gen.noise_rate, "Fraction of center-biased fixations")->capture_default_str();
    g->add_option("--center-sigma", gen.center_sigma, "Sigma of center fixations, fraction of canvas")
        ->capture_default_str();
    g->add_option("--pxva", gen.pxva, "Pixels per degree recorded in the manifest")->capture_default_str();

    auto* t = app.add_subcommand("train", "Pretrain the RGB branch, then train the saliency branch");
    add_common(*t, common);
    t->add_option("--manifest", train.manifest, "Dataset manifest with labels");
    t->add_option("--epochs", train.epochs, "Selective-training epochs")->capture_default_str();
    t->add_option("--pretrain-epochs", train.pretrain_epochs, "Pretraining epochs")->capture_default_str();
    t->add_option("--lr", train.lr, "Selective-training learning rate")->capture_default_str();
    t->add_option("--pretrain-lr", train.pretrain_lr, "Pretraining learning rate")->capture_default_str();
    t->add_option("--batch", train.batch, "Batch size")->capture_default_str();
    t->add_option("--input-size", train.input_size, "Network input size")->capture_default_str();
    t->add_option("--holdout", train.holdout, "Fraction held out for accuracy")->capture_default_str();

    auto* p = app.add_subcommand("predict", "Write saliency maps for every manifest entry");
    add_common(*p, common);
    p->add_option("--checkpoint", predict.checkpoint, "Trained model (.salf)");
    p->add_option("--manifest", predict.manifest, "Dataset manifest");
    p->add_option("--blur", predict.blur, "Gaussian blur sigma in pixels")->capture_default_str();
    p->add_option("--jobs", predict.jobs, "Worker threads")->capture_default_str();

    auto* cbc = app.add_subcommand("centerbias", "Build center-bias prior maps");
    add_common(*cbc, common);
    cbc->add_option("--shape", cb.shape, "circular or ellipsoid")->capture_default_str();
    cbc->add_option("--dva", cb.dva, "Extent in degrees of visual angle")->capture_default_str();
    cbc->add_option("--pxva", cb.pxva, "Pixels per degree")->capture_default_str();
    cbc->add_option("--stretch", cb.stretch, "Horizontal stretch of ellipsoids")->capture_default_str();
    cbc->add_option("--width", cb.width, "Map width");
    cbc->add_option("--height", cb.height, "Map height");
    cbc->add_option("--supervised", cb.supervised, "Manifest for a supervised prior pair");

    auto* e = app.add_subcommand("eval", "Score predictions with the metric battery");
    add_common(*e, common);
    e->add_option("--pred", eval.pred, "Directory of <id>.pgm predictions");
    e->add_option("--manifest", eval.manifest, "Dataset manifest");
    e->add_option("--cb", eval.cb, "Prior PGM, or a supervised prior directory");
    e->add_option("--fusion", eval.fusion, "sum or mult")->capture_default_str();
    e->add_option("--splits", eval.splits, "Negative-sampling rounds for AUC-Borji and sAUC")
        ->capture_default_str();
    e->add_option("--jobs", eval.jobs, "Worker threads")->capture_default_str();
    e->add_flag("--heatmaps", eval.heatmaps, "Also write fused maps as PGM");

    auto* a = app.add_subcommand("ablate", "Fusion and prior ablation table (AUC-Judd)");
    add_common(*a, common);
    a->add_option("--pred", ablate.preds, "Prediction directory, one per manifest");
    a->add_option("--manifest", ablate.manifests, "Dataset manifest, repeatable");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        if (!common.config.empty()) apply_config(*sub, common.config);
        if (sub == g) return run_gen(common, gen);
        if (sub == t) return run_train(common, train);
        if (sub == p) return run_predict(common, predict);
        if (sub == cbc) return run_centerbias(common, cb);
        if (sub == e) return run_eval(common, eval);
        return run_ablate(common, ablate);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
}
