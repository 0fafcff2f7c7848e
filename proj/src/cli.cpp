#include "bagan/cli.hpp"

#include "bagan/errors.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace bagan::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

// Value errors carry no location; the parser adds it.
struct BadValue {
    std::string what;
};

template <class T>
T to_num(const std::string& s)
{
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size())
        throw BadValue{"'" + s + "' is not a valid number"};
    return v;
}

bool to_bool(const std::string& s)
{
    const std::string l = lower(s);
    if (l == "true" || l == "yes" || l == "1" || l == "on")
        return true;
    if (l == "false" || l == "no" || l == "0" || l == "off")
        return false;
    throw BadValue{"'" + s + "' is not a boolean"};
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!trim(item).empty())
            out.push_back(trim(item));
    return out;
}

template <std::size_t N, class T>
std::array<T, N> to_array(const std::string& s)
{
    const auto items = split_list(s);
    if (items.size() != N)
        throw BadValue{"expected " + std::to_string(N) + " comma-separated values, got '" + s + "'"};
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i)
        out[i] = to_num<T>(items[i]);
    return out;
}

template <class A>
std::string join(const A& a)
{
    std::string out;
    for (const auto& v : a)
        out += (out.empty() ? "" : ",") + fmt::format("{}", v);
    return out;
}

std::string num(double v) { return fmt::format("{}", v); }

// Translates library enum parsers into value errors.
template <class F>
auto parse_enum(F&& f, const std::string& s)
{
    try {
        return f(s);
    } catch (const InvalidConfig& e) {
        throw BadValue{e.what()};
    }
}

struct Key {
    std::string section;
    std::string name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& schema()
{
    static const std::vector<Key> keys = {
        {"run", "seed", [](RunConfig& c, const std::string& v) { c.seed = to_num<std::uint64_t>(v); },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        {"run", "out", [](RunConfig& c, const std::string& v) { c.out = v; },
         [](const RunConfig& c) { return c.out.string(); }},

        {"data", "name", [](RunConfig& c, const std::string& v) { c.data.name = v; },
         [](const RunConfig& c) { return c.data.name; }},
        {"data", "source", [](RunConfig& c, const std::string& v) { c.data.source = v; },
         [](const RunConfig& c) { return c.data.source.string(); }},
        {"data", "class_names", [](RunConfig& c, const std::string& v) { c.data.class_names = split_list(v); },
         [](const RunConfig& c) { return join(c.data.class_names); }},
        {"data", "image_shape",
         [](RunConfig& c, const std::string& v) {
             c.data.image_shape = to_array<3, std::int64_t>(v);
             if (c.data.image_shape[0] < 1 || c.data.image_shape[1] < 1 ||
                 (c.data.image_shape[2] != 1 && c.data.image_shape[2] != 3))
                 throw BadValue{"image_shape needs positive H,W and C of 1 or 3"};
         },
         [](const RunConfig& c) { return join(c.data.image_shape); }},
        {"data", "schedule", [](RunConfig& c, const std::string& v) { c.schedule = v; },
         [](const RunConfig& c) { return c.schedule.string(); }},

        {"architecture", "latent_dim", [](RunConfig& c, const std::string& v) { c.arch.latent_dim = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.arch.latent_dim); }},
        {"architecture", "widths", [](RunConfig& c, const std::string& v) { c.arch.widths = to_array<4, int>(v); },
         [](const RunConfig& c) { return join(c.arch.widths); }},
        {"architecture", "leaky_slope",
         [](RunConfig& c, const std::string& v) { c.arch.leaky_slope = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.arch.leaky_slope); }},
        {"architecture", "batch_norm_in_generator_only",
         [](RunConfig& c, const std::string& v) { c.arch.batch_norm_in_generator_only = to_bool(v); },
         [](const RunConfig& c) { return std::string(c.arch.batch_norm_in_generator_only ? "true" : "false"); }},

        {"autoencoder", "mode", [](RunConfig& c, const std::string& v) { c.ae_mode = parse_enum(parse_ae_mode, v); },
         [](const RunConfig& c) { return to_string(c.ae_mode); }},
        {"autoencoder", "epochs", [](RunConfig& c, const std::string& v) { c.ae.epochs = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.ae.epochs); }},
        {"autoencoder", "batch_size", [](RunConfig& c, const std::string& v) { c.ae.batch_size = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.ae.batch_size); }},
        {"autoencoder", "lr", [](RunConfig& c, const std::string& v) { c.ae.adam.lr = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.ae.adam.lr); }},
        {"autoencoder", "beta1", [](RunConfig& c, const std::string& v) { c.ae.adam.beta1 = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.ae.adam.beta1); }},
        {"autoencoder", "beta2", [](RunConfig& c, const std::string& v) { c.ae.adam.beta2 = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.ae.adam.beta2); }},
        {"autoencoder", "freeze_embedding",
         [](RunConfig& c, const std::string& v) { c.ae.freeze_embedding = to_bool(v); },
         [](const RunConfig& c) { return std::string(c.ae.freeze_embedding ? "true" : "false"); }},

        {"train", "batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
        {"train", "lr", [](RunConfig& c, const std::string& v) { c.train.adam.lr = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.train.adam.lr); }},
        {"train", "beta1", [](RunConfig& c, const std::string& v) { c.train.adam.beta1 = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.train.adam.beta1); }},
        {"train", "beta2", [](RunConfig& c, const std::string& v) { c.train.adam.beta2 = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.train.adam.beta2); }},
        {"train", "n_critic", [](RunConfig& c, const std::string& v) { c.train.n_critic = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.critic_ratio()); }},
        {"train", "epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
        {"train", "init_mode",
         [](RunConfig& c, const std::string& v) { c.train.init_mode = parse_enum(parse_init_mode, v); },
         [](const RunConfig& c) { return to_string(c.train.init_mode); }},
        {"train", "checkpoint_every",
         [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.checkpoint_every); }},
        {"train", "wgan_clip", [](RunConfig& c, const std::string& v) { c.train.wgan_clip = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.train.wgan_clip); }},
        {"train", "stage1", [](RunConfig& c, const std::string& v) { c.stage1 = v; },
         [](const RunConfig& c) { return c.stage1.string(); }},
        {"train", "resume", [](RunConfig& c, const std::string& v) { c.resume = to_bool(v); },
         [](const RunConfig& c) { return std::string(c.resume ? "true" : "false"); }},

        {"loss", "variant",
         [](RunConfig& c, const std::string& v) { c.train.loss.variant = parse_enum(parse_loss_variant, v); },
         [](const RunConfig& c) { return to_string(c.train.loss.variant); }},
        {"loss", "lambda", [](RunConfig& c, const std::string& v) { c.train.loss.lambda = to_num<double>(v); },
         [](const RunConfig& c) { return num(c.train.loss.lambda); }},
        {"loss", "interpolation",
         [](RunConfig& c, const std::string& v) {
             c.train.loss.interpolation = parse_enum(parse_interpolation, v);
         },
         [](const RunConfig& c) { return to_string(c.train.loss.interpolation); }},
        {"loss", "version",
         [](RunConfig& c, const std::string& v) { c.train.loss.version = parse_enum(parse_version, v); },
         [](const RunConfig& c) { return to_string(c.train.loss.version); }},
        {"loss", "penalize_label_path",
         [](RunConfig& c, const std::string& v) { c.train.loss.penalize_label_path = to_bool(v); },
         [](const RunConfig& c) { return std::string(c.train.loss.penalize_label_path ? "true" : "false"); }},

        {"eval", "extractor",
         [](RunConfig& c, const std::string& v) {
             if (v != "classifier" && v != "pretrained")
                 throw BadValue{"extractor must be classifier or pretrained"};
             c.eval.extractor = v;
         },
         [](const RunConfig& c) { return c.eval.extractor; }},
        {"eval", "extractor_path", [](RunConfig& c, const std::string& v) { c.eval.extractor_path = v; },
         [](const RunConfig& c) { return c.eval.extractor_path.string(); }},
        {"eval", "classifier_data", [](RunConfig& c, const std::string& v) { c.eval.classifier_data = v; },
         [](const RunConfig& c) { return c.eval.classifier_data.string(); }},
        {"eval", "classifier_epochs",
         [](RunConfig& c, const std::string& v) { c.eval.classifier.epochs = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.eval.classifier.epochs); }},
        {"eval", "classifier_hidden",
         [](RunConfig& c, const std::string& v) { c.eval.classifier.hidden = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.eval.classifier.hidden); }},
        {"eval", "classifier_widths",
         [](RunConfig& c, const std::string& v) { c.eval.classifier.widths = to_array<4, int>(v); },
         [](const RunConfig& c) { return join(c.eval.classifier.widths); }},
        {"eval", "classifier_batch_size",
         [](RunConfig& c, const std::string& v) { c.eval.classifier.batch_size = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.eval.classifier.batch_size); }},
        {"eval", "validation", [](RunConfig& c, const std::string& v) { c.eval.validation = v; },
         [](const RunConfig& c) { return c.eval.validation.string(); }},
        {"eval", "checkpoint", [](RunConfig& c, const std::string& v) { c.eval.checkpoint = v; },
         [](const RunConfig& c) { return c.eval.checkpoint.string(); }},
        {"eval", "samples", [](RunConfig& c, const std::string& v) { c.eval.samples = v; },
         [](const RunConfig& c) { return c.eval.samples.string(); }},
        {"eval", "samples_per_class",
         [](RunConfig& c, const std::string& v) { c.eval.samples_per_class = to_num<std::int64_t>(v); },
         [](const RunConfig& c) { return std::to_string(c.eval.samples_per_class); }},
        {"eval", "grid_rows", [](RunConfig& c, const std::string& v) { c.eval.grid_rows = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.eval.grid_rows); }},
        {"eval", "projection",
         [](RunConfig& c, const std::string& v) { c.eval.projection = parse_enum(parse_projection, v); },
         [](const RunConfig& c) { return std::string(c.eval.projection == Projection::Pca ? "pca" : "tsne"); }},

        {"generate", "checkpoint", [](RunConfig& c, const std::string& v) { c.generate.checkpoint = v; },
         [](const RunConfig& c) { return c.generate.checkpoint.string(); }},
        {"generate", "class", [](RunConfig& c, const std::string& v) { c.generate.cls = to_num<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.generate.cls); }},
        {"generate", "n", [](RunConfig& c, const std::string& v) { c.generate.n = to_num<std::int64_t>(v); },
         [](const RunConfig& c) { return std::to_string(c.generate.n); }},
    };
    return keys;
}

const Key* find_key(const std::string& section, const std::string& name)
{
    for (const auto& k : schema())
        if (k.section == section && k.name == name)
            return &k;
    return nullptr;
}

bool known_section(const std::string& section)
{
    return std::any_of(schema().begin(), schema().end(), [&](const Key& k) { return k.section == section; });
}

// ---------------------------------------------------------------------------

void write_echo(const RunConfig& cfg)
{
    fs::create_directories(cfg.out);
    std::ofstream out(cfg.out / "config.echo", std::ios::trunc);
    out << cfg.echo();
    if (!out)
        throw std::runtime_error("cannot write " + (cfg.out / "config.echo").string());
}

ArchitectureConfig resolved_arch(const RunConfig& cfg)
{
    ArchitectureConfig a = cfg.arch;
    a.channels = static_cast<int>(cfg.data.image_shape[2]);
    return a;
}

std::pair<ImageBatch, LabelBatch> load_from(const RunConfig& cfg, const fs::path& source)
{
    DatasetSpec spec = cfg.data;
    spec.source = source;
    return load_dataset(spec);
}

std::pair<ImageBatch, LabelBatch> load_scaled(const RunConfig& cfg, const fs::path& source)
{
    auto [raw, labels] = load_from(cfg, source);
    return {preprocess(raw), std::move(labels)};
}

void require(bool ok, const std::string& what)
{
    if (!ok)
        throw ConfigError(what);
}

void write_png(const fs::path& path, const ImageBatch& raw, std::int64_t i)
{
    const int h = static_cast<int>(raw.h), w = static_cast<int>(raw.w), c = static_cast<int>(raw.c);
    cv::Mat m(h, w, CV_8UC(c));
    const auto img = raw.image(i);
    std::transform(img.begin(), img.end(), m.data, [](float v) { return static_cast<std::uint8_t>(v); });
    if (c == 3)
        cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), m))
        throw std::runtime_error("cannot write " + path.string());
}

std::unique_ptr<FeatureExtractor> make_extractor(const RunConfig& cfg, int channels, int num_classes)
{
    if (cfg.eval.extractor == "pretrained")
        return load_pretrained_extractor(cfg.eval.extractor_path);
    const fs::path source = cfg.eval.classifier_data.empty() ? cfg.data.source : cfg.eval.classifier_data;
    auto [images, labels] = load_scaled(cfg, source);
    ClassifierConfig cc = cfg.eval.classifier;
    cc.seed = cfg.seed;
    auto clf = std::make_unique<ClassifierExtractor>(channels, num_classes, cc);
    const auto log = clf->train(images, labels);
    fmt::print("classifier trained on {} images, final loss {:.4f}\n", images.n, log.empty() ? 0.0 : log.back());
    clf->save(cfg.out / "extractor");
    return clf;
}

// Per-class samples drawn exactly as fid_per_class(G, ...) draws them.
std::pair<ImageBatch, LabelBatch> generated_set(const Generator& G, const LabelBatch& validation_labels,
                                                std::int64_t per_class, std::uint64_t seed)
{
    Rng rng(seed);
    ImageBatch all;
    LabelBatch labels{{}, validation_labels.num_classes};
    const auto counts = validation_labels.counts();
    for (int k = 0; k < validation_labels.num_classes; ++k) {
        const std::int64_t n = per_class > 0 ? per_class : counts[static_cast<std::size_t>(k)];
        ImageBatch part = generate_class(G, k, n, rng);
        if (all.n == 0) {
            all = std::move(part);
        } else {
            all.data.insert(all.data.end(), part.data.begin(), part.data.end());
            all.n += part.n;
        }
        labels.labels.insert(labels.labels.end(), static_cast<std::size_t>(n), k);
    }
    return {std::move(all), std::move(labels)};
}

// A grid for a sample set: real row, then the first `rows` samples per class.
ImageGrid sample_grid(const ImageBatch& samples, const LabelBatch& sample_labels, const ImageBatch& real,
                      const LabelBatch& real_labels, int rows)
{
    ImageGrid g;
    const int cols = real_labels.num_classes;
    g.layout.rows = rows;
    for (int k = 0; k < cols; ++k)
        g.layout.classes.push_back(k);
    g.cells = ImageBatch((rows + 1) * cols, real.h, real.w, real.c, RangeTag::ScaledMinus1To1);
    for (int k = 0; k < cols; ++k) {
        const auto ri = real_labels.indices_of(k);
        if (ri.empty())
            throw MissingRealExample("class " + std::to_string(k));
        auto src = real.image(ri.front());
        std::copy(src.begin(), src.end(), g.cells.image(k).begin());
        const auto si = sample_labels.indices_of(k);
        for (int r = 0; r < rows && r < static_cast<int>(si.size()); ++r) {
            auto s = samples.image(si[static_cast<std::size_t>(r)]);
            std::copy(s.begin(), s.end(), g.cells.image((r + 1) * cols + k).begin());
        }
    }
    return g;
}

} // namespace

// ---------------------------------------------------------------------------

std::string to_string(AeMode m) { return m == AeMode::Supervised ? "supervised" : "unsupervised"; }

AeMode parse_ae_mode(const std::string& s)
{
    const std::string l = lower(s);
    if (l == "supervised")
        return AeMode::Supervised;
    if (l == "unsupervised")
        return AeMode::Unsupervised;
    throw InvalidConfig("unknown autoencoder mode '" + s + "' (expected supervised or unsupervised)");
}

std::string RunConfig::echo() const
{
    std::string out;
    std::string section;
    for (const auto& k : schema()) {
        if (k.section != section) {
            section = k.section;
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += k.name + " = " + k.get(*this) + "\n";
    }
    return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin)
{
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        const auto comment = line.find_first_of("#;");
        line = trim(line.substr(0, comment));
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!known_section(section))
                throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + "expected 'key = value'");
        const std::string name = trim(line.substr(0, eq));
        if (section.empty())
            throw ConfigError(where + "key '" + name + "' appears before any [section]");
        const Key* key = find_key(section, name);
        if (!key)
            throw ConfigError(where + "unknown key '" + name + "' in [" + section + "]");
        try {
            key->set(cfg, trim(line.substr(eq + 1)));
        } catch (const BadValue& e) {
            throw ConfigError(where + section + "." + name + ": " + e.what);
        }
    }
}

void apply_config_file(RunConfig& cfg, const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path.string());
}

void set_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value)
{
    const auto dot = dotted_key.find('.');
    const Key* key = dot == std::string::npos ? nullptr : find_key(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
    if (!key)
        throw ConfigError("unknown key '" + dotted_key + "'");
    try {
        key->set(cfg, value);
    } catch (const BadValue& e) {
        throw ConfigError(dotted_key + ": " + e.what);
    }
}

// ---------------------------------------------------------------------------

PrepareResult cmd_prepare_data(const RunConfig& cfg)
{
    write_echo(cfg);
    require(!cfg.data.source.empty(), "data.source is required");
    require(!cfg.schedule.empty(), "data.schedule is required");
    require(fs::exists(cfg.schedule), "schedule file not found: " + cfg.schedule.string());
    const ImbalanceSchedule sched = read_schedule(cfg.schedule);
    auto [raw, labels] = load_dataset(cfg.data);
    auto [images, kept] = apply_schedule(raw, labels, sched);

    PrepareResult r;
    r.container = cfg.out / "dataset.npz";
    save_container(r.container, images, kept);
    r.counts = kept.counts();
    std::ofstream summary(cfg.out / "summary.csv", std::ios::trunc);
    summary << "class,name,count\n";
    fmt::print("{:>5}  {:<20} {:>8}\n", "class", "name", "count");
    for (std::size_t k = 0; k < r.counts.size(); ++k) {
        const std::string name = k < cfg.data.class_names.size() ? cfg.data.class_names[k] : std::to_string(k);
        summary << k << "," << name << "," << r.counts[k] << "\n";
        fmt::print("{:>5}  {:<20} {:>8}\n", k, name, r.counts[k]);
    }
    fmt::print("wrote {} images to {}\n", images.n, r.container.string());
    return r;
}

void cmd_pretrain_ae(const RunConfig& cfg)
{
    write_echo(cfg);
    require(cfg.ae.epochs >= 1, "autoencoder.epochs must be >= 1");
    require(cfg.ae.batch_size >= 1, "autoencoder.batch_size must be >= 1");
    const ArchitectureConfig arch = resolved_arch(cfg);
    arch.validate();
    auto [data, labels] = load_scaled(cfg, cfg.data.source);
    AeTrainConfig tc = cfg.ae;
    tc.seed = cfg.seed;
    Rng rng(cfg.seed);
    std::vector<EpochLoss> log;
    if (cfg.ae_mode == AeMode::Supervised) {
        auto ae = build_supervised_ae(arch, labels.num_classes, rng);
        log = pretrain_supervised_ae(ae, data, labels, tc);
        save_stage1(cfg.out / "ae", ae, arch, labels.num_classes);
    } else {
        auto ae = build_unsupervised_ae(arch, rng);
        log = pretrain_unsupervised_ae(ae, data, tc);
        const ClassGaussianModel g = fit_class_gaussians(ae.encoder, data, labels);
        save_stage1(cfg.out / "ae", ae, arch, labels.num_classes, &g);
    }
    write_loss_log(cfg.out / "ae_loss.csv", log);
    fmt::print("{} autoencoder: final mse {:.6f}, checkpoint {}\n", to_string(cfg.ae_mode), log.back().mse,
               (cfg.out / "ae").string());
}

RunResult cmd_train_gan(const RunConfig& cfg)
{
    write_echo(cfg);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.validate();
    auto [data, labels] = load_scaled(cfg, cfg.data.source);
    TrainOptions opts;
    opts.config_echo = cfg.echo();
    opts.on_epoch = [](const TrainState& s, const StepMetrics& m) {
        fmt::print("epoch {:>4}  step {:>7}  d_loss {:.5f}  g_loss {:.5f}  gp {:.5f}\n", s.epoch, m.step, m.d_loss,
                   m.g_loss, m.gp);
        std::fflush(stdout);
        return true;
    };
    if (cfg.resume)
        return resume(data, labels, cfg.out, tc.epochs, opts);
    std::optional<Stage1Checkpoint> stage1;
    if (!cfg.stage1.empty() && tc.init_mode != InitMode::None)
        stage1 = load_stage1(cfg.stage1);
    return train(data, labels, resolved_arch(cfg), tc, cfg.out, stage1 ? &*stage1 : nullptr, opts);
}

std::vector<fs::path> cmd_generate(const RunConfig& cfg)
{
    write_echo(cfg);
    require(!cfg.generate.checkpoint.empty(), "generate.checkpoint is required");
    require(cfg.generate.n >= 1, "generate.n must be >= 1");
    const Generator G = load_generator(cfg.generate.checkpoint);
    Rng rng(cfg.seed);
    Tensor z;
    const ImageBatch raw = to_raw(generate_class(G, cfg.generate.cls, cfg.generate.n, rng, &z));

    std::vector<fs::path> files;
    std::ofstream manifest(cfg.out / "generate_manifest.txt", std::ios::trunc);
    manifest << "checkpoint = " << cfg.generate.checkpoint.string() << "\nclass = " << cfg.generate.cls
             << "\nseed = " << cfg.seed << "\nn = " << cfg.generate.n << "\n";
    for (std::int64_t i = 0; i < raw.n; ++i) {
        const fs::path file = cfg.out / fmt::format("class{}_{:05d}.png", cfg.generate.cls, i);
        write_png(file, raw, i);
        files.push_back(file);
        manifest << file.filename().string() << " =";
        for (std::int64_t j = 0; j < z.dim(1); ++j)
            manifest << " " << fmt::format("{}", z[i * z.dim(1) + j]);
        manifest << "\n";
    }
    fmt::print("wrote {} images of class {} to {}\n", files.size(), cfg.generate.cls, cfg.out.string());
    return files;
}

FidReport cmd_evaluate(const RunConfig& cfg)
{
    write_echo(cfg);
    require(!cfg.eval.validation.empty(), "eval.validation is required");
    require(!cfg.eval.checkpoint.empty() || !cfg.eval.samples.empty(), "eval.checkpoint or eval.samples is required");
    require(cfg.eval.grid_rows >= 1, "eval.grid_rows must be >= 1");
    auto [val, vlab] = load_scaled(cfg, cfg.eval.validation);
    const int channels = static_cast<int>(val.c);
    const auto extractor = make_extractor(cfg, channels, vlab.num_classes);

    ImageBatch gen;
    LabelBatch glab;
    ImageGrid grid;
    if (!cfg.eval.samples.empty()) {
        std::tie(gen, glab) = load_scaled(cfg, cfg.eval.samples);
        grid = sample_grid(gen, glab, val, vlab, cfg.eval.grid_rows);
    } else {
        const Generator G = load_generator(cfg.eval.checkpoint);
        std::tie(gen, glab) = generated_set(G, vlab, cfg.eval.samples_per_class, cfg.seed);
        std::vector<int> classes(static_cast<std::size_t>(vlab.num_classes));
        std::iota(classes.begin(), classes.end(), 0);
        grid = image_grid(G, classes, cfg.eval.grid_rows, cfg.seed, val, vlab);
    }
    const FidReport report = fid_per_class(gen, glab, val, vlab, *extractor);
    write_fid_csv(cfg.out / "fid.csv", report);
    write_grid(cfg.out / "grid.png", grid);
    const auto points = feature_projection(val, vlab, gen, glab, *extractor);
    write_projection_csv(cfg.out / "dispersion.csv", points);
    for (const auto& r : report.rows)
        fmt::print("class {:>3}  fid {:>12.5f}  n_real {:>6}  n_gen {:>6}\n", r.cls, r.fid, r.n_real, r.n_gen);
    return report;
}

SilhouetteResult cmd_plot_latents(const RunConfig& cfg)
{
    write_echo(cfg);
    require(!cfg.eval.checkpoint.empty(), "eval.checkpoint must name a stage-1 checkpoint");
    const Stage1Checkpoint ck = load_stage1(cfg.eval.checkpoint);
    auto [data, labels] = load_scaled(cfg, cfg.data.source);
    Tensor latents;
    if (ck.embedding) {
        const SupervisedAutoencoder ae{ck.encoder.clone(), ck.embedding->clone(), ck.decoder.clone()};
        latents = labeled_latents_all(ae, data, labels);
    } else {
        latents = encode_all(ck.encoder, data);
    }
    const DispersionResult d = latent_dispersion(latents, labels.labels, cfg.eval.projection, cfg.seed);
    write_dispersion_csv(cfg.out / "latents.csv", d, labels.labels);
    fmt::print("{} latents: silhouette {:.4f}{}\n", ck.tag, d.silhouette.score,
               d.silhouette.degenerate ? " (degenerate)" : "");
    return d.silhouette;
}

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv)
{
    CLI::App app{"Class-balanced conditional GAN: data preparation, training and evaluation"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "INI run configuration");
    auto* seed_opt = app.add_option("--seed", seed, "Seed for every random draw");
    app.add_option("--out", out_dir, "Output directory");

    auto* prep = app.add_subcommand("prepare-data", "Apply an imbalance schedule and write a dataset container");
    auto* ae = app.add_subcommand("pretrain-ae", "Train the stage-1 autoencoder");
    std::string mode;
    ae->add_option("--mode", mode, "supervised | unsupervised");
    auto* tg = app.add_subcommand("train-gan", "Adversarial training from a stage-1 checkpoint");
    std::string variant, version;
    int epochs = 0;
    bool resume_flag = false;
    tg->add_option("--variant", variant, "original_gan | wgan | wgan_gp | dragan | cdragan | bagan_gp");
    tg->add_option("--version", version, "v1 | v2 | v3");
    tg->add_option("--epochs", epochs, "Total epoch budget");
    tg->add_flag("--resume", resume_flag, "Continue from the newest checkpoint in --out");
    auto* gen = app.add_subcommand("generate", "Sample images of one class");
    std::string checkpoint;
    int cls = 0;
    std::int64_t n = 1;
    auto* gen_ck = gen->add_option("--checkpoint", checkpoint, "GAN checkpoint directory");
    auto* gen_cls = gen->add_option("--class", cls, "Class index");
    auto* gen_n = gen->add_option("--n", n, "Number of images");
    auto* ev = app.add_subcommand("evaluate", "Per-class FID, image grid and feature projection");
    std::string samples, extractor;
    int rows = 0;
    auto* ev_ck = ev->add_option("--checkpoint", checkpoint, "GAN checkpoint directory");
    ev->add_option("--samples", samples, "Container of generated samples");
    ev->add_option("--extractor", extractor, "classifier | pretrained");
    ev->add_option("--grid-rows", rows, "Generated rows in the grid");
    auto* pl = app.add_subcommand("plot-latents", "Latent dispersion of a stage-1 checkpoint");
    std::string projection;
    auto* pl_ck = pl->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint directory");
    pl->add_option("--projection", projection, "pca | tsne");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        RunConfig cfg;
        if (!config_path.empty())
            apply_config_file(cfg, config_path);
        if (*seed_opt)
            cfg.seed = seed;
        if (!out_dir.empty())
            cfg.out = out_dir;
        if (!mode.empty())
            set_value(cfg, "autoencoder.mode", mode);
        if (!variant.empty())
            set_value(cfg, "loss.variant", variant);
        if (!version.empty())
            set_value(cfg, "loss.version", version);
        if (epochs > 0)
            cfg.train.epochs = epochs;
        if (resume_flag)
            cfg.resume = true;
        if (*gen_ck)
            cfg.generate.checkpoint = checkpoint;
        if (*gen_cls)
            cfg.generate.cls = cls;
        if (*gen_n)
            cfg.generate.n = n;
        if (*ev_ck || *pl_ck)
            cfg.eval.checkpoint = checkpoint;
        if (!samples.empty())
            cfg.eval.samples = samples;
        if (!extractor.empty())
            set_value(cfg, "eval.extractor", extractor);
        if (rows > 0)
            cfg.eval.grid_rows = rows;
        if (!projection.empty())
            set_value(cfg, "eval.projection", projection);

        if (*prep)
            cmd_prepare_data(cfg);
        else if (*ae)
            cmd_pretrain_ae(cfg);
        else if (*tg)
            cmd_train_gan(cfg);
        else if (*gen)
            cmd_generate(cfg);
        else if (*ev)
            cmd_evaluate(cfg);
        else if (*pl)
            cmd_plot_latents(cfg);
        return 0;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}

} // namespace bagan::cli
