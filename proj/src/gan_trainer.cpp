#include "bagan/gan_trainer.hpp"

#include "bagan/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace bagan {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string fmt_double(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const std::string& need(const Manifest& m, const std::string& key)
{
    auto it = m.find(key);
    if (it == m.end())
        throw CheckpointCorrupt("manifest lacks '" + key + "'");
    return it->second;
}

template <class T>
T parse_num(const Manifest& m, const std::string& key)
{
    const std::string& s = need(m, key);
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw CheckpointCorrupt("manifest key '" + key + "' has malformed value '" + s + "'");
    return v;
}

bool wasserstein(LossVariant v) { return v == LossVariant::Wgan || v == LossVariant::WganGp; }

void count_labels(std::vector<std::int64_t>& counts, std::span<const int> labels)
{
    for (int l : labels)
        ++counts[static_cast<std::size_t>(l)];
}

void require_finite_loss(double v, const char* what, std::int64_t step)
{
    if (!std::isfinite(v))
        throw NonFiniteLoss(std::string(what) + " at step " + std::to_string(step));
}

// Runs f, reporting non-finite scores or penalty gradients as a non-finite loss.
template <class F>
auto finite_or_throw(const char* what, std::int64_t step, F&& f)
{
    try {
        return f();
    } catch (const NonFiniteInput& e) {
        throw NonFiniteLoss(std::string(what) + " at step " + std::to_string(step) + ": " + e.what());
    } catch (const NonFiniteGradient& e) {
        throw NonFiniteLoss(std::string(what) + " at step " + std::to_string(step) + ": " + e.what());
    }
}

} // namespace

std::string to_string(InitMode m)
{
    switch (m) {
    case InitMode::Both: return "both";
    case InitMode::GeneratorOnly: return "generator_only";
    case InitMode::None: return "none";
    }
    return "?";
}

InitMode parse_init_mode(const std::string& s)
{
    const std::string l = lower(s);
    if (l == "both")
        return InitMode::Both;
    if (l == "generator_only")
        return InitMode::GeneratorOnly;
    if (l == "none")
        return InitMode::None;
    throw InvalidConfig("unknown init mode '" + s + "' (expected both, generator_only or none)");
}

// ---------------------------------------------------------------------------

int TrainConfig::critic_ratio() const
{
    if (n_critic > 0)
        return n_critic;
    return loss.has_penalty() ? 5 : 1;
}

void TrainConfig::validate() const
{
    if (batch_size < 2)
        throw InvalidConfig("batch_size must be >= 2");
    if (n_critic < 0)
        throw InvalidConfig("n_critic must be >= 1 (0 selects the variant default)");
    if (epochs < 1)
        throw InvalidConfig("epochs must be >= 1");
    if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
        !(adam.eps > 0))
        throw InvalidConfig("Adam needs lr > 0, betas in [0, 1) and eps > 0");
    if (checkpoint_every < 0)
        throw InvalidConfig("checkpoint_every must be >= 0");
    if (!(wgan_clip > 0))
        throw InvalidConfig("wgan_clip must be > 0");
    loss.validate();
}

Manifest TrainConfig::to_manifest() const
{
    return {
        {"batch_size", std::to_string(batch_size)},
        {"lr", fmt_double(adam.lr)},
        {"beta1", fmt_double(adam.beta1)},
        {"beta2", fmt_double(adam.beta2)},
        {"adam_eps", fmt_double(adam.eps)},
        {"n_critic", std::to_string(critic_ratio())},
        {"epochs", std::to_string(epochs)},
        {"seed", std::to_string(seed)},
        {"variant", to_string(loss.variant)},
        {"lambda", fmt_double(loss.lambda)},
        {"interpolation", to_string(loss.interpolation)},
        {"version", to_string(loss.version)},
        {"penalize_label_path", loss.penalize_label_path ? "true" : "false"},
        {"init_mode", to_string(init_mode)},
        {"checkpoint_every", std::to_string(checkpoint_every)},
        {"wgan_clip", fmt_double(wgan_clip)},
    };
}

TrainConfig TrainConfig::from_manifest(const Manifest& m)
{
    TrainConfig c;
    c.batch_size = parse_num<int>(m, "batch_size");
    c.adam.lr = parse_num<double>(m, "lr");
    c.adam.beta1 = parse_num<double>(m, "beta1");
    c.adam.beta2 = parse_num<double>(m, "beta2");
    c.adam.eps = parse_num<double>(m, "adam_eps");
    c.n_critic = parse_num<int>(m, "n_critic");
    c.epochs = parse_num<int>(m, "epochs");
    c.seed = parse_num<std::uint64_t>(m, "seed");
    c.loss.lambda = parse_num<double>(m, "lambda");
    c.checkpoint_every = parse_num<int>(m, "checkpoint_every");
    c.wgan_clip = parse_num<double>(m, "wgan_clip");
    try {
        c.loss.variant = parse_loss_variant(need(m, "variant"));
        c.loss.interpolation = parse_interpolation(need(m, "interpolation"));
        c.loss.version = parse_version(need(m, "version"));
        c.init_mode = parse_init_mode(need(m, "init_mode"));
    } catch (const InvalidConfig& e) {
        throw CheckpointCorrupt(e.what());
    }
    c.loss.penalize_label_path = need(m, "penalize_label_path") == "true";
    return c;
}

// ---------------------------------------------------------------------------

std::pair<Generator, Discriminator> init_from_stage1(const Stage1Checkpoint& ckpt, const ArchitectureConfig& arch,
                                                     int num_classes, InitMode mode, Rng& rng)
{
    if (ckpt.arch.latent_dim != arch.latent_dim || ckpt.arch.channels != arch.channels ||
        ckpt.arch.widths != arch.widths)
        throw CheckpointIncompatible("stage-1 architecture " + ckpt.arch.signature() + " does not match "
                                     + arch.signature());
    if (ckpt.num_classes != num_classes)
        throw CheckpointIncompatible("stage-1 checkpoint has " + std::to_string(ckpt.num_classes)
                                     + " classes, expected " + std::to_string(num_classes));
    Generator G = build_generator(arch, num_classes, rng);
    Discriminator D = build_discriminator(arch, num_classes, rng);
    try {
        if (mode != InitMode::None) {
            nn::transfer_weights(ckpt.decoder, G.decoder, nn::prefix_map(ckpt.decoder.num_layers()));
            if (ckpt.embedding)
                nn::transfer_weights(*ckpt.embedding, G.embedding, nn::prefix_map(1));
        }
        if (mode == InitMode::Both)
            nn::transfer_weights(ckpt.encoder, D.trunk, nn::prefix_map(trunk_layer_count()));
    } catch (const ShapeMismatch& e) {
        throw CheckpointIncompatible(e.what());
    }
    return {std::move(G), std::move(D)};
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(std::int64_t n, Rng rng) : n_(n), rng_(rng) { reshuffle(); }

void BatchStream::reshuffle()
{
    order_ = shuffled_indices(n_, rng_);
    pos_ = 0;
    ++passes_;
}

std::vector<std::int64_t> BatchStream::next(std::int64_t batch)
{
    if (batch > n_)
        throw InvalidConfig("batch of " + std::to_string(batch) + " exceeds the dataset size " + std::to_string(n_));
    if (pos_ + batch > n_)
        reshuffle();
    std::vector<std::int64_t> out(order_.begin() + pos_, order_.begin() + pos_ + batch);
    pos_ += batch;
    return out;
}

npz::Archive BatchStream::state() const
{
    npz::Archive a;
    a.add("order", npz::Array::from_i64({static_cast<std::int64_t>(order_.size())}, order_));
    const std::int64_t scalars[] = {n_, pos_, passes_};
    a.add("scalars", npz::Array::from_i64({3}, scalars));
    const std::string rs = rng_.state();
    a.add("rng", npz::Array::from_u8({static_cast<std::int64_t>(rs.size())},
                                      std::span(reinterpret_cast<const std::uint8_t*>(rs.data()), rs.size())));
    return a;
}

void BatchStream::load_state(const npz::Archive& a)
{
    if (!a.contains("order") || !a.contains("scalars") || !a.contains("rng"))
        throw CheckpointCorrupt("incomplete batch stream state");
    const auto sc = a.at("scalars").to_int64();
    if (sc.size() != 3)
        throw CheckpointCorrupt("malformed batch stream state");
    order_ = a.at("order").to_int64();
    n_ = sc[0];
    pos_ = sc[1];
    passes_ = sc[2];
    const auto bytes = a.at("rng").to_u8();
    rng_.set_state(std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------------------

TrainState::TrainState(ArchitectureConfig arch_, int num_classes_, Generator G_, Discriminator D_,
                       const TrainConfig& cfg, std::int64_t dataset_size, std::uint64_t seed)
    : arch(std::move(arch_)), num_classes(num_classes_), G(std::move(G_)), D(std::move(D_)),
      opt_g(G.parameters(), cfg.adam), opt_d(D.parameters(), cfg.adam), rng(seed),
      stream(dataset_size, Rng(seed ^ 0xd1b54a32d192ed03ULL)),
      fake_label_counts(static_cast<std::size_t>(num_classes_), 0)
{
}

TrainState make_train_state(const ArchitectureConfig& arch, int num_classes, const TrainConfig& cfg,
                            std::int64_t dataset_size, const Stage1Checkpoint* stage1)
{
    cfg.validate();
    arch.validate();
    Rng init_rng(cfg.seed ^ 0x632be59bd9b4e019ULL);
    if (stage1 && cfg.init_mode != InitMode::None) {
        auto [G, D] = init_from_stage1(*stage1, arch, num_classes, cfg.init_mode, init_rng);
        return TrainState(arch, num_classes, std::move(G), std::move(D), cfg, dataset_size, cfg.seed);
    }
    Generator G = build_generator(arch, num_classes, init_rng);
    Discriminator D = build_discriminator(arch, num_classes, init_rng);
    return TrainState(arch, num_classes, std::move(G), std::move(D), cfg, dataset_size, cfg.seed);
}

CriticMetrics critic_step(TrainState& s, const Tensor& x_r, std::span<const int> y_r, const TrainConfig& cfg)
{
    const LossConfig& L = cfg.loss;
    const std::int64_t n = x_r.dim(0);
    const Tensor z = standard_normal({n, s.arch.latent_dim}, s.rng);
    std::vector<int> y_f = L.balanced() ? sample_balanced_labels(n, s.num_classes, s.rng).labels
                                        : std::vector<int>(y_r.begin(), y_r.end());
    count_labels(s.fake_label_counts, y_f);
    Tensor x_g;
    {
        ag::NoGradGuard no_grad;
        x_g = s.G.generate(ag::Var(z), y_f, nn::Mode::Train).value();
    }

    auto [loss, gp] = finite_or_throw("discriminator loss", s.step, [&] {
        ag::Var real, wrong;
        std::vector<int> y_wrong;
        if (L.balanced()) {
            y_wrong = sample_wrong_labels(y_r, s.num_classes, s.rng);
            const std::span<const int> sets[] = {y_r, y_wrong};
            auto scores = s.D.score_many(ag::Var(x_r), sets);
            real = scores[0];
            wrong = scores[1];
        } else {
            real = s.D.score(ag::Var(x_r), y_r);
        }
        const ag::Var fake = s.D.score(ag::Var(x_g), y_f);

        ag::Var gp;
        if (L.has_penalty() && L.lambda > 0) {
            const Tensor x_hat = interpolate(x_r, x_g, {L.interpolation, {}}, s.rng);
            if (L.penalize_label_path) {
                gp = gradient_penalty(
                    [&](const ag::Var& x, const ag::Var& lv) { return s.D.combine(s.D.features(x), lv); }, x_hat,
                    s.D.label_vector(y_r));
            } else {
                gp = gradient_penalty([&](const ag::Var& x) { return s.D.score(x, y_r); }, x_hat);
            }
        }

        ag::Var loss;
        switch (L.variant) {
        case LossVariant::OriginalGan: loss = original_d_loss(real, fake); break;
        case LossVariant::Wgan: loss = ag::neg(wgan_d_objective(real, fake)); break;
        case LossVariant::WganGp:
            loss = ag::neg(wgan_d_objective(real, fake));
            if (gp.defined())
                loss = ag::add(loss, ag::scale(gp, L.lambda));
            break;
        case LossVariant::Dragan:
        case LossVariant::CDragan:
            loss = gp.defined() ? dragan_d_loss(real, fake, gp, L.lambda) : original_d_loss(real, fake);
            break;
        case LossVariant::BaganGp: loss = bagan_gp_d_loss_from_logits(real, fake, wrong, gp, L.lambda); break;
        }
        return std::pair{loss, gp};
    });
    require_finite_loss(loss.item(), "discriminator loss", s.step);

    const auto params = s.D.parameters();
    s.opt_d.step(ag::grad(loss, params));
    ++s.d_updates;
    if (L.variant == LossVariant::Wgan)
        for (auto p : params)
            for (auto& v : p.mutable_value().values())
                v = std::clamp(v, -cfg.wgan_clip, cfg.wgan_clip);
    return {loss.item(), gp.defined() ? gp.item() : 0.0};
}

double generator_step(TrainState& s, std::span<const int> y_r, const TrainConfig& cfg)
{
    const LossConfig& L = cfg.loss;
    const auto n = static_cast<std::int64_t>(y_r.size());
    const Tensor z = standard_normal({n, s.arch.latent_dim}, s.rng);
    std::vector<int> y_f = L.balanced() ? sample_balanced_labels(n, s.num_classes, s.rng).labels
                                        : std::vector<int>(y_r.begin(), y_r.end());
    count_labels(s.fake_label_counts, y_f);
    const ag::Var loss = finite_or_throw("generator loss", s.step, [&] {
        const ag::Var scores = s.D.score(s.G.generate(ag::Var(z), y_f, nn::Mode::Train), y_f);
        return wasserstein(L.variant) ? wgan_g_loss(scores) : original_g_loss(scores);
    });
    require_finite_loss(loss.item(), "generator loss", s.step);
    s.opt_g.step(ag::grad(loss, s.G.parameters()));
    ++s.g_updates;
    return loss.item();
}

StepMetrics train_step(TrainState& s, const ImageBatch& data, const LabelBatch& labels, const TrainConfig& cfg)
{
    if (data.range != RangeTag::ScaledMinus1To1)
        throw AlreadyScaled("training expects preprocessed images");
    if (data.n != labels.size())
        throw LabelMismatch("image and label counts differ");
    const int ratio = cfg.critic_ratio();
    StepMetrics m;
    std::vector<int> y_r;
    for (int i = 0; i < ratio; ++i) {
        const auto idx = s.stream.next(cfg.batch_size);
        y_r = labels.gather(idx).labels;
        const CriticMetrics c = critic_step(s, data.to_tensor(idx), y_r, cfg);
        m.d_loss += c.loss / ratio;
        m.gp += c.gp / ratio;
    }
    m.g_loss = generator_step(s, y_r, cfg);
    ++s.step;
    m.step = s.step;
    m.epoch = s.epoch + 1;
    return m;
}

std::int64_t steps_per_epoch(std::int64_t dataset_size, int batch_size)
{
    return std::max<std::int64_t>(1, dataset_size / batch_size);
}

// ---------------------------------------------------------------------------

namespace {

const char* const kNetNames[] = {"gen_embedding", "gen_decoder", "disc_trunk", "disc_label_embed", "disc_head"};

void append_metrics(std::ofstream& out, const StepMetrics& m)
{
    out << m.step << "," << m.epoch << "," << fmt_double(m.d_loss) << "," << fmt_double(m.g_loss) << ","
        << fmt_double(m.gp) << "\n";
}

RunResult run_epochs(TrainState& s, const TrainConfig& cfg, const ImageBatch& data, const LabelBatch& labels,
                     const fs::path& run_dir, const TrainOptions& opts)
{
    RunResult r;
    r.dir = run_dir;
    std::ofstream log(run_dir / "metrics.csv", std::ios::app);
    const std::int64_t steps = steps_per_epoch(data.n, cfg.batch_size);
    bool alive = true;
    while (alive && s.epoch < cfg.epochs) {
        StepMetrics last;
        for (std::int64_t i = 0; i < steps; ++i) {
            last = train_step(s, data, labels, cfg);
            append_metrics(log, last);
            r.metrics.push_back(last);
        }
        log.flush();
        ++s.epoch;
        const bool final_epoch = s.epoch == cfg.epochs;
        if (opts.on_epoch && !opts.on_epoch(s, last))
            alive = false;
        else if (final_epoch || (cfg.checkpoint_every > 0 && s.epoch % cfg.checkpoint_every == 0))
            save_train_checkpoint(run_dir / "checkpoints" / ("epoch_" + std::to_string(s.epoch)), s, cfg);
    }
    if (!log)
        throw std::runtime_error("cannot write " + (run_dir / "metrics.csv").string());
    r.epochs_completed = s.epoch;
    r.steps = s.step;
    r.fake_label_counts = s.fake_label_counts;
    return r;
}

} // namespace

RunResult train(const ImageBatch& data, const LabelBatch& labels, const ArchitectureConfig& arch,
                const TrainConfig& cfg, const fs::path& run_dir, const Stage1Checkpoint* stage1,
                const TrainOptions& opts)
{
    if (data.n != labels.size())
        throw LabelMismatch("image and label counts differ");
    if (data.range != RangeTag::ScaledMinus1To1)
        throw AlreadyScaled("training expects preprocessed images");
    TrainState s = make_train_state(arch, labels.num_classes, cfg, data.n, stage1);
    fs::create_directories(run_dir / "checkpoints");
    {
        std::ofstream echo(run_dir / "config.echo", std::ios::trunc);
        if (opts.config_echo.empty()) {
            for (const auto& [k, v] : architecture_manifest(arch, labels.num_classes))
                echo << k << " = " << v << "\n";
            for (const auto& [k, v] : cfg.to_manifest())
                echo << k << " = " << v << "\n";
        } else {
            echo << opts.config_echo;
        }
        std::ofstream(run_dir / "metrics.csv", std::ios::trunc) << "step,epoch,d_loss,g_loss,gp\n";
    }
    return run_epochs(s, cfg, data, labels, run_dir, opts);
}

RunResult resume(const ImageBatch& data, const LabelBatch& labels, const fs::path& run_dir,
                 std::optional<int> total_epochs, const TrainOptions& opts)
{
    const auto ck = latest_checkpoint(run_dir);
    if (!ck)
        throw CheckpointCorrupt("no checkpoint under " + (run_dir / "checkpoints").string());
    auto [s, cfg] = load_train_checkpoint(*ck);
    if (total_epochs)
        cfg.epochs = *total_epochs;
    cfg.validate();
    if (labels.num_classes != s.num_classes)
        throw CheckpointIncompatible("checkpoint has " + std::to_string(s.num_classes) + " classes, data has "
                                     + std::to_string(labels.num_classes));
    if (s.stream.size() != data.n)
        throw CheckpointIncompatible("checkpoint was trained on " + std::to_string(s.stream.size())
                                     + " samples, data has " + std::to_string(data.n));

    // Drop rows logged after the checkpoint.
    const fs::path csv = run_dir / "metrics.csv";
    std::vector<StepMetrics> kept;
    if (fs::exists(csv))
        for (const auto& m : read_metrics(csv))
            if (m.step <= s.step)
                kept.push_back(m);
    {
        std::ofstream out(csv, std::ios::trunc);
        out << "step,epoch,d_loss,g_loss,gp\n";
        for (const auto& m : kept)
            append_metrics(out, m);
    }
    return run_epochs(s, cfg, data, labels, run_dir, opts);
}

void save_train_checkpoint(const fs::path& dir, const TrainState& s, const TrainConfig& cfg)
{
    Manifest m = architecture_manifest(s.arch, s.num_classes);
    for (const auto& [k, v] : cfg.to_manifest())
        m[k] = v;
    m["kind"] = "gan";
    m["epoch"] = std::to_string(s.epoch);
    m["step"] = std::to_string(s.step);
    m["d_updates"] = std::to_string(s.d_updates);
    m["g_updates"] = std::to_string(s.g_updates);
    m["rng_state"] = s.rng.state();

    const NamedNetwork nets[] = {{kNetNames[0], &s.G.embedding},
                                 {kNetNames[1], &s.G.decoder},
                                 {kNetNames[2], &s.D.trunk},
                                 {kNetNames[3], &s.D.label_embed},
                                 {kNetNames[4], &s.D.head}};
    npz::Archive counts;
    counts.add("fake_label_counts",
               npz::Array::from_i64({static_cast<std::int64_t>(s.fake_label_counts.size())}, s.fake_label_counts));
    const std::pair<std::string, npz::Archive> extra[] = {
        {"adam_generator", s.opt_g.state()},
        {"adam_discriminator", s.opt_d.state()},
        {"batch_stream", s.stream.state()},
        {"counters", counts},
    };
    save_checkpoint(dir, nets, m, extra);
}

std::pair<TrainState, TrainConfig> load_train_checkpoint(const fs::path& dir)
{
    const Manifest m = read_manifest(dir / "manifest.txt");
    if (m.count("kind") == 0 || m.at("kind") != "gan")
        throw CheckpointIncompatible(dir.string() + " is not a GAN training checkpoint");
    const ArchitectureConfig arch = architecture_from_manifest(m);
    const int k = num_classes_from_manifest(m);
    const TrainConfig cfg = TrainConfig::from_manifest(m);

    Rng scratch(0);
    Generator G = build_generator(arch, k, scratch);
    Discriminator D = build_discriminator(arch, k, scratch);
    load_network(dir, kNetNames[0], G.embedding);
    load_network(dir, kNetNames[1], G.decoder);
    load_network(dir, kNetNames[2], D.trunk);
    load_network(dir, kNetNames[3], D.label_embed);
    load_network(dir, kNetNames[4], D.head);

    TrainState s(arch, k, std::move(G), std::move(D), cfg, 1, cfg.seed);
    s.opt_g.load_state(load_npz_checked(dir / "adam_generator.npz"));
    s.opt_d.load_state(load_npz_checked(dir / "adam_discriminator.npz"));
    s.stream.load_state(load_npz_checked(dir / "batch_stream.npz"));
    const auto counts = load_npz_checked(dir / "counters.npz");
    if (!counts.contains("fake_label_counts"))
        throw CheckpointCorrupt("counters.npz lacks fake_label_counts");
    s.fake_label_counts = counts.at("fake_label_counts").to_int64();
    if (static_cast<int>(s.fake_label_counts.size()) != k)
        throw CheckpointCorrupt("fake label counts do not match the class count");
    s.epoch = parse_num<int>(m, "epoch");
    s.step = parse_num<std::int64_t>(m, "step");
    s.d_updates = parse_num<std::int64_t>(m, "d_updates");
    s.g_updates = parse_num<std::int64_t>(m, "g_updates");
    try {
        s.rng.set_state(need(m, "rng_state"));
    } catch (const std::invalid_argument& e) {
        throw CheckpointCorrupt(e.what());
    }
    return {std::move(s), cfg};
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir)
{
    const fs::path root = run_dir / "checkpoints";
    if (!fs::is_directory(root))
        return std::nullopt;
    std::optional<fs::path> best;
    int best_epoch = -1;
    for (const auto& e : fs::directory_iterator(root)) {
        const std::string name = e.path().filename().string();
        if (!e.is_directory() || name.rfind("epoch_", 0) != 0 || name.find('.') != std::string::npos)
            continue;
        int epoch = 0;
        const char* b = name.data() + 6;
        auto [p, ec] = std::from_chars(b, name.data() + name.size(), epoch);
        if (ec != std::errc{} || p != name.data() + name.size())
            continue;
        if (epoch > best_epoch) {
            best_epoch = epoch;
            best = e.path();
        }
    }
    return best;
}

Generator load_generator(const fs::path& checkpoint_dir)
{
    const Manifest m = read_manifest(checkpoint_dir / "manifest.txt");
    if (m.count("kind") == 0 || m.at("kind") != "gan")
        throw CheckpointIncompatible(checkpoint_dir.string() + " is not a GAN training checkpoint");
    const ArchitectureConfig arch = architecture_from_manifest(m);
    const int k = num_classes_from_manifest(m);
    nn::Network emb = build_embedding(arch, k);
    nn::Network dec = build_decoder(arch);
    load_network(checkpoint_dir, kNetNames[0], emb);
    load_network(checkpoint_dir, kNetNames[1], dec);
    return assemble_generator(std::move(emb), std::move(dec));
}

std::vector<StepMetrics> read_metrics(const fs::path& csv)
{
    std::ifstream in(csv);
    if (!in)
        throw std::runtime_error("cannot read " + csv.string());
    std::vector<StepMetrics> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');)
            f.push_back(cell);
        if (f.size() != 5)
            throw std::runtime_error("malformed metrics row: " + line);
        StepMetrics m;
        m.step = std::stoll(f[0]);
        m.epoch = std::stoi(f[1]);
        m.d_loss = std::strtod(f[2].c_str(), nullptr);
        m.g_loss = std::strtod(f[3].c_str(), nullptr);
        m.gp = std::strtod(f[4].c_str(), nullptr);
        out.push_back(m);
    }
    return out;
}

} // namespace bagan
