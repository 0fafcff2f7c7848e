// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails.
//
//   acceptance [--work DIR] [criterion ...]
//
// Criteria 7 to 9 share training runs; the toy settings come from
// configs/toy.ini.
#include "bagan/autoencoder.hpp"
#include "bagan/cli.hpp"
#include "bagan/evaluation.hpp"
#include "bagan/gan_trainer.hpp"
#include "bagan/losses.hpp"
#include "bagan/npz.hpp"
#include "bagan/toy_data.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <fmt/core.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <string>
#include <vector>

using namespace bagan;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = BAGAN_SOURCE_DIR;
fs::path g_work = "acceptance_work";

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

private:
    using Clock = std::chrono::steady_clock;
    Clock::time_point start_ = Clock::now();
};

ag::Var logit_var(const std::vector<double>& v)
{
    return ag::Var(Tensor({static_cast<std::int64_t>(v.size())}, v));
}

// ---------------------------------------------------------------------------
// 1. Schedule fidelity
// ---------------------------------------------------------------------------

// Synthetic pool shaped like the public split: per-class counts, interleaved
// labels, cheap deterministic pixels.
void write_pool(const fs::path& path, std::int64_t per_class, int classes, int h, int w, int c, std::uint64_t seed)
{
    const std::int64_t n = per_class * classes;
    Rng rng(seed);
    const auto order = shuffled_indices(n, rng);
    ImageBatch raw(n, h, w, c, RangeTag::Raw0To255);
    LabelBatch labels{std::vector<int>(static_cast<std::size_t>(n)), classes};
    for (std::int64_t i = 0; i < n; ++i) {
        const int k = static_cast<int>(order[static_cast<std::size_t>(i)] % classes);
        labels.labels[static_cast<std::size_t>(i)] = k;
        auto img = raw.image(i);
        for (std::size_t p = 0; p < img.size(); ++p)
            img[p] = static_cast<float>((k * 25 + static_cast<std::int64_t>(p) + i) % 256);
    }
    save_container(path, raw, labels);
}

// One PNG per image under root/<class>/, sizes varying around 28 pixels.
void write_cell_folders(const fs::path& root, const std::vector<std::string>& names,
                        const std::vector<std::int64_t>& counts, std::uint64_t seed)
{
    Rng rng(seed);
    for (std::size_t k = 0; k < names.size(); ++k) {
        fs::create_directories(root / names[k]);
        for (std::int64_t i = 0; i < counts[k]; ++i) {
            const int side = 24 + static_cast<int>(rng.below(9));
            cv::Mat img(side, side, CV_8UC3, cv::Scalar(40 * static_cast<double>(k), 200, 90));
            cv::imwrite((root / names[k] / fmt::format("img_{:05d}.png", i)).string(), img);
        }
    }
}

std::vector<std::int64_t> prepare_counts(const fs::path& ini, const fs::path& out, double& seconds)
{
    const std::string ini_s = ini.string(), out_s = out.string();
    const char* argv[] = {"bagan", "--config", ini_s.c_str(), "--out", out_s.c_str(), "prepare-data"};
    Stopwatch sw;
    if (cli::run(6, argv) != 0)
        throw std::runtime_error("prepare-data failed for " + ini_s);
    seconds = sw.seconds();
    // Count straight from the written container.
    std::vector<std::int64_t> counts;
    for (auto k : npz::load(out / "dataset.npz").at("labels").to_int64()) {
        if (k >= static_cast<std::int64_t>(counts.size()))
            counts.resize(static_cast<std::size_t>(k) + 1, 0);
        ++counts[static_cast<std::size_t>(k)];
    }
    return counts;
}

void write_ini(const fs::path& path, const std::string& source, const std::string& shape, const fs::path& sched)
{
    std::ofstream f(path);
    f << "[data]\nsource = " << source << "\nimage_shape = " << shape << "\nschedule = " << sched.string() << "\n";
}

Outcome schedule_fidelity()
{
    const fs::path dir = g_work / "c1";
    fs::remove_all(dir);
    fs::create_directories(dir);
    struct Case {
        std::string name;
        std::vector<std::int64_t> expected;
        double seconds = 0;
        std::vector<std::int64_t> got;
    };
    std::vector<Case> cases{
        {"fashion_b", {4166, 73, 139, 210, 287, 370, 422, 387, 545, 651}},
        {"cifar10_d", {3490, 71, 130, 221, 269, 349, 435, 485, 572, 628}},
        {"cells_train", {5600, 292, 106, 887}},
        {"cells_test", {1400, 73, 27, 222}},
    };

    write_pool(dir / "fashion_pool.npz", 6000, 10, 28, 28, 1, 1);
    write_ini(dir / "fashion.ini", (dir / "fashion_pool.npz").string(), "28,28,1", kSource / "schedules/fashion_b.sched");
    write_pool(dir / "cifar_pool.npz", 5000, 10, 32, 32, 3, 2);
    write_ini(dir / "cifar.ini", (dir / "cifar_pool.npz").string(), "32,32,3", kSource / "schedules/cifar10_d.sched");
    const std::vector<std::string> cell_names{"normal", "ring", "schizont", "trophozoite"};
    write_cell_folders(dir / "cells/train", cell_names, {5900, 310, 120, 930}, 3);
    write_cell_folders(dir / "cells/test", cell_names, {1500, 80, 30, 240}, 4);
    write_ini(dir / "cells_train.ini", (dir / "cells/train").string(), "28,28,3",
              kSource / "schedules/cells_train.sched");
    write_ini(dir / "cells_test.ini", (dir / "cells/test").string(), "28,28,3",
              kSource / "schedules/cells_test.sched");

    const std::map<std::string, fs::path> ini{{"fashion_b", dir / "fashion.ini"},
                                               {"cifar10_d", dir / "cifar.ini"},
                                               {"cells_train", dir / "cells_train.ini"},
                                               {"cells_test", dir / "cells_test.ini"}};
    bool ok = true;
    std::string detail;
    for (auto& c : cases) {
        c.got = prepare_counts(ini.at(c.name), dir / ("out_" + c.name), c.seconds);
        const bool match = c.got == c.expected;
        ok = ok && match && c.seconds < 60.0;
        detail += fmt::format("{} {} in {:.1f}s; ", c.name, match ? "exact" : "MISMATCH", c.seconds);
        if (!match) {
            detail += "got";
            for (auto v : c.got)
                detail += " " + std::to_string(v);
            detail += "; ";
        }
    }
    return {ok, detail};
}

// ---------------------------------------------------------------------------
// 2. Loss arithmetic
// ---------------------------------------------------------------------------

using Ld = long double;
Ld naive_sigmoid(Ld x) { return 1.0L / (1.0L + std::exp(-x)); }
Ld mean_nls(const std::vector<double>& v)
{
    Ld s = 0;
    for (double x : v)
        s += -std::log(naive_sigmoid(x));
    return s / static_cast<Ld>(v.size());
}
Ld mean_nl1ms(const std::vector<double>& v)
{
    Ld s = 0;
    for (double x : v)
        s += -std::log(naive_sigmoid(-x));  // 1 - sigmoid(x) without cancellation
    return s / static_cast<Ld>(v.size());
}
Ld mean_of(const std::vector<double>& v)
{
    Ld s = 0;
    for (double x : v)
        s += x;
    return s / static_cast<Ld>(v.size());
}

Outcome loss_arithmetic()
{
    Rng rng(2);
    double worst = 0;
    auto track = [&](double got, Ld want) { worst = std::max(worst, static_cast<double>(std::abs(got - want))); };
    const int batches = 1000;
    for (int b = 0; b < batches; ++b) {
        const int n = 1 + static_cast<int>(rng.below(64));
        const double spread = rng.uniform(0.1, 8.0);
        auto draw = [&] {
            std::vector<double> v(static_cast<std::size_t>(n));
            for (auto& x : v)
                x = spread * rng.normal();
            return v;
        };
        const auto r = draw(), f = draw(), w = draw();
        const double gp = rng.uniform(0, 3), lambda = rng.uniform(0, 20);
        const ag::Var gpv(Tensor::scalar(gp));
        track(original_d_loss(logit_var(r), logit_var(f)).item(), mean_nls(r) + mean_nl1ms(f));
        track(original_g_loss(logit_var(f)).item(), mean_nls(f));
        track(wgan_d_objective(logit_var(r), logit_var(f)).item(), mean_of(r) - mean_of(f));
        track(wgan_g_loss(logit_var(f)).item(), -mean_of(f));
        track(dragan_d_loss(logit_var(r), logit_var(f), gpv, lambda).item(),
              mean_nls(r) + mean_nl1ms(f) + static_cast<Ld>(lambda) * gp);
        track(bagan_gp_d_loss_from_logits(logit_var(r), logit_var(f), logit_var(w), gpv, lambda).item(),
              mean_nls(r) + mean_nl1ms(f) + mean_nl1ms(w) + static_cast<Ld>(lambda) * gp);
        track(bagan_gp_d_loss_from_logits(logit_var(r), logit_var(f), {}, gpv, lambda).item(),
              mean_nls(r) + mean_nl1ms(f) + static_cast<Ld>(lambda) * gp);
    }

    const auto zeros = logit_var({0, 0, 0, 0, 0});
    const double sym = original_d_loss(zeros, zeros).item();
    const double four = bagan_gp_d_loss_from_logits(zeros, zeros, zeros, ag::Var(Tensor::scalar(0.7)), 0.0).item();
    const double sym_err = std::abs(sym - 2 * std::numbers::ln2);
    const double four_err = std::abs(four - 3 * std::numbers::ln2);
    const bool ok = worst <= 1e-6 && sym_err <= 1e-15 && four_err <= 1e-15;
    return {ok, fmt::format("{} batches, worst |loss - oracle| {:.2e}; 2 ln 2 off by {:.1e}, 3 ln 2 off by {:.1e}",
                            batches, worst, sym_err, four_err)};
}

// ---------------------------------------------------------------------------
// 3. Gradient penalty
// ---------------------------------------------------------------------------

Outcome gradient_penalty_checks()
{
    Rng rng(3);
    const std::int64_t n = 6, d = 3 * 3 * 2, hidden = 7;
    Tensor x({n, 3, 3, 2}), w1({d, hidden}), b1({hidden}), w2({hidden, 1});
    for (Tensor* t : {&x, &w1, &b1, &w2})
        for (auto& v : t->values())
            v = rng.normal();
    // D(x) = w2 . tanh(W1 x + b1)
    const ag::Var W1(w1), B1(b1), W2(w2);
    const CriticFn critic = [&](const ag::Var& in) {
        const ag::Var flat = ag::reshape(in, {in.value().dim(0), d});
        const ag::Var h = ag::tanh(ag::bias_add(ag::matmul(flat, W1), B1));
        return ag::reshape(ag::matmul(h, W2), {in.value().dim(0)});
    };
    auto scalar_critic = [&](const Tensor& one) { return critic(ag::Var(one)).item(); };

    const Tensor norms = critic_gradient_norms(critic, x);
    double worst_rel = 0;
    const double h = 1e-3;
    for (std::int64_t s = 0; s < n; ++s) {
        const Tensor xs = x.slice_rows(s, s + 1);
        double sq = 0;
        for (std::int64_t i = 0; i < d; ++i) {
            Tensor p = xs, m = xs;
            p[i] += h;
            m[i] -= h;
            const double g = (scalar_critic(p) - scalar_critic(m)) / (2 * h);
            sq += g * g;
        }
        const double fd = std::sqrt(sq);
        worst_rel = std::max(worst_rel, std::abs(norms[s] - fd) / fd);
    }

    // Unit-slope linear critic along a random unit direction, and a constant one.
    Tensor dir({d, 1});
    double len = 0;
    for (auto& v : dir.values()) {
        v = rng.normal();
        len += v * v;
    }
    for (auto& v : dir.values())
        v /= std::sqrt(len);
    const ag::Var D(dir);
    const CriticFn linear = [&](const ag::Var& in) {
        return ag::reshape(ag::matmul(ag::reshape(in, {in.value().dim(0), d}), D), {in.value().dim(0)});
    };
    const CriticFn constant = [](const ag::Var& in) {
        return ag::add_scalar(ag::scale(ag::sum_per_sample(in), 0.0), 2.5);
    };
    const double gp_linear = gradient_penalty(linear, x).item();
    const double gp_const = gradient_penalty(constant, x).item();
    const bool ok = worst_rel <= 1e-4 && std::abs(gp_linear) <= 1e-10 && std::abs(gp_const - 1.0) <= 1e-10;
    return {ok, fmt::format("worst relative |grad| error {:.2e}; GP linear {:.1e}, GP constant - 1 = {:.1e}", worst_rel,
                            gp_linear, gp_const - 1.0)};
}

// ---------------------------------------------------------------------------
// 4. FID oracle
// ---------------------------------------------------------------------------

using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Trace of (S_a S_b)^(1/2) from the eigenvalues of the (non-symmetric)
// product, in extended precision.
long double oracle_fid(const FeatureStats& a, const FeatureStats& b)
{
    const std::int64_t f = a.mean.size();
    MatL sa(f, f), sb(f, f);
    long double mean_term = 0, tr = 0;
    for (std::int64_t i = 0; i < f; ++i) {
        const long double dm = static_cast<long double>(a.mean[i]) - b.mean[i];
        mean_term += dm * dm;
        for (std::int64_t j = 0; j < f; ++j) {
            sa(i, j) = a.cov[i * f + j];
            sb(i, j) = b.cov[i * f + j];
        }
        tr += sa(i, i) + sb(i, i);
    }
    Eigen::EigenSolver<MatL> es(sa * sb, false);
    long double root = 0;
    for (const auto& lambda : es.eigenvalues())
        root += std::sqrt(std::max(lambda.real(), 0.0L));
    return mean_term + tr - 2 * root;
}

FeatureStats random_stats(std::int64_t f, Rng& rng)
{
    FeatureStats s;
    s.mean = Tensor({f});
    s.cov = Tensor({f, f});
    s.count = 1000;
    for (auto& v : s.mean.values())
        v = rng.normal();
    const std::int64_t k = f + 4;
    Eigen::MatrixXd a(f, k);
    for (std::int64_t i = 0; i < f; ++i)
        for (std::int64_t j = 0; j < k; ++j)
            a(i, j) = rng.normal();
    const Eigen::MatrixXd cov = a * a.transpose() / static_cast<double>(k);
    for (std::int64_t i = 0; i < f; ++i)
        for (std::int64_t j = 0; j < f; ++j)
            s.cov[i * f + j] = cov(i, j);
    return s;
}

FeatureStats rotate(const FeatureStats& s, const Eigen::MatrixXd& q)
{
    const std::int64_t f = s.mean.size();
    const Eigen::Map<const Eigen::VectorXd> m(s.mean.data(), f);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> c(s.cov.data(), f,
                                                                                                       f);
    FeatureStats r = s;
    Eigen::Map<Eigen::VectorXd>(r.mean.data(), f) = q * m;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(r.cov.data(), f, f) =
        q * c * q.transpose();
    return r;
}

Outcome fid_oracle()
{
    Rng rng(4);
    double worst_oracle = 0, worst_sym = 0, worst_rot = 0, worst_self = 0;
    const int pairs = 100;
    for (int t = 0; t < pairs; ++t) {
        const std::int64_t f = 8 + static_cast<std::int64_t>(rng.below(57));
        const FeatureStats a = random_stats(f, rng), b = random_stats(f, rng);
        const double got = fid(a, b);
        worst_oracle = std::max(worst_oracle, static_cast<double>(std::abs(got - oracle_fid(a, b))));
        worst_sym = std::max(worst_sym, std::abs(got - fid(b, a)));
        worst_self = std::max(worst_self, fid(a, a));

        Eigen::MatrixXd g(f, f);
        for (std::int64_t i = 0; i < f; ++i)
            for (std::int64_t j = 0; j < f; ++j)
                g(i, j) = rng.normal();
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
        worst_rot = std::max(worst_rot, std::abs(got - fid(rotate(a, q), rotate(b, q))));
    }
    const bool ok = worst_oracle <= 1e-6 && worst_self < 1e-8 && worst_sym <= 1e-6 && worst_rot <= 1e-6;
    return {ok, fmt::format("{} pairs, dim 8-64: worst |fid - oracle| {:.2e}, fid(a,a) {:.1e}, asymmetry {:.1e}, "
                            "rotation {:.1e}",
                            pairs, worst_oracle, worst_self, worst_sym, worst_rot)};
}

// ---------------------------------------------------------------------------
// 5. Balanced fake labels
// ---------------------------------------------------------------------------

Outcome balanced_labels()
{
    // Two classes at 10:1; one epoch yields 6 * B * floor(N / B) generator labels.
    const std::int64_t minority = 1520, majority = 10 * minority, n = majority + minority;
    ImageBatch data(n, kImageSize, kImageSize, 1, RangeTag::ScaledMinus1To1);
    LabelBatch labels{std::vector<int>(static_cast<std::size_t>(n)), 2};
    Rng rng(5);
    for (std::int64_t i = 0; i < n; ++i) {
        const int k = i < minority ? 1 : 0;
        labels.labels[static_cast<std::size_t>(i)] = k;
        const float base = k == 1 ? 0.5f : -0.5f;
        for (auto& v : data.image(i))
            v = base + static_cast<float>(0.1 * rng.normal());
    }
    ArchitectureConfig arch;
    arch.channels = 1;
    arch.latent_dim = 8;
    arch.widths = {1, 1, 1, 1};
    TrainConfig cfg;
    cfg.batch_size = 120;
    cfg.epochs = 1;
    cfg.seed = 5;
    cfg.checkpoint_every = 0;
    cfg.init_mode = InitMode::None;
    cfg.loss.version = BaganGpVersion::V3;
    const RunResult r = train(data, labels, arch, cfg, g_work / "c5");

    std::int64_t total = 0;
    for (auto c : r.fake_label_counts)
        total += c;
    double worst = 0;
    std::string freqs;
    for (auto c : r.fake_label_counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        worst = std::max(worst, std::abs(p - 0.5));
        freqs += fmt::format(" {:.4f}", p);
    }
    const double real_minority = static_cast<double>(minority) / static_cast<double>(n);
    const bool ok = total >= 100000 && worst <= 0.01;
    return {ok, fmt::format("{} generator labels, frequencies{} (real minority share {:.3f}), worst deviation {:.4f}",
                            total, freqs, real_minority, worst)};
}

// ---------------------------------------------------------------------------
// Toy pipeline shared by criteria 6 to 9
// ---------------------------------------------------------------------------

struct Toy {
    cli::RunConfig cfg;
    ArchitectureConfig arch;
    ImageBatch train, validation, probe_set;
    LabelBatch train_labels, validation_labels, probe_labels;
};

const Toy& toy()
{
    static const Toy t = [] {
        Toy t;
        cli::apply_config_file(t.cfg, kSource / "configs/toy.ini");
        t.arch = t.cfg.arch;
        t.arch.channels = static_cast<int>(t.cfg.data.image_shape[2]);
        const std::int64_t train_counts[] = {500, 50, 50, 100};
        const std::int64_t validation_counts[] = {100, 100, 100, 100};
        const std::int64_t probe_counts[] = {500, 500, 500, 500};
        auto [tr, trl] = make_toy_cells(train_counts, 1);
        auto [va, val] = make_toy_cells(validation_counts, 2);
        auto [pr, prl] = make_toy_cells(probe_counts, 3);
        t.train = preprocess(tr);
        t.validation = preprocess(va);
        t.probe_set = preprocess(pr);
        t.train_labels = std::move(trl);
        t.validation_labels = std::move(val);
        t.probe_labels = std::move(prl);
        return t;
    }();
    return t;
}

double mean_silhouette_gap(double& sup, double& uns)
{
    const Toy& t = toy();
    AeTrainConfig tc = t.cfg.ae;
    tc.seed = 6;
    Rng r1(6), r2(6);
    auto s = build_supervised_ae(t.arch, kToyClasses, r1);
    pretrain_supervised_ae(s, t.train, t.train_labels, tc);
    auto u = build_unsupervised_ae(t.arch, r2);
    pretrain_unsupervised_ae(u, t.train, tc);
    sup = silhouette(labeled_latents_all(s, t.train, t.train_labels), t.train_labels.labels).score;
    uns = silhouette(encode_all(u.encoder, t.train), t.train_labels.labels).score;
    return sup - uns;
}

Outcome dispersion()
{
    Stopwatch sw;
    double sup = 0, uns = 0;
    const double gap = mean_silhouette_gap(sup, uns);
    const double secs = sw.seconds();
    const bool ok = gap >= 0.1 && secs < 15 * 60;
    return {ok, fmt::format("{} epochs: supervised silhouette {:.4f}, unsupervised {:.4f}, margin {:.4f}, {:.0f}s",
                            toy().cfg.ae.epochs, sup, uns, gap, secs)};
}

// The probe doubles as the FID feature extractor.
const ClassifierExtractor& probe()
{
    static const std::unique_ptr<ClassifierExtractor> p = [] {
        const Toy& t = toy();
        ClassifierConfig cc = t.cfg.eval.classifier;
        cc.seed = 7;
        auto c = std::make_unique<ClassifierExtractor>(t.arch.channels, kToyClasses, cc);
        c->train(t.probe_set, t.probe_labels);
        return c;
    }();
    return *p;
}

BaganGpVersion version_of(int v) { return v == 1 ? BaganGpVersion::V1 : v == 2 ? BaganGpVersion::V2 : BaganGpVersion::V3; }

struct ToyRun {
    fs::path dir;
    double seconds = 0;
    std::vector<EpochLoss> ae_log;
};

// Stage 1 and 100 adversarial epochs for (version, seed), once per process.
ToyRun& toy_run(int version, std::uint64_t seed)
{
    static std::map<std::pair<int, std::uint64_t>, ToyRun> runs;
    const auto key = std::pair{version, seed};
    if (auto it = runs.find(key); it != runs.end())
        return it->second;

    const Toy& t = toy();
    ToyRun r;
    r.dir = g_work / fmt::format("runs/v{}_s{}", version, seed);
    fs::remove_all(r.dir);
    Stopwatch sw;
    AeTrainConfig ac = t.cfg.ae;
    ac.seed = seed;
    Rng rng(seed);
    if (version == 3) {
        auto ae = build_supervised_ae(t.arch, kToyClasses, rng);
        r.ae_log = pretrain_supervised_ae(ae, t.train, t.train_labels, ac);
        save_stage1(r.dir / "ae", ae, t.arch, kToyClasses);
    } else {
        auto ae = build_unsupervised_ae(t.arch, rng);
        r.ae_log = pretrain_unsupervised_ae(ae, t.train, ac);
        const ClassGaussianModel g = fit_class_gaussians(ae.encoder, t.train, t.train_labels);
        save_stage1(r.dir / "ae", ae, t.arch, kToyClasses, &g);
    }
    const Stage1Checkpoint stage1 = load_stage1(r.dir / "ae");
    TrainConfig tc = t.cfg.train;
    tc.seed = seed;
    tc.epochs = 100;
    tc.loss.version = version_of(version);
    train(t.train, t.train_labels, t.arch, tc, r.dir / "gan", &stage1);
    r.seconds = sw.seconds();
    fmt::print("  trained v{} seed {} in {:.0f}s\n", version, seed, r.seconds);
    std::fflush(stdout);
    return runs.emplace(key, std::move(r)).first->second;
}

fs::path epoch_dir(const ToyRun& r, int epoch) { return r.dir / "gan/checkpoints" / fmt::format("epoch_{}", epoch); }

FidReport toy_fid(const Generator& G)
{
    const Toy& t = toy();
    return fid_per_class(G, t.validation, t.validation_labels, probe(), 0, 11);
}

Outcome training_effect()
{
    const Toy& t = toy();
    const ToyRun& run = toy_run(3, t.cfg.seed);
    const Generator G = load_generator(epoch_dir(run, 100));
    Rng init(5);
    const Generator untrained = build_generator(t.arch, kToyClasses, init);
    const FidReport trained = toy_fid(G), baseline = toy_fid(untrained);

    bool fid_ok = true;
    std::string detail = "FID trained/untrained";
    for (int k = 0; k < kToyClasses; ++k) {
        fid_ok = fid_ok && trained.at(k) < baseline.at(k);
        detail += fmt::format(" {:.1f}/{:.1f}", trained.at(k), baseline.at(k));
    }
    bool probe_ok = true;
    detail += "; probe hits";
    Rng gr(13);
    for (int k = 1; k < kToyClasses; ++k) {
        const auto pred = probe().predict(generate_class(G, k, 200, gr));
        const double hit = static_cast<double>(std::count(pred.begin(), pred.end(), k)) / 200.0;
        probe_ok = probe_ok && hit >= 0.8;
        detail += fmt::format(" c{} {:.3f}", k, hit);
    }
    detail += fmt::format(" (probe accuracy on real validation {:.3f}); {:.0f}s",
                          probe().accuracy(t.validation, t.validation_labels), run.seconds);
    return {fid_ok && probe_ok && run.seconds < 4 * 3600, detail};
}

double median3(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return v[1];
}

Outcome ablation_ordering()
{
    const std::uint64_t seeds[] = {1, 2, 3};
    std::map<int, double> med;
    std::string detail;
    for (int version : {1, 2, 3}) {
        std::vector<double> per_seed;
        for (auto seed : seeds) {
            const FidReport r = toy_fid(load_generator(epoch_dir(toy_run(version, seed), 100)));
            double m = 0;
            for (int k = 1; k < kToyClasses; ++k)
                m += r.at(k);
            per_seed.push_back(m / (kToyClasses - 1));
        }
        med[version] = median3(per_seed);
        detail += fmt::format("v{} [{:.1f} {:.1f} {:.1f}] median {:.1f}; ", version, per_seed[0], per_seed[1],
                              per_seed[2], med[version]);
    }
    // Ties within 5% count as ordered.
    const bool ok = med[3] <= 1.05 * med[2] && med[2] <= 1.05 * med[1];
    return {ok, detail + "minority-class mean FID"};
}

Outcome stability()
{
    const Toy& t = toy();
    const ToyRun& run = toy_run(3, t.cfg.seed);
    Rng zr(17);
    const Tensor z = standard_normal({16, t.arch.latent_dim}, zr);
    std::vector<int> y(16);
    for (int i = 0; i < 16; ++i)
        y[static_cast<std::size_t>(i)] = i % kToyClasses;

    Tensor in_memory;
    TrainOptions opts;
    opts.on_epoch = [&](const TrainState& s, const StepMetrics&) {
        if (s.epoch == 200)
            in_memory = s.G.generate(ag::Var(z), y, nn::Mode::Eval).value();
        return true;
    };
    resume(t.train, t.train_labels, run.dir / "gan", 200, opts);

    const auto rows = read_metrics(run.dir / "gan/metrics.csv");
    bool finite = !run.ae_log.empty();
    for (const auto& e : run.ae_log)
        finite = finite && std::isfinite(e.mse);
    int last_epoch = 0;
    for (const auto& m : rows) {
        finite = finite && std::isfinite(m.d_loss) && std::isfinite(m.g_loss) && std::isfinite(m.gp);
        last_epoch = std::max(last_epoch, m.epoch);
    }

    // Loaded, re-saved and reloaded generators must reproduce the trained one.
    const fs::path ck = epoch_dir(run, 200);
    const Tensor loaded = load_generator(ck).generate(ag::Var(z), y, nn::Mode::Eval).value();
    auto [state, cfg] = load_train_checkpoint(ck);
    const fs::path copy = g_work / "c9_resaved";
    fs::remove_all(copy);
    save_train_checkpoint(copy, state, cfg);
    const Tensor reloaded = load_generator(copy).generate(ag::Var(z), y, nn::Mode::Eval).value();
    auto same = [](const Tensor& a, const Tensor& b) {
        return a.size() == b.size() && a.size() > 0
               && std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
    };
    const bool exact = same(in_memory, loaded) && same(loaded, reloaded);
    const bool ok = finite && last_epoch == 200 && exact;
    return {ok, fmt::format("{} logged steps through epoch {}, all finite: {}; generator outputs bit-exact after "
                            "save/load: {}",
                            rows.size(), last_epoch, finite ? "yes" : "no", exact ? "yes" : "no")};
}

} // namespace

int main(int argc, char** argv)
{
    const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
        {1, {"schedule fidelity", schedule_fidelity}},
        {2, {"loss arithmetic", loss_arithmetic}},
        {3, {"gradient penalty", gradient_penalty_checks}},
        {4, {"FID oracle", fid_oracle}},
        {5, {"balanced fake labels", balanced_labels}},
        {6, {"latent dispersion", dispersion}},
        {7, {"end-to-end training effect", training_effect}},
        {8, {"ablation ordering", ablation_ordering}},
        {9, {"long-run stability", stability}},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc)
            g_work = argv[++i];
        else
            selected.insert(std::stoi(argv[i]));
    }
    if (selected.empty())
        for (const auto& [id, _] : criteria)
            selected.insert(id);
    fs::create_directories(g_work);

    int failed = 0;
    for (int id : selected) {
        const auto& [name, fn] = criteria.at(id);
        Outcome o;
        Stopwatch sw;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        fmt::print("{} criterion {} ({}): {} [{:.0f}s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail, sw.seconds());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
