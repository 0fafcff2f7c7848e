#include "bagan/evaluation.hpp"

#include "bagan/errors.hpp"
#include "bagan/losses.hpp"

#include <Eigen/Dense>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace bagan {

namespace fs = std::filesystem;

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

Eigen::Map<const Mat> as_mat(const Tensor& t) { return Eigen::Map<const Mat>(t.data(), t.dim(0), t.dim(1)); }

Tensor to_tensor(const Mat& m) { return Tensor({m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size())); }

std::vector<std::int64_t> iota_indices(std::int64_t b, std::int64_t e)
{
    std::vector<std::int64_t> idx(static_cast<std::size_t>(e - b));
    std::iota(idx.begin(), idx.end(), b);
    return idx;
}

} // namespace

// ---------------------------------------------------------------------------

FeatureStats compute_stats(const Tensor& features)
{
    if (features.rank() != 2)
        throw DimMismatch("features must be [N, F], got " + to_string(features.shape()));
    const std::int64_t n = features.dim(0), f = features.dim(1);
    if (n < 2)
        throw TooFewSamples("need at least 2 feature vectors, got " + std::to_string(n));
    const auto X = as_mat(features);
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const Mat centered = X.rowwise() - mu;
    Mat cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    cov = 0.5 * (cov + cov.transpose()).eval();
    FeatureStats s;
    s.mean = Tensor({f}, std::vector<double>(mu.data(), mu.data() + f));
    s.cov = to_tensor(cov);
    s.count = n;
    return s;
}

double fid(const FeatureStats& a, const FeatureStats& b)
{
    const std::int64_t f = a.mean.size();
    if (b.mean.size() != f || a.cov.shape() != Shape{f, f} || b.cov.shape() != Shape{f, f})
        throw DimMismatch("feature statistics have different dimensions");
    double mean_term = 0;
    for (std::int64_t i = 0; i < f; ++i)
        mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

    const Mat sa = as_mat(a.cov), sb = as_mat(b.cov);
    // (S_a S_b)^(1/2) has the same trace as (R S_b R)^(1/2) with R = S_a^(1/2),
    // and the latter is symmetric.
    Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
    const Vec root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Mat r = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
    Mat m = r * sb * r;
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat> em(m, Eigen::EigenvaluesOnly);

    const double scale = std::max(sa.norm(), sb.norm());
    double trace_sqrt = 0;
    for (double lambda : em.eigenvalues()) {
        if (lambda >= 0) {
            trace_sqrt += std::sqrt(lambda);
        } else if (std::sqrt(-lambda) >= 1e-6 * scale) {
            throw ComplexResidual("imaginary component " + std::to_string(std::sqrt(-lambda))
                                  + " in the covariance square root");
        }
    }
    const double d = mean_term + sa.trace() + sb.trace() - 2 * trace_sqrt;
    if (d < 0) {
        if (d >= -1e-8)
            return 0.0;
        throw ComplexResidual("negative distance " + std::to_string(d));
    }
    return d;
}

// ---------------------------------------------------------------------------

ClassifierExtractor::ClassifierExtractor(int channels, int num_classes, const ClassifierConfig& cfg)
    : channels_(channels), num_classes_(num_classes), cfg_(cfg)
{
    ArchitectureConfig arch;
    arch.channels = channels;
    arch.widths = cfg.widths;
    arch.validate();
    if (num_classes < 2 || cfg.hidden < 1)
        throw InvalidConfig("classifier needs >= 2 classes and a positive hidden width");
    body_ = build_trunk(arch);
    body_.emplace<nn::Flatten>();
    body_.emplace<nn::Dense>(arch.feature_size(), cfg.hidden);
    body_.emplace<nn::LeakyReLU>(arch.leaky_slope);
    logits_ = nn::Network("classifier_logits", {cfg.hidden});
    logits_.emplace<nn::Dense>(cfg.hidden, num_classes);
    Rng rng(cfg.seed);
    body_.init(rng);
    logits_.init(rng);
}

std::string ClassifierExtractor::id() const
{
    return "classifier:c" + std::to_string(channels_) + ":k" + std::to_string(num_classes_) + ":w"
           + std::to_string(cfg_.widths[0]) + "-" + std::to_string(cfg_.widths[1]) + "-"
           + std::to_string(cfg_.widths[2]) + "-" + std::to_string(cfg_.widths[3]) + ":h"
           + std::to_string(cfg_.hidden);
}

ag::Var ClassifierExtractor::hidden(const ag::Var& x) const { return body_.forward(x, nn::Mode::Eval); }

Tensor ClassifierExtractor::extract(const ImageBatch& images) const
{
    ag::NoGradGuard no_grad;
    std::vector<double> out;
    for (std::int64_t b = 0; b < images.n; b += 256) {
        const auto idx = iota_indices(b, std::min(images.n, b + 256));
        const Tensor h = hidden(ag::Var(images.to_tensor(idx))).value();
        out.insert(out.end(), h.values().begin(), h.values().end());
    }
    return Tensor({images.n, cfg_.hidden}, std::move(out));
}

std::vector<double> ClassifierExtractor::train(const ImageBatch& images, const LabelBatch& labels)
{
    if (images.range != RangeTag::ScaledMinus1To1)
        throw AlreadyScaled("classifier expects preprocessed images");
    if (images.n != labels.size())
        throw LabelMismatch("image and label counts differ");
    auto params = body_.parameters();
    for (auto& p : logits_.parameters())
        params.push_back(p);
    Adam opt(params, cfg_.adam);
    Rng rng(cfg_.seed ^ 0x5bd1e995ULL);
    const std::int64_t batch = std::min<std::int64_t>(cfg_.batch_size, images.n);
    const std::int64_t steps = std::max<std::int64_t>(1, images.n / batch);
    std::vector<double> log;
    std::vector<int> y;
    for (int e = 0; e < cfg_.epochs; ++e) {
        const auto order = shuffled_indices(images.n, rng);
        double total = 0;
        for (std::int64_t s = 0; s < steps; ++s) {
            std::span<const std::int64_t> idx(order.data() + s * batch, static_cast<std::size_t>(batch));
            y.clear();
            for (auto i : idx)
                y.push_back(labels.labels[static_cast<std::size_t>(i)]);
            const ag::Var loss =
                ag::softmax_cross_entropy(logits_.forward(hidden(ag::Var(images.to_tensor(idx))), nn::Mode::Eval), y);
            if (!std::isfinite(loss.item()))
                throw NonFiniteLoss("classifier loss");
            opt.step(ag::grad(loss, params));
            total += loss.item();
        }
        log.push_back(total / static_cast<double>(steps));
    }
    return log;
}

std::vector<int> ClassifierExtractor::predict(const ImageBatch& images) const
{
    ag::NoGradGuard no_grad;
    const Tensor logits = logits_.forward(ag::Var(extract(images)), nn::Mode::Eval).value();
    std::vector<int> out(static_cast<std::size_t>(images.n));
    for (std::int64_t i = 0; i < images.n; ++i) {
        const double* row = logits.data() + i * num_classes_;
        out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + num_classes_) - row);
    }
    return out;
}

double ClassifierExtractor::accuracy(const ImageBatch& images, const LabelBatch& labels) const
{
    const auto pred = predict(images);
    std::int64_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        hit += pred[i] == labels.labels[i];
    return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

void ClassifierExtractor::save(const fs::path& dir) const
{
    Manifest m{{"kind", "classifier"},
               {"channels", std::to_string(channels_)},
               {"num_classes", std::to_string(num_classes_)},
               {"hidden", std::to_string(cfg_.hidden)},
               {"widths", std::to_string(cfg_.widths[0]) + "," + std::to_string(cfg_.widths[1]) + ","
                              + std::to_string(cfg_.widths[2]) + "," + std::to_string(cfg_.widths[3])}};
    const NamedNetwork nets[] = {{"body", &body_}, {"logits", &logits_}};
    save_checkpoint(dir, nets, m);
}

ClassifierExtractor ClassifierExtractor::load(const fs::path& dir)
{
    const Manifest m = read_manifest(dir / "manifest.txt");
    if (m.count("kind") == 0 || m.at("kind") != "classifier")
        throw CheckpointIncompatible(dir.string() + " is not a classifier checkpoint");
    ClassifierConfig cfg;
    int channels = 0, k = 0;
    try {
        channels = std::stoi(m.at("channels"));
        k = std::stoi(m.at("num_classes"));
        cfg.hidden = std::stoi(m.at("hidden"));
        Manifest arch{{"latent_dim", "2"}, {"channels", m.at("channels")}, {"leaky_slope", "0.2"},
                      {"widths", m.at("widths")}};
        cfg.widths = architecture_from_manifest(arch).widths;
    } catch (const std::logic_error&) {
        throw CheckpointCorrupt(dir.string() + ": malformed classifier manifest");
    }
    ClassifierExtractor c(channels, k, cfg);
    load_network(dir, "body", c.body_);
    load_network(dir, "logits", c.logits_);
    return c;
}

namespace {

class PretrainedExtractor : public FeatureExtractor {
public:
    PretrainedExtractor(ClassifierExtractor inner, std::string source)
        : inner_(std::move(inner)), source_(std::move(source))
    {
    }
    std::string id() const override { return "pretrained:" + source_ + ":" + inner_.id(); }
    Tensor extract(const ImageBatch& images) const override { return inner_.extract(images); }

private:
    ClassifierExtractor inner_;
    std::string source_;
};

} // namespace

std::unique_ptr<FeatureExtractor> load_pretrained_extractor(const fs::path& dir)
{
    if (dir.empty() || !fs::exists(dir / "manifest.txt") || !fs::exists(dir / "body.npz"))
        throw ExtractorUnavailable("no extractor weights at '" + dir.string() + "'");
    try {
        return std::make_unique<PretrainedExtractor>(ClassifierExtractor::load(dir), dir.filename().string());
    } catch (const Error& e) {
        throw ExtractorUnavailable(e.what());
    }
}

// ---------------------------------------------------------------------------

double FidReport::at(int cls) const
{
    for (const auto& r : rows)
        if (r.cls == cls)
            return r.fid;
    throw std::out_of_range("no FID row for class " + std::to_string(cls));
}

FidReport fid_per_class(const ImageBatch& samples, const LabelBatch& sample_labels, const ImageBatch& validation,
                        const LabelBatch& validation_labels, const FeatureExtractor& extractor)
{
    if (samples.n != sample_labels.size() || validation.n != validation_labels.size())
        throw LabelMismatch("image and label counts differ");
    const Tensor fs_gen = extractor.extract(samples);
    const Tensor fs_val = extractor.extract(validation);
    FidReport report{extractor.id(), {}};
    for (int k = 0; k < validation_labels.num_classes; ++k) {
        const auto vi = validation_labels.indices_of(k);
        if (vi.empty())
            throw EmptyClassInValidation("class " + std::to_string(k) + " has no validation samples");
        const auto gi = sample_labels.indices_of(k);
        const auto real = compute_stats(fs_val.gather_rows(vi));
        const auto gen = compute_stats(fs_gen.gather_rows(gi));
        report.rows.push_back({k, fid(real, gen), static_cast<std::int64_t>(vi.size()),
                               static_cast<std::int64_t>(gi.size())});
    }
    return report;
}

ImageBatch generate_class(const Generator& G, int cls, std::int64_t n, Rng& rng, Tensor* z_out)
{
    if (cls < 0 || cls >= G.num_classes())
        throw OutOfRangeLabel("class " + std::to_string(cls) + " not in [0, " + std::to_string(G.num_classes()) + ")");
    ag::NoGradGuard no_grad;
    const Tensor z = standard_normal({n, G.latent_dim()}, rng);
    std::vector<double> out;
    Shape shape;
    for (std::int64_t b = 0; b < n; b += 256) {
        const std::int64_t e = std::min(n, b + 256);
        const std::vector<int> labels(static_cast<std::size_t>(e - b), cls);
        const Tensor x = G.generate(ag::Var(z.slice_rows(b, e)), labels, nn::Mode::Eval).value();
        shape = x.shape();
        out.insert(out.end(), x.values().begin(), x.values().end());
    }
    shape[0] = n;
    if (z_out)
        *z_out = z;
    return ImageBatch::from_tensor(Tensor(shape, std::move(out)), RangeTag::ScaledMinus1To1);
}

FidReport fid_per_class(const Generator& G, const ImageBatch& validation, const LabelBatch& validation_labels,
                        const FeatureExtractor& extractor, std::int64_t samples_per_class, std::uint64_t seed)
{
    Rng rng(seed);
    ImageBatch all;
    LabelBatch labels{{}, validation_labels.num_classes};
    const auto counts = validation_labels.counts();
    for (int k = 0; k < validation_labels.num_classes; ++k) {
        const std::int64_t n = samples_per_class > 0 ? samples_per_class : counts[static_cast<std::size_t>(k)];
        if (n == 0)
            throw EmptyClassInValidation("class " + std::to_string(k) + " has no validation samples");
        ImageBatch part = generate_class(G, k, n, rng);
        if (all.n == 0) {
            all = std::move(part);
        } else {
            all.data.insert(all.data.end(), part.data.begin(), part.data.end());
            all.n += part.n;
        }
        labels.labels.insert(labels.labels.end(), static_cast<std::size_t>(n), k);
    }
    return fid_per_class(all, labels, validation, validation_labels, extractor);
}

void write_fid_csv(const fs::path& path, const FidReport& report)
{
    std::ofstream out(path, std::ios::trunc);
    out.precision(10);
    out << "class,fid,n_real,n_gen,extractor_id\n";
    for (const auto& r : report.rows)
        out << r.cls << "," << r.fid << "," << r.n_real << "," << r.n_gen << "," << report.extractor_id << "\n";
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

// ---------------------------------------------------------------------------

ImageBatch regenerate_cell(const Generator& G, const GridLayout& layout, int r, int c)
{
    if (r < 1 || r > layout.rows || c < 0 || c >= layout.columns())
        throw std::out_of_range("grid cell (" + std::to_string(r) + ", " + std::to_string(c) + ") is not generated");
    ag::NoGradGuard no_grad;
    const int zr = layout.cell_z_row[static_cast<std::size_t>(r * layout.columns() + c)];
    const int label = layout.classes[static_cast<std::size_t>(c)];
    const Tensor x = G.generate(ag::Var(layout.z.slice_rows(zr, zr + 1)), std::span<const int>(&label, 1),
                                nn::Mode::Eval)
                         .value();
    return ImageBatch::from_tensor(x, RangeTag::ScaledMinus1To1);
}

ImageGrid image_grid(const Generator& G, std::span<const int> classes, int rows, std::uint64_t seed,
                     const ImageBatch& real_examples, const LabelBatch& real_labels)
{
    if (rows < 1 || classes.empty())
        throw InvalidConfig("a grid needs at least one generated row and one class");
    const ImageBatch real = real_examples.range == RangeTag::Raw0To255 ? preprocess(real_examples) : real_examples;
    ImageGrid grid;
    auto& L = grid.layout;
    L.rows = rows;
    L.classes.assign(classes.begin(), classes.end());
    L.seed = seed;
    Rng rng(seed);
    L.z = standard_normal({rows, G.latent_dim()}, rng);
    const int cols = L.columns();

    grid.cells = ImageBatch((rows + 1) * cols, real.h, real.w, real.c, RangeTag::ScaledMinus1To1);
    for (int c = 0; c < cols; ++c) {
        const auto idx = real_labels.indices_of(L.classes[static_cast<std::size_t>(c)]);
        if (idx.empty())
            throw MissingRealExample("class " + std::to_string(L.classes[static_cast<std::size_t>(c)]));
        auto src = real.image(idx.front());
        std::copy(src.begin(), src.end(), grid.cells.image(c).begin());
        L.cell_z_row.push_back(-1);
    }
    for (int r = 1; r <= rows; ++r)
        for (int c = 0; c < cols; ++c) {
            L.cell_z_row.push_back(r - 1);
            const ImageBatch cell = regenerate_cell(G, L, r, c);
            std::copy(cell.data.begin(), cell.data.end(), grid.cells.image(r * cols + c).begin());
        }
    return grid;
}

void write_grid(const fs::path& png, const ImageGrid& grid)
{
    const auto& L = grid.layout;
    const ImageBatch raw = to_raw(grid.cells);
    const int pad = 2, cols = L.columns(), rows = L.rows + 1;
    const int h = static_cast<int>(raw.h), w = static_cast<int>(raw.w), c = static_cast<int>(raw.c);
    cv::Mat canvas(rows * (h + pad) + pad, cols * (w + pad) + pad, CV_8UC(c), cv::Scalar::all(255));
    for (int r = 0; r < rows; ++r)
        for (int col = 0; col < cols; ++col) {
            auto img = raw.image(r * cols + col);
            for (int y = 0; y < h; ++y) {
                auto* dst = canvas.ptr<std::uint8_t>(pad + r * (h + pad) + y) + (pad + col * (w + pad)) * c;
                for (int x = 0; x < w * c; ++x)
                    dst[x] = static_cast<std::uint8_t>(img[static_cast<std::size_t>(y * w * c + x)]);
            }
        }
    if (c == 3)
        cv::cvtColor(canvas, canvas, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(png.string(), canvas))
        throw std::runtime_error("cannot write " + png.string());

    std::ofstream side(png.string() + ".txt", std::ios::trunc);
    side.precision(17);
    side << "seed = " << L.seed << "\nrows = " << L.rows << "\ncolumns = " << cols << "\nclasses =";
    for (int k : L.classes)
        side << " " << k;
    side << "\n# row 0 holds real examples; cell (r, c) for r >= 1 uses z row r - 1\n";
    for (int r = 0; r < L.rows; ++r) {
        side << "z" << r << " =";
        for (std::int64_t j = 0; j < L.z.dim(1); ++j)
            side << " " << L.z[r * L.z.dim(1) + j];
        side << "\n";
    }
}

// ---------------------------------------------------------------------------

Projection parse_projection(const std::string& s)
{
    if (s == "pca")
        return Projection::Pca;
    if (s == "tsne")
        return Projection::Tsne;
    throw InvalidConfig("unknown projection '" + s + "' (expected pca or tsne)");
}

SilhouetteResult silhouette(const Tensor& points, std::span<const int> labels)
{
    const std::int64_t n = points.dim(0), d = points.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw LabelMismatch("point and label counts differ");
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::int64_t> count(static_cast<std::size_t>(k), 0);
    for (int l : labels)
        ++count[static_cast<std::size_t>(l)];
    if (std::count_if(count.begin(), count.end(), [](auto c) { return c > 0; }) < 2)
        throw SingleClass("the silhouette needs at least two classes");

    const auto X = as_mat(points);
    if ((X.rowwise() - X.colwise().mean()).squaredNorm() == 0.0)
        return {0.0, true};

    const Vec sq = X.rowwise().squaredNorm();
    double total = 0;
    std::vector<double> sums(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < n; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        const Vec dots = X * X.row(i).transpose();
        for (std::int64_t j = 0; j < n; ++j)
            if (j != i)
                sums[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] +=
                    std::sqrt(std::max(0.0, sq[i] + sq[j] - 2 * dots[j]));
        const int own = labels[static_cast<std::size_t>(i)];
        if (count[static_cast<std::size_t>(own)] < 2)
            continue;
        const double a = sums[static_cast<std::size_t>(own)] / static_cast<double>(count[static_cast<std::size_t>(own)] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c)
            if (c != own && count[static_cast<std::size_t>(c)] > 0)
                b = std::min(b, sums[static_cast<std::size_t>(c)] / static_cast<double>(count[static_cast<std::size_t>(c)]));
        const double m = std::max(a, b);
        if (m > 0)
            total += (b - a) / m;
    }
    (void)d;
    return {total / static_cast<double>(n), false};
}

Tensor pca_2d(const Tensor& points)
{
    const auto X = as_mat(points);
    const Mat centered = X.rowwise() - X.colwise().mean();
    const Mat cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    const std::int64_t d = X.cols();
    Mat axes(d, 2);
    for (int c = 0; c < 2; ++c) {
        Vec v = d > c ? Vec(es.eigenvectors().col(d - 1 - c)) : Vec::Zero(d);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0)
            v = -v;
        axes.col(c) = v;
    }
    return to_tensor(centered * axes);
}

Tensor tsne_2d(const Tensor& points, double perplexity, int iterations, std::uint64_t seed)
{
    const auto X = as_mat(points);
    const std::int64_t n = X.rows();
    if (n < 4)
        return pca_2d(points);
    perplexity = std::min(perplexity, static_cast<double>(n - 1) / 3.0);

    const Vec sq = X.rowwise().squaredNorm();
    Mat d2 = (-2.0 * X * X.transpose()).colwise() + sq;
    d2 = d2.rowwise() + sq.transpose();
    d2 = d2.cwiseMax(0.0);

    // Conditional affinities with a per-point bandwidth matching the perplexity.
    Mat p = Mat::Zero(n, n);
    const double target = std::log(perplexity);
    for (std::int64_t i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 64; ++it) {
            double sum = 0, weighted = 0;
            for (std::int64_t j = 0; j < n; ++j) {
                if (j == i)
                    continue;
                const double v = std::exp(-beta * d2(i, j));
                p(i, j) = v;
                sum += v;
                weighted += v * d2(i, j);
            }
            sum = std::max(sum, 1e-300);
            const double entropy = std::log(sum) + beta * weighted / sum;
            p.row(i) /= sum;
            if (std::abs(entropy - target) < 1e-5)
                break;
            if (entropy > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
            } else {
                hi = beta;
                beta = (beta + lo) / 2;
            }
        }
    }
    Mat P = (p + p.transpose()) / (2.0 * static_cast<double>(n));
    P = P.cwiseMax(1e-12);

    Rng rng(seed);
    Mat Y(n, 2), update = Mat::Zero(n, 2), gains = Mat::Ones(n, 2);
    for (std::int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c)
            Y(i, c) = 1e-4 * rng.normal();
    const int exaggerated = 250;
    const double lr = std::max(static_cast<double>(n) / 12.0 / 4.0, 50.0);
    for (int it = 0; it < iterations; ++it) {
        const double exaggeration = it < exaggerated ? 12.0 : 1.0;
        const double momentum = it < exaggerated ? 0.5 : 0.8;
        if (it == exaggerated) {
            update.setZero();
            gains.setOnes();
        }
        const Vec ys = Y.rowwise().squaredNorm();
        Mat num = (-2.0 * Y * Y.transpose()).colwise() + ys;
        num = (num.rowwise() + ys.transpose()).array().cwiseMax(0.0).matrix();
        num = (1.0 + num.array()).inverse().matrix();
        num.diagonal().setZero();
        const double qsum = std::max(num.sum(), 1e-300);
        const Mat pq = exaggeration * P.array() - (num.array() / qsum).cwiseMax(1e-12);
        const Mat w = pq.cwiseProduct(num);
        const Mat grad = 4.0 * (w.rowwise().sum().asDiagonal() * Y - w * Y);
        for (std::int64_t i = 0; i < n; ++i)
            for (int c = 0; c < 2; ++c) {
                const bool same = (grad(i, c) > 0) == (update(i, c) > 0);
                gains(i, c) = std::max(same ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
                update(i, c) = momentum * update(i, c) - lr * gains(i, c) * grad(i, c);
                Y(i, c) += update(i, c);
            }
        Y = Y.rowwise() - Y.colwise().mean();
    }
    return to_tensor(Y);
}

DispersionResult latent_dispersion(const Tensor& latents, std::span<const int> labels, Projection method,
                                   std::uint64_t seed)
{
    DispersionResult r;
    r.silhouette = silhouette(latents, labels);
    if (r.silhouette.degenerate)
        std::cerr << "warning: latents have zero total variance; silhouette reported as 0\n";
    r.points = method == Projection::Pca ? pca_2d(latents) : tsne_2d(latents, 30.0, 1000, seed);
    return r;
}

void write_dispersion_csv(const fs::path& path, const DispersionResult& d, std::span<const int> labels)
{
    std::ofstream out(path, std::ios::trunc);
    out.precision(10);
    out << "x,y,class\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
        out << d.points[static_cast<std::int64_t>(2 * i)] << "," << d.points[static_cast<std::int64_t>(2 * i + 1)]
            << "," << labels[i] << "\n";
    out << "# silhouette = " << d.silhouette.score << (d.silhouette.degenerate ? " (degenerate)" : "") << "\n";
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

std::vector<ProjectedPoint> feature_projection(const ImageBatch& real, const LabelBatch& real_labels,
                                               const ImageBatch& gen, const LabelBatch& gen_labels,
                                               const FeatureExtractor& extractor)
{
    if (real.n != real_labels.size() || gen.n != gen_labels.size())
        throw LabelMismatch("image and label counts differ");
    const Tensor fr = extractor.extract(real);
    const Tensor fg = extractor.extract(gen);
    std::vector<double> joint(fr.values().begin(), fr.values().end());
    joint.insert(joint.end(), fg.values().begin(), fg.values().end());
    const Tensor xy = pca_2d(Tensor({real.n + gen.n, fr.dim(1)}, std::move(joint)));
    std::vector<ProjectedPoint> out;
    for (std::int64_t i = 0; i < real.n + gen.n; ++i) {
        const bool is_real = i < real.n;
        const int cls = is_real ? real_labels.labels[static_cast<std::size_t>(i)]
                                : gen_labels.labels[static_cast<std::size_t>(i - real.n)];
        out.push_back({xy[2 * i], xy[2 * i + 1], cls, is_real});
    }
    return out;
}

double centroid_distance(std::span<const ProjectedPoint> points, int cls)
{
    double sx[2] = {0, 0}, sy[2] = {0, 0}, n[2] = {0, 0};
    for (const auto& p : points)
        if (p.cls == cls) {
            const int s = p.is_real ? 0 : 1;
            sx[s] += p.x;
            sy[s] += p.y;
            n[s] += 1;
        }
    if (n[0] == 0 || n[1] == 0)
        throw EmptyClass("class " + std::to_string(cls) + " is missing from one of the point sets");
    return std::hypot(sx[0] / n[0] - sx[1] / n[1], sy[0] / n[0] - sy[1] / n[1]);
}

void write_projection_csv(const fs::path& path, std::span<const ProjectedPoint> points)
{
    std::ofstream out(path, std::ios::trunc);
    out.precision(10);
    out << "x,y,class,is_real\n";
    for (const auto& p : points)
        out << p.x << "," << p.y << "," << p.cls << "," << (p.is_real ? 1 : 0) << "\n";
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

} // namespace bagan
