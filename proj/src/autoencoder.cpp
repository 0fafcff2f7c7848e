#include "bagan/autoencoder.hpp"

#include "bagan/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

namespace bagan {

namespace fs = std::filesystem;

ag::Var SupervisedAutoencoder::labeled_latents(const ag::Var& x, std::span<const int> labels) const
{
    return ag::mul(embedding.forward_labels(labels, nn::Mode::Train), encoder.forward(x, nn::Mode::Train));
}

ag::Var SupervisedAutoencoder::reconstruct(const ag::Var& x, std::span<const int> labels, nn::Mode mode) const
{
    return decoder.forward(labeled_latents(x, labels), mode);
}

ag::Var UnsupervisedAutoencoder::reconstruct(const ag::Var& x, nn::Mode mode) const
{
    return decoder.forward(encoder.forward(x, nn::Mode::Train), mode);
}

SupervisedAutoencoder build_supervised_ae(const ArchitectureConfig& cfg, int num_classes, Rng& rng)
{
    SupervisedAutoencoder ae{build_encoder(cfg), build_embedding(cfg, num_classes), build_decoder(cfg)};
    ae.encoder.init(rng);
    ae.embedding.init(rng);
    ae.decoder.init(rng);
    return ae;
}

UnsupervisedAutoencoder build_unsupervised_ae(const ArchitectureConfig& cfg, Rng& rng)
{
    UnsupervisedAutoencoder ae{build_encoder(cfg), build_decoder(cfg)};
    ae.encoder.init(rng);
    ae.decoder.init(rng);
    return ae;
}

namespace {

using BatchLoss = std::function<ag::Var(std::span<const std::int64_t> idx)>;

std::vector<EpochLoss> run_reconstruction(const ImageBatch& data, const AeTrainConfig& cfg,
                                          std::vector<ag::Var> params, const BatchLoss& loss_of)
{
    if (data.range != RangeTag::ScaledMinus1To1)
        throw AlreadyScaled("autoencoder pretraining expects preprocessed images in [-1, 1]");
    if (cfg.epochs < 0 || cfg.batch_size < 2)
        throw InvalidConfig("epochs must be >= 0 and batch_size >= 2");
    std::vector<EpochLoss> log;
    if (cfg.epochs == 0)
        return log;

    Adam opt(params, cfg.adam);
    Rng rng(cfg.seed);
    const std::int64_t batch = std::min<std::int64_t>(cfg.batch_size, data.n);
    const std::int64_t steps = std::max<std::int64_t>(1, data.n / batch);
    std::int64_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(data.n, rng);
        double total = 0;
        for (std::int64_t s = 0; s < steps; ++s, ++step) {
            const std::span<const std::int64_t> idx(order.data() + s * batch, static_cast<std::size_t>(batch));
            ag::Var loss = loss_of(idx);
            if (!std::isfinite(loss.item()))
                throw NonFiniteLoss("reconstruction loss at step " + std::to_string(step));
            opt.step(ag::grad(loss, params));
            total += loss.item();
        }
        log.push_back({epoch, total / static_cast<double>(steps)});
    }
    return log;
}

ag::Var mse(const ag::Var& a, const ag::Var& b) { return ag::mean(ag::square(ag::sub(a, b))); }

} // namespace

std::vector<EpochLoss> pretrain_supervised_ae(SupervisedAutoencoder& ae, const ImageBatch& data,
                                              const LabelBatch& labels, const AeTrainConfig& cfg)
{
    if (labels.size() != data.n)
        throw LabelMismatch(std::to_string(data.n) + " images but " + std::to_string(labels.size()) + " labels");
    std::vector<ag::Var> params = ae.encoder.parameters();
    if (!cfg.freeze_embedding)
        for (auto& p : ae.embedding.parameters())
            params.push_back(p);
    for (auto& p : ae.decoder.parameters())
        params.push_back(p);
    std::vector<int> y;
    return run_reconstruction(data, cfg, params, [&](std::span<const std::int64_t> idx) {
        const ag::Var x(data.to_tensor(idx));
        y.clear();
        for (auto i : idx)
            y.push_back(labels.labels[static_cast<std::size_t>(i)]);
        return mse(ae.reconstruct(x, y, nn::Mode::Train), x);
    });
}

std::vector<EpochLoss> pretrain_unsupervised_ae(UnsupervisedAutoencoder& ae, const ImageBatch& data,
                                                const AeTrainConfig& cfg)
{
    std::vector<ag::Var> params = ae.encoder.parameters();
    for (auto& p : ae.decoder.parameters())
        params.push_back(p);
    return run_reconstruction(data, cfg, params, [&](std::span<const std::int64_t> idx) {
        const ag::Var x(data.to_tensor(idx));
        return mse(ae.reconstruct(x, nn::Mode::Train), x);
    });
}

namespace {

Tensor map_chunks(std::int64_t n, std::int64_t chunk, const std::function<Tensor(std::int64_t, std::int64_t)>& fn)
{
    ag::NoGradGuard no_grad;
    std::vector<double> out;
    Shape shape;
    for (std::int64_t b = 0; b < n; b += chunk) {
        Tensor t = fn(b, std::min(n, b + chunk));
        shape = t.shape();
        out.insert(out.end(), t.values().begin(), t.values().end());
    }
    shape[0] = n;
    return Tensor(shape, std::move(out));
}

std::vector<std::int64_t> range_indices(std::int64_t b, std::int64_t e)
{
    std::vector<std::int64_t> idx(static_cast<std::size_t>(e - b));
    std::iota(idx.begin(), idx.end(), b);
    return idx;
}

} // namespace

Tensor encode_all(const nn::Network& encoder, const ImageBatch& data, std::int64_t chunk)
{
    return map_chunks(data.n, chunk, [&](std::int64_t b, std::int64_t e) {
        return encoder.forward(ag::Var(data.to_tensor(range_indices(b, e))), nn::Mode::Eval).value();
    });
}

Tensor labeled_latents_all(const SupervisedAutoencoder& ae, const ImageBatch& data, const LabelBatch& labels,
                           std::int64_t chunk)
{
    return map_chunks(data.n, chunk, [&](std::int64_t b, std::int64_t e) {
        std::span<const int> y(labels.labels.data() + b, static_cast<std::size_t>(e - b));
        return ae.labeled_latents(ag::Var(data.to_tensor(range_indices(b, e))), y).value();
    });
}

// ---------------------------------------------------------------------------

double covariance_ridge(const Tensor& cov)
{
    const std::int64_t d = cov.dim(0);
    double trace = 0;
    for (std::int64_t i = 0; i < d; ++i)
        trace += cov[i * d + i];
    return std::max(1e-6 * trace / static_cast<double>(d), 1e-8);
}

ClassGaussianModel fit_class_gaussians(const Tensor& latents, const LabelBatch& labels)
{
    if (latents.rank() != 2 || latents.dim(0) != labels.size())
        throw LabelMismatch("latent rows do not match the label count");
    const std::int64_t d = latents.dim(1);
    ClassGaussianModel m;
    for (int k = 0; k < labels.num_classes; ++k) {
        const auto idx = labels.indices_of(k);
        if (idx.empty())
            throw EmptyClass("class " + std::to_string(k) + " has no samples");
        const auto nk = static_cast<double>(idx.size());
        Tensor mu({d});
        for (auto i : idx)
            for (std::int64_t j = 0; j < d; ++j)
                mu[j] += latents[i * d + j];
        for (auto& v : mu.values())
            v /= nk;
        Tensor cov({d, d});
        if (idx.size() > 1) {
            for (auto i : idx)
                for (std::int64_t a = 0; a < d; ++a) {
                    const double da = latents[i * d + a] - mu[a];
                    for (std::int64_t b = a; b < d; ++b)
                        cov[a * d + b] += da * (latents[i * d + b] - mu[b]);
                }
            for (std::int64_t a = 0; a < d; ++a)
                for (std::int64_t b = a; b < d; ++b) {
                    cov[a * d + b] /= nk - 1;
                    cov[b * d + a] = cov[a * d + b];
                }
        }
        m.eps.push_back(covariance_ridge(cov));
        m.mean.push_back(std::move(mu));
        m.cov.push_back(std::move(cov));
    }
    return m;
}

ClassGaussianModel fit_class_gaussians(const nn::Network& encoder, const ImageBatch& data, const LabelBatch& labels)
{
    return fit_class_gaussians(encode_all(encoder, data), labels);
}

Tensor sample_labeled_latents(const ClassGaussianModel& model, int k, std::int64_t n, Rng& rng)
{
    if (k < 0 || k >= model.num_classes())
        throw OutOfRangeLabel("class " + std::to_string(k));
    if (n < 1)
        throw InvalidConfig("n must be >= 1");
    const std::int64_t d = model.mean[static_cast<std::size_t>(k)].size();
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat s = Eigen::Map<const Mat>(model.cov[static_cast<std::size_t>(k)].data(), d, d);
    s.diagonal().array() += model.eps[static_cast<std::size_t>(k)];
    Eigen::LLT<Mat> llt(s);
    if (llt.info() != Eigen::Success)
        throw NotPSD("covariance of class " + std::to_string(k) + " is not positive definite after regularization");
    const Mat L = llt.matrixL();
    Tensor out({n, d});
    Eigen::VectorXd e(d);
    const double* mu = model.mean[static_cast<std::size_t>(k)].data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j)
            e[j] = rng.normal();
        const Eigen::VectorXd x = L * e;
        for (std::int64_t j = 0; j < d; ++j)
            out[i * d + j] = mu[j] + x[j];
    }
    return out;
}

npz::Archive ClassGaussianModel::to_archive() const
{
    npz::Archive a;
    for (std::size_t k = 0; k < mean.size(); ++k) {
        a.add("mean_" + std::to_string(k), npz::Array::from_tensor(mean[k]));
        a.add("cov_" + std::to_string(k), npz::Array::from_tensor(cov[k]));
        a.add("eps_" + std::to_string(k), npz::Array::from_tensor(Tensor::scalar(eps[k])));
    }
    return a;
}

ClassGaussianModel ClassGaussianModel::from_archive(const npz::Archive& a)
{
    ClassGaussianModel m;
    for (std::size_t k = 0; a.contains("mean_" + std::to_string(k)); ++k) {
        const auto s = std::to_string(k);
        if (!a.contains("cov_" + s) || !a.contains("eps_" + s))
            throw CheckpointCorrupt("class Gaussian " + s + " is incomplete");
        m.mean.push_back(a.at("mean_" + s).to_tensor());
        m.cov.push_back(a.at("cov_" + s).to_tensor());
        m.eps.push_back(a.at("eps_" + s).to_tensor().item());
    }
    return m;
}

std::vector<NormalityRow> normality_report(const Tensor& latents, const LabelBatch& labels)
{
    const std::int64_t d = latents.dim(1);
    std::vector<NormalityRow> rows;
    for (int k = 0; k < labels.num_classes; ++k) {
        const auto idx = labels.indices_of(k);
        NormalityRow r{k, static_cast<std::int64_t>(idx.size()), 0.0, 0.0};
        if (idx.size() >= 3) {
            const auto n = static_cast<double>(idx.size());
            for (std::int64_t j = 0; j < d; ++j) {
                double mean = 0;
                for (auto i : idx)
                    mean += latents[i * d + j];
                mean /= n;
                double m2 = 0, m3 = 0, m4 = 0;
                for (auto i : idx) {
                    const double c = latents[i * d + j] - mean;
                    m2 += c * c;
                    m3 += c * c * c;
                    m4 += c * c * c * c;
                }
                m2 /= n;
                m3 /= n;
                m4 /= n;
                if (m2 > 0) {
                    r.mean_abs_skewness += std::abs(m3 / std::pow(m2, 1.5));
                    r.mean_excess_kurtosis += m4 / (m2 * m2) - 3.0;
                }
            }
            r.mean_abs_skewness /= static_cast<double>(d);
            r.mean_excess_kurtosis /= static_cast<double>(d);
        }
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------

void save_stage1(const fs::path& dir, const SupervisedAutoencoder& ae, const ArchitectureConfig& cfg, int num_classes)
{
    Manifest m = architecture_manifest(cfg, num_classes);
    m["tag"] = kTagSupervised;
    const NamedNetwork nets[] = {{"encoder", &ae.encoder}, {"embedding", &ae.embedding}, {"decoder", &ae.decoder}};
    save_checkpoint(dir, nets, m);
}

void save_stage1(const fs::path& dir, const UnsupervisedAutoencoder& ae, const ArchitectureConfig& cfg,
                 int num_classes, const ClassGaussianModel* gaussians)
{
    Manifest m = architecture_manifest(cfg, num_classes);
    m["tag"] = kTagUnsupervised;
    const NamedNetwork nets[] = {{"encoder", &ae.encoder}, {"decoder", &ae.decoder}};
    std::vector<std::pair<std::string, npz::Archive>> extra;
    if (gaussians)
        extra.emplace_back("class_gaussians", gaussians->to_archive());
    save_checkpoint(dir, nets, m, extra);
}

Stage1Checkpoint load_stage1(const fs::path& dir)
{
    const Manifest m = read_manifest(dir / "manifest.txt");
    auto tag = m.find("tag");
    if (tag == m.end() || (tag->second != kTagSupervised && tag->second != kTagUnsupervised))
        throw CheckpointIncompatible(dir.string() + " is not a stage-1 autoencoder checkpoint");
    Stage1Checkpoint ck;
    ck.tag = tag->second;
    ck.arch = architecture_from_manifest(m);
    ck.num_classes = num_classes_from_manifest(m);
    ck.encoder = build_encoder(ck.arch);
    ck.decoder = build_decoder(ck.arch);
    load_network(dir, "encoder", ck.encoder);
    load_network(dir, "decoder", ck.decoder);
    if (ck.tag == kTagSupervised) {
        ck.embedding = build_embedding(ck.arch, ck.num_classes);
        load_network(dir, "embedding", *ck.embedding);
    } else if (fs::exists(dir / "class_gaussians.npz")) {
        ck.gaussians = ClassGaussianModel::from_archive(load_npz_checked(dir / "class_gaussians.npz"));
    }
    return ck;
}

void write_loss_log(const fs::path& path, std::span<const EpochLoss> log)
{
    std::ofstream out(path, std::ios::trunc);
    out << "epoch,mse\n";
    out.precision(10);
    for (const auto& e : log)
        out << e.epoch << "," << e.mse << "\n";
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

} // namespace bagan
