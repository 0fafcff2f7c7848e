#include "bagan/losses.hpp"

#include "bagan/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace bagan {

void LossConfig::validate() const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw InvalidConfig("lambda must be a finite value >= 0");
    if (interpolation == Interpolation::Noise && variant != LossVariant::Dragan)
        throw InvalidConfig("noise interpolation is only defined for the dragan variant");
}

bool LossConfig::has_penalty() const
{
    switch (variant) {
    case LossVariant::WganGp:
    case LossVariant::Dragan:
    case LossVariant::CDragan:
    case LossVariant::BaganGp: return true;
    default: return false;
    }
}

std::string to_string(LossVariant v)
{
    switch (v) {
    case LossVariant::OriginalGan: return "original_gan";
    case LossVariant::Wgan: return "wgan";
    case LossVariant::WganGp: return "wgan_gp";
    case LossVariant::Dragan: return "dragan";
    case LossVariant::CDragan: return "cdragan";
    case LossVariant::BaganGp: return "bagan_gp";
    }
    return "?";
}

std::string to_string(Interpolation v) { return v == Interpolation::Model ? "model" : "noise"; }

std::string to_string(BaganGpVersion v)
{
    switch (v) {
    case BaganGpVersion::V1: return "v1";
    case BaganGpVersion::V2: return "v2";
    case BaganGpVersion::V3: return "v3";
    }
    return "?";
}

namespace {

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

template <class E, std::size_t N>
E parse_enum(const std::string& s, const E (&all)[N], const char* what)
{
    const std::string l = lower(s);
    for (E e : all)
        if (to_string(e) == l)
            return e;
    std::string names;
    for (E e : all)
        names += (names.empty() ? "" : ", ") + to_string(e);
    throw InvalidConfig("unknown " + std::string(what) + " '" + s + "' (expected one of " + names + ")");
}

void require_finite(const ag::Var& v, const char* what)
{
    if (!v.value().all_finite())
        throw NonFiniteInput(std::string(what) + " contains NaN or Inf");
}

void require_same_size(std::span<const int> a, std::int64_t n, const char* what)
{
    if (static_cast<std::int64_t>(a.size()) != n)
        throw DimMismatch(std::string(what) + " has " + std::to_string(a.size()) + " entries, expected "
                          + std::to_string(n));
}

// -mean log s(x)
ag::Var neg_log_sigmoid_mean(const ag::Var& x) { return ag::mean(ag::softplus(ag::neg(x))); }
// -mean log(1 - s(x))
ag::Var neg_log_one_minus_sigmoid_mean(const ag::Var& x) { return ag::mean(ag::softplus(x)); }

} // namespace

LossVariant parse_loss_variant(const std::string& s)
{
    static const LossVariant all[] = {LossVariant::OriginalGan, LossVariant::Wgan,    LossVariant::WganGp,
                                      LossVariant::Dragan,      LossVariant::CDragan, LossVariant::BaganGp};
    return parse_enum(s, all, "loss variant");
}

Interpolation parse_interpolation(const std::string& s)
{
    static const Interpolation all[] = {Interpolation::Model, Interpolation::Noise};
    return parse_enum(s, all, "interpolation");
}

BaganGpVersion parse_version(const std::string& s)
{
    static const BaganGpVersion all[] = {BaganGpVersion::V1, BaganGpVersion::V2, BaganGpVersion::V3};
    return parse_enum(s, all, "version");
}

// ---------------------------------------------------------------------------

ag::Var original_d_loss(const ag::Var& real_logits, const ag::Var& fake_logits)
{
    require_finite(real_logits, "real logits");
    require_finite(fake_logits, "fake logits");
    return ag::add(neg_log_sigmoid_mean(real_logits), neg_log_one_minus_sigmoid_mean(fake_logits));
}

ag::Var original_g_loss(const ag::Var& fake_logits)
{
    require_finite(fake_logits, "fake logits");
    return neg_log_sigmoid_mean(fake_logits);
}

ag::Var wgan_d_objective(const ag::Var& real_scores, const ag::Var& fake_scores)
{
    require_finite(real_scores, "real scores");
    require_finite(fake_scores, "fake scores");
    return ag::sub(ag::mean(real_scores), ag::mean(fake_scores));
}

ag::Var wgan_g_loss(const ag::Var& fake_scores)
{
    require_finite(fake_scores, "fake scores");
    return ag::neg(ag::mean(fake_scores));
}

ag::Var dragan_d_loss(const ag::Var& real_logits, const ag::Var& fake_logits, const ag::Var& gp, double lambda)
{
    require_finite(gp, "gradient penalty");
    return ag::add(original_d_loss(real_logits, fake_logits), ag::scale(gp, lambda));
}

ag::Var bagan_gp_d_loss_from_logits(const ag::Var& real_logits, const ag::Var& fake_logits,
                                    const ag::Var& wrong_logits, const ag::Var& gp, double lambda)
{
    ag::Var loss = original_d_loss(real_logits, fake_logits);
    if (wrong_logits.defined()) {
        require_finite(wrong_logits, "wrong-label logits");
        loss = ag::add(loss, neg_log_one_minus_sigmoid_mean(wrong_logits));
    }
    if (gp.defined()) {
        require_finite(gp, "gradient penalty");
        loss = ag::add(loss, ag::scale(gp, lambda));
    }
    return loss;
}

// ---------------------------------------------------------------------------

Tensor noise_endpoint(const Tensor& x_r, Rng& rng)
{
    const auto n = static_cast<double>(x_r.size());
    double mean = 0;
    for (double v : x_r.values())
        mean += v;
    mean /= n;
    double var = 0;
    for (double v : x_r.values())
        var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    Tensor out = x_r;
    for (auto& v : out.values())
        v += 0.5 * sd * rng.uniform();
    return out;
}

Tensor interpolate(const Tensor& x_r, const Tensor& other, const InterpolationSpec& spec, Rng& rng)
{
    Tensor endpoint = spec.mode == Interpolation::Noise ? noise_endpoint(x_r, rng) : other;
    if (endpoint.shape() != x_r.shape())
        throw DimMismatch("interpolation endpoints differ: " + to_string(x_r.shape()) + " vs "
                          + to_string(endpoint.shape()));
    if (spec.forced_alpha && (*spec.forced_alpha < 0.0 || *spec.forced_alpha > 1.0))
        throw InvalidConfig("forced alpha must lie in [0, 1]");
    const std::int64_t n = x_r.dim(0);
    const std::int64_t per = n ? x_r.size() / n : 0;
    Tensor out(x_r.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const double a = spec.forced_alpha ? *spec.forced_alpha : rng.uniform();
        for (std::int64_t j = i * per; j < (i + 1) * per; ++j)
            out[j] = a * x_r[j] + (1 - a) * endpoint[j];
    }
    return out;
}

Tensor interpolate(const Tensor& x_r, const Tensor& other, const InterpolationSpec& spec, std::uint64_t seed)
{
    Rng rng(seed);
    return interpolate(x_r, other, spec, rng);
}

namespace {

ag::Var penalty_from_sq_norms(const ag::Var& sq_norms)
{
    if (!sq_norms.value().all_finite())
        throw NonFiniteGradient("critic gradient contains NaN or Inf");
    return ag::mean(ag::square(ag::add_scalar(ag::sqrt(sq_norms), -1.0)));
}

} // namespace

Tensor critic_gradient_norms(const CriticFn& critic, const Tensor& x_hat)
{
    ag::Var x(x_hat, true);
    ag::Var g = ag::grad(ag::sum(critic(x)), x, false);
    Tensor sq = ag::sum_per_sample(ag::square(g)).value();
    for (auto& v : sq.values())
        v = std::sqrt(v);
    return sq;
}

ag::Var gradient_penalty(const CriticFn& critic, const Tensor& x_hat)
{
    ag::Var x(x_hat, true);
    ag::Var g = ag::grad(ag::sum(critic(x)), x, true);
    return penalty_from_sq_norms(ag::sum_per_sample(ag::square(g)));
}

ag::Var gradient_penalty(const LabelPathCriticFn& critic, const Tensor& x_hat, const ag::Var& label_vec)
{
    ag::Var x(x_hat, true);
    const ag::Var inputs[] = {x, label_vec};
    auto g = ag::grad(ag::sum(critic(x, label_vec)), inputs, true);
    return penalty_from_sq_norms(
        ag::add(ag::sum_per_sample(ag::square(g[0])), ag::sum_per_sample(ag::square(g[1]))));
}

// ---------------------------------------------------------------------------

ag::Var cdragan_d_loss(const ConditionalCritic& D, const Tensor& x_r, std::span<const int> y_r, const Tensor& x_g,
                       const LossConfig& cfg, Rng& rng)
{
    require_same_size(y_r, x_r.dim(0), "y_r");
    const ag::Var real = D(ag::Var(x_r), y_r);
    const ag::Var fake = D(ag::Var(x_g), y_r);
    ag::Var loss = original_d_loss(real, fake);
    if (cfg.lambda > 0) {
        const Tensor x_hat = interpolate(x_r, x_g, {Interpolation::Model, {}}, rng);
        const ag::Var gp = gradient_penalty([&](const ag::Var& x) { return D(x, y_r); }, x_hat);
        loss = ag::add(loss, ag::scale(gp, cfg.lambda));
    }
    return loss;
}

ag::Var cdragan_g_loss(const ConditionalCritic& D, const ag::Var& x_g, std::span<const int> y_r)
{
    require_same_size(y_r, x_g.dim(0), "y_r");
    return original_g_loss(D(x_g, y_r));
}

ag::Var bagan_gp_d_loss(const ConditionalCritic& D, const ConditionalGeneratorFn& G, const Tensor& x_r,
                        std::span<const int> y_r, const Tensor& z, std::span<const int> y_f,
                        std::span<const int> y_wrong, const LossConfig& cfg, Rng& rng)
{
    require_same_size(y_r, x_r.dim(0), "y_r");
    require_same_size(y_f, z.dim(0), "y_f");
    Tensor x_g;
    {
        ag::NoGradGuard no_grad;
        x_g = G(ag::Var(z), y_f).value();
    }
    const ag::Var real = D(ag::Var(x_r), y_r);
    const ag::Var fake = D(ag::Var(x_g), y_f);
    ag::Var wrong;
    if (!y_wrong.empty()) {
        require_same_size(y_wrong, x_r.dim(0), "y_wrong");
        wrong = D(ag::Var(x_r), y_wrong);
    }
    ag::Var gp;
    if (cfg.lambda > 0) {
        const Tensor x_hat = interpolate(x_r, x_g, {Interpolation::Model, {}}, rng);
        gp = gradient_penalty([&](const ag::Var& x) { return D(x, y_r); }, x_hat);
    }
    return bagan_gp_d_loss_from_logits(real, fake, wrong, gp, cfg.lambda);
}

ag::Var bagan_gp_g_loss(const ConditionalCritic& D, const ConditionalGeneratorFn& G, const Tensor& z,
                        std::span<const int> y_f)
{
    require_same_size(y_f, z.dim(0), "y_f");
    return original_g_loss(D(G(ag::Var(z), y_f), y_f));
}

// ---------------------------------------------------------------------------

LabelBatch sample_balanced_labels(std::int64_t n, int num_classes, Rng& rng)
{
    if (num_classes < 1)
        throw InvalidConfig("num_classes must be >= 1");
    LabelBatch out{std::vector<int>(static_cast<std::size_t>(n)), num_classes};
    for (auto& l : out.labels)
        l = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    return out;
}

LabelBatch sample_balanced_labels(std::int64_t n, int num_classes, std::uint64_t seed)
{
    Rng rng(seed);
    return sample_balanced_labels(n, num_classes, rng);
}

std::vector<int> sample_wrong_labels(std::span<const int> y_r, int num_classes, Rng& rng)
{
    if (num_classes < 2)
        throw ClassCountOne("the wrong-label term needs at least two classes");
    std::vector<int> out(y_r.size());
    for (std::size_t i = 0; i < y_r.size(); ++i) {
        int l = y_r[i];
        while (l == y_r[i])
            l = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
        out[i] = l;
    }
    return out;
}

Tensor standard_normal(const Shape& shape, Rng& rng)
{
    Tensor t(shape);
    for (auto& v : t.values())
        v = rng.normal();
    return t;
}

} // namespace bagan
