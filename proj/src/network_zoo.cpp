#include "bagan/network_zoo.hpp"

#include "bagan/errors.hpp"

#include <cerrno>
#include <fstream>
#include <sstream>
#include <system_error>

namespace bagan {

namespace fs = std::filesystem;

void ArchitectureConfig::validate() const
{
    if (latent_dim < 2)
        throw InvalidConfig("latent_dim must be >= 2, got " + std::to_string(latent_dim));
    if (channels != 1 && channels != 3)
        throw InvalidConfig("channels must be 1 or 3, got " + std::to_string(channels));
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
        throw InvalidConfig("leaky_slope must lie in (0, 1), got " + std::to_string(leaky_slope));
    if (!batch_norm_in_generator_only)
        throw InvalidConfig("batch normalization in the discriminator is not supported");
    for (int w : widths)
        if (w < 1)
            throw InvalidConfig("feature widths must be positive");
}

std::string ArchitectureConfig::signature() const
{
    return "c" + std::to_string(channels) + ":l" + std::to_string(latent_dim) + ":w" + std::to_string(widths[0]) + "-"
           + std::to_string(widths[1]) + "-" + std::to_string(widths[2]) + "-" + std::to_string(widths[3]);
}

namespace {

void add_conv_blocks(nn::Network& net, const ArchitectureConfig& cfg)
{
    std::int64_t in = cfg.channels;
    for (int w : cfg.widths) {
        net.emplace<nn::Conv2d>(in, w);
        net.emplace<nn::LeakyReLU>(cfg.leaky_slope);
        in = w;
    }
}

} // namespace

nn::Network build_encoder(const ArchitectureConfig& cfg)
{
    cfg.validate();
    nn::Network net("encoder:" + cfg.signature(), {kImageSize, kImageSize, cfg.channels});
    add_conv_blocks(net, cfg);
    net.emplace<nn::Flatten>();
    net.emplace<nn::Dense>(cfg.feature_size(), cfg.latent_dim);
    return net;
}

nn::Network build_trunk(const ArchitectureConfig& cfg)
{
    cfg.validate();
    nn::Network net("trunk:" + cfg.signature(), {kImageSize, kImageSize, cfg.channels});
    add_conv_blocks(net, cfg);
    return net;
}

std::size_t trunk_layer_count() { return 8; }

nn::Network build_decoder(const ArchitectureConfig& cfg)
{
    cfg.validate();
    const auto& w = cfg.widths;
    nn::Network net("decoder:" + cfg.signature(), {cfg.latent_dim});
    net.emplace<nn::Dense>(cfg.latent_dim, cfg.feature_size());
    net.emplace<nn::BatchNorm>(cfg.feature_size());
    net.emplace<nn::LeakyReLU>(cfg.leaky_slope);
    net.emplace<nn::Reshape>(Shape{4, 4, w[3]});
    for (int i = 3; i > 0; --i) {
        net.emplace<nn::ConvTranspose2d>(w[i], w[i - 1]);
        net.emplace<nn::BatchNorm>(w[i - 1]);
        net.emplace<nn::LeakyReLU>(cfg.leaky_slope);
    }
    net.emplace<nn::ConvTranspose2d>(w[0], cfg.channels);
    net.emplace<nn::Tanh>();
    return net;
}

nn::Network build_embedding(const ArchitectureConfig& cfg, int num_classes)
{
    cfg.validate();
    if (num_classes < 2)
        throw InvalidConfig("num_classes must be >= 2, got " + std::to_string(num_classes));
    nn::Network net("embedding:k" + std::to_string(num_classes) + ":l" + std::to_string(cfg.latent_dim), {});
    net.emplace<nn::Embedding>(num_classes, cfg.latent_dim);
    return net;
}

nn::Network build_label_embed(const ArchitectureConfig& cfg, int num_classes)
{
    cfg.validate();
    if (num_classes < 2)
        throw InvalidConfig("num_classes must be >= 2, got " + std::to_string(num_classes));
    nn::Network net("label_embed:k" + std::to_string(num_classes) + ":f" + std::to_string(cfg.feature_size()), {});
    net.emplace<nn::Embedding>(num_classes, cfg.feature_size());
    return net;
}

nn::Network build_head(const ArchitectureConfig& cfg)
{
    cfg.validate();
    nn::Network net("head:f" + std::to_string(cfg.feature_size()), {cfg.feature_size()});
    net.emplace<nn::Dense>(cfg.feature_size(), 1);
    return net;
}

// ---------------------------------------------------------------------------

namespace {

const nn::Embedding& first_embedding(const nn::Network& net, const char* role)
{
    auto* e = net.num_layers() ? dynamic_cast<const nn::Embedding*>(&net.layer(0)) : nullptr;
    if (!e)
        throw DimMismatch(std::string(role) + " must start with an embedding layer");
    return *e;
}

} // namespace

Generator::Generator(nn::Network emb, nn::Network dec) : embedding(std::move(emb)), decoder(std::move(dec))
{
    const auto out = embedding.output_signature();
    const auto in = decoder.input_signature();
    if (out.size() != 1 || in.size() != 1 || out[0] != in[0])
        throw DimMismatch("embedding output " + to_string(out) + " does not match decoder input " + to_string(in));
    latent_dim_ = static_cast<int>(in[0]);
    num_classes_ = static_cast<int>(first_embedding(embedding, "generator embedding").num_classes());
}

ag::Var Generator::embed(std::span<const int> labels) const { return embedding.forward_labels(labels, nn::Mode::Eval); }

ag::Var Generator::generate(const ag::Var& z, std::span<const int> labels, nn::Mode mode) const
{
    if (z.shape().size() != 2 || z.dim(1) != latent_dim_ || z.dim(0) != static_cast<std::int64_t>(labels.size()))
        throw DimMismatch("generator expects z of shape [" + std::to_string(labels.size()) + ", "
                          + std::to_string(latent_dim_) + "], got " + to_string(z.shape()));
    return decoder.forward(ag::mul(embed(labels), z), mode);
}

std::vector<ag::Var> Generator::parameters() const
{
    auto p = embedding.parameters();
    auto d = decoder.parameters();
    p.insert(p.end(), d.begin(), d.end());
    return p;
}

Discriminator::Discriminator(nn::Network t, nn::Network le, nn::Network h)
    : trunk(std::move(t)), label_embed(std::move(le)), head(std::move(h))
{
    const std::int64_t f = numel(trunk.output_signature());
    const auto l = label_embed.output_signature();
    const auto hin = head.input_signature();
    const auto hout = head.output_signature();
    if (l.size() != 1 || l[0] != f)
        throw DimMismatch("label embedding width " + to_string(l) + " does not match flattened trunk output "
                          + std::to_string(f));
    if (hin.size() != 1 || hin[0] != f)
        throw DimMismatch("head input " + to_string(hin) + " does not match flattened trunk output "
                          + std::to_string(f));
    if (numel(hout) != 1)
        throw DimMismatch("head must emit one value per sample, got " + to_string(hout));
    num_classes_ = static_cast<int>(first_embedding(label_embed, "discriminator label embedding").num_classes());
}

ag::Var Discriminator::features(const ag::Var& x) const
{
    ag::Var h = trunk.forward(x, nn::Mode::Train);
    return ag::reshape(h, {h.dim(0), h.value().size() / h.dim(0)});
}

ag::Var Discriminator::label_vector(std::span<const int> labels) const
{
    return label_embed.forward_labels(labels, nn::Mode::Train);
}

ag::Var Discriminator::combine(const ag::Var& feats, const ag::Var& label_vec) const
{
    ag::Var out = head.forward(ag::mul(feats, label_vec), nn::Mode::Train);
    return ag::reshape(out, {out.dim(0)});
}

ag::Var Discriminator::score(const ag::Var& x, std::span<const int> labels) const
{
    return combine(features(x), label_vector(labels));
}

std::vector<ag::Var> Discriminator::score_many(const ag::Var& x, std::span<const std::span<const int>> label_sets) const
{
    const ag::Var f = features(x);
    std::vector<ag::Var> out;
    for (auto labels : label_sets)
        out.push_back(combine(f, label_vector(labels)));
    return out;
}

std::vector<ag::Var> Discriminator::parameters() const
{
    std::vector<ag::Var> p;
    for (const nn::Network* n : {&trunk, &label_embed, &head}) {
        auto q = n->parameters();
        p.insert(p.end(), q.begin(), q.end());
    }
    return p;
}

Generator assemble_generator(nn::Network embedding, nn::Network decoder)
{
    return Generator(std::move(embedding), std::move(decoder));
}

Discriminator assemble_discriminator(nn::Network trunk, nn::Network label_embed, nn::Network head)
{
    return Discriminator(std::move(trunk), std::move(label_embed), std::move(head));
}

Generator build_generator(const ArchitectureConfig& cfg, int num_classes, Rng& rng)
{
    auto emb = build_embedding(cfg, num_classes);
    auto dec = build_decoder(cfg);
    emb.init(rng);
    dec.init(rng);
    return assemble_generator(std::move(emb), std::move(dec));
}

Discriminator build_discriminator(const ArchitectureConfig& cfg, int num_classes, Rng& rng)
{
    auto trunk = build_trunk(cfg);
    auto le = build_label_embed(cfg, num_classes);
    auto head = build_head(cfg);
    trunk.init(rng);
    le.init(rng);
    head.init(rng);
    return assemble_discriminator(std::move(trunk), std::move(le), std::move(head));
}

// ---------------------------------------------------------------------------

void write_manifest(const fs::path& path, const Manifest& m)
{
    std::ofstream out(path, std::ios::trunc);
    for (const auto& [k, v] : m)
        out << k << " = " << v << "\n";
    out.flush();
    if (!out) {
        if (errno == ENOSPC)
            throw DiskFull(path.string());
        throw std::runtime_error("cannot write " + path.string());
    }
}

Manifest read_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw CheckpointCorrupt("missing manifest " + path.string());
    Manifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos)
            throw CheckpointCorrupt(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
        m[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return m;
}

Manifest architecture_manifest(const ArchitectureConfig& cfg, int num_classes)
{
    std::ostringstream slope;
    slope.precision(17);
    slope << cfg.leaky_slope;
    return {
        {"latent_dim", std::to_string(cfg.latent_dim)},
        {"channels", std::to_string(cfg.channels)},
        {"num_classes", std::to_string(num_classes)},
        {"leaky_slope", slope.str()},
        {"widths", std::to_string(cfg.widths[0]) + "," + std::to_string(cfg.widths[1]) + ","
                       + std::to_string(cfg.widths[2]) + "," + std::to_string(cfg.widths[3])},
    };
}

namespace {

const std::string& field(const Manifest& m, const std::string& key)
{
    auto it = m.find(key);
    if (it == m.end())
        throw CheckpointCorrupt("manifest has no '" + key + "'");
    return it->second;
}

} // namespace

ArchitectureConfig architecture_from_manifest(const Manifest& m)
{
    ArchitectureConfig cfg;
    try {
        cfg.latent_dim = std::stoi(field(m, "latent_dim"));
        cfg.channels = std::stoi(field(m, "channels"));
        cfg.leaky_slope = std::stod(field(m, "leaky_slope"));
        std::istringstream ws(field(m, "widths"));
        std::string part;
        for (int i = 0; i < 4; ++i) {
            if (!std::getline(ws, part, ','))
                throw CheckpointCorrupt("manifest widths must list four values");
            cfg.widths[static_cast<std::size_t>(i)] = std::stoi(part);
        }
    } catch (const std::logic_error&) {
        throw CheckpointCorrupt("manifest has a non-numeric architecture field");
    }
    return cfg;
}

int num_classes_from_manifest(const Manifest& m)
{
    try {
        return std::stoi(field(m, "num_classes"));
    } catch (const std::logic_error&) {
        throw CheckpointCorrupt("manifest num_classes is not an integer");
    }
}

void save_npz_checked(const fs::path& path, const npz::Archive& a)
{
    errno = 0;
    try {
        npz::save(path, a);
    } catch (const std::runtime_error& e) {
        if (errno == ENOSPC)
            throw DiskFull(path.string());
        throw;
    }
}

npz::Archive load_npz_checked(const fs::path& path)
{
    if (!fs::exists(path))
        throw CheckpointCorrupt("missing " + path.string());
    try {
        return npz::load(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointCorrupt(e.what());
    }
}

void save_checkpoint(const fs::path& dir, std::span<const NamedNetwork> nets, const Manifest& manifest,
                     std::span<const std::pair<std::string, npz::Archive>> extra)
{
    const fs::path tmp = dir.string() + ".partial";
    try {
        fs::remove_all(tmp);
        fs::create_directories(tmp);
        for (const auto& n : nets)
            save_npz_checked(tmp / (n.name + ".npz"), n.net->to_archive());
        for (const auto& [name, archive] : extra)
            save_npz_checked(tmp / (name + ".npz"), archive);
        write_manifest(tmp / "manifest.txt", manifest);
        fs::remove_all(dir);
        fs::rename(tmp, dir);
    } catch (const fs::filesystem_error& e) {
        if (e.code() == std::errc::no_space_on_device)
            throw DiskFull(e.what());
        throw;
    }
}

void load_network(const fs::path& dir, const std::string& name, nn::Network& net)
{
    net.load_archive(load_npz_checked(dir / (name + ".npz")));
}

} // namespace bagan
