#include "bagan/errors.hpp"
#include "bagan/network_zoo.hpp"

#include <doctest.h>

#include <filesystem>

using namespace bagan;
namespace fs = std::filesystem;

namespace {

ArchitectureConfig small_arch(int channels = 1)
{
    ArchitectureConfig a;
    a.channels = channels;
    a.latent_dim = 6;
    a.widths = {2, 3, 4, 5};
    return a;
}

std::int64_t conv_params(std::int64_t in, std::int64_t out) { return 4 * 4 * in * out + out; }

} // namespace

TEST_CASE("encoder and decoder shapes and parameter counts")
{
    const auto a = small_arch(3);
    const auto enc = build_encoder(a);
    CHECK(enc.input_signature() == Shape{64, 64, 3});
    CHECK(enc.output_signature() == Shape{6});
    CHECK(enc.parameter_count()
          == conv_params(3, 2) + conv_params(2, 3) + conv_params(3, 4) + conv_params(4, 5) + 80 * 6 + 6);
    CHECK_FALSE(enc.contains_kind("batch_norm"));

    const auto dec = build_decoder(a);
    CHECK(dec.output_signature() == Shape{64, 64, 3});
    CHECK(dec.contains_kind("batch_norm"));
    CHECK(dec.layer_kinds().back() == "tanh");
    // dense + bn(80) + three transposed blocks with bn + final transposed conv
    CHECK(dec.parameter_count()
          == (6 * 80 + 80) + 2 * 80 + conv_params(5, 4) + 2 * 4 + conv_params(4, 3) + 2 * 3 + conv_params(3, 2) + 2 * 2
                 + conv_params(2, 3));

    const auto trunk = build_trunk(a);
    CHECK(trunk.num_layers() == trunk_layer_count());
    for (std::size_t i = 0; i < trunk.num_layers(); ++i)
        CHECK(trunk.layer(i).kind() == enc.layer(i).kind());
}

TEST_CASE("generator output range, shape and conditioning")
{
    Rng rng(1);
    const auto a = small_arch();
    const Generator G = build_generator(a, 3, rng);
    CHECK(G.latent_dim() == 6);
    CHECK(G.num_classes() == 3);
    Tensor z({4, 6});
    for (auto& v : z.values())
        v = 3 * rng.normal();
    const std::vector<int> y{0, 1, 2, 0};
    const Tensor x = G.generate(ag::Var(z), y, nn::Mode::Eval).value();
    CHECK(x.shape() == Shape{4, 64, 64, 1});
    for (double v : x.values()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // G(z, c) == decoder(embed(c) * z)
    const Tensor e = G.embed(y).value();
    Tensor prod = z;
    for (std::int64_t i = 0; i < z.size(); ++i)
        prod[i] *= e[i];
    CHECK(max_abs_diff(G.decoder.forward(ag::Var(prod), nn::Mode::Eval).value(), x) == 0.0);

    const std::vector<int> bad{3};
    CHECK_THROWS_AS(G.generate(ag::Var(Tensor({1, 6})), bad, nn::Mode::Eval), OutOfRangeLabel);
}

TEST_CASE("discriminator scores and shared-trunk scoring")
{
    Rng rng(2);
    const auto a = small_arch();
    const Discriminator D = build_discriminator(a, 3, rng);
    Tensor x({3, 64, 64, 1});
    for (auto& v : x.values())
        v = rng.uniform(-1, 1);
    const std::vector<int> y1{0, 1, 2}, y2{2, 2, 0};
    const Tensor s1 = D.score(ag::Var(x), y1).value();
    CHECK(s1.shape() == Shape{3});
    const std::span<const int> sets[] = {y1, y2};
    const auto many = D.score_many(ag::Var(x), sets);
    CHECK(max_abs_diff(many[0].value(), s1) < 1e-12);
    CHECK(max_abs_diff(many[1].value(), D.score(ag::Var(x), y2).value()) < 1e-12);

    // D(x, c) == head(features(x) * label_embed(c))
    const Tensor f = D.features(ag::Var(x)).value();
    const Tensor l = D.label_vector(y1).value();
    Tensor prod = f;
    for (std::int64_t i = 0; i < f.size(); ++i)
        prod[i] *= l[i];
    CHECK(max_abs_diff(D.head.forward(ag::Var(prod), nn::Mode::Eval).value().reshaped({3}), s1) < 1e-12);
}

TEST_CASE("invalid configurations are rejected")
{
    auto a = small_arch();
    a.batch_norm_in_generator_only = false;
    CHECK_THROWS_AS(a.validate(), InvalidConfig);
    a = small_arch();
    a.channels = 2;
    CHECK_THROWS_AS(build_encoder(a), InvalidConfig);
    a = small_arch();
    a.latent_dim = 1;
    CHECK_THROWS_AS(build_decoder(a), InvalidConfig);
    CHECK_THROWS_AS(build_embedding(small_arch(), 1), InvalidConfig);

    auto other = small_arch();
    other.latent_dim = 7;
    CHECK_THROWS_AS(assemble_generator(build_embedding(other, 3), build_decoder(small_arch())), DimMismatch);
    auto wider = small_arch();
    wider.widths[3] = 6;
    CHECK_THROWS_AS(
        assemble_discriminator(build_trunk(small_arch()), build_label_embed(wider, 3), build_head(small_arch())),
        DimMismatch);
}

TEST_CASE("checkpoint directories round-trip")
{
    Rng rng(3);
    const auto a = small_arch();
    const Generator G = build_generator(a, 3, rng);
    const auto dir = fs::temp_directory_path() / "bagan_test_ckpt";
    fs::remove_all(dir);
    const NamedNetwork nets[] = {{"embedding", &G.embedding}, {"decoder", &G.decoder}};
    save_checkpoint(dir, nets, architecture_manifest(a, 3));
    const auto m = read_manifest(dir / "manifest.txt");
    CHECK(num_classes_from_manifest(m) == 3);
    const auto back = architecture_from_manifest(m);
    CHECK(back.signature() == a.signature());

    Rng other(99);
    Generator H = build_generator(back, 3, other);
    load_network(dir, "embedding", H.embedding);
    load_network(dir, "decoder", H.decoder);
    Tensor z({2, 6}, 0.5);
    const std::vector<int> y{1, 2};
    CHECK(max_abs_diff(G.generate(ag::Var(z), y, nn::Mode::Eval).value(),
                       H.generate(ag::Var(z), y, nn::Mode::Eval).value())
          == 0.0);

    nn::Network wrong = build_decoder(small_arch(3));
    CHECK_THROWS(load_network(dir, "decoder", wrong));
    CHECK_THROWS_AS(read_manifest(dir / "nope.txt"), CheckpointCorrupt);
    fs::remove_all(dir);
}
