#include "bagan/cli.hpp"
#include "bagan/errors.hpp"
#include "bagan/toy_data.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bagan;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "bagan");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string error_of(const std::string& text)
{
    cli::RunConfig cfg;
    try {
        cli::apply_config_text(cfg, text, "t.ini");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("config text sets typed values")
{
    cli::RunConfig cfg;
    cli::apply_config_text(cfg,
                           "# comment\n"
                           "[run]\nseed = 42\nout = somewhere\n"
                           "[data]\nsource = a.npz ; trailing\nimage_shape = 28, 28, 1\nschedule = s.sched\n"
                           "[architecture]\nwidths = 4,8,16,32\nlatent_dim = 16\n"
                           "[train]\nbatch_size = 32\ninit_mode = both\nresume = true\n"
                           "[loss]\nvariant = wgan_gp\nlambda = 5\nversion = v2\n"
                           "[eval]\nprojection = tsne\ngrid_rows = 4\n",
                           "t.ini");
    CHECK(cfg.seed == 42);
    CHECK(cfg.out == "somewhere");
    CHECK(cfg.data.source == "a.npz");
    CHECK(cfg.data.image_shape == std::array<std::int64_t, 3>{28, 28, 1});
    CHECK(cfg.arch.widths == std::array<int, 4>{4, 8, 16, 32});
    CHECK(cfg.arch.latent_dim == 16);
    CHECK(cfg.train.batch_size == 32);
    CHECK(cfg.train.init_mode == InitMode::Both);
    CHECK(cfg.resume);
    CHECK(cfg.train.loss.variant == LossVariant::WganGp);
    CHECK(cfg.train.loss.lambda == 5);
    CHECK(cfg.train.loss.version == BaganGpVersion::V2);
    CHECK(cfg.eval.projection == Projection::Tsne);
    CHECK(cfg.eval.grid_rows == 4);

    cli::set_value(cfg, "train.epochs", "7");
    CHECK(cfg.train.epochs == 7);
    CHECK_THROWS_AS(cli::set_value(cfg, "train.nothing", "1"), ConfigError);
}

TEST_CASE("config errors name the origin and line")
{
    CHECK(error_of("[run]\nseed = 1\nbogus = 2\n").find("t.ini:3") != std::string::npos);
    CHECK(error_of("[nowhere]\n").find("t.ini:1") != std::string::npos);
    CHECK(error_of("[train]\n\nbatch_size = many\n").find("t.ini:3") != std::string::npos);
    CHECK(error_of("[loss]\nvariant = lsgan\n").find("t.ini:2") != std::string::npos);
    CHECK(error_of("[data]\nimage_shape = 1,2\n").find("t.ini:2") != std::string::npos);
    CHECK(error_of("seed = 1\n").find("t.ini:1") != std::string::npos);
    CHECK(error_of("[run]\njust text\n").find("t.ini:2") != std::string::npos);
    cli::RunConfig cfg;
    CHECK_THROWS_AS(cli::apply_config_file(cfg, "/nonexistent/x.ini"), ConfigError);
}

TEST_CASE("the echo is a complete config that parses back to itself")
{
    cli::RunConfig cfg;
    cli::apply_config_text(cfg, "[train]\nepochs = 3\n[loss]\nvariant = dragan\ninterpolation = noise\n", "a");
    const std::string echo = cfg.echo();
    CHECK(echo.find("[train]") != std::string::npos);
    cli::RunConfig again;
    cli::apply_config_text(again, echo, "echo");
    CHECK(again.echo() == echo);
    CHECK(again.train.loss.interpolation == Interpolation::Noise);
}

TEST_CASE("command-line errors return a nonzero status")
{
    CHECK(run_cli({}) != 0);
    CHECK(run_cli({"frobnicate"}) != 0);
    CHECK(run_cli({"--config", "/nonexistent/x.ini", "prepare-data"}) == 1);
    CHECK(run_cli({"train-gan", "--bogus"}) != 0);
    const auto out = fs::temp_directory_path() / "bagan_cli_err";
    CHECK(run_cli({"--out", out.string(), "prepare-data"}) == 1);
    CHECK(run_cli({"--out", out.string(), "train-gan", "--variant", "lsgan"}) == 1);
    fs::remove_all(out);
}

TEST_CASE("the full pipeline runs through the command line")
{
    const auto root = fs::temp_directory_path() / "bagan_cli_pipeline";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::int64_t counts[] = {12, 10, 10, 10};
    {
        auto [raw, labels] = make_toy_cells(counts, 1);
        save_container(root / "pool.npz", raw, labels);
        const std::int64_t vc[] = {4, 4, 4, 4};
        auto [vraw, vlab] = make_toy_cells(vc, 2);
        save_container(root / "val.npz", vraw, vlab);
    }
    std::ofstream(root / "s.sched") << "seed = 3\n0 = 10\n1 = 4\n2 = 4\n3 = 6\n";
    const std::string ini = "[data]\nsource = " + (root / "pool.npz").string()
                            + "\nimage_shape = 64,64,1\nschedule = " + (root / "s.sched").string()
                            + "\n[architecture]\nlatent_dim = 4\nwidths = 2,2,2,2\n"
                              "[autoencoder]\nepochs = 1\nbatch_size = 8\n"
                              "[train]\nbatch_size = 8\nepochs = 1\nn_critic = 1\n"
                              "[eval]\nvalidation = "
                            + (root / "val.npz").string()
                            + "\nclassifier_epochs = 1\nclassifier_widths = 2,2,2,2\nclassifier_hidden = 4\n"
                              "samples_per_class = 3\ngrid_rows = 2\n";
    std::ofstream(root / "run.ini") << ini;
    const std::string cfg = (root / "run.ini").string();

    REQUIRE(run_cli({"--config", cfg, "--out", (root / "prep").string(), "prepare-data"}) == 0);
    CHECK(read_file(root / "prep" / "summary.csv") == "class,name,count\n0,0,10\n1,1,4\n2,2,4\n3,3,6\n");
    CHECK(fs::exists(root / "prep" / "config.echo"));

    // Later stages train on the prepared container.
    std::ofstream(root / "run.ini", std::ios::app)
        << "[data]\nsource = " << (root / "prep" / "dataset.npz").string() << "\n[train]\nstage1 = "
        << (root / "ae" / "ae").string() << "\n";

    REQUIRE(run_cli({"--config", cfg, "--seed", "5", "--out", (root / "ae").string(), "pretrain-ae"}) == 0);
    CHECK(fs::exists(root / "ae" / "ae" / "manifest.txt"));
    CHECK(fs::exists(root / "ae" / "ae_loss.csv"));

    REQUIRE(run_cli({"--config", cfg, "--seed", "5", "--out", (root / "gan").string(), "train-gan", "--epochs",
                     "1"})
            == 0);
    CHECK(fs::exists(root / "gan" / "checkpoints" / "epoch_1"));
    REQUIRE(run_cli({"--config", cfg, "--out", (root / "gan").string(), "train-gan", "--resume", "--epochs", "2"})
            == 0);
    CHECK(fs::exists(root / "gan" / "checkpoints" / "epoch_2"));

    const std::string ck = (root / "gan" / "checkpoints" / "epoch_2").string();
    REQUIRE(run_cli({"--config", cfg, "--out", (root / "gen").string(), "generate", "--checkpoint", ck, "--class",
                     "2", "--n", "3"})
            == 0);
    CHECK(fs::exists(root / "gen" / "class2_00002.png"));
    CHECK(fs::exists(root / "gen" / "generate_manifest.txt"));
    CHECK(run_cli({"--config", cfg, "--out", (root / "gen").string(), "generate", "--checkpoint", ck, "--class",
                   "9"})
          == 1);

    REQUIRE(run_cli({"--config", cfg, "--out", (root / "eval").string(), "evaluate", "--checkpoint", ck}) == 0);
    CHECK(fs::exists(root / "eval" / "fid.csv"));
    CHECK(fs::exists(root / "eval" / "grid.png"));
    CHECK(fs::exists(root / "eval" / "dispersion.csv"));

    // A saved extractor can be reused as a pretrained one.
    cli::RunConfig c;
    cli::apply_config_file(c, root / "run.ini");
    c.out = root / "eval2";
    c.eval.checkpoint = ck;
    c.eval.extractor = "pretrained";
    c.eval.extractor_path = root / "eval" / "extractor";
    const auto a = cli::cmd_evaluate(c);
    c.eval.extractor_path = root / "nothing";
    CHECK_THROWS_AS(cli::cmd_evaluate(c), ExtractorUnavailable);

    REQUIRE(run_cli({"--config", cfg, "--out", (root / "lat").string(), "plot-latents", "--checkpoint",
                     (root / "ae" / "ae").string()})
            == 0);
    CHECK(read_file(root / "lat" / "latents.csv").find("# silhouette") != std::string::npos);
    fs::remove_all(root);
}
