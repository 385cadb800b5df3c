#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dualstyle/cli.hpp"
#include "dualstyle/errors.hpp"
#include "dualstyle/image_io.hpp"
#include "support.hpp"

using namespace dualstyle;
namespace fs = std::filesystem;
using dualstyle::testing::fixture_dir;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::parse_and_run(args, out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("dualstyle_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    std::string content() const { return (fixture_dir() / "content_disc.png").string(); }

    fs::path dir_;
};

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST(ImageIo, ByteMapping) {
    EXPECT_EQ(decode_byte(0), -1.0);
    EXPECT_EQ(decode_byte(255), 1.0);
    EXPECT_NEAR(decode_byte(128), 2.0 * (128.0 / 255.0) - 1.0, 1e-15);
    EXPECT_NEAR(decode_byte(128), 0.00392156862745098, 1e-15);
    for (int b = 0; b < 256; ++b) EXPECT_EQ(encode_byte(decode_byte(static_cast<std::uint8_t>(b))), b);
    EXPECT_EQ(encode_byte(-7.0), 0);
    EXPECT_EQ(encode_byte(3.0), 255);
}

TEST_F(CliTest, PngRoundTripIsByteIdentical) {
    Rng rng(5);
    ImageTensor x(13, 9, 3);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = decode_byte(static_cast<std::uint8_t>(rng.uniform() * 256.0));
    }
    write_png(x, path("a.png"));
    const ImageTensor y = read_png(path("a.png"));
    EXPECT_EQ(x, y);
    write_png(y, path("b.png"));
    EXPECT_EQ(slurp(path("a.png")), slurp(path("b.png")));
}

TEST_F(CliTest, PngErrors) {
    EXPECT_THROW(read_png(path("missing.png")), IoError);
    std::ofstream(path("junk.png")) << "not a png";
    EXPECT_THROW(read_png(path("junk.png")), IoError);
    EXPECT_THROW(write_png(ImageTensor(2, 2, 1), path("grey.png")), Error);
}

TEST_F(CliTest, StylizeHappyPath) {
    const auto r = run({"stylize", "--content", content(), "--prompt", "oil-painting", "--seed", "7", "--T", "5",
                        "--T1", "15", "--out", path("out.png")});
    ASSERT_EQ(r.code, 0) << r.err;
    const ImageTensor img = read_png(path("out.png"));
    EXPECT_EQ(img.shape(), (Shape{32, 32, 3}));
    const auto report = nlohmann::json::parse(slurp(path("out.json")));
    EXPECT_EQ(report["seed"], 7);
    EXPECT_EQ(report["prompt"], "oil-painting");
    EXPECT_EQ(report["guided_steps"], 5);
    EXPECT_EQ(read_csv(slurp(path("out.csv"))).size(), 6u);
}

TEST_F(CliTest, StylizeRepeatIsByteIdentical) {
    const std::vector<std::string> base{"stylize", "--content", content(), "--prompt", "swirl", "--T", "5", "--T1", "15"};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", path("a.png")});
    b.insert(b.end(), {"--out", path("b.png")});
    ASSERT_EQ(run(a).code, 0);
    ASSERT_EQ(run(b).code, 0);
    EXPECT_EQ(slurp(path("a.png")), slurp(path("b.png")));
}

TEST_F(CliTest, BlendWeightOutOfRange) {
    const auto r = run({"stylize", "--w", "1.5", "--content", content(), "--prompt", "oil-painting", "--out",
                        path("out.png")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("[0, 1]"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(path("out.png")));
}

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(run({"stylize", "--bogus", "1"}).code, 2);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"paint"}).code, 2);
    EXPECT_EQ(run({"stylize", "--content", content(), "--out", path("o.png")}).code, 2);
    EXPECT_EQ(run({"stylize", "--sampler", "euler", "--content", content(), "--prompt", "swirl", "--out",
                   path("o.png")})
                  .code,
              2);
    const auto vocab = run({"stylize", "--content", content(), "--prompt", "cubism", "--out", path("o.png")});
    EXPECT_EQ(vocab.code, 2);
    EXPECT_NE(vocab.err.find("watercolor"), std::string::npos);
    EXPECT_EQ(run({"stylize", "--content", path("none.png"), "--prompt", "swirl", "--out", path("o.png")}).code, 2);
}

TEST_F(CliTest, MissingWeightsDirectory) {
    const auto r = run({"stylize", "--weights", path("nowhere"), "--content", content(), "--prompt", "swirl",
                        "--out", path("o.png")});
    EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliTest, CorruptWeightFile) {
    fs::create_directories(path("w"));
    for (const auto& e : fs::directory_iterator(fixture_dir())) {
        if (e.path().extension() == ".dsw") fs::copy_file(e.path(), dir_ / "w" / e.path().filename());
    }
    {
        std::fstream f(path("w/denoiser_natural.dsw"), std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-5, std::ios::end);
        f.put('\x7f');
    }
    const auto r = run({"stylize", "--weights", path("w"), "--content", content(), "--prompt", "swirl", "--out",
                        path("o.png")});
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

TEST(WeightsDir, EnvironmentOverride) {
    EXPECT_EQ(cli::resolve_weights_dir("/flag"), "/flag");
    ::setenv("DUALSTYLE_WEIGHTS", "/from/env", 1);
    EXPECT_EQ(cli::resolve_weights_dir(""), "/from/env");
    EXPECT_EQ(cli::resolve_weights_dir("/flag"), "/flag");
    ::unsetenv("DUALSTYLE_WEIGHTS");
    EXPECT_EQ(fs::path(cli::resolve_weights_dir("")), fixture_dir());
}

TEST_F(CliTest, ConfigFileMergedUnderFlags) {
    std::ofstream(path("run.toml")) << "seed = 11\nw = 0.2\nT = 4\nT1 = 12\nsampler = \"ancestral-guided\"\n";
    const auto r = run({"--config", path("run.toml"), "stylize", "--w", "0.3", "--content", content(), "--prompt",
                        "sketch", "--out", path("o.png")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = nlohmann::json::parse(slurp(path("o.json")));
    EXPECT_EQ(report["seed"], 11);
    EXPECT_EQ(report["config"]["w"], 0.3);
    EXPECT_EQ(report["config"]["T"], 4);
    EXPECT_EQ(report["config"]["sampler"], "ancestral-guided");
}

TEST_F(CliTest, ConfigFileRejectsUnknownKeys) {
    std::ofstream(path("bad.toml")) << "colour = 3\n";
    EXPECT_EQ(run({"--config", path("bad.toml"), "stylize", "--content", content(), "--prompt", "sketch", "--out",
                   path("o.png")})
                  .code,
              2);
}

TEST_F(CliTest, SweepLambdaD) {
    const auto r = run({"sweep", "--content", content(), "--prompt", "oil-painting", "--param", "lambda_d",
                        "--values", "5,50,500", "--out", path("sweep.csv"), "--jobs", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(slurp(path("sweep.csv")));
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0][0], "param");
    EXPECT_EQ(rows[0][3], "instruction_loss");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i][0], "lambda_d");
        EXPECT_EQ(rows[i][2], "0");
    }
    const double l5 = std::stod(rows[1][3]), l50 = std::stod(rows[2][3]), l500 = std::stod(rows[3][3]);
    EXPECT_GT(l5, l50);
    EXPECT_GT(l50, l500);
}

TEST_F(CliTest, SweepSeedPerRun) {
    const auto r = run({"sweep", "--seed", "4", "--T", "3", "--T1", "6", "--content", content(), "--param", "w",
                        "--values", "0,0.5,1", "--seed-per-run"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(r.out);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[1][2], "4");
    EXPECT_EQ(rows[2][2], "5");
    EXPECT_EQ(rows[3][2], "6");
}

TEST_F(CliTest, SweepRejectsUnknownParam) {
    EXPECT_EQ(run({"sweep", "--content", content(), "--param", "gamma", "--values", "1,2"}).code, 2);
    EXPECT_EQ(run({"sweep", "--content", content(), "--param", "T", "--values", "4,x"}).code, 2);
}

TEST(CliHelp, DocumentsEveryFlag) {
    const auto top = run({"--help"});
    EXPECT_EQ(top.code, 0);
    for (const char* flag : {"--config", "--weights", "--T", "--T1", "--w", "--seed", "--noise_init", "--sampler",
                             "--horizon", "--lambda_d", "--lambda_c1", "--lambda_c2", "--lambda_aes", "--lambda_tv",
                             "--patch_size", "--tau", "stylize", "sweep", "verify"}) {
        EXPECT_NE(top.out.find(flag), std::string::npos) << flag;
    }
    const auto st = run({"stylize", "--help"});
    for (const char* flag : {"--content", "--prompt", "--out", "--report", "--trace"}) {
        EXPECT_NE(st.out.find(flag), std::string::npos) << flag;
    }
    const auto sw = run({"sweep", "--help"});
    for (const char* flag : {"--param", "--values", "--seed-per-run", "--jobs"}) {
        EXPECT_NE(sw.out.find(flag), std::string::npos) << flag;
    }
}

TEST(CliProcess, ExitCodes) {
    const std::string bin = DUALSTYLE_CLI_PATH;
    const int bad = std::system((bin + " stylize --w 1.5 --content x.png --prompt swirl --out o.png 2>/dev/null").c_str());
    ASSERT_TRUE(WIFEXITED(bad));
    EXPECT_EQ(WEXITSTATUS(bad), 2);
    const int help = std::system((bin + " --help >/dev/null").c_str());
    ASSERT_TRUE(WIFEXITED(help));
    EXPECT_EQ(WEXITSTATUS(help), 0);
}
