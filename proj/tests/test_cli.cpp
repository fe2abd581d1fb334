#include <gtest/gtest.h>

#include <openssl/sha.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "alignlab/config.hpp"
#include "alignlab/dataset.hpp"

namespace fs = std::filesystem;
using namespace alignlab;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Sandbox {
public:
    Sandbox() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root_ = fs::temp_directory_path() / ("alignlab_cli_" + std::string(info->test_suite_name()) + "_" + info->name());
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    ~Sandbox() { fs::remove_all(root_); }
    const fs::path& root() const { return root_; }

    Run run(const std::string& args, const std::string& env = "") const {
        const fs::path out = root_ / "stdout.txt", err = root_ / "stderr.txt";
        const std::string cmd =
            env + " " + ALIGNLAB_CLI_PATH + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    void write(const std::string& name, const std::string& text) const { std::ofstream(root_ / name) << text; }

private:
    fs::path root_;
};

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), md);
    std::string hex;
    char b[3];
    for (unsigned char c : md) {
        std::snprintf(b, sizeof b, "%02x", c);
        hex += b;
    }
    return hex;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string l;
    while (std::getline(ss, l))
        if (!l.empty()) out.push_back(l);
    return out;
}

const char* kTinyConfig =
    "[train]\nsteps = 4\neffective_batch = 2\neval_interval = 2\nseed = 5\nlr = 0.001\n"
    "[data]\ntrain = data\nheldout = held\n";

void make_corpora(const Sandbox& sb) {
    ASSERT_EQ(sb.run("synth --out " + (sb.root() / "data").string() + " --n 4 --seed 1 --duration 0.5").code, 0);
    ASSERT_EQ(sb.run("synth --out " + (sb.root() / "held").string() +
                     " --n 2 --seed 2 --duration 0.5 --noise-kinds tonal-babble,pink")
                  .code,
              0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config files.

TEST(Config, DefaultsAndOverrides) {
    const auto rc = parse_config(
        "# comment\n[encoder]\nbeta = 4\nfrontend = spectral\n[train]\nlr = 1e-3  # inline\nsnr_set = 0, 5\n"
        "softdtw_divergence = false\n[perturb]\npad_max = 0.04\n[data]\ntrain = /x/y\n");
    EXPECT_EQ(rc.train.encoder.beta, 4.0);
    EXPECT_EQ(rc.train.encoder.frontend, Frontend::spectral);
    EXPECT_EQ(rc.train.lr, 1e-3);
    EXPECT_EQ(rc.train.snr_set, (std::vector<double>{0.0, 5.0}));
    EXPECT_FALSE(rc.train.softdtw_divergence);
    EXPECT_EQ(rc.train.pad_range.hi, 0.04);
    EXPECT_EQ(rc.train.pad_range.lo, 0.02);
    EXPECT_EQ(rc.train.effective_batch, 16u);
    EXPECT_EQ(rc.train_data, "/x/y");
}

TEST(Config, UnknownKeysNameTheKey) {
    try {
        parse_config("[train]\nlearning_rate = 1\n");
        FAIL();
    } catch (const ConfigKeyError& e) {
        EXPECT_EQ(e.key(), "train.learning_rate");
    }
    EXPECT_THROW(parse_config("[optimizer]\n"), ConfigKeyError);
    EXPECT_THROW(parse_config("lr = 1\n"), Error);
    EXPECT_THROW(parse_config("[train]\nlr = fast\n"), Error);
    EXPECT_THROW(parse_config("[train]\nsteps = -1\n"), Error);
}

TEST(Config, FormatRoundTrips) {
    RunConfig rc;
    rc.train.lr = 0.1 + 0.2;
    rc.train.encoder.beta = 1.0 / 3.0;
    rc.train.objective = Objective::ssl_softdtw;
    rc.train.alpha_range = {0.95, 1.05};
    rc.train_data = "/data/train";
    const auto back = parse_config(format_config(rc));
    EXPECT_EQ(back.train.lr, rc.train.lr);
    EXPECT_EQ(back.train.encoder, rc.train.encoder);
    EXPECT_EQ(back.train.objective, rc.train.objective);
    EXPECT_EQ(back.train.alpha_range, rc.train.alpha_range);
    EXPECT_EQ(back.train.snr_set, rc.train.snr_set);
    EXPECT_EQ(back.train_data, rc.train_data);
    EXPECT_EQ(format_config(back), format_config(rc));
}

// ---------------------------------------------------------------------------
// synth

TEST(CliSynth, WritesCorpusDeterministically) {
    Sandbox sb;
    const auto a = sb.root() / "a", b = sb.root() / "b";
    ASSERT_EQ(sb.run("synth --out " + a.string() + " --n 5 --seed 3").code, 0);
    ASSERT_EQ(sb.run("synth --out " + b.string() + " --n 5 --seed 3").code, 0);
    const auto meta = lines(slurp(a / "meta.csv"));
    ASSERT_EQ(meta.size(), 6u);
    EXPECT_EQ(meta[0], kMetaHeader);
    for (std::size_t i = 1; i < meta.size(); ++i) {
        const auto snr = std::stod(meta[i].substr(meta[i].find(",tonal-babble,") + 14));
        EXPECT_TRUE(snr == 0 || snr == 5 || snr == 10 || snr == 20) << meta[i];
    }
    for (std::size_t i = 0; i < 5; ++i)
        for (const char* sub : {"clean", "noisy", "noise"}) {
            const auto rel = fs::path(sub) / utterance_name(i);
            ASSERT_TRUE(fs::exists(a / rel));
            EXPECT_EQ(slurp(a / rel), slurp(b / rel));
        }
    EXPECT_EQ(slurp(a / "meta.csv"), slurp(b / "meta.csv"));
    EXPECT_EQ(load_dataset(a).size(), 5u);
}

TEST(CliSynth, UnwritableDirectoryFails) {
    Sandbox sb;
    sb.write("file", "x");
    const auto r = sb.run("synth --out " + (sb.root() / "file" / "sub").string() + " --n 2");
    EXPECT_NE(r.code, 0);
    EXPECT_FALSE(r.err.empty());
    EXPECT_EQ(sb.run("synth --out x --noise-kinds brown").code, 2);
}

// ---------------------------------------------------------------------------
// train

TEST(CliTrain, WritesArtifactsReproducibly) {
    Sandbox sb;
    make_corpora(sb);
    sb.write("run.cfg", kTinyConfig);
    const auto cfg = (sb.root() / "run.cfg").string();
    const auto out_a = sb.root() / "runs" / "a", out_b = sb.root() / "runs" / "b";
    const auto r = sb.run("train --objective ssl-softdtw --config " + cfg + " --out " + out_a.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("objective=ssl-softdtw"), std::string::npos);
    EXPECT_NE(r.out.find("sisnr_improvement_seen_db="), std::string::npos);
    for (const char* f : {"checkpoint.txt", "metrics.csv", "manifest.json", "effective.cfg"})
        EXPECT_TRUE(fs::exists(out_a / f)) << f;

    const auto metrics = lines(slurp(out_a / "metrics.csv"));
    ASSERT_EQ(metrics.size(), 3u);
    EXPECT_EQ(metrics[0], kMetricsHeader);
    EXPECT_EQ(metrics[1].substr(0, 14), "2,ssl-softdtw,");
    EXPECT_NO_THROW(load_checkpoint((out_a / "checkpoint.txt").string()));

    // Every hash in the manifest verifies against the file on disk.
    const auto manifest = nlohmann::json::parse(slurp(out_a / "manifest.json"));
    EXPECT_EQ(manifest["objective"], "ssl-softdtw");
    EXPECT_EQ(manifest["config"]["train"]["steps"], "4");
    std::size_t verified = 0;
    for (const auto& f : manifest["artifacts"]) {
        EXPECT_EQ(f["sha256"], sha256_hex(slurp(out_a / f["path"].get<std::string>())));
        ++verified;
    }
    for (const char* set : {"train", "heldout"}) {
        const fs::path dir = manifest["datasets"][set]["dir"].get<std::string>();
        for (const auto& f : manifest["datasets"][set]["files"]) {
            EXPECT_EQ(f["sha256"], sha256_hex(slurp(dir / f["path"].get<std::string>())));
            ++verified;
        }
    }
    EXPECT_EQ(verified, 3u + (1 + 4 * 3) + (1 + 2 * 3));

    // Same config and seed: identical bytes, with any thread count.
    ASSERT_EQ(sb.run("train --objective ssl-softdtw --config " + cfg + " --out " + out_b.string(),
                     "ALIGNLAB_THREADS=3")
                  .code,
              0);
    EXPECT_EQ(slurp(out_a / "metrics.csv"), slurp(out_b / "metrics.csv"));
    EXPECT_EQ(slurp(out_a / "checkpoint.txt"), slurp(out_b / "checkpoint.txt"));

    // Re-running from the emitted effective config reproduces the outputs.
    const auto out_c = sb.root() / "runs" / "c";
    ASSERT_EQ(sb.run("train --config " + (out_a / "effective.cfg").string() + " --out " + out_c.string()).code, 0);
    EXPECT_EQ(slurp(out_a / "metrics.csv"), slurp(out_c / "metrics.csv"));
    EXPECT_EQ(slurp(out_a / "checkpoint.txt"), slurp(out_c / "checkpoint.txt"));
}

TEST(CliTrain, InputErrors) {
    Sandbox sb;
    make_corpora(sb);
    sb.write("run.cfg", kTinyConfig);
    const auto cfg = (sb.root() / "run.cfg").string();
    const auto out = (sb.root() / "out").string();

    auto r = sb.run("train --objective ssl-dtw --config " + cfg + " --out " + out);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("ssl-mse, ssl-mse-pad, ssl-softdtw"), std::string::npos);

    sb.write("typo.cfg", "[train]\nsteps = 2\nlearnig_rate = 0.1\n[data]\ntrain = data\n");
    r = sb.run("train --config " + (sb.root() / "typo.cfg").string() + " --out " + out);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("train.learnig_rate"), std::string::npos);

    sb.write("nodata.cfg", "[train]\nsteps = 2\n[data]\ntrain = missing\n");
    EXPECT_EQ(sb.run("train --config " + (sb.root() / "nodata.cfg").string() + " --out " + out).code, 2);
    EXPECT_EQ(sb.run("train --config " + (sb.root() / "absent.cfg").string() + " --out " + out).code, 2);
    EXPECT_EQ(sb.run("train --config " + cfg).code, 2);
}

TEST(CliTrain, NumericalFailureExitsWithDump) {
    Sandbox sb;
    make_corpora(sb);
    sb.write("blowup.cfg", "[train]\nsteps = 6\neffective_batch = 1\nlr = 1e300\n[data]\ntrain = data\n");
    const auto out = sb.root() / "out";
    const auto r = sb.run("train --config " + (sb.root() / "blowup.cfg").string() + " --out " + out.string());
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_NE(r.err.find("failure.json"), std::string::npos);
    EXPECT_TRUE(fs::exists(out / "failure.json"));
}

// ---------------------------------------------------------------------------
// eval

TEST(CliEval, IdentityCheckpointAndErrors) {
    Sandbox sb;
    make_corpora(sb);
    save_checkpoint((sb.root() / "id.txt").string(), init_params(0, 17, 0.0));
    const auto r = sb.run("eval --checkpoint " + (sb.root() / "id.txt").string() + " --data " +
                          (sb.root() / "held").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], "condition,count,sisnr_improvement_db");
    EXPECT_EQ(rows[1].substr(0, 7), "seen,1,");
    EXPECT_EQ(rows[2].substr(0, 9), "unseen,1,");
    for (std::size_t i = 1; i < 3; ++i) EXPECT_NEAR(std::stod(rows[i].substr(rows[i].rfind(',') + 1)), 0.0, 1e-9);

    sb.write("bad.txt", "alignlab-ckpt v1 K=17\n1\n2\n");
    EXPECT_EQ(sb.run("eval --checkpoint " + (sb.root() / "bad.txt").string() + " --data " +
                     (sb.root() / "held").string())
                  .code,
              2);
    EXPECT_EQ(sb.run("eval --checkpoint " + (sb.root() / "id.txt").string() + " --data " +
                     (sb.root() / "nowhere").string())
                  .code,
              2);
}

// ---------------------------------------------------------------------------
// diagnose

TEST(CliDiagnose, RowsAndDeterminism) {
    Sandbox sb;
    const auto a = sb.run("diagnose --betas 0,1,4,100 --n-pairs 10 --seed 7 --duration 0.5");
    ASSERT_EQ(a.code, 0) << a.err;
    const auto rows = lines(a.out);
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], "beta,shortcut_index");
    EXPECT_EQ(rows[1], "0,0");
    EXPECT_GT(std::stod(rows[4].substr(rows[4].find(',') + 1)), 0.9);
    EXPECT_EQ(sb.run("diagnose --betas 0,1,4,100 --n-pairs 10 --seed 7 --duration 0.5").out, a.out);
    EXPECT_EQ(sb.run("diagnose --n-pairs 3").code, 2);
    EXPECT_EQ(sb.run("diagnose --betas 0,x").code, 2);
    EXPECT_EQ(sb.run("frobnicate").code, 2);
}

TEST(CliDiagnose, NoWarningForIncreasingTrend) {
    Sandbox sb;
    const auto r = sb.run("diagnose --betas 4,0,1 --n-pairs 10 --duration 0.5");
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(lines(r.out).size(), 4u);
    EXPECT_EQ(r.err.find("warning"), std::string::npos);
}
