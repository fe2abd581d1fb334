// alignlab: synthesize corpora, fine-tune the FIR enhancer, evaluate, and run
// the positional-shortcut diagnostic.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "alignlab/config.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/train.hpp"

namespace fs = std::filesystem;
using namespace alignlab;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "alignlab 0.1.0";

enum Exit : int { kOk = 0, kUsage = 2, kNumerical = 3 };

/// Input problems that map to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot hash " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", md[i]);
        hex += byte;
    }
    return hex;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t worker_count(std::size_t requested) {
    std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
    if (const char* env = std::getenv("ALIGNLAB_THREADS")) {
        char* end = nullptr;
        const unsigned long cap = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && cap > 0) n = std::min<std::size_t>(n, cap);
    }
    return n;
}

std::vector<double> parse_number_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw UsageError(std::string("invalid ") + what + " value '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
    return out;
}

/// Effective config as {section: {key: value}}, values kept as written.
json config_snapshot(const RunConfig& rc) {
    json out = json::object();
    std::stringstream ss(format_config(rc));
    std::string line, section;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        if (line.front() == '[') {
            section = line.substr(1, line.size() - 2);
            out[section] = json::object();
            continue;
        }
        const auto eq = line.find(" = ");
        out[section][line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

json hashed_files(const fs::path& root, const std::vector<std::string>& files) {
    json arr = json::array();
    for (const auto& f : files) arr.push_back({{"path", f}, {"sha256", sha256_file(root / f)}});
    return arr;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::size_t n = 100;
    std::uint64_t seed = 0;
    std::string noise_kinds = "tonal-babble";
    std::string snr = "0,5,10,20";
    double duration = 1.0;
};

int cmd_synth(const SynthArgs& a) {
    std::vector<NoiseKind> kinds;
    std::stringstream ss(a.noise_kinds);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            kinds.push_back(parse_noise_kind(item));
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }
    if (kinds.empty()) throw UsageError("no noise kinds given");
    const auto snr = parse_number_list(a.snr, "snr");
    if (a.n == 0) throw UsageError("--n must be at least 1");
    const Dataset d = synth_dataset(a.n, a.seed, kinds, snr, a.duration);
    write_dataset(a.out, d);
    std::printf("wrote %zu utterances to %s\n", d.size(), a.out.c_str());
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string objective;
    std::string out;
};

fs::path resolve_against(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : fs::absolute(base / path).lexically_normal();
}

int cmd_train(const TrainArgs& a) {
    RunConfig rc;
    try {
        rc = parse_config(read_text(a.config));
    } catch (const ConfigKeyError& e) {
        throw UsageError(std::string(e.what()) + " in " + a.config);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    try {
        if (!a.objective.empty()) rc.train.objective = parse_objective(a.objective);
        rc.train.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (rc.train_data.empty()) throw UsageError("config: [data] train is required");
    const fs::path config_dir = fs::absolute(a.config).parent_path();
    rc.train_data = resolve_against(config_dir, rc.train_data).string();
    if (!rc.heldout_data.empty()) rc.heldout_data = resolve_against(config_dir, rc.heldout_data).string();

    Dataset train_set, heldout;
    try {
        train_set = load_dataset(rc.train_data);
        if (!rc.heldout_data.empty()) heldout = load_dataset(rc.heldout_data);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }

    const fs::path out(a.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw UsageError("cannot create output directory " + out.string() + ": " + ec.message());

    // The effective config records the resolved objective and data paths;
    // thread count does not affect results and is resolved separately.
    write_text(out / "effective.cfg", format_config(rc));
    TrainConfig cfg = rc.train;
    cfg.threads = worker_count(cfg.threads);

    TrainResult result;
    try {
        result = train_objective(cfg, train_set, heldout, std::nullopt,
                                 [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); });
    } catch (const NumericalError& e) {
        const fs::path dump = out / "failure.json";
        json j{{"error", e.what()}, {"objective", to_string(cfg.objective)}, {"config", config_snapshot(rc)}};
        write_text(dump, j.dump(2) + "\n");
        std::fprintf(stderr, "numerical failure: %s\ndiagnostic dump: %s\n", e.what(), dump.string().c_str());
        return kNumerical;
    }

    save_checkpoint((out / "checkpoint.txt").string(), result.params);
    write_text(out / "metrics.csv", format_metrics_csv(result.metrics));

    const Dataset& eval_set = heldout.empty() ? train_set : heldout;
    const EvalReport report = evaluate(result.params, eval_set, FrozenEncoder(cfg.encoder), cfg);

    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["objective"] = to_string(cfg.objective);
    manifest["config"] = config_snapshot(rc);
    manifest["datasets"]["train"] = {{"dir", rc.train_data},
                                     {"files", hashed_files(rc.train_data, dataset_files(train_set))}};
    if (!heldout.empty())
        manifest["datasets"]["heldout"] = {{"dir", rc.heldout_data},
                                           {"files", hashed_files(rc.heldout_data, dataset_files(heldout))}};
    manifest["artifacts"] = hashed_files(out, {"checkpoint.txt", "metrics.csv", "effective.cfg"});
    write_text(out / "manifest.json", manifest.dump(2) + "\n");

    const double final_loss = result.metrics.records.empty() ? std::nan("") : result.metrics.records.back().train_loss;
    std::printf("objective=%s steps=%zu final_train_loss=%.6g sisnr_improvement_seen_db=%.4f "
                "sisnr_improvement_unseen_db=%.4f\n",
                to_string(cfg.objective).c_str(), result.metrics.step_losses.size(), final_loss,
                report.seen.sisnr_improvement_db, report.unseen.sisnr_improvement_db);
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data;
};

int cmd_eval(const EvalArgs& a) {
    EnhancerParams params;
    Dataset test;
    try {
        params = load_checkpoint(a.checkpoint);
        test = load_dataset(a.data);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    TrainConfig cfg;
    cfg.threads = worker_count(0);
    const EvalReport r = evaluate(params, test, FrozenEncoder(cfg.encoder), cfg);
    std::printf("condition,count,sisnr_improvement_db\n");
    for (const EvalRow* row : {&r.seen, &r.unseen})
        std::printf("%s,%zu,%.17g\n", row->condition.c_str(), row->count, row->sisnr_improvement_db);
    return kOk;
}

// ---------------------------------------------------------------------------

struct DiagnoseArgs {
    std::string betas = "0,1,4";
    std::size_t n_pairs = 20;
    std::uint64_t seed = 0;
    double duration = 1.0;
    std::string frontend = "waveform";
};

int cmd_diagnose(const DiagnoseArgs& a) {
    const auto betas = parse_number_list(a.betas, "beta");
    EncoderConfig enc;
    try {
        enc.frontend = parse_frontend(a.frontend);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (a.n_pairs < kMinDiagnosticPairs) throw UsageError("--n-pairs must be at least 10");
    std::printf("beta,shortcut_index\n");
    std::vector<double> indices;
    for (double beta : betas) {
        if (!(beta >= 0.0) || !std::isfinite(beta)) throw UsageError("beta values must be finite and >= 0");
        enc.beta = beta;
        Rng rng(a.seed);  // same waveform pairs for every beta
        indices.push_back(diagnose_positional(enc, a.n_pairs, rng, a.duration));
        std::printf("%.17g,%.17g\n", beta, indices.back());
    }
    std::vector<std::pair<double, double>> by_beta;
    for (std::size_t i = 0; i < betas.size(); ++i) by_beta.emplace_back(betas[i], indices[i]);
    std::sort(by_beta.begin(), by_beta.end());
    for (std::size_t i = 1; i < by_beta.size(); ++i) {
        if (by_beta[i].second < by_beta[i - 1].second) {
            std::fprintf(stderr, "warning: shortcut index decreases from beta %.6g to beta %.6g\n",
                         by_beta[i - 1].first, by_beta[i].first);
            break;
        }
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Representation-guided enhancer fine-tuning testbed"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a synthetic clean/noisy corpus");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--n", synth.n, "Number of utterances")->capture_default_str();
    s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    s->add_option("--noise-kinds", synth.noise_kinds, "Comma-separated: white, pink, tonal-babble")
        ->capture_default_str();
    s->add_option("--snr", synth.snr, "Comma-separated SNR set in dB")->capture_default_str();
    s->add_option("--duration", synth.duration, "Utterance length in seconds")->capture_default_str();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Fine-tune the enhancer");
    t->add_option("--config", train.config, "Run configuration file")->required();
    t->add_option("--objective", train.objective, "ssl-mse, ssl-mse-pad or ssl-softdtw (overrides config)");
    t->add_option("--out", train.out, "Output directory")->required();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Report SI-SNR improvement of a checkpoint");
    e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    e->add_option("--data", eval.data, "Dataset directory")->required();

    DiagnoseArgs diag;
    auto* d = app.add_subcommand("diagnose", "Positional-shortcut index per encoder beta");
    d->add_option("--betas", diag.betas, "Comma-separated beta values")->capture_default_str();
    d->add_option("--n-pairs", diag.n_pairs, "Independent waveform pairs")->capture_default_str();
    d->add_option("--seed", diag.seed, "Random seed")->capture_default_str();
    d->add_option("--duration", diag.duration, "Waveform length in seconds")->capture_default_str();
    d->add_option("--frontend", diag.frontend, "Encoder frontend: waveform or spectral")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*s) return cmd_synth(synth);
        if (*t) return cmd_train(train);
        if (*e) return cmd_eval(eval);
        if (*d) return cmd_diagnose(diag);
    } catch (const UsageError& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return kUsage;
    } catch (const NumericalError& err) {
        std::fprintf(stderr, "numerical failure: %s\n", err.what());
        return kNumerical;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return kUsage;
    }
    return kUsage;
}
