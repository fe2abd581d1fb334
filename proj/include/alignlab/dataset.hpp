#ifndef ALIGNLAB_DATASET_HPP
#define ALIGNLAB_DATASET_HPP

// On-disk corpus layout:
//   meta.csv          id,noise_kind,snr_db,seed
//   clean/NNNN.wav    clean utterance
//   noisy/NNNN.wav    fixed mixture
//   noise/NNNN.wav    noise recording (optional; enables per-pass re-mixing)

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "alignlab/train.hpp"

namespace alignlab {

inline constexpr const char* kMetaHeader = "id,noise_kind,snr_db,seed";

inline std::string utterance_name(std::size_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu.wav", id);
    return buf;
}

/// Relative paths of every file that makes up the corpus, in a fixed order.
inline std::vector<std::string> dataset_files(const Dataset& d) {
    std::vector<std::string> out{"meta.csv"};
    for (std::size_t i = 0; i < d.size(); ++i) {
        out.push_back("clean/" + utterance_name(i));
        out.push_back("noisy/" + utterance_name(i));
        if (!d[i].noise_source.samples.empty()) out.push_back("noise/" + utterance_name(i));
    }
    return out;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"clean", "noisy", "noise"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) throw Error("cannot create directory " + (dir / sub).string() + ": " + ec.message());
    }
    std::ofstream meta(dir / "meta.csv", std::ios::trunc);
    if (!meta) throw Error("cannot write " + (dir / "meta.csv").string());
    meta << kMetaHeader << "\n";
    char buf[128];
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Utterance& u = d[i];
        std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%llu\n", i, to_string(u.noise).c_str(), u.snr_db,
                      static_cast<unsigned long long>(u.seed));
        meta << buf;
        write_wav((dir / "clean" / utterance_name(i)).string(), u.clean);
        write_wav((dir / "noisy" / utterance_name(i)).string(), u.noisy);
        if (!u.noise_source.samples.empty())
            write_wav((dir / "noise" / utterance_name(i)).string(), u.noise_source);
    }
    if (!meta) throw Error("failed writing " + (dir / "meta.csv").string());
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream meta(dir / "meta.csv");
    if (!meta) throw Error("dataset not found: " + (dir / "meta.csv").string());
    std::string line;
    if (!std::getline(meta, line) || line != kMetaHeader) throw Error("dataset: bad meta.csv header in " + dir.string());
    Dataset out;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, kind, snr, seed;
        if (!std::getline(ss, id, ',') || !std::getline(ss, kind, ',') || !std::getline(ss, snr, ',') ||
            !std::getline(ss, seed))
            throw Error("dataset: malformed meta.csv row '" + line + "'");
        const std::size_t index = std::stoul(id);
        if (index != out.size()) throw Error("dataset: meta.csv ids must be 0, 1, 2, ...");
        Utterance u;
        u.noise = parse_noise_kind(kind);
        u.snr_db = std::stod(snr);
        u.seed = std::stoull(seed);
        u.clean = read_wav((dir / "clean" / utterance_name(index)).string());
        u.noisy = read_wav((dir / "noisy" / utterance_name(index)).string());
        if (u.clean.size() != u.noisy.size()) throw Error("dataset: clean/noisy length mismatch for " + id);
        const auto noise_path = dir / "noise" / utterance_name(index);
        if (fs::exists(noise_path)) u.noise_source = read_wav(noise_path.string());
        out.push_back(std::move(u));
    }
    if (out.empty()) throw Error("dataset: no utterances in " + dir.string());
    return out;
}

}  // namespace alignlab

#endif  // ALIGNLAB_DATASET_HPP
