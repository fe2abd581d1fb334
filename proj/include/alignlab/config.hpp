#ifndef ALIGNLAB_CONFIG_HPP
#define ALIGNLAB_CONFIG_HPP

// Run configuration files: flat `key = value` lines grouped under
// [encoder], [train], [perturb] and [data] sections. '#' starts a comment.
// Every key defaults to the TrainConfig value; unknown keys are errors.

#include <charconv>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "alignlab/train.hpp"

namespace alignlab {

struct RunConfig {
    TrainConfig train;
    std::string train_data;    ///< dataset directory
    std::string heldout_data;  ///< optional evaluation directory
};

/// Thrown for an unknown section or key; `key()` is "section.name".
class ConfigKeyError : public Error {
public:
    explicit ConfigKeyError(std::string key)
        : Error("unknown config key '" + key + "'"), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::logic_error&) {
    }
    throw Error("config: '" + key + "' expects a number, got '" + v + "'");
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw Error("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error("config: '" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
    return out;
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline void apply_config_value(RunConfig& rc, const std::string& section, const std::string& name,
                               const std::string& v) {
    using namespace detail;
    const std::string key = section + "." + name;
    TrainConfig& t = rc.train;
    EncoderConfig& e = t.encoder;
    if (section == "encoder") {
        if (name == "hop") e.hop = to_uint(key, v);
        else if (name == "window") e.window = to_uint(key, v);
        else if (name == "dim") e.dim = to_uint(key, v);
        else if (name == "beta") e.beta = to_double(key, v);
        else if (name == "seed") e.seed = to_uint(key, v);
        else if (name == "normalize") e.normalize = to_bool(key, v);
        else if (name == "frontend") e.frontend = parse_frontend(v);
        else if (name == "spectral_bins") e.spectral_bins = to_uint(key, v);
        else throw ConfigKeyError(key);
    } else if (section == "train") {
        if (name == "objective") t.objective = parse_objective(v);
        else if (name == "lr") t.lr = to_double(key, v);
        else if (name == "effective_batch") t.effective_batch = to_uint(key, v);
        else if (name == "accumulation_steps") t.accumulation_steps = to_uint(key, v);
        else if (name == "clip_max_norm") t.clip_max_norm = to_double(key, v);
        else if (name == "gamma") t.gamma = to_double(key, v);
        else if (name == "softdtw_divergence") t.softdtw_divergence = to_bool(key, v);
        else if (name == "snr_set") t.snr_set = to_list(key, v);
        else if (name == "steps") t.steps = to_uint(key, v);
        else if (name == "eval_interval") t.eval_interval = to_uint(key, v);
        else if (name == "seed") t.seed = to_uint(key, v);
        else if (name == "taps") t.taps = to_uint(key, v);
        else if (name == "init_noise") t.init_noise = to_double(key, v);
        else if (name == "threads") t.threads = to_uint(key, v);
        else if (name == "record_wallclock") t.record_wallclock = to_bool(key, v);
        else throw ConfigKeyError(key);
    } else if (section == "perturb") {
        if (name == "pad_min") t.pad_range.lo = to_double(key, v);
        else if (name == "pad_max") t.pad_range.hi = to_double(key, v);
        else if (name == "alpha_min") t.alpha_range.lo = to_double(key, v);
        else if (name == "alpha_max") t.alpha_range.hi = to_double(key, v);
        else throw ConfigKeyError(key);
    } else if (section == "data") {
        if (name == "train") rc.train_data = v;
        else if (name == "heldout") rc.heldout_data = v;
        else throw ConfigKeyError(key);
    } else {
        throw ConfigKeyError(key);
    }
}

/// Parse config text over the defaults. Does not validate value ranges.
inline RunConfig parse_config(std::string_view text) {
    RunConfig rc;
    std::istringstream in{std::string(text)};
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw Error("config line " + std::to_string(lineno) + ": malformed section");
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            if (section != "encoder" && section != "train" && section != "perturb" && section != "data")
                throw ConfigKeyError(section);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string name = detail::trim(std::string_view(line).substr(0, eq));
        const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
        if (section.empty()) throw Error("config line " + std::to_string(lineno) + ": key '" + name + "' outside a section");
        apply_config_value(rc, section, name, value);
    }
    return rc;
}

/// Every setting, in a form `parse_config` reads back to an equal config.
inline std::string format_config(const RunConfig& rc) {
    using detail::fmt;
    const TrainConfig& t = rc.train;
    const EncoderConfig& e = t.encoder;
    std::ostringstream o;
    auto b = [](bool v) { return v ? "true" : "false"; };
    std::string snr;
    for (std::size_t i = 0; i < t.snr_set.size(); ++i) snr += (i ? "," : "") + fmt(t.snr_set[i]);

    o << "[encoder]\n"
      << "hop = " << e.hop << "\nwindow = " << e.window << "\ndim = " << e.dim << "\nbeta = " << fmt(e.beta)
      << "\nseed = " << e.seed << "\nnormalize = " << b(e.normalize) << "\nfrontend = " << to_string(e.frontend)
      << "\nspectral_bins = " << e.spectral_bins << "\n\n";
    o << "[train]\n"
      << "objective = " << to_string(t.objective) << "\nlr = " << fmt(t.lr)
      << "\neffective_batch = " << t.effective_batch << "\naccumulation_steps = " << t.accumulation_steps
      << "\nclip_max_norm = " << fmt(t.clip_max_norm) << "\ngamma = " << fmt(t.gamma)
      << "\nsoftdtw_divergence = " << b(t.softdtw_divergence) << "\nsnr_set = " << snr << "\nsteps = " << t.steps
      << "\neval_interval = " << t.eval_interval << "\nseed = " << t.seed << "\ntaps = " << t.taps
      << "\ninit_noise = " << fmt(t.init_noise) << "\nthreads = " << t.threads
      << "\nrecord_wallclock = " << b(t.record_wallclock) << "\n\n";
    o << "[perturb]\n"
      << "pad_min = " << fmt(t.pad_range.lo) << "\npad_max = " << fmt(t.pad_range.hi)
      << "\nalpha_min = " << fmt(t.alpha_range.lo) << "\nalpha_max = " << fmt(t.alpha_range.hi) << "\n\n";
    o << "[data]\n";
    if (!rc.train_data.empty()) o << "train = " << rc.train_data << "\n";
    if (!rc.heldout_data.empty()) o << "heldout = " << rc.heldout_data << "\n";
    return o.str();
}

}  // namespace alignlab

#endif  // ALIGNLAB_CONFIG_HPP
