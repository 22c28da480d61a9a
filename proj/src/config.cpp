#include "eviseg/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace eviseg {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct RawEntry {
    std::string value;
    int line;
};

class KeyMap {
public:
    KeyMap(std::map<std::string, RawEntry> entries, std::string path)
        : entries_(std::move(entries)), path_(std::move(path)) {}

    template <typename T, typename Parse>
    void take(const std::string& key, T& out, Parse parse) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return;
        try {
            out = parse(it->second.value);
        } catch (const std::exception&) {
            fail(it->second.line, "invalid value for " + key + ": '" + it->second.value + "'");
        }
        entries_.erase(it);
    }

    void take_u64(const std::string& key, std::uint64_t& out) {
        take(key, out, [](const std::string& v) { return std::stoull(v); });
    }
    void take_size(const std::string& key, std::size_t& out) {
        take(key, out, [](const std::string& v) { return std::stoull(v); });
    }
    void take_int(const std::string& key, int& out) {
        take(key, out, [](const std::string& v) { return std::stoi(v); });
    }
    void take_long(const std::string& key, long& out) {
        take(key, out, [](const std::string& v) { return std::stol(v); });
    }
    void take_double(const std::string& key, double& out) {
        take(key, out, [](const std::string& v) {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
            return x;
        });
    }
    void take_bool(const std::string& key, bool& out) {
        take(key, out, [](const std::string& v) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw std::invalid_argument("not a boolean");
        });
    }
    void take_string(const std::string& key, std::string& out) {
        take(key, out, [](const std::string& v) { return v; });
    }

    void reject_leftovers() const {
        if (entries_.empty()) return;
        const auto& [key, entry] = *entries_.begin();
        fail(entry.line, "unknown key '" + key + "'");
    }

    [[noreturn]] void fail(int line, const std::string& message) const {
        throw ConfigError(path_ + ":" + std::to_string(line) + ": " + message);
    }

private:
    std::map<std::string, RawEntry> entries_;
    std::string path_;
};

}  // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);

    std::map<std::string, RawEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key or value");
        }
        if (entries.count(key)) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        }
        entries[key] = {value, lineno};
    }

    KeyMap map(std::move(entries), path);
    RunConfig cfg;
    map.take_u64("seed", cfg.seed);
    map.take_size("data.height", cfg.height);
    map.take_size("data.width", cfg.width);
    map.take_size("data.classes", cfg.classes);
    map.take_string("data.family", cfg.family);
    map.take_double("data.fg_min", cfg.fg_min);
    map.take_double("data.fg_max", cfg.fg_max);
    map.take_double("data.texture", cfg.texture);
    map.take_size("data.train_count", cfg.train_count);
    map.take_size("data.val_count", cfg.val_count);
    map.take_size("data.test_count", cfg.test_count);
    map.take_size("data.ood_count", cfg.ood_count);
    map.take_string("data.ood_family", cfg.ood_family);
    map.take_double("data.ood_blur_sigma", cfg.ood_blur_sigma);
    map.take_int("data.ood_blur_kernel", cfg.ood_blur_kernel);
    map.take_size("model.base_width", cfg.base_width);
    map.take_size("model.depth", cfg.depth);
    map.take_long("train.epochs", cfg.epochs);
    map.take_size("train.batch", cfg.batch);
    map.take_double("train.lr", cfg.lr);
    map.take_double("loss.lambda_kl", cfg.loss.lambda_kl);
    map.take_double("loss.beta0", cfg.loss.beta0);
    map.take_double("loss.dice_smooth", cfg.loss.dice_smooth);
    map.take_bool("loss.anneal_dice", cfg.loss.anneal_dice);
    map.take_double("loss.certainty_threshold", cfg.loss.certainty_threshold);
    map.take_int("eval.ece_bins", cfg.ece_bins);
    map.reject_leftovers();

    cfg.loss.total_epochs = cfg.epochs;
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return cfg;
}

namespace {
SyntheticSpec::Family parse_family(const std::string& name) {
    if (name == "blobs") return SyntheticSpec::Family::kBlobs;
    if (name == "rings") return SyntheticSpec::Family::kRings;
    if (name == "both") return SyntheticSpec::Family::kBoth;
    throw std::invalid_argument("unknown shape family '" + name + "'");
}
}  // namespace

void RunConfig::validate() const {
    SyntheticSpec spec = synthetic_spec(0);
    spec.validate();
    ood_spec(0).validate();
    backbone_config().validate();
    loss.validate();
    const std::size_t stride = 1ull << depth;
    if (height % stride != 0 || width % stride != 0) {
        throw std::invalid_argument("data.height/width must be divisible by 2^model.depth");
    }
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be > 0");
    if (ece_bins < 1) throw std::invalid_argument("eval.ece_bins must be >= 1");
    if (train_count < 1) throw std::invalid_argument("data.train_count must be >= 1");
}

SyntheticSpec RunConfig::synthetic_spec(std::uint64_t stream) const {
    SyntheticSpec spec;
    spec.height = height;
    spec.width = width;
    spec.num_classes = classes;
    spec.family = parse_family(family);
    spec.fg_min = fg_min;
    spec.fg_max = fg_max;
    spec.texture_noise = texture;
    spec.seed = mix_seed(seed, stream);
    return spec;
}

SyntheticSpec RunConfig::ood_spec(std::uint64_t stream) const {
    SyntheticSpec spec = synthetic_spec(stream);
    spec.family = parse_family(ood_family);
    return spec;
}

BackboneConfig RunConfig::backbone_config() const {
    BackboneConfig config;
    config.in_channels = 1;
    config.num_classes = classes;
    config.base_width = base_width;
    config.depth = depth;
    config.seed = mix_seed(seed, 0xb0dull);
    return config;
}

std::string RunConfig::config_hash() const {
    std::ostringstream os;
    os << "seed=" << seed << ";h=" << height << ";w=" << width << ";c=" << classes
       << ";family=" << family << ";fg=" << fg_min << "," << fg_max << ";tex=" << texture
       << ";counts=" << train_count << "," << val_count << "," << test_count << ","
       << ood_count << ";ood=" << ood_family << "," << ood_blur_sigma << ","
       << ood_blur_kernel << ";bw=" << base_width << ";depth=" << depth
       << ";epochs=" << epochs << ";batch=" << batch << ";lr=" << lr
       << ";lambda=" << loss.lambda_kl << ";beta0=" << loss.beta0
       << ";smooth=" << loss.dice_smooth << ";anneal=" << loss.anneal_dice
       << ";cthr=" << loss.certainty_threshold << ";bins=" << ece_bins;
    const std::string canonical = os.str();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical.data(), canonical.size())));
    return buf;
}

}  // namespace eviseg
