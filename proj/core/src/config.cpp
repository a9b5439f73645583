#include "spectradiff/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "spectradiff/errors.hpp"
#include "spectradiff/format.hpp"

namespace spectradiff {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto t = trim(text);
    auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || end != t.data() + t.size()) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
    }
    return value;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
std::string join(const T& values) {
    std::string out;
    for (const auto& v : values) {
        if (!out.empty()) out += ',';
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, std::string>) {
            out += v;
        } else {
            out += std::to_string(v);
        }
    }
    return out;
}

std::array<int, 5> five_ints(const std::string& key, const std::string& text) {
    const auto items = split_list(text);
    if (items.size() != 5) {
        throw ConfigError("config: '" + key + "' expects exactly 5 comma-separated integers");
    }
    std::array<int, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) out[i] = parse_number<int>(key, items[i]);
    return out;
}

struct Entry {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SD_INT(KEY, FIELD)                                                                  \
    Entry {                                                                                 \
        KEY, [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<int>(KEY, v); }, \
            [](const RunConfig& c) { return std::to_string(c.FIELD); }                      \
    }
#define SD_REAL(KEY, FIELD)                                                                     \
    Entry {                                                                                     \
        KEY, [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<double>(KEY, v); }, \
            [](const RunConfig& c) { return format_double(c.FIELD); }                           \
    }
#define SD_U64(KEY, FIELD)                                                                             \
    Entry {                                                                                            \
        KEY, [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<std::uint64_t>(KEY, v); }, \
            [](const RunConfig& c) { return std::to_string(c.FIELD); }                                 \
    }

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = {
        SD_U64("seed", seed),
        SD_INT("threads", threads),
        {"data.norm", [](RunConfig& c, const std::string& v) { c.norm_mode = parse_norm_mode(trim(v)); },
         [](const RunConfig& c) { return to_string(c.norm_mode); }},
        SD_INT("schedule.T", schedule.timesteps),
        SD_REAL("schedule.s", schedule.s),
        SD_REAL("schedule.delta", schedule.delta),
        SD_REAL("schedule.gamma", schedule.gamma),
        SD_REAL("schedule.clip_max", schedule.clip_max),
        {"schedule.weight_norm",
         [](RunConfig& c, const std::string& v) { c.schedule.weight_norm = parse_weight_norm(trim(v)); },
         [](const RunConfig& c) { return to_string(c.schedule.weight_norm); }},
        SD_INT("denoiser.patch_size", denoiser.patch_size),
        SD_INT("denoiser.hidden", denoiser.hidden),
        SD_INT("denoiser.depth", denoiser.depth),
        SD_INT("denoiser.heads", denoiser.heads),
        SD_INT("denoiser.mlp_ratio", denoiser.mlp_ratio),
        SD_INT("train.steps", train.steps),
        SD_INT("train.batch_size", train.batch_size),
        SD_REAL("train.lambda_vlb", train.lambda_vlb),
        SD_REAL("train.lr", train.adam.lr),
        SD_REAL("train.weight_decay", train.adam.weight_decay),
        SD_REAL("train.beta1", train.adam.beta1),
        SD_REAL("train.beta2", train.adam.beta2),
        SD_REAL("train.eps", train.adam.eps),
        SD_REAL("train.grad_clip", train.grad_clip),
        SD_INT("train.log_every", log_every),
        {"augment.method",
         [](RunConfig& c, const std::string& v) { c.augment.method = parse_augment_method(trim(v)); },
         [](const RunConfig& c) { return to_string(c.augment.method); }},
        SD_REAL("augment.noise_power", augment.noise_power),
        SD_INT("augment.anchors", augment.anchors),
        SD_INT("augment.k", augment.k_neighbors),
        SD_INT("augment.per_class", augment.per_class_count),
        SD_REAL("eval.train_frac", split.train_frac),
        SD_REAL("eval.val_frac", split.val_frac),
        SD_REAL("eval.test_frac", split.test_frac),
        SD_REAL("eval.subsample", split.train_subsample_frac),
        SD_U64("eval.split_seed", split.seed),
        SD_INT("eval.trials", search.trials),
        SD_REAL("eval.lr_lo", search.lr_lo),
        SD_REAL("eval.lr_hi", search.lr_hi),
        SD_REAL("eval.wd_lo", search.wd_lo),
        SD_REAL("eval.wd_hi", search.wd_hi),
        SD_INT("eval.epochs", search.train.epochs),
        SD_INT("eval.batch_size", search.train.batch_size),
        SD_INT("eval.patience", search.train.patience),
        {"eval.channels",
         [](RunConfig& c, const std::string& v) { c.classifier.channels = five_ints("eval.channels", v); },
         [](const RunConfig& c) { return join(c.classifier.channels); }},
        {"eval.kernels",
         [](RunConfig& c, const std::string& v) { c.classifier.kernels = five_ints("eval.kernels", v); },
         [](const RunConfig& c) { return join(c.classifier.kernels); }},
        {"eval.seeds",
         [](RunConfig& c, const std::string& v) {
             std::vector<std::uint64_t> seeds;
             for (const auto& item : split_list(v)) {
                 seeds.push_back(parse_number<std::uint64_t>("eval.seeds", item));
             }
             if (seeds.empty()) throw ConfigError("config: 'eval.seeds' must list at least one seed");
             c.eval_seeds = std::move(seeds);
         },
         [](const RunConfig& c) { return join(c.eval_seeds); }},
        {"eval.methods",
         [](RunConfig& c, const std::string& v) {
             auto methods = split_list(v);
             if (methods.empty()) throw ConfigError("config: 'eval.methods' must list at least one method");
             for (const auto& m : methods) parse_augment_method(m);
             c.eval_methods = std::move(methods);
         },
         [](const RunConfig& c) { return join(c.eval_methods); }},
    };
    return table;
}

#undef SD_INT
#undef SD_REAL
#undef SD_U64

const Entry& find(const std::string& key) {
    for (const auto& e : entries()) {
        if (e.key == key) return e;
    }
    throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> out = [] {
        std::vector<std::string> k;
        for (const auto& e : entries()) k.push_back(e.key);
        return k;
    }();
    return out;
}

void RunConfig::merge_stream(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("expected 'key = value'", lineno);
        }
        const auto key = trim(line.substr(0, eq));
        try {
            set(key, trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path.string() + "'");
    }
    merge_stream(in);
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& e : entries()) {
        out += e.key + " = " + e.get(*this) + '\n';
    }
    return out;
}

}  // namespace spectradiff
