#include "spectradiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "spectradiff/errors.hpp"
#include "spectradiff/format.hpp"

namespace spectradiff {

namespace {

template <typename U>
void put_le(std::ostream& out, U value) {
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    }
    out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw ParseError(std::string("checkpoint truncated while reading ") + what, 0);
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(bytes[i]) << (8 * i);
    }
    return value;
}

void put_array(std::ostream& out, const std::string& name, const Shape& shape,
               std::span<const double> values) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) {
        put_le<std::uint64_t>(out, e);
    }
    for (double v : values) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
}

struct Array {
    Shape shape;
    std::vector<double> values;
};

constexpr std::uint64_t kMaxHeader = 1u << 24;
constexpr std::uint64_t kMaxElements = 1u << 28;

std::string header_text(const Checkpoint& ck) {
    const auto& d = ck.model.config();
    const auto& s = ck.schedule;
    std::ostringstream h;
    h << "denoiser.bands = " << d.bands << '\n'
      << "denoiser.patch_size = " << d.patch_size << '\n'
      << "denoiser.hidden = " << d.hidden << '\n'
      << "denoiser.depth = " << d.depth << '\n'
      << "denoiser.heads = " << d.heads << '\n'
      << "denoiser.num_classes = " << d.num_classes << '\n'
      << "denoiser.mlp_ratio = " << d.mlp_ratio << '\n'
      << "schedule.T = " << s.timesteps << '\n'
      << "schedule.s = " << format_double(s.s) << '\n'
      << "schedule.delta = " << format_double(s.delta) << '\n'
      << "schedule.gamma = " << format_double(s.gamma) << '\n'
      << "schedule.clip_max = " << format_double(s.clip_max) << '\n'
      << "schedule.weight_norm = " << to_string(s.weight_norm) << '\n'
      << "norm.mode = " << (ck.norm ? to_string(ck.norm->mode) : "none") << '\n'
      << "classes = " << ck.class_names.size() << '\n';
    for (std::size_t i = 0; i < ck.class_names.size(); ++i) {
        h << "class." << i << " = " << ck.class_names[i] << '\n';
    }
    return h.str();
}

std::map<std::string, std::string> parse_header(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw ParseError("checkpoint header: expected 'key = value'", lineno);
        }
        out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

const std::string& field(const std::map<std::string, std::string>& h, const std::string& key) {
    const auto it = h.find(key);
    if (it == h.end()) {
        throw ParseError("checkpoint header: missing '" + key + "'", 0);
    }
    return it->second;
}

int int_field(const std::map<std::string, std::string>& h, const std::string& key) {
    try {
        std::size_t used = 0;
        const auto& text = field(h, key);
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::logic_error&) {
        throw ParseError("checkpoint header: bad integer for '" + key + "'", 0);
    }
}

double real_field(const std::map<std::string, std::string>& h, const std::string& key) {
    try {
        std::size_t used = 0;
        const auto& text = field(h, key);
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::logic_error&) {
        throw ParseError("checkpoint header: bad number for '" + key + "'", 0);
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, std::ostream& out) {
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string header = header_text(ck);
    put_le<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));

    const auto& params = ck.model.params();
    put_le<std::uint64_t>(out, params.size() + (ck.norm ? 2 : 0));
    for (const auto& [name, tensor] : params) {
        put_array(out, name, tensor.shape(), tensor.data());
    }
    if (ck.norm) {
        put_array(out, "norm.lo", {ck.norm->lo.size()}, ck.norm->lo);
        put_array(out, "norm.hi", {ck.norm->hi.size()}, ck.norm->hi);
    }
    if (!out) {
        throw ConfigError("checkpoint: write failed");
    }
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write '" + path.string() + "'");
    }
    save_checkpoint(ck, out);
}

Checkpoint load_checkpoint(std::istream& in) {
    char magic[sizeof(kCheckpointMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ParseError("not a checkpoint file (bad magic)", 0);
    }
    const auto version = get_le<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
    }
    const auto header_len = get_le<std::uint64_t>(in, "header length");
    if (header_len > kMaxHeader) {
        throw ParseError("checkpoint header too large", 0);
    }
    std::string text(header_len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
        throw ParseError("checkpoint truncated in header", 0);
    }
    const auto h = parse_header(text);

    DenoiserConfig dc;
    dc.bands = int_field(h, "denoiser.bands");
    dc.patch_size = int_field(h, "denoiser.patch_size");
    dc.hidden = int_field(h, "denoiser.hidden");
    dc.depth = int_field(h, "denoiser.depth");
    dc.heads = int_field(h, "denoiser.heads");
    dc.num_classes = int_field(h, "denoiser.num_classes");
    dc.mlp_ratio = int_field(h, "denoiser.mlp_ratio");
    dc.validate();

    ScheduleConfig sc;
    sc.timesteps = int_field(h, "schedule.T");
    sc.s = real_field(h, "schedule.s");
    sc.delta = real_field(h, "schedule.delta");
    sc.gamma = real_field(h, "schedule.gamma");
    sc.clip_max = real_field(h, "schedule.clip_max");
    sc.weight_norm = parse_weight_norm(field(h, "schedule.weight_norm"));
    sc.validate();

    const int classes = int_field(h, "classes");
    if (classes != dc.num_classes) {
        throw ParseError("checkpoint: class list length differs from denoiser.num_classes", 0);
    }
    std::vector<std::string> class_names;
    for (int i = 0; i < classes; ++i) {
        class_names.push_back(field(h, "class." + std::to_string(i)));
    }
    const auto& norm_mode = field(h, "norm.mode");

    std::map<std::string, Array> arrays;
    const auto count = get_le<std::uint64_t>(in, "array count");
    for (std::uint64_t a = 0; a < count; ++a) {
        const auto name_len = get_le<std::uint32_t>(in, "array name length");
        if (name_len > 4096) throw ParseError("checkpoint: array name too long", 0);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw ParseError("checkpoint truncated in array name", 0);
        const auto rank = get_le<std::uint32_t>(in, "array rank");
        if (rank == 0 || rank > 8) throw ParseError("checkpoint: bad rank for '" + name + "'", 0);
        Array arr;
        std::uint64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto e = get_le<std::uint64_t>(in, "array extent");
            if (e == 0 || e > kMaxElements || n * e > kMaxElements) {
                throw ParseError("checkpoint: bad extent for '" + name + "'", 0);
            }
            n *= e;
            arr.shape.push_back(e);
        }
        arr.values.resize(n);
        for (auto& v : arr.values) {
            v = std::bit_cast<double>(get_le<std::uint64_t>(in, "array values"));
        }
        arrays[name] = std::move(arr);
    }

    ParamList params;
    for (const auto& [name, shape] : Denoiser::layout(dc)) {
        const auto it = arrays.find(name);
        if (it == arrays.end()) throw ParseError("checkpoint: missing array '" + name + "'", 0);
        if (it->second.shape != shape) {
            throw ParseError("checkpoint: array '" + name + "' has shape " +
                                 shape_string(it->second.shape) + ", expected " + shape_string(shape),
                             0);
        }
        params.emplace_back(name, Tensor::from(shape, std::move(it->second.values)));
    }

    std::optional<NormRecord> norm;
    if (norm_mode != "none") {
        NormRecord rec;
        rec.mode = parse_norm_mode(norm_mode);
        for (auto [key, dst] : {std::pair{"norm.lo", &rec.lo}, std::pair{"norm.hi", &rec.hi}}) {
            const auto it = arrays.find(key);
            if (it == arrays.end() || it->second.shape != Shape{static_cast<std::size_t>(dc.bands)}) {
                throw ParseError(std::string("checkpoint: missing or malformed '") + key + "'", 0);
            }
            *dst = it->second.values;
        }
        norm = std::move(rec);
    }
    return Checkpoint{Denoiser(dc, std::move(params)), sc, std::move(class_names), std::move(norm)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open '" + path.string() + "'", 0);
    }
    return load_checkpoint(in);
}

}  // namespace spectradiff

namespace spectradiff {

Checkpoint train_checkpoint(const Dataset& ds, DenoiserConfig dc, const ScheduleConfig& sc,
                            const DiffusionTrainConfig& tc, std::uint64_t seed,
                            std::vector<StepRecord>* log,
                            const std::function<void(const StepRecord&)>& on_step) {
    if (ds.size() == 0) {
        throw ContractError("train_checkpoint: empty dataset");
    }
    dc.bands = static_cast<int>(ds.bands());
    dc.num_classes = static_cast<int>(ds.num_classes());
    dc.validate();
    const auto sched = build_schedule(sc);
    Denoiser model(dc, derive_seed(seed, 0));
    DiffusionTrainer trainer(model, sched, tc, derive_seed(seed, 1));
    auto records = trainer.fit(ds.samples, ds.labels, on_step);
    if (log) {
        *log = std::move(records);
    }
    return Checkpoint{std::move(model), sc, ds.class_names, ds.norm};
}

}  // namespace spectradiff
