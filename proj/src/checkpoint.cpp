#include "dsnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

namespace dsnet {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume little-endian");

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kMagic = "DSNETCKPT\n";

ordered_json model_json(const ModelConfig& c) {
    ordered_json j;
    j["input_side"] = c.input_side;
    j["heads"] = c.heads;
    j["embed_width"] = c.embed_width;
    j["encoder_repeats"] = c.encoder_repeats;
    j["mlp_ratio"] = c.mlp_ratio;
    j["channel_plan"] = c.channel_plan;
    j["enable_residual_stream"] = c.enable_residual_stream;
    j["enable_content_stream"] = c.enable_content_stream;
    j["enable_cma"] = c.enable_cma;
    j["seed"] = c.seed;
    return j;
}

ModelConfig model_from_json(const json& j) {
    ModelConfig c;
    c.input_side = j.at("input_side").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.embed_width = j.at("embed_width").get<std::size_t>();
    c.encoder_repeats = j.at("encoder_repeats").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.channel_plan = j.at("channel_plan").get<std::vector<std::size_t>>();
    c.enable_residual_stream = j.at("enable_residual_stream").get<bool>();
    c.enable_content_stream = j.at("enable_content_stream").get<bool>();
    c.enable_cma = j.at("enable_cma").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

ordered_json train_json(const TrainConfig& c) {
    ordered_json j;
    j["lr0"] = c.lr0;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["lr_decay"] = c.lr_decay;
    j["decay_every"] = c.decay_every;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["seed"] = c.seed;
    j["precision"] = to_string(c.precision);
    return j;
}

TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    c.lr0 = j.at("lr0").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.decay_every = j.at("decay_every").get<std::size_t>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.precision = parse_precision(j.at("precision").get<std::string>());
    return c;
}

template <typename T>
constexpr Precision precision_of() {
    return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

std::size_t element_size(Precision p) { return p == Precision::f32 ? 4 : 8; }

struct Parsed {
    json header;
    CheckpointInfo info;
    std::vector<char> bytes;
    std::size_t payload_start = 0;
};

Parsed parse(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    Parsed p;
    p.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    const std::size_t magic_len = std::strlen(kMagic);
    if (p.bytes.size() < magic_len || std::memcmp(p.bytes.data(), kMagic, magic_len) != 0) {
        throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
    }
    std::size_t pos = magic_len;
    std::size_t header_len = 0;
    bool any_digit = false;
    while (pos < p.bytes.size() && p.bytes[pos] >= '0' && p.bytes[pos] <= '9') {
        header_len = header_len * 10 + static_cast<std::size_t>(p.bytes[pos] - '0');
        any_digit = true;
        ++pos;
    }
    if (!any_digit || pos >= p.bytes.size() || p.bytes[pos] != '\n') {
        throw CheckpointError("'" + path + "': malformed header length");
    }
    ++pos;
    if (p.bytes.size() - pos < header_len) {
        throw CheckpointError("'" + path + "': truncated header");
    }
    try {
        p.header = json::parse(p.bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                               p.bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
        p.info.version = p.header.at("version").get<int>();
        if (p.info.version != kCheckpointVersion) {
            throw CheckpointError("'" + path + "': unsupported checkpoint version " +
                                  std::to_string(p.info.version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
        }
        p.info.precision = parse_precision(p.header.at("precision").get<std::string>());
        p.info.model = model_from_json(p.header.at("model"));
        p.info.train = train_from_json(p.header.at("train"));
        p.info.epoch = p.header.at("epoch").get<std::size_t>();
        p.info.has_optimizer = p.header.contains("optimizer_step");
    } catch (const json::exception& e) {
        throw CheckpointError("'" + path + "': bad header: " + e.what());
    } catch (const ArgumentError& e) {
        throw CheckpointError("'" + path + "': bad header: " + e.what());
    }
    p.payload_start = pos + header_len;

    const std::size_t esize = element_size(p.info.precision);
    const std::size_t payload = p.bytes.size() - p.payload_start;
    for (const auto& t : p.header.at("tensors")) {
        const auto shape = t.at("shape").get<Shape>();
        const auto end = t.at("offset").get<std::size_t>() + shape_numel(shape) * esize;
        if (end > payload) {
            throw CheckpointError("'" + path + "': truncated payload at tensor '" +
                                  t.at("name").get<std::string>() + "'");
        }
    }
    return p;
}

template <typename T>
void append_raw(std::vector<char>& out, std::span<const T> values) {
    const auto* b = reinterpret_cast<const char*>(values.data());
    out.insert(out.end(), b, b + values.size_bytes());
}

template <typename Dst>
void copy_payload(const Parsed& p, std::size_t offset, Precision src, std::span<Dst> dst) {
    const char* base = p.bytes.data() + p.payload_start + offset;
    if (src == Precision::f32) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            float v;
            std::memcpy(&v, base + i * 4, 4);
            dst[i] = static_cast<Dst>(v);
        }
    } else {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            double v;
            std::memcpy(&v, base + i * 8, 8);
            dst[i] = static_cast<Dst>(v);
        }
    }
}

} // namespace

bool architecture_matches(const ModelConfig& a, const ModelConfig& b, std::string* diff) {
    auto differ = [&](const char* field, auto x, auto y) {
        if (x == y) return false;
        if (diff) *diff = std::string(field);
        return true;
    };
    return !(differ("input_side", a.input_side, b.input_side) || differ("heads", a.heads, b.heads) ||
             differ("embed_width", a.embed_width, b.embed_width) ||
             differ("encoder_repeats", a.encoder_repeats, b.encoder_repeats) ||
             differ("mlp_ratio", a.mlp_ratio, b.mlp_ratio) ||
             differ("channel_plan", a.channel_plan, b.channel_plan) ||
             differ("enable_residual_stream", a.enable_residual_stream, b.enable_residual_stream) ||
             differ("enable_content_stream", a.enable_content_stream, b.enable_content_stream) ||
             differ("enable_cma", a.enable_cma, b.enable_cma));
}

template <typename T>
void save_checkpoint(const std::string& path, const DualStreamNet<T>& model,
                     const TrainConfig& train, std::size_t epoch,
                     const OptimizerState<T>* optimizer) {
    ordered_json header;
    header["version"] = kCheckpointVersion;
    header["precision"] = to_string(precision_of<T>());
    header["model"] = model_json(model.config());
    header["train"] = train_json(train);
    header["epoch"] = epoch;

    std::vector<char> payload;
    ordered_json index = ordered_json::array();
    auto add = [&](const std::string& name, const Shape& shape, std::span<const T> values) {
        ordered_json e;
        e["name"] = name;
        e["shape"] = shape;
        e["offset"] = payload.size();
        index.push_back(e);
        append_raw(payload, values);
    };
    for (const auto& p : model.parameters()) add(p.name, p.tensor.shape(), p.tensor.data());
    for (const auto& b : model.buffers()) add(b.name, b.tensor.shape(), b.tensor.data());
    if (optimizer) {
        header["optimizer_step"] = optimizer->t;
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            add("adam.m." + params[i].name, params[i].tensor.shape(), optimizer->m.at(i));
            add("adam.v." + params[i].name, params[i].tensor.shape(), optimizer->v.at(i));
        }
    }
    header["tensors"] = index;

    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out << kMagic << text.size() << '\n' << text;
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

CheckpointInfo read_checkpoint_info(const std::string& path) { return parse(path).info; }

template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, DualStreamNet<T>& model,
                               OptimizerState<T>* optimizer) {
    const Parsed p = parse(path);
    std::string field;
    if (!architecture_matches(p.info.model, model.config(), &field)) {
        throw CheckpointError("'" + path + "': checkpoint " + field +
                              " does not match the model configuration");
    }
    std::map<std::string, const json*> index;
    for (const auto& t : p.header.at("tensors")) index[t.at("name").get<std::string>()] = &t;

    auto fill = [&](const std::string& name, const Shape& shape, std::span<T> dst) {
        const auto it = index.find(name);
        if (it == index.end()) throw CheckpointError("'" + path + "': missing tensor '" + name + "'");
        const auto stored = it->second->at("shape").get<Shape>();
        if (stored != shape) {
            throw CheckpointError("'" + path + "': tensor '" + name + "' has shape " +
                                  shape_str(stored) + ", model expects " + shape_str(shape));
        }
        copy_payload(p, it->second->at("offset").get<std::size_t>(), p.info.precision, dst);
    };
    for (auto& t : model.parameters()) fill(t.name, t.tensor.shape(), t.tensor.data());
    for (auto& t : model.buffers()) fill(t.name, t.tensor.shape(), t.tensor.data());
    if (optimizer && p.info.has_optimizer) {
        auto& params = model.parameters();
        *optimizer = OptimizerState<T>::create(params);
        optimizer->t = p.header.at("optimizer_step").get<std::uint64_t>();
        for (std::size_t i = 0; i < params.size(); ++i) {
            fill("adam.m." + params[i].name, params[i].tensor.shape(), optimizer->m[i]);
            fill("adam.v." + params[i].name, params[i].tensor.shape(), optimizer->v[i]);
        }
    }
    return p.info;
}

template void save_checkpoint(const std::string&, const DualStreamNet<float>&, const TrainConfig&,
                              std::size_t, const OptimizerState<float>*);
template void save_checkpoint(const std::string&, const DualStreamNet<double>&, const TrainConfig&,
                              std::size_t, const OptimizerState<double>*);
template CheckpointInfo load_checkpoint(const std::string&, DualStreamNet<float>&,
                                        OptimizerState<float>*);
template CheckpointInfo load_checkpoint(const std::string&, DualStreamNet<double>&,
                                        OptimizerState<double>*);

} // namespace dsnet
