#include "run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "dsnet/errors.hpp"

namespace dsnet::cli {

namespace {

std::string number_text(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    // Keep floats recognisable as floats when read back by other tools.
    if (s.find_first_of(".e") == std::string::npos && s.find("inf") == std::string::npos &&
        s.find("nan") == std::string::npos) {
        s += ".0";
    }
    return s;
}

std::string yaml_quoted(const std::string& s) {
    YAML::Emitter e;
    e << YAML::DoubleQuoted << s;
    return e.c_str();
}

std::string scalar_of(const YAML::Node& n, const std::string& where) {
    if (!n.IsScalar()) throw ConfigError(where + ": expected a scalar value");
    return n.Scalar();
}

std::uint64_t read_uint(const YAML::Node& n, const std::string& where) {
    const auto s = scalar_of(n, where);
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
        throw ConfigError(where + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
}

double read_double(const YAML::Node& n, const std::string& where) {
    const auto s = scalar_of(n, where);
    double v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
        throw ConfigError(where + ": expected a number, got '" + s + "'");
    }
    return v;
}

bool read_bool(const YAML::Node& n, const std::string& where) {
    const auto s = scalar_of(n, where);
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError(where + ": expected true or false, got '" + s + "'");
}

std::string read_string(const YAML::Node& n, const std::string& where) {
    if (n.IsNull()) return "";
    return scalar_of(n, where);
}

template <typename F>
auto read_list(const YAML::Node& n, const std::string& where, F read_one) {
    if (!n.IsSequence()) throw ConfigError(where + ": expected a list");
    std::vector<decltype(read_one(n, where))> out;
    for (std::size_t i = 0; i < n.size(); ++i) {
        out.push_back(read_one(n[i], where + "[" + std::to_string(i) + "]"));
    }
    return out;
}

struct Field {
    std::string section;
    std::string key;
    std::string comment;
    std::function<void(const YAML::Node&, const std::string&)> read;
    std::function<std::string()> write;
};

std::vector<Field> fields(RunConfig& c) {
    auto uint_field = [](auto& target) {
        return std::make_pair(
            [&target](const YAML::Node& n, const std::string& w) {
                target = static_cast<std::remove_reference_t<decltype(target)>>(read_uint(n, w));
            },
            [&target] { return std::to_string(target); });
    };
    auto double_field = [](double& target) {
        return std::make_pair([&target](const YAML::Node& n, const std::string& w) { target = read_double(n, w); },
                              [&target] { return number_text(target); });
    };
    auto bool_field = [](bool& target) {
        return std::make_pair([&target](const YAML::Node& n, const std::string& w) { target = read_bool(n, w); },
                              [&target] { return std::string(target ? "true" : "false"); });
    };
    auto string_field = [](std::string& target) {
        return std::make_pair([&target](const YAML::Node& n, const std::string& w) { target = read_string(n, w); },
                              [&target] { return yaml_quoted(target); });
    };

    std::vector<Field> out;
    auto add = [&](std::string section, std::string key, std::string comment, auto rw) {
        Field f;
        f.section = std::move(section);
        f.key = std::move(key);
        f.comment = std::move(comment);
        f.read = rw.first;
        f.write = rw.second;
        out.push_back(std::move(f));
    };

    auto& m = c.model;
    add("model", "input_side", "image side s after resizing; multiple of 32", uint_field(m.input_side));
    add("model", "heads", "attention heads; must divide embed_width", uint_field(m.heads));
    add("model", "embed_width", "token width", uint_field(m.embed_width));
    add("model", "encoder_repeats", "stacked encoder blocks", uint_field(m.encoder_repeats));
    add("model", "mlp_ratio", "encoder MLP expansion", uint_field(m.mlp_ratio));
    add("model", "channel_plan", "module a, two downsampling modules, two post-attention modules",
        std::make_pair(
            [&m](const YAML::Node& n, const std::string& w) {
                auto v = read_list(n, w, read_uint);
                m.channel_plan.assign(v.begin(), v.end());
            },
            [&m] {
                std::string s = "[";
                for (std::size_t i = 0; i < m.channel_plan.size(); ++i) {
                    s += (i ? ", " : "") + std::to_string(m.channel_plan[i]);
                }
                return s + "]";
            }));
    add("model", "enable_residual_stream", "", bool_field(m.enable_residual_stream));
    add("model", "enable_content_stream", "", bool_field(m.enable_content_stream));
    add("model", "enable_cma", "cross attention between the streams", bool_field(m.enable_cma));
    add("model", "seed", "weight initialization seed", uint_field(m.seed));

    auto& t = c.train;
    add("train", "lr0", "initial Adam step size", double_field(t.lr0));
    add("train", "batch_size", "", uint_field(t.batch_size));
    add("train", "epochs", "", uint_field(t.epochs));
    add("train", "lr_decay", "step-size multiplier applied every decay_every epochs", double_field(t.lr_decay));
    add("train", "decay_every", "", uint_field(t.decay_every));
    add("train", "beta1", "", double_field(t.beta1));
    add("train", "beta2", "", double_field(t.beta2));
    add("train", "eps", "", double_field(t.eps));
    add("train", "seed", "shuffle seed", uint_field(t.seed));
    add("train", "precision", "f32 for training runs, f64 for bit-reproducible verification runs",
        std::make_pair(
            [&t](const YAML::Node& n, const std::string& w) {
                const auto s = read_string(n, w);
                if (s != "f32" && s != "f64") throw ConfigError(w + ": expected f32 or f64, got '" + s + "'");
                t.precision = parse_precision(s);
            },
            [&t] { return to_string(t.precision); }));

    add("paths", "manifest", "CSV with header path,label,split", string_field(c.paths.manifest));
    add("paths", "checkpoint", "checkpoint read by eval and robustness", string_field(c.paths.checkpoint));
    add("paths", "output_dir", "relative paths go under $DSNET_OUTPUT_ROOT when set",
        string_field(c.paths.output_dir));

    add("data", "split_ratios", "train, val, test; used only when the manifest leaves splits empty",
        std::make_pair(
            [&c](const YAML::Node& n, const std::string& w) {
                auto v = read_list(n, w, read_double);
                if (v.size() != 3) throw ConfigError(w + ": expected exactly 3 ratios");
                std::copy(v.begin(), v.end(), c.data.split_ratios.begin());
            },
            [&c] {
                const auto& r = c.data.split_ratios;
                return "[" + number_text(r[0]) + ", " + number_text(r[1]) + ", " + number_text(r[2]) + "]";
            }));
    add("data", "split_seed", "", uint_field(c.data.split_seed));

    add("eval", "split", "train, val or test", string_field(c.eval.split));
    add("eval", "threshold", "sigmoid(logit) >= threshold counts as generated", double_field(c.eval.threshold));
    add("eval", "batch_size", "", uint_field(c.eval.batch_size));
    add("eval", "robustness_seed", "seed for the sampled transform parameters",
        uint_field(c.eval.robustness_seed));
    return out;
}

void apply_override(YAML::Node& root, const std::string& text) {
    const auto eq = text.find('=');
    const auto dot = text.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("override '" + text + "' is not of the form section.key=value");
    }
    const auto section = text.substr(0, dot);
    const auto key = text.substr(dot + 1, eq - dot - 1);
    YAML::Node value;
    try {
        value = YAML::Load(text.substr(eq + 1));
    } catch (const YAML::Exception& e) {
        throw ConfigError("override '" + text + "': " + e.msg);
    }
    if (!root[section]) root[section] = YAML::Node(YAML::NodeType::Map);
    root[section][key] = value;
}

std::string render(RunConfig& c, bool comments) {
    std::ostringstream out;
    std::string section;
    for (const auto& f : fields(c)) {
        if (f.section != section) {
            if (!section.empty()) out << "\n";
            section = f.section;
            out << section << ":\n";
        }
        if (comments && !f.comment.empty()) out << "  # " << f.comment << "\n";
        out << "  " << f.key << ": " << f.write() << "\n";
    }
    return out.str();
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    for (double r : data.split_ratios) {
        if (!(r >= 0)) throw ConfigError("data.split_ratios must be non-negative");
    }
    if (!(data.split_ratios[0] + data.split_ratios[1] + data.split_ratios[2] > 0)) {
        throw ConfigError("data.split_ratios must not all be zero");
    }
    if (eval.split != "train" && eval.split != "val" && eval.split != "test") {
        throw ConfigError("eval.split must be train, val or test, got '" + eval.split + "'");
    }
    if (!(eval.threshold >= 0 && eval.threshold <= 1)) throw ConfigError("eval.threshold must lie in [0, 1]");
    if (eval.batch_size == 0) throw ConfigError("eval.batch_size must be positive");
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    YAML::Node root(YAML::NodeType::Map);
    if (!path.empty()) {
        if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
        try {
            root = YAML::LoadFile(path);
        } catch (const YAML::Exception& e) {
            throw ConfigError(path + ": " + e.what());
        }
        if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
        if (!root.IsMap()) throw ConfigError(path + ": top level must be a mapping");
    }
    for (const auto& o : overrides) apply_override(root, o);

    RunConfig cfg;
    const auto table = fields(cfg);
    for (const auto& section : root) {
        const auto name = section.first.as<std::string>();
        const bool known = std::any_of(table.begin(), table.end(), [&](const Field& f) { return f.section == name; });
        if (!known) throw ConfigError("unknown config section '" + name + "'");
        if (section.second.IsNull()) continue;
        if (!section.second.IsMap()) throw ConfigError("config section '" + name + "' must be a mapping");
        for (const auto& entry : section.second) {
            const auto key = entry.first.as<std::string>();
            auto f = std::find_if(table.begin(), table.end(),
                                  [&](const Field& x) { return x.section == name && x.key == key; });
            if (f == table.end()) throw ConfigError("unknown config key '" + name + "." + key + "'");
            f->read(entry.second, name + "." + key);
        }
    }
    cfg.validate();
    return cfg;
}

std::string default_config_text() {
    RunConfig c;
    return "# dsnet run configuration. Command-line flags override these values.\n\n" + render(c, true);
}

std::string resolved_config_text(const RunConfig& cfg) {
    RunConfig copy = cfg;
    return render(copy, false);
}

std::string resolve_output_dir(const std::string& dir) {
    const char* root = std::getenv("DSNET_OUTPUT_ROOT");
    if (root == nullptr || *root == '\0' || std::filesystem::path(dir).is_absolute()) return dir;
    return (std::filesystem::path(root) / dir).string();
}

} // namespace dsnet::cli
