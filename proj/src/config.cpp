#include "ordiformer/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <functional>
#include <sstream>

namespace ordiformer {

namespace {

std::string fmt(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string fmt(float v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as a number");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "off" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + raw + "'");
}

std::vector<std::string> split_list(const std::string& raw) {
    std::vector<std::string> out;
    std::istringstream in(raw);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
    std::vector<T> out;
    for (const auto& item : split_list(raw)) out.push_back(parse_number<T>(key, item));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>) {
            out += fmt(values[i]);
        } else {
            out += std::to_string(values[i]);
        }
    }
    return out;
}

template <typename Fn>
auto wrap(const std::string& key, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        if (what.find(key) != std::string::npos) throw;
        throw ConfigError("config key '" + key + "': " + what);
    }
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define OF_INT(KEY, EXPR)                                                                    \
    Field {                                                                                  \
        KEY, [](const RunConfig& c) { return std::to_string(c.EXPR); },                      \
            [](RunConfig& c, const std::string& v) {                                         \
                c.EXPR = parse_number<std::remove_reference_t<decltype(c.EXPR)>>(KEY, v);    \
            }                                                                                \
    }
#define OF_REAL(KEY, EXPR)                                                                   \
    Field {                                                                                  \
        KEY, [](const RunConfig& c) { return fmt(c.EXPR); },                                 \
            [](RunConfig& c, const std::string& v) {                                         \
                c.EXPR = parse_number<std::remove_reference_t<decltype(c.EXPR)>>(KEY, v);    \
            }                                                                                \
    }
#define OF_BOOL(KEY, EXPR)                                                                   \
    Field {                                                                                  \
        KEY, [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); },      \
            [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(KEY, v); }          \
    }
#define OF_ENUM(KEY, EXPR, PARSE)                                                            \
    Field {                                                                                  \
        KEY, [](const RunConfig& c) { return to_string(c.EXPR); },                           \
            [](RunConfig& c, const std::string& v) { c.EXPR = wrap(KEY, [&] { return PARSE(trim(v)); }); } \
    }

std::vector<double> parse_proportions(const std::string& raw, int num_grades) {
    const std::string s = trim(raw);
    if (s == "uniform") return uniform_preset(num_grades);
    if (s == "imbalanced") return imbalanced_preset();
    return parse_list<double>("synth.class_proportions", s);
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        OF_INT("synth.height", synth.height),
        OF_INT("synth.width", synth.width),
        OF_INT("synth.num_grades", synth.num_grades),
        OF_INT("synth.gap_base", synth.gap_base),
        OF_INT("synth.gap_step", synth.gap_step),
        OF_INT("synth.gap_jitter", synth.gap_jitter),
        OF_INT("synth.blob_count_per_grade", synth.blob_count_per_grade),
        OF_REAL("synth.noise_sigma", synth.noise_sigma),
        Field{"synth.class_proportions", [](const RunConfig& c) { return join(c.synth.class_proportions); },
              [](RunConfig& c, const std::string& v) {
                  c.synth.class_proportions = parse_proportions(v, c.synth.num_grades);
              }},
        OF_INT("synth.n_samples", synth.n_samples),
        OF_INT("synth.seed", synth.seed),

        OF_ENUM("model.encoder", train.model.encoder, parse_encoder_kind),
        OF_INT("model.image_height", train.model.mlp.image_height),
        OF_INT("model.image_width", train.model.mlp.image_width),
        Field{"model.mlp_widths", [](const RunConfig& c) { return join(c.train.model.mlp.widths); },
              [](RunConfig& c, const std::string& v) { c.train.model.mlp.widths = parse_list<int>("model.mlp_widths", v); }},
        OF_INT("model.patch_size", train.model.patch.patch_size),
        OF_INT("model.embed_dim", train.model.patch.embed_dim),
        OF_INT("model.num_heads", train.model.patch.num_heads),
        OF_INT("model.num_layers", train.model.patch.num_layers),
        OF_INT("model.mlp_ratio", train.model.patch.mlp_ratio),
        OF_ENUM("model.head", train.model.head, parse_head_mode),
        OF_INT("model.num_grades", train.model.num_grades),
        OF_REAL("model.bias_spacing", train.model.bias_spacing),

        OF_REAL("train.lr", train.lr),
        OF_REAL("train.weight_decay", train.weight_decay),
        OF_INT("train.batch_size", train.batch_size),
        OF_INT("train.t_max", train.t_max),
        OF_INT("train.max_epochs", train.max_epochs),
        OF_INT("train.patience", train.patience),
        OF_INT("train.seed", train.seed),
        OF_REAL("train.alpha", train.alpha),
        Field{"train.emphasised_grades", [](const RunConfig& c) { return join(c.train.emphasised_grades); },
              [](RunConfig& c, const std::string& v) {
                  c.train.emphasised_grades = parse_list<int>("train.emphasised_grades", v);
              }},
        OF_BOOL("train.pos_weighting", train.pos_weighting),
        OF_ENUM("train.early_stop", train.early_stop, parse_early_stop_metric),
        OF_REAL("train.val_tau", train.val_tau),

        OF_INT("split.folds", folds),
        OF_ENUM("split.regime", regime, parse_split_regime),

        OF_BOOL("augment.enabled", train.augment),
        OF_REAL("augment.crop_scale_min", train.augmentation.crop_scale_min),
        OF_REAL("augment.crop_scale_max", train.augmentation.crop_scale_max),
        OF_REAL("augment.flip_prob", train.augmentation.flip_prob),
        OF_REAL("augment.rotation_deg", train.augmentation.rotation_deg),

        OF_ENUM("align.mode", train.align.mode, parse_align_mode),
        OF_REAL("align.lambda", train.align.lambda),
        OF_REAL("align.mu", train.align.mu),
        OF_REAL("align.temperature", train.align.temperature),
        OF_ENUM("align.prompt_source", prompt_source, parse_prompt_source),
        Field{"align.prompt_file", [](const RunConfig& c) { return c.prompt_file; },
              [](RunConfig& c, const std::string& v) { c.prompt_file = trim(v); }},
        OF_INT("align.prompt_seed", prompt_seed),
        OF_INT("align.prompt_dim", prompt_dim),

        Field{"tta.views", [](const RunConfig& c) {
                  std::string out;
                  for (const auto& n : c.tta.names()) out += (out.empty() ? "" : ",") + n;
                  return out;
              },
              [](RunConfig& c, const std::string& v) {
                  TtaPolicy p;
                  for (const auto& item : split_list(v)) p.views.push_back(wrap("tta.views", [&] { return parse_tta_view(item); }));
                  c.tta = p;
              }},

        OF_REAL("calibrate.tau_min", tau_grid.lo),
        OF_REAL("calibrate.tau_max", tau_grid.hi),
        OF_REAL("calibrate.tau_step", tau_grid.step),

        OF_INT("eval.bootstrap_samples", bootstrap_samples),
        OF_REAL("eval.bootstrap_level", bootstrap_level),
        OF_INT("eval.bootstrap_seed", bootstrap_seed),
    };
    return table;
}

#undef OF_INT
#undef OF_REAL
#undef OF_BOOL
#undef OF_ENUM

}  // namespace

RunConfig::RunConfig() { sync(); }

void RunConfig::sync() {
    train.model.patch.image_height = train.model.mlp.image_height;
    train.model.patch.image_width = train.model.mlp.image_width;
    train.model.projection_dim = train.align.mode == AlignMode::off ? 0 : prompt_dim;
    // two folds cannot hold separate val and test parts
    if (folds == 2) regime = SplitRegime::train_val;
}

void RunConfig::validate() const {
    synth.validate();
    train.validate();
    if (folds < 2) throw ConfigError("split.folds must be >= 2");
    if (prompt_dim < 1) throw ConfigError("align.prompt_dim must be >= 1");
    if (prompt_source == PromptSource::file && prompt_file.empty() && train.align.mode != AlignMode::off) {
        throw ConfigError("align.prompt_file is required when align.prompt_source = file");
    }
    tta.validate();
    tau_grid.validate();
    if (bootstrap_samples < 1) throw ConfigError("eval.bootstrap_samples must be >= 1");
    if (!(bootstrap_level > 0.0 && bootstrap_level < 1.0)) throw ConfigError("eval.bootstrap_level must lie in (0, 1)");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

ConfigMap to_config_map(const RunConfig& config) {
    ConfigMap out;
    for (const auto& f : fields()) out[f.key] = f.get(config);
    return out;
}

RunConfig run_config_from_map(const ConfigMap& values) {
    RunConfig c;
    // num_grades first so that named proportion presets expand to the right length
    const auto& table = fields();
    auto apply = [&](const Field& f) {
        if (auto it = values.find(f.key); it != values.end()) f.set(c, it->second);
    };
    for (const auto& [key, value] : values) {
        const bool known =
            std::any_of(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (!known) throw ConfigError("unknown config key '" + key + "'");
    }
    for (const auto& f : table) {
        if (f.key == "synth.num_grades") apply(f);
    }
    for (const auto& f : table) {
        if (f.key != "synth.num_grades") apply(f);
    }
    c.sync();
    c.validate();
    return c;
}

ConfigMap read_config_map(const std::filesystem::path& path) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::ini_parser::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("cannot read config " + path.string() + ": " + e.message() + " (line " +
                          std::to_string(e.line()) + ")");
    }
    ConfigMap values;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config key '" + section + "' must live inside a [section]");
        for (const auto& [key, value] : body) values[section + "." + key] = value.data();
    }
    return values;
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_map(read_config_map(path)); }

std::string to_ini(const RunConfig& config) {
    std::ostringstream os;
    std::string current;
    for (const auto& [key, value] : to_config_map(config)) {
        const auto dot = key.find('.');
        const std::string section = key.substr(0, dot);
        if (section != current) {
            os << (current.empty() ? "" : "\n") << '[' << section << "]\n";
            current = section;
        }
        os << key.substr(dot + 1) << " = " << value << '\n';
    }
    return os.str();
}

}  // namespace ordiformer
