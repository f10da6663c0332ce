#include "cbd/run_config.hpp"

#include "cbd/errors.hpp"
#include "cbd/rng.hpp"

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cbd {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a number, got '" + value + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw config_error("config: key '" + key + "' expects a non-negative integer, got '" +
                           value + "'");
    }
    return v;
}

std::size_t to_count(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(to_u64(key, value));
}

std::vector<std::string> to_string_list(const std::string& raw) {
    std::string body = trim(raw);
    if (!body.empty() && body.front() == '[') {
        if (body.back() != ']') throw config_error("config: unterminated list '" + raw + "'");
        body = body.substr(1, body.size() - 2);
    }
    std::vector<std::string> out;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = unquote(trim(item));
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

LongTailProfile& ensure_profile(RunConfig& cfg) {
    if (!cfg.profile) cfg.profile.emplace();
    return *cfg.profile;
}

ShotSplit& ensure_split(RunConfig& cfg) {
    if (!cfg.split_thresholds) cfg.split_thresholds.emplace();
    return *cfg.split_thresholds;
}

// Single schema entry point used by both the file parser and --set
// overrides. `key` is section-qualified for block keys.
void assign(RunConfig& cfg, const std::string& key, const std::string& raw_value) {
    const std::string value = unquote(trim(raw_value));

    if (key == "method") {
        cfg.method = method_from_name(value);
    } else if (key == "seed") {
        cfg.seed = to_u64(key, value);
    } else if (key == "epochs_stage1") {
        cfg.epochs_stage1 = to_count(key, value);
    } else if (key == "epochs_stage2") {
        cfg.epochs_stage2 = to_count(key, value);
    } else if (key == "batch_size") {
        cfg.batch_size = to_count(key, value);
    } else if (key == "lr0") {
        cfg.lr0 = to_double(key, value);
    } else if (key == "momentum") {
        cfg.momentum = to_double(key, value);
    } else if (key == "alpha") {
        cfg.alpha = to_double(key, value);
    } else if (key == "beta") {
        cfg.beta = to_double(key, value);
    } else if (key == "temperature") {
        cfg.temperature = to_double(key, value);
    } else if (key == "gamma") {
        cfg.gamma = to_double(key, value);
    } else if (key == "K") {
        cfg.teacher_count = to_count(key, value);
    } else if (key == "teacher_types") {
        std::vector<TeacherType> types;
        for (const auto& name : to_string_list(raw_value)) {
            types.push_back(teacher_type_from_name(name));
        }
        cfg.teacher_types = std::move(types);
    } else if (key == "augment_sigma") {
        cfg.augment_sigma = to_double(key, value);
    } else if (key == "dataset_path") {
        cfg.dataset_path = value;
    } else if (key == "profile.classes") {
        ensure_profile(cfg).num_classes = to_count(key, value);
    } else if (key == "profile.head") {
        ensure_profile(cfg).head_count = to_count(key, value);
    } else if (key == "profile.tail") {
        ensure_profile(cfg).tail_count = to_count(key, value);
    } else if (key == "profile.decay") {
        if (value == "exponential") {
            ensure_profile(cfg).decay = DecayKind::exponential;
        } else if (value == "zipf") {
            ensure_profile(cfg).decay = DecayKind::zipf;
        } else {
            throw config_error("config: profile.decay must be exponential or zipf, got '" + value +
                               "'");
        }
    } else if (key == "profile.zipf_s") {
        ensure_profile(cfg).zipf_s = to_double(key, value);
    } else if (key == "profile.feature_dim") {
        ensure_profile(cfg).feature_dim = to_count(key, value);
    } else if (key == "profile.separation") {
        ensure_profile(cfg).class_separation = to_double(key, value);
    } else if (key == "profile.noise") {
        ensure_profile(cfg).noise_sigma = to_double(key, value);
    } else if (key == "profile.test_per_class") {
        ensure_profile(cfg).test_per_class = to_count(key, value);
    } else if (key == "profile.seed") {
        ensure_profile(cfg).seed = to_u64(key, value);
    } else if (key == "split_thresholds.many") {
        ensure_split(cfg).many_threshold = to_count(key, value);
    } else if (key == "split_thresholds.few") {
        ensure_split(cfg).few_threshold = to_count(key, value);
    } else {
        throw config_error("config: unknown key '" + key + "'");
    }
}

} // namespace

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']') {
                throw config_error("config: malformed section header at " + origin + ":" +
                                   std::to_string(line_no));
            }
            section = trim(stripped.substr(1, stripped.size() - 2));
            if (section != "profile" && section != "split_thresholds") {
                throw config_error("config: unknown section '" + section + "'");
            }
            continue;
        }
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw config_error("config: expected 'key = value' at " + origin + ":" +
                               std::to_string(line_no));
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw config_error("config: empty key at " + origin + ":" + std::to_string(line_no));
        }
        assign(cfg, section.empty() ? key : section + "." + key, value);
    }
    return cfg;
}

RunConfig parse_run_config_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("config: cannot open '" + path.string() + "' for reading");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config_text(buffer.str(), path.string());
}

void apply_override(RunConfig& cfg, const std::string& expr) {
    const std::size_t eq = expr.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw config_error("config: override must be key=value, got '" + expr + "'");
    }
    assign(cfg, trim(expr.substr(0, eq)), trim(expr.substr(eq + 1)));
}

void RunConfig::validate() const {
    if (epochs_stage1 < 1) throw config_error("config: epochs_stage1 must be >= 1");
    if (epochs_stage2 && *epochs_stage2 < 1) throw config_error("config: epochs_stage2 must be >= 1");
    if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw config_error("config: lr0 must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw config_error("config: momentum must be in [0, 1)");
    if (alpha < 0.0 || alpha > 1.0) throw config_error("config: alpha must be in [0, 1]");
    if (!(beta > 0.0)) throw config_error("config: beta must be positive");
    if (!(temperature > 0.0)) throw config_error("config: temperature must be positive");
    if (!(gamma > 0.0)) throw config_error("config: gamma must be positive");
    if (augment_sigma < 0.0) throw config_error("config: augment_sigma must be >= 0");
    if (dataset_path && profile) {
        throw config_error("config: dataset_path and [profile] are mutually exclusive");
    }
    if (!dataset_path && !profile) {
        throw config_error("config: one of dataset_path or [profile] is required");
    }
    if (profile) profile->validate();
    if (teacher_count && *teacher_count < 1) throw config_error("config: K must be >= 1");
    if (teacher_types && teacher_count && teacher_types->size() != *teacher_count) {
        throw config_error("config: teacher_types length " +
                           std::to_string(teacher_types->size()) + " disagrees with K=" +
                           std::to_string(*teacher_count));
    }
    if (split_thresholds && split_thresholds->few_threshold > split_thresholds->many_threshold) {
        throw config_error("config: split_thresholds.few must not exceed split_thresholds.many");
    }
    const std::size_t k = resolved_teacher_count();
    switch (method) {
        case Method::crt:
        case Method::finetune:
        case Method::cbd:
            if (k != 1) {
                throw config_error("config: method '" + std::string(method_name(method)) +
                                   "' uses exactly 1 teacher, got K=" + std::to_string(k));
            }
            break;
        case Method::teacher_ensemble:
            if (k < 2) throw config_error("config: teacher_ensemble requires K >= 2");
            break;
        default:
            break;
    }
}

std::size_t RunConfig::resolved_teacher_count() const {
    if (teacher_count) return *teacher_count;
    if (teacher_types) return teacher_types->size();
    switch (method) {
        case Method::cbd_k: return 4;
        case Method::teacher_ensemble: return 2;
        default: return 1;
    }
}

std::vector<TeacherType> RunConfig::resolved_teacher_types() const {
    if (method == Method::instance || method == Method::class_balanced) return {};
    if (teacher_types) return *teacher_types;
    const std::size_t k = resolved_teacher_count();
    std::vector<TeacherType> types;
    types.reserve(k);
    const std::size_t standard = (k + 1) / 2;
    for (std::size_t i = 0; i < k; ++i) {
        types.push_back(i < standard ? TeacherType::standard : TeacherType::data_aug);
    }
    return types;
}

std::size_t RunConfig::resolved_epochs_stage2() const {
    if (epochs_stage2) return *epochs_stage2;
    return method == Method::finetune ? 10 : epochs_stage1;
}

ShotSplit RunConfig::resolved_split() const {
    if (split_thresholds) return *split_thresholds;
    if (profile) {
        const double head = static_cast<double>(profile->head_count);
        ShotSplit s;
        s.many_threshold = static_cast<std::size_t>(std::llround(0.6 * head));
        s.few_threshold = static_cast<std::size_t>(std::llround(0.2 * head));
        return s;
    }
    return ShotSplit{};
}

StagePlan RunConfig::to_plan() const {
    validate();
    StagePlan plan;
    plan.method = method;
    plan.seed = seed;
    plan.gamma = gamma;
    plan.epochs_stage1 = epochs_stage1;
    plan.epochs_stage2 = resolved_epochs_stage2();
    plan.batch_size = batch_size;
    plan.lr0 = lr0;
    plan.momentum = momentum;
    plan.distill.alpha = alpha;
    plan.distill.beta = beta;
    plan.distill.temperature = temperature;
    plan.teacher_types = resolved_teacher_types();
    plan.distill.teacher_count = std::max<std::size_t>(1, plan.teacher_types.size());
    plan.augment_sigma = augment_sigma;
    if (profile) plan.extractor_widths.front() = profile->feature_dim;
    return plan;
}

std::string RunConfig::canonical_json() const {
    nlohmann::json j;
    j["method"] = method_name(method);
    j["seed"] = seed;
    j["epochs_stage1"] = epochs_stage1;
    j["epochs_stage2"] = resolved_epochs_stage2();
    j["batch_size"] = batch_size;
    j["lr0"] = lr0;
    j["momentum"] = momentum;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["temperature"] = temperature;
    j["gamma"] = gamma;
    j["K"] = resolved_teacher_count();
    nlohmann::json types = nlohmann::json::array();
    for (TeacherType t : resolved_teacher_types()) types.push_back(teacher_type_name(t));
    j["teacher_types"] = types;
    j["augment_sigma"] = augment_sigma;
    if (dataset_path) {
        j["dataset_path"] = *dataset_path;
    } else if (profile) {
        j["profile"] = {{"classes", profile->num_classes},
                        {"head", profile->head_count},
                        {"tail", profile->tail_count},
                        {"decay", profile->decay == DecayKind::exponential ? "exponential" : "zipf"},
                        {"zipf_s", profile->zipf_s},
                        {"feature_dim", profile->feature_dim},
                        {"separation", profile->class_separation},
                        {"noise", profile->noise_sigma},
                        {"test_per_class", profile->test_per_class},
                        {"seed", profile->seed}};
    }
    const ShotSplit split = resolved_split();
    j["split_thresholds"] = {{"many", split.many_threshold}, {"few", split.few_threshold}};
    j["rng"] = kRngAlgorithm;
    return j.dump();
}

SynthesizedData resolve_dataset(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.profile) return synthesize(*cfg.profile);
    const std::filesystem::path dir(*cfg.dataset_path);
    SynthesizedData data;
    data.train = load_dataset(dir / "train.csv");
    data.test = load_dataset(dir / "test.csv", data.train.num_classes());
    return data;
}

} // namespace cbd
