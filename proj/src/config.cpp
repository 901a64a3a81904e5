#include "ssmkit/config.hpp"

#include "ssmkit/dataset_io.hpp"
#include "ssmkit/error.hpp"

#include <cstdlib>
#include <set>

namespace ssm::config {

namespace {

json box_defaults(double half_width) {
    return {{"half_width", half_width}, {"velocity_half_width", nullptr}};
}

// Fields that take either a scalar or a per-coordinate array.
bool accepts_array_for_number(const std::string& path) {
    static const std::set<std::string> leaves = {"half_width", "Q", "Q_f", "R_u", "R_delta", "u_min", "u_max"};
    const auto dot = path.rfind('.');
    return leaves.count(dot == std::string::npos ? path : path.substr(dot + 1)) > 0;
}

const json& schema() {
    static const json doc = default_document();
    return doc;
}

const json* schema_at(const std::string& path) {
    const json* node = &schema();
    std::size_t start = 0;
    while (start <= path.size()) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) return nullptr;
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return node;
}

std::string kind(const json& v) {
    if (v.is_null()) return "null";
    if (v.is_boolean()) return "boolean";
    if (v.is_number_integer()) return "integer";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    return "object";
}

bool all_numbers(const json& a) {
    for (const auto& e : a)
        if (!e.is_number()) return false;
    return true;
}

void check_leaf(const json& expected, const json& given, const std::string& path) {
    auto fail = [&](const std::string& want) {
        throw ConfigError(path + ": expected " + want + ", got " + kind(given));
    };
    if (expected.is_null()) {
        if (!given.is_null() && !given.is_number()) fail("number or null");
        return;
    }
    if (expected.is_boolean()) {
        if (!given.is_boolean()) fail("boolean");
    } else if (expected.is_number_integer()) {
        if (!given.is_number_integer()) fail("integer");
    } else if (expected.is_number()) {
        if (given.is_number()) return;
        if (accepts_array_for_number(path) && given.is_array() && !given.empty() && all_numbers(given)) return;
        fail(accepts_array_for_number(path) ? "number or non-empty numeric array" : "number");
    } else if (expected.is_string()) {
        if (!given.is_string()) fail("string");
    } else if (expected.is_array()) {
        if (!given.is_array()) fail("array");
    }
}

}  // namespace

json default_document() {
    return {
        {"system",
         {{"name", "slow-fast"},
          {"slow_fast", {{"lambda", 0.1}, {"epsilon", 0.1}, {"alpha", 0.2}, {"beta", 0.2}}},
          {"chain",
           {{"masses", 30},
            {"spatial_dim", 2},
            {"stiffness", 10000.0},
            {"cubic_stiffness", 100000.0},
            {"damping", 200.0},
            {"input_gain", 10.0},
            {"actuated", json::array({14, 29})},
            {"observed_masses", 3},
            {"observe_full_state", false}}},
          {"dt", 0.01},
          {"substeps", 1}}},
        {"data",
         {{"decay", {{"trajectories", 10}, {"t_span", 50.0}, {"seed", 1}, {"box", box_defaults(0.5)}}},
          {"controlled",
           {{"trajectories", 0},
            {"t_span", 10.0},
            {"seed", 3},
            {"amplitude_min", 0.0},
            {"amplitude_max", 1.0},
            {"frequency_min", 0.5},
            {"frequency_max", 5.0},
            {"harmonics", 1},
            {"box", box_defaults(0.0)}}},
          {"test", {{"trajectories", 10}, {"t_span", 20.0}, {"seed", 2}, {"box", box_defaults(0.5)}}}}},
        {"curation",
         {{"n_transient", 50},
          {"ssm_dim", 1},
          {"delays", 0},
          {"delay_lag", 1},
          {"tail_fraction", 0.1},
          {"full_state_exemption", false},
          {"equilibrium", "estimate"}}},
        {"learning",
         {{"modes", json::array({"orthogonal", "oblique"})},
          {"n_r", 3},
          {"n_w", 3},
          {"n_r_transient", 0},
          {"ridge", 0.0},
          {"optimizer",
           {{"max_iters", 5000},
            {"rel_tol", 1e-8},
            {"armijo_slope", 1e-4},
            {"shrink", 0.5},
            {"max_backtracks", 60},
            {"initial_step", 1.0},
            {"gradient_mode", "alternating"}}}}},
        {"evaluate",
         {{"outputs", json::array()},
          {"traces", true},
          {"forced",
           {{"enabled", false},
            {"trajectories", 10},
            {"t_span", 20.0},
            {"amplitude", 1.0},
            {"time_constant", 1.0},
            {"seed", 4},
            {"box", box_defaults(0.5)}}}}},
        {"mpc",
         {{"task", "circle"},
          {"duration", 5.0},
          {"radius", 0.05},
          {"period", 5.0},
          {"reference_csv", ""},
          {"outputs", json::array({0, 1})},
          {"Q", 1e4},
          {"Q_f", 1e5},
          {"R_u", 1e-2},
          {"R_delta", 1e-2},
          {"u_min", -5.0},
          {"u_max", 5.0},
          {"horizon", 8},
          {"stride", 2},
          {"dt_mpc", 0.05},
          {"scp_iters", 3},
          {"qp_tol", 1e-8},
          {"qp_max_iters", 5000},
          {"rk4_substeps", 1},
          {"run_tasks", json::array()}}},
        {"io", {{"output_dir", "ssmkit-out"}, {"record_timing", false}}},
    };
}

json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

void merge_into(json& base, const json& overrides, const std::string& path) {
    if (!overrides.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
    for (const auto& [key, value] : overrides.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        const json* expected = schema_at(full);
        if (!expected) throw ConfigError(full + ": unknown key");
        if (expected->is_object()) {
            if (!value.is_object()) throw ConfigError(full + ": expected object, got " + kind(value));
            merge_into(base[key], value, full);
        } else {
            check_leaf(*expected, value, full);
            base[key] = value;
        }
    }
}

void apply_set(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    std::vector<std::string> keys;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        keys.push_back(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (keys.back().empty()) throw ConfigError("--set: malformed path '" + path + "'");
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json patch = value;
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) patch = json::object({{*it, patch}});
    merge_into(doc, patch);
}

std::filesystem::path preset_directory() {
    if (const char* env = std::getenv("SSMKIT_PRESET_DIR")) return env;
    return SSMKIT_PRESET_DIR;
}

json load_preset(const std::string& name) {
    const auto path = preset_directory() / (name + ".json");
    if (!std::filesystem::exists(path)) throw ConfigError("unknown preset '" + name + "' (looked for " + path.string() + ")");
    return parse_json_text(io::read_text(path), path.string());
}

PipelineConfig resolve(const std::string& preset, const std::filesystem::path& config_file,
                       const std::vector<std::string>& sets) {
    json doc = default_document();
    if (!preset.empty()) merge_into(doc, load_preset(preset));
    if (!config_file.empty()) {
        if (!std::filesystem::exists(config_file)) throw IoError("config file not found: " + config_file.string());
        merge_into(doc, parse_json_text(io::read_text(config_file), config_file.string()));
    }
    for (const auto& s : sets) apply_set(doc, s);
    return from_document(doc);
}

namespace {

// Typed access into an already merged document; paths are used for messages only.
class Reader {
public:
    explicit Reader(const json& doc) : doc_(doc) {}

    const json& at(const std::string& path) const {
        const json* node = &doc_;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!node->is_object() || !node->contains(key)) throw ConfigError(path + ": missing");
            node = &(*node)[key];
            if (dot == std::string::npos) return *node;
            start = dot + 1;
        }
    }

    double num(const std::string& path) const {
        const json& v = at(path);
        if (!v.is_number()) throw ConfigError(path + ": expected number");
        return v.get<double>();
    }
    double positive(const std::string& path) const {
        const double v = num(path);
        if (!(v > 0.0)) throw ConfigError(path + ": must be positive");
        return v;
    }
    double nonneg(const std::string& path) const {
        const double v = num(path);
        if (!(v >= 0.0)) throw ConfigError(path + ": must be non-negative");
        return v;
    }
    int integer(const std::string& path, int lo) const {
        const json& v = at(path);
        if (!v.is_number_integer()) throw ConfigError(path + ": expected integer");
        const auto x = v.get<long long>();
        if (x < lo) throw ConfigError(path + ": must be at least " + std::to_string(lo));
        return static_cast<int>(x);
    }
    std::uint64_t seed(const std::string& path) const {
        const json& v = at(path);
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(path + ": expected a non-negative integer");
        return v.get<std::uint64_t>();
    }
    bool flag(const std::string& path) const {
        const json& v = at(path);
        if (!v.is_boolean()) throw ConfigError(path + ": expected boolean");
        return v.get<bool>();
    }
    std::string str(const std::string& path) const {
        const json& v = at(path);
        if (!v.is_string()) throw ConfigError(path + ": expected string");
        return v.get<std::string>();
    }
    std::vector<double> numbers(const std::string& path) const {
        const json& v = at(path);
        if (v.is_number()) return {v.get<double>()};
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError(path + ": expected numeric entries");
            out.push_back(e.get<double>());
        }
        if (out.empty()) throw ConfigError(path + ": must not be empty");
        return out;
    }
    std::vector<int> indices(const std::string& path) const {
        std::vector<int> out;
        for (const auto& e : at(path)) {
            if (!e.is_number_integer() || e.get<long long>() < 0)
                throw ConfigError(path + ": expected non-negative integer entries");
            out.push_back(e.get<int>());
        }
        return out;
    }
    IcBox box(const std::string& path) const {
        IcBox b;
        b.half_width = numbers(path + ".half_width");
        for (double w : b.half_width)
            if (!(w >= 0.0)) throw ConfigError(path + ".half_width: entries must be non-negative");
        const json& v = at(path + ".velocity_half_width");
        if (!v.is_null()) {
            if (!(v.get<double>() >= 0.0)) throw ConfigError(path + ".velocity_half_width: must be non-negative");
            b.velocity_half_width = v.get<double>();
        }
        return b;
    }

private:
    const json& doc_;
};

DecayBlock read_decay(const Reader& r, const std::string& path) {
    return {r.integer(path + ".trajectories", 0), r.positive(path + ".t_span"), r.seed(path + ".seed"), r.box(path + ".box")};
}

}  // namespace

PipelineConfig from_document(const json& doc) {
    // Re-run the schema check so documents built by hand are held to the same rules.
    json merged = default_document();
    merge_into(merged, doc);

    const Reader r(merged);
    PipelineConfig c;
    c.resolved = merged;

    auto& s = c.system;
    s.name = r.str("system.name");
    if (s.name != "slow-fast" && s.name != "chain")
        throw ConfigError("system.name: expected 'slow-fast' or 'chain', got '" + s.name + "'");
    s.slow_fast = {r.positive("system.slow_fast.lambda"), r.positive("system.slow_fast.epsilon"),
                   r.num("system.slow_fast.alpha"), r.num("system.slow_fast.beta")};
    s.chain.masses = r.integer("system.chain.masses", 1);
    s.chain.spatial_dim = r.integer("system.chain.spatial_dim", 1);
    if (s.chain.spatial_dim > 2) throw ConfigError("system.chain.spatial_dim: must be 1 or 2");
    s.chain.stiffness = r.positive("system.chain.stiffness");
    s.chain.cubic_stiffness = r.nonneg("system.chain.cubic_stiffness");
    s.chain.damping = r.nonneg("system.chain.damping");
    s.chain.input_gain = r.num("system.chain.input_gain");
    s.chain.actuated = r.indices("system.chain.actuated");
    for (int a : s.chain.actuated)
        if (a >= s.chain.masses) throw ConfigError("system.chain.actuated: index " + std::to_string(a) + " exceeds the chain");
    s.chain.observed_masses = r.integer("system.chain.observed_masses", 1);
    if (s.chain.observed_masses > s.chain.masses)
        throw ConfigError("system.chain.observed_masses: more than the number of masses");
    s.chain.observe_full_state = r.flag("system.chain.observe_full_state");
    s.dt = r.positive("system.dt");
    s.substeps = r.integer("system.substeps", 1);

    c.data.decay = read_decay(r, "data.decay");
    c.data.test = read_decay(r, "data.test");
    auto& ctl = c.data.controlled;
    ctl.trajectories = r.integer("data.controlled.trajectories", 0);
    ctl.t_span = r.positive("data.controlled.t_span");
    ctl.seed = r.seed("data.controlled.seed");
    ctl.protocol.amplitude_min = r.nonneg("data.controlled.amplitude_min");
    ctl.protocol.amplitude_max = r.nonneg("data.controlled.amplitude_max");
    if (ctl.protocol.amplitude_max < ctl.protocol.amplitude_min)
        throw ConfigError("data.controlled.amplitude_max: below amplitude_min");
    ctl.protocol.frequency_min = r.positive("data.controlled.frequency_min");
    ctl.protocol.frequency_max = r.positive("data.controlled.frequency_max");
    if (ctl.protocol.frequency_max < ctl.protocol.frequency_min)
        throw ConfigError("data.controlled.frequency_max: below frequency_min");
    ctl.protocol.harmonics = r.integer("data.controlled.harmonics", 1);
    ctl.box = r.box("data.controlled.box");
    if (c.data.decay.trajectories < 1) throw ConfigError("data.decay.trajectories: at least one decay is required");

    auto& cu = c.curation;
    cu.n_transient = r.integer("curation.n_transient", 0);
    cu.ssm_dim = r.integer("curation.ssm_dim", 1);
    cu.delays = r.integer("curation.delays", 0);
    cu.delay_lag = r.integer("curation.delay_lag", 1);
    cu.tail_fraction = r.positive("curation.tail_fraction");
    if (cu.tail_fraction > 1.0) throw ConfigError("curation.tail_fraction: must lie in (0, 1]");
    cu.full_state_exemption = r.flag("curation.full_state_exemption");
    cu.equilibrium = r.str("curation.equilibrium");
    if (cu.equilibrium != "estimate" && cu.equilibrium != "system")
        throw ConfigError("curation.equilibrium: expected 'estimate' or 'system'");

    auto& le = c.learning;
    for (const auto& m : r.at("learning.modes")) {
        if (!m.is_string()) throw ConfigError("learning.modes: expected strings");
        try {
            le.modes.push_back(learning::parse_projection_mode(m.get<std::string>()));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("learning.modes: ") + e.what());
        }
    }
    if (le.modes.empty()) throw ConfigError("learning.modes: must not be empty");
    le.fit.n_r = r.integer("learning.n_r", 1);
    le.fit.n_w = r.integer("learning.n_w", 1);
    le.fit.n_r_transient = r.integer("learning.n_r_transient", 0);
    le.fit.ridge = r.nonneg("learning.ridge");
    auto& op = le.fit.oblique;
    op.max_iters = r.integer("learning.optimizer.max_iters", 0);
    op.rel_tol = r.nonneg("learning.optimizer.rel_tol");
    op.armijo_slope = r.positive("learning.optimizer.armijo_slope");
    if (op.armijo_slope >= 1.0) throw ConfigError("learning.optimizer.armijo_slope: must lie in (0, 1)");
    op.shrink = r.positive("learning.optimizer.shrink");
    if (op.shrink >= 1.0) throw ConfigError("learning.optimizer.shrink: must lie in (0, 1)");
    op.max_backtracks = r.integer("learning.optimizer.max_backtracks", 1);
    op.initial_step = r.positive("learning.optimizer.initial_step");
    const std::string gm = r.str("learning.optimizer.gradient_mode");
    if (gm == "alternating")
        op.gradient_mode = learning::GradientMode::Alternating;
    else if (gm == "joint")
        op.gradient_mode = learning::GradientMode::Joint;
    else
        throw ConfigError("learning.optimizer.gradient_mode: expected 'alternating' or 'joint'");
    op.ridge = le.fit.ridge;

    auto& ev = c.evaluate;
    ev.outputs = r.indices("evaluate.outputs");
    ev.traces = r.flag("evaluate.traces");
    auto& fo = ev.forced;
    fo.enabled = r.flag("evaluate.forced.enabled");
    fo.trajectories = r.integer("evaluate.forced.trajectories", 0);
    fo.t_span = r.positive("evaluate.forced.t_span");
    fo.amplitude = r.num("evaluate.forced.amplitude");
    fo.time_constant = r.positive("evaluate.forced.time_constant");
    fo.seed = r.seed("evaluate.forced.seed");
    fo.box = r.box("evaluate.forced.box");

    auto& mp = c.mpc;
    mp.task = r.str("mpc.task");
    if (mp.task != "circle" && mp.task != "figure8" && mp.task != "csv")
        throw ConfigError("mpc.task: expected 'circle', 'figure8' or 'csv'");
    mp.duration = r.positive("mpc.duration");
    mp.radius = r.nonneg("mpc.radius");
    mp.period = r.positive("mpc.period");
    mp.reference_csv = r.str("mpc.reference_csv");
    if (mp.task == "csv" && mp.reference_csv.empty()) throw ConfigError("mpc.reference_csv: required for the csv task");
    mp.outputs = r.indices("mpc.outputs");
    if (mp.outputs.empty()) throw ConfigError("mpc.outputs: must not be empty");
    mp.Q = r.numbers("mpc.Q");
    mp.Q_f = r.numbers("mpc.Q_f");
    mp.R_u = r.numbers("mpc.R_u");
    mp.R_delta = r.numbers("mpc.R_delta");
    mp.u_min = r.numbers("mpc.u_min");
    mp.u_max = r.numbers("mpc.u_max");
    mp.horizon = r.integer("mpc.horizon", 1);
    mp.stride = r.integer("mpc.stride", 1);
    if (mp.stride > mp.horizon) throw ConfigError("mpc.stride: must not exceed mpc.horizon");
    mp.dt_mpc = r.positive("mpc.dt_mpc");
    mp.scp_iters = r.integer("mpc.scp_iters", 1);
    mp.qp_tol = r.positive("mpc.qp_tol");
    mp.qp_max_iters = r.integer("mpc.qp_max_iters", 1);
    mp.rk4_substeps = r.integer("mpc.rk4_substeps", 1);
    for (const auto& t : r.at("mpc.run_tasks")) {
        if (!t.is_string() || (t != "circle" && t != "figure8" && t != "csv"))
            throw ConfigError("mpc.run_tasks: entries must be 'circle', 'figure8' or 'csv'");
        mp.run_tasks.push_back(t.get<std::string>());
    }

    c.io.output_dir = r.str("io.output_dir");
    if (c.io.output_dir.empty()) throw ConfigError("io.output_dir: must not be empty");
    c.io.record_timing = r.flag("io.record_timing");
    return c;
}

systems::SystemSpec PipelineConfig::make_system() const {
    return system.name == "chain" ? systems::make_chain(system.chain) : systems::make_slow_fast(system.slow_fast);
}

systems::Box make_box(const IcBox& box, const systems::SystemSpec& sys, const std::string& path) {
    const int n = sys.state_dim;
    systems::Box b{sys.equilibrium, Vector::Zero(n)};
    if (box.half_width.size() == 1) {
        b.half_width.setConstant(box.half_width[0]);
    } else if (static_cast<int>(box.half_width.size()) == n) {
        for (int i = 0; i < n; ++i) b.half_width(i) = box.half_width[i];
    } else {
        throw ConfigError(path + ".half_width: expected 1 or " + std::to_string(n) + " entries");
    }
    if (box.velocity_half_width) {
        if (sys.name != "chain") throw ConfigError(path + ".velocity_half_width: only the chain has velocity coordinates");
        b.half_width.tail(n / 2).setConstant(*box.velocity_half_width);
    }
    return b;
}

}  // namespace ssm::config
