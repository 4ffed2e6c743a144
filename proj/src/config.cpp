#include "disdis/harness.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace disdis {

using json = nlohmann::json;

namespace {

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers can be rejected.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        const json& v = j_.at(key);
        const std::string where = path_ + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
                    throw ConfigError(where + ": expected a non-negative integer");
                }
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where + ": expected a string");
        }
        out = v.get<T>();
    }

    const json* child(const char* key) {
        if (!j_.contains(key)) return nullptr;
        seen_.insert(key);
        return &j_.at(key);
    }

    std::string path(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.contains(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename F>
void read_enum(StrictObject& o, const char* key, F&& assign) {
    std::string s;
    bool present = false;
    if (const json* c = o.child(key)) {
        if (!c->is_string()) throw ConfigError(o.path(key) + ": expected a string");
        s = c->get<std::string>();
        present = true;
    }
    if (!present) return;
    try {
        assign(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(o.path(key) + ": " + e.what());
    }
}

void parse_data(const json& j, DataConfig& d) {
    StrictObject o(j, "data");
    o.read("source", d.source);
    if (const json* scenes = o.child("scenes")) {
        if (!scenes->is_array()) throw ConfigError("data.scenes: expected an array");
        d.scenes.clear();
        for (std::size_t i = 0; i < scenes->size(); ++i) {
            StrictObject s((*scenes)[i], "data.scenes[" + std::to_string(i) + "]");
            SceneFiles sf;
            s.read("name", sf.name);
            if (const json* files = s.child("files")) {
                if (!files->is_array()) throw ConfigError("data.scenes[].files: expected an array");
                for (const json& f : *files) {
                    if (!f.is_string()) throw ConfigError("data.scenes[].files: expected strings");
                    sf.files.push_back(f.get<std::string>());
                }
            }
            s.finish();
            d.scenes.push_back(std::move(sf));
        }
    }
    o.read("holdout", d.holdout);
    o.read("augment", d.augment);
    o.read("max_train_samples", d.max_train_samples);
    if (const json* personas = o.child("personas")) {
        if (!personas->is_array()) throw ConfigError("data.personas: expected an array");
        d.personas.clear();
        for (std::size_t i = 0; i < personas->size(); ++i) {
            StrictObject p((*personas)[i], "data.personas[" + std::to_string(i) + "]");
            SyntheticPersona sp;
            p.read("pattern_id", sp.pattern_id);
            p.read("turn_rate", sp.turn_rate);
            p.read("speed", sp.speed);
            p.read("noise_sigma", sp.noise_sigma);
            p.finish();
            d.personas.push_back(sp);
        }
    }
    o.read("n_per_persona", d.n_per_persona);
    o.read("eval_n_per_persona", d.eval_n_per_persona);
    if (const json* s = o.child("synth")) {
        StrictObject so(*s, "data.synth");
        so.read("prefix_len", d.synth.prefix_len);
        so.read("base_speed", d.synth.base_speed);
        so.read("heading_jitter", d.synth.heading_jitter);
        so.read("start_spread", d.synth.start_spread);
        so.finish();
    }
    o.read("synth_seed", d.synth_seed);
    o.finish();
}

void parse_model(const json& j, ModelConfig& m) {
    StrictObject o(j, "model");
    o.read("K", m.K);
    o.read("d_f", m.d_f);
    o.read("d_g", m.d_g);
    o.read("d_c", m.d_c);
    o.read("enc_hidden", m.enc_hidden);
    o.read("dec_hidden", m.dec_hidden);
    o.finish();
}

void parse_loss(const json& j, LossConfig& l) {
    StrictObject o(j, "loss");
    o.read("lambda", l.lambda);
    o.read("mu", l.mu);
    o.read("temperature", l.temperature);
    read_enum(o, "estimator", [&](const std::string& s) { l.estimator = estimator_from_string(s); });
    read_enum(o, "variant", [&](const std::string& s) { l.variant = variant_from_string(s); });
    o.read("reinforce_samples", l.reinforce_samples);
    read_enum(o, "baseline", [&](const std::string& s) { l.baseline = baseline_from_string(s); });
    read_enum(o, "reward", [&](const std::string& s) { l.reward = reward_from_string(s); });
    o.finish();
}

void parse_train(const json& j, TrainConfig& t) {
    StrictObject o(j, "train");
    o.read("epochs", t.epochs);
    o.read("batch_size", t.batch_size);
    o.read("learning_rate", t.learning_rate);
    o.read("beta1", t.beta1);
    o.read("beta2", t.beta2);
    o.read("eps", t.eps);
    o.read("seed", t.seed);
    if (const json* seeds = o.child("ablation_seeds")) {
        if (!seeds->is_array()) throw ConfigError("train.ablation_seeds: expected an array");
        t.ablation_seeds.clear();
        for (const json& s : *seeds) {
            if (!s.is_number_unsigned()) throw ConfigError("train.ablation_seeds: expected non-negative integers");
            t.ablation_seeds.push_back(s.get<std::uint64_t>());
        }
    }
    o.finish();
}

void parse_eval(const json& j, EvalConfig& e) {
    StrictObject o(j, "eval");
    o.read("M", e.M);
    o.read("best_of_n", e.best_of_n);
    o.read("out_dir", e.out_dir);
    o.finish();
}

void validate(const ExperimentConfig& c) {
    const DataConfig& d = c.data;
    if (d.source != "synthetic" && d.source != "files") {
        throw ConfigError("data.source: expected \"synthetic\" or \"files\"");
    }
    if (d.source == "files") {
        if (d.scenes.empty()) throw ConfigError("data.scenes: files source needs at least one scene");
        bool found = d.holdout.empty();
        for (const SceneFiles& s : d.scenes) {
            if (s.name.empty() || s.files.empty()) throw ConfigError("data.scenes: each scene needs a name and files");
            found = found || s.name == d.holdout;
        }
        if (!found) throw ConfigError("data.holdout: no scene named '" + d.holdout + "'");
        if (!d.holdout.empty() && d.scenes.size() < 2) {
            throw ConfigError("data.holdout: leave-one-scene-out needs at least two scenes");
        }
    } else {
        if (d.n_per_persona <= 0 || d.eval_n_per_persona <= 0) {
            throw ConfigError("data: n_per_persona and eval_n_per_persona must be positive");
        }
        if (d.personas.size() < 2) throw ConfigError("data.personas: need at least two personas");
    }
    const ModelConfig& m = c.model;
    if (m.K < 2 || m.d_f < 1 || m.d_g < 1 || m.d_c < 1 || m.enc_hidden < 1 || m.dec_hidden < 1) {
        throw ConfigError("model: K must be >= 2 and all sizes positive");
    }
    try {
        c.loss.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const TrainConfig& t = c.train;
    if (t.epochs < 0) throw ConfigError("train.epochs: must be >= 0");
    if (t.batch_size < 2) throw ConfigError("train.batch_size: must be >= 2");
    if (!(t.learning_rate > 0.0) || !(t.eps > 0.0)) throw ConfigError("train: learning_rate and eps must be > 0");
    if (!(t.beta1 >= 0.0 && t.beta1 < 1.0) || !(t.beta2 >= 0.0 && t.beta2 < 1.0)) {
        throw ConfigError("train: beta1 and beta2 must lie in [0, 1)");
    }
    if (c.eval.M < 0 || c.eval.M > m.K) throw ConfigError("eval.M: must lie in [0, K]");
    if (c.eval.best_of_n < 1 || c.eval.best_of_n > m.K) throw ConfigError("eval.best_of_n: must lie in [1, K]");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;
    StrictObject root(j, "config");
    if (const json* d = root.child("data")) parse_data(*d, cfg.data);
    if (const json* m = root.child("model")) parse_model(*m, cfg.model);
    if (const json* l = root.child("loss")) parse_loss(*l, cfg.loss);
    if (const json* t = root.child("train")) parse_train(*t, cfg.train);
    if (const json* e = root.child("eval")) parse_eval(*e, cfg.eval);
    root.finish();
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

std::string config_to_json(const ExperimentConfig& c) {
    json scenes = json::array();
    for (const SceneFiles& s : c.data.scenes) scenes.push_back({{"name", s.name}, {"files", s.files}});
    json personas = json::array();
    for (const SyntheticPersona& p : c.data.personas) {
        personas.push_back(
            {{"pattern_id", p.pattern_id}, {"turn_rate", p.turn_rate}, {"speed", p.speed}, {"noise_sigma", p.noise_sigma}});
    }
    json j = {
        {"data",
         {{"source", c.data.source},
          {"scenes", scenes},
          {"holdout", c.data.holdout},
          {"augment", c.data.augment},
          {"max_train_samples", c.data.max_train_samples},
          {"personas", personas},
          {"n_per_persona", c.data.n_per_persona},
          {"eval_n_per_persona", c.data.eval_n_per_persona},
          {"synth",
           {{"prefix_len", c.data.synth.prefix_len},
            {"base_speed", c.data.synth.base_speed},
            {"heading_jitter", c.data.synth.heading_jitter},
            {"start_spread", c.data.synth.start_spread}}},
          {"synth_seed", c.data.synth_seed}}},
        {"model",
         {{"K", c.model.K},
          {"d_f", c.model.d_f},
          {"d_g", c.model.d_g},
          {"d_c", c.model.d_c},
          {"enc_hidden", c.model.enc_hidden},
          {"dec_hidden", c.model.dec_hidden}}},
        {"loss",
         {{"lambda", c.loss.lambda},
          {"mu", c.loss.mu},
          {"temperature", c.loss.temperature},
          {"estimator", to_string(c.loss.estimator)},
          {"variant", to_string(c.loss.variant)},
          {"reinforce_samples", c.loss.reinforce_samples},
          {"baseline", to_string(c.loss.baseline)},
          {"reward", to_string(c.loss.reward)}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"eps", c.train.eps},
          {"seed", c.train.seed},
          {"ablation_seeds", c.train.ablation_seeds}}},
        {"eval", {{"M", c.eval.M}, {"best_of_n", c.eval.best_of_n}, {"out_dir", c.eval.out_dir}}},
    };
    return j.dump(2);
}

}  // namespace disdis
