#include "disdis/harness.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace disdis {

using json = nlohmann::json;

namespace {

constexpr const char* kFormat = "disdis-checkpoint";
constexpr int kVersion = 1;

json matrix_to_json(const Matrix& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const json& j, Index rows, Index cols, const std::string& what) {
    if (j.at("rows").get<Index>() != rows || j.at("cols").get<Index>() != cols) {
        throw ConfigError("checkpoint: " + what + " has shape " + std::to_string(j.at("rows").get<Index>()) + "x" +
                          std::to_string(j.at("cols").get<Index>()) + ", expected " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    }
    const std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (data.size() != static_cast<std::size_t>(rows * cols)) {
        throw ConfigError("checkpoint: " + what + " has the wrong number of entries");
    }
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
    return m;
}

json report_to_json(const LossReport& r) {
    return {{"l1", r.l1_kl}, {"l2", r.l2_recon}, {"l3", r.l3_contrastive}, {"total", r.total}};
}

}  // namespace

std::string checkpoint_to_string(const ExperimentConfig& cfg, const TrainState& state) {
    json params = json::array();
    json adam_m = json::array();
    json adam_v = json::array();
    const std::vector<const Parameter*> ps = state.params.all();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        json p = matrix_to_json(ps[i]->value);
        p["name"] = ps[i]->name;
        params.push_back(std::move(p));
        adam_m.push_back(matrix_to_json(state.adam.m.at(i)));
        adam_v.push_back(matrix_to_json(state.adam.v.at(i)));
    }
    json history = json::array();
    for (const EpochRecord& r : state.history) {
        json h = report_to_json(r.mean);
        h["step"] = r.step;
        history.push_back(std::move(h));
    }
    std::ostringstream rng;
    rng << state.rng;
    const json j = {{"format", kFormat},
                    {"version", kVersion},
                    {"config", json::parse(config_to_json(cfg))},
                    {"step", state.step},
                    {"epoch", state.epoch},
                    {"rng", rng.str()},
                    {"params", params},
                    {"adam_m", adam_m},
                    {"adam_v", adam_v},
                    {"history", history}};
    return j.dump(1) + "\n";
}

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << checkpoint_to_string(cfg, state);
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

TrainState checkpoint_from_string(const std::string& text, ExperimentConfig* config_echo) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format") != kFormat) throw ConfigError("not a checkpoint file");
        if (j.at("version") != kVersion) {
            throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
        }
        const ExperimentConfig cfg = parse_config(j.at("config").dump());
        if (config_echo) *config_echo = cfg;

        TrainState s;
        s.params = ModelParams::init(cfg.model, 0);
        std::vector<Parameter*> ps = s.params.all();
        const json& params = j.at("params");
        const json& adam_m = j.at("adam_m");
        const json& adam_v = j.at("adam_v");
        if (params.size() != ps.size() || adam_m.size() != ps.size() || adam_v.size() != ps.size()) {
            throw ConfigError("checkpoint: parameter count mismatch");
        }
        for (std::size_t i = 0; i < ps.size(); ++i) {
            Parameter& p = *ps[i];
            if (params[i].at("name") != p.name) {
                throw ConfigError("checkpoint: expected parameter " + p.name + ", found " +
                                  params[i].at("name").get<std::string>());
            }
            p.value = matrix_from_json(params[i], p.value.rows(), p.value.cols(), p.name);
            p.zero_grad();
            s.adam.m.push_back(matrix_from_json(adam_m[i], p.value.rows(), p.value.cols(), "adam_m/" + p.name));
            s.adam.v.push_back(matrix_from_json(adam_v[i], p.value.rows(), p.value.cols(), "adam_v/" + p.name));
        }
        s.step = j.at("step").get<std::uint64_t>();
        s.epoch = j.at("epoch").get<int>();
        std::istringstream rng(j.at("rng").get<std::string>());
        rng >> s.rng;
        if (!rng) throw ConfigError("checkpoint: unreadable rng state");
        for (const json& h : j.at("history")) {
            EpochRecord r;
            r.step = h.at("step").get<std::uint64_t>();
            r.mean = {h.at("l1").get<double>(), h.at("l2").get<double>(), h.at("l3").get<double>(),
                      h.at("total").get<double>()};
            s.history.push_back(r);
        }
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
}

TrainState load_checkpoint(const std::filesystem::path& path, ExperimentConfig* config_echo) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str(), config_echo);
}

}  // namespace disdis
