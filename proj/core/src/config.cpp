#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tfex/pipeline.hpp"

namespace tfex {

using nlohmann::json;

std::string stage2_name(Stage2Model model) {
    switch (model) {
        case Stage2Model::Tfdm: return "tfdm";
        case Stage2Model::TfdmTimeDependent: return "tfdm-timedep";
        case Stage2Model::Sran: return "sran";
        case Stage2Model::Vae: return "vae";
    }
    return "?";
}

Stage2Model stage2_from_name(const std::string& name) {
    if (name == "tfdm") return Stage2Model::Tfdm;
    if (name == "tfdm-timedep") return Stage2Model::TfdmTimeDependent;
    if (name == "sran") return Stage2Model::Sran;
    if (name == "vae") return Stage2Model::Vae;
    throw ConfigError("unknown stage2 model: " + name + " (expected tfdm|tfdm-timedep|sran|vae)");
}

namespace {

Vec3 vec3_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + " must be [x,y,z]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_to(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Forcing forcing_from(const json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "none") return NoForcing{};
    if (type == "constant") return ConstantForcing{vec3_from(j.at("value"), "forcing.value")};
    if (type == "periodic")
        return PeriodicForcing{j.at("amplitude").get<double>(),
                               j.at("angular_frequency").get<double>()};
    if (type == "ou") return OuForcing{j.at("rate").get<double>(), j.at("diffusion").get<double>()};
    throw ConfigError("unknown forcing type: " + type);
}

json forcing_to(const Forcing& f) {
    json j;
    if (std::holds_alternative<NoForcing>(f)) {
        j["type"] = "none";
    } else if (const auto* c = std::get_if<ConstantForcing>(&f)) {
        j["type"] = "constant";
        j["value"] = vec3_to(c->value);
    } else if (const auto* p = std::get_if<PeriodicForcing>(&f)) {
        j["type"] = "periodic";
        j["amplitude"] = p->amplitude;
        j["angular_frequency"] = p->angular_frequency;
    } else if (const auto* o = std::get_if<OuForcing>(&f)) {
        j["type"] = "ou";
        j["rate"] = o->rate;
        j["diffusion"] = o->diffusion;
    }
    return j;
}

RegimeSpec spec_from(const json& j) {
    RegimeSpec s;
    s.skew = vec3_from(j.at("skew"), "skew");
    s.damping = vec3_from(j.at("damping"), "damping");
    s.coupling = vec3_from(j.at("coupling"), "coupling");
    s.noise_std = vec3_from(j.at("noise_std"), "noise_std");
    s.noise_scale = j.value("noise_scale", 1.0);
    if (j.contains("forcing")) s.forcing = forcing_from(j.at("forcing"));
    return s;
}

json spec_to(const RegimeSpec& s) {
    json j;
    j["skew"] = vec3_to(s.skew);
    j["damping"] = vec3_to(s.damping);
    j["coupling"] = vec3_to(s.coupling);
    j["noise_std"] = vec3_to(s.noise_std);
    j["noise_scale"] = s.noise_scale;
    j["forcing"] = forcing_to(s.forcing);
    return j;
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::validate() const {
    if (regime < 0 || regime > 5) throw ConfigError("regime must be 0 (custom) or 1..5");
    try {
        spec.validate();
        data.init.validate();
        stage1.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (data.M < 1 || data.N < 1) throw ConfigError("data.M and data.N must be >= 1");
    if (!(data.h > 0)) throw ConfigError("data.h must be > 0");
    if (eval.M_test < 1) throw ConfigError("eval.M_test must be >= 1");
    if (!(eval.T_test > 0)) throw ConfigError("eval.T_test must be > 0");
    for (const auto& label : eval.moments) parse_moment_label(label, kTriadDim);
    if (eval.histogram.bins < 1) throw ConfigError("histogram.bins must be >= 1");
    for (const auto& ax : eval.histogram.axes)
        if (ax[0] >= kTriadDim || ax[1] >= kTriadDim)
            throw ConfigError("histogram axes out of range");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    ExperimentConfig c;
    try {
        read_if(j, "regime", c.regime);
        if (j.contains("custom_regime") && !j.contains("regime")) c.regime = 0;
        if (c.regime >= 1 && c.regime <= 5) {
            if (j.contains("custom_regime"))
                throw ConfigError("give either a preset regime or custom_regime, not both");
            c.spec = regime_preset(c.regime);
        } else if (c.regime == 0) {
            if (!j.contains("custom_regime")) throw ConfigError("regime 0 requires custom_regime");
            c.spec = spec_from(j.at("custom_regime"));
        } else {
            throw ConfigError("regime must be 0 (custom) or 1..5");
        }
        if (j.contains("noise_scale")) c.spec.noise_scale = j.at("noise_scale").get<double>();

        if (j.contains("data")) {
            const auto& d = j.at("data");
            read_if(d, "M", c.data.M);
            read_if(d, "N", c.data.N);
            read_if(d, "h", c.data.h);
            read_if(d, "seed", c.data.seed);
            if (d.contains("init")) {
                c.data.init.mean = vec3_from(d.at("init").at("mean"), "init.mean");
                c.data.init.std = vec3_from(d.at("init").at("std"), "init.std");
            }
        }
        if (j.contains("stage1")) {
            const auto& s = j.at("stage1");
            read_if(s, "batch_size", c.stage1.batch_size);
            read_if(s, "controller_lr", c.stage1.controller_lr);
            read_if(s, "iterations", c.stage1.iterations);
            read_if(s, "epsilon_start", c.stage1.epsilon_start);
            read_if(s, "epsilon_end", c.stage1.epsilon_end);
            read_if(s, "quantile_fraction", c.stage1.quantile_fraction);
            read_if(s, "inner_adam_iters", c.stage1.inner_adam_iters);
            read_if(s, "inner_adam_lr", c.stage1.inner_adam_lr);
            read_if(s, "quasi_newton_iters", c.stage1.quasi_newton_iters);
            read_if(s, "pool_capacity", c.stage1.pool_capacity);
            read_if(s, "reward_minibatch", c.stage1.reward_minibatch);
            read_if(s, "pool_refine_iters", c.stage1.pool_refine_iters);
            read_if(s, "pool_refine_lr", c.stage1.pool_refine_lr);
            read_if(s, "finetune_iters", c.stage1.finetune_iters);
            read_if(s, "finetune_lr", c.stage1.finetune_lr);
            read_if(s, "finetune_minibatch", c.stage1.finetune_minibatch);
            read_if(s, "controller_hidden", c.stage1.controller_hidden);
            read_if(s, "controller_embedding", c.stage1.controller_embedding);
        }
        if (j.contains("stage2")) {
            const auto& s = j.at("stage2");
            if (s.contains("model")) c.stage2 = stage2_from_name(s.at("model").get<std::string>());
            if (s.contains("tfdm")) {
                const auto& t = s.at("tfdm");
                read_if(t, "K", c.tfdm.K);
                read_if(t, "c0_factor", c.tfdm.c0_factor);
                read_if(t, "center_count", c.tfdm.center_count);
                read_if(t, "centers_knn_centroid", c.tfdm.centers_knn_centroid);
                read_if(t, "pairs", c.tfdm.pairs);
                read_if(t, "hidden", c.tfdm.hidden);
                read_if(t, "train_iters", c.tfdm.train_iters);
                read_if(t, "lr", c.tfdm.lr);
                read_if(t, "weight_decay", c.tfdm.weight_decay);
                read_if(t, "minibatch", c.tfdm.minibatch);
                read_if(t, "pairs_per_step", c.tfdm.pairs_per_step);
                read_if(t, "step_train_iters", c.tfdm.step_train_iters);
            }
            if (s.contains("sran")) {
                const auto& t = s.at("sran");
                read_if(t, "lambda", c.sran.lambda);
                read_if(t, "hidden", c.sran.hidden);
                read_if(t, "train_iters", c.sran.train_iters);
                read_if(t, "lr", c.sran.lr);
                read_if(t, "weight_decay", c.sran.weight_decay);
                read_if(t, "minibatch", c.sran.minibatch);
                read_if(t, "repair_each_iteration", c.sran.repair_each_iteration);
            }
            if (s.contains("vae")) {
                const auto& t = s.at("vae");
                read_if(t, "latent", c.vae.latent);
                read_if(t, "hidden", c.vae.hidden);
                read_if(t, "alpha_mean", c.vae.alpha_mean);
                read_if(t, "alpha_var", c.vae.alpha_var);
                read_if(t, "beta_kl", c.vae.beta_kl);
                read_if(t, "train_iters", c.vae.train_iters);
                read_if(t, "lr", c.vae.lr);
                read_if(t, "weight_decay", c.vae.weight_decay);
                read_if(t, "minibatch", c.vae.minibatch);
            }
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            read_if(e, "M_test", c.eval.M_test);
            read_if(e, "T_test", c.eval.T_test);
            read_if(e, "seed", c.eval.seed);
            read_if(e, "mask_threshold", c.eval.mask_threshold);
            read_if(e, "moments", c.eval.moments);
            if (e.contains("histogram")) {
                const auto& hg = e.at("histogram");
                if (hg.contains("axes")) {
                    c.eval.histogram.axes.clear();
                    for (const auto& ax : hg.at("axes")) {
                        if (!ax.is_array() || ax.size() != 2)
                            throw ConfigError("histogram axes entries must be [i,j] (1-based)");
                        c.eval.histogram.axes.push_back(
                            {ax[0].get<std::size_t>() - 1, ax[1].get<std::size_t>() - 1});
                    }
                }
                read_if(hg, "bins", c.eval.histogram.bins);
                if (hg.contains("range")) {
                    const auto& r = hg.at("range");
                    if (!r.is_array() || r.size() != 4)
                        throw ConfigError("histogram range must be [xmin,xmax,ymin,ymax]");
                    for (std::size_t i = 0; i < 4; ++i) c.eval.histogram.range[i] = r[i].get<double>();
                }
                read_if(hg, "times", c.eval.histogram.times);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["regime"] = c.regime;
    if (c.regime == 0) j["custom_regime"] = spec_to(c.spec);
    j["resolved_spec"] = spec_to(c.spec);  // informational; captures programmatic overrides
    j["data"] = {{"M", c.data.M},
                 {"N", c.data.N},
                 {"h", c.data.h},
                 {"seed", c.data.seed},
                 {"init",
                  {{"mean", vec3_to(c.data.init.mean)}, {"std", vec3_to(c.data.init.std)}}}};
    j["stage1"] = {{"batch_size", c.stage1.batch_size},
                   {"controller_lr", c.stage1.controller_lr},
                   {"iterations", c.stage1.iterations},
                   {"epsilon_start", c.stage1.epsilon_start},
                   {"epsilon_end", c.stage1.epsilon_end},
                   {"quantile_fraction", c.stage1.quantile_fraction},
                   {"inner_adam_iters", c.stage1.inner_adam_iters},
                   {"inner_adam_lr", c.stage1.inner_adam_lr},
                   {"quasi_newton_iters", c.stage1.quasi_newton_iters},
                   {"pool_capacity", c.stage1.pool_capacity},
                   {"reward_minibatch", c.stage1.reward_minibatch},
                   {"pool_refine_iters", c.stage1.pool_refine_iters},
                   {"pool_refine_lr", c.stage1.pool_refine_lr},
                   {"finetune_iters", c.stage1.finetune_iters},
                   {"finetune_lr", c.stage1.finetune_lr},
                   {"finetune_minibatch", c.stage1.finetune_minibatch},
                   {"controller_hidden", c.stage1.controller_hidden},
                   {"controller_embedding", c.stage1.controller_embedding}};
    j["stage2"] = {{"model", stage2_name(c.stage2)},
                   {"tfdm",
                    {{"K", c.tfdm.K},
                     {"c0_factor", c.tfdm.c0_factor},
                     {"center_count", c.tfdm.center_count},
                     {"centers_knn_centroid", c.tfdm.centers_knn_centroid},
                     {"pairs", c.tfdm.pairs},
                     {"hidden", c.tfdm.hidden},
                     {"train_iters", c.tfdm.train_iters},
                     {"lr", c.tfdm.lr},
                     {"weight_decay", c.tfdm.weight_decay},
                     {"minibatch", c.tfdm.minibatch},
                     {"pairs_per_step", c.tfdm.pairs_per_step},
                     {"step_train_iters", c.tfdm.step_train_iters}}},
                   {"sran",
                    {{"lambda", c.sran.lambda},
                     {"hidden", c.sran.hidden},
                     {"train_iters", c.sran.train_iters},
                     {"lr", c.sran.lr},
                     {"weight_decay", c.sran.weight_decay},
                     {"minibatch", c.sran.minibatch},
                     {"repair_each_iteration", c.sran.repair_each_iteration}}},
                   {"vae",
                    {{"latent", c.vae.latent},
                     {"hidden", c.vae.hidden},
                     {"alpha_mean", c.vae.alpha_mean},
                     {"alpha_var", c.vae.alpha_var},
                     {"beta_kl", c.vae.beta_kl},
                     {"train_iters", c.vae.train_iters},
                     {"lr", c.vae.lr},
                     {"weight_decay", c.vae.weight_decay},
                     {"minibatch", c.vae.minibatch}}}};
    json axes = json::array();
    for (const auto& ax : c.eval.histogram.axes) axes.push_back({ax[0] + 1, ax[1] + 1});
    j["eval"] = {{"M_test", c.eval.M_test},
                 {"T_test", c.eval.T_test},
                 {"seed", c.eval.seed},
                 {"mask_threshold", c.eval.mask_threshold},
                 {"moments", c.eval.moments},
                 {"histogram",
                  {{"axes", axes},
                   {"bins", c.eval.histogram.bins},
                   {"range", c.eval.histogram.range},
                   {"times", c.eval.histogram.times}}}};
    return j.dump(2);
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string canon = config_to_json(config);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canon) {
        hash ^= ch;
        hash *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

}  // namespace tfex
