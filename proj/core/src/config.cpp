#include "jamident/config.hpp"

#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace jamident::config {

using nlohmann::json;

AppConfig AppConfig::desk_scale() {
    AppConfig c;
    // 15 epochs at lr 0.001 stays at chance on 2,400 samples; a larger step is needed
    c.train.lr = 0.1;
    c.train.batch_size = 32;
    c.set_seed(c.seed);
    return c;
}

AppConfig AppConfig::full_scale() {
    AppConfig c;
    c.scale = "full";
    c.dataset = dataset::DatasetConfig::full_scale();
    c.train.epochs = 50;
    c.train.lr = 0.001;
    c.set_seed(c.seed);
    return c;
}

Seeds AppConfig::seeds() const {
    return {seed, mix_seed(seed, 101), mix_seed(seed, 102), mix_seed(seed, 103), mix_seed(seed, 104)};
}

void AppConfig::set_seed(std::uint64_t s) {
    seed = s;
    const auto d = seeds();
    dataset.seed = d.dataset;
    train.seed = d.train;
}

namespace {

void read_dataset(const json& j, dataset::DatasetConfig& d) {
    const std::string where = "dataset";
    json_io::check_keys(j, where, {"isnr_grid_db", "samples_per_type_per_isnr", "train_parts", "test_parts", "fs_hz",
                                   "signal_samples", "snr_db", "rician_k_db"});
    json_io::read_opt(j, "isnr_grid_db", d.isnr_grid_db, where);
    json_io::read_opt(j, "samples_per_type_per_isnr", d.samples_per_type_per_isnr, where);
    json_io::read_opt(j, "train_parts", d.train_parts, where);
    json_io::read_opt(j, "test_parts", d.test_parts, where);
    json_io::read_opt(j, "fs_hz", d.scenario.fs_hz, where);
    json_io::read_opt(j, "signal_samples", d.scenario.n_samples, where);
    json_io::read_opt(j, "snr_db", d.scenario.snr_db, where);
    json_io::read_opt(j, "rician_k_db", d.scenario.channel.rician_k_db, where);
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

} // namespace

AppConfig parse_config(const std::string& json_text, const AppConfig& base) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        json_io::check_keys(j, "config", {"scale", "seed", "dataset", "model", "train", "mask", "consistency", "attack", "eval"});
        AppConfig c = base;
        if (j.contains("scale")) {
            const auto s = j.at("scale").get<std::string>();
            if (s == "desk") c = AppConfig::desk_scale();
            else if (s == "full") c = AppConfig::full_scale();
            else throw ConfigError("config.scale: expected desk or full");
        }
        if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
        if (j.contains("dataset")) read_dataset(j.at("dataset"), c.dataset);
        if (j.contains("model")) c.model = json_io::model_from_json(j.at("model"), c.model, "model");
        if (j.contains("train")) {
            const auto seed = c.train.seed;
            c.train = json_io::train_from_json(j.at("train"), c.train, "train");
            c.train.seed = seed;
        }
        if (j.contains("mask")) c.mask = json_io::mask_from_json(j.at("mask"), c.mask, "mask");
        if (j.contains("consistency"))
            c.consistency = json_io::consistency_from_json(j.at("consistency"), c.consistency, "consistency");
        if (j.contains("attack")) {
            json_io::check_keys(j.at("attack"), "attack", {"eps_255"});
            json_io::read_opt(j.at("attack"), "eps_255", c.attack.eps_255, "attack");
            for (int e : c.attack.eps_255)
                if (e < 0) throw ConfigError("attack.eps_255: negative budget");
        }
        if (j.contains("eval")) {
            json_io::check_keys(j.at("eval"), "eval", {"mask_eval", "split"});
            json_io::read_opt(j.at("eval"), "mask_eval", c.eval.mask_eval, "eval");
            json_io::read_opt(j.at("eval"), "split", c.eval.split, "eval");
            if (c.eval.split != "train" && c.eval.split != "test") throw ConfigError("eval.split: expected train or test");
        }
        return c;
    } catch (const json_io::ConfigError& e) {
        throw ConfigError(e.what());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

AppConfig load_config(const std::filesystem::path& path, const AppConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base);
}

std::string to_json(const AppConfig& c) {
    json j;
    j["scale"] = c.scale;
    j["seed"] = c.seed;
    j["dataset"] = {{"isnr_grid_db", c.dataset.isnr_grid_db},
                    {"samples_per_type_per_isnr", c.dataset.samples_per_type_per_isnr},
                    {"train_parts", c.dataset.train_parts},
                    {"test_parts", c.dataset.test_parts},
                    {"fs_hz", c.dataset.scenario.fs_hz},
                    {"signal_samples", c.dataset.scenario.n_samples},
                    {"snr_db", c.dataset.scenario.snr_db},
                    {"rician_k_db", c.dataset.scenario.channel.rician_k_db}};
    j["model"] = json_io::to_json(c.model);
    j["train"] = json_io::to_json(c.train);
    j["mask"] = json_io::to_json(c.mask);
    j["consistency"] = json_io::to_json(c.consistency);
    j["attack"] = {{"eps_255", c.attack.eps_255}};
    j["eval"] = {{"mask_eval", c.eval.mask_eval}, {"split", c.eval.split}};
    return j.dump(2) + "\n";
}

} // namespace jamident::config
