#include "jamident/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json_io.hpp"
#include "jamident/dataset.hpp"

namespace jamident::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path header_path(const fs::path& blob) {
    auto p = blob;
    p.replace_extension(".json");
    return p;
}

void save(const diffnet::DiffTransformer<float>& model, const TrainingMeta& meta, const fs::path& blob) {
    if (blob.extension() == ".json") throw std::invalid_argument("checkpoint path must not end in .json");
    if (blob.has_parent_path()) fs::create_directories(blob.parent_path());

    std::vector<float> flat;
    json table = json::array();
    for (const auto& p : model.params()) {
        table.push_back({{"name", p.name}, {"offset", flat.size()}, {"shape", p.tensor.shape()},
                         {"trainable", p.trainable}});
        flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
    }
    dataset::write_f32(blob, flat);

    json h;
    h["format"] = "jamident-checkpoint";
    h["version"] = 1;
    h["dtype"] = "f32le";
    h["blob"] = blob.filename().string();
    h["total_values"] = flat.size();
    h["model"] = json_io::to_json(model.config());
    h["params"] = table;
    h["training"] = {{"strategy", std::string(training::to_string(meta.strategy))},
                     {"seeds", {{"master", meta.master_seed}, {"init", meta.init_seed}, {"train", meta.train_seed}}},
                     {"epochs", meta.train.epochs},
                     {"config", json_io::to_json(meta.train)},
                     {"mask", json_io::to_json(meta.mask)},
                     {"consistency", json_io::to_json(meta.consistency)},
                     {"loss_curve", meta.loss_curve}};
    std::ofstream out(header_path(blob), std::ios::trunc);
    out << h.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + header_path(blob).string());
}

Loaded load(const fs::path& blob) {
    const auto hp = header_path(blob);
    if (!fs::exists(blob)) throw std::runtime_error("checkpoint not found: " + blob.string());
    if (!fs::exists(hp)) throw std::runtime_error("checkpoint header not found: " + hp.string());

    json h;
    {
        std::ifstream in(hp);
        std::ostringstream ss;
        ss << in.rdbuf();
        try {
            h = json::parse(ss.str());
        } catch (const json::exception& e) {
            throw std::runtime_error(hp.string() + ": " + e.what());
        }
    }
    try {
        if (h.at("format") != "jamident-checkpoint" || h.at("version") != 1)
            throw std::runtime_error(hp.string() + ": not a version-1 checkpoint header");
        const auto cfg = json_io::model_from_json(h.at("model"), {}, "model");
        const auto& tr = h.at("training");
        TrainingMeta meta;
        const auto strategy = training::strategy_from_string(tr.at("strategy").get<std::string>());
        if (!strategy) throw std::runtime_error(hp.string() + ": unknown strategy");
        meta.strategy = *strategy;
        meta.master_seed = tr.at("seeds").at("master").get<std::uint64_t>();
        meta.init_seed = tr.at("seeds").at("init").get<std::uint64_t>();
        meta.train_seed = tr.at("seeds").at("train").get<std::uint64_t>();
        meta.train = json_io::train_from_json(tr.at("config"), {}, "training.config");
        meta.train.seed = meta.train_seed;
        meta.mask = json_io::mask_from_json(tr.at("mask"), {}, "training.mask");
        meta.consistency = json_io::consistency_from_json(tr.at("consistency"), {}, "training.consistency");
        meta.loss_curve = tr.at("loss_curve").get<std::vector<double>>();

        const auto flat = dataset::read_f32(blob);
        if (flat.size() != h.at("total_values").get<std::size_t>())
            throw std::runtime_error(blob.string() + ": blob size disagrees with header");

        Loaded out{diffnet::DiffTransformer<float>(cfg, meta.init_seed), meta};
        auto& params = out.model.params();
        const auto& table = h.at("params");
        if (table.size() != params.size()) throw std::runtime_error(hp.string() + ": parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& e = table[i];
            auto& p = params[i];
            if (e.at("name").get<std::string>() != p.name || e.at("shape").get<ad::Shape>() != p.tensor.shape())
                throw std::runtime_error(hp.string() + ": parameter table entry " + std::to_string(i) +
                                         " does not match the model layout (" + p.name + ")");
            const auto off = e.at("offset").get<std::size_t>();
            const auto n = p.tensor.numel();
            if (off + n > flat.size()) throw std::runtime_error(hp.string() + ": parameter outside the blob");
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), n, p.tensor.mutable_data().begin());
        }
        return out;
    } catch (const json::exception& e) {
        throw std::runtime_error(hp.string() + ": " + e.what());
    } catch (const json_io::ConfigError& e) {
        throw std::runtime_error(hp.string() + ": " + e.what());
    }
}

} // namespace jamident::checkpoint
