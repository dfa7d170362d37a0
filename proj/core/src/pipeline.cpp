#include "jamident/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "jamident/parallel.hpp"

namespace jamident::pipeline {

dataset::DatasetManifest gen_dataset(const config::AppConfig& cfg, const fs::path& out_dir, std::ostream& log) {
    const auto m = dataset::gen_dataset(cfg.dataset, out_dir, worker_count());
    log << "wrote " << m.num_samples << " samples (" << m.train_indices.size() << " train, " << m.test_indices.size()
        << " test) to " << out_dir.string() << "\n";
    return m;
}

std::string format_record(const training::EpochRecord& r) {
    nlohmann::json j{{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"accuracy", r.accuracy}};
    return j.dump();
}

training::TrainResult train(const TrainRequest& req, std::ostream& log) {
    const auto ds = dataset::read(req.dataset_dir);
    const auto seeds = req.cfg.seeds();
    diffnet::DiffTransformer<float> model(req.cfg.model, seeds.init);

    training::ImageSet data{ds.images, ds.labels, ds.manifest.train_indices};
    training::TrainOptions opts;
    opts.strategy = req.strategy;
    opts.train = req.cfg.train;
    opts.train.seed = seeds.train;
    opts.mask = req.cfg.mask;
    opts.consistency = req.cfg.consistency;

    if (req.log_file.has_parent_path()) fs::create_directories(req.log_file.parent_path());
    std::ofstream file(req.log_file, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write log file " + req.log_file.string());
    opts.progress = [&](const training::EpochRecord& r) {
        const auto line = format_record(r);
        log << line << std::endl;
        file << line << std::endl;
    };

    auto result = training::train(model, data, opts);

    checkpoint::TrainingMeta meta;
    meta.strategy = req.strategy;
    meta.master_seed = req.cfg.seed;
    meta.init_seed = seeds.init;
    meta.train_seed = seeds.train;
    meta.train = opts.train;
    meta.mask = opts.mask;
    meta.consistency = opts.consistency;
    for (const auto& r : result.history) meta.loss_curve.push_back(r.loss);
    checkpoint::save(model, meta, req.checkpoint);
    log << "checkpoint written to " << req.checkpoint.string() << "\n";
    return result;
}

evaluate::Predictor make_predictor(const checkpoint::TrainingMeta& meta, const config::AppConfig& cfg) {
    evaluate::Predictor p;
    p.strategy = meta.strategy;
    p.mask_eval = cfg.eval.mask_eval;
    p.mask = meta.mask;
    const auto seeds = cfg.seeds();
    p.eval_seed = seeds.eval;
    p.attack_seed = seeds.attack;
    return p;
}

evaluate::EvalReport eval(const EvalRequest& req, std::ostream& log) {
    auto ck = checkpoint::load(req.checkpoint);
    const auto ds = dataset::read(req.dataset_dir);
    const auto pred = make_predictor(ck.meta, req.cfg);
    auto r = evaluate::evaluate(ck.model, ds, req.cfg.eval.split, pred, worker_count());
    evaluate::write_clean_reports(r, req.out_dir);
    log << std::fixed << std::setprecision(4) << req.cfg.eval.split << " accuracy " << r.overall.accuracy() << " ("
        << r.overall.correct << "/" << r.overall.samples << ")\n";
    for (std::size_t k = 0; k < r.per_isnr.size(); ++k)
        log << "  isnr " << std::setprecision(1) << r.isnr_grid_db[k] << " dB: " << std::setprecision(4)
            << r.per_isnr[k].accuracy() << "\n";
    return r;
}

std::vector<evaluate::EvalReport> attack_eval(const EvalRequest& req, std::ostream& log) {
    auto ck = checkpoint::load(req.checkpoint);
    const auto ds = dataset::read(req.dataset_dir);
    const auto pred = make_predictor(ck.meta, req.cfg);
    auto rows = evaluate::eval_adversarial(ck.model, ds, req.cfg.eval.split, req.cfg.attack.eps_255, pred, worker_count());
    evaluate::write_attack_reports(rows, req.out_dir);
    for (const auto& r : rows)
        log << "eps " << r.eps_255 << "/255: accuracy " << std::fixed << std::setprecision(4) << r.overall.accuracy()
            << "\n";
    return rows;
}

} // namespace jamident::pipeline
