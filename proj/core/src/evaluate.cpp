#include "jamident/evaluate.hpp"

#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "jamident/attack.hpp"
#include "jamident/parallel.hpp"

namespace jamident::evaluate {

namespace fs = std::filesystem;
using training::TensorF;

int predict(diffnet::DiffTransformer<float>& model, const tfmap::Spectrogram& img, std::size_t sample,
            const Predictor& pred) {
    const auto x = attack::image_tensor(img);
    if (pred.uses_ensemble()) {
        auto rng = make_rng(pred.eval_seed, {sample});
        return diffnet::argmax(training::ensemble_forward(model, x, pred.mask, rng).data());
    }
    return diffnet::argmax(model.forward(x).data());
}

tfmap::Spectrogram attack_sample(diffnet::DiffTransformer<float>& model, const tfmap::Spectrogram& img, int label,
                                 double epsilon, std::size_t sample, const Predictor& pred) {
    if (!pred.uses_ensemble()) return attack::fgsm(model, img, label, {epsilon, pred.attack_seed});
    const int labels[] = {label};
    auto loss = [&](const TensorF& x) {
        auto rng = make_rng(pred.attack_seed, {sample});
        auto probs = training::ensemble_probs(model, std::span<const TensorF>(&x, 1), pred.mask, rng);
        return ad::nll_prob(probs, std::span<const int>(labels));
    };
    auto out = attack::fgsm_from_loss(img, epsilon, loss);
    ad::zero_grad(model.params());
    return out;
}

namespace {

void check_compatible(const diffnet::DiffTransformer<float>& model, const dataset::Dataset& ds) {
    const auto& c = model.config();
    if (c.num_classes != ds.manifest.num_classes)
        throw std::invalid_argument("model has " + std::to_string(c.num_classes) + " classes, dataset has " +
                                    std::to_string(ds.manifest.num_classes));
    if (c.image_numel() != tfmap::kImagePixels || c.image_height != tfmap::kImageSize)
        throw std::invalid_argument("model input shape does not match 3 x 40 x 40 dataset images");
}

std::size_t isnr_slot(const dataset::Dataset& ds, std::size_t i) {
    const auto& grid = ds.manifest.isnr_grid_db;
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (static_cast<float>(grid[k]) == ds.isnr_db[i]) return k;
    throw std::runtime_error("sample ISNR not on the manifest grid");
}

EvalReport tally(const dataset::Dataset& ds, const std::string& split, const std::vector<std::size_t>& idx,
                 std::vector<int> predictions) {
    const std::size_t k = ds.manifest.num_classes;
    EvalReport r;
    r.split = split;
    r.isnr_grid_db = ds.manifest.isnr_grid_db;
    r.per_isnr.assign(r.isnr_grid_db.size(), {});
    r.per_class.assign(k, {});
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const std::size_t i = idx[j];
        const std::size_t y = ds.labels[i];
        const auto p = static_cast<std::size_t>(predictions[j]);
        const bool hit = p == y;
        for (Tally* t : {&r.overall, &r.per_isnr[isnr_slot(ds, i)], &r.per_class[y]}) {
            ++t->samples;
            t->correct += hit;
        }
        ++r.confusion[y][p];
    }
    r.predictions = std::move(predictions);
    return r;
}

// Runs fn(model_clone, position, sample_index) across workers, one model
// copy per worker.
template <class Fn>
void for_each_sample(const diffnet::DiffTransformer<float>& model, const std::vector<std::size_t>& idx,
                     std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, idx.size()));
    std::vector<std::unique_ptr<diffnet::DiffTransformer<float>>> clones;
    for (std::size_t w = 0; w < workers; ++w) {
        clones.push_back(std::make_unique<diffnet::DiffTransformer<float>>(model.clone()));
        clones.back()->set_training(false);
    }
    parallel_for(idx.size(), workers, [&](std::size_t w, std::size_t j) { fn(*clones[w], j, idx[j]); });
}

} // namespace

EvalReport evaluate(const diffnet::DiffTransformer<float>& model, const dataset::Dataset& ds, const std::string& split,
                    const Predictor& pred, std::size_t workers) {
    check_compatible(model, ds);
    const auto& idx = ds.split(split);
    std::vector<int> predictions(idx.size(), 0);
    for_each_sample(model, idx, workers, [&](auto& m, std::size_t j, std::size_t i) {
        predictions[j] = predict(m, ds.spectrogram(i), i, pred);
    });
    return tally(ds, split, idx, std::move(predictions));
}

std::vector<EvalReport> eval_adversarial(const diffnet::DiffTransformer<float>& model, const dataset::Dataset& ds,
                                         const std::string& split, const std::vector<int>& eps_255,
                                         const Predictor& pred, std::size_t workers) {
    check_compatible(model, ds);
    for (int e : eps_255)
        if (e < 0) throw std::invalid_argument("eval_adversarial: negative budget");
    const auto& idx = ds.split(split);
    std::vector<std::vector<int>> predictions(eps_255.size(), std::vector<int>(idx.size(), 0));
    for_each_sample(model, idx, workers, [&](auto& m, std::size_t j, std::size_t i) {
        const auto img = ds.spectrogram(i);
        const int label = ds.labels[i];
        for (std::size_t e = 0; e < eps_255.size(); ++e) {
            const double eps = eps_255[e] / 255.0;
            predictions[e][j] = predict(m, attack_sample(m, img, label, eps, i, pred), i, pred);
        }
    });
    std::vector<EvalReport> out;
    for (std::size_t e = 0; e < eps_255.size(); ++e) {
        auto r = tally(ds, split, idx, std::move(predictions[e]));
        r.eps_255 = eps_255[e];
        r.epsilon = eps_255[e] / 255.0;
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

std::ofstream open_csv(const fs::path& p) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << std::fixed << std::setprecision(6);
    return out;
}

std::string class_name(std::size_t k) { return std::string(siggen::to_string(siggen::jamming_type_from_label(static_cast<int>(k)))); }

} // namespace

void write_clean_reports(const EvalReport& r, const fs::path& dir) {
    fs::create_directories(dir);
    {
        auto out = open_csv(dir / "accuracy.csv");
        out << "split,samples,correct,accuracy\n";
        out << r.split << ',' << r.overall.samples << ',' << r.overall.correct << ',' << r.overall.accuracy() << '\n';
    }
    {
        auto out = open_csv(dir / "accuracy_by_isnr.csv");
        out << "isnr_db,samples,correct,accuracy\n";
        for (std::size_t k = 0; k < r.per_isnr.size(); ++k)
            out << std::setprecision(1) << r.isnr_grid_db[k] << std::setprecision(6) << ',' << r.per_isnr[k].samples
                << ',' << r.per_isnr[k].correct << ',' << r.per_isnr[k].accuracy() << '\n';
    }
    {
        auto out = open_csv(dir / "accuracy_by_class.csv");
        out << "class,label,samples,correct,accuracy\n";
        for (std::size_t k = 0; k < r.per_class.size(); ++k)
            out << class_name(k) << ',' << k << ',' << r.per_class[k].samples << ',' << r.per_class[k].correct << ','
                << r.per_class[k].accuracy() << '\n';
    }
    auto out = open_csv(dir / "confusion.csv");
    out << "true_class";
    for (std::size_t k = 0; k < r.confusion.size(); ++k) out << ',' << class_name(k);
    out << '\n';
    for (std::size_t y = 0; y < r.confusion.size(); ++y) {
        out << class_name(y);
        for (auto c : r.confusion[y]) out << ',' << c;
        out << '\n';
    }
}

void write_attack_reports(const std::vector<EvalReport>& rows, const fs::path& dir) {
    fs::create_directories(dir);
    {
        auto out = open_csv(dir / "attack.csv");
        out << "eps_255,epsilon,samples,accuracy\n";
        for (const auto& r : rows) out << r.eps_255 << ',' << r.epsilon << ',' << r.overall.samples << ',' << r.overall.accuracy() << '\n';
    }
    {
        auto out = open_csv(dir / "attack_by_isnr.csv");
        out << "eps_255,isnr_db,samples,accuracy\n";
        for (const auto& r : rows)
            for (std::size_t k = 0; k < r.per_isnr.size(); ++k)
                out << r.eps_255 << ',' << std::setprecision(1) << r.isnr_grid_db[k] << std::setprecision(6) << ','
                    << r.per_isnr[k].samples << ',' << r.per_isnr[k].accuracy() << '\n';
    }
    auto out = open_csv(dir / "attack_by_class.csv");
    out << "eps_255,class,samples,accuracy\n";
    for (const auto& r : rows)
        for (std::size_t k = 0; k < r.per_class.size(); ++k)
            out << r.eps_255 << ',' << class_name(k) << ',' << r.per_class[k].samples << ',' << r.per_class[k].accuracy() << '\n';
}

FlopsReport flops_report(const diffnet::ModelConfig& cfg) {
    FlopsReport r;
    r.breakdown = diffnet::count_flops(cfg);
    r.total = r.breakdown.total();
    return r;
}

std::string FlopsReport::format() const {
    std::ostringstream os;
    os << "component,flops\n";
    for (const auto& it : breakdown.items) os << it.name << ',' << it.flops << '\n';
    os << "total," << total << '\n';
    os << std::scientific << std::setprecision(3);
    os << "# total " << static_cast<double>(total) << " FLOPs, band [" << band_lo << ", " << band_hi << "]: "
       << (in_band() ? "inside" : "OUTSIDE") << '\n';
    return os.str();
}

} // namespace jamident::evaluate
