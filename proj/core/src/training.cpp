#include "jamident/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace jamident::training {

std::string_view to_string(Strategy s) {
    switch (s) {
    case Strategy::baseline: return "baseline";
    case Strategy::masked: return "masked";
    case Strategy::consistent: return "consistent";
    }
    return "?";
}

std::optional<Strategy> strategy_from_string(std::string_view s) {
    for (auto v : {Strategy::baseline, Strategy::masked, Strategy::consistent})
        if (to_string(v) == s) return v;
    return std::nullopt;
}

std::string_view to_string(MaskMode m) { return m == MaskMode::continuous ? "continuous" : "discrete"; }

std::optional<MaskMode> mask_mode_from_string(std::string_view s) {
    if (s == "continuous") return MaskMode::continuous;
    if (s == "discrete") return MaskMode::discrete;
    return std::nullopt;
}

std::size_t MaskStrategy::masked_count(std::size_t n_patches) const {
    if (!(rate >= 0.0) || rate >= 1.0) throw std::invalid_argument("mask rate must lie in [0, 1)");
    const auto m = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n_patches)));
    if (m >= n_patches) throw std::invalid_argument("mask would hide every patch");
    return m;
}

PatchSet continuous_mask(std::size_t n_patches, std::size_t masked, std::size_t start) {
    if (masked >= n_patches) throw std::invalid_argument("continuous_mask: mask hides every patch");
    std::vector<bool> hidden(n_patches, false);
    for (std::size_t i = 0; i < masked; ++i) hidden[(start + i) % n_patches] = true;
    PatchSet keep;
    keep.reserve(n_patches - masked);
    for (std::size_t i = 0; i < n_patches; ++i)
        if (!hidden[i]) keep.push_back(i);
    return keep;
}

PatchSet sample_mask(const MaskStrategy& s, std::size_t n_patches, Rng& rng) {
    const std::size_t m = s.masked_count(n_patches);
    if (s.mode == MaskMode::continuous) {
        std::uniform_int_distribution<std::size_t> pick(0, n_patches - 1);
        return continuous_mask(n_patches, m, pick(rng));
    }
    // partial Fisher-Yates: the first m entries are the hidden patches
    std::vector<std::size_t> order(n_patches);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_patches - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    PatchSet keep(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
    std::sort(keep.begin(), keep.end());
    return keep;
}

TensorF ensemble_probs(Model& model, std::span<const TensorF> images, const MaskEnsembleConfig& cfg, Rng& rng) {
    if (cfg.branches == 0) throw std::invalid_argument("ensemble: need at least one branch");
    if (images.empty()) throw std::invalid_argument("ensemble: no images");
    const std::size_t b = images.size(), n = model.config().num_patches();

    std::vector<TensorF> stacked;
    std::vector<PatchSet> masks;
    stacked.reserve(cfg.branches * b);
    masks.reserve(cfg.branches * b);
    for (std::size_t k = 0; k < cfg.branches; ++k)
        for (std::size_t i = 0; i < b; ++i) {
            stacked.push_back(images[i]);
            masks.push_back(sample_mask(cfg.mask, n, rng));
        }
    diffnet::FeatureNoise<float> noise{static_cast<float>(cfg.noise_std), &rng};
    auto out = model.forward_batch(stacked, masks, noise);
    auto probs = ad::softmax(out.logits);
    if (cfg.branches == 1) return probs;

    std::vector<std::size_t> sizes(cfg.branches, b);
    auto parts = ad::split(probs, std::span<const std::size_t>(sizes), 0);
    auto acc = parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) acc = ad::add(acc, parts[k]);
    return ad::scale(acc, 1.0f / static_cast<float>(cfg.branches));
}

TensorF ensemble_forward(Model& model, const TensorF& image, const MaskEnsembleConfig& cfg, Rng& rng) {
    auto p = ensemble_probs(model, std::span<const TensorF>(&image, 1), cfg, rng);
    return ad::reshape(p, {model.config().num_classes});
}

namespace {

TensorF squared_distance_mean(const TensorF& a, const TensorF& b) {
    auto d = ad::sub(a, b);
    return ad::scale(ad::sum(ad::mul(d, d)), 1.0f / static_cast<float>(a.size(0)));
}

} // namespace

ConsistencyLoss consistency_loss(Model& model, std::span<const TensorF> images, std::span<const int> labels,
                                 const ConsistencyConfig& cfg, Rng& rng) {
    const std::size_t n = model.config().num_patches();
    auto regular = model.forward_batch(images);

    std::vector<PatchSet> masks;
    masks.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) masks.push_back(sample_mask(cfg.mask, n, rng));
    auto robust = model.forward_batch(images, masks, {static_cast<float>(cfg.noise_std), &rng});

    ConsistencyLoss out;
    out.regular_logits = regular.logits;
    out.ce = ad::cross_entropy(regular.logits, labels);
    if (cfg.ce_on_both) out.ce = ad::scale(ad::add(out.ce, ad::cross_entropy(robust.logits, labels)), 0.5f);
    out.feature = squared_distance_mean(regular.features, robust.features);
    out.prob = squared_distance_mean(ad::softmax(regular.logits), ad::softmax(robust.logits));
    out.total = ad::add(out.ce, ad::add(ad::scale(out.feature, static_cast<float>(cfg.feature_weight)),
                                        ad::scale(out.prob, static_cast<float>(cfg.prob_weight))));
    return out;
}

void Sgd::step(ad::ParamList<float>& params) {
    if (velocity_.empty()) {
        velocity_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i].tensor.numel(), 0.0f);
    }
    if (velocity_.size() != params.size()) throw std::logic_error("Sgd: parameter list changed between steps");

    bool any = false;
    const auto lr = static_cast<float>(lr_), mu = static_cast<float>(momentum_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.trainable || !p.tensor.has_grad()) continue;
        any = true;
        auto w = p.tensor.mutable_data();
        auto g = p.tensor.grad();
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = mu * v[j] + g[j];
            w[j] -= lr * v[j];
        }
    }
    if (!any) throw std::logic_error("Sgd: no trainable parameter received a gradient");
    ad::zero_grad(params);
}

TensorF ImageSet::image(std::size_t k, std::size_t numel) const {
    const std::size_t row = indices.at(k);
    if ((row + 1) * numel > images.size()) throw std::out_of_range("ImageSet: row outside the image buffer");
    auto first = images.begin() + static_cast<std::ptrdiff_t>(row * numel);
    return TensorF::from_data({3, 40, 40}, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(numel)));
}

namespace {

std::string largest_param(const ad::ParamList<float>& params) {
    std::string name;
    float best = -1.0f;
    for (const auto& p : params)
        for (float v : p.tensor.data())
            if (!(std::abs(v) <= best)) {
                best = std::abs(v);
                name = p.name;
                if (!std::isfinite(v)) return name + " (non-finite)";
            }
    std::ostringstream os;
    os << name << " (|w| = " << best << ")";
    return os.str();
}

std::size_t count_correct(const TensorF& scores, std::span<const int> labels) {
    const std::size_t k = scores.size(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (diffnet::argmax(scores.data().subspan(i * k, k)) == labels[i]) ++hits;
    return hits;
}

} // namespace

TrainResult train(Model& model, const ImageSet& data, const TrainOptions& opts) {
    const auto& tc = opts.train;
    if (data.size() == 0) throw std::invalid_argument("train: empty training set");
    if (tc.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
    if (!(tc.lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
    const auto& mc = model.config();
    if (mc.image_channels != 3 || mc.image_height != 40 || mc.image_width != 40)
        throw std::invalid_argument("train: model must take 3 x 40 x 40 images");
    if (opts.strategy == Strategy::masked) opts.mask.mask.masked_count(mc.num_patches());
    if (opts.strategy == Strategy::consistent) opts.consistency.mask.masked_count(mc.num_patches());

    model.set_training(true);
    Sgd opt(tc.lr, tc.momentum);
    TrainResult result;
    std::vector<std::size_t> order(data.size());

    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = make_rng(tc.seed, {1, epoch});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0, batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            std::vector<TensorF> images;
            std::vector<int> labels;
            for (std::size_t j = start; j < end; ++j) {
                images.push_back(data.image(order[j], mc.image_numel()));
                labels.push_back(data.label(order[j]));
            }
            auto rng = make_rng(tc.seed, {2, epoch, batch_no});

            TensorF loss, scores;
            switch (opts.strategy) {
            case Strategy::baseline: {
                auto out = model.forward_batch(images);
                loss = ad::cross_entropy(out.logits, labels);
                scores = out.logits;
                break;
            }
            case Strategy::masked: {
                scores = ensemble_probs(model, images, opts.mask, rng);
                loss = ad::nll_prob(scores, labels);
                break;
            }
            case Strategy::consistent: {
                auto parts = consistency_loss(model, images, labels, opts.consistency, rng);
                loss = parts.total;
                scores = parts.regular_logits;
                break;
            }
            }

            const double l = loss.item();
            if (!std::isfinite(l)) {
                std::ostringstream os;
                os << "training diverged: non-finite loss at epoch " << epoch << ", batch " << batch_no
                   << "; largest parameter " << largest_param(model.params());
                throw std::runtime_error(os.str());
            }
            loss.backward();
            opt.step(model.params());
            ++result.steps;

            loss_sum += l * static_cast<double>(labels.size());
            correct += count_correct(scores, labels);
            seen += labels.size();
        }

        EpochRecord rec{epoch, "train", loss_sum / static_cast<double>(seen),
                        static_cast<double>(correct) / static_cast<double>(seen)};
        result.history.push_back(rec);
        if (opts.progress) opts.progress(rec);
    }
    if (tc.recalibrate_bn) recalibrate_batchnorm(model, data, tc.batch_size);
    model.set_training(false);
    return result;
}

void recalibrate_batchnorm(Model& model, const ImageSet& data, std::size_t batch_size) {
    if (data.size() == 0 || batch_size == 0) throw std::invalid_argument("recalibrate_batchnorm: nothing to average");
    const double saved = model.batchnorm_momentum();
    const std::size_t numel = model.config().image_numel();
    model.reset_batchnorm_stats();
    model.set_training(true);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        std::vector<TensorF> images;
        for (std::size_t k = start; k < end; ++k) images.push_back(data.image(k, numel));
        // momentum 1/t turns the running update into a plain mean over batches
        model.set_batchnorm_momentum(1.0 / static_cast<double>(++batches));
        model.forward_batch(images);
    }
    model.set_batchnorm_momentum(saved);
    model.set_training(false);
}

} // namespace jamident::training
