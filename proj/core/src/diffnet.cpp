#include "jamident/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace jamident::diffnet {

using ad::Shape;

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("ModelConfig: " + what); };
    if (image_channels == 0 || image_height == 0 || image_width == 0) fail("image dimensions must be positive");
    if (patch == 0 || image_height % patch != 0 || image_width % patch != 0)
        fail("patch size must divide the image height and width");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) fail("embed_dim must be a positive multiple of heads");
    if (expansion < 1) fail("expansion ratio must be >= 1");
    if (num_classes < 2) fail("need at least two classes");
    if (conv_kernel == 0 || conv_kernel % 2 == 0) fail("conv kernel must be odd");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
}

PatchSet all_patches(std::size_t n) {
    PatchSet p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return p;
}

std::vector<std::size_t> patch_index(const ModelConfig& cfg) {
    const std::size_t p = cfg.patch, w = cfg.image_width, h = cfg.image_height;
    const std::size_t tiles_x = w / p;
    std::vector<std::size_t> idx;
    idx.reserve(cfg.num_patches() * cfg.patch_dim());
    for (std::size_t t = 0; t < cfg.num_patches(); ++t) {
        const std::size_t ty = t / tiles_x, tx = t % tiles_x;
        for (std::size_t c = 0; c < cfg.image_channels; ++c)
            for (std::size_t dy = 0; dy < p; ++dy)
                for (std::size_t dx = 0; dx < p; ++dx) idx.push_back((c * h + ty * p + dy) * w + tx * p + dx);
    }
    return idx;
}

template <class T>
Tensor<T> patch_split(const Tensor<T>& image, const ModelConfig& cfg) {
    const Shape want{cfg.image_channels, cfg.image_height, cfg.image_width};
    if (!image.defined() || image.shape() != want)
        throw std::invalid_argument("patch_split: expected image " + ad::shape_str(want) + ", got " +
                                    (image.defined() ? ad::shape_str(image.shape()) : std::string("undefined")));
    return ad::gather(image, patch_index(cfg), {cfg.num_patches(), cfg.patch_dim()});
}

template <class T>
std::vector<T> patch_merge(std::span<const T> patches, const ModelConfig& cfg) {
    const auto idx = patch_index(cfg);
    if (patches.size() != idx.size()) throw std::invalid_argument("patch_merge: wrong number of values");
    std::vector<T> img(cfg.image_numel());
    for (std::size_t k = 0; k < idx.size(); ++k) img[idx[k]] = patches[k];
    return img;
}

namespace {

template <class T>
struct HeadProjections {
    Tensor<T> q1, q2, k1, k2, v;
};

template <class T>
HeadProjections<T> project(const Tensor<T>& x, const DiffHead<T>& head) {
    const std::size_t d = head.wv.size(1);
    if (head.wq.size(1) != 2 * d || head.wk.size(1) != 2 * d)
        throw std::invalid_argument("diff_attention: W_Q and W_K need 2d columns, W_V d columns");
    const std::size_t halves[] = {d, d};
    auto q = ad::split(ad::matmul(x, head.wq), halves, 1);
    auto k = ad::split(ad::matmul(x, head.wk), halves, 1);
    return {q[0], q[1], k[0], k[1], ad::matmul(x, head.wv)};
}

template <class T>
Tensor<T> scores_from(const HeadProjections<T>& p, T lambda) {
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(p.v.size(1)));
    auto a1 = ad::softmax(ad::scale(ad::matmul_nt(p.q1, p.k1), inv_sqrt_d));
    auto a2 = ad::softmax(ad::scale(ad::matmul_nt(p.q2, p.k2), inv_sqrt_d));
    return ad::sub(a1, ad::scale(a2, lambda));
}

template <class T>
Tensor<T> attend(const HeadProjections<T>& p, T lambda) {
    return ad::matmul(scores_from(p, lambda), p.v);
}

} // namespace

template <class T>
Tensor<T> diff_scores(const Tensor<T>& x, const DiffHead<T>& head, T lambda) {
    return scores_from(project(x, head), lambda);
}

template <class T>
Tensor<T> diff_attention(const Tensor<T>& x, const DiffHead<T>& head, T lambda) {
    return attend(project(x, head), lambda);
}

template <class T>
Tensor<T> multi_diff(const Tensor<T>& x, const MultiDiffLayer<T>& layer, T lambda, std::span<const std::size_t> segments) {
    if (layer.heads.empty()) throw std::invalid_argument("multi_diff: no heads");
    const std::size_t rows = x.size(0);
    std::vector<std::size_t> segs(segments.begin(), segments.end());
    if (segs.empty()) segs.push_back(rows);

    std::vector<Tensor<T>> head_out;
    head_out.reserve(layer.heads.size());
    for (const auto& head : layer.heads) {
        auto full = project(x, head);
        Tensor<T> h;
        if (segs.size() == 1) {
            h = attend(full, lambda);
        } else {
            auto q1 = ad::split(full.q1, segs, 0), q2 = ad::split(full.q2, segs, 0);
            auto k1 = ad::split(full.k1, segs, 0), k2 = ad::split(full.k2, segs, 0);
            auto v = ad::split(full.v, segs, 0);
            std::vector<Tensor<T>> parts;
            parts.reserve(segs.size());
            for (std::size_t s = 0; s < segs.size(); ++s) parts.push_back(attend(HeadProjections<T>{q1[s], q2[s], k1[s], k2[s], v[s]}, lambda));
            h = ad::concat<T>(parts, 0);
        }
        head_out.push_back(ad::scale(ad::layernorm(h, head.ln_gamma, head.ln_beta), T(1) - lambda));
    }
    auto cat = head_out.size() == 1 ? head_out[0] : ad::concat<T>(head_out, 1);
    return ad::matmul(cat, layer.wo);
}

template <class T>
Tensor<T> elu_block(const Tensor<T>& x, const EluLayer<T>& layer) {
    auto gate = ad::silu(ad::matmul(x, layer.w1));
    auto value = ad::matmul(x, layer.w2);
    return ad::matmul(ad::mul(gate, value), layer.w3);
}

template <class T>
Tensor<T> encoder_block(const Tensor<T>& x, const EncoderBlock<T>& block, T lambda, std::span<const std::size_t> segments) {
    auto o = ad::add(multi_diff(ad::layernorm(x, block.ln1_gamma, block.ln1_beta), block.attn, lambda, segments), x);
    return ad::add(elu_block(ad::layernorm(o, block.ln2_gamma, block.ln2_beta), block.ffn), o);
}

// ---- model ---------------------------------------------------------------------

template <class T>
Tensor<T> DiffTransformer<T>::make_param(const std::string& name, Shape shape, double bound, Rng& rng, bool trainable) {
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<T> v(ad::shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    auto t = Tensor<T>::from_data(std::move(shape), std::move(v), trainable);
    params_.push_back({name, t, trainable});
    return t;
}

template <class T>
Tensor<T> DiffTransformer<T>::make_const(const std::string& name, Shape shape, T value, bool trainable) {
    auto t = Tensor<T>::full(std::move(shape), value, trainable);
    params_.push_back({name, t, trainable});
    return t;
}

template <class T>
DiffTransformer<T>::DiffTransformer(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(init_seed, {0x6d6f64656c});
    const std::size_t c = cfg_.embed_dim, d = cfg_.head_dim(), hid = cfg_.hidden_dim();
    auto bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

    const std::size_t conv_fan = cfg_.patch_dim() * cfg_.conv_kernel;
    embed_.conv_w = make_param("embed.conv.weight", {cfg_.conv_kernel, cfg_.patch_dim(), c}, bound(conv_fan), rng);
    embed_.conv_b = make_param("embed.conv.bias", {c}, bound(conv_fan), rng);
    embed_.bn_gamma = make_const("embed.bn.weight", {c}, T(1));
    embed_.bn_beta = make_const("embed.bn.bias", {c}, T(0));
    embed_.bn_mean = make_const("embed.bn.running_mean", {c}, T(0), false);
    embed_.bn_var = make_const("embed.bn.running_var", {c}, T(1), false);

    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        EncoderBlock<T> blk;
        blk.ln1_gamma = make_const(pre + "ln1.weight", {c}, T(1));
        blk.ln1_beta = make_const(pre + "ln1.bias", {c}, T(0));
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            const std::string hp = pre + "attn.heads." + std::to_string(h) + ".";
            DiffHead<T> head;
            head.wq = make_param(hp + "wq", {c, 2 * d}, bound(c), rng);
            head.wk = make_param(hp + "wk", {c, 2 * d}, bound(c), rng);
            head.wv = make_param(hp + "wv", {c, d}, bound(c), rng);
            head.ln_gamma = make_const(hp + "ln.weight", {d}, T(1));
            head.ln_beta = make_const(hp + "ln.bias", {d}, T(0));
            blk.attn.heads.push_back(std::move(head));
        }
        blk.attn.wo = make_param(pre + "attn.wo", {c, c}, bound(c), rng);
        blk.ln2_gamma = make_const(pre + "ln2.weight", {c}, T(1));
        blk.ln2_beta = make_const(pre + "ln2.bias", {c}, T(0));
        blk.ffn.w1 = make_param(pre + "ffn.w1", {c, hid}, bound(c), rng);
        blk.ffn.w2 = make_param(pre + "ffn.w2", {c, hid}, bound(c), rng);
        blk.ffn.w3 = make_param(pre + "ffn.w3", {hid, c}, bound(hid), rng);
        blocks_.push_back(std::move(blk));
    }
    head_w_ = make_param("head.weight", {c, cfg_.num_classes}, bound(c), rng);
    head_b_ = make_param("head.bias", {cfg_.num_classes}, bound(c), rng);
}

template <class T>
const ad::Param<T>& DiffTransformer<T>::param(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw std::out_of_range("no parameter named " + name);
}

template <class T>
std::size_t DiffTransformer<T>::param_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (!trainable_only || p.trainable) n += p.tensor.numel();
    return n;
}

template <class T>
void DiffTransformer<T>::copy_values_from(const DiffTransformer& other) {
    if (other.params_.size() != params_.size()) throw std::invalid_argument("copy_values_from: parameter layouts differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto dst = params_[i].tensor.mutable_data();
        const auto src = other.params_[i].tensor.data();
        if (dst.size() != src.size() || params_[i].name != other.params_[i].name)
            throw std::invalid_argument("copy_values_from: mismatch at " + params_[i].name);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    training_ = other.training_;
    bn_momentum_ = other.bn_momentum_;
}

template <class T>
void DiffTransformer<T>::reset_batchnorm_stats() {
    for (auto& v : embed_.bn_mean.mutable_data()) v = T(0);
    for (auto& v : embed_.bn_var.mutable_data()) v = T(1);
}

template <class T>
DiffTransformer<T> DiffTransformer<T>::clone() const {
    DiffTransformer out(cfg_, 0);
    out.copy_values_from(*this);
    return out;
}

template <class T>
template <class U>
DiffTransformer<U> DiffTransformer<T>::cast() const {
    DiffTransformer<U> out(cfg_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto dst = out.params()[i].tensor.mutable_data();
        const auto src = params_[i].tensor.data();
        std::transform(src.begin(), src.end(), dst.begin(), [](T v) { return static_cast<U>(v); });
    }
    out.set_training(training_);
    return out;
}

template <class T>
ForwardOutput<T> DiffTransformer<T>::forward_batch(std::span<const Tensor<T>> images, std::span<const PatchSet> active,
                                                   FeatureNoise<T> noise) {
    if (images.empty()) throw std::invalid_argument("forward_batch: no images");
    if (!active.empty() && active.size() != images.size())
        throw std::invalid_argument("forward_batch: need one patch set per image");

    const std::size_t n_patches = cfg_.num_patches();
    ForwardOutput<T> out;
    std::vector<Tensor<T>> parts;
    parts.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto p = patch_split(images[i], cfg_);
        if (!active.empty() && !active[i].empty()) {
            for (auto idx : active[i])
                if (idx >= n_patches) throw std::invalid_argument("forward: patch index out of range");
            if (active[i].size() != n_patches) p = ad::gather_rows(p, std::span<const std::size_t>(active[i]));
        }
        out.segments.push_back(p.size(0));
        parts.push_back(std::move(p));
    }
    auto x = parts.size() == 1 ? parts[0] : ad::concat<T>(parts, 0);
    x = ad::conv1d(x, embed_.conv_w, embed_.conv_b, out.segments);
    x = ad::relu(ad::batchnorm1d(x, embed_.bn_gamma, embed_.bn_beta, embed_.bn_mean, embed_.bn_var, training_,
                                      static_cast<T>(bn_momentum_)));
    if (noise.stddev > T(0)) {
        if (!noise.rng) throw std::invalid_argument("forward: feature noise requested without an rng");
        x = ad::gaussian_noise_add(x, noise.stddev, *noise.rng);
    }
    const T lam = lambda();
    for (const auto& blk : blocks_) x = encoder_block(x, blk, lam, out.segments);
    out.tokens = x;
    out.features = ad::segment_mean(x, out.segments);
    out.logits = ad::add_bias(ad::matmul(out.features, head_w_), head_b_);
    return out;
}

template <class T>
Tensor<T> DiffTransformer<T>::forward(const Tensor<T>& image, const PatchSet* active, FeatureNoise<T> noise) {
    if (active && active->empty()) throw std::invalid_argument("forward: empty active set");
    std::vector<PatchSet> sets;
    if (active) sets.push_back(*active);
    auto out = forward_batch(std::span<const Tensor<T>>(&image, 1), sets, noise);
    return ad::reshape(out.logits, {cfg_.num_classes});
}

template <class T>
int argmax(std::span<const T> values) {
    if (values.empty()) throw std::invalid_argument("argmax: empty input");
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

template <class T>
int predict(DiffTransformer<T>& m, const Tensor<T>& image) {
    auto logits = m.forward(image);
    auto probs = ad::softmax(ad::reshape(logits, {1, logits.numel()}));
    return argmax(probs.data());
}

std::uint64_t FlopsBreakdown::total() const {
    std::uint64_t t = 0;
    for (const auto& it : items) t += it.flops;
    return t;
}

FlopsBreakdown count_flops(const ModelConfig& cfg) {
    cfg.validate();
    using u64 = std::uint64_t;
    const u64 n = cfg.num_patches(), c = cfg.embed_dim, d = cfg.head_dim(), h = cfg.heads, hid = cfg.hidden_dim();
    const u64 pd = cfg.patch_dim(), k = cfg.conv_kernel, cls = cfg.num_classes;
    constexpr u64 kNorm = 5;

    FlopsBreakdown b;
    b.items.push_back({"embed.conv", 2 * n * pd * k * c});
    b.items.push_back({"embed.bn", kNorm * n * c});
    b.items.push_back({"embed.relu", n * c});
    for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
        const std::string pre = "blocks." + std::to_string(blk) + ".";
        b.items.push_back({pre + "ln1", kNorm * n * c});
        b.items.push_back({pre + "attn.qkv", h * (2 * n * c * (2 * d) * 2 + 2 * n * c * d)});
        b.items.push_back({pre + "attn.scores", h * 2 * (2 * n * n * d + n * n)});
        b.items.push_back({pre + "attn.softmax", h * 2 * kNorm * n * n});
        b.items.push_back({pre + "attn.diff", h * 2 * n * n});
        b.items.push_back({pre + "attn.values", h * 2 * n * n * d});
        b.items.push_back({pre + "attn.head_ln", h * (kNorm * n * d + n * d)});
        b.items.push_back({pre + "attn.wo", 2 * n * c * c});
        b.items.push_back({pre + "residual1", n * c});
        b.items.push_back({pre + "ln2", kNorm * n * c});
        b.items.push_back({pre + "ffn.w1w2", 2 * (2 * n * c * hid)});
        b.items.push_back({pre + "ffn.silu_gate", kNorm * n * hid + n * hid});
        b.items.push_back({pre + "ffn.w3", 2 * n * hid * c});
        b.items.push_back({pre + "residual2", n * c});
    }
    b.items.push_back({"gap", n * c + c});
    b.items.push_back({"head.fc", 2 * c * cls});
    return b;
}

// ---- explicit instantiation ----------------------------------------------------

#define JAMIDENT_INSTANTIATE_DIFFNET(T)                                                                           \
    template class DiffTransformer<T>;                                                                            \
    template Tensor<T> patch_split(const Tensor<T>&, const ModelConfig&);                                         \
    template std::vector<T> patch_merge(std::span<const T>, const ModelConfig&);                                  \
    template Tensor<T> diff_attention(const Tensor<T>&, const DiffHead<T>&, T);                                   \
    template Tensor<T> diff_scores(const Tensor<T>&, const DiffHead<T>&, T);                                      \
    template Tensor<T> multi_diff(const Tensor<T>&, const MultiDiffLayer<T>&, T, std::span<const std::size_t>);   \
    template Tensor<T> elu_block(const Tensor<T>&, const EluLayer<T>&);                                           \
    template Tensor<T> encoder_block(const Tensor<T>&, const EncoderBlock<T>&, T, std::span<const std::size_t>); \
    template int argmax(std::span<const T>);                                                                      \
    template int predict(DiffTransformer<T>&, const Tensor<T>&);

JAMIDENT_INSTANTIATE_DIFFNET(float)
JAMIDENT_INSTANTIATE_DIFFNET(double)

template DiffTransformer<double> DiffTransformer<float>::cast<double>() const;
template DiffTransformer<float> DiffTransformer<double>::cast<float>() const;
template DiffTransformer<float> DiffTransformer<float>::cast<float>() const;
template DiffTransformer<double> DiffTransformer<double>::cast<double>() const;

#undef JAMIDENT_INSTANTIATE_DIFFNET

} // namespace jamident::diffnet
