#include "fad/elnet.hpp"

#include <cmath>

#include "fad/ops.hpp"

namespace fad {

Prediction parse_prediction(const std::string& s) {
    if (s == "epsilon") return Prediction::epsilon;
    if (s == "v") return Prediction::v;
    throw Error("unknown prediction '" + s + "' (expected epsilon|v)");
}

std::string to_string(Prediction p) { return p == Prediction::v ? "v" : "epsilon"; }

void validate(const ELNetConfig& cfg) {
    require(cfg.depth >= 1, "elnet: depth must be >= 1");
    require(cfg.clip_len % (std::size_t{1} << cfg.depth) == 0,
            "elnet: clip length " + std::to_string(cfg.clip_len) +
                " not divisible by 2^depth");
    require(cfg.groups >= 1 && cfg.base_width % cfg.groups == 0,
            "elnet: base_width must be divisible by groups");
    require(cfg.time_embed_dim >= 2 && cfg.time_embed_dim % 2 == 0,
            "elnet: time_embed_dim must be even");
    require(cfg.kernel % 2 == 1, "elnet: kernel must be odd");
    require(cfg.blocks_per_stage >= 1, "elnet: blocks_per_stage must be >= 1");
}

template <typename T>
nn::Tensor<T> timestep_embedding(std::size_t k, std::size_t dim) {
    require(dim >= 2 && dim % 2 == 0, "timestep embedding dim must be even");
    const std::size_t half = dim / 2;
    nn::Tensor<T> out({dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        const double arg = static_cast<double>(k) * freq;
        out[i] = static_cast<T>(std::sin(arg));
        out[half + i] = static_cast<T>(std::cos(arg));
    }
    return out;
}

template <typename T>
typename ELNet<T>::ConvBlock ELNet<T>::make_conv_block(const std::string& name,
                                                       std::size_t in, std::size_t out,
                                                       std::size_t k) {
    ConvBlock b;
    b.w = &store_->add(name + ".weight", nn::uniform_fan_in<T>({out, in, k}, in * k, *rng_));
    b.b = &store_->add(name + ".bias", nn::uniform_fan_in<T>({out}, in * k, *rng_));
    b.gamma = &store_->add(name + ".norm.gamma", nn::Tensor<T>::ones({out}));
    b.beta = &store_->add(name + ".norm.beta", nn::Tensor<T>({out}));
    return b;
}

template <typename T>
typename ELNet<T>::ResBlock ELNet<T>::make_res_block(const std::string& name, std::size_t in,
                                                     std::size_t out) {
    ResBlock b;
    b.in = in;
    b.out = out;
    b.first = make_conv_block(name + ".conv1", in, out, cfg_.kernel);
    const std::size_t td = cfg_.time_embed_dim;
    b.time_w = &store_->add(name + ".time.weight", nn::uniform_fan_in<T>({out, td}, td, *rng_));
    b.time_b = &store_->add(name + ".time.bias", nn::uniform_fan_in<T>({out}, td, *rng_));
    b.second = make_conv_block(name + ".conv2", out, out, cfg_.kernel);
    if (in != out) {
        b.skip_w = &store_->add(name + ".skip.weight", nn::uniform_fan_in<T>({out, in, 1}, in, *rng_));
        b.skip_b = &store_->add(name + ".skip.bias", nn::uniform_fan_in<T>({out}, in, *rng_));
    }
    return b;
}

template <typename T>
ELNet<T>::ELNet(const ELNetConfig& cfg, const Schedule& sched, nn::ParameterStore<T>& store,
                std::mt19937_64& rng)
    : cfg_(cfg), alpha_bars_(sched.alpha_bars), store_(&store), rng_(&rng) {
    validate(cfg_);
    const std::size_t td = cfg_.time_embed_dim;
    time_w1_ = &store.add("elnet.time.fc1.weight", nn::uniform_fan_in<T>({td, td}, td, rng));
    time_b1_ = &store.add("elnet.time.fc1.bias", nn::uniform_fan_in<T>({td}, td, rng));
    time_w2_ = &store.add("elnet.time.fc2.weight", nn::uniform_fan_in<T>({td, td}, td, rng));
    time_b2_ = &store.add("elnet.time.fc2.bias", nn::uniform_fan_in<T>({td}, td, rng));

    std::size_t ch = cfg_.in_channels();
    for (std::size_t s = 0; s < cfg_.depth; ++s) {
        const std::size_t w = cfg_.stage_width(s);
        std::vector<ResBlock> blocks;
        for (std::size_t r = 0; r < cfg_.blocks_per_stage; ++r) {
            blocks.push_back(make_res_block(
                "elnet.down" + std::to_string(s) + ".res" + std::to_string(r), ch, w));
            ch = w;
        }
        down_.push_back(std::move(blocks));
        const std::string p = "elnet.down" + std::to_string(s) + ".resample";
        Resample rs;
        rs.w = &store.add(p + ".weight", nn::uniform_fan_in<T>({ch, ch, 3}, ch * 3, rng));
        rs.b = &store.add(p + ".bias", nn::uniform_fan_in<T>({ch}, ch * 3, rng));
        downsample_.push_back(rs);
    }
    for (std::size_t r = 0; r < cfg_.blocks_per_stage; ++r) {
        mid_.push_back(make_res_block("elnet.mid.res" + std::to_string(r), ch, ch));
    }
    up_.resize(cfg_.depth);
    upsample_.resize(cfg_.depth);
    for (std::size_t s = cfg_.depth; s-- > 0;) {
        const std::string p = "elnet.up" + std::to_string(s);
        Resample rs;
        rs.w = &store.add(p + ".resample.weight", nn::uniform_fan_in<T>({ch, ch, 3}, ch * 3, rng));
        rs.b = &store.add(p + ".resample.bias", nn::uniform_fan_in<T>({ch}, ch * 3, rng));
        upsample_[s] = rs;
        const std::size_t w = cfg_.stage_width(s);
        std::size_t in = ch + w;
        for (std::size_t r = 0; r < cfg_.blocks_per_stage; ++r) {
            up_[s].push_back(make_res_block(p + ".res" + std::to_string(r), in, w));
            in = w;
        }
        ch = w;
    }
    final_block_ = make_conv_block("elnet.final.block", ch, ch, cfg_.kernel);
    final_w_ = &store.add("elnet.final.weight",
                          nn::uniform_fan_in<T>({cfg_.motion_dim, ch, 1}, ch, rng));
    final_b_ = &store.add("elnet.final.bias", nn::Tensor<T>({cfg_.motion_dim}));
    store_ = nullptr;
    rng_ = nullptr;
}

template <typename T>
nn::Var<T> ELNet<T>::conv_block(nn::Graph<T>& g, const ConvBlock& b, nn::Var<T> x) const {
    nn::Var<T> h = nn::conv1d(x, g.param(*b.w), g.param(*b.b), 1, cfg_.kernel / 2);
    h = nn::group_norm(h, cfg_.groups, g.param(*b.gamma), g.param(*b.beta));
    return nn::silu(h);
}

template <typename T>
nn::Var<T> ELNet<T>::res_block(nn::Graph<T>& g, const ResBlock& b, nn::Var<T> x,
                               nn::Var<T> temb) const {
    nn::Var<T> h = conv_block(g, b.first, x);
    h = nn::add_channel_bias(h, nn::linear(temb, g.param(*b.time_w), g.param(*b.time_b)));
    h = conv_block(g, b.second, h);
    nn::Var<T> skip = b.skip_w ? nn::conv1d(x, g.param(*b.skip_w), g.param(*b.skip_b), 1, 0) : x;
    return nn::add(h, skip);
}

template <typename T>
nn::Var<T> ELNet<T>::forward_head(nn::Graph<T>& g, nn::Var<T> xk,
                                  const std::vector<std::size_t>& ks, nn::Var<T> cond) const {
    require(xk.rank() == 3 && xk.dim(1) == cfg_.clip_len && xk.dim(2) == cfg_.motion_dim,
            "elnet: x_k must be [N," + std::to_string(cfg_.clip_len) + "," +
                std::to_string(cfg_.motion_dim) + "], got " + nn::shape_str(xk.shape()));
    require(cond.rank() == 3 && cond.dim(0) == xk.dim(0) && cond.dim(1) == cfg_.clip_len &&
                cond.dim(2) == cfg_.cond_dim,
            "elnet: condition must be [N," + std::to_string(cfg_.clip_len) + "," +
                std::to_string(cfg_.cond_dim) + "], got " + nn::shape_str(cond.shape()));
    const std::size_t n = xk.dim(0);
    require(ks.size() == n, "elnet: one timestep per item required");

    const std::size_t td = cfg_.time_embed_dim;
    nn::Tensor<T> emb({n, td});
    for (std::size_t i = 0; i < n; ++i) {
        require(ks[i] >= 1 && ks[i] <= alpha_bars_.size(),
                "elnet: timestep " + std::to_string(ks[i]) + " out of range");
        nn::Tensor<T> e = timestep_embedding<T>(ks[i], td);
        std::copy(e.storage().begin(), e.storage().end(), emb.ptr() + i * td);
    }
    nn::Var<T> temb = nn::linear(g.constant(std::move(emb)), g.param(*time_w1_),
                                 g.param(*time_b1_));
    temb = nn::linear(nn::silu(temb), g.param(*time_w2_), g.param(*time_b2_));
    temb = nn::silu(temb);

    nn::Var<T> h = nn::concat(nn::transpose_last2(xk), nn::transpose_last2(cond), 1);
    std::vector<nn::Var<T>> skips;
    for (std::size_t s = 0; s < cfg_.depth; ++s) {
        for (const auto& b : down_[s]) h = res_block(g, b, h, temb);
        skips.push_back(h);
        h = nn::conv1d(h, g.param(*downsample_[s].w), g.param(*downsample_[s].b), 2, 1);
    }
    for (const auto& b : mid_) h = res_block(g, b, h, temb);
    for (std::size_t s = cfg_.depth; s-- > 0;) {
        h = nn::upsample_nearest1d(h);
        h = nn::conv1d(h, g.param(*upsample_[s].w), g.param(*upsample_[s].b), 1, 1);
        nn::Var<T> skip = cfg_.use_skips ? skips[s] : g.constant(nn::Tensor<T>(skips[s].shape()));
        h = nn::concat(h, skip, 1);
        for (const auto& b : up_[s]) h = res_block(g, b, h, temb);
    }
    h = conv_block(g, final_block_, h);
    h = nn::conv1d(h, g.param(*final_w_), g.param(*final_b_), 1, 0);
    return nn::transpose_last2(h);
}

template <typename T>
nn::Var<T> ELNet<T>::forward(nn::Graph<T>& g, nn::Var<T> xk,
                             const std::vector<std::size_t>& ks, nn::Var<T> cond) const {
    nn::Var<T> u = forward_head(g, xk, ks, cond);
    if (cfg_.prediction == Prediction::epsilon) {
        return u;
    }
    const std::size_t n = xk.dim(0);
    std::vector<T> signal(n), noise(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ab = alpha_bars_[ks[i] - 1];
        signal[i] = static_cast<T>(std::sqrt(ab));
        noise[i] = static_cast<T>(std::sqrt(1.0 - ab));
    }
    return nn::add(nn::scale_items(u, signal), nn::scale_items(xk, noise));
}

template <typename T>
nn::Tensor<T> ELNet<T>::denoise(const nn::Tensor<T>& xk, std::size_t k,
                                const nn::Tensor<T>& cond) const {
    require(xk.rank() == 2 && cond.rank() == 2, "denoise: expected [l,56] and [l,d_m]");
    nn::Graph<T> g(nn::GradMode::disabled);
    nn::Var<T> x = g.constant(xk.reshaped({1, xk.dim(0), xk.dim(1)}));
    nn::Var<T> m = g.constant(cond.reshaped({1, cond.dim(0), cond.dim(1)}));
    return forward(g, x, {k}, m).value().reshaped(xk.shape());
}

template <typename T>
void ELNet<T>::zero_condition_pathway() {
    const ResBlock& first = down_.at(0).at(0);
    auto zero_cond_inputs = [this](nn::Parameter<T>* p) {
        // weight [out, in, k]: input channels >= motion_dim carry the condition
        const std::size_t out = p->value.dim(0), in = p->value.dim(1), k = p->value.dim(2);
        for (std::size_t o = 0; o < out; ++o) {
            for (std::size_t c = cfg_.motion_dim; c < in; ++c) {
                for (std::size_t j = 0; j < k; ++j) p->value(o, c, j) = T{0};
            }
        }
    };
    zero_cond_inputs(first.first.w);
    if (first.skip_w) zero_cond_inputs(first.skip_w);
}

namespace {

double conv1d_flops(std::size_t cin, std::size_t cout, std::size_t k, std::size_t len_out) {
    return 2.0 * static_cast<double>(cin * cout * k * len_out);
}

} // namespace

FlopCount count_flops(const ELNetConfig& cfg, const VisualEncoderConfig& visual,
                      const MelConfig& mel, std::size_t steps) {
    validate(cfg);
    validate(visual);
    FlopCount fc;
    fc.steps = steps;
    const double l = static_cast<double>(cfg.clip_len);

    std::size_t size = visual.image_size, in = visual.in_channels;
    double per_frame = 0.0;
    for (std::size_t w : visual.widths) {
        const std::size_t pad = visual.kernel / 2;
        size = (size + 2 * pad - visual.kernel) / 2 + 1;
        per_frame += 2.0 * static_cast<double>(in * w * visual.kernel * visual.kernel * size * size);
        in = w;
    }
    per_frame += 2.0 * static_cast<double>(in * visual.head_channels * size * size);
    fc.visual = per_frame * l;
    fc.audio = 2.0 * static_cast<double>(mel.n_mels * (mel.fft_size / 2 + 1)) * l;

    const std::size_t td = cfg.time_embed_dim;
    const std::size_t k = cfg.kernel;
    double d = 2.0 * 2.0 * static_cast<double>(td * td);
    auto res = [&](std::size_t cin, std::size_t cout, std::size_t len) {
        double f = conv1d_flops(cin, cout, k, len) + conv1d_flops(cout, cout, k, len) +
                   2.0 * static_cast<double>(td * cout);
        if (cin != cout) f += conv1d_flops(cin, cout, 1, len);
        return f;
    };
    std::size_t ch = cfg.in_channels(), len = cfg.clip_len;
    for (std::size_t s = 0; s < cfg.depth; ++s) {
        const std::size_t w = cfg.stage_width(s);
        for (std::size_t r = 0; r < cfg.blocks_per_stage; ++r) {
            d += res(ch, w, len);
            ch = w;
        }
        len /= 2;
        d += conv1d_flops(ch, ch, 3, len);
    }
    for (std::size_t r = 0; r < cfg.blocks_per_stage; ++r) d += res(ch, ch, len);
    for (std::size_t s = cfg.depth; s-- > 0;) {
        len *= 2;
        d += conv1d_flops(ch, ch, 3, len);
        const std::size_t w = cfg.stage_width(s);
        std::size_t cin = ch + w;
        for (std::size_t r = 0; r < cfg.blocks_per_stage; ++r) {
            d += res(cin, w, len);
            cin = w;
        }
        ch = w;
    }
    d += conv1d_flops(ch, ch, k, len) + conv1d_flops(ch, cfg.motion_dim, 1, len);
    fc.denoiser_pass = d;
    return fc;
}

template nn::Tensor<float> timestep_embedding<float>(std::size_t, std::size_t);
template nn::Tensor<double> timestep_embedding<double>(std::size_t, std::size_t);
template class ELNet<float>;
template class ELNet<double>;

} // namespace fad
