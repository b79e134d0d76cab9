#include "dtmx/network.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dtmx/common.hpp"

extern "C" void openblas_set_num_threads(int);

namespace dtmx {

namespace {

// BLAS threading would race with our own parallelFor workers and makes
// summation order depend on the machine; keep it serial.
struct BlasSerialInit {
    BlasSerialInit() { openblas_set_num_threads(1); }
};
const BlasSerialInit blasSerialInit;

std::array<int64_t, 3> convOutExtents(const std::array<int64_t, 3>& in, const LayerSpec& ls) {
    std::array<int64_t, 3> out{};
    for (int a = 0; a < 3; ++a)
        out[a] = (in[a] + 2 * ls.pad[a] - ls.kernel[a]) / ls.stride[a] + 1;
    return out;
}

std::array<int64_t, 3> poolOutExtents(const std::array<int64_t, 3>& in, const LayerSpec& ls) {
    std::array<int64_t, 3> out{};
    for (int a = 0; a < 3; ++a) out[a] = (in[a] - ls.window[a]) / ls.poolStride[a] + 1;
    return out;
}

std::string layerTag(int i, const LayerSpec& ls) {
    return "layer " + std::to_string(i) + " (" + layerKindName(ls.kind) + "): ";
}

// Unpacks the rank-4 input of a conv into a (Cin*kd*kh*kw) x (Do*Ho*Wo)
// row-major matrix; out-of-range (padding) positions stay zero.
void im2col(const Tensor& in, const LayerSpec& ls, const std::array<int64_t, 3>& outExt,
            std::vector<float>& col) {
    const int64_t Cin = in.extent(0), Di = in.extent(1), Hi = in.extent(2), Wi = in.extent(3);
    const int64_t Do = outExt[0], Ho = outExt[1], Wo = outExt[2];
    const int64_t N = Do * Ho * Wo;
    col.assign(static_cast<size_t>(Cin * ls.kernel[0] * ls.kernel[1] * ls.kernel[2] * N), 0.0f);
    const float* src = in.data();
    int64_t row = 0;
    for (int64_t c = 0; c < Cin; ++c) {
        const float* chan = src + c * Di * Hi * Wi;
        for (int64_t kz = 0; kz < ls.kernel[0]; ++kz)
            for (int64_t ky = 0; ky < ls.kernel[1]; ++ky)
                for (int64_t kx = 0; kx < ls.kernel[2]; ++kx, ++row) {
                    float* dst = col.data() + row * N;
                    for (int64_t od = 0; od < Do; ++od) {
                        const int64_t iz = od * ls.stride[0] - ls.pad[0] + kz;
                        if (iz < 0 || iz >= Di) {
                            dst += Ho * Wo;
                            continue;
                        }
                        for (int64_t oh = 0; oh < Ho; ++oh, dst += Wo) {
                            const int64_t iy = oh * ls.stride[1] - ls.pad[1] + ky;
                            if (iy < 0 || iy >= Hi) continue;
                            const float* line = chan + (iz * Hi + iy) * Wi;
                            if (ls.stride[2] == 1) {
                                const int64_t lo = std::max<int64_t>(0, ls.pad[2] - kx);
                                const int64_t hi = std::min(Wo, Wi + ls.pad[2] - kx);
                                for (int64_t ow = lo; ow < hi; ++ow)
                                    dst[ow] = line[ow - ls.pad[2] + kx];
                            } else {
                                for (int64_t ow = 0; ow < Wo; ++ow) {
                                    const int64_t ix = ow * ls.stride[2] - ls.pad[2] + kx;
                                    if (ix >= 0 && ix < Wi) dst[ow] = line[ix];
                                }
                            }
                        }
                    }
                }
    }
}

// Scatter-add transpose of im2col: accumulates a column-matrix gradient back
// onto the conv input gradient.
void col2im(const std::vector<float>& col, const LayerSpec& ls,
            const std::array<int64_t, 3>& outExt, Tensor& dIn) {
    const int64_t Cin = dIn.extent(0), Di = dIn.extent(1), Hi = dIn.extent(2),
                  Wi = dIn.extent(3);
    const int64_t Do = outExt[0], Ho = outExt[1], Wo = outExt[2];
    const int64_t N = Do * Ho * Wo;
    float* out = dIn.data();
    int64_t row = 0;
    for (int64_t c = 0; c < Cin; ++c) {
        float* chan = out + c * Di * Hi * Wi;
        for (int64_t kz = 0; kz < ls.kernel[0]; ++kz)
            for (int64_t ky = 0; ky < ls.kernel[1]; ++ky)
                for (int64_t kx = 0; kx < ls.kernel[2]; ++kx, ++row) {
                    const float* src = col.data() + row * N;
                    for (int64_t od = 0; od < Do; ++od) {
                        const int64_t iz = od * ls.stride[0] - ls.pad[0] + kz;
                        if (iz < 0 || iz >= Di) {
                            src += Ho * Wo;
                            continue;
                        }
                        for (int64_t oh = 0; oh < Ho; ++oh, src += Wo) {
                            const int64_t iy = oh * ls.stride[1] - ls.pad[1] + ky;
                            if (iy < 0 || iy >= Hi) continue;
                            float* line = chan + (iz * Hi + iy) * Wi;
                            for (int64_t ow = 0; ow < Wo; ++ow) {
                                const int64_t ix = ow * ls.stride[2] - ls.pad[2] + kx;
                                if (ix >= 0 && ix < Wi) line[ix] += src[ow];
                            }
                        }
                    }
                }
    }
}

void checkParamShape(int i, const LayerSpec& ls, const Tensor& got,
                     const std::vector<int64_t>& want, const char* what) {
    if (got.shape() == want) return;
    Tensor probe = Tensor::zeros(want);
    throw ConfigError(layerTag(i, ls) + what + " shape " + got.shapeString() + ", expected " +
                      probe.shapeString());
}

}  // namespace

std::string layerKindName(LayerKind k) {
    switch (k) {
        case LayerKind::Conv3d: return "conv3d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool3d: return "maxpool3d";
        case LayerKind::GlobalAvgPool: return "global_average_pool";
        case LayerKind::Dense: return "dense";
        case LayerKind::Sigmoid: return "sigmoid";
    }
    return "unknown";
}

LayerSpec conv3dLayer(std::array<int64_t, 3> kernel, int64_t inChannels, int64_t outChannels,
                      std::array<int64_t, 3> stride, std::array<int64_t, 3> pad, bool camTarget) {
    LayerSpec ls;
    ls.kind = LayerKind::Conv3d;
    ls.kernel = kernel;
    ls.stride = stride;
    ls.pad = pad;
    ls.inChannels = inChannels;
    ls.outChannels = outChannels;
    ls.camTarget = camTarget;
    return ls;
}

LayerSpec reluLayer() {
    LayerSpec ls;
    ls.kind = LayerKind::Relu;
    return ls;
}

LayerSpec maxPool3dLayer(std::array<int64_t, 3> window, std::array<int64_t, 3> stride) {
    LayerSpec ls;
    ls.kind = LayerKind::MaxPool3d;
    ls.window = window;
    ls.poolStride = stride;
    return ls;
}

LayerSpec globalAveragePoolLayer() {
    LayerSpec ls;
    ls.kind = LayerKind::GlobalAvgPool;
    return ls;
}

LayerSpec denseLayer(int64_t in, int64_t out) {
    LayerSpec ls;
    ls.kind = LayerKind::Dense;
    ls.denseIn = in;
    ls.denseOut = out;
    return ls;
}

LayerSpec sigmoidLayer() {
    LayerSpec ls;
    ls.kind = LayerKind::Sigmoid;
    return ls;
}

std::vector<std::vector<int64_t>> NetworkSpec::activationShapes() const {
    for (int a = 0; a < 3; ++a)
        if (inputExtents[a] < 1)
            throw ConfigError("network input extents must be positive, got " +
                              std::to_string(inputExtents[0]) + "x" +
                              std::to_string(inputExtents[1]) + "x" +
                              std::to_string(inputExtents[2]));
    if (layers.empty()) throw ConfigError("network has no layers");

    std::vector<std::vector<int64_t>> shapes;
    shapes.push_back({1, inputExtents[0], inputExtents[1], inputExtents[2]});
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& ls = layers[i];
        const std::vector<int64_t>& in = shapes.back();
        std::string tag = layerTag(static_cast<int>(i), ls);
        switch (ls.kind) {
            case LayerKind::Conv3d: {
                if (in.size() != 4)
                    throw ConfigError(tag + "expects a rank-4 input, got rank " +
                                      std::to_string(in.size()));
                if (in[0] != ls.inChannels)
                    throw ConfigError(tag + "in_channels " + std::to_string(ls.inChannels) +
                                      " but input has " + std::to_string(in[0]) + " channels");
                if (ls.outChannels < 1) throw ConfigError(tag + "out_channels must be positive");
                std::array<int64_t, 3> ext{in[1], in[2], in[3]};
                for (int a = 0; a < 3; ++a) {
                    if (ls.kernel[a] < 1) throw ConfigError(tag + "kernel extents must be positive");
                    if (ls.stride[a] < 1) throw ConfigError(tag + "stride must be positive");
                    if (ls.pad[a] < 0) throw ConfigError(tag + "padding must be non-negative");
                    if (ls.kernel[a] > ext[a] + 2 * ls.pad[a])
                        throw ConfigError(tag + "kernel extent " + std::to_string(ls.kernel[a]) +
                                          " exceeds padded input extent " +
                                          std::to_string(ext[a] + 2 * ls.pad[a]));
                }
                std::array<int64_t, 3> out = convOutExtents(ext, ls);
                shapes.push_back({ls.outChannels, out[0], out[1], out[2]});
                break;
            }
            case LayerKind::MaxPool3d: {
                if (in.size() != 4)
                    throw ConfigError(tag + "expects a rank-4 input, got rank " +
                                      std::to_string(in.size()));
                std::array<int64_t, 3> ext{in[1], in[2], in[3]};
                for (int a = 0; a < 3; ++a) {
                    if (ls.window[a] < 1) throw ConfigError(tag + "window extents must be positive");
                    if (ls.poolStride[a] < 1) throw ConfigError(tag + "stride must be positive");
                    if (ls.window[a] > ext[a])
                        throw ConfigError(tag + "window extent " + std::to_string(ls.window[a]) +
                                          " exceeds input extent " + std::to_string(ext[a]));
                }
                std::array<int64_t, 3> out = poolOutExtents(ext, ls);
                shapes.push_back({in[0], out[0], out[1], out[2]});
                break;
            }
            case LayerKind::GlobalAvgPool: {
                if (in.size() != 4)
                    throw ConfigError(tag + "expects a rank-4 input, got rank " +
                                      std::to_string(in.size()));
                shapes.push_back({in[0]});
                break;
            }
            case LayerKind::Dense: {
                if (in.size() != 1)
                    throw ConfigError(tag + "expects a rank-1 input, got rank " +
                                      std::to_string(in.size()));
                if (in[0] != ls.denseIn)
                    throw ConfigError(tag + "in_features " + std::to_string(ls.denseIn) +
                                      " but input has " + std::to_string(in[0]));
                if (ls.denseOut < 1) throw ConfigError(tag + "out_features must be positive");
                shapes.push_back({ls.denseOut});
                break;
            }
            case LayerKind::Relu:
            case LayerKind::Sigmoid:
                shapes.push_back(in);
                break;
        }
        if (ls.camTarget && ls.kind != LayerKind::Conv3d)
            throw ConfigError(tag + "cam_target is only valid on conv3d layers");
    }
    return shapes;
}

void NetworkSpec::validate() const {
    activationShapes();
    int cam = -1;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].camTarget) continue;
        if (cam >= 0)
            throw ConfigError("multiple cam_target layers (" + std::to_string(cam) + " and " +
                              std::to_string(i) + ")");
        cam = static_cast<int>(i);
    }
    if (cam < 0) throw ConfigError("network has no cam_target conv3d layer");
}

int NetworkSpec::camLayer() const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].camTarget) return static_cast<int>(i);
    throw ConfigError("network has no cam_target conv3d layer");
}

std::vector<int64_t> NetworkSpec::outputShape() const { return activationShapes().back(); }

NetworkSpec NetworkSpec::defaultSpec(std::array<int64_t, 3> inputExtents) {
    NetworkSpec spec;
    spec.inputExtents = inputExtents;
    spec.layers = {
        conv3dLayer({3, 3, 3}, 1, 8, {1, 1, 1}, {1, 1, 1}),
        reluLayer(),
        maxPool3dLayer({2, 2, 2}, {2, 2, 2}),
        conv3dLayer({3, 3, 3}, 8, 16, {1, 1, 1}, {1, 1, 1}, true),
        reluLayer(),
        globalAveragePoolLayer(),
        denseLayer(16, 1),
    };
    return spec;
}

int64_t NetParams::parameterCount() const {
    int64_t n = 0;
    for (const Tensor& t : weight) n += t.numel();
    for (const Tensor& t : bias) n += t.numel();
    return n;
}

NetParams glorotInit(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    NetParams p;
    p.weight.resize(spec.layers.size());
    p.bias.resize(spec.layers.size());
    Rng rng(seed);
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& ls = spec.layers[i];
        if (ls.kind == LayerKind::Conv3d) {
            int64_t k3 = ls.kernel[0] * ls.kernel[1] * ls.kernel[2];
            double fanIn = static_cast<double>(ls.inChannels * k3);
            double fanOut = static_cast<double>(ls.outChannels * k3);
            double limit = std::sqrt(6.0 / (fanIn + fanOut));
            Tensor w = Tensor::zeros(
                {ls.outChannels, ls.inChannels, ls.kernel[0], ls.kernel[1], ls.kernel[2]});
            for (float& v : w.values()) v = static_cast<float>(rng.uniform(-limit, limit));
            p.weight[i] = std::move(w);
            p.bias[i] = Tensor::zeros({ls.outChannels});
        } else if (ls.kind == LayerKind::Dense) {
            double limit = std::sqrt(6.0 / static_cast<double>(ls.denseIn + ls.denseOut));
            Tensor w = Tensor::zeros({ls.denseOut, ls.denseIn});
            for (float& v : w.values()) v = static_cast<float>(rng.uniform(-limit, limit));
            p.weight[i] = std::move(w);
            p.bias[i] = Tensor::zeros({ls.denseOut});
        }
    }
    return p;
}

const Tensor& NetTape::camActivation() const {
    if (!forwardDone_) throw std::logic_error("camActivation before forward");
    return acts_[static_cast<size_t>(spec_->camLayer())];
}

NetworkEval::NetworkEval(const NetworkSpec& spec) : spec_(&spec) {
    spec.validate();
    shapes_ = spec.activationShapes();
}

Tensor NetworkEval::applyLayer(int layer, const LayerSpec& ls, const NetParams& params,
                               const Tensor& in, NetTape* tape) const {
    switch (ls.kind) {
        case LayerKind::Conv3d: {
            const Tensor& w = params.weight[static_cast<size_t>(layer)];
            const Tensor& b = params.bias[static_cast<size_t>(layer)];
            checkParamShape(layer, ls, w,
                            {ls.outChannels, ls.inChannels, ls.kernel[0], ls.kernel[1],
                             ls.kernel[2]},
                            "weight");
            checkParamShape(layer, ls, b, {ls.outChannels}, "bias");
            std::array<int64_t, 3> ext{in.extent(1), in.extent(2), in.extent(3)};
            std::array<int64_t, 3> outExt = convOutExtents(ext, ls);
            const int64_t K = ls.inChannels * ls.kernel[0] * ls.kernel[1] * ls.kernel[2];
            const int64_t N = outExt[0] * outExt[1] * outExt[2];
            im2col(in, ls, outExt, col_);
            Tensor out = Tensor::zeros({ls.outChannels, outExt[0], outExt[1], outExt[2]});
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(ls.outChannels),
                        static_cast<int>(N), static_cast<int>(K), 1.0f, w.data(),
                        static_cast<int>(K), col_.data(), static_cast<int>(N), 0.0f,
                        out.data(), static_cast<int>(N));
            float* o = out.data();
            for (int64_t c = 0; c < ls.outChannels; ++c) {
                const float bc = b[c];
                for (int64_t n = 0; n < N; ++n) o[c * N + n] += bc;
            }
            return out;
        }
        case LayerKind::Relu: {
            Tensor out = in;
            for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
            return out;
        }
        case LayerKind::MaxPool3d: {
            const int64_t C = in.extent(0), Di = in.extent(1), Hi = in.extent(2),
                          Wi = in.extent(3);
            std::array<int64_t, 3> outExt = poolOutExtents({Di, Hi, Wi}, ls);
            Tensor out = Tensor::zeros({C, outExt[0], outExt[1], outExt[2]});
            std::vector<int64_t>* argmax = nullptr;
            if (tape) {
                tape->poolArgmax_[static_cast<size_t>(layer)].assign(
                    static_cast<size_t>(out.numel()), 0);
                argmax = &tape->poolArgmax_[static_cast<size_t>(layer)];
            }
            const float* src = in.data();
            float* dst = out.data();
            int64_t oi = 0;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t od = 0; od < outExt[0]; ++od)
                    for (int64_t oh = 0; oh < outExt[1]; ++oh)
                        for (int64_t ow = 0; ow < outExt[2]; ++ow, ++oi) {
                            const int64_t z0 = od * ls.poolStride[0];
                            const int64_t y0 = oh * ls.poolStride[1];
                            const int64_t x0 = ow * ls.poolStride[2];
                            float best = -std::numeric_limits<float>::infinity();
                            int64_t bestIdx = 0;
                            for (int64_t dz = 0; dz < ls.window[0]; ++dz)
                                for (int64_t dy = 0; dy < ls.window[1]; ++dy)
                                    for (int64_t dx = 0; dx < ls.window[2]; ++dx) {
                                        const int64_t idx =
                                            ((c * Di + z0 + dz) * Hi + y0 + dy) * Wi + x0 + dx;
                                        if (src[idx] > best) {
                                            best = src[idx];
                                            bestIdx = idx;
                                        }
                                    }
                            dst[oi] = best;
                            if (argmax) (*argmax)[static_cast<size_t>(oi)] = bestIdx;
                        }
            return out;
        }
        case LayerKind::GlobalAvgPool: {
            const int64_t C = in.extent(0);
            const int64_t V = in.extent(1) * in.extent(2) * in.extent(3);
            Tensor out = Tensor::zeros({C});
            const float* src = in.data();
            for (int64_t c = 0; c < C; ++c) {
                double sum = 0.0;
                for (int64_t v = 0; v < V; ++v) sum += src[c * V + v];
                out[c] = static_cast<float>(sum / static_cast<double>(V));
            }
            return out;
        }
        case LayerKind::Dense: {
            const Tensor& w = params.weight[static_cast<size_t>(layer)];
            const Tensor& b = params.bias[static_cast<size_t>(layer)];
            checkParamShape(layer, ls, w, {ls.denseOut, ls.denseIn}, "weight");
            checkParamShape(layer, ls, b, {ls.denseOut}, "bias");
            Tensor out = Tensor::zeros({ls.denseOut});
            const float* x = in.data();
            const float* wd = w.data();
            for (int64_t o = 0; o < ls.denseOut; ++o) {
                double sum = b[o];
                for (int64_t f = 0; f < ls.denseIn; ++f)
                    sum += static_cast<double>(wd[o * ls.denseIn + f]) * x[f];
                out[o] = static_cast<float>(sum);
            }
            return out;
        }
        case LayerKind::Sigmoid: {
            Tensor out = in;
            for (float& v : out.values()) v = static_cast<float>(stableSigmoid(v));
            return out;
        }
    }
    throw std::logic_error("unhandled layer kind");
}

Tensor NetworkEval::runRange(const NetParams& params, int firstLayer, int lastLayer,
                             const Tensor& in, NetTape* tape) const {
    if (params.weight.size() != spec_->layers.size() || params.bias.size() != spec_->layers.size())
        throw ConfigError("parameter set has " + std::to_string(params.weight.size()) +
                          " layers, network has " + std::to_string(spec_->layers.size()));
    Tensor cur = in;
    for (int i = firstLayer; i <= lastLayer; ++i) {
        cur = applyLayer(i, spec_->layers[static_cast<size_t>(i)], params, cur, tape);
        if (tape) tape->acts_[static_cast<size_t>(i)] = cur;
    }
    return cur;
}

Tensor NetworkEval::forward(const NetParams& params, const Tensor& input, NetTape* tape) const {
    const auto& e = spec_->inputExtents;
    bool shapeOk = (input.rank() == 3 && input.extent(0) == e[0] && input.extent(1) == e[1] &&
                    input.extent(2) == e[2]) ||
                   (input.rank() == 4 && input.extent(0) == 1 && input.extent(1) == e[0] &&
                    input.extent(2) == e[1] && input.extent(3) == e[2]);
    if (!shapeOk)
        throw DataError("input volume " + input.shapeString() + " does not match network input (" +
                        std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" +
                        std::to_string(e[2]) + ")");
    Tensor x = input;
    x.reshape({1, e[0], e[1], e[2]});
    if (tape) {
        tape->spec_ = spec_;
        tape->forwardDone_ = false;
        tape->acts_.assign(spec_->layers.size(), Tensor());
        tape->poolArgmax_.assign(spec_->layers.size(), {});
        tape->input_ = x;
    }
    Tensor out = runRange(params, 0, static_cast<int>(spec_->layers.size()) - 1, x, tape);
    if (tape) tape->forwardDone_ = true;
    return out;
}

double NetworkEval::forwardScalar(const NetParams& params, const Tensor& input,
                                  NetTape* tape) const {
    Tensor out = forward(params, input, tape);
    if (out.numel() != 1)
        throw ConfigError("network output has " + std::to_string(out.numel()) +
                          " values, expected a single transformation value");
    return out[0];
}

NetGrads NetworkEval::backward(const NetParams& params, const NetTape& tape, double seed) const {
    const std::vector<int64_t>& outShape = shapes_.back();
    int64_t n = 1;
    for (int64_t s : outShape) n *= s;
    if (n != 1) throw std::logic_error("scalar-seed backward on a non-scalar output");
    Tensor cot = Tensor::full(outShape, static_cast<float>(seed));
    return backwardWithCotangent(params, tape, cot);
}

NetGrads NetworkEval::backwardWithCotangent(const NetParams& params, const NetTape& tape,
                                            const Tensor& outGrad) const {
    if (!tape.forwardDone_ || tape.spec_ != spec_)
        throw std::logic_error("backward requires a tape recorded by forward on this network");
    if (outGrad.shape() != shapes_.back())
        throw DataError("cotangent shape " + outGrad.shapeString() +
                        " does not match network output");

    const int L = static_cast<int>(spec_->layers.size());
    const int cam = spec_->camLayer();
    NetGrads g;
    g.weight.assign(static_cast<size_t>(L), Tensor());
    g.bias.assign(static_cast<size_t>(L), Tensor());

    Tensor cur = outGrad;  // gradient w.r.t. the output of layer i
    for (int i = L - 1; i >= 0; --i) {
        const LayerSpec& ls = spec_->layers[static_cast<size_t>(i)];
        if (i == cam) g.cam = cur;
        const Tensor& in = (i == 0) ? tape.input_ : tape.acts_[static_cast<size_t>(i - 1)];
        switch (ls.kind) {
            case LayerKind::Conv3d: {
                const Tensor& w = params.weight[static_cast<size_t>(i)];
                std::array<int64_t, 3> ext{in.extent(1), in.extent(2), in.extent(3)};
                std::array<int64_t, 3> outExt = convOutExtents(ext, ls);
                const int64_t K = ls.inChannels * ls.kernel[0] * ls.kernel[1] * ls.kernel[2];
                const int64_t N = outExt[0] * outExt[1] * outExt[2];
                const float* G = cur.data();

                Tensor db = Tensor::zeros({ls.outChannels});
                for (int64_t c = 0; c < ls.outChannels; ++c) {
                    double sum = 0.0;
                    for (int64_t nn = 0; nn < N; ++nn) sum += G[c * N + nn];
                    db[c] = static_cast<float>(sum);
                }
                g.bias[static_cast<size_t>(i)] = std::move(db);

                im2col(in, ls, outExt, col_);
                Tensor dw = Tensor::zeros(w.shape());
                cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans,
                            static_cast<int>(ls.outChannels), static_cast<int>(K),
                            static_cast<int>(N), 1.0f, G, static_cast<int>(N), col_.data(),
                            static_cast<int>(N), 0.0f, dw.data(), static_cast<int>(K));
                g.weight[static_cast<size_t>(i)] = std::move(dw);

                col2_.assign(static_cast<size_t>(K * N), 0.0f);
                cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(K),
                            static_cast<int>(N), static_cast<int>(ls.outChannels), 1.0f,
                            w.data(), static_cast<int>(K), G, static_cast<int>(N), 0.0f,
                            col2_.data(), static_cast<int>(N));
                Tensor dIn = Tensor::zeros(in.shape());
                col2im(col2_, ls, outExt, dIn);
                cur = std::move(dIn);
                break;
            }
            case LayerKind::Relu: {
                Tensor dIn = cur;
                const float* x = in.data();
                float* d = dIn.data();
                for (int64_t v = 0; v < dIn.numel(); ++v)
                    if (x[v] <= 0.0f) d[v] = 0.0f;
                cur = std::move(dIn);
                break;
            }
            case LayerKind::MaxPool3d: {
                Tensor dIn = Tensor::zeros(in.shape());
                const std::vector<int64_t>& argmax = tape.poolArgmax_[static_cast<size_t>(i)];
                float* d = dIn.data();
                const float* G = cur.data();
                for (size_t oi = 0; oi < argmax.size(); ++oi)
                    d[argmax[oi]] += G[oi];
                cur = std::move(dIn);
                break;
            }
            case LayerKind::GlobalAvgPool: {
                const int64_t C = in.extent(0);
                const int64_t V = in.extent(1) * in.extent(2) * in.extent(3);
                Tensor dIn = Tensor::zeros(in.shape());
                float* d = dIn.data();
                for (int64_t c = 0; c < C; ++c) {
                    const float gc = cur[c] / static_cast<float>(V);
                    for (int64_t v = 0; v < V; ++v) d[c * V + v] = gc;
                }
                cur = std::move(dIn);
                break;
            }
            case LayerKind::Dense: {
                const Tensor& w = params.weight[static_cast<size_t>(i)];
                Tensor dw = Tensor::zeros(w.shape());
                Tensor db = Tensor::zeros({ls.denseOut});
                Tensor dIn = Tensor::zeros(in.shape());
                const float* x = in.data();
                const float* wd = w.data();
                for (int64_t o = 0; o < ls.denseOut; ++o) {
                    const float go = cur[o];
                    db[o] = go;
                    for (int64_t f = 0; f < ls.denseIn; ++f)
                        dw.data()[static_cast<size_t>(o * ls.denseIn + f)] = go * x[f];
                }
                for (int64_t f = 0; f < ls.denseIn; ++f) {
                    double sum = 0.0;
                    for (int64_t o = 0; o < ls.denseOut; ++o)
                        sum += static_cast<double>(wd[o * ls.denseIn + f]) * cur[o];
                    dIn[f] = static_cast<float>(sum);
                }
                g.weight[static_cast<size_t>(i)] = std::move(dw);
                g.bias[static_cast<size_t>(i)] = std::move(db);
                cur = std::move(dIn);
                break;
            }
            case LayerKind::Sigmoid: {
                const Tensor& y = tape.acts_[static_cast<size_t>(i)];
                Tensor dIn = cur;
                float* d = dIn.data();
                const float* yv = y.data();
                for (int64_t v = 0; v < dIn.numel(); ++v) {
                    const double s = yv[v];
                    d[v] = static_cast<float>(d[v] * s * (1.0 - s));
                }
                cur = std::move(dIn);
                break;
            }
        }
    }
    cur.reshape({spec_->inputExtents[0], spec_->inputExtents[1], spec_->inputExtents[2]});
    g.input = std::move(cur);
    return g;
}

Tensor NetworkEval::forwardFrom(const NetParams& params, int fromLayer,
                                const Tensor& activation) const {
    const int L = static_cast<int>(spec_->layers.size());
    if (fromLayer < -1 || fromLayer >= L)
        throw std::logic_error("forwardFrom layer index out of range");
    const std::vector<int64_t>& want = shapes_[static_cast<size_t>(fromLayer + 1)];
    Tensor x = activation;
    if (fromLayer == -1 && activation.rank() == 3) x.reshape(want);
    if (x.shape() != want)
        throw DataError("activation shape " + x.shapeString() + " does not match layer " +
                        std::to_string(fromLayer) + " output");
    if (fromLayer + 1 >= L) return x;
    return runRange(params, fromLayer + 1, L - 1, x, nullptr);
}

Tensor NetworkEval::forwardUpTo(const NetParams& params, const Tensor& input,
                                int lastLayer) const {
    const int L = static_cast<int>(spec_->layers.size());
    if (lastLayer < 0 || lastLayer >= L)
        throw std::logic_error("forwardUpTo layer index out of range");
    const auto& e = spec_->inputExtents;
    Tensor x = input;
    if (x.rank() == 3) x.reshape({1, e[0], e[1], e[2]});
    if (x.shape() != shapes_[0])
        throw DataError("input volume " + input.shapeString() + " does not match network input");
    return runRange(params, 0, lastLayer, x, nullptr);
}

}  // namespace dtmx
