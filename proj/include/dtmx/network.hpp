#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtmx/tensor.hpp"

namespace dtmx {

enum class LayerKind { Conv3d, Relu, MaxPool3d, GlobalAvgPool, Dense, Sigmoid };

std::string layerKindName(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;

    // conv3d
    std::array<int64_t, 3> kernel{0, 0, 0};
    std::array<int64_t, 3> stride{1, 1, 1};
    std::array<int64_t, 3> pad{0, 0, 0};
    int64_t inChannels = 0;
    int64_t outChannels = 0;
    bool camTarget = false;

    // maxpool3d
    std::array<int64_t, 3> window{0, 0, 0};
    std::array<int64_t, 3> poolStride{0, 0, 0};

    // dense
    int64_t denseIn = 0;
    int64_t denseOut = 0;
};

LayerSpec conv3dLayer(std::array<int64_t, 3> kernel, int64_t inChannels, int64_t outChannels,
                      std::array<int64_t, 3> stride = {1, 1, 1},
                      std::array<int64_t, 3> pad = {0, 0, 0}, bool camTarget = false);
LayerSpec reluLayer();
LayerSpec maxPool3dLayer(std::array<int64_t, 3> window, std::array<int64_t, 3> stride);
LayerSpec globalAveragePoolLayer();
LayerSpec denseLayer(int64_t in, int64_t out);
LayerSpec sigmoidLayer();

/// Ordered layer stack over a single-channel 3D input. Shapes must compose
/// and exactly one conv3d layer carries the cam_target marker.
struct NetworkSpec {
    std::array<int64_t, 3> inputExtents{0, 0, 0};  // D, H, W
    std::vector<LayerSpec> layers;

    void validate() const;
    int camLayer() const;  // index of the cam_target conv layer
    /// shapes[0] is the (1,D,H,W) input shape; shapes[i+1] the output of layer i.
    std::vector<std::vector<int64_t>> activationShapes() const;
    std::vector<int64_t> outputShape() const;

    /// Default architecture: conv(3x3x3,1->8,pad1) relu maxpool(2)
    /// conv(3x3x3,8->16,pad1,cam) relu gap dense(16->1).
    static NetworkSpec defaultSpec(std::array<int64_t, 3> inputExtents);
};

struct NetParams {
    std::vector<Tensor> weight;  // one slot per layer; empty if the layer has none
    std::vector<Tensor> bias;
    int64_t parameterCount() const;
};

/// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, from the given seed.
NetParams glorotInit(const NetworkSpec& spec, uint64_t seed);

struct NetGrads {
    std::vector<Tensor> weight;
    std::vector<Tensor> bias;
    Tensor input;  // d(output)/d(input volume)
    Tensor cam;    // d(output)/d(cam layer output)
};

/// Per-forward cache of activations plus pooling argmax indices; consumed by
/// backward and by Grad-CAM's activation capture.
class NetTape {
public:
    bool hasForward() const { return forwardDone_; }
    const Tensor& input() const { return input_; }
    const Tensor& activation(int layer) const { return acts_[static_cast<size_t>(layer)]; }
    const Tensor& camActivation() const;

private:
    friend class NetworkEval;
    const NetworkSpec* spec_ = nullptr;
    bool forwardDone_ = false;
    Tensor input_;
    std::vector<Tensor> acts_;
    std::vector<std::vector<int64_t>> poolArgmax_;  // per layer; flat input index per output element
};

/// Forward/backward evaluator with reusable im2col scratch. One instance per
/// thread; tensors and tapes themselves are single-writer values.
class NetworkEval {
public:
    explicit NetworkEval(const NetworkSpec& spec);

    const NetworkSpec& spec() const { return *spec_; }

    Tensor forward(const NetParams& params, const Tensor& input, NetTape* tape = nullptr) const;
    /// Forward for specs whose output is a single value.
    double forwardScalar(const NetParams& params, const Tensor& input, NetTape* tape = nullptr) const;

    /// Reverse pass from a scalar seed gradient on a scalar output.
    NetGrads backward(const NetParams& params, const NetTape& tape, double seed) const;
    /// Reverse pass from an arbitrary cotangent of the output.
    NetGrads backwardWithCotangent(const NetParams& params, const NetTape& tape,
                                   const Tensor& outGrad) const;

    /// Resumes the forward pass after layer `fromLayer` (whose output is
    /// `activation`); -1 resumes from the input. No tape is recorded.
    Tensor forwardFrom(const NetParams& params, int fromLayer, const Tensor& activation) const;
    /// Runs layers [0, lastLayer] and returns that layer's output.
    Tensor forwardUpTo(const NetParams& params, const Tensor& input, int lastLayer) const;

private:
    const NetworkSpec* spec_;
    std::vector<std::vector<int64_t>> shapes_;
    mutable std::vector<float> col_;  // im2col scratch
    mutable std::vector<float> col2_;

    Tensor applyLayer(int layer, const LayerSpec& ls, const NetParams& params, const Tensor& in,
                      NetTape* tape) const;
    Tensor runRange(const NetParams& params, int firstLayer, int lastLayer, const Tensor& in,
                    NetTape* tape) const;
};

}  // namespace dtmx
