#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <variant>
#include <vector>

#include "peftsim/adapters.hpp"
#include "peftsim/matrix.hpp"

namespace peftsim {

enum class Activation { Identity, ReLU };

using AdapterSlot = std::variant<std::monostate, RavanAdapter, VanillaLoraAdapter, FedSbAdapter>;

struct Layer {
    Matrix w;
    std::vector<double> bias;
    AdapterSlot adapter;  // monostate = plain layer
    Activation activation = Activation::Identity;
    bool w_trainable = false;
    bool bias_trainable = false;
};

// Desk-scale supervised model: adapted linear layer -> ReLU -> classifier
// head feeding softmax cross-entropy. In PEFT mode the backbone is frozen
// and only the adapter trains; Full-FT trains everything and has no adapter.
struct ToyModel {
    std::vector<Layer> layers;
    std::size_t n_classes = 0;
};

using AdapterGradSlot = std::variant<std::monostate, AdapterGradients, VanillaGradients, Matrix>;

struct ModelGrads {
    std::vector<Matrix> grad_w;                   // zero-sized when frozen
    std::vector<std::vector<double>> grad_bias;   // empty when frozen
    std::vector<AdapterGradSlot> adapter_grads;
};

// Backbone with a d x d first layer (the adapted matrix under study) and a
// fixed classifier head. Weights drawn from the given stream.
ToyModel make_toy_model(std::size_t d, std::size_t n_classes, RngStream& stream,
                        bool full_ft = false);

Matrix effective_weight(const Layer& layer);

Matrix forward_logits(const ToyModel& model, const Matrix& x_batch);

// Mean softmax cross-entropy; fills grads for every trainable parameter
// when grads != nullptr.
double loss_and_grads(const ToyModel& model, const Matrix& x_batch,
                      const std::vector<int>& labels, ModelGrads* grads);

double accuracy(const ToyModel& model, const Matrix& x_batch, const std::vector<int>& labels);

// Flat views over the currently trainable parameters (respecting head
// masks, frozen factors and the trainable_scaling flag). collect/assign
// and flatten_grads share one ordering.
std::vector<double> collect_trainable(const ToyModel& model);
void assign_trainable(ToyModel& model, const std::vector<double>& flat);
std::vector<double> flatten_grads(const ToyModel& model, const ModelGrads& grads);

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step_count = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;

    void step(std::vector<double>& params, const std::vector<double>& grads);
};

// W_after - W_before for every layer; throws on architecture mismatch.
std::vector<Matrix> full_ft_delta(const ToyModel& before, const ToyModel& after);

// Versioned checkpoint: backbone matrices plus adapter payloads.
void save_model(std::ostream& os, const ToyModel& model);
ToyModel load_model(std::istream& is);

}  // namespace peftsim
