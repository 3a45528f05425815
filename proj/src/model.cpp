#include "peftsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace peftsim {
namespace {

constexpr std::uint64_t kCheckpointMagic = 0x50534943'4B505431ULL;  // "PSICKPT1"

Matrix apply_activation(const Matrix& z, Activation act) {
    if (act == Activation::Identity) return z;
    Matrix out = z;
    for (double& v : out.data()) v = std::max(v, 0.0);
    return out;
}

}  // namespace

ToyModel make_toy_model(std::size_t d, std::size_t n_classes, RngStream& stream, bool full_ft) {
    ToyModel model;
    model.n_classes = n_classes;

    Layer body;
    body.w = random_normal_matrix(d, d, 1.0 / std::sqrt(static_cast<double>(d)), stream);
    body.bias.assign(d, 0.0);
    body.activation = Activation::ReLU;
    body.w_trainable = full_ft;
    body.bias_trainable = full_ft;

    Layer head;
    head.w = random_normal_matrix(n_classes, d, 1.0 / std::sqrt(static_cast<double>(d)), stream);
    head.bias.assign(n_classes, 0.0);
    head.activation = Activation::Identity;
    head.w_trainable = full_ft;
    head.bias_trainable = full_ft;

    model.layers = {std::move(body), std::move(head)};
    return model;
}

Matrix effective_weight(const Layer& layer) {
    return std::visit(
        [&](const auto& ad) -> Matrix {
            using T = std::decay_t<decltype(ad)>;
            if constexpr (std::is_same_v<T, std::monostate>) return layer.w;
            else if constexpr (std::is_same_v<T, RavanAdapter>) return layer.w + ravan_delta_w(ad);
            else if constexpr (std::is_same_v<T, VanillaLoraAdapter>)
                return layer.w + vanilla_delta_w(ad);
            else
                return layer.w + fedsb_delta_w(ad);
        },
        layer.adapter);
}

namespace {

Matrix layer_linear(const Layer& layer, const Matrix& x) {
    Matrix z = std::visit(
        [&](const auto& ad) -> Matrix {
            using T = std::decay_t<decltype(ad)>;
            if constexpr (std::is_same_v<T, std::monostate>) return matmul(layer.w, x);
            else if constexpr (std::is_same_v<T, RavanAdapter>) return ravan_forward(ad, layer.w, x);
            else if constexpr (std::is_same_v<T, VanillaLoraAdapter>)
                return matmul(layer.w, x) + matmul(ad.b, matmul(ad.a, x));
            else
                return matmul(layer.w, x) + matmul(ad.b, matmul(ad.core, matmul(ad.a, x)));
        },
        layer.adapter);
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += layer.bias[i];
    return z;
}

}  // namespace

Matrix forward_logits(const ToyModel& model, const Matrix& x_batch) {
    if (model.layers.empty()) throw ShapeError("forward_logits: empty model");
    if (x_batch.rows() != model.layers.front().w.cols())
        throw ShapeError("forward_logits: input dim mismatch");
    Matrix act = x_batch;
    for (const Layer& layer : model.layers)
        act = apply_activation(layer_linear(layer, act), layer.activation);
    return act;
}

double loss_and_grads(const ToyModel& model, const Matrix& x_batch, const std::vector<int>& labels,
                      ModelGrads* grads) {
    const std::size_t batch = x_batch.cols();
    if (labels.size() != batch) throw ShapeError("loss_and_grads: labels/batch mismatch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= model.n_classes)
            throw ShapeError("loss_and_grads: label out of range");

    // forward with caches
    std::vector<Matrix> inputs;   // input to each layer
    std::vector<Matrix> preacts;  // pre-activation z per layer
    Matrix act = x_batch;
    for (const Layer& layer : model.layers) {
        inputs.push_back(act);
        Matrix z = layer_linear(layer, act);
        preacts.push_back(z);
        act = apply_activation(z, layer.activation);
    }

    const Matrix& logits = act;
    double loss = 0.0;
    Matrix dlogits(logits.rows(), logits.cols());
    for (std::size_t j = 0; j < batch; ++j) {
        double mx = logits(0, j);
        for (std::size_t i = 1; i < logits.rows(); ++i) mx = std::max(mx, logits(i, j));
        double denom = 0.0;
        for (std::size_t i = 0; i < logits.rows(); ++i) denom += std::exp(logits(i, j) - mx);
        const std::size_t y = static_cast<std::size_t>(labels[j]);
        loss += -(logits(y, j) - mx - std::log(denom));
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const double p = std::exp(logits(i, j) - mx) / denom;
            dlogits(i, j) = (p - (i == y ? 1.0 : 0.0)) / static_cast<double>(batch);
        }
    }
    loss /= static_cast<double>(batch);
    if (grads == nullptr) return loss;

    grads->grad_w.assign(model.layers.size(), Matrix());
    grads->grad_bias.assign(model.layers.size(), {});
    grads->adapter_grads.assign(model.layers.size(), std::monostate{});

    Matrix upstream = dlogits;
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const Layer& layer = model.layers[li];
        Matrix dz = upstream;
        if (layer.activation == Activation::ReLU) {
            for (std::size_t i = 0; i < dz.size(); ++i)
                if (preacts[li].data()[i] <= 0.0) dz.data()[i] = 0.0;
        }
        if (layer.w_trainable) grads->grad_w[li] = matmul(dz, transpose(inputs[li]));
        if (layer.bias_trainable) {
            std::vector<double> db(layer.bias.size(), 0.0);
            for (std::size_t i = 0; i < dz.rows(); ++i)
                for (std::size_t j = 0; j < dz.cols(); ++j) db[i] += dz(i, j);
            grads->grad_bias[li] = std::move(db);
        }
        std::visit(
            [&](const auto& ad) {
                using T = std::decay_t<decltype(ad)>;
                if constexpr (std::is_same_v<T, RavanAdapter>)
                    grads->adapter_grads[li] = ravan_backward(ad, inputs[li], dz);
                else if constexpr (std::is_same_v<T, VanillaLoraAdapter>)
                    grads->adapter_grads[li] = vanilla_backward(ad, inputs[li], dz);
                else if constexpr (std::is_same_v<T, FedSbAdapter>)
                    grads->adapter_grads[li] = fedsb_backward(ad, inputs[li], dz);
            },
            layer.adapter);
        if (li > 0) upstream = matmul(transpose(effective_weight(layer)), dz);
    }
    return loss;
}

double accuracy(const ToyModel& model, const Matrix& x_batch, const std::vector<int>& labels) {
    Matrix logits = forward_logits(model, x_batch);
    std::size_t correct = 0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.rows(); ++i)
            if (logits(i, j) > logits(best, j)) best = i;
        if (best == static_cast<std::size_t>(labels[j])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.cols());
}

namespace {

// Shared traversal so collect/assign/flatten agree on the ordering.
template <typename FnMat, typename FnScalar>
void visit_trainable(const ToyModel& model, const ModelGrads* grads, FnMat&& on_matrix,
                     FnScalar&& on_scalar) {
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& layer = model.layers[li];
        if (layer.w_trainable) on_matrix(li, -1, &layer.w, grads ? &grads->grad_w[li] : nullptr);
        if (layer.bias_trainable) {
            for (std::size_t i = 0; i < layer.bias.size(); ++i)
                on_scalar(layer.bias[i], grads ? grads->grad_bias[li][i] : 0.0);
        }
        std::visit(
            [&](const auto& ad) {
                using T = std::decay_t<decltype(ad)>;
                if constexpr (std::is_same_v<T, RavanAdapter>) {
                    const auto* ag = grads ? std::get_if<AdapterGradients>(&grads->adapter_grads[li])
                                           : nullptr;
                    for (std::size_t hd = 0; hd < ad.h; ++hd) {
                        if (!ad.active_mask[hd]) continue;
                        on_matrix(li, static_cast<int>(hd), &ad.cores_h[hd],
                                  ag ? &ag->grad_cores[hd] : nullptr);
                        if (ad.trainable_scaling)
                            on_scalar(ad.scales_s[hd], ag ? ag->grad_scales[hd] : 0.0);
                    }
                } else if constexpr (std::is_same_v<T, VanillaLoraAdapter>) {
                    const auto* vg = grads ? std::get_if<VanillaGradients>(&grads->adapter_grads[li])
                                           : nullptr;
                    on_matrix(li, -2, &ad.b, vg ? &vg->grad_b : nullptr);
                    if (!ad.a_frozen) on_matrix(li, -3, &ad.a, vg ? &vg->grad_a : nullptr);
                } else if constexpr (std::is_same_v<T, FedSbAdapter>) {
                    const auto* cg =
                        grads ? std::get_if<Matrix>(&grads->adapter_grads[li]) : nullptr;
                    on_matrix(li, -4, &ad.core, cg);
                }
            },
            layer.adapter);
    }
}

}  // namespace

std::vector<double> collect_trainable(const ToyModel& model) {
    std::vector<double> flat;
    visit_trainable(
        model, nullptr,
        [&](std::size_t, int, const Matrix* m, const Matrix*) {
            flat.insert(flat.end(), m->data().begin(), m->data().end());
        },
        [&](double v, double) { flat.push_back(v); });
    return flat;
}

void assign_trainable(ToyModel& model, const std::vector<double>& flat) {
    std::size_t pos = 0;
    visit_trainable(
        model, nullptr,
        [&](std::size_t, int, const Matrix* m, const Matrix*) {
            auto* mut = const_cast<Matrix*>(m);
            if (pos + mut->size() > flat.size())
                throw ShapeError("assign_trainable: flat vector too short");
            std::copy(flat.begin() + pos, flat.begin() + pos + mut->size(), mut->data().begin());
            pos += mut->size();
        },
        [&](const double& v, double) {
            if (pos >= flat.size()) throw ShapeError("assign_trainable: flat vector too short");
            const_cast<double&>(v) = flat[pos++];
        });
    if (pos != flat.size()) throw ShapeError("assign_trainable: flat vector length mismatch");
}

std::vector<double> flatten_grads(const ToyModel& model, const ModelGrads& grads) {
    std::vector<double> flat;
    visit_trainable(
        model, &grads,
        [&](std::size_t, int, const Matrix* m, const Matrix* g) {
            if (g != nullptr && g->size() == m->size())
                flat.insert(flat.end(), g->data().begin(), g->data().end());
            else
                flat.insert(flat.end(), m->size(), 0.0);
        },
        [&](double, double g) { flat.push_back(g); });
    return flat;
}

void AdamState::step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam: param/grad size mismatch");
    if (first_moment.size() != params.size()) {
        first_moment.assign(params.size(), 0.0);
        second_moment.assign(params.size(), 0.0);
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        first_moment[i] = beta1 * first_moment[i] + (1.0 - beta1) * grads[i];
        second_moment[i] = beta2 * second_moment[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = first_moment[i] / bc1;
        const double vhat = second_moment[i] / bc2;
        params[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
    }
}

std::vector<Matrix> full_ft_delta(const ToyModel& before, const ToyModel& after) {
    if (before.layers.size() != after.layers.size())
        throw ShapeError("full_ft_delta: architecture mismatch");
    std::vector<Matrix> deltas;
    for (std::size_t i = 0; i < before.layers.size(); ++i) {
        if (!before.layers[i].w.same_shape(after.layers[i].w))
            throw ShapeError("full_ft_delta: layer shape mismatch");
        deltas.push_back(after.layers[i].w - before.layers[i].w);
    }
    return deltas;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw NumericError("checkpoint: truncated stream");
    return v;
}

void write_vec(std::ostream& os, const std::vector<double>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_vec(std::istream& is) {
    std::vector<double> v(read_u64(is));
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is) throw NumericError("checkpoint: truncated stream");
    return v;
}

}  // namespace

void save_model(std::ostream& os, const ToyModel& model) {
    write_u64(os, kCheckpointMagic);
    write_u64(os, 1);  // version
    write_u64(os, model.n_classes);
    write_u64(os, model.layers.size());
    for (const Layer& layer : model.layers) {
        write_matrix(os, layer.w);
        write_vec(os, layer.bias);
        write_u64(os, static_cast<std::uint64_t>(layer.activation));
        write_u64(os, (layer.w_trainable ? 1u : 0u) | (layer.bias_trainable ? 2u : 0u));
        write_u64(os, layer.adapter.index());
        std::visit(
            [&](const auto& ad) {
                using T = std::decay_t<decltype(ad)>;
                if constexpr (std::is_same_v<T, RavanAdapter>) write_ravan(os, ad);
                else if constexpr (std::is_same_v<T, VanillaLoraAdapter>) {
                    write_matrix(os, ad.b);
                    write_matrix(os, ad.a);
                    write_u64(os, ad.a_frozen ? 1 : 0);
                } else if constexpr (std::is_same_v<T, FedSbAdapter>) {
                    write_matrix(os, ad.b);
                    write_matrix(os, ad.core);
                    write_matrix(os, ad.a);
                }
            },
            layer.adapter);
    }
}

ToyModel load_model(std::istream& is) {
    if (read_u64(is) != kCheckpointMagic) throw NumericError("checkpoint: bad magic");
    if (read_u64(is) != 1) throw NumericError("checkpoint: unsupported version");
    ToyModel model;
    model.n_classes = read_u64(is);
    const std::uint64_t n_layers = read_u64(is);
    for (std::uint64_t i = 0; i < n_layers; ++i) {
        Layer layer;
        layer.w = read_matrix(is);
        layer.bias = read_vec(is);
        layer.activation = static_cast<Activation>(read_u64(is));
        const std::uint64_t flags = read_u64(is);
        layer.w_trainable = (flags & 1u) != 0;
        layer.bias_trainable = (flags & 2u) != 0;
        const std::uint64_t idx = read_u64(is);
        if (idx == 1) layer.adapter = read_ravan(is);
        else if (idx == 2) {
            VanillaLoraAdapter ad;
            ad.b = read_matrix(is);
            ad.a = read_matrix(is);
            ad.a_frozen = read_u64(is) != 0;
            layer.adapter = std::move(ad);
        } else if (idx == 3) {
            FedSbAdapter ad;
            ad.b = read_matrix(is);
            ad.core = read_matrix(is);
            ad.a = read_matrix(is);
            layer.adapter = std::move(ad);
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

}  // namespace peftsim
