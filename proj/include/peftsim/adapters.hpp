#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "peftsim/linalg.hpp"
#include "peftsim/matrix.hpp"
#include "peftsim/rng.hpp"

namespace peftsim {

enum class InitSchemeTag { RandomNormal, GramSchmidt, Constant, SharedSubspace };

struct InitScheme {
    InitSchemeTag tag = InitSchemeTag::RandomNormal;
    // 0 selects the default 1/sqrt(dim) scaling
    double sigma_b = 0.0;
    double sigma_a = 0.0;
};

// Multi-head adapter: delta W = sum_i s_i * B_i H_i A_i with frozen bases
// B_i, A_i and trainable cores H_i plus per-head scaling factors s_i.
struct RavanAdapter {
    std::size_t d_out = 0;
    std::size_t d_in = 0;
    std::size_t r = 0;
    std::size_t h = 0;
    std::vector<Matrix> bases_b;   // h matrices d_out x r, frozen
    std::vector<Matrix> bases_a;   // h matrices r x d_in, frozen
    std::vector<Matrix> cores_h;   // h matrices r x r, trainable
    std::vector<double> scales_s;  // h scalars
    bool trainable_scaling = true;
    std::vector<bool> active_mask;  // true = head trainable this round

    std::size_t trainable_params() const;
};

// delta W = B A; FFA-LoRA freezes A at initialization.
struct VanillaLoraAdapter {
    Matrix b;  // d_out x r
    Matrix a;  // r x d_in
    bool a_frozen = false;
};

// delta W = B core A with frozen B, A from an SVD warm start.
struct FedSbAdapter {
    Matrix b;     // d_out x r, frozen
    Matrix core;  // r x r, trainable
    Matrix a;     // r x d_in, frozen
};

struct AdapterGradients {
    std::vector<Matrix> grad_cores;   // one r x r per head, masked heads zero
    std::vector<double> grad_scales;  // zero when trainable_scaling is off
};

struct VanillaGradients {
    Matrix grad_b;
    Matrix grad_a;  // zero when a_frozen
};

RavanAdapter init_ravan(std::size_t d_out, std::size_t d_in, std::size_t r, std::size_t h,
                        const InitScheme& scheme, RngStream& stream);

// (W + sum_i s_i B_i H_i A_i) x, without materializing delta W.
Matrix ravan_forward(const RavanAdapter& adapter, const Matrix& w, const Matrix& x);

Matrix ravan_delta_w(const RavanAdapter& adapter);
Matrix vanilla_delta_w(const VanillaLoraAdapter& adapter);
Matrix fedsb_delta_w(const FedSbAdapter& adapter);

// upstream is dL/d(output), d_out x batch. G = upstream x^T is the loss
// gradient w.r.t. the effective weight; dL/dH_i = s_i B_i^T G A_i^T and
// dL/ds_i = <B_i H_i A_i, G>_F.
AdapterGradients ravan_backward(const RavanAdapter& adapter, const Matrix& x,
                                const Matrix& upstream);
VanillaGradients vanilla_backward(const VanillaLoraAdapter& adapter, const Matrix& x,
                                  const Matrix& upstream);
Matrix fedsb_backward(const FedSbAdapter& adapter, const Matrix& x, const Matrix& upstream);

// min(floor(sqrt(N h)), d): the multi-head augmented-LoRA rank ceiling.
std::size_t rank_bound_multihead(std::size_t n_budget, std::size_t h, std::size_t d);
// min(N / 2d, d), independent of the head count.
std::size_t rank_bound_vanilla_multihead(std::size_t n_budget, std::size_t h, std::size_t d);

// Truncated-SVD warm start: B = U[:, :r], core = Sigma[:r, :r], A = Vt[:r, :].
FedSbAdapter init_fedsb(const Matrix& delta_w_full, std::size_t r);

// Flat binary layout: u64 rows, u64 cols, then row-major f64, little-endian.
void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);
void write_ravan(std::ostream& os, const RavanAdapter& a);
RavanAdapter read_ravan(std::istream& is);

}  // namespace peftsim
