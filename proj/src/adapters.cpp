#include "peftsim/adapters.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace peftsim {
namespace {

double default_sigma(double requested, std::size_t dim) {
    return requested > 0.0 ? requested : 1.0 / std::sqrt(static_cast<double>(dim));
}

Matrix invertible_core(std::size_t r, RngStream& stream) {
    // resample until the condition number is tame
    for (int attempt = 0; attempt < 100; ++attempt) {
        Matrix c = random_normal_matrix(r, r, 1.0, stream);
        auto sv = svd(c).singular_values;
        if (sv.back() > 0.0 && sv.front() / sv.back() < 1e4) return c;
    }
    return Matrix::identity(r);
}

}  // namespace

std::size_t RavanAdapter::trainable_params() const {
    return h * r * r + (trainable_scaling ? h : 0);
}

RavanAdapter init_ravan(std::size_t d_out, std::size_t d_in, std::size_t r, std::size_t h,
                        const InitScheme& scheme, RngStream& stream) {
    if (r == 0 || h == 0) throw ShapeError("init_ravan: r and h must be positive");
    if (scheme.tag == InitSchemeTag::GramSchmidt && r * h > std::min(d_out, d_in))
        throw ShapeError("init_ravan: GramSchmidt needs r*h <= min(d_out, d_in)");

    RavanAdapter ad;
    ad.d_out = d_out;
    ad.d_in = d_in;
    ad.r = r;
    ad.h = h;
    ad.cores_h.assign(h, Matrix(r, r));
    ad.scales_s.assign(h, 1.0);
    ad.active_mask.assign(h, true);

    const double sb = default_sigma(scheme.sigma_b, d_out);
    const double sa = default_sigma(scheme.sigma_a, d_in);

    switch (scheme.tag) {
        case InitSchemeTag::RandomNormal:
            for (std::size_t i = 0; i < h; ++i) {
                ad.bases_b.push_back(random_normal_matrix(d_out, r, sb, stream));
                ad.bases_a.push_back(random_normal_matrix(r, d_in, sa, stream));
            }
            break;
        case InitSchemeTag::GramSchmidt: {
            Matrix bcat = gram_schmidt_columns(random_normal_matrix(d_out, r * h, sb, stream));
            Matrix acat = transpose(
                gram_schmidt_columns(transpose(random_normal_matrix(r * h, d_in, sa, stream))));
            for (std::size_t i = 0; i < h; ++i) {
                Matrix bi(d_out, r), ai(r, d_in);
                for (std::size_t row = 0; row < d_out; ++row)
                    for (std::size_t col = 0; col < r; ++col) bi(row, col) = bcat(row, i * r + col);
                for (std::size_t row = 0; row < r; ++row)
                    for (std::size_t col = 0; col < d_in; ++col) ai(row, col) = acat(i * r + row, col);
                ad.bases_b.push_back(std::move(bi));
                ad.bases_a.push_back(std::move(ai));
            }
            break;
        }
        case InitSchemeTag::Constant: {
            Matrix b0 = random_normal_matrix(d_out, r, sb, stream);
            Matrix a0 = random_normal_matrix(r, d_in, sa, stream);
            for (std::size_t i = 0; i < h; ++i) {
                ad.bases_b.push_back(b0);
                ad.bases_a.push_back(a0);
            }
            break;
        }
        case InitSchemeTag::SharedSubspace: {
            Matrix m = random_normal_matrix(d_out, r, sb, stream);
            Matrix n = random_normal_matrix(r, d_in, sa, stream);
            for (std::size_t i = 0; i < h; ++i) {
                Matrix ri = invertible_core(r, stream);
                ad.bases_b.push_back(matmul(m, ri));
                ad.bases_a.push_back(matmul(ri, n));
            }
            break;
        }
    }
    return ad;
}

Matrix ravan_forward(const RavanAdapter& ad, const Matrix& w, const Matrix& x) {
    if (w.rows() != ad.d_out || w.cols() != ad.d_in)
        throw ShapeError("ravan_forward: W shape mismatch");
    if (x.rows() != ad.d_in) throw ShapeError("ravan_forward: x rows != d_in");
    Matrix out = matmul(w, x);
    for (std::size_t i = 0; i < ad.h; ++i) {
        Matrix hx = matmul(ad.cores_h[i], matmul(ad.bases_a[i], x));
        out += ad.scales_s[i] * matmul(ad.bases_b[i], hx);
    }
    return out;
}

Matrix ravan_delta_w(const RavanAdapter& ad) {
    Matrix out(ad.d_out, ad.d_in);
    for (std::size_t i = 0; i < ad.h; ++i)
        out += ad.scales_s[i] * matmul(ad.bases_b[i], matmul(ad.cores_h[i], ad.bases_a[i]));
    return out;
}

Matrix vanilla_delta_w(const VanillaLoraAdapter& ad) { return matmul(ad.b, ad.a); }

Matrix fedsb_delta_w(const FedSbAdapter& ad) {
    return matmul(ad.b, matmul(ad.core, ad.a));
}

AdapterGradients ravan_backward(const RavanAdapter& ad, const Matrix& x, const Matrix& upstream) {
    if (upstream.rows() != ad.d_out || x.rows() != ad.d_in || upstream.cols() != x.cols())
        throw ShapeError("ravan_backward: shape mismatch");
    Matrix g = matmul(upstream, transpose(x));  // dL/d(effective W)
    AdapterGradients grads;
    grads.grad_cores.assign(ad.h, Matrix(ad.r, ad.r));
    grads.grad_scales.assign(ad.h, 0.0);
    for (std::size_t i = 0; i < ad.h; ++i) {
        if (!ad.active_mask[i]) continue;
        Matrix btg_at = matmul(transpose(ad.bases_b[i]), matmul(g, transpose(ad.bases_a[i])));
        grads.grad_cores[i] = ad.scales_s[i] * btg_at;
        if (ad.trainable_scaling)
            grads.grad_scales[i] = frobenius_inner(ad.cores_h[i], btg_at);
    }
    return grads;
}

VanillaGradients vanilla_backward(const VanillaLoraAdapter& ad, const Matrix& x,
                                  const Matrix& upstream) {
    Matrix g = matmul(upstream, transpose(x));
    VanillaGradients grads;
    grads.grad_b = matmul(g, transpose(ad.a));
    grads.grad_a = ad.a_frozen ? Matrix(ad.a.rows(), ad.a.cols()) : matmul(transpose(ad.b), g);
    return grads;
}

Matrix fedsb_backward(const FedSbAdapter& ad, const Matrix& x, const Matrix& upstream) {
    Matrix g = matmul(upstream, transpose(x));
    return matmul(transpose(ad.b), matmul(g, transpose(ad.a)));
}

std::size_t rank_bound_multihead(std::size_t n, std::size_t h, std::size_t d) {
    const auto bound = static_cast<std::size_t>(
        std::floor(std::sqrt(static_cast<double>(n) * static_cast<double>(h))));
    return std::min(bound, d);
}

std::size_t rank_bound_vanilla_multihead(std::size_t n, std::size_t /*h*/, std::size_t d) {
    return std::min(n / (2 * d), d);
}

FedSbAdapter init_fedsb(const Matrix& delta_w_full, std::size_t r) {
    if (r > std::min(delta_w_full.rows(), delta_w_full.cols()))
        throw ShapeError("init_fedsb: r exceeds matrix dimensions");
    SvdResult res = svd(delta_w_full);
    FedSbAdapter ad;
    ad.b = Matrix(delta_w_full.rows(), r);
    ad.core = Matrix(r, r);
    ad.a = Matrix(r, delta_w_full.cols());
    for (std::size_t i = 0; i < delta_w_full.rows(); ++i)
        for (std::size_t j = 0; j < r; ++j) ad.b(i, j) = res.u(i, j);
    for (std::size_t j = 0; j < r; ++j) ad.core(j, j) = res.singular_values[j];
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < delta_w_full.cols(); ++j) ad.a(i, j) = res.vt(i, j);
    return ad;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw NumericError("read_u64: truncated stream");
    return v;
}

}  // namespace

void write_matrix(std::ostream& os, const Matrix& m) {
    write_u64(os, m.rows());
    write_u64(os, m.cols());
    os.write(reinterpret_cast<const char*>(m.data().data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix read_matrix(std::istream& is) {
    const std::uint64_t rows = read_u64(is);
    const std::uint64_t cols = read_u64(is);
    Matrix m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data().data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw NumericError("read_matrix: truncated stream");
    return m;
}

void write_ravan(std::ostream& os, const RavanAdapter& a) {
    write_u64(os, a.d_out);
    write_u64(os, a.d_in);
    write_u64(os, a.r);
    write_u64(os, a.h);
    write_u64(os, a.trainable_scaling ? 1 : 0);
    for (const auto& m : a.bases_b) write_matrix(os, m);
    for (const auto& m : a.bases_a) write_matrix(os, m);
    for (const auto& m : a.cores_h) write_matrix(os, m);
    for (double s : a.scales_s) os.write(reinterpret_cast<const char*>(&s), sizeof(s));
    for (bool b : a.active_mask) write_u64(os, b ? 1 : 0);
}

RavanAdapter read_ravan(std::istream& is) {
    RavanAdapter a;
    a.d_out = read_u64(is);
    a.d_in = read_u64(is);
    a.r = read_u64(is);
    a.h = read_u64(is);
    a.trainable_scaling = read_u64(is) != 0;
    for (std::size_t i = 0; i < a.h; ++i) a.bases_b.push_back(read_matrix(is));
    for (std::size_t i = 0; i < a.h; ++i) a.bases_a.push_back(read_matrix(is));
    for (std::size_t i = 0; i < a.h; ++i) a.cores_h.push_back(read_matrix(is));
    a.scales_s.resize(a.h);
    is.read(reinterpret_cast<char*>(a.scales_s.data()),
            static_cast<std::streamsize>(a.h * sizeof(double)));
    a.active_mask.resize(a.h);
    for (std::size_t i = 0; i < a.h; ++i) a.active_mask[i] = read_u64(is) != 0;
    if (!is) throw NumericError("read_ravan: truncated stream");
    return a;
}

}  // namespace peftsim
