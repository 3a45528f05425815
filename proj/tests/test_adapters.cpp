#include "doctest.h"

#include <cmath>
#include <functional>
#include <sstream>

#include "peftsim/adapters.hpp"

using namespace peftsim;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

// 0.5 * || f - target ||_F^2; upstream = f - target.
double half_sq_loss(const Matrix& f, const Matrix& target) {
    return 0.5 * frobenius_inner(f - target, f - target);
}

double central_diff(const std::function<double(double)>& loss_at, double x0, double eps = 1e-6) {
    return (loss_at(x0 + eps) - loss_at(x0 - eps)) / (2.0 * eps);
}

bool close_rel(double a, double b, double tol) {
    // floor keeps finite-difference noise from dominating near-zero gradients
    const double scale = std::max({std::abs(a), std::abs(b), 1e-2});
    return std::abs(a - b) / scale < tol;
}

}  // namespace

TEST_CASE("init gives zero delta_w for every scheme") {
    for (auto tag : {InitSchemeTag::RandomNormal, InitSchemeTag::GramSchmidt,
                     InitSchemeTag::Constant, InitSchemeTag::SharedSubspace}) {
        RngStream rng(1, 0);
        RavanAdapter ad = init_ravan(16, 16, 2, 4, {tag}, rng);
        CHECK(frobenius_norm(ravan_delta_w(ad)) == 0.0);
        for (double s : ad.scales_s) CHECK(s == 1.0);
    }
}

TEST_CASE("gram-schmidt init: concatenated bases orthonormal") {
    RngStream rng(2, 0);
    RavanAdapter ad = init_ravan(64, 64, 8, 4, {InitSchemeTag::GramSchmidt}, rng);
    Matrix bcat(64, 32), acat(32, 64);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t row = 0; row < 64; ++row)
            for (std::size_t col = 0; col < 8; ++col) {
                bcat(row, i * 8 + col) = ad.bases_b[i](row, col);
                acat(i * 8 + col, row) = ad.bases_a[i](col, row);
            }
    CHECK(max_abs(matmul(transpose(bcat), bcat) - Matrix::identity(32)) < 1e-10);
    CHECK(max_abs(matmul(acat, transpose(acat)) - Matrix::identity(32)) < 1e-10);
}

TEST_CASE("constant init copies the first head bit-exactly") {
    RngStream rng(3, 0);
    RavanAdapter ad = init_ravan(8, 8, 2, 2, {InitSchemeTag::Constant}, rng);
    CHECK(ad.bases_b[0] == ad.bases_b[1]);
    CHECK(ad.bases_a[0] == ad.bases_a[1]);
}

TEST_CASE("gram-schmidt init rejects rh > dims") {
    RngStream rng(4, 0);
    CHECK_THROWS_AS(init_ravan(8, 8, 4, 4, {InitSchemeTag::GramSchmidt}, rng), ShapeError);
}

TEST_CASE("shared subspace init: all heads span the same column space") {
    RngStream rng(5, 0);
    RavanAdapter ad = init_ravan(16, 16, 3, 3, {InitSchemeTag::SharedSubspace}, rng);
    // project head 1's columns onto head 0's column space; residual should vanish
    Matrix q = gram_schmidt_columns(ad.bases_b[0]);
    Matrix proj = matmul(q, matmul(transpose(q), ad.bases_b[1]));
    CHECK(frobenius_norm(proj - ad.bases_b[1]) / frobenius_norm(ad.bases_b[1]) < 1e-10);
}

TEST_CASE("forward with zero cores equals W x exactly") {
    RngStream rng(6, 0);
    RavanAdapter ad = init_ravan(8, 8, 2, 3, {InitSchemeTag::RandomNormal}, rng);
    Matrix w = random_matrix(8, 8, rng);
    Matrix x = random_matrix(8, 4, rng);
    CHECK(ravan_forward(ad, w, x) == matmul(w, x));
}

TEST_CASE("forward hand case: identity bases, s=2") {
    RavanAdapter ad;
    ad.d_out = ad.d_in = ad.r = 3;
    ad.h = 1;
    ad.bases_b = {Matrix::identity(3)};
    ad.bases_a = {Matrix::identity(3)};
    ad.cores_h = {Matrix::identity(3)};
    ad.scales_s = {2.0};
    ad.active_mask = {true};
    Matrix v(3, 1, {1, -2, 0.5});
    Matrix out = ravan_forward(ad, Matrix(3, 3), v);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out(i, 0) == 2.0 * v(i, 0));
}

TEST_CASE("forward matches materialized delta-W oracle") {
    RngStream rng(7, 0);
    for (int rep = 0; rep < 20; ++rep) {
        RavanAdapter ad = init_ravan(12, 10, 2, 3, {InitSchemeTag::RandomNormal}, rng);
        for (auto& c : ad.cores_h) c = random_matrix(2, 2, rng);
        for (auto& s : ad.scales_s) s = rng.uniform(-2, 2);
        Matrix w = random_matrix(12, 10, rng);
        Matrix x = random_matrix(10, 3, rng);
        Matrix expected = matmul(w + ravan_delta_w(ad), x);
        CHECK(max_abs(ravan_forward(ad, w, x) - expected) < 1e-10);
    }
}

TEST_CASE("delta_w block sum on disjoint-support bases") {
    // head 0 writes to entry (0,0), head 1 to entry (1,1)
    RavanAdapter ad;
    ad.d_out = ad.d_in = 2;
    ad.r = 1;
    ad.h = 2;
    Matrix e0(2, 1, {1, 0}), e1(2, 1, {0, 1});
    ad.bases_b = {e0, e1};
    ad.bases_a = {transpose(e0), transpose(e1)};
    ad.cores_h = {Matrix(1, 1, {3.0}), Matrix(1, 1, {5.0})};
    ad.scales_s = {1.0, 2.0};
    ad.active_mask = {true, true};
    Matrix dw = ravan_delta_w(ad);
    CHECK(dw(0, 0) == 3.0);
    CHECK(dw(1, 1) == 10.0);
    CHECK(dw(0, 1) == 0.0);
    CHECK(dw(1, 0) == 0.0);
}

TEST_CASE("delta_w numerical rank bounded by h*r") {
    RngStream rng(8, 0);
    RavanAdapter ad = init_ravan(16, 16, 2, 3, {InitSchemeTag::RandomNormal}, rng);
    for (auto& c : ad.cores_h) c = random_matrix(2, 2, rng);
    auto sv = svd(ravan_delta_w(ad)).singular_values;
    CHECK(numerical_rank(sv) <= 6);
}

TEST_CASE("orthogonal init with generic cores hits rank h*r exactly") {
    RngStream rng(9, 0);
    for (std::size_t h : {1u, 2u, 4u}) {
        RavanAdapter ad = init_ravan(64, 64, 4, h, {InitSchemeTag::GramSchmidt}, rng);
        for (auto& c : ad.cores_h) c = random_matrix(4, 4, rng);
        auto sv = svd(ravan_delta_w(ad)).singular_values;
        const std::size_t hr = h * 4;
        CHECK(sv[hr - 1] > 1e-9 * sv[0]);
        if (hr < sv.size()) CHECK(sv[hr] < 1e-9 * sv[0]);
    }
}

TEST_CASE("constant init rank stays <= r") {
    RngStream rng(10, 0);
    RavanAdapter ad = init_ravan(32, 32, 3, 4, {InitSchemeTag::Constant}, rng);
    for (auto& c : ad.cores_h) c = random_matrix(3, 3, rng);
    CHECK(numerical_rank(svd(ravan_delta_w(ad)).singular_values) <= 3);
}

TEST_CASE("delta_w is linear in cores and scales") {
    RngStream rng(11, 0);
    RavanAdapter ad = init_ravan(8, 8, 2, 2, {InitSchemeTag::RandomNormal}, rng);
    RavanAdapter ad1 = ad, ad2 = ad, ad_sum = ad;
    for (std::size_t i = 0; i < 2; ++i) {
        ad1.cores_h[i] = random_matrix(2, 2, rng);
        ad2.cores_h[i] = random_matrix(2, 2, rng);
        ad_sum.cores_h[i] = ad1.cores_h[i] + ad2.cores_h[i];
    }
    CHECK(max_abs(ravan_delta_w(ad_sum) - (ravan_delta_w(ad1) + ravan_delta_w(ad2))) < 1e-10);

    RavanAdapter scaled = ad1;
    for (auto& s : scaled.scales_s) s *= 3.0;
    CHECK(max_abs(ravan_delta_w(scaled) - 3.0 * ravan_delta_w(ad1)) < 1e-12);
}

TEST_CASE("backward hand case d=1") {
    RavanAdapter ad;
    ad.d_out = ad.d_in = ad.r = 1;
    ad.h = 1;
    ad.bases_b = {Matrix(1, 1, {1.0})};
    ad.bases_a = {Matrix(1, 1, {1.0})};
    ad.cores_h = {Matrix(1, 1, {0.5})};
    ad.scales_s = {1.0};
    ad.active_mask = {true};
    Matrix x(1, 1, {2.0});
    Matrix out = ravan_forward(ad, Matrix(1, 1), x);  // 0.5 * 2 = 1
    Matrix target(1, 1, {3.0});
    Matrix upstream = out - target;  // dL/dy for L = 0.5 (y - t)^2
    AdapterGradients g = ravan_backward(ad, x, upstream);
    CHECK(g.grad_cores[0](0, 0) == doctest::Approx(-4.0).epsilon(1e-12));

    // finite-difference confirmation
    auto loss_at = [&](double hval) {
        RavanAdapter a2 = ad;
        a2.cores_h[0](0, 0) = hval;
        return half_sq_loss(ravan_forward(a2, Matrix(1, 1), x), target);
    };
    CHECK(close_rel(g.grad_cores[0](0, 0), central_diff(loss_at, 0.5), 1e-7));
}

TEST_CASE("zero upstream gives zero gradients") {
    RngStream rng(12, 0);
    RavanAdapter ad = init_ravan(6, 6, 2, 2, {InitSchemeTag::RandomNormal}, rng);
    AdapterGradients g = ravan_backward(ad, random_matrix(6, 2, rng), Matrix(6, 2));
    for (const auto& gc : g.grad_cores) CHECK(frobenius_norm(gc) == 0.0);
    for (double gs : g.grad_scales) CHECK(gs == 0.0);
}

TEST_CASE("masked heads get identically zero gradients") {
    RngStream rng(13, 0);
    RavanAdapter ad = init_ravan(6, 6, 2, 3, {InitSchemeTag::RandomNormal}, rng);
    for (auto& c : ad.cores_h) c = random_matrix(2, 2, rng);
    ad.active_mask = {true, false, true};
    AdapterGradients g =
        ravan_backward(ad, random_matrix(6, 2, rng), random_matrix(6, 2, rng));
    CHECK(frobenius_norm(g.grad_cores[1]) == 0.0);
    CHECK(g.grad_scales[1] == 0.0);
    CHECK(frobenius_norm(g.grad_cores[0]) > 0.0);
}

TEST_CASE("trainable_scaling off zeroes scale gradients") {
    RngStream rng(14, 0);
    RavanAdapter ad = init_ravan(6, 6, 2, 2, {InitSchemeTag::RandomNormal}, rng);
    for (auto& c : ad.cores_h) c = random_matrix(2, 2, rng);
    ad.trainable_scaling = false;
    AdapterGradients g =
        ravan_backward(ad, random_matrix(6, 2, rng), random_matrix(6, 2, rng));
    for (double gs : g.grad_scales) CHECK(gs == 0.0);
}

TEST_CASE("ravan gradients match central finite differences, 100 instances") {
    RngStream rng(15, 0);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t d = 2 + rng.uniform_index(8);
        const std::size_t r = 1 + rng.uniform_index(2);
        const std::size_t h = 1 + rng.uniform_index(3);
        const std::size_t batch = 1 + rng.uniform_index(4);
        RavanAdapter ad = init_ravan(d, d, r, h, {InitSchemeTag::RandomNormal}, rng);
        for (auto& c : ad.cores_h) c = random_matrix(r, r, rng);
        for (auto& s : ad.scales_s) s = rng.uniform(0.5, 2.0);
        Matrix w = random_matrix(d, d, rng);
        Matrix x = random_matrix(d, batch, rng);
        Matrix target = random_matrix(d, batch, rng);
        Matrix upstream = ravan_forward(ad, w, x) - target;
        AdapterGradients g = ravan_backward(ad, x, upstream);

        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t e = 0; e < r * r; ++e) {
                auto loss_at = [&](double v) {
                    RavanAdapter a2 = ad;
                    a2.cores_h[i].data()[e] = v;
                    return half_sq_loss(ravan_forward(a2, w, x), target);
                };
                const double fd = central_diff(loss_at, ad.cores_h[i].data()[e]);
                CHECK(close_rel(g.grad_cores[i].data()[e], fd, 1e-5));
            }
            auto loss_at_s = [&](double v) {
                RavanAdapter a2 = ad;
                a2.scales_s[i] = v;
                return half_sq_loss(ravan_forward(a2, w, x), target);
            };
            CHECK(close_rel(g.grad_scales[i], central_diff(loss_at_s, ad.scales_s[i]), 1e-5));
        }
    }
}

TEST_CASE("vanilla gradients match finite differences") {
    RngStream rng(16, 0);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t d = 2 + rng.uniform_index(6), r = 1 + rng.uniform_index(3);
        VanillaLoraAdapter ad;
        ad.b = random_matrix(d, r, rng);
        ad.a = random_matrix(r, d, rng);
        Matrix x = random_matrix(d, 2, rng);
        Matrix target = random_matrix(d, 2, rng);
        Matrix upstream = matmul(vanilla_delta_w(ad), x) - target;
        VanillaGradients g = vanilla_backward(ad, x, upstream);
        for (std::size_t e = 0; e < ad.b.size(); ++e) {
            auto loss_at = [&](double v) {
                VanillaLoraAdapter a2 = ad;
                a2.b.data()[e] = v;
                return half_sq_loss(matmul(vanilla_delta_w(a2), x), target);
            };
            CHECK(close_rel(g.grad_b.data()[e], central_diff(loss_at, ad.b.data()[e]), 1e-5));
        }
        for (std::size_t e = 0; e < ad.a.size(); ++e) {
            auto loss_at = [&](double v) {
                VanillaLoraAdapter a2 = ad;
                a2.a.data()[e] = v;
                return half_sq_loss(matmul(vanilla_delta_w(a2), x), target);
            };
            CHECK(close_rel(g.grad_a.data()[e], central_diff(loss_at, ad.a.data()[e]), 1e-5));
        }
    }
}

TEST_CASE("fedsb gradients match finite differences") {
    RngStream rng(17, 0);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t d = 2 + rng.uniform_index(6), r = 1 + rng.uniform_index(3);
        FedSbAdapter ad;
        ad.b = random_matrix(d, r, rng);
        ad.core = random_matrix(r, r, rng);
        ad.a = random_matrix(r, d, rng);
        Matrix x = random_matrix(d, 2, rng);
        Matrix target = random_matrix(d, 2, rng);
        Matrix upstream = matmul(fedsb_delta_w(ad), x) - target;
        Matrix g = fedsb_backward(ad, x, upstream);
        for (std::size_t e = 0; e < ad.core.size(); ++e) {
            auto loss_at = [&](double v) {
                FedSbAdapter a2 = ad;
                a2.core.data()[e] = v;
                return half_sq_loss(matmul(fedsb_delta_w(a2), x), target);
            };
            CHECK(close_rel(g.data()[e], central_diff(loss_at, ad.core.data()[e]), 1e-5));
        }
    }
}

TEST_CASE("rank bounds") {
    CHECK(rank_bound_multihead(48400, 4, 768) == 440);
    CHECK(rank_bound_multihead(100, 1, 768) == 10);
    CHECK(rank_bound_multihead(1 << 20, 16, 64) == 64);  // N h >= d^2 caps at d
    CHECK(rank_bound_vanilla_multihead(2 * 32 * 768, 4, 768) == 32);
    CHECK(rank_bound_vanilla_multihead(49152, 7, 768) == 32);
    // multihead bound beats the vanilla one whenever sqrt(N h) > N / 2d
    CHECK(rank_bound_multihead(49152, 4, 768) > rank_bound_vanilla_multihead(49152, 4, 768));
}

TEST_CASE("fedsb init truncates the spectrum") {
    Matrix dw(3, 3);
    dw(0, 0) = 3;
    dw(1, 1) = 2;
    dw(2, 2) = 1;
    FedSbAdapter ad = init_fedsb(dw, 2);
    Matrix recon = fedsb_delta_w(ad);
    Matrix expected(3, 3);
    expected(0, 0) = 3;
    expected(1, 1) = 2;
    CHECK(max_abs(recon - expected) < 1e-10);
}

TEST_CASE("fedsb init full rank reconstructs exactly") {
    RngStream rng(18, 0);
    Matrix dw = random_matrix(6, 6, rng);
    FedSbAdapter ad = init_fedsb(dw, 6);
    CHECK(frobenius_norm(fedsb_delta_w(ad) - dw) / frobenius_norm(dw) < 1e-9);
}

TEST_CASE("fedsb truncation error equals tail singular energy") {
    RngStream rng(19, 0);
    Matrix dw = random_matrix(10, 8, rng);
    auto sv = svd(dw).singular_values;
    FedSbAdapter ad = init_fedsb(dw, 4);
    double tail = 0.0;
    for (std::size_t i = 4; i < sv.size(); ++i) tail += sv[i] * sv[i];
    CHECK(frobenius_norm(fedsb_delta_w(ad) - dw) ==
          doctest::Approx(std::sqrt(tail)).epsilon(1e-8));
}

TEST_CASE("adapter serialization round trip is bit exact") {
    RngStream rng(20, 0);
    RavanAdapter ad = init_ravan(8, 6, 2, 3, {InitSchemeTag::RandomNormal}, rng);
    for (auto& c : ad.cores_h) c = random_matrix(2, 2, rng);
    ad.scales_s = {1.5, -0.25, 3.0};
    ad.active_mask = {true, false, true};
    std::stringstream ss;
    write_ravan(ss, ad);
    RavanAdapter back = read_ravan(ss);
    CHECK(back.d_out == ad.d_out);
    CHECK(back.trainable_scaling == ad.trainable_scaling);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.bases_b[i] == ad.bases_b[i]);
        CHECK(back.bases_a[i] == ad.bases_a[i]);
        CHECK(back.cores_h[i] == ad.cores_h[i]);
        CHECK(back.scales_s[i] == ad.scales_s[i]);
        CHECK(back.active_mask[i] == ad.active_mask[i]);
    }
}
