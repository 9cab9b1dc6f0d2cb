#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

// Data-parallel compute kernels. The primary implementations are OpenMP
// parallel with simd inner loops; dmi::kernels::ref holds plain serial
// versions used by the unit tests and the kernel benchmark as ground truth.
//
// Parallel loops are owner-computes: every output element is written by
// exactly one iteration, with a fixed inner accumulation order, so results
// do not depend on the schedule or thread count.

namespace dmi::kernels {

inline constexpr int kGemmTileN = 512;  // j-tile, keeps C/B row segments cache resident

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int jt = 0; jt < N; jt += kGemmTileN) {
        const int jn = std::min(kGemmTileN, N - jt);
        for (int i = 0; i < M; ++i) {
            T* c = C + static_cast<int64_t>(i) * N + jt;
            if (!accumulate)
                for (int j = 0; j < jn; ++j) c[j] = T(0);
            const T* a = A + static_cast<int64_t>(i) * K;
            int k = 0;
            for (; k + 4 <= K; k += 4) {
                const T a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
                const T* b0 = B + static_cast<int64_t>(k) * N + jt;
                const T* b1 = b0 + N;
                const T* b2 = b1 + N;
                const T* b3 = b2 + N;
#pragma omp simd
                for (int j = 0; j < jn; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            for (; k < K; ++k) {
                const T ak = a[k];
                const T* b = B + static_cast<int64_t>(k) * N + jt;
#pragma omp simd
                for (int j = 0; j < jn; ++j) c[j] += ak * b[j];
            }
        }
    }
}

// C[M,N] (+)= A^T * B with A stored (K,M), B stored (K,N)
template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int jt = 0; jt < N; jt += kGemmTileN) {
        const int jn = std::min(kGemmTileN, N - jt);
        for (int i = 0; i < M; ++i) {
            T* c = C + static_cast<int64_t>(i) * N + jt;
            if (!accumulate)
                for (int j = 0; j < jn; ++j) c[j] = T(0);
            int k = 0;
            for (; k + 4 <= K; k += 4) {
                const T a0 = A[static_cast<int64_t>(k) * M + i];
                const T a1 = A[static_cast<int64_t>(k + 1) * M + i];
                const T a2 = A[static_cast<int64_t>(k + 2) * M + i];
                const T a3 = A[static_cast<int64_t>(k + 3) * M + i];
                const T* b0 = B + static_cast<int64_t>(k) * N + jt;
                const T* b1 = b0 + N;
                const T* b2 = b1 + N;
                const T* b3 = b2 + N;
#pragma omp simd
                for (int j = 0; j < jn; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            for (; k < K; ++k) {
                const T ak = A[static_cast<int64_t>(k) * M + i];
                const T* b = B + static_cast<int64_t>(k) * N + jt;
#pragma omp simd
                for (int j = 0; j < jn; ++j) c[j] += ak * b[j];
            }
        }
    }
}

// C[M,N] (+)= A * B^T with A stored (M,K), B stored (N,K); K is the long
// contraction axis. Register blocked 4x4 over (i,j), chunked over k so the
// streamed panels stay cache resident.
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    constexpr int KC = 1024;
    if (!accumulate) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < M; ++i) std::fill(C + static_cast<int64_t>(i) * N, C + static_cast<int64_t>(i + 1) * N, T(0));
    }
    for (int kc = 0; kc < K; kc += KC) {
        const int kn = std::min(KC, K - kc);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < M; i += 4) {
            const int ib = std::min(4, M - i);
            const T* a0 = A + static_cast<int64_t>(i) * K + kc;
            const T* a1 = a0 + (ib > 1 ? K : 0);
            const T* a2 = a1 + (ib > 2 ? K : 0);
            const T* a3 = a2 + (ib > 3 ? K : 0);
            for (int j = 0; j < N; ++j) {
                const T* b = B + static_cast<int64_t>(j) * K + kc;
                T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
#pragma omp simd reduction(+ : acc0, acc1, acc2, acc3)
                for (int k = 0; k < kn; ++k) {
                    const T bk = b[k];
                    acc0 += a0[k] * bk;
                    acc1 += a1[k] * bk;
                    acc2 += a2[k] * bk;
                    acc3 += a3[k] * bk;
                }
                C[static_cast<int64_t>(i) * N + j] += acc0;
                if (ib > 1) C[static_cast<int64_t>(i + 1) * N + j] += acc1;
                if (ib > 2) C[static_cast<int64_t>(i + 2) * N + j] += acc2;
                if (ib > 3) C[static_cast<int64_t>(i + 3) * N + j] += acc3;
            }
        }
    }
}

// im2col for one image: x (C,H,W) -> col (C*kh*kw, OH*OW)
template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, T* col) {
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < C * kh * kw; ++r) {
        const int c = r / (kh * kw);
        const int ky = (r / kw) % kh;
        const int kx = r % kw;
        T* dst = col + static_cast<int64_t>(r) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) {
                for (int ox = 0; ox < OW; ++ox) dst[oy * OW + ox] = T(0);
                continue;
            }
            const T* src = x + (static_cast<int64_t>(c) * H + iy) * W;
            for (int ox = 0; ox < OW; ++ox) {
                const int ix = ox * stride - pad + kx;
                dst[oy * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
            }
        }
    }
}

// Scatter-add inverse of im2col for one image: col (C*kh*kw, OH*OW) -> x (C,H,W)
template <class T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, T* x) {
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    std::fill(x, x + static_cast<int64_t>(C) * H * W, T(0));
    // parallel over channels: each channel's scatter targets are disjoint
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const int r = (c * kh + ky) * kw + kx;
                const T* src = col + static_cast<int64_t>(r) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (static_cast<int64_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * OW + ox];
                    }
                }
            }
        }
    }
}

// y (C,S) += bias per row
template <class T>
void add_row_bias(int C, int S, const T* bias, T* y) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const T b = bias[c];
        T* row = y + static_cast<int64_t>(c) * S;
#pragma omp simd
        for (int s = 0; s < S; ++s) row[s] += b;
    }
}

template <class T>
void row_sums(int C, int S, const T* y, T* out, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        T acc = T(0);
        const T* row = y + static_cast<int64_t>(c) * S;
#pragma omp simd reduction(+ : acc)
        for (int s = 0; s < S; ++s) acc += row[s];
        out[c] = accumulate ? out[c] + acc : acc;
    }
}

// 2x2 max pool, stride 2. argmax stores the winning index in [0,4).
template <class T>
void maxpool2x2(const T* x, int N, int C, int H, int W, T* y, uint8_t* argmax) {
    const int OH = H / 2, OW = W / 2;
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const T* xp = x + nc * H * W;
        T* yp = y + nc * OH * OW;
        uint8_t* ap = argmax + nc * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const int iy = oy * 2, ix = ox * 2;
                T best = xp[iy * W + ix];
                uint8_t arg = 0;
                const T v1 = xp[iy * W + ix + 1];
                if (v1 > best) { best = v1; arg = 1; }
                const T v2 = xp[(iy + 1) * W + ix];
                if (v2 > best) { best = v2; arg = 2; }
                const T v3 = xp[(iy + 1) * W + ix + 1];
                if (v3 > best) { best = v3; arg = 3; }
                yp[oy * OW + ox] = best;
                ap[oy * OW + ox] = arg;
            }
        }
    }
}

template <class T>
void maxpool2x2_backward(const T* dy, const uint8_t* argmax, int N, int C, int H, int W, T* dx) {
    const int OH = H / 2, OW = W / 2;
    std::fill(dx, dx + static_cast<int64_t>(N) * C * H * W, T(0));
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const T* dyp = dy + nc * OH * OW;
        const uint8_t* ap = argmax + nc * OH * OW;
        T* dxp = dx + nc * H * W;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const uint8_t a = ap[oy * OW + ox];
                const int iy = oy * 2 + (a >> 1), ix = ox * 2 + (a & 1);
                dxp[iy * W + ix] = dyp[oy * OW + ox];
            }
        }
    }
}

// Transposed conv, kernel 2, stride 2 (each input pixel expands to a
// disjoint 2x2 output block). w layout (Cin, Cout, 2, 2).
template <class T>
void convtranspose2x2(const T* x, const T* w, const T* bias, int N, int Ci, int Co, int H, int W, T* y) {
    const int OH = H * 2, OW = W * 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Co; ++co) {
            T* yp = y + (static_cast<int64_t>(n) * Co + co) * OH * OW;
            const T b = bias ? bias[co] : T(0);
            std::fill(yp, yp + static_cast<int64_t>(OH) * OW, b);
            for (int ci = 0; ci < Ci; ++ci) {
                const T* xp = x + (static_cast<int64_t>(n) * Ci + ci) * H * W;
                const T w00 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 0) * 2 + 0];
                const T w01 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 0) * 2 + 1];
                const T w10 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 1) * 2 + 0];
                const T w11 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 1) * 2 + 1];
                for (int iy = 0; iy < H; ++iy) {
                    T* row0 = yp + (iy * 2) * OW;
                    T* row1 = row0 + OW;
                    const T* xrow = xp + iy * W;
#pragma omp simd
                    for (int ix = 0; ix < W; ++ix) {
                        const T v = xrow[ix];
                        row0[2 * ix] += v * w00;
                        row0[2 * ix + 1] += v * w01;
                        row1[2 * ix] += v * w10;
                        row1[2 * ix + 1] += v * w11;
                    }
                }
            }
        }
    }
}

template <class T>
void convtranspose2x2_backward(const T* x, const T* w, const T* dy, int N, int Ci, int Co, int H, int W,
                               T* dx, T* dw, T* dbias) {
    const int OH = H * 2, OW = W * 2;
    // dx[n,ci,y,x] = sum_co sum_dydx dy[n,co,2y+dy,2x+dx] * w[ci,co,dy,dx]
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < Ci; ++ci) {
            T* dxp = dx + (static_cast<int64_t>(n) * Ci + ci) * H * W;
            std::fill(dxp, dxp + static_cast<int64_t>(H) * W, T(0));
            for (int co = 0; co < Co; ++co) {
                const T* dyp = dy + (static_cast<int64_t>(n) * Co + co) * OH * OW;
                const T w00 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 0) * 2 + 0];
                const T w01 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 0) * 2 + 1];
                const T w10 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 1) * 2 + 0];
                const T w11 = w[((static_cast<int64_t>(ci) * Co + co) * 2 + 1) * 2 + 1];
                for (int iy = 0; iy < H; ++iy) {
                    const T* row0 = dyp + (iy * 2) * OW;
                    const T* row1 = row0 + OW;
                    T* dxrow = dxp + iy * W;
#pragma omp simd
                    for (int ix = 0; ix < W; ++ix)
                        dxrow[ix] += row0[2 * ix] * w00 + row0[2 * ix + 1] * w01 + row1[2 * ix] * w10 + row1[2 * ix + 1] * w11;
                }
            }
        }
    }
    // dw[ci,co,dy,dx] = sum_{n,y,x} x[n,ci,y,x] * dy[n,co,2y+dy,2x+dx]
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < Ci; ++ci) {
        for (int co = 0; co < Co; ++co) {
            T acc00 = T(0), acc01 = T(0), acc10 = T(0), acc11 = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xp = x + (static_cast<int64_t>(n) * Ci + ci) * H * W;
                const T* dyp = dy + (static_cast<int64_t>(n) * Co + co) * OH * OW;
                for (int iy = 0; iy < H; ++iy) {
                    const T* xrow = xp + iy * W;
                    const T* row0 = dyp + (iy * 2) * OW;
                    const T* row1 = row0 + OW;
#pragma omp simd reduction(+ : acc00, acc01, acc10, acc11)
                    for (int ix = 0; ix < W; ++ix) {
                        const T v = xrow[ix];
                        acc00 += v * row0[2 * ix];
                        acc01 += v * row0[2 * ix + 1];
                        acc10 += v * row1[2 * ix];
                        acc11 += v * row1[2 * ix + 1];
                    }
                }
            }
            T* dwp = dw + (static_cast<int64_t>(ci) * Co + co) * 4;
            dwp[0] = acc00;
            dwp[1] = acc01;
            dwp[2] = acc10;
            dwp[3] = acc11;
        }
    }
    if (dbias) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < Co; ++co) {
            T acc = T(0);
            for (int n = 0; n < N; ++n) {
                const T* dyp = dy + (static_cast<int64_t>(n) * Co + co) * OH * OW;
#pragma omp simd reduction(+ : acc)
                for (int s = 0; s < OH * OW; ++s) acc += dyp[s];
            }
            dbias[co] = acc;
        }
    }
}

// Group normalization over (group channels x spatial) per sample.
// Saves mean and inverse stddev for the backward pass.
template <class T>
void groupnorm(const T* x, const T* gamma, const T* beta, int N, int C, int S, int groups, T eps,
               T* y, T* mean, T* rstd) {
    const int cg = C / groups;
    const int64_t m = static_cast<int64_t>(cg) * S;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            const T* xp = x + (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
            T sum = T(0), sumsq = T(0);
#pragma omp simd reduction(+ : sum, sumsq)
            for (int64_t i = 0; i < m; ++i) {
                sum += xp[i];
                sumsq += xp[i] * xp[i];
            }
            const T mu = sum / static_cast<T>(m);
            const T var = sumsq / static_cast<T>(m) - mu * mu;
            const T rs = T(1) / std::sqrt(var + eps);
            mean[n * groups + g] = mu;
            rstd[n * groups + g] = rs;
            T* yp = y + (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
            for (int c = 0; c < cg; ++c) {
                const T ga = gamma[g * cg + c], be = beta[g * cg + c];
#pragma omp simd
                for (int s = 0; s < S; ++s) yp[c * S + s] = (xp[c * S + s] - mu) * rs * ga + be;
            }
        }
    }
}

template <class T>
void groupnorm_backward(const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy,
                        int N, int C, int S, int groups, T* dx, T* dgamma, T* dbeta) {
    const int cg = C / groups;
    const int64_t m = static_cast<int64_t>(cg) * S;
    // dgamma/dbeta reduce over samples; owner-computes per channel
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const int g = c / cg;
        T dg = T(0), db = T(0);
        for (int n = 0; n < N; ++n) {
            const T mu = mean[n * groups + g], rs = rstd[n * groups + g];
            const T* xp = x + (static_cast<int64_t>(n) * C + c) * S;
            const T* dyp = dy + (static_cast<int64_t>(n) * C + c) * S;
#pragma omp simd reduction(+ : dg, db)
            for (int s = 0; s < S; ++s) {
                dg += dyp[s] * (xp[s] - mu) * rs;
                db += dyp[s];
            }
        }
        dgamma[c] = dg;
        dbeta[c] = db;
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            const T mu = mean[n * groups + g], rs = rstd[n * groups + g];
            const T* xp = x + (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
            const T* dyp = dy + (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
            T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
            for (int c = 0; c < cg; ++c) {
                const T ga = gamma[g * cg + c];
                T s1 = T(0), s2 = T(0);
#pragma omp simd reduction(+ : s1, s2)
                for (int s = 0; s < S; ++s) {
                    const T dxh = dyp[c * S + s] * ga;
                    s1 += dxh;
                    s2 += dxh * (xp[c * S + s] - mu) * rs;
                }
                sum_dxhat += s1;
                sum_dxhat_xhat += s2;
            }
            const T inv_m = T(1) / static_cast<T>(m);
            T* dxp = dx + (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
            for (int c = 0; c < cg; ++c) {
                const T ga = gamma[g * cg + c];
#pragma omp simd
                for (int s = 0; s < S; ++s) {
                    const T xhat = (xp[c * S + s] - mu) * rs;
                    const T dxhat = dyp[c * S + s] * ga;
                    dxp[c * S + s] = rs * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
                }
            }
        }
    }
}

// Batch norm over (N, S) per channel; training mode computes batch stats and
// updates running estimates, eval mode consumes the running estimates.
template <class T>
void batchnorm(const T* x, const T* gamma, const T* beta, int N, int C, int S, T eps, bool train,
               T momentum, T* running_mean, T* running_var, T* y, T* save_mean, T* save_rstd) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        T mu, var;
        const int64_t m = static_cast<int64_t>(N) * S;
        if (train) {
            T sum = T(0), sumsq = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xp = x + (static_cast<int64_t>(n) * C + c) * S;
#pragma omp simd reduction(+ : sum, sumsq)
                for (int s = 0; s < S; ++s) {
                    sum += xp[s];
                    sumsq += xp[s] * xp[s];
                }
            }
            mu = sum / static_cast<T>(m);
            var = sumsq / static_cast<T>(m) - mu * mu;
            running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * mu;
            running_var[c] = momentum * running_var[c] + (T(1) - momentum) * var;
        } else {
            mu = running_mean[c];
            var = running_var[c];
        }
        const T rs = T(1) / std::sqrt(var + eps);
        if (save_mean) save_mean[c] = mu;
        if (save_rstd) save_rstd[c] = rs;
        const T ga = gamma[c], be = beta[c];
        for (int n = 0; n < N; ++n) {
            const T* xp = x + (static_cast<int64_t>(n) * C + c) * S;
            T* yp = y + (static_cast<int64_t>(n) * C + c) * S;
#pragma omp simd
            for (int s = 0; s < S; ++s) yp[s] = (xp[s] - mu) * rs * ga + be;
        }
    }
}

template <class T>
void batchnorm_backward(const T* x, const T* gamma, const T* save_mean, const T* save_rstd, const T* dy,
                        int N, int C, int S, T* dx, T* dgamma, T* dbeta) {
    const int64_t m = static_cast<int64_t>(N) * S;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const T mu = save_mean[c], rs = save_rstd[c], ga = gamma[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int n = 0; n < N; ++n) {
            const T* xp = x + (static_cast<int64_t>(n) * C + c) * S;
            const T* dyp = dy + (static_cast<int64_t>(n) * C + c) * S;
#pragma omp simd reduction(+ : sum_dy, sum_dy_xhat)
            for (int s = 0; s < S; ++s) {
                sum_dy += dyp[s];
                sum_dy_xhat += dyp[s] * (xp[s] - mu) * rs;
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        const T inv_m = T(1) / static_cast<T>(m);
        for (int n = 0; n < N; ++n) {
            const T* xp = x + (static_cast<int64_t>(n) * C + c) * S;
            const T* dyp = dy + (static_cast<int64_t>(n) * C + c) * S;
            T* dxp = dx + (static_cast<int64_t>(n) * C + c) * S;
#pragma omp simd
            for (int s = 0; s < S; ++s) {
                const T xhat = (xp[s] - mu) * rs;
                dxp[s] = ga * rs * (dyp[s] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
            }
        }
    }
}

// Row-wise softmax on (R, C) matrix.
template <class T>
void softmax_rows(const T* x, int R, int C, T* y) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
        const T* xp = x + static_cast<int64_t>(r) * C;
        T* yp = y + static_cast<int64_t>(r) * C;
        T mx = xp[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xp[c]);
        T sum = T(0);
        for (int c = 0; c < C; ++c) {
            yp[c] = std::exp(xp[c] - mx);
            sum += yp[c];
        }
        const T inv = T(1) / sum;
#pragma omp simd
        for (int c = 0; c < C; ++c) yp[c] *= inv;
    }
}

// dx = y * (dy - sum(dy * y)) per row, given the softmax output y.
template <class T>
void softmax_backward_rows(const T* y, const T* dy, int R, int C, T* dx) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
        const T* yp = y + static_cast<int64_t>(r) * C;
        const T* dyp = dy + static_cast<int64_t>(r) * C;
        T* dxp = dx + static_cast<int64_t>(r) * C;
        T dot = T(0);
#pragma omp simd reduction(+ : dot)
        for (int c = 0; c < C; ++c) dot += yp[c] * dyp[c];
#pragma omp simd
        for (int c = 0; c < C; ++c) dxp[c] = yp[c] * (dyp[c] - dot);
    }
}

template <class T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <class T>
void silu(const T* x, int64_t n, T* y) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] * sigmoid(x[i]);
}

template <class T>
void silu_backward(const T* x, const T* dy, int64_t n, T* dx) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const T s = sigmoid(x[i]);
        dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
}

template <class T>
void gelu(const T* x, int64_t n, T* y) {
    const T c = T(0.7071067811865475);  // 1/sqrt(2)
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * c));
}

template <class T>
void gelu_backward(const T* x, const T* dy, int64_t n, T* dx) {
    const T c = T(0.7071067811865475);
    const T k = T(0.3989422804014327);  // 1/sqrt(2*pi)
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * c));
        dx[i] = dy[i] * (cdf + x[i] * k * std::exp(T(-0.5) * x[i] * x[i]));
    }
}

template <class T>
void relu(const T* x, int64_t n, T* y) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(const T* x, const T* dy, int64_t n, T* dx) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

// Decoupled weight decay Adam step (bias-corrected).
template <class T>
void adamw_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps, T weight_decay, int64_t step) {
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
    }
}

template <class T>
void ema_update(T* shadow, const T* live, int64_t n, T decay) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) shadow[i] = decay * shadow[i] + (T(1) - decay) * live[i];
}

}  // namespace dmi::kernels

// ---------------------------------------------------------------------------
// Serial reference implementations (testing / benchmarking ground truth).
// ---------------------------------------------------------------------------
namespace dmi::kernels::ref {

template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            T acc = accumulate ? C[static_cast<int64_t>(i) * N + j] : T(0);
            for (int k = 0; k < K; ++k) acc += A[static_cast<int64_t>(i) * K + k] * B[static_cast<int64_t>(k) * N + j];
            C[static_cast<int64_t>(i) * N + j] = acc;
        }
    }
}

template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            T acc = accumulate ? C[static_cast<int64_t>(i) * N + j] : T(0);
            for (int k = 0; k < K; ++k) acc += A[static_cast<int64_t>(k) * M + i] * B[static_cast<int64_t>(k) * N + j];
            C[static_cast<int64_t>(i) * N + j] = acc;
        }
    }
}

template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            T acc = accumulate ? C[static_cast<int64_t>(i) * N + j] : T(0);
            for (int k = 0; k < K; ++k) acc += A[static_cast<int64_t>(i) * K + k] * B[static_cast<int64_t>(j) * K + k];
            C[static_cast<int64_t>(i) * N + j] = acc;
        }
    }
}

// Direct convolution, the oracle for the im2col+gemm path.
template <class T>
void conv2d(const T* x, const T* w, const T* bias, int N, int Ci, int Co, int H, int W, int kh, int kw,
            int stride, int pad, T* y) {
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = bias ? bias[co] : T(0);
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x[((static_cast<int64_t>(n) * Ci + ci) * H + iy) * W + ix] *
                                       w[((static_cast<int64_t>(co) * Ci + ci) * kh + ky) * kw + kx];
                            }
                    y[((static_cast<int64_t>(n) * Co + co) * OH + oy) * OW + ox] = acc;
                }
}

template <class T>
void groupnorm(const T* x, const T* gamma, const T* beta, int N, int C, int S, int groups, T eps, T* y) {
    const int cg = C / groups;
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const T* xp = x + (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
            const int64_t m = static_cast<int64_t>(cg) * S;
            T mu = T(0);
            for (int64_t i = 0; i < m; ++i) mu += xp[i];
            mu /= static_cast<T>(m);
            T var = T(0);
            for (int64_t i = 0; i < m; ++i) var += (xp[i] - mu) * (xp[i] - mu);
            var /= static_cast<T>(m);
            const T rs = T(1) / std::sqrt(var + eps);
            T* yp = y + (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
            for (int c = 0; c < cg; ++c)
                for (int s = 0; s < S; ++s)
                    yp[c * S + s] = (xp[c * S + s] - mu) * rs * gamma[g * cg + c] + beta[g * cg + c];
        }
}

template <class T>
void softmax_rows(const T* x, int R, int C, T* y) {
    for (int r = 0; r < R; ++r) {
        const T* xp = x + static_cast<int64_t>(r) * C;
        T* yp = y + static_cast<int64_t>(r) * C;
        T mx = xp[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xp[c]);
        T sum = T(0);
        for (int c = 0; c < C; ++c) {
            yp[c] = std::exp(xp[c] - mx);
            sum += yp[c];
        }
        for (int c = 0; c < C; ++c) yp[c] /= sum;
    }
}

}  // namespace dmi::kernels::ref
