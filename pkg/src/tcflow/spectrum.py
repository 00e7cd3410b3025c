"""Bottom of the spectrum of -Delta_phi and of the twisted Lichnerowicz operator.

Both eigenproblems are posed through symmetric weak forms on the grid,

    K v = mu B v,   B = diag(det g)

so that the eigenvalues are those of the operators self-adjoint in the
weighted inner product int f g omega_phi^m. Constants span the kernel of
the continuous operators. On the grid the kernel also contains the
checkerboard modes (every wavenumber 0 or n/2), which the spectral
derivative annihilates; all of them are removed by B-orthogonal projection.

* mu1: Lanczos (ARPACK) applied to the inverse of the weighted Laplacian
  restricted to mean-zero fields; the inner solves are preconditioned CG.
* lambda1: LOBPCG on the Rayleigh quotient of the sum-of-squares form
  s ||DD f||^2 + (1 - s) ||grad^{1,0} f||^2_chi, constrained against
  constants, preconditioned by the inverse Fourier symbol of
  s Delta^2 + (1 - s) kappa (-Delta) at the flat metric.
* kappa: smallest generalized eigenvalue of the pencil (chi, g_phi) over nodes.

``dense_oracle`` assembles the same quadratic forms from explicit Fourier
differentiation matrices (no FFTs) for small grids.
"""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import _hermitian as herm
from . import operators as op
from .errors import NoConvergenceError

DEFAULT_MAXITER = 2000


@dataclass(frozen=True)
class SpectrumReport:
    mu1: float
    lambda1: float
    kappa: float
    bound_margin: float
    iterations: dict
    residuals: dict


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int


def kappa(ctx):
    """Largest kappa with chi >= kappa omega_phi at every node."""
    return float(herm.generalized_min_eig(ctx.setup.chi, ctx.ms.g).min())


def kernel_basis(grid):
    """Grid functions with zero spectral gradient: prod over a subset of axes of (-1)^index."""
    idx = np.indices(grid.shape)
    basis = []
    for mask in range(2 ** grid.ndim):
        f = np.ones(grid.shape)
        for a in range(grid.ndim):
            if mask >> a & 1:
                f = f * (1.0 - 2.0 * (idx[a] % 2))
        basis.append(f.ravel())
    return np.stack(basis, axis=1)


def _b_orthonormal(basis, det):
    """Columns spanning the same space, orthonormal in the det-weighted inner product."""
    sq = np.sqrt(det)[:, None]
    q, _ = np.linalg.qr(sq * basis)
    return q / sq


def _weighted_project(f, det, kb=None):
    """Remove the B-orthogonal projection onto the kernel (constants if ``kb`` is None)."""
    if kb is None:
        return f - np.sum(f * det) / np.sum(det)
    return f - kb @ (kb.T @ (det * f))


def _weighted_norm(f, det):
    return float(np.sqrt(np.mean(det * f * f)))


# ------------------------------------------------------------------- mu1


class _LaplaceSystem:
    """Solves of the weak weighted Laplacian K x = b on the complement of its kernel."""

    def __init__(self, ctx, tol):
        self.ctx = ctx
        self.grid = ctx.grid
        self.shape = ctx.grid.shape
        self.size = ctx.grid.size
        self.tol = tol
        sym = ctx.grid.laplacian_symbol
        self.inv_sym = np.divide(1.0, sym, out=np.zeros_like(sym), where=sym > 0)
        # Euclidean-orthonormal kernel basis; range(K) is its orthogonal complement
        self.kernel = kernel_basis(ctx.grid) / np.sqrt(self.size)
        self.cg_iters = 0

    def _deflate(self, x):
        return x - self.kernel @ (self.kernel.T @ x)

    def apply(self, x):
        return op.weak_laplacian(self.ctx, x.reshape(self.shape)).ravel()

    def precond(self, r):
        g = self.grid
        return g.backward(g.forward(r.reshape(self.shape)) * self.inv_sym).ravel()

    def solve(self, b):
        b = self._deflate(b)
        a_op = spla.LinearOperator((self.size, self.size), matvec=self.apply, dtype=float)
        m_op = spla.LinearOperator((self.size, self.size), matvec=self.precond, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.cg(a_op, b, rtol=self.tol, atol=0.0, M=m_op, maxiter=DEFAULT_MAXITER,
                          callback=cb)
        self.cg_iters += count[0]
        if info != 0:
            raise NoConvergenceError("inner CG solve for the Laplacian did not converge",
                                     best_estimate=None, residual=float("nan"))
        return x


def mu1(ctx, tol=1e-8, maxiter=DEFAULT_MAXITER, seed=0):
    """Smallest positive eigenvalue of -Delta_phi (weighted self-adjoint)."""
    det = ctx.ms.det_g.ravel()
    sq = np.sqrt(det)
    system = _LaplaceSystem(ctx, tol=1e-13)
    n = ctx.grid.size
    kb = _b_orthonormal(kernel_basis(ctx.grid), det)
    w_kernel = sq[:, None] * kb  # orthonormal in the Euclidean product

    def w_deflate(w):
        return w - w_kernel @ (w_kernel.T @ w)

    # S = D^{1/2} K^+ D^{1/2} on the complement of D^{1/2} ker K; its top eigenvalue is 1/mu1
    def s_apply(w):
        x = system.solve(sq * w_deflate(w))
        return w_deflate(sq * x)

    s_op = spla.LinearOperator((n, n), matvec=s_apply, dtype=float)
    rng = np.random.default_rng(seed)
    v0 = w_deflate(rng.standard_normal(n))
    try:
        vals, vecs = spla.eigsh(s_op, k=1, which="LA", v0=v0, tol=1e-13, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        best = 1.0 / exc.eigenvalues[0] if len(exc.eigenvalues) else None
        raise NoConvergenceError("Lanczos iteration for mu1 did not converge",
                                 best_estimate=best, residual=float("nan")) from None
    mu = 1.0 / vals[0]
    v = _weighted_project(vecs[:, 0] / sq, det, kb)
    kv = system.apply(v)
    res = _weighted_norm(kv / det - mu * v, det) / _weighted_norm(v, det)
    if res > tol * max(1.0, mu):
        raise NoConvergenceError(f"mu1 residual {res:.3e} above tolerance",
                                 best_estimate=mu, residual=res)
    return EigenResult(value=float(mu), vector=v.reshape(ctx.grid.shape), residual=float(res),
                       iterations=system.cg_iters)


# --------------------------------------------------------------- lambda1


def _twisted_preconditioner(ctx, kap):
    grid = ctx.grid
    s = ctx.s
    sym = s * grid.biharmonic_symbol + (1.0 - s) * kap * grid.laplacian_symbol
    shift = max(float(np.min(sym[sym > 0])) * 1e-3, 1e-12)
    inv = 1.0 / (sym + shift)
    inv.flat[0] = 0.0

    def apply(r):
        r = np.atleast_2d(r.T).T
        out = np.empty_like(r)
        for j in range(r.shape[1]):
            out[:, j] = grid.backward(grid.forward(r[:, j].reshape(grid.shape)) * inv).ravel()
        return out

    return apply


def lambda1(ctx, tol=1e-7, maxiter=DEFAULT_MAXITER, block=4, seed=0):
    """Smallest eigenvalue of L^s on weighted-mean-zero fields (Rayleigh quotient form)."""
    grid = ctx.grid
    n = grid.size
    det = ctx.ms.det_g.ravel()

    def a_apply(x):
        x = np.atleast_2d(x.T).T
        out = np.empty_like(x)
        for j in range(x.shape[1]):
            out[:, j] = op.weak_twisted(ctx, x[:, j].reshape(grid.shape)).ravel()
        return out

    def b_apply(x):
        x = np.atleast_2d(x.T).T
        return x * det[:, None]

    a_op = spla.LinearOperator((n, n), matvec=a_apply, matmat=a_apply, dtype=float)
    b_op = spla.LinearOperator((n, n), matvec=b_apply, matmat=b_apply, dtype=float)
    kap = kappa(ctx)
    pre = _twisted_preconditioner(ctx, max(kap, 1e-12))
    m_op = spla.LinearOperator((n, n), matvec=pre, matmat=pre, dtype=float)
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n, block))
    # low modes are the natural starting subspace
    x0 = pre(pre(x0))
    y = kernel_basis(grid)
    # lobpcg's tolerance is absolute on B-normalized vectors: a coarse pass
    # gives the eigenvalue scale, a second pass tightens to the relative target
    best = None
    x = x0
    total_iters = 0
    abs_tol = None
    for attempt in range(4):
        rtol = 1e-3 if abs_tol is None else abs_tol
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            vals, vecs, hist = spla.lobpcg(a_op, x, B=b_op, M=m_op, Y=y, tol=rtol,
                                           maxiter=maxiter, largest=False,
                                           retResidualNormsHistory=True)
        total_iters += len(hist)
        order = np.argsort(vals)
        lam = float(vals[order[0]])
        v = vecs[:, order[0]]
        v = _weighted_project(v, det, _b_orthonormal(y, det))
        res = float(np.linalg.norm(a_apply(v)[:, 0] - lam * det * v)
                    / (abs(lam) * np.linalg.norm(det * v)))
        best = (lam, v, res)
        if res <= tol:
            break
        abs_tol = 0.2 * tol * abs(lam) * (0.5 ** max(attempt - 1, 0))
        x = vecs
    lam, v, res = best
    if res > tol:
        raise NoConvergenceError(f"lambda1 residual {res:.3e} above tolerance",
                                 best_estimate=lam, residual=res)
    return EigenResult(value=lam, vector=v.reshape(grid.shape), residual=res,
                       iterations=total_iters)


def rayleigh_quotient(ctx, v):
    """Re int v L^s(v) omega^m / int v^2 omega^m."""
    return op.quadratic_form(ctx, v) / float(ctx.ms.integrate(v * v))


def spectrum(ctx, tol_mu=1e-8, tol_lambda=1e-7, maxiter=DEFAULT_MAXITER):
    m = mu1(ctx, tol=tol_mu, maxiter=maxiter)
    lam = lambda1(ctx, tol=tol_lambda, maxiter=maxiter)
    kap = kappa(ctx)
    return SpectrumReport(
        mu1=m.value, lambda1=lam.value, kappa=kap,
        bound_margin=lam.value - kap * (1.0 - ctx.s) * m.value,
        iterations={"mu1": m.iterations, "lambda1": lam.iterations},
        residuals={"mu1": m.residual, "lambda1": lam.residual},
    )


def sandwich_bounds(ms):
    """Interval for mu1(phi) implied by lam omega <= omega_phi <= omega / lam.

    Returns (lam, lower, upper) with lower = lam^(2m+1) pi^2, upper = lam^-(2m+1) pi^2.
    """
    ev = herm.eigvalsh(ms.g)
    lam = float(min(ev[0].min(), 1.0 / ev[-1].max()))
    p = 2 * ms.grid.m + 1
    return lam, lam ** p * np.pi ** 2, lam ** (-p) * np.pi ** 2


# ----------------------------------------------------------------- oracle


def _fourier_diff_matrix(n):
    """Dense first-derivative matrix on n periodic points of [0, 1), Nyquist dropped."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    k[np.abs(k) == n // 2] = 0.0
    f = np.fft.fft(np.eye(n), axis=0)
    return np.real(np.fft.ifft(2j * np.pi * k[:, None] * f, axis=0))


def _axis_operator(d1, ndim, axis):
    mats = [np.eye(d1.shape[0])] * ndim
    mats[axis] = d1
    out = mats[0]
    for mm in mats[1:]:
        out = np.kron(out, mm)
    return out


@dataclass(frozen=True)
class DenseSpectrum:
    mu: np.ndarray
    lam: np.ndarray


def dense_oracle(ctx, n_eigs=4):
    """Eigenvalues of both weighted problems from explicitly assembled matrices.

    Meant for coarse grids (size <= a few thousand). Returns the smallest
    ``n_eigs`` eigenvalues of each problem above its 2^(2m)-dimensional kernel.
    """
    grid = ctx.grid
    m = grid.m
    n = grid.size
    if n > 4096:
        raise ValueError("dense oracle is limited to at most 4096 unknowns")
    d1 = _fourier_diff_matrix(grid.n_axis)
    dx = [_axis_operator(d1, grid.ndim, a) for a in range(grid.ndim)]
    dz = [0.5 * (dx[2 * j] - 1j * dx[2 * j + 1]) for j in range(m)]
    dzb = [0.5 * (dx[2 * j] + 1j * dx[2 * j + 1]) for j in range(m)]
    g = ctx.ms.g.reshape(m, m, n)
    ginv = ctx.ms.ginv.reshape(m, m, n)
    chi = ctx.setup.chi.reshape(m, m, n)
    det = ctx.ms.det_g.ravel()

    # Laplace form: sum ginv[k, j] d_j f conj(d_k h) det
    k_lap = sum(dz[k].conj().T @ sum((ginv[k, j] * det)[:, None] * dz[j] for j in range(m))
                for k in range(m))
    # X^a = sum_g ginv[g, a] dbar_g f
    xa = [sum(ginv[gg, a][:, None] * dzb[gg] for gg in range(m)) for a in range(m)]
    # chi form: sum chi[a, b] X^a conj(X^b) det
    k_chi = sum(xa[b].conj().T @ sum((chi[a, b] * det)[:, None] * xa[a] for a in range(m))
                for b in range(m))
    # DD form: T[a, b] = dbar_b X^a, |T|^2 = sum g[a, c] ginv[b, d] T[a, b] conj(T[c, d])
    t = [[dzb[b] @ xa[a] for b in range(m)] for a in range(m)]
    k_dd = 0
    for c in range(m):
        for d in range(m):
            wt = sum((g[a, c] * ginv[b, d] * det)[:, None] * t[a][b]
                     for a in range(m) for b in range(m))
            k_dd = k_dd + t[c][d].conj().T @ wt
    del t, xa
    k_lap = np.real(k_lap + k_lap.conj().T) / (2 * n)
    k_tw = ctx.s * k_dd + (1.0 - ctx.s) * k_chi
    k_tw = np.real(k_tw + k_tw.conj().T) / (2 * n)
    # B is diagonal: reduce to a standard symmetric problem
    scale = 1.0 / np.sqrt(det / n)
    n_kernel = 2 ** grid.ndim
    window = [0, n_kernel + n_eigs - 1]

    def low(k):
        k = scale[:, None] * k * scale[None, :]
        return np.sort(sla.eigh(k, eigvals_only=True, subset_by_index=window))[n_kernel:]

    mu = low(k_lap)
    lam = low(k_tw)
    return DenseSpectrum(mu=mu, lam=lam)
