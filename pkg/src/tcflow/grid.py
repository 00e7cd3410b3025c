"""Periodic grids on the unit flat torus C^m / (Z^m + i Z^m).

Fields are plain numpy arrays of shape ``grid.shape``. Array axes are ordered
``(x_1, y_1, ..., x_m, y_m)`` with ``z_j = x_j + i y_j``; axis ``2j`` is
``x_j`` and axis ``2j + 1`` is ``y_j``.

Real fields are differentiated through real FFTs and complex fields through
full complex FFTs. The Nyquist wavenumber is zeroed
in every derivative multiplier so that higher derivatives are exact
compositions of first derivatives and the discrete first-derivative
operator is exactly antisymmetric under the grid sum (discrete integration
by parts holds to roundoff).
"""
import numpy as np
import scipy.fft as sfft

from .errors import DataValidityError, GridMismatchError

__all__ = ["PeriodicGrid"]


def _is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


class PeriodicGrid:
    """Uniform grid with ``n_axis`` points per real axis in real dimension 2m.

    Parameters
    ----------
    m : int
        Complex dimension, 1 or 2.
    n_axis : int
        Points per real axis; a power of two, at least 8.
    """

    def __init__(self, m, n_axis):
        if m not in (1, 2):
            raise ValueError(f"complex dimension must be 1 or 2, got {m}")
        if n_axis < 8 or not _is_power_of_two(n_axis):
            raise ValueError(f"n_axis must be a power of two >= 8, got {n_axis}")
        self.m = int(m)
        self.n_axis = int(n_axis)
        self.ndim = 2 * self.m
        self.shape = (self.n_axis,) * self.ndim
        self.size = self.n_axis ** self.ndim
        self.spacing = 1.0 / self.n_axis

        n = self.n_axis
        k_full = np.fft.fftfreq(n, d=1.0 / n)
        k_half = np.fft.rfftfreq(n, d=1.0 / n)
        # integer wavenumbers (Nyquist kept) for masks and the flat Laplacian
        self.wavenumbers = []
        for a in range(self.ndim):
            k = k_half if a == self.ndim - 1 else k_full
            bshape = [1] * self.ndim
            bshape[a] = k.size
            self.wavenumbers.append(k.reshape(bshape))
        self._deriv_k = []
        for k in self.wavenumbers:
            kd = k.copy()
            kd[np.abs(kd) == n // 2] = 0.0
            self._deriv_k.append(kd)
        self.spectral_shape = self.shape[:-1] + (n // 2 + 1,)
        self._mult_cache = {}
        self._full_k = []
        for a in range(self.ndim):
            k = k_full.copy()
            k[np.abs(k) == n // 2] = 0.0
            bshape = [1] * self.ndim
            bshape[a] = n
            self._full_k.append(k.reshape(bshape))
        self._mask = None
        self._coords = None

    def __repr__(self):
        return f"PeriodicGrid(m={self.m}, n_axis={self.n_axis})"

    def __eq__(self, other):
        return isinstance(other, PeriodicGrid) and (self.m, self.n_axis) == (other.m, other.n_axis)

    def __hash__(self):
        return hash((self.m, self.n_axis))

    # ------------------------------------------------------------------ checks

    def check(self, f, name="field"):
        f = np.asarray(f)
        if f.shape != self.shape:
            raise GridMismatchError(f"{name} has shape {f.shape}, grid expects {self.shape}")
        if not np.all(np.isfinite(f)):
            raise DataValidityError(f"{name} contains non-finite values")
        return f

    def same_grid(self, other):
        if other != self:
            raise GridMismatchError(f"{other!r} does not match {self!r}")

    # ------------------------------------------------------------- coordinates

    @property
    def coords(self):
        """Tuple of coordinate arrays (x_1, y_1, ...), each of shape ``self.shape``."""
        if self._coords is None:
            x = np.arange(self.n_axis) * self.spacing
            self._coords = tuple(np.meshgrid(*([x] * self.ndim), indexing="ij"))
        return self._coords

    def fourier_mode(self, k, phase=0.0):
        """cos(2 pi k.x + phase) for an integer vector k of length 2m."""
        k = np.asarray(k, dtype=float)
        if k.size != self.ndim:
            raise ValueError(f"wave vector needs {self.ndim} entries")
        arg = sum(2.0 * np.pi * ka * xa for ka, xa in zip(k, self.coords))
        return np.cos(arg + phase)

    # ------------------------------------------------------------- transforms

    def forward(self, f):
        return sfft.rfftn(f, axes=range(self.ndim))

    def backward(self, fhat):
        return sfft.irfftn(fhat, s=self.shape, axes=range(self.ndim))

    def multiplier(self, orders):
        """Fourier multiplier of prod_a (d/dx_a)^orders[a]."""
        orders = tuple(int(o) for o in orders)
        mult = self._mult_cache.get(orders)
        if mult is None:
            mult = np.ones(self.spectral_shape, dtype=complex)
            for a, o in enumerate(orders):
                if o:
                    mult = mult * (2j * np.pi * self._deriv_k[a]) ** o
            self._mult_cache[orders] = mult
        return mult

    def _orders(self, *axes):
        o = [0] * self.ndim
        for a in axes:
            o[a] += 1
        return tuple(o)

    def _apply(self, fhat, mult):
        return self.backward(fhat * mult)

    # ---------------------------------------------------------- differentiation

    def derivative(self, f, axis, order=1):
        """Spectral derivative of order ``order`` along real axis ``axis``."""
        if not 0 <= axis < self.ndim:
            raise ValueError(f"axis must be in [0, {self.ndim})")
        if not 1 <= order <= 4:
            raise ValueError("derivative order must be between 1 and 4")
        f = self.check(f)
        if np.iscomplexobj(f):
            return self.derivative(f.real, axis, order) + 1j * self.derivative(f.imag, axis, order)
        orders = [0] * self.ndim
        orders[axis] = order
        return self._apply(self.forward(f), self.multiplier(orders))

    def _first_derivs(self, fhat, j):
        fx = self._apply(fhat, self.multiplier(self._orders(2 * j)))
        fy = self._apply(fhat, self.multiplier(self._orders(2 * j + 1)))
        return fx, fy

    def _complex_dz_multiplier(self, j, conjugate):
        key = ("cz", j, conjugate)
        mult = self._mult_cache.get(key)
        if mult is None:
            kx, ky = self._full_k[2 * j], self._full_k[2 * j + 1]
            sign = 1.0 if conjugate else -1.0
            # (d/dx -+ i d/dy) / 2 on exp(2 pi i k.x)
            mult = np.pi * (1j * kx - sign * ky) * np.ones(self.shape)
            self._mult_cache[key] = mult
        return mult

    def _complex_axes(self):
        return tuple(range(self.ndim))

    def partial(self, f, j, conjugate=False, fhat=None):
        """Single component d f / d z_j (or d f / d zbar_j) of a real or complex field.

        For complex ``f`` the optional ``fhat`` is its full complex FFT.
        """
        if np.iscomplexobj(f):
            if fhat is None:
                fhat = sfft.fftn(f, axes=self._complex_axes())
            return sfft.ifftn(fhat * self._complex_dz_multiplier(j, conjugate),
                              axes=self._complex_axes())
        # d/dz = (d/dx - i d/dy) / 2, d/dzbar = (d/dx + i d/dy) / 2
        sign = 1.0 if conjugate else -1.0
        out = np.empty(self.shape, dtype=complex)
        if fhat is None:
            fhat = self.forward(f)
        fx, fy = self._first_derivs(fhat, j)
        out.real = 0.5 * fx
        out.imag = (0.5 * sign) * fy
        return out

    def _dz_impl(self, f, fhat, conjugate):
        out = np.empty((self.m,) + self.shape, dtype=complex)
        if fhat is None:
            if np.iscomplexobj(f):
                fhat = sfft.fftn(f, axes=self._complex_axes())
            else:
                fhat = self.forward(f)
        for j in range(self.m):
            out[j] = self.partial(f, j, conjugate, fhat)
        return out

    def dz(self, f, fhat=None):
        """Holomorphic gradient d f / d z_j, shape ``(m,) + shape``."""
        return self._dz_impl(f, fhat, conjugate=False)

    def dzbar(self, f, fhat=None):
        """Antiholomorphic gradient d f / d zbar_j, shape ``(m,) + shape``."""
        return self._dz_impl(f, fhat, conjugate=True)

    def holo_hessian(self, f, fhat=None):
        """Complex Hessian H[j, k] = d^2 f / dz_j dzbar_k of a real field, shape ``(m, m) + shape``."""
        if np.iscomplexobj(f):
            raise DataValidityError("holo_hessian expects a real field")
        if fhat is None:
            fhat = self.forward(f)
        m = self.m
        out = np.empty((m, m) + self.shape, dtype=complex)
        for j in range(m):
            out[j, j] = self._apply(fhat, self._hessian_multiplier(j, j, "re"))
            for k in range(j + 1, m):
                re = self._apply(fhat, self._hessian_multiplier(j, k, "re"))
                im = self._apply(fhat, self._hessian_multiplier(j, k, "im"))
                out[j, k].real = re
                out[j, k].imag = im
                out[k, j].real = re
                out[k, j].imag = -im
        return out

    def _hessian_multiplier(self, j, k, part):
        key = ("hess", j, k, part)
        mult = self._mult_cache.get(key)
        if mult is None:
            o = self._orders
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            if part == "re":
                mult = 0.25 * (self.multiplier(o(xj, xk)) + self.multiplier(o(yj, yk)))
            else:
                mult = 0.25 * (self.multiplier(o(xj, yk)) - self.multiplier(o(yj, xk)))
            self._mult_cache[key] = mult
        return mult

    @property
    def biharmonic_symbol(self):
        """Multiplier of Delta^2 for the flat metric, Delta = (1/4) Euclidean Laplacian.

        Equals pi^4 |k|^4 on integer mode k.
        """
        lap = sum((np.pi * k) ** 2 for k in self._deriv_k) * np.ones(self.spectral_shape)
        return lap ** 2

    @property
    def laplacian_symbol(self):
        """Multiplier of -Delta for the flat metric: pi^2 |k|^2."""
        return sum((np.pi * k) ** 2 for k in self._deriv_k) * np.ones(self.spectral_shape)

    # --------------------------------------------------------------- products

    @property
    def dealias_mask(self):
        """Boolean spectral mask keeping |k_a| <= n/3 on every axis (2/3 rule)."""
        if self._mask is None:
            cut = self.n_axis // 3
            mask = np.ones(self.spectral_shape, dtype=bool)
            for k in self.wavenumbers:
                mask = mask & (np.abs(k) <= cut)
            self._mask = mask
        return self._mask

    def dealias(self, f):
        f = self.check(f)
        if np.iscomplexobj(f):
            return self.dealias(f.real) + 1j * self.dealias(f.imag)
        return self.backward(self.forward(f) * self.dealias_mask)

    def dealiased_product(self, f, g):
        """Pointwise product with Fourier content above 2/3 of Nyquist removed."""
        f = self.check(f, "f")
        g = self.check(g, "g")
        return self.dealias(f * g)

    # ------------------------------------------------------------ quadrature

    def integrate(self, f, weight=None):
        """Rectangle-rule integral over the unit torus (volume 1)."""
        f = np.asarray(f)
        if f.shape != self.shape:
            raise GridMismatchError(f"field has shape {f.shape}, grid expects {self.shape}")
        if weight is not None:
            f = f * weight
        total = np.sum(f) / self.size
        return complex(total) if np.iscomplexobj(total) else float(total)

    # -------------------------------------------------------------- sampling

    def random_bandlimited(self, rng, max_mode, amplitude=1.0, decay=1.0):
        """Random smooth real field with Fourier support |k_a| <= max_mode.

        Coefficients are Gaussian, damped by (1 + |k|^2)^(-decay); the mean
        is removed and the field is scaled to sup-norm ``amplitude``.
        """
        if max_mode < 1 or max_mode > self.n_axis // 3:
            raise ValueError("max_mode must lie in [1, n_axis/3]")
        coef = (rng.standard_normal(self.spectral_shape)
                + 1j * rng.standard_normal(self.spectral_shape))
        ksq = sum(k ** 2 for k in self.wavenumbers)
        keep = np.ones(self.spectral_shape, dtype=bool)
        for k in self.wavenumbers:
            keep &= np.abs(k) <= max_mode
        coef = coef * keep * (1.0 + ksq) ** (-decay)
        coef.flat[0] = 0.0
        f = self.backward(coef)
        return amplitude * f / np.max(np.abs(f))
