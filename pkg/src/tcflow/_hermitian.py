"""Pointwise linear algebra on component-first matrix fields.

A matrix field has shape ``(m, m) + grid.shape`` and a vector field
``(m,) + grid.shape``. m = 1 and m = 2 use closed forms; explicit loops over
the (tiny) component indices keep every numpy operation contiguous.
"""
import numpy as np


def eye(m, shape):
    out = np.zeros((m, m) + tuple(shape), dtype=complex)
    for j in range(m):
        out[j, j] = 1.0
    return out


def matmul(a, b):
    m = a.shape[0]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for i in range(m):
        for k in range(m):
            acc = a[i, 0] * b[0, k]
            for j in range(1, m):
                acc = acc + a[i, j] * b[j, k]
            out[i, k] = acc
    return out


def trace(a):
    return sum(a[j, j] for j in range(a.shape[0]))


def trace_product(a, b):
    """trace(a @ b) pointwise."""
    m = a.shape[0]
    return sum(a[i, j] * b[j, i] for i in range(m) for j in range(m))


def conj_transpose(a):
    return np.conj(np.swapaxes(a, 0, 1))


def det(h):
    m = h.shape[0]
    if m == 1:
        return h[0, 0].real.copy()
    if m == 2:
        return (h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]).real
    return np.linalg.det(np.moveaxis(h, (0, 1), (-2, -1))).real


def inv(h):
    m = h.shape[0]
    if m == 1:
        return 1.0 / h
    if m == 2:
        d = det(h)
        out = np.empty_like(h)
        out[0, 0] = h[1, 1] / d
        out[1, 1] = h[0, 0] / d
        out[0, 1] = -h[0, 1] / d
        out[1, 0] = -h[1, 0] / d
        return out
    return np.moveaxis(np.linalg.inv(np.moveaxis(h, (0, 1), (-2, -1))), (-2, -1), (0, 1))


def eigvalsh(h):
    """Ascending real eigenvalues of a Hermitian field, shape ``(m,) + grid.shape``."""
    m = h.shape[0]
    if m == 1:
        return h[0].real.copy()
    if m == 2:
        a = h[0, 0].real
        d = h[1, 1].real
        b2 = h[0, 1].real ** 2 + h[0, 1].imag ** 2
        mid = 0.5 * (a + d)
        rad = np.sqrt(0.25 * (a - d) ** 2 + b2)
        return np.stack([mid - rad, mid + rad])
    return np.moveaxis(np.linalg.eigvalsh(np.moveaxis(h, (0, 1), (-2, -1))), -1, 0)


def min_eig(h):
    return eigvalsh(h)[0]


def generalized_min_eig(a, b):
    """Smallest eigenvalue of the Hermitian pencil (a, b), b > 0, at every node."""
    m = a.shape[0]
    if m == 1:
        return (a[0, 0] / b[0, 0]).real
    if m == 2:
        # det(a - t b) = b_det t^2 - cross t + a_det
        b_det = det(b)
        a_det = det(a)
        cross = (a[0, 0] * b[1, 1] + a[1, 1] * b[0, 0] - a[0, 1] * b[1, 0] - a[1, 0] * b[0, 1]).real
        disc = np.sqrt(np.maximum(cross ** 2 - 4.0 * b_det * a_det, 0.0))
        return (cross - disc) / (2.0 * b_det)
    bl = np.moveaxis(b, (0, 1), (-2, -1))
    al = np.moveaxis(a, (0, 1), (-2, -1))
    li = np.linalg.inv(np.linalg.cholesky(bl))
    red = li @ al @ np.conj(np.swapaxes(li, -1, -2))
    return np.linalg.eigvalsh(red)[..., 0]


def hermitian_defect(h):
    """max |H - H^dagger| over the field."""
    return float(np.max(np.abs(h - conj_transpose(h))))
