"""Exception types shared across the package."""


class TCFlowError(Exception):
    """Base class for all package errors."""


class DataValidityError(TCFlowError, ValueError):
    """Input field contains NaN/Inf or has the wrong shape/dtype."""


class GridMismatchError(TCFlowError, ValueError):
    """Two fields do not live on the same grid."""


class PositivityError(TCFlowError):
    """The metric omega + i ddbar phi is not positive definite on the grid."""

    def __init__(self, margin, floor, phi=None):
        self.margin = float(margin)
        self.floor = float(floor)
        self.phi = phi
        super().__init__(
            f"metric left the Kahler cone: min eigenvalue {self.margin:.3e} <= {self.floor:.1e}"
        )


class StepFloorError(TCFlowError):
    """Adaptive step size fell below dt_min."""

    def __init__(self, dt, dt_min, t, phi=None):
        self.dt = dt
        self.dt_min = dt_min
        self.t = t
        self.phi = phi
        super().__init__(f"step size {dt:.3e} below dt_min={dt_min:.3e} at t={t:.6g}")


class NoConvergenceError(TCFlowError):
    """An iterative eigensolver did not reach its tolerance."""

    def __init__(self, message, best_estimate=None, residual=None):
        self.best_estimate = best_estimate
        self.residual = residual
        super().__init__(message)
