"""Power-law fits in log-log space and exponent reports.

The fitted law is y = A x^(-exponent); the exponent is the negated slope of
an ordinary least-squares line through (ln x, ln y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .domino import scaling_exponents
from .trajectory import Trajectory

# default step-axis window, and the dim-axis cut below the critical region
STEPS_WINDOW = (1e3, 1e4)
DIMS_WINDOW = (0.0, 250.0)


class InsufficientDataError(ValueError):
    pass


class PowerLawDomainError(ValueError):
    pass


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    fit_window: tuple
    residual: float
    n_points: int
    jackknife_std: Optional[float] = None

    def predict(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** (-self.exponent)

    def to_dict(self) -> dict:
        return asdict(self)


def _select(xs, ys, window):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-d arrays of equal length")
    if window is None:
        lo, hi = -np.inf, np.inf
    else:
        lo, hi = window
    keep = (xs >= lo) & (xs <= hi)
    xs, ys = xs[keep], ys[keep]
    if np.any(xs <= 0) or np.any(ys <= 0) or not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise PowerLawDomainError("power-law fits need finite, strictly positive x and y")
    return xs, ys


def _ols(lx, ly):
    """Slope and intercept of the least-squares line."""
    mx, my = lx.mean(), ly.mean()
    dx = lx - mx
    sxx = dx @ dx
    if sxx == 0:
        raise InsufficientDataError("all abscissae coincide")
    slope = (dx @ (ly - my)) / sxx
    return slope, my - slope * mx


def fit_powerlaw(xs, ys, window=None) -> PowerLawFit:
    """Fit y = A x^(-exponent) to the points with x inside ``window`` (inclusive)."""
    x, y = _select(xs, ys, window)
    if x.size < 3:
        raise InsufficientDataError(f"need at least 3 points in the window, got {x.size}")
    lx, ly = np.log(x), np.log(y)
    slope, icpt = _ols(lx, ly)
    resid = ly - (icpt + slope * lx)
    rmse = math.sqrt(float(resid @ resid) / x.size)
    win = (float(x.min()), float(x.max()))
    return PowerLawFit(float(-slope), float(math.exp(icpt)), win, rmse, int(x.size))


def jackknife(xs, ys, window=None) -> float:
    """Leave-one-out standard error of the exponent.

    sqrt((n - 1) / n * sum_k (e_k - mean e)^2), the usual jackknife estimate.
    """
    x, y = _select(xs, ys, window)
    n = x.size
    if n - 1 < 3:
        raise InsufficientDataError(f"jackknife needs at least 4 points in the window, got {n}")
    lx, ly = np.log(x), np.log(y)
    keep = ~np.eye(n, dtype=bool)
    est = np.array([-_ols(lx[m], ly[m])[0] for m in keep])
    dev = est - est.mean()
    return float(math.sqrt((n - 1) / n * float(dev @ dev)))


def fit_with_error(xs, ys, window=None) -> PowerLawFit:
    fit = fit_powerlaw(xs, ys, window)
    if fit.n_points >= 4:
        fit.jackknife_std = jackknife(xs, ys, window)
    return fit


@dataclass
class ExponentReport:
    axis: str
    fit: PowerLawFit
    alpha: Optional[float]
    quanta: Optional[float]
    domino: Optional[float]

    @property
    def closer_to(self) -> Optional[str]:
        """Which prediction the fitted exponent sits nearer to."""
        if self.quanta is None or self.domino is None:
            return None
        dq = abs(self.fit.exponent - self.quanta)
        dd = abs(self.fit.exponent - self.domino)
        if dq == dd:
            return "tie"
        return "domino" if dd < dq else "quanta"

    def to_dict(self) -> dict:
        return {"axis": self.axis, "fit": self.fit.to_dict(), "alpha": self.alpha,
                "quanta": self.quanta, "domino": self.domino, "closer_to": self.closer_to}


def _xy_from_source(source, axis: str):
    if isinstance(source, Trajectory):
        return np.asarray(source.steps, dtype=float), source.total_loss
    arr = np.asarray(source, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("sweep tables must be a sequence of (x, loss) pairs")
    return arr[:, 0], arr[:, 1]


def exponent_report(source, axis: str = "steps", window=None, alpha: Optional[float] = None) -> ExponentReport:
    """Fit a loss curve (Trajectory) or a sweep table and set it beside the predictions.

    ``axis`` is ``steps`` (alpha_S) or ``dims`` (alpha_N). ``alpha`` defaults to
    the trajectory's own ``meta['alpha']`` when present.
    """
    if axis not in ("steps", "dims"):
        raise ValueError(f"axis must be 'steps' or 'dims', got {axis!r}")
    xs, ys = _xy_from_source(source, axis)
    if window is None:
        window = STEPS_WINDOW if axis == "steps" else (xs.min(), DIMS_WINDOW[1])
    fit = fit_with_error(xs, ys, window)
    if alpha is None and isinstance(source, Trajectory):
        alpha = source.meta.get("alpha")
    quanta = domino = None
    if alpha is not None:
        pred = scaling_exponents(alpha)
        k = 1 if axis == "steps" else 0
        quanta, domino = pred.quanta[k], pred.domino[k]
    return ExponentReport(axis, fit, alpha, quanta, domino)


def loglog_slope_window(xs: Sequence[float], ys: Sequence[float], lo: float, hi: float) -> float:
    """Exponent over [lo, hi]; shorthand for ``fit_powerlaw(...).exponent``."""
    return fit_powerlaw(xs, ys, (lo, hi)).exponent
