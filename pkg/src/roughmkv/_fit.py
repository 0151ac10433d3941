from dataclasses import dataclass

import numpy as np

from .errors import EstimationError


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r2: float
    n: int


def loglog_fit(x, y, min_points=2):
    """Least-squares fit of log(y) = intercept + slope*log(x) over positive pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < max(min_points, 2):
        raise EstimationError(
            f"need at least {max(min_points, 2)} positive pairs for a log-log fit, got {int(keep.sum())}"
        )
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (intercept + slope * lx)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LogLogFit(float(slope), float(intercept), r2, int(keep.sum()))


def dyadic_lags(n_steps, min_lag=1):
    """Powers of two in [min_lag, n_steps // 2]."""
    lags = []
    lag = 1
    while lag <= n_steps // 2:
        if lag >= min_lag:
            lags.append(lag)
        lag *= 2
    return np.array(lags, dtype=int)
