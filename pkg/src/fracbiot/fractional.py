"""Caputo L1 time discretization and its analytic verification oracles.

The discrete fractional derivative of order 0 < alpha <= 1 on a uniform grid
with step tau applies the weights

    zeta_tau = 1 / (tau^alpha * Gamma(2 - alpha))
    zeta_{j-1} = j^(1-alpha) - (j-1)^(1-alpha),   j >= 2

to the full stored history of solution vectors.  For alpha = 1 all history
weights are exactly zero and the scheme degenerates to the backward difference
(v^n - v^{n-1}) / tau bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class L1Weights:
    alpha: float
    tau: float
    zeta_tau: float
    zeta_j: np.ndarray   # zeta_j[j-2] = j^(1-alpha) - (j-1)^(1-alpha), j = 2..n_max

    def history_weight(self, j):
        """zeta_{j-1} for j >= 2."""
        return self.zeta_j[j - 2]


def l1_weights(alpha, tau, n_max) -> L1Weights:
    """Precompute the L1 weight table up to n_max time steps."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"fractional order alpha={alpha} outside (0, 1]")
    if tau <= 0.0:
        raise ConfigurationError("time step tau must be positive")
    if n_max < 1:
        raise ConfigurationError("n_max must be >= 1")
    zeta_tau = 1.0 / (tau ** alpha * math.gamma(2.0 - alpha))
    j = np.arange(2, n_max + 1, dtype=float)
    zeta_j = j ** (1.0 - alpha) - (j - 1.0) ** (1.0 - alpha)
    return L1Weights(alpha=float(alpha), tau=float(tau),
                     zeta_tau=zeta_tau, zeta_j=zeta_j)


class TimeHistory:
    """Ordered store of the solution vectors v^0 .. v^{n-1}.

    Single writer (the time loop); reads are safe from anywhere.
    """

    def __init__(self, v0):
        v0 = np.asarray(v0, dtype=float)
        self._vectors = [v0]
        self.dim = v0.shape[0]

    def append(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ContractError("history vector dimension mismatch")
        self._vectors.append(v)

    def __len__(self):
        return len(self._vectors)

    def __getitem__(self, k):
        return self._vectors[k]

    @property
    def steps_taken(self):
        return len(self._vectors) - 1


def caputo_apply(w: L1Weights, hist: TimeHistory, v_n) -> np.ndarray:
    """Discrete Caputo derivative at step n = len(hist) given the new value v^n."""
    v_n = np.asarray(v_n, dtype=float)
    if v_n.shape != (hist.dim,):
        raise ContractError("v_n dimension does not match history")
    n = len(hist)
    if n < 1:
        raise ContractError("history must contain at least v^0")
    acc = v_n - hist[n - 1]
    for j in range(2, n + 1):
        acc = acc + w.history_weight(j) * (hist[n - j + 1] - hist[n - j])
    return w.zeta_tau * acc


def memory_sum(w: L1Weights, hist: TimeHistory) -> np.ndarray:
    """sum_{j=2}^{n} zeta_{j-1} (v^{n-j+1} - v^{n-j}) for the upcoming step n.

    Empty (zero) at the first step; exactly zero for alpha = 1.
    """
    n = len(hist)
    acc = np.zeros(hist.dim)
    for j in range(2, n + 1):
        zj = w.history_weight(j)
        if zj != 0.0:
            acc = acc + zj * (hist[n - j + 1] - hist[n - j])
    return acc


# ---------------------------------------------------------------------------
# analytic oracles
# ---------------------------------------------------------------------------

_ML_MAX_TERMS = 500


def mittag_leffler(alpha, z) -> float:
    """E_alpha(z) on the decay branch z <= 0, abs accuracy 1e-10 for |z| <= 50.

    Power series with term-size stopping, evaluated in extended precision to
    absorb the cancellation of the alternating series.  For z < -10 (where the
    series would need thousands of terms) the exact complete-monotonicity
    integral representation is evaluated by adaptive quadrature instead.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"fractional order alpha={alpha} outside (0, 1]")
    z = float(z)
    if z > 0.0:
        raise ConfigurationError("only the decay regime z <= 0 is supported")
    if z == 0.0:
        return 1.0
    if alpha == 1.0:
        return math.exp(z)
    if z < -10.0:
        return _ml_integral(alpha, -z)
    dps = 40 + int(3.5 * abs(z))
    with mpmath.workdps(dps):
        mz = mpmath.mpf(z)
        ma = mpmath.mpf(alpha)     # gamma argument must not round through double
        total = mpmath.mpf(0)
        term = mpmath.mpf(1)
        # stop on absolute term size: partial sums are transiently huge during
        # cancellation, so a sum-relative test can fire early with a wrong total
        tiny = mpmath.mpf(10) ** -24
        for k in range(_ML_MAX_TERMS):
            total += term
            nxt = mz ** (k + 1) / mpmath.gamma(ma * (k + 1) + 1)
            if abs(nxt) < tiny:
                total += nxt
                return float(total)
            term = nxt
    return _ml_integral(alpha, -z)


def _ml_integral(alpha, x):
    # E_alpha(-x) = int_0^inf exp(-r * x^(1/alpha)) K(r) dr for 0 < alpha < 1,
    # K(r) = sin(alpha*pi)/pi * r^(alpha-1) / (r^(2a) + 2 r^a cos(alpha*pi) + 1)
    with mpmath.workdps(30):
        a = mpmath.mpf(alpha)
        t = mpmath.mpf(x) ** (1 / a)
        s = mpmath.sin(a * mpmath.pi)
        c = mpmath.cos(a * mpmath.pi)

        def kern(r):
            ra = r ** a
            return s / mpmath.pi * ra / r / (ra * ra + 2 * ra * c + 1) * mpmath.exp(-r * t)

        val = mpmath.quad(kern, [0, 1, mpmath.inf])
        return float(val)


def solve_scalar_fractional_decay(alpha, c, lam, tau, n_steps) -> np.ndarray:
    """L1 scheme for  c D^alpha p + lam p = 0,  p(0) = 1.

    Returns the trajectory p^0..p^N; the exact solution is
    E_alpha(-(lam / c) t^alpha).
    """
    if c <= 0.0 or lam < 0.0:
        raise ConfigurationError("need c > 0 and lam >= 0")
    w = l1_weights(alpha, tau, n_steps)
    hist = TimeHistory(np.array([1.0]))
    for n in range(1, n_steps + 1):
        mem = memory_sum(w, hist)
        rhs = c * w.zeta_tau * (hist[n - 1] - mem)
        p_n = rhs / (c * w.zeta_tau + lam)
        hist.append(p_n)
    return np.array([hist[k][0] for k in range(n_steps + 1)])
