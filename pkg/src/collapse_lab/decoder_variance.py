"""Learnable decoder variance: profile loss, stationarity, and the five
collapse regimes it produces as beta varies.

With the decoder variance ``s`` optimized jointly, the loss profiled over
every other parameter becomes a differentiable 1-D function ``G(s)`` (the
Gaussian partition term ``(d2/2) log s`` now matters). Its minimizer is a
piecewise-rational function of beta; depending on the spectrum shape and
beta, the minimum is attained at a unique interior point, on a whole
interval, or not at all (the infimum sits at s -> 0, driving training
toward an increasingly ill-conditioned model).

Everything here takes the target power to coincide with the spectrum
power (targets realizable by a linear map). The numeric minimizer
:func:`minimize_profile` cross-checks the analytic solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .closed_form import Hyperparams
from .errors import DomainError
from .spectrum import DataSpectrum, effective_counts

REGIME_ILL_POSED = "ill_posed_zero"
REGIME_BOUNDARY = "boundary_interval"
REGIME_NO_COLLAPSE = "no_collapse"
REGIME_PARTIAL = "partial_collapse"
REGIME_COMPLETE = "complete_collapse"


@dataclass(frozen=True)
class DecVarSolution:
    """Classified optimum of the profile loss at one beta.

    ``s_star`` is the unique minimizer when one exists; ``None`` in the
    ill-posed regime (infimum at s -> 0) and in the boundary regime,
    where ``s_interval`` carries the full flat set of minimizers.
    ``beta_interval`` is the half-open [lo, hi) range of beta producing
    this regime for this spectrum. ``surviving_modes`` counts modes kept
    out of collapse.
    """

    regime: str
    surviving_modes: int
    s_star: float | None
    beta_interval: tuple[float, float]
    beta: float
    d1: int
    d2: int
    s_interval: tuple[float, float] | None = None
    notes: str = ""

    def to_json_dict(self) -> dict:
        finite = lambda v: None if v is None or not np.isfinite(v) else float(v)
        return {
            "regime": self.regime,
            "surviving_modes": self.surviving_modes,
            "s_star": finite(self.s_star),
            "s_interval": (
                [finite(v) for v in self.s_interval] if self.s_interval else None
            ),
            "beta_interval": [finite(v) for v in self.beta_interval],
            "beta": self.beta,
            "d1": self.d1,
            "d2": self.d2,
            "notes": self.notes,
        }


def profile_loss(sp: DataSpectrum, hp: Hyperparams, s: float) -> float:
    """Loss at decoder variance ``s`` with all other parameters optimal.

    Includes the ``(d2/2) log s`` partition term; excludes data constants
    that do not depend on ``s`` for realizable targets.
    """
    if not s > 0:
        raise DomainError(f"decoder variance must be > 0, got {s}")
    beta, d2 = hp.beta, sp.dim_y
    zeta_sq = sp.zeta_padded(hp.latent_dim) ** 2
    total = float(np.sum(sp.singular_values**2))
    alive = zeta_sq > beta * s
    z = zeta_sq[alive]
    survivors = float(np.sum(z / s + beta * (np.log(beta * s / z) - 1.0)))
    return float(0.5 * total / s - 0.5 * survivors + 0.5 * d2 * np.log(s))


def residual_power(sp: DataSpectrum, hp: Hyperparams, s: float) -> float:
    """Signal power left unexplained at the optimum for decoder variance s.

    Collapsed modes contribute their full power, surviving modes only the
    shrinkage floor ``beta * s``. The stationarity condition of the
    profile loss is ``d2 * s == residual_power(s)``.
    """
    if not s > 0:
        raise DomainError(f"decoder variance must be > 0, got {s}")
    zeta_sq = sp.zeta_padded(hp.latent_dim) ** 2
    total = float(np.sum(sp.singular_values**2))
    alive = zeta_sq > hp.beta * s
    return total - float(np.sum(zeta_sq[alive] - hp.beta * s))


def _bound(zsq: np.ndarray, d2: int, p: int) -> float:
    # beta at which mode p flips between surviving and collapsed
    tail = float(np.sum(zsq[p:]))
    return d2 * float(zsq[p - 1]) / (tail + p * float(zsq[p - 1]))


def solve_decoder_variance(sp: DataSpectrum, hp: Hyperparams) -> DecVarSolution:
    """Classify the optimum of the profile loss for the queried beta.

    ``hp.eta_dec`` is ignored: the decoder variance is the unknown here.
    """
    beta, d1, d2 = hp.beta, hp.latent_dim, sp.dim_y
    _, d_star_hat, d1_hat = effective_counts(sp, d1)
    zsq = sp.singular_values[:d_star_hat] ** 2

    if d1_hat == 0:
        return DecVarSolution(
            regime=REGIME_ILL_POSED,
            surviving_modes=0,
            s_star=None,
            beta_interval=(0.0, np.inf),
            beta=beta,
            d1=d1,
            d2=d2,
            notes="zero spectrum: profile loss decreases without bound as s -> 0",
        )

    if d1_hat == d_star_hat:
        threshold = d2 / d1_hat
        if beta < threshold:
            return DecVarSolution(
                regime=REGIME_ILL_POSED,
                surviving_modes=d1_hat,
                s_star=None,
                beta_interval=(0.0, threshold),
                beta=beta,
                d1=d1,
                d2=d2,
                notes="no minimizer on (0, inf); training drives s toward 0",
            )
        if beta == threshold:
            top = float(zsq[d1_hat - 1]) / beta
            return DecVarSolution(
                regime=REGIME_BOUNDARY,
                surviving_modes=d1_hat,
                s_star=None,
                beta_interval=(threshold, threshold),
                beta=beta,
                d1=d1,
                d2=d2,
                s_interval=(0.0, top),
                notes=(
                    "flat global-minimum set (0, s_top]; at s = s_top the "
                    "smallest mode sits exactly at its threshold, so the "
                    "surviving count there reads one lower"
                ),
            )

    for p in range(d1_hat, -1, -1):
        lo = _bound(zsq, d2, p + 1) if p < d1_hat else 0.0
        hi = _bound(zsq, d2, p) if p >= 1 else np.inf
        if lo <= beta < hi:
            s_star = float(np.sum(zsq[p:])) / (d2 - beta * p)
            if p == d1_hat:
                regime = REGIME_NO_COLLAPSE
            elif p == 0:
                regime = REGIME_COMPLETE
            else:
                regime = REGIME_PARTIAL
            return DecVarSolution(
                regime=regime,
                surviving_modes=p,
                s_star=s_star,
                beta_interval=(lo, hi),
                beta=beta,
                d1=d1,
                d2=d2,
            )

    raise AssertionError("beta intervals failed to cover the positive axis")


def beta_breakpoints(sp: DataSpectrum, hp: Hyperparams) -> list[dict]:
    """Full regime table of this spectrum: one row per beta interval."""
    d1, d2 = hp.latent_dim, sp.dim_y
    _, d_star_hat, d1_hat = effective_counts(sp, d1)
    zsq = sp.singular_values[:d_star_hat] ** 2
    rows: list[dict] = []

    def row(regime, p, lo, hi, s_star=None):
        rows.append(
            {
                "regime": regime,
                "surviving_modes": p,
                "beta_lo": lo,
                "beta_hi": hi,
                "s_star": s_star,
            }
        )

    if d1_hat == 0:
        row(REGIME_ILL_POSED, 0, 0.0, np.inf)
        return rows
    if d1_hat == d_star_hat:
        threshold = d2 / d1_hat
        row(REGIME_ILL_POSED, d1_hat, 0.0, threshold)
        row(REGIME_BOUNDARY, d1_hat, threshold, threshold)
    else:
        row(REGIME_NO_COLLAPSE, d1_hat, 0.0, _bound(zsq, d2, d1_hat))
    for p in range(d1_hat - 1, 0, -1):
        lo, hi = _bound(zsq, d2, p + 1), _bound(zsq, d2, p)
        if lo < hi:
            row(REGIME_PARTIAL, p, lo, hi)
    row(REGIME_COMPLETE, 0, _bound(zsq, d2, 1), np.inf, float(np.sum(zsq)) / d2)
    return rows


def minimize_profile(
    sp: DataSpectrum,
    hp: Hyperparams,
    s_range: tuple[float, float] | None = None,
    grid_points: int = 4000,
) -> float:
    """Numeric argmin of the profile loss on a bracket.

    Log-spaced grid scan followed by golden-section refinement; returns
    the bracket edge when the minimum sits there (the ill-posed case).
    The default bracket spans from well below the smallest threshold to
    a point where the profile provably rises.
    """
    if s_range is None:
        zsq = sp.singular_values**2
        top = float(zsq[0]) if zsq.size and zsq[0] > 0 else 1.0
        s1 = top / hp.beta
        s_lo = 1e-8 * max(s1, 1.0)
        s_hi = s1 + float(np.sum(zsq)) + 1.0
    else:
        s_lo, s_hi = s_range
    if not (0 < s_lo < s_hi):
        raise DomainError(f"need 0 < s_lo < s_hi, got ({s_lo}, {s_hi})")

    grid = np.geomspace(s_lo, s_hi, grid_points)
    values = np.array([profile_loss(sp, hp, s) for s in grid])
    idx = int(np.argmin(values))
    if idx == 0:
        return float(grid[0])
    if idx == grid_points - 1:
        return float(grid[-1])
    result = optimize.minimize_scalar(
        lambda s: profile_loss(sp, hp, s),
        bracket=(grid[idx - 1], grid[idx], grid[idx + 1]),
        method="golden",
        options={"xtol": 1e-12, "maxiter": 500},
    )
    return float(result.x)
