"""Statistical tests used across the pipeline.

Implements the product-moment correlation, the Shapiro-Wilk normality test
(Royston's approximation, valid for 3 <= n <= 5000), and the Mann-Whitney
U test with an exact null distribution for small tie-free samples and a
tie-corrected, continuity-corrected normal approximation otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    DegenerateVariance,
    EmptyGroup,
    InsufficientGroup,
    LengthMismatch,
    SampleTooLarge,
    SampleTooSmall,
)

SHAPIRO_MAX_N = 5000
EXACT_U_LIMIT = 10_000  # auto mode enumerates the null when n_a * n_b <= this


class StatMethod(Enum):
    SHAPIRO_WILK = "ShapiroWilk"
    MANN_WHITNEY_APPROX = "MannWhitneyApprox"
    MANN_WHITNEY_EXACT = "MannWhitneyExact"
    PEARSON = "Pearson"


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: StatMethod
    n1: int
    n2: int = 0


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"paired vectors differ: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise SampleTooSmall(f"need >= 3 pairs, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVariance("a variable has zero variance")
    r = float((dx * dy).sum() / (sx * sy))
    return max(-1.0, min(1.0, r))


# --- Shapiro-Wilk -------------------------------------------------------------

_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)


def _poly(coeffs, x: float) -> float:
    return float(sum(c * x**i for i, c in enumerate(coeffs)))


def shapiro_wilk(sample: Sequence[float]) -> TestResult:
    """Shapiro-Wilk W statistic and upper-tail p-value.

    Follows Royston's approximation: order-statistic weights from Blom-style
    normal quantiles with polynomial corrections to the two outermost
    coefficients, then a normalizing transform of W whose parameters depend
    on the sample size regime (exact for n = 3, one polynomial family for
    4 <= n <= 11, a log-based one for n >= 12).
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n < 3:
        raise SampleTooSmall(f"need n >= 3, got {n}")
    if n > SHAPIRO_MAX_N:
        raise SampleTooLarge(f"approximation valid to n = {SHAPIRO_MAX_N}, got {n}")
    if x[0] == x[-1]:
        raise DegenerateVariance("all sample values are equal")

    if n == 3:
        a = np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    else:
        m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
        mss = float((m * m).sum())
        c = m / math.sqrt(mss)
        u = 1.0 / math.sqrt(n)
        a = np.empty(n)
        a_n = c[-1] + _poly(_SW_C1, u)
        if n > 5:
            a_n1 = c[-2] + _poly(_SW_C2, u)
            phi = (mss - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (
                1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2
            )
            a[2:-2] = m[2:-2] / math.sqrt(phi)
            a[-2], a[1] = a_n1, -a_n1
        else:
            phi = (mss - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n**2)
            a[1:-1] = m[1:-1] / math.sqrt(phi)
        a[-1], a[0] = a_n, -a_n

    xm = x - x.mean()
    ssq = float((xm * xm).sum())
    w = float((a @ x) ** 2) / ssq
    w = min(w, 1.0)

    if n == 3:
        pi6 = 6.0 / math.pi
        stqr = math.asin(math.sqrt(0.75))
        p = pi6 * (math.asin(math.sqrt(w)) - stqr)
        p = min(1.0, max(0.0, p))
    elif n <= 11:
        gamma = _poly(_SW_G, n)
        if gamma - math.log1p(-w) <= 0.0:
            p = 1e-99
        else:
            y = -math.log(gamma - math.log1p(-w))
            mu = _poly(_SW_C3, n)
            sigma = math.exp(_poly(_SW_C4, n))
            p = float(1.0 - ndtr((y - mu) / sigma))
    else:
        ln_n = math.log(n)
        y = math.log1p(-w)
        mu = _poly(_SW_C5, ln_n)
        sigma = math.exp(_poly(_SW_C6, ln_n))
        p = float(1.0 - ndtr((y - mu) / sigma))

    return TestResult(statistic=w, p_value=p, method=StatMethod.SHAPIRO_WILK, n1=n)


# --- Mann-Whitney U ------------------------------------------------------------

def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_null_counts(n_a: int, n_b: int) -> np.ndarray:
    """Number of labelings of tie-free data yielding each U value 0..n_a*n_b.

    Computed with the classic rank-sum recurrence, which enumerates the
    full null distribution without materializing every labeling.
    """
    max_u = n_a * n_b
    # counts[m, u]: subsets of size m of the ranks seen so far with U = u
    counts = np.zeros((n_a + 1, max_u + 1), dtype=float)
    counts[0, 0] = 1.0
    for rank in range(1, n_a + n_b + 1):
        upper = min(rank, n_a)
        for m in range(upper, 0, -1):
            # choosing this rank as the m-th A-member adds (rank - m) to U
            shift = rank - m
            if shift == 0:
                counts[m, :] += counts[m - 1, :]
            elif shift <= max_u:
                counts[m, shift:] += counts[m - 1, : max_u + 1 - shift]
    return counts[n_a]


def _exact_two_sided_p(u_min: float, n_a: int, n_b: int) -> float:
    counts = _exact_null_counts(n_a, n_b)
    total = counts.sum()
    k = int(math.floor(u_min))
    low = counts[: k + 1].sum()
    # the null distribution is symmetric about n_a*n_b/2
    return float(min(1.0, 2.0 * low / total))


def mann_whitney_u(
    group_a: Sequence[float], group_b: Sequence[float], mode: str = "auto"
) -> TestResult:
    """Two-sided Mann-Whitney U test.

    U is computed from rank sums with mid-ranks for ties; the reported
    statistic is ``min(U_a, U_b)``. In ``auto`` mode the p-value comes from
    the exact null distribution when the data are tie-free and
    ``n_a * n_b <= 10000``, and otherwise from the normal approximation
    with tie-corrected variance and a 0.5 continuity correction. ``exact``
    forces enumeration (tie-free data required); ``approx`` forces the
    normal approximation.
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptyGroup("both groups must be non-empty")
    if mode not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown mode {mode!r}")

    n_a, n_b = int(a.size), int(b.size)
    combined = np.concatenate([a, b])
    ranks = _midranks(combined)
    r_a = float(ranks[:n_a].sum())
    u_a = r_a - n_a * (n_a + 1) / 2.0
    u_b = n_a * n_b - u_a
    u_min = min(u_a, u_b)

    _, tie_counts = np.unique(combined, return_counts=True)
    has_ties = bool((tie_counts > 1).any())

    use_exact = mode == "exact" or (mode == "auto" and not has_ties and n_a * n_b <= EXACT_U_LIMIT)
    if use_exact:
        if has_ties:
            raise ValueError("exact mode requires tie-free data")
        if n_a * n_b > EXACT_U_LIMIT:
            raise ValueError(f"exact mode limited to n_a*n_b <= {EXACT_U_LIMIT}")
        p = _exact_two_sided_p(u_min, n_a, n_b)
        method = StatMethod.MANN_WHITNEY_EXACT
    else:
        n = n_a + n_b
        mu = n_a * n_b / 2.0
        tie_term = float(((tie_counts**3 - tie_counts).sum())) / (n * (n - 1)) if n > 1 else 0.0
        var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
        if var <= 0.0:
            p = 1.0  # every value tied: the data carry no evidence either way
        else:
            z = (u_min - mu + 0.5) / math.sqrt(var)  # continuity correction toward the mean
            p = float(min(1.0, 2.0 * ndtr(z)))
        method = StatMethod.MANN_WHITNEY_APPROX

    return TestResult(statistic=float(u_min), p_value=p, method=method, n1=n_a, n2=n_b)


# --- covariate contrasts --------------------------------------------------------

CONTRAST_VARIABLES = (
    "Population",
    "Noise",
    "Traffic",
    "Speed",
    "Urban",
    "Suburban",
    "ParksRecreation",
    "Agricultural",
    "Natural",
    "Blue",
)


@dataclass(frozen=True)
class ContrastRow:
    variable: str
    u_statistic: float
    p_value: float
    n_agree: int
    n_disagree: int
    method: StatMethod
    shapiro_p_agree: float | None
    shapiro_p_disagree: float | None


def contrast_table(
    samples_by_variable: dict, agree_ids: set, disagree_ids: set, mode: str = "auto"
) -> list:
    """Agreement-vs-disagreement contrast for each contextual covariate.

    ``samples_by_variable`` maps each variable name to a ``{point_id: value}``
    dict. Normality of each group is screened with Shapiro-Wilk at 0.05 and
    recorded for the report; the group comparison itself always uses the
    rank-based Mann-Whitney test, which remains valid either way.
    """
    rows = []
    for variable in CONTRAST_VARIABLES:
        values = samples_by_variable.get(variable)
        if values is None:
            continue
        agree_vals = [values[pid] for pid in values if pid in agree_ids]
        disagree_vals = [values[pid] for pid in values if pid in disagree_ids]
        if len(agree_vals) < 2 or len(disagree_vals) < 2:
            raise InsufficientGroup(
                f"variable {variable!r}: need >= 2 samples per side, got "
                f"{len(agree_vals)} agree / {len(disagree_vals)} disagree"
            )
        sw_a = _shapiro_or_none(agree_vals)
        sw_d = _shapiro_or_none(disagree_vals)
        result = mann_whitney_u(agree_vals, disagree_vals, mode=mode)
        rows.append(
            ContrastRow(
                variable=variable,
                u_statistic=result.statistic,
                p_value=result.p_value,
                n_agree=len(agree_vals),
                n_disagree=len(disagree_vals),
                method=result.method,
                shapiro_p_agree=sw_a,
                shapiro_p_disagree=sw_d,
            )
        )
    return rows


def _shapiro_or_none(values) -> float | None:
    try:
        return shapiro_wilk(values).p_value
    except (SampleTooSmall, SampleTooLarge, DegenerateVariance):
        return None
