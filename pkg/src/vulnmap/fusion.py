"""Fusion of the socioeconomic and accessibility dimensions into one index.

Household scores are summarised per radio with Tukey's trimean. Both radio
columns are then Gaussianised through their rankits, the 2x2 covariance of
the Gaussianised matrix is diagonalised, and the leading component scores are
mapped to [0, 1] by a log-spline CDF fitted to them.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import (ConstantColumn, DomainError, EmptyInput, FitDiverged, LengthMismatch,
                     MalformedRow, TooFewRadios, ZeroVariance)

log = logging.getLogger(__name__)

MIN_FUSE_RADIOS = 50


# ---------------------------------------------------------------------------
# Robust summaries and rank transforms
# ---------------------------------------------------------------------------

def quantile(values: Sequence[float], p: float) -> float:
    """Linear interpolation between order statistics at rank ``1 + p (n - 1)``."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise EmptyInput("quantile of empty input")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    h = p * (x.size - 1)
    lo = int(math.floor(h))
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


def trimean(values: Sequence[float]) -> float:
    """Tukey's trimean: ``Q(.25)/4 + Q(.5)/2 + Q(.75)/4``."""
    if len(values) == 0:
        raise EmptyInput("trimean of empty input")
    return 0.25 * quantile(values, 0.25) + 0.5 * quantile(values, 0.5) + 0.25 * quantile(values, 0.75)


def rankit(values: Sequence[float]) -> np.ndarray:
    """``(rank - 0.5) / n`` with midranks for ties."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise EmptyInput("rankit of empty input")
    return (rankdata(x, method="average") - 0.5) / x.size


def inv_normal_cdf(p):
    """Standard normal quantile. Raises :class:`DomainError` outside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise DomainError("inverse normal CDF needs 0 < p < 1")
    out = ndtri(arr)
    return float(out) if out.ndim == 0 else out


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of midranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths {x.size} and {y.size} differ")
    if x.size < 3:
        raise LengthMismatch("need at least 3 pairs")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sx, sy = math.sqrt(float(rx @ rx)), math.sqrt(float(ry @ ry))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("constant input has no rank correlation")
    return float(np.clip((rx @ ry) / (sx * sy), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Semiparametric PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SPCAResult:
    z: np.ndarray
    eigenvalues: np.ndarray
    loadings: np.ndarray
    scores: np.ndarray
    variance_share_1: float
    covariance: np.ndarray


def gaussianize(values: Sequence[float]) -> np.ndarray:
    return ndtri(rankit(values))


def spca(columns: Sequence[Sequence[float]], orient: Sequence[float] = (-1.0, 1.0)) -> SPCAResult:
    """PCA of the rankit-Gaussianised columns.

    The covariance is ``Z'Z / n`` of the centred Gaussianised matrix. Columns
    of ``loadings`` are eigenvectors in decreasing eigenvalue order and
    ``scores = Z @ loadings``. The leading loading is signed to agree with
    ``orient``; the default suits ``(socioeconomic, travel_time)`` input, giving
    a component that grows with travel time and falls with status.
    """
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise LengthMismatch("columns differ in length")
    if n < 3:
        raise ValueError("need at least 3 rows")
    for j, c in enumerate(cols):
        if np.unique(c).size < 2:
            raise ConstantColumn(f"column {j} has fewer than 2 distinct values")
    z = np.column_stack([gaussianize(c) for c in cols])
    zc = z - z.mean(axis=0)
    cov = zc.T @ zc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    U = evecs[:, order]
    lead = U[:, 0]
    s = float(lead @ np.asarray(orient, dtype=float))
    if abs(s) < 1e-12:
        s = float(lead[-1])
    if s < 0:
        U[:, 0] = -lead
    if U.shape[0] == 2 and np.linalg.det(U) < 0:
        U[:, 1] = -U[:, 1]
    scores = zc @ U
    total = float(evals.sum())
    share = float(evals[0] / total) if total > 0 else float("nan")
    return SPCAResult(z, evals, U, scores, share, cov)


# ---------------------------------------------------------------------------
# Log-spline CDF
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL_U = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


class LogsplineCDF:
    """CDF of a density whose log is piecewise linear between knots.

    Support is ``[knots[0], knots[-1]]``; the CDF is 0 below and 1 above.
    When ``fallback`` is set the instance instead interpolates the empirical
    CDF linearly.
    """

    def __init__(self, knots, theta=None, loglik=float("nan"), aic=float("nan"),
                 fallback=False, ecdf=None, aic_table=None):
        self.knots = np.asarray(knots, dtype=float)
        self.theta = None if theta is None else np.asarray(theta, dtype=float)
        self.loglik = loglik
        self.aic = aic
        self.fallback = fallback
        self.aic_table = aic_table or {}
        self._ecdf = ecdf
        if not fallback:
            t = self.theta - self.theta.max()
            h = np.diff(self.knots)
            self._shifted = t
            self._mass = h * _exp_mean(t[:-1], t[1:])
            self._cum = np.concatenate([[0.0], np.cumsum(self._mass)])
            self._total = self._cum[-1]

    @property
    def n_knots(self) -> int:
        return self.knots.size

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        g = np.interp(x, self.knots, self.theta)
        logz = math.log(self._total) + float(self.theta.max())
        out = g - logz
        return np.where((x < self.knots[0]) | (x > self.knots[-1]), -np.inf, out)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.fallback:
            xs, fs = self._ecdf
            out = np.interp(x, xs, fs, left=0.0, right=1.0)
            return float(out) if out.ndim == 0 else out
        t, k = self._shifted, self.knots
        j = np.clip(np.searchsorted(k, x, side="right") - 1, 0, k.size - 2)
        dx = np.clip(x - k[j], 0.0, None)
        dx = np.minimum(dx, k[j + 1] - k[j])
        slope = (t[j + 1] - t[j]) / (k[j + 1] - k[j])
        part = np.exp(t[j]) * _expm1_over(slope, dx)
        out = (self._cum[j] + part) / self._total
        out = np.where(x <= k[0], 0.0, np.where(x >= k[-1], 1.0, out))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out


def _exp_mean(a, b):
    """Mean of exp over a segment whose log goes linearly from a to b."""
    d = b - a
    small = np.abs(d) < 1e-8
    safe = np.where(small, 1.0, d)
    return np.where(small, np.exp(a) * (1.0 + d / 2.0), (np.exp(b) - np.exp(a)) / safe)


def _expm1_over(m, dx):
    """``(exp(m dx) - 1) / m``, continuous at ``m = 0``."""
    small = np.abs(m * dx) < 1e-10
    safe = np.where(m == 0.0, 1.0, m)
    return np.where(small, dx * (1.0 + m * dx / 2.0), np.expm1(m * dx) / safe)


def _hat_stats(x, knots):
    """Sum over samples of each hat basis function."""
    j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, knots.size - 2)
    u = (x - knots[j]) / (knots[j + 1] - knots[j])
    c = np.zeros(knots.size)
    np.add.at(c, j, 1.0 - u)
    np.add.at(c, j + 1, u)
    return c


def _normalizer_terms(theta, knots):
    """Z, grad Z and Hessian of Z (all scaled by exp(-max theta)) by Gauss-Legendre."""
    K = knots.size
    h = np.diff(knots)
    t = theta - theta.max()
    a, b = t[:-1, None], t[1:, None]
    u = _GL_U[None, :]
    e = np.exp((1.0 - u) * a + u * b) * _GL_W[None, :] * h[:, None]
    w0, w1 = 1.0 - u, u
    Z = float(e.sum())
    grad = np.zeros(K)
    grad[:-1] += (e * w0).sum(axis=1)
    grad[1:] += (e * w1).sum(axis=1)
    H = np.zeros((K, K))
    d00 = (e * w0 * w0).sum(axis=1)
    d01 = (e * w0 * w1).sum(axis=1)
    d11 = (e * w1 * w1).sum(axis=1)
    idx = np.arange(K - 1)
    H[idx, idx] += d00
    H[idx + 1, idx + 1] += d11
    H[idx, idx + 1] += d01
    H[idx + 1, idx] += d01
    return Z, grad, H, float(theta.max())


def _fit_knots(x, knots, max_iter=200, tol=1e-10):
    """Maximum likelihood log-density values at ``knots``; ``theta[0]`` is pinned at 0."""
    n = x.size
    c = _hat_stats(x, knots) / n
    theta = np.zeros(knots.size)

    def objective(th):
        Z, _, _, shift = _normalizer_terms(th, knots)
        return float(c @ th) - (math.log(Z) + shift)

    f = objective(theta)
    for _ in range(max_iter):
        Z, gZ, HZ, _ = _normalizer_terms(theta, knots)
        p = gZ / Z
        grad = (c - p)[1:]
        hess = -(HZ / Z - np.outer(p, p))[1:, 1:]
        if np.max(np.abs(grad)) < tol:
            break
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            raise FitDiverged("singular Hessian") from None
        slope = float(grad @ step)
        if not slope > 0:
            step, slope = grad, float(grad @ grad)
        alpha = 1.0
        while True:
            cand = theta.copy()
            cand[1:] += alpha * step
            f_new = objective(cand)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                raise FitDiverged("line search failed")
        theta, f_prev, f = cand, f, f_new
        if abs(f - f_prev) < 1e-15 * max(1.0, abs(f)) and alpha == 1.0:
            break
    else:
        raise FitDiverged(f"no convergence after {max_iter} Newton steps")
    if not np.all(np.isfinite(theta)):
        raise FitDiverged("non-finite log-density")
    return theta, n * f


def empirical_cdf(x) -> LogsplineCDF:
    xs = np.sort(np.asarray(x, dtype=float))
    uniq, counts = np.unique(xs, return_counts=True)
    fs = np.cumsum(counts) / xs.size
    if uniq.size == 1:
        uniq, fs = np.array([uniq[0], uniq[0] + 1.0]), np.array([1.0, 1.0])
    return LogsplineCDF(uniq[[0, -1]], fallback=True, ecdf=(uniq, fs))


def logspline_cdf_fit(scores: Sequence[float], knot_range=(3, 10), fallback: bool = True
                      ) -> LogsplineCDF:
    """Fit a log-spline density by maximum likelihood and return its CDF.

    For every knot count in ``knot_range`` (inclusive) knots sit at equally
    spaced sample quantiles; the count with the lowest
    ``AIC = -2 loglik + 2 (knots - 1)`` wins. If no count can be fitted, the
    linearly interpolated empirical CDF is returned with ``fallback=True``
    (or :class:`FitDiverged` is raised when ``fallback`` is false).
    """
    x = np.asarray(scores, dtype=float)
    if x.size == 0:
        raise EmptyInput("no scores to fit")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    best = None
    table = {}
    lo, hi = knot_range
    for k in range(lo, hi + 1):
        knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, k)))
        if knots.size != k:
            continue
        try:
            theta, loglik = _fit_knots(x, knots)
        except FitDiverged as exc:
            log.debug("logspline with %d knots failed: %s", k, exc)
            continue
        aic = -2.0 * loglik + 2.0 * (k - 1)
        table[k] = aic
        if best is None or aic < best[0]:
            best = (aic, knots, theta, loglik)
    if best is None:
        if not fallback:
            raise FitDiverged("no knot count could be fitted")
        log.warning("logspline fit failed for every knot count; using empirical CDF")
        return empirical_cdf(x)
    aic, knots, theta, loglik = best
    return LogsplineCDF(knots, theta, loglik, aic, aic_table=table)


# ---------------------------------------------------------------------------
# Index
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadioIndicators:
    radio_id: str
    eta_r: float
    delta_r: float
    n_households: int


@dataclass(frozen=True)
class VSRecord:
    radio_id: str
    vs: float


@dataclass(frozen=True)
class FuseResult:
    records: list[VSRecord]
    spca: SPCAResult
    cdf: LogsplineCDF
    radio_ids: list[str]

    @property
    def leading_scores(self) -> np.ndarray:
        return self.spca.scores[:, 0]


def fuse(indicators: Sequence[RadioIndicators], knot_range=(3, 10)) -> FuseResult:
    """Vulnerability index per radio; higher means more vulnerable.

    Radios are processed in ``radio_id`` order, so the result does not depend
    on input order. Records come back in that order.
    """
    rows = sorted(indicators, key=lambda r: r.radio_id)
    if len(rows) < MIN_FUSE_RADIOS:
        raise TooFewRadios(f"need at least {MIN_FUSE_RADIOS} radios, got {len(rows)}")
    if len({r.radio_id for r in rows}) != len(rows):
        raise ValueError("duplicate radio_id in indicators")
    eta = np.array([r.eta_r for r in rows])
    delta = np.array([r.delta_r for r in rows])
    res = spca([eta, delta])
    cdf = logspline_cdf_fit(res.scores[:, 0], knot_range)
    vs = np.atleast_1d(cdf(res.scores[:, 0]))
    ids = [r.radio_id for r in rows]
    return FuseResult([VSRecord(i, float(v)) for i, v in zip(ids, vs)], res, cdf, ids)


def radio_indicators(scores: Sequence[tuple[str, float]], delta: dict[str, float]
                     ) -> list[RadioIndicators]:
    """Trimean of household scores per radio joined with ``delta_r``.

    ``scores`` holds ``(radio_id, s)`` pairs. Radios missing from either side
    are dropped.
    """
    groups: dict[str, list[float]] = {}
    for radio_id, s in scores:
        groups.setdefault(radio_id, []).append(s)
    out = []
    for radio_id in sorted(groups):
        if radio_id in delta:
            vals = groups[radio_id]
            out.append(RadioIndicators(radio_id, trimean(vals), float(delta[radio_id]), len(vals)))
    return out


def write_indicators(path, rows: Sequence[RadioIndicators], header_lines: Sequence[str] = ()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radio_id", "eta_r", "delta_r_s", "n_households"])
        for r in rows:
            w.writerow([r.radio_id, repr(r.eta_r), repr(r.delta_r), r.n_households])


def read_indicators(path) -> list[RadioIndicators]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(RadioIndicators(row["radio_id"], float(row["eta_r"]),
                                           float(row["delta_r_s"]), int(row["n_households"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
    return out


def write_vs(path, records: Sequence[VSRecord], header_lines: Sequence[str] = ()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radio_id", "vs"])
        for r in records:
            w.writerow([r.radio_id, repr(r.vs)])


def fit_report(result: FuseResult, rho: float | None = None) -> str:
    res, cdf = result.spca, result.cdf
    lines = [
        f"n_radios = {len(result.records)}",
        "eigenvalues = {!r}, {!r}".format(*map(float, res.eigenvalues)),
        f"variance_share_1 = {res.variance_share_1!r}",
        "loading_1 (eta, delta) = {!r}, {!r}".format(*map(float, res.loadings[:, 0])),
        "loading_2 (eta, delta) = {!r}, {!r}".format(*map(float, res.loadings[:, 1])),
    ]
    if rho is not None:
        lines.append(f"spearman_rho(eta, delta) = {rho!r}")
    if cdf.fallback:
        lines += ["knots = none", "fallback = true"]
    else:
        lines += [f"knots = {cdf.n_knots}", f"aic = {float(cdf.aic)!r}", "fallback = false"]
        lines += [f"aic[{k}] = {float(v)!r}" for k, v in sorted(cdf.aic_table.items())]
    return "\n".join(lines) + "\n"
