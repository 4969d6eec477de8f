"""Probability distributions on uniform grids and the link-length law.

A SampledDistribution is a density sampled on 2^n regularly spaced points;
point i carries the probability mass of the cell of width ``step`` centred on
it. All compositions (convolution of stacked links, customer-weighted
mixtures, affine attenuation maps) stay in this representation, so a whole
network reduces to array operations and FFTs.

Link lengths along streets follow a truncated Weibull family whose three
coefficients depend only on the dimensionless ratio kappa = tau / lambda_HL;
the coefficient table is calibrated against typical-cell simulation (see
``fibrecast.calibration``) and shipped as package data.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources

import numpy as np
from scipy import special

from .errors import (
    GridRefinementFailed,
    InvalidShape,
    RangeExceeded,
    UnitMismatch,
    UnsupportedSplitFactor,
    ZeroTotalWeight,
)

__all__ = [
    "Unit",
    "GridSpec",
    "SampledDistribution",
    "TruncatedWeibullParams",
    "AttenuationSpec",
    "truncated_weibull_pdf",
    "truncated_weibull_cdf",
    "truncated_weibull_quantile",
    "truncated_weibull_mean",
    "truncated_weibull_rvs",
    "link_length_distribution",
    "convolve",
    "mixture",
    "attenuation_of_link",
    "splitter_attenuation",
    "spec_to_distribution",
    "eligibility",
    "load_coefficient_table",
]

MAX_LOG2_POINTS = 24


class Unit(str, Enum):
    LENGTH_KM = "length_km"
    ATTENUATION_DB = "attenuation_dB"


@dataclass(frozen=True)
class GridSpec:
    """Sampling policy: initial 2^n points and the target captured mass."""

    n: int = 12
    precision: float = 0.999

    def __post_init__(self):
        if not (0.9 < self.precision < 1.0):
            raise ValueError("precision must lie in (0.9, 1)")
        if not (4 <= self.n <= MAX_LOG2_POINTS):
            raise ValueError(f"n must be in [4, {MAX_LOG2_POINTS}]")


@dataclass
class SampledDistribution:
    origin: float  # value of the first grid point
    step: float
    values: np.ndarray  # densities, one per grid point
    unit: Unit

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if np.any(self.values < -1e-12):
            raise ValueError("densities must be >= 0")
        self.values = np.maximum(self.values, 0.0)

    # -- views ---------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.values)

    def grid(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.n)

    def cell_edges(self) -> np.ndarray:
        return self.origin - self.step / 2 + self.step * np.arange(self.n + 1)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.step)

    def mean(self) -> float:
        return float((self.grid() * self.values).sum() * self.step / self.mass)

    def var(self) -> float:
        m = self.mean()
        return float((((self.grid() - m) ** 2) * self.values).sum() * self.step / self.mass)

    def cdf(self, x) -> np.ndarray:
        """Cumulative mass below x, piecewise linear across cells."""
        edges = self.cell_edges()
        cum = np.concatenate([[0.0], np.cumsum(self.values) * self.step])
        return np.interp(x, edges, cum, left=0.0, right=cum[-1])

    def quantile(self, q: float) -> float:
        edges = self.cell_edges()
        cum = np.concatenate([[0.0], np.cumsum(self.values) * self.step])
        return float(np.interp(q * cum[-1], cum, edges))

    # -- construction --------------------------------------------------------

    @classmethod
    def from_cdf(cls, cdf, origin: float, step: float, n: int, unit: Unit) -> "SampledDistribution":
        """Discretize an exact CDF by cell masses (mass-exact on the grid)."""
        edges = origin - step / 2 + step * np.arange(n + 1)
        masses = np.diff(cdf(edges))
        return cls(origin=origin, step=step, values=masses / step, unit=unit)

    @classmethod
    def delta(cls, x: float, unit: Unit, step: float = 1e-3, n: int = 16) -> "SampledDistribution":
        origin = x - step * (n // 2)
        values = np.zeros(n)
        k = int(round((x - origin) / step))
        k = min(max(k, 0), n - 1)
        values[k] = 1.0 / step
        return cls(origin=origin, step=step, values=values, unit=unit)

    @classmethod
    def from_samples(cls, samples, unit: Unit, grid: GridSpec = GridSpec()) -> "SampledDistribution":
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            raise ValueError("no samples")
        lo = 0.0 if samples.min() >= 0 else float(samples.min())
        hi = float(np.quantile(samples, 1.0 - (1.0 - grid.precision) / 4))
        hi = hi + 0.05 * (hi - lo) + 1e-9
        n = 2**grid.n
        step = (hi - lo) / n
        counts, _ = np.histogram(samples, bins=n, range=(lo - step / 2, lo - step / 2 + n * step))
        values = counts / (samples.size * step)
        return cls(origin=lo, step=step, values=values, unit=unit)

    def rebin(self, origin: float, step: float, n: int) -> "SampledDistribution":
        """Mass-preserving rebin onto a new grid."""
        old_edges = self.cell_edges()
        cum = np.concatenate([[0.0], np.cumsum(self.values) * self.step])
        new_edges = origin - step / 2 + step * np.arange(n + 1)
        new_cum = np.interp(new_edges, old_edges, cum, left=0.0, right=cum[-1])
        return SampledDistribution(origin=origin, step=step,
                                   values=np.diff(new_cum) / step, unit=self.unit)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["x", "pdf", "cdf"])
        cum = np.cumsum(self.values) * self.step
        for x, p, c in zip(self.grid(), self.values, cum):
            writer.writerow([f"{x:.9g}", f"{p:.9g}", f"{c:.9g}"])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# truncated Weibull family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedWeibullParams:
    """Shape a > 1, scale b > 0 and mode control c >= 0.

    The derived offset is C = (b c / a)^(1/(a-1)); c = 0 recovers the plain
    Weibull(a, b).
    """

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a <= 1:
            raise InvalidShape(f"shape a must be > 1, got {self.a}")
        if self.b <= 0:
            raise ValueError("scale b must be > 0")
        if self.c < 0:
            raise ValueError("mode control c must be >= 0")

    @property
    def offset(self) -> float:
        ratio = self.b * self.c / self.a
        if ratio == 0.0:
            return 0.0
        # exp/log form keeps near-1 shapes finite; the cap only matters for
        # parameter combinations far outside the calibrated range
        log_c = math.log(ratio) / (self.a - 1.0)
        return math.exp(min(log_c, 25.0))


def truncated_weibull_pdf(p: TruncatedWeibullParams, x) -> np.ndarray:
    """Density of the truncated Weibull on x >= 0.

    Written as (a/b) (x/b + C)^(a-1) exp(C^a - (x/b + C)^a) so the
    exponential never overflows for large C.
    """
    x = np.asarray(x, dtype=float)
    C = p.offset
    z = x / p.b + C
    out = (p.a / p.b) * z ** (p.a - 1.0) * np.exp(C**p.a - z**p.a)
    return np.where(x < 0, 0.0, out)


def truncated_weibull_cdf(p: TruncatedWeibullParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    C = p.offset
    z = np.maximum(x, 0.0) / p.b + C
    return np.where(x < 0, 0.0, 1.0 - np.exp(C**p.a - z**p.a))


def truncated_weibull_quantile(p: TruncatedWeibullParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    C = p.offset
    return p.b * ((C**p.a - np.log1p(-q)) ** (1.0 / p.a) - C)


def truncated_weibull_mean(p: TruncatedWeibullParams) -> float:
    C = p.offset
    s = 1.0 + 1.0 / p.a
    za = C**p.a
    if za < 50.0:
        upper = special.gammaincc(s, za) * special.gamma(s)
        return float(p.b * math.exp(za) * upper - p.b * C)
    # large-offset regime: integrate the survival function instead
    q99 = truncated_weibull_quantile(p, 0.999999)
    xs = np.linspace(0.0, float(q99), 20001)
    sf = np.exp(za - (xs / p.b + C) ** p.a)
    return float(np.trapezoid(sf, xs))


def truncated_weibull_rvs(p: TruncatedWeibullParams, size: int,
                          rng: np.random.Generator) -> np.ndarray:
    C = p.offset
    e = rng.exponential(size=size)
    return p.b * ((e + C**p.a) ** (1.0 / p.a) - C)


# ---------------------------------------------------------------------------
# coefficient table for the parametric link-length law
# ---------------------------------------------------------------------------

_COEFF_CACHE: dict | None = None


def load_coefficient_table(path=None) -> dict:
    """Load the calibrated kappa -> (a, b, c) polynomial table."""
    global _COEFF_CACHE
    if path is None:
        if _COEFF_CACHE is None:
            text = resources.files("fibrecast.data").joinpath(
                "link_length_coeffs.json").read_text()
            _COEFF_CACHE = json.loads(text)
        return _COEFF_CACHE
    with open(path) as fh:
        return json.load(fh)


def weibull_params_for_kappa(kappa: float, family: str, table: dict | None = None
                             ) -> TruncatedWeibullParams:
    """Evaluate the calibrated coefficient curves at kappa.

    Coefficients are stored at the calibration knots and interpolated
    monotone-cubic in log(kappa), so grid kappas reproduce the maximum
    likelihood fits exactly; outside the grid the ends are clamped.
    """
    from scipy.interpolate import PchipInterpolator

    table = table or load_coefficient_table()
    entry = next((e for e in table["families"] if e["family"] == str(family)), None)
    if entry is None:
        raise KeyError(f"no calibrated coefficients for family {family}")
    grid = np.asarray(entry["kappa_grid"], dtype=float)
    kmin, kmax = float(grid.min()), float(grid.max())
    lk = math.log(min(max(kappa, kmin), kmax))
    out = []
    for key in ("a_coeffs", "b_coeffs", "c_coeffs"):
        interp = PchipInterpolator(np.log(grid), np.asarray(entry[key], dtype=float))
        out.append(float(interp(lk)))
    a, b, c = out
    return TruncatedWeibullParams(a=max(a, 1.0 + 1e-9), b=max(b, 1e-12), c=max(c, 0.0))


PARAMETRIC_KS_THRESHOLD = 0.03


def _parametric_fit_adequate(kappa: float, family: str, table: dict | None) -> bool:
    """True when the calibrated fit quality around kappa meets the KS gate."""
    try:
        table = table or load_coefficient_table()
    except FileNotFoundError:  # pragma: no cover - table ships with the package
        return False
    entry = next((e for e in table["families"] if e["family"] == family), None)
    if entry is None or "fit_rows" not in entry:
        return entry is not None
    rows = entry["fit_rows"]
    kappas = np.array([r["kappa"] for r in rows])
    ks = np.array([r["ks"] for r in rows])
    below = kappas <= kappa
    above = kappas >= kappa
    checks = []
    if below.any():
        checks.append(ks[below][-1])
    if above.any():
        checks.append(ks[above][0])
    return bool(max(checks) <= PARAMETRIC_KS_THRESHOLD)


def link_length_distribution(family, gamma: float, lambda_hl: float,
                             grid: GridSpec = GridSpec(),
                             table: dict | None = None,
                             empirical_fallback: bool = True,
                             fallback_links: int = 30000,
                             seed: int = 20230419) -> SampledDistribution:
    """Distribution of the street distance from a typical LL to its HL.

    The parametric truncated-Weibull path covers kappa >= 1; below that the
    distribution comes from fresh typical-cell simulation (slower), unless
    ``empirical_fallback`` is off in which case RangeExceeded is raised.
    """
    from .tessellation import Family, TessellationModel, theoretical_morphology

    model = TessellationModel(Family(family), gamma)
    tau = theoretical_morphology(model).street_length_density
    if lambda_hl <= 0:
        raise ValueError("lambda_hl must be > 0")
    kappa = tau / lambda_hl

    # below the calibrated range, or where the calibration itself records a
    # poor in-family fit, simulation is the authority
    needs_empirical = kappa < 1.0 or not _parametric_fit_adequate(
        kappa, str(Family(family).value), table)
    if needs_empirical:
        if not empirical_fallback:
            raise RangeExceeded(
                f"kappa={kappa:.3g} has no adequate parametric fit and the "
                "empirical fallback is disabled")
        from .typical_cell import NodePlacementParams, sample_link_lengths

        params = NodePlacementParams(lambda_hl=lambda_hl, lambda_ll=10.0 * lambda_hl,
                                     street_model=model, enforce_range=False)
        lengths = sample_link_lengths(params, n_links=fallback_links, seed=seed)
        return SampledDistribution.from_samples(lengths, Unit.LENGTH_KM, grid)

    wp = weibull_params_for_kappa(kappa, str(Family(family).value), table)

    # dis(l) = tau * W_t(tau * l); exact rescale of the dimensionless law
    def cdf(x):
        return truncated_weibull_cdf(wp, tau * np.asarray(x))

    span = float(truncated_weibull_quantile(wp, grid.precision)) / tau
    n = 2**grid.n
    for _ in range(MAX_LOG2_POINTS - grid.n + 1):
        step = span * 1.25 / n
        dist = SampledDistribution.from_cdf(cdf, origin=0.0, step=step, n=n,
                                            unit=Unit.LENGTH_KM)
        if dist.mass >= grid.precision:
            return dist
        n *= 2
        span *= 1.6
        if n > 2**MAX_LOG2_POINTS:
            break
    raise GridRefinementFailed("link-length grid refinement hit the cap")


# ---------------------------------------------------------------------------
# distribution algebra
# ---------------------------------------------------------------------------


def _common_step(d1: SampledDistribution, d2: SampledDistribution) -> float:
    return min(d1.step, d2.step)


def convolve(d1: SampledDistribution, d2: SampledDistribution) -> SampledDistribution:
    """Density of the sum of two independent variables (FFT, full support).

    The output grid covers the whole Minkowski sum of the input supports, so
    no probability mass is lost beyond what the inputs already dropped.
    """
    if d1.unit != d2.unit:
        raise UnitMismatch(f"{d1.unit} vs {d2.unit}")
    step = _common_step(d1, d2)
    if d1.step != step:
        d1 = d1.rebin(d1.origin, step, _pow2_at_least(int(round(d1.step / step)) * d1.n + 2))
    if d2.step != step:
        d2 = d2.rebin(d2.origin, step, _pow2_at_least(int(round(d2.step / step)) * d2.n + 2))
    from scipy.signal import fftconvolve

    raw = fftconvolve(d1.values, d2.values) * step
    n = _pow2_at_least(len(raw))
    if n > 2**MAX_LOG2_POINTS:
        raise GridRefinementFailed("convolution grid exceeds the 2^24 point cap")
    values = np.zeros(n)
    values[: len(raw)] = np.maximum(raw, 0.0)
    return SampledDistribution(origin=d1.origin + d2.origin, step=step,
                               values=values, unit=d1.unit)


def _pow2_at_least(k: int) -> int:
    return 1 << max(int(k - 1).bit_length(), 2)


def mixture(components) -> SampledDistribution:
    """Customer-weighted average of distributions sharing one unit."""
    components = [(d, float(w)) for d, w in components]
    if not components:
        raise ZeroTotalWeight("empty mixture")
    total = sum(w for _, w in components)
    if total <= 0:
        raise ZeroTotalWeight("mixture weights sum to zero")
    unit = components[0][0].unit
    if any(d.unit != unit for d, _ in components):
        raise UnitMismatch("mixture components must share a unit")
    active = [(d, w) for d, w in components if w > 0]
    origin = min(d.origin for d, _ in active)
    end = max(d.origin + d.step * d.n for d, _ in active)
    step = min(d.step for d, _ in active)
    n = _pow2_at_least(int(math.ceil((end - origin) / step)) + 2)
    if n > 2**MAX_LOG2_POINTS:
        raise GridRefinementFailed("mixture grid exceeds the 2^24 point cap")
    values = np.zeros(n)
    for d, w in active:
        values += (w / total) * d.rebin(origin, step, n).values
    return SampledDistribution(origin=origin, step=step, values=values, unit=unit)


def attenuation_of_link(length_dist: SampledDistribution, alpha: float) -> SampledDistribution:
    """Map a length distribution through x -> alpha*x (dB/km), unit becomes dB."""
    if length_dist.unit != Unit.LENGTH_KM:
        raise UnitMismatch("attenuation_of_link expects a length distribution")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return SampledDistribution.delta(0.0, Unit.ATTENUATION_DB)
    return SampledDistribution(origin=length_dist.origin * alpha,
                               step=length_dist.step * alpha,
                               values=length_dist.values / alpha,
                               unit=Unit.ATTENUATION_DB)


_SPLIT_FACTORS = (1, 2, 4, 8, 16, 32)


def splitter_attenuation(n: int) -> float:
    """Loss of a 1:n splitter in dB, positive by convention; n=1 means none."""
    if n not in _SPLIT_FACTORS:
        raise UnsupportedSplitFactor(f"split factor {n} not in {_SPLIT_FACTORS}")
    return 10.0 * math.log10(n)


@dataclass(frozen=True)
class AttenuationSpec:
    """One attenuation cause at a node: its law, parameters and a label."""

    law: str  # Uniform | Normal | Constant
    params: tuple
    cause: str = ""

    def __post_init__(self):
        law = self.law
        if law not in ("Uniform", "Normal", "Constant"):
            raise ValueError(f"unknown attenuation law {law!r}")
        if law == "Uniform":
            lo, hi = self.params
            if lo > hi:
                raise ValueError("Uniform needs min <= max")
        elif law == "Normal":
            _, std = self.params
            if std < 0:
                raise ValueError("Normal needs std >= 0")

    def mean(self) -> float:
        if self.law == "Uniform":
            return (self.params[0] + self.params[1]) / 2.0
        if self.law == "Normal":
            return float(self.params[0])
        return float(self.params[0])


def spec_to_distribution(spec: AttenuationSpec, grid: GridSpec = GridSpec()) -> SampledDistribution:
    """Discretize an attenuation cause on a dB grid with mass >= precision."""
    n = 2**grid.n
    if spec.law == "Constant":
        return SampledDistribution.delta(float(spec.params[0]), Unit.ATTENUATION_DB)
    if spec.law == "Uniform":
        lo, hi = (float(v) for v in spec.params)
        if hi == lo:
            return SampledDistribution.delta(lo, Unit.ATTENUATION_DB)
        pad = (hi - lo) * 0.01
        step = (hi - lo + 2 * pad) / n

        def cdf(x):
            return np.clip((np.asarray(x) - lo) / (hi - lo), 0.0, 1.0)

        return SampledDistribution.from_cdf(cdf, origin=lo - pad, step=step, n=n,
                                            unit=Unit.ATTENUATION_DB)
    mean, std = (float(v) for v in spec.params)
    if std == 0:
        return SampledDistribution.delta(mean, Unit.ATTENUATION_DB)
    from scipy.stats import norm

    z = norm.ppf(1 - (1 - grid.precision) / 4)
    lo, hi = mean - (z + 1) * std, mean + (z + 1) * std
    step = (hi - lo) / n
    return SampledDistribution.from_cdf(lambda x: norm.cdf(x, mean, std),
                                        origin=lo, step=step, n=n,
                                        unit=Unit.ATTENUATION_DB)


def eligibility(dist: SampledDistribution, threshold: float) -> float:
    """Fraction of customers at or below a distance/attenuation threshold."""
    return float(np.clip(dist.cdf(threshold), 0.0, 1.0))
