"""Seeded randomized checks of the algebraic inequalities the solvers rely on.

Each check returns a PropertyCase whose ``worst_violation`` is the smallest
signed margin over all samples; the case passes when it is not below
``-tolerance``.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .config import DEFAULT_SAMPLES, DEFAULT_SEED, PROPERTY_TOLERANCE
from .plap import RegParams, regularized_coefficient, truncation, truncation_derivative

logger = logging.getLogger(__name__)

DEFAULT_POWER_EXPONENTS = (2.5, 3.0, 4.0)
FD_STEP = 1e-7
FD_AGREEMENT = 1e-6


@dataclass(frozen=True)
class PropertyCase:
    name: str
    sample_count: int
    tolerance: float
    worst_violation: float
    passed: bool

    @classmethod
    def from_margins(
        cls, name: str, margins: np.ndarray, tolerance: float = PROPERTY_TOLERANCE
    ) -> "PropertyCase":
        worst = float(np.min(margins)) if margins.size else math.inf
        case = cls(name, int(margins.size), tolerance, worst, worst >= -tolerance)
        logger.debug(f"{name}: {case.sample_count} samples, worst margin {worst:.3e}")
        return case

    @staticmethod
    def header() -> List[str]:
        return ["name", "sample_count", "tolerance", "worst_violation", "passed"]

    def _values(self) -> List[object]:
        return [self.name, self.sample_count, self.tolerance, self.worst_violation, self.passed]

    def to_row(self) -> List[object]:
        return [*self._values()[:-1], int(self.passed)]

    def to_dict(self) -> Dict[str, object]:
        return dict(zip(self.header(), self._values()))


def _vectors_in_ball(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    directions = rng.standard_normal((count, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * rng.uniform(0.0, radius, size=(count, 1))


def regularized_monotonicity_margin(
    a: np.ndarray, b: np.ndarray, p: float, reg: RegParams
) -> np.ndarray:
    """(c(|a|^2) a - c(|b|^2) b) . (a - b) - eps^((p-2)/2) |a - b|^2 row-wise."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    ca = regularized_coefficient(np.sum(a**2, axis=1), reg, p)
    cb = regularized_coefficient(np.sum(b**2, axis=1), reg, p)
    diff = a - b
    lhs = np.sum((ca[:, None] * a - cb[:, None] * b) * diff, axis=1)
    return lhs - reg.epsilon ** (0.5 * (p - 2.0)) * np.sum(diff**2, axis=1)


def check_regularized_monotonicity(
    p: float, reg: RegParams, samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED, dim: int = 2
) -> PropertyCase:
    """Strong monotonicity of the regularized flux with constant eps^((p-2)/2).

    Vectors are drawn in the ball of radius 3k so all three truncation
    regimes are hit.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    a = _vectors_in_ball(rng, samples, dim, 3.0 * reg.k)
    b = _vectors_in_ball(rng, samples, dim, 3.0 * reg.k)
    return PropertyCase.from_margins(
        "regularized_monotonicity", regularized_monotonicity_margin(a, b, p, reg)
    )


def power_monotonicity_margin(a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    """(|a|^(p-2) a - |b|^(p-2) b)(a - b) - 2^(2-p) |a - b|^p."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lhs = (np.abs(a) ** (p - 2.0) * a - np.abs(b) ** (p - 2.0) * b) * (a - b)
    return lhs - 2.0 ** (2.0 - p) * np.abs(a - b) ** p


def check_power_monotonicity(
    p: float, samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED
) -> PropertyCase:
    if p < 2.0:
        raise ValueError("power monotonicity needs p >= 2")
    rng = np.random.default_rng(seed)
    a = rng.uniform(-3.0, 3.0, samples)
    b = rng.uniform(-3.0, 3.0, samples)
    return PropertyCase.from_margins("power_monotonicity", power_monotonicity_margin(a, b, p))


def bracket_bound_margin(eps: np.ndarray, z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Slack of (eps + z^2)^r <= 2^(r-1)(eps^r + z^2r) (r >= 1) or eps^r + z^2r (r < 1)."""
    eps, z, r = (np.asarray(v, dtype=float) for v in (eps, z, r))
    lhs = (eps + z**2) ** r
    parts = eps**r + np.abs(z) ** (2.0 * r)
    rhs = np.where(r >= 1.0, 2.0 ** (r - 1.0) * parts, parts)
    return rhs - lhs


def check_bracket_bounds(samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED) -> PropertyCase:
    rng = np.random.default_rng(seed)
    eps = rng.uniform(0.0, 1.0, samples)
    z = rng.uniform(-2.0, 2.0, samples)
    r = rng.uniform(0.0, 3.0, samples)
    return PropertyCase.from_margins("bracket_bounds", bracket_bound_margin(eps, z, r))


def norm_equivalence_margins(matrices: np.ndarray) -> np.ndarray:
    """Per-matrix slack of ||A||_2 <= ||A||_F <= sqrt(N) ||A||_2."""
    dim = matrices.shape[-1]
    spectral = np.abs(np.linalg.eigvalsh(matrices)).max(axis=-1)
    frobenius = np.linalg.norm(matrices, axis=(-2, -1))
    return np.minimum(frobenius - spectral, math.sqrt(dim) * spectral - frobenius)


def check_norm_equivalence(
    samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED, dim: int = 2
) -> PropertyCase:
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((samples, dim, dim))
    symmetric = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    return PropertyCase.from_margins("norm_equivalence", norm_equivalence_margins(symmetric))


def truncation_margins(t: np.ndarray, reg: RegParams) -> np.ndarray:
    """Signed slack of every F_k contract at the points t (all t >= 0)."""
    k2, delta = reg.k**2, reg.delta
    values = np.asarray(truncation(t, reg))
    slope = np.asarray(truncation_derivative(t, reg))
    below = t <= k2
    above = t > k2 + 1.0
    band = ~below & ~above

    margins = [slope]
    margins.append(-np.abs(values[below] - t[below]))
    margins.append(-np.abs(values[above] - (k2 + 1.0)))
    margins.append(np.minimum(values[band] - t[band], t[band] + delta - values[band]))

    away = (
        (t > 2.0 * FD_STEP)
        & (np.abs(t - k2) > 2.0 * FD_STEP)
        & (np.abs(t - k2 - 1.0) > 2.0 * FD_STEP)
    )
    probe = t[away]
    central = (
        np.asarray(truncation(probe + FD_STEP, reg)) - np.asarray(truncation(probe - FD_STEP, reg))
    ) / (2.0 * FD_STEP)
    margins.append(FD_AGREEMENT - np.abs(central - slope[away]))

    # C^1 junctions: one-sided slopes must match
    left = np.asarray(truncation_derivative(np.array([k2, k2 + 1.0]), reg))
    right = 1.0 + 2.0 * np.array([0.0, 1.0]) - 3.0 * np.array([0.0, 1.0]) ** 2
    margins.append(-np.abs(left - right))
    return np.concatenate([np.ravel(m) for m in margins])


def check_truncation_contract(
    reg: RegParams, samples: int = 1000, seed: int = DEFAULT_SEED
) -> PropertyCase:
    """Identity below k^2, constant above k^2 + 1, band bound, C^1 and monotone."""
    rng = np.random.default_rng(seed)
    span = reg.k**2 + 2.0
    dense = np.linspace(0.0, span, samples)
    random = rng.uniform(0.0, span, samples)
    band = reg.k**2 + rng.uniform(0.0, 1.0, samples)
    t = np.concatenate([dense, random, band])
    return PropertyCase.from_margins("truncation_contract", truncation_margins(t, reg))


def run_default_battery(
    seed: int = DEFAULT_SEED, samples: int = DEFAULT_SAMPLES
) -> List[PropertyCase]:
    """The five standard checks; power monotonicity is merged over p in {2.5, 3, 4}."""
    seeds = np.random.SeedSequence(seed).generate_state(5)
    reg = RegParams(epsilon=0.01, k=2.0)
    power_cases = [
        check_power_monotonicity(p, samples, int(seeds[1]) + index)
        for index, p in enumerate(DEFAULT_POWER_EXPONENTS)
    ]
    worst_power = min(case.worst_violation for case in power_cases)
    cases = [
        check_regularized_monotonicity(4.0, reg, samples, int(seeds[0])),
        PropertyCase(
            "power_monotonicity",
            sum(case.sample_count for case in power_cases),
            PROPERTY_TOLERANCE,
            worst_power,
            worst_power >= -PROPERTY_TOLERANCE,
        ),
        check_bracket_bounds(samples, int(seeds[2])),
        check_norm_equivalence(samples, int(seeds[3])),
        check_truncation_contract(reg, samples, int(seeds[4])),
    ]
    failed = [case.name for case in cases if not case.passed]
    if failed:
        logger.warning(f"Inequality battery failures: {', '.join(failed)}")
    else:
        logger.info(f"Inequality battery passed ({len(cases)} cases, seed={seed})")
    return cases


def battery_passed(cases: Sequence[PropertyCase]) -> bool:
    return all(case.passed for case in cases)
