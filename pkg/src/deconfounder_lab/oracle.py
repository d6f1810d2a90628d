"""Ground-truth intervention distributions computed on the mutilated graph."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import EmptySample, InvalidQuery
from .scm import (
    DISCRETE,
    DiscreteDist,
    GaussianDist,
    ScmSpec,
    condition,
    discrete_table,
    gaussian_moments,
    joint_gaussian,
    simulate,
    validate_spec,
)


@dataclass(frozen=True)
class InterventionQuery:
    targets: tuple[str, ...]
    values: tuple[float, ...]
    response: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.targets) != len(self.values):
            raise InvalidQuery("targets and values differ in length")

    @property
    def assignment(self) -> dict[str, float]:
        return dict(zip(self.targets, self.values))

    @property
    def query_id(self) -> str:
        return ",".join(f"{t}={v:g}" for t, v in zip(self.targets, self.values))

    def digest(self) -> int:
        payload = json.dumps([self.targets, self.values, self.response]).encode()
        return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")

    def to_dict(self) -> dict[str, Any]:
        return {"targets": list(self.targets), "values": list(self.values), "response": self.response}


def check_query(spec: ScmSpec, q: InterventionQuery) -> str:
    """Validate ``q`` against ``spec`` and return the response variable name."""
    causes = spec.causes
    if not q.targets:
        raise InvalidQuery("intervention set is empty")
    if len(set(q.targets)) != len(q.targets):
        raise InvalidQuery("repeated intervention target")
    outside = [t for t in q.targets if t not in causes]
    if outside:
        raise InvalidQuery(f"targets {outside} are not causes")
    if len(q.targets) >= len(causes):
        raise InvalidQuery("intervening on every cause is out of scope; use a strict subset")
    if spec.mechanism == DISCRETE:
        for t, v in zip(q.targets, q.values):
            card = spec.node(t).card
            if v != int(v) or not 0 <= v < card:
                raise InvalidQuery(f"{t}={v} outside support 0..{card - 1}")
    response = q.response or spec.outcome
    if response not in spec.names:
        raise InvalidQuery(f"unknown response {response!r}")
    return response


def do_gaussian(spec: ScmSpec, q: InterventionQuery) -> GaussianDist:
    """Exact one-dimensional outcome law under do(A_C = a_C)."""
    response = check_query(spec, q)
    return gaussian_moments(spec, q.assignment).marginal([response])


def do_discrete(spec: ScmSpec, q: InterventionQuery) -> DiscreteDist:
    """Exact outcome pmf under the truncated factorisation."""
    response = check_query(spec, q)
    fixed = {t: int(v) for t, v in q.assignment.items()}
    return discrete_table(spec, fixed).marginal([response])


@dataclass(frozen=True)
class SampleSummary:
    mean: float
    var: float
    se: float
    n: int
    hist_edges: list[float] = field(default_factory=list)
    hist_counts: list[int] = field(default_factory=list)
    pmf: list[float] | None = None
    pmf_se: list[float] | None = None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def summarize(y: np.ndarray, card: int | None = None) -> SampleSummary:
    n = y.size
    if n == 0:
        raise EmptySample("no draws")
    var = float(y.var(ddof=1)) if n > 1 else 0.0
    if card is not None:
        counts, edges = np.histogram(y, bins=np.arange(card + 1) - 0.5)
    elif np.ptp(y) > 0:
        counts, edges = np.histogram(y, bins="fd")
    else:
        counts, edges = np.array([n]), np.array([y[0], y[0]])
    pmf = pmf_se = None
    if card is not None:
        p = np.bincount(y.astype(np.intp), minlength=card) / n
        pmf, pmf_se = p.tolist(), np.sqrt(p * (1 - p) / n).tolist()
    return SampleSummary(
        float(y.mean()), var, float(np.sqrt(var / n)), n,
        [float(e) for e in edges], [int(c) for c in counts], pmf, pmf_se,
    )


def mc_rng(seed: int, q: InterventionQuery) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), q.digest()]))


def do_monte_carlo(spec: ScmSpec, q: InterventionQuery, n: int, seed: int) -> SampleSummary:
    """Forward-simulate the mutilated graph ``n`` times."""
    response = check_query(spec, q)
    if n <= 0:
        raise EmptySample("n must be positive")
    validate_spec(spec)
    values = simulate(spec, int(n), mc_rng(seed, q), q.assignment)
    card = spec.node(response).card if spec.mechanism == DISCRETE else None
    return summarize(values[response], card)


def result_record(q: InterventionQuery, method: str, result: GaussianDist | DiscreteDist | SampleSummary) -> dict[str, Any]:
    """JSON-ready ``{query, method, mean, var, se, pmf?}`` record."""
    rec: dict[str, Any] = {"query": q.to_dict(), "method": method}
    if isinstance(result, GaussianDist):
        rec.update(mean=float(result.mean[0]), var=float(result.cov[0, 0]), se=0.0)
    elif isinstance(result, DiscreteDist):
        rec.update(mean=result.mean(), var=result.var(), se=0.0, pmf=result.pmf.tolist())
    else:
        rec.update(mean=result.mean, var=result.var, se=result.se)
        if result.pmf is not None:
            rec["pmf"] = result.pmf
    return rec


def observational_conditional_gaussian(spec: ScmSpec, given: dict[str, float], response: str | None = None) -> GaussianDist:
    """P(y | a_C) in the unmutilated world; the naive comparator."""
    response = response or spec.outcome
    return condition(joint_gaussian(spec), given).marginal([response])


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
