"""Candidate null functions f(A_N) and conditional-independence checks for them.

A null function is a function of some causes that carries no information
about the outcome once the confounder and the remaining causes are known.
Nothing in the estimation path uses these objects; they exist to verify that
a world satisfies the assumption the estimators rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateDirection, InsufficientData, NotBinary
from .scm import Dataset, DiscreteDist, GaussianDist

LINEAR = "linear"
RATIO = "ratio"
XOR = "xor"
TABLE = "table"

DEGENERATE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NullFunction:
    """``weights`` may be a vector (scalar f) or a matrix with one row per output."""

    kind: str
    domain: tuple[str, ...]
    weights: np.ndarray | None = None
    table: np.ndarray | None = None
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", tuple(self.domain))
        if not self.domain:
            raise ValueError("null function needs a non-empty domain")
        if self.kind == LINEAR:
            w = np.asarray(self.weights, dtype=float)
            if w.shape[-1] != len(self.domain) or w.ndim > 2:
                raise ValueError("weights must have one column per domain variable")
            if not np.any(w):
                raise ValueError("weights are all zero")
            object.__setattr__(self, "weights", w)
        elif self.kind in (RATIO, XOR):
            if len(self.domain) != 2:
                raise ValueError(f"{self.kind} needs exactly two variables")
        elif self.kind == TABLE:
            t = np.asarray(self.table, dtype=np.intp)
            if t.ndim != len(self.domain):
                raise ValueError("table needs one axis per domain variable")
            object.__setattr__(self, "table", t)
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[0] if self.kind == LINEAR and self.weights.ndim == 2 else 1

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        """Apply f row-wise to an ``(n, |N|)`` array in domain order."""
        v = np.atleast_2d(np.asarray(values, dtype=float))
        if self.kind == LINEAR:
            return v @ self.weights.T
        if self.kind == RATIO:
            return v[:, 0] / v[:, 1]
        if self.kind == XOR:
            return (v[:, 0].astype(np.intp) ^ v[:, 1].astype(np.intp)).astype(float)
        return self.table[tuple(v.T.astype(np.intp))].astype(float)

    def levels(self, cards: Mapping[str, int]) -> tuple[np.ndarray, int]:
        """Partition of the finite support of A_N induced by f.

        Returns an integer array with one axis per domain variable giving the
        level of each configuration, and the number of levels.
        """
        shape = tuple(cards[d] for d in self.domain)
        grid = np.indices(shape).reshape(len(shape), -1).T
        out = self.evaluate(grid)
        out = out.reshape(len(grid), -1)
        _, inverse = np.unique(np.round(out, 12), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        return inverse.reshape(shape), int(inverse.max()) + 1

    def as_log_linear(self) -> NullFunction:
        """Ratio A_i / A_j is tested as log A_i - log A_j."""
        if self.kind != RATIO:
            raise ValueError("only ratio null functions have a log-linear form")
        return NullFunction(LINEAR, self.domain, np.array([1.0, -1.0]), description=f"log of {self.description}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "domain": list(self.domain), "description": self.description}
        if self.weights is not None:
            d["weights"] = np.asarray(self.weights).tolist()
        if self.table is not None:
            d["table"] = self.table.tolist()
        return d


def linear_null(domain: Sequence[str], weights: Sequence[float] | np.ndarray, description: str = "") -> NullFunction:
    return NullFunction(LINEAR, tuple(domain), np.asarray(weights, dtype=float), description=description)


def identity_null(name: str) -> NullFunction:
    return linear_null([name], [1.0], f"identity on {name}")


def ratio_null(numerator: str, denominator: str) -> NullFunction:
    return NullFunction(RATIO, (numerator, denominator), description=f"{numerator}/{denominator}")


def _pair_coefficients(outcome: Any, pair: tuple[Any, Any]) -> tuple[float, float]:
    if hasattr(outcome, "coefficient"):
        return outcome.coefficient(pair[0]), outcome.coefficient(pair[1])
    if isinstance(outcome, Mapping):
        return float(outcome[pair[0]]), float(outcome[pair[1]])
    a = np.asarray(outcome, dtype=float)
    if a.shape == (2,):
        return float(a[0]), float(a[1])
    return float(a[pair[0]]), float(a[pair[1]])


def _pair_cov(cause_cov: Any, pair: tuple[Any, Any]) -> np.ndarray:
    if isinstance(cause_cov, GaussianDist):
        return cause_cov.marginal([pair[0], pair[1]]).cov
    c = np.asarray(cause_cov, dtype=float)
    if c.shape == (2, 2):
        return c
    i, j = pair
    return c[np.ix_([i, j], [i, j])]


def construct_linear_null(outcome: Any, cause_cov: Any, pair: tuple[Any, Any]) -> NullFunction:
    """Build f = A_i + alpha_ij A_j orthogonal to the outcome's pair direction.

    ``outcome`` supplies the two outcome coefficients: an object with a
    ``coefficient(name)`` method, a name-to-coefficient mapping, or an array.
    ``cause_cov`` is the (conditional) covariance of the causes, either the
    2x2 pair block, a full matrix indexed by ``pair``, or a labelled
    GaussianDist. The result satisfies
    ``Cov(A_i + alpha_ij A_j, alpha_i A_i + alpha_j A_j) = 0``.
    """
    a_i, a_j = _pair_coefficients(outcome, pair)
    cov = _pair_cov(cause_cov, pair)
    var_i, var_j, c = cov[0, 0], cov[1, 1], cov[0, 1]
    denom = a_i * c + a_j * var_j
    if abs(denom) <= DEGENERATE_TOL:
        raise DegenerateDirection(
            f"outcome loads only on the correlated direction of {pair}; no orthogonal pair combination"
        )
    alpha_ij = -(a_i * var_i + a_j * c) / denom
    names = tuple(str(p) for p in pair)
    return NullFunction(LINEAR, names, np.array([1.0, alpha_ij]),
                        description=f"{names[0]} + {alpha_ij:.6g}*{names[1]}")


def construct_xor_null(pair: tuple[str, str], cards: Mapping[str, int]) -> NullFunction:
    bad = [p for p in pair if cards.get(p) != 2]
    if bad:
        raise NotBinary(f"{bad} are not binary")
    return NullFunction(XOR, tuple(pair), description=f"{pair[0]} XOR {pair[1]}")


# ---------------------------------------------------------------------------
# conditional independence


@dataclass(frozen=True)
class CITestReport:
    statistic: float
    threshold: float
    passed: bool
    mode: str
    n: int | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _residualize(target: np.ndarray, design: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return target - design @ coef


def partial_correlation(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> float:
    design = np.column_stack([np.ones(len(x)), z]) if z.size else np.ones((len(x), 1))
    rx, ry = _residualize(x, design), _residualize(y, design)
    return float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))


def _fisher_z(f_vals: np.ndarray, y: np.ndarray, z: np.ndarray, alpha: float, min_rows: int) -> CITestReport:
    n = len(y)
    k = z.shape[1] if z.ndim == 2 else 0
    if n - k - 3 < min_rows:
        raise InsufficientData(f"{n} rows for {k} conditioning variables")
    f_vals = f_vals.reshape(n, -1)
    r_out = f_vals.shape[1]
    level = alpha / r_out
    threshold = float(stats.norm.ppf(1 - level / 2))
    rs = [partial_correlation(f_vals[:, c], y, z) for c in range(r_out)]
    zs = [np.sqrt(n - k - 3) * abs(np.arctanh(np.clip(r, -1 + 1e-15, 1 - 1e-15))) for r in rs]
    stat = float(max(zs))
    p_value = float(min(1.0, r_out * 2 * stats.norm.sf(stat)))
    return CITestReport(stat, threshold, stat <= threshold, "fisher_z", n,
                        {"partial_corr": rs, "p_value": p_value, "alpha": alpha})


def _gaussian_exact(f: NullFunction, dist: GaussianDist, response: str, conditioning: Sequence[str], tol: float) -> CITestReport:
    if f.kind != LINEAR:
        raise ValueError("exact Gaussian mode needs a linear null function")
    labels = list(dist.labels)
    w = np.atleast_2d(f.weights)
    rows = []
    for wr in w:
        e = np.zeros(len(labels))
        e[[labels.index(d) for d in f.domain]] = wr
        rows.append(e)
    for name in [response, *conditioning]:
        e = np.zeros(len(labels))
        e[labels.index(name)] = 1.0
        rows.append(e)
    T = np.array(rows)
    cov = T @ dist.cov @ T.T
    r_out = w.shape[0]
    top = list(range(r_out + 1))
    cond = list(range(r_out + 1, cov.shape[0]))
    if cond:
        cc = cov[np.ix_(cond, cond)]
        cov_t = cov[np.ix_(top, top)] - cov[np.ix_(top, cond)] @ np.linalg.solve(cc, cov[np.ix_(cond, top)])
    else:
        cov_t = cov[np.ix_(top, top)]
    sd = np.sqrt(np.clip(np.diag(cov_t), 0, None))
    denom = sd[:r_out] * sd[r_out]
    pc = np.where(denom > 0, cov_t[:r_out, r_out] / np.where(denom > 0, denom, 1), 0.0)
    stat = float(np.max(np.abs(pc)))
    return CITestReport(stat, tol, stat <= tol, "gaussian_exact", None, {"partial_corr": pc.tolist()})


def _level_tensor(f: NullFunction, dist: DiscreteDist, response: str, conditioning: Sequence[str]) -> np.ndarray:
    """P(y, c, l) as an array of shape (|Y|, prod |C|, L)."""
    cards = dist.cards
    level_map, n_levels = f.levels(cards)
    m = dist.marginal([response, *conditioning, *f.domain])
    ny = cards[response]
    nc = int(np.prod([cards[c] for c in conditioning])) if conditioning else 1
    arr = m.table.reshape(ny, nc, -1)
    onehot = np.zeros((level_map.size, n_levels))
    onehot[np.arange(level_map.size), level_map.reshape(-1)] = 1.0
    return arr @ onehot


def _discrete_exact(f: NullFunction, dist: DiscreteDist, response: str, conditioning: Sequence[str], tol: float) -> CITestReport:
    p = _level_tensor(f, dist, response, conditioning)
    worst = 0.0
    for c in range(p.shape[1]):
        block = p[:, c, :]
        mass = block.sum()
        if mass <= 0:
            continue
        joint = block / mass
        dev = np.abs(joint - np.outer(joint.sum(1), joint.sum(0))).max()
        worst = max(worst, float(dev))
    return CITestReport(worst, tol, worst <= tol, "discrete_exact", None, {"levels": p.shape[2]})


def _discrete_sample(f_levels: np.ndarray, y: np.ndarray, strata: np.ndarray, alpha: float, min_rows: int) -> CITestReport:
    total, dof = 0.0, 0
    for s in np.unique(strata):
        mask = strata == s
        if mask.sum() < min_rows:
            raise InsufficientData(f"stratum {int(s)} has {int(mask.sum())} rows (< {min_rows})")
        _, yi = np.unique(y[mask], return_inverse=True)
        _, li = np.unique(f_levels[mask], return_inverse=True)
        table = np.zeros((yi.max() + 1, li.max() + 1))
        np.add.at(table, (yi, li), 1.0)
        if min(table.shape) < 2:
            continue
        expected = np.outer(table.sum(1), table.sum(0)) / table.sum()
        total += float(((table - expected) ** 2 / expected).sum())
        dof += (table.shape[0] - 1) * (table.shape[1] - 1)
    if dof == 0:
        return CITestReport(0.0, 0.0, True, "discrete_chi2", len(y), {"dof": 0, "p_value": 1.0})
    threshold = float(stats.chi2.ppf(1 - alpha, dof))
    return CITestReport(total, threshold, total <= threshold, "discrete_chi2", len(y),
                        {"dof": dof, "p_value": float(stats.chi2.sf(total, dof)), "alpha": alpha})


def test_null(
    f: NullFunction,
    data: Dataset | DiscreteDist | GaussianDist,
    conditioning: Sequence[str],
    *,
    response: str | None = None,
    given: Mapping[str, int] | None = None,
    extra: Mapping[str, np.ndarray] | None = None,
    selected_only: bool = False,
    alpha: float = 0.05,
    exact_tol: float = 1e-10,
    min_rows: int = 50,
) -> CITestReport:
    """Test f(A_N) independent of Y given ``conditioning``.

    Exact modes take a joint distribution: a DiscreteDist (max deviation of
    P(y, f | c) from the product of its margins) or a GaussianDist with a
    linear f (absolute partial correlation). Sample mode takes a Dataset and
    runs Fisher's z on the partial correlation for continuous data, or a
    stratified chi-square test for discrete data.

    ``given`` fixes variables of an exact joint (for example ``{"S": 1}``);
    ``selected_only`` restricts a Dataset to its selected rows. ``extra``
    adds conditioning columns such as a substitute confounder's posterior
    mean, aligned with the (possibly restricted) rows.
    """
    if isinstance(data, DiscreteDist):
        dist = data.condition(given) if given else data
        resp = response or _infer_response(dist.labels, f, conditioning)
        return _discrete_exact(f, dist, resp, list(conditioning), exact_tol)
    if isinstance(data, GaussianDist):
        resp = response or _infer_response(data.labels, f, conditioning)
        return _gaussian_exact(f, data, resp, list(conditioning), exact_tol)

    ds = data.selected_rows() if selected_only else data
    resp = response or ds.outcome_name
    keep = ~np.isnan(ds.column(resp))
    y = ds.column(resp)[keep]
    f_vals = f.evaluate(ds.matrix(f.domain)[keep])
    cols = [ds.column(c)[keep] for c in conditioning]
    if extra:
        cols += [np.asarray(v)[keep].reshape(len(y), -1) for v in extra.values()]
    z = np.column_stack(cols) if cols else np.zeros((len(y), 0))
    if ds.discrete:
        strata = np.zeros(len(y), dtype=np.int64)
        if z.size:
            _, strata = np.unique(z, axis=0, return_inverse=True)
            strata = strata.reshape(-1)
        return _discrete_sample(f_vals.reshape(-1), y, strata, alpha, min_rows)
    return _fisher_z(f_vals, y, z, alpha, min_rows)


def _infer_response(labels: Sequence[str], f: NullFunction, conditioning: Sequence[str]) -> str:
    if "Y" in labels:
        return "Y"
    raise ValueError("cannot infer the response variable; pass response=")


# keep pytest from collecting the public test function when imported into test modules
test_null.__test__ = False  # type: ignore[attr-defined]
