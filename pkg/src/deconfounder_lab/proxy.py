"""Proxy-based identification using a null function of some causes.

In a discrete world the integral equation

    P(y | a_C, f) = sum_x h(y, a_C, a_X) P(a_X | a_C, f)

is a finite linear system per ``(y, a_C)`` slice, solved here by
pseudoinverse. The identified intervention distribution is then
``sum_x h(y, a_C, a_X) P(a_X)``. Linear-Gaussian worlds admit the same
construction in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DegeneratePartition,
    NoSolution,
    NotAStochasticMatrix,
    NotIdentifiable,
    RankDeficientCrossCovariance,
    UnsolvedKernel,
)
from .nullfn import LINEAR, NullFunction, TABLE, linear_null
from .oracle import InterventionQuery
from .scm import DiscreteDist, GaussianDist

PINV_RCOND = 1e-10
SOLVE_TOL = 1e-8
RANK_RTOL = 1e-8
STOCHASTIC_TOL = 1e-9
RENORM_TOL = 1e-9

U_GIVEN_FN = "u_given_fN"
FN_GIVEN_AX = "fN_given_aX"


@dataclass(frozen=True, eq=False)
class CausePartition:
    C: tuple[str, ...]
    X: tuple[str, ...]
    N: tuple[str, ...]
    f: NullFunction | None = None

    def __post_init__(self) -> None:
        for name in ("C", "X", "N"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (self.C and self.X and self.N):
            raise DegeneratePartition("C, X and N must all be non-empty")
        sets = [set(self.C), set(self.X), set(self.N)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise DegeneratePartition("C, X and N must be disjoint")
        if self.f is not None and set(self.f.domain) != set(self.N):
            raise DegeneratePartition("null function domain must equal N")

    def check_covers(self, causes: Sequence[str]) -> None:
        if set(self.C) | set(self.X) | set(self.N) != set(causes):
            raise DegeneratePartition(f"partition does not cover the causes {list(causes)}")

    def null_function(self, cards: Mapping[str, int] | None = None) -> NullFunction:
        """The supplied f, or the identity on A_N when none was given."""
        if self.f is not None:
            return self.f
        if cards is None:
            return linear_null(self.N, np.eye(len(self.N)), "identity on N")
        shape = tuple(cards[n] for n in self.N)
        return NullFunction(TABLE, self.N, table=np.arange(int(np.prod(shape))).reshape(shape),
                            description="identity on N")

    def to_dict(self) -> dict[str, Any]:
        return {"C": list(self.C), "X": list(self.X), "N": list(self.N),
                "f": None if self.f is None else self.f.to_dict()}


@dataclass(frozen=True)
class CompletenessReport:
    matrix_rank: int
    required_rank: int
    min_singular_value: float
    verdict: str
    direction: str = ""
    slice_ranks: tuple[int, ...] = ()

    @property
    def complete(self) -> bool:
        return self.verdict == "Complete"

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["slice_ranks"] = list(self.slice_ranks)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def check_completeness_discrete(cond: np.ndarray, direction: str) -> CompletenessReport:
    """SVD rank test of conditional-probability matrices.

    ``cond`` is one matrix or a stack of slices (one per a_C value) whose rows
    are conditional distributions. Completeness in the row variable holds iff
    the rank equals the number of columns (|supp U| for ``u_given_fN``,
    |supp f| for ``fN_given_aX``). The report aggregates slices by worst case.
    """
    if direction not in (U_GIVEN_FN, FN_GIVEN_AX):
        raise ValueError(f"unknown direction {direction!r}")
    stack = np.asarray(cond, dtype=float)
    if stack.ndim == 2:
        stack = stack[None]
    if np.any(stack < -STOCHASTIC_TOL) or np.any(np.abs(stack.sum(axis=-1) - 1) > STOCHASTIC_TOL):
        raise NotAStochasticMatrix("rows must be probability distributions")
    required = stack.shape[-1]
    ranks, mins = [], []
    for m in stack:
        s = np.linalg.svd(m, compute_uv=False)
        tol = RANK_RTOL * s[0] if s.size else 0.0
        ranks.append(int((s > tol).sum()))
        mins.append(float(s[required - 1]) if s.size >= required else 0.0)
    worst = int(np.argmin(ranks))
    rank = ranks[worst]
    min_sv = float(min(mins))
    largest = max(float(np.linalg.norm(m, 2)) for m in stack)
    complete = all(r == required for r in ranks) and min_sv > RANK_RTOL * largest
    return CompletenessReport(rank, required, min_sv, "Complete" if complete else "Incomplete",
                              direction, tuple(ranks))


# ---------------------------------------------------------------------------
# tabular building blocks


def _flat_card(cards: Mapping[str, int], names: Sequence[str]) -> int:
    return int(np.prod([cards[n] for n in names])) if names else 1


def _select_joint(joint: DiscreteDist, condition_on_selection: bool, selection: str | None) -> DiscreteDist:
    if not condition_on_selection:
        return joint
    if selection is None or selection not in joint.labels:
        raise DegeneratePartition("selection conditioning requested but no selection variable in the joint")
    return joint.condition({selection: 1})


def _check_labels(joint: DiscreteDist, names: Sequence[str]) -> None:
    missing = [n for n in names if n not in joint.labels]
    if missing:
        raise DegeneratePartition(f"variables {missing} are absent from the joint")


def level_tensor(
    joint: DiscreteDist,
    head: Sequence[str],
    part: CausePartition,
    tail: Sequence[str] = (),
) -> tuple[np.ndarray, int]:
    """Joint mass P(head..., f-level, tail...) with multi-variable groups flattened.

    ``head`` and ``tail`` are lists of variable groups; every group becomes
    one flattened axis. Returns the array with axes ``(*head, f, *tail)``.
    """
    cards = joint.cards
    f = part.null_function(cards)
    level_map, n_levels = f.levels(cards)
    groups = [list(g) for g in head] + [list(part.N)] + [list(g) for g in tail]
    flat = [v for g in groups for v in g]
    arr = joint.marginal(flat).table.reshape([_flat_card(cards, g) for g in groups])
    onehot = np.zeros((level_map.size, n_levels))
    onehot[np.arange(level_map.size), level_map.reshape(-1)] = 1.0
    k = len(head)
    arr = np.moveaxis(arr, k, -1) @ onehot
    return np.moveaxis(arr, -1, k), n_levels


def u_given_fN_slices(joint: DiscreteDist, part: CausePartition, latent: Sequence[str]) -> list[np.ndarray]:
    """P(u | a_C, f) stacked over a_C; rows f levels with positive mass."""
    p, _ = level_tensor(joint, [part.C], part, [latent])  # (c, l, u)
    return [_normalize_rows(p[c]) for c in range(p.shape[0])]


def fN_given_aX_slices(joint: DiscreteDist, part: CausePartition) -> list[np.ndarray]:
    """P(f | a_C, a_X) stacked over a_C; rows a_X values with positive mass."""
    p, _ = level_tensor(joint, [part.C, part.X], part)  # (c, x, l)
    return [_normalize_rows(p[c]) for c in range(p.shape[0])]


def _normalize_rows(block: np.ndarray) -> np.ndarray:
    mass = block.sum(axis=1)
    keep = mass > 0
    return block[keep] / mass[keep, None]


def completeness_reports(
    joint: DiscreteDist, part: CausePartition, latent: Sequence[str] | None = None
) -> dict[str, CompletenessReport]:
    """Both completeness checks; the U-direction needs the latent variables."""
    reports = {FN_GIVEN_AX: _stacked_report(fN_given_aX_slices(joint, part), FN_GIVEN_AX)}
    if latent:
        reports[U_GIVEN_FN] = _stacked_report(u_given_fN_slices(joint, part, latent), U_GIVEN_FN)
    return reports


def _stacked_report(slices: list[np.ndarray], direction: str) -> CompletenessReport:
    reports = [check_completeness_discrete(s, direction) for s in slices]
    worst = min(reports, key=lambda r: (r.matrix_rank - r.required_rank, r.min_singular_value))
    complete = all(r.complete for r in reports)
    return CompletenessReport(
        worst.matrix_rank, worst.required_rank, min(r.min_singular_value for r in reports),
        "Complete" if complete else "Incomplete", direction,
        tuple(r.matrix_rank for r in reports),
    )


# ---------------------------------------------------------------------------
# kernel solutions


@dataclass(frozen=True, eq=False)
class KernelSolution:
    """Solution h of the integral equation.

    Tabular form stores ``h`` with axes ``(y, a_C, u_sng, a_X)`` where the
    cause groups are flattened in C order (``u_sng`` has length 1 when
    absent). The linear-Gaussian form stores ``coef`` (intercept, then
    coefficients on C then X) and the kernel variance.
    """

    form: str
    residual: float
    status: str
    response: str
    C: tuple[str, ...]
    X: tuple[str, ...]
    u_sng: tuple[str, ...] = ()
    h: np.ndarray | None = None
    coef: np.ndarray | None = None
    variance: float | None = None
    systems: tuple = field(default=(), repr=False)
    notes: dict[str, Any] = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == "Solved"

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "form": self.form, "residual": self.residual, "status": self.status,
            "response": self.response, "C": list(self.C), "X": list(self.X), "u_sng": list(self.u_sng),
            "notes": self.notes,
        }
        if self.h is not None:
            d["h_shape"] = list(self.h.shape)
            d["h"] = self.h.reshape(-1).tolist()
        if self.coef is not None:
            d["coef"] = self.coef.tolist()
            d["variance"] = self.variance
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self, path: str | Path, cards: Mapping[str, int]) -> None:
        """Write tabular h with a multi-index header line of variable names."""
        if self.h is None:
            raise ValueError("only tabular kernels export to CSV")
        index_vars = [self.response, *self.C, *self.u_sng, *self.X]
        lines = [",".join(index_vars + ["h"])]
        ranges = [range(cards[v]) for v in index_vars]
        flat = self.h.reshape(-1)
        for pos, combo in enumerate(product(*ranges)):
            lines.append(",".join(str(c) for c in combo) + f",{float(flat[pos])!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def solve_integral_equation_discrete(
    joint: DiscreteDist,
    part: CausePartition,
    condition_on_selection: bool = False,
    u_sng: Sequence[str] | str | None = None,
    *,
    response: str = "Y",
    selection: str | None = "S",
    raise_on_failure: bool = True,
) -> KernelSolution:
    """Minimum-norm pseudoinverse solution per ``(a_C, u_sng)`` slice.

    With ``condition_on_selection`` every table is taken given S=1, which is
    the selection-aware form of the equation; ``u_sng`` names the observed
    single-cause confounders of the intervened causes.
    """
    u_names = [u_sng] if isinstance(u_sng, str) else list(u_sng or [])
    _check_labels(joint, [response, *part.C, *part.X, *part.N, *u_names])
    table = _select_joint(joint, condition_on_selection, selection)
    p, n_levels = level_tensor(table, [[response], part.C, u_names], part, [part.X])  # (y, c, u, l, x)
    ny, nc, nu, _, nx = p.shape
    h = np.zeros((ny, nc, nu, nx))
    residual = 0.0
    systems = []
    for c in range(nc):
        for u in range(nu):
            block = p[:, c, u]  # (y, l, x)
            mass = block.sum(axis=(0, 2))  # P(c, u, l)
            rows = mass > 0
            if not rows.any():
                systems.append((c, u, np.zeros((0, nx)), np.zeros((0, ny))))
                continue
            M = block.sum(axis=0)[rows] / mass[rows, None]  # P(x | c, u, l)
            B = block.sum(axis=2)[:, rows].T / mass[rows, None]  # P(y | c, u, l), (l, y)
            H = np.linalg.pinv(M, rcond=PINV_RCOND) @ B  # (x, y)
            residual = max(residual, float(np.abs(M @ H - B).max()))
            h[:, c, u, :] = H.T
            systems.append((c, u, M, B))
    status = "Solved" if residual <= SOLVE_TOL else "NoSolution"
    if status != "Solved" and raise_on_failure:
        raise NoSolution(f"integral equation residual {residual:.3g} exceeds {SOLVE_TOL}", residual)
    return KernelSolution(
        "tabular", residual, status, response, part.C, part.X, tuple(u_names), h=h,
        systems=tuple(systems),
        notes={"f_levels": n_levels, "selection_conditioned": bool(condition_on_selection),
               "c_cards": [table.cards[c] for c in part.C]},
    )


def _flat_index(values: Sequence[int], cards: Sequence[int]) -> int:
    return int(np.ravel_multi_index(tuple(int(v) for v in values), tuple(cards))) if cards else 0


def identify_do_discrete(
    h: KernelSolution,
    marginals: DiscreteDist,
    part: CausePartition,
    q: InterventionQuery,
    u_sng: Sequence[str] | str | None = None,
) -> DiscreteDist:
    """Adjustment sum_x,u h(y, a_C, x, u) P(x) P(u) over unbiased marginals.

    The result is renormalised when its mass is off by more than 1e-9; the
    deviation is recorded in the returned distribution's ``notes``.
    """
    if not h.solved:
        raise UnsolvedKernel(f"kernel status {h.status}")
    u_names = [u_sng] if isinstance(u_sng, str) else list(u_sng or h.u_sng)
    cards = marginals.cards
    assign = q.assignment
    if set(assign) != set(part.C):
        raise DegeneratePartition("query targets must equal the partition's C")
    c_cards = h.notes.get("c_cards") or [cards[c] for c in part.C]
    c_idx = _flat_index([assign[c] for c in part.C], c_cards)
    p_x = marginals.marginal(list(part.X)).table.reshape(-1)
    p_u = marginals.marginal(u_names).table.reshape(-1) if u_names else np.ones(1)
    pmf = np.einsum("yux,x,u->y", h.h[:, c_idx], p_x, p_u)
    total = float(pmf.sum())
    notes: dict[str, Any] = {"mass": total, "renormalized": False}
    if abs(total - 1.0) > RENORM_TOL:
        pmf = pmf / total
        notes.update(renormalized=True, deviation=total - 1.0)
    return DiscreteDist(pmf, (h.response,), notes)


@dataclass(frozen=True)
class Identification:
    pmf: DiscreteDist
    kernel: KernelSolution
    reports: dict[str, CompletenessReport]


def identify_discrete(
    joint: DiscreteDist,
    part: CausePartition,
    q: InterventionQuery,
    *,
    latent: Sequence[str] | None = None,
    u_sng: Sequence[str] | None = None,
    condition_on_selection: bool = False,
    marginals: DiscreteDist | None = None,
    response: str = "Y",
    selection: str | None = "S",
) -> Identification:
    """Completeness checks, kernel solve and adjustment in one call.

    Raises :class:`NotIdentifiable` when either completeness check fails or
    the integral equation has no solution, rather than returning a number
    that may be silently biased. ``latent`` enables the oracle-mode check of
    P(u | a_C, f), which needs the unobserved confounder.
    """
    table = _select_joint(joint, condition_on_selection, selection)
    reports = completeness_reports(table, part, latent)
    bad = [k for k, r in reports.items() if not r.complete]
    if bad:
        raise NotIdentifiable(f"completeness fails: {bad}", reports)
    kernel = solve_integral_equation_discrete(
        joint, part, condition_on_selection, u_sng, response=response, selection=selection,
        raise_on_failure=False,
    )
    if not kernel.solved:
        raise NotIdentifiable(f"integral equation unsolved (residual {kernel.residual:.3g})",
                              {**reports, "residual": kernel.residual})
    pmf = identify_do_discrete(kernel, marginals or joint, part, q, u_sng)
    return Identification(pmf, kernel, reports)


# ---------------------------------------------------------------------------
# linear-Gaussian closed form


def _transform(dist: GaussianDist, blocks: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    T = np.vstack(blocks)
    return T @ dist.mean, T @ dist.cov @ T.T


def _selector(labels: Sequence[str], names: Sequence[str]) -> np.ndarray:
    S = np.zeros((len(names), len(labels)))
    for r, n in enumerate(names):
        S[r, list(labels).index(n)] = 1.0
    return S


def _regress(mean: np.ndarray, cov: np.ndarray, target: list[int], given: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Intercept, slope and residual covariance of E[target | given]."""
    gg = cov[np.ix_(given, given)]
    tg = cov[np.ix_(target, given)]
    slope = np.linalg.solve(gg, tg.T).T
    intercept = mean[target] - slope @ mean[given]
    resid = cov[np.ix_(target, target)] - slope @ tg.T
    return intercept, slope, (resid + resid.T) / 2


def solve_gaussian_kernel(joint: GaussianDist, part: CausePartition, response: str = "Y") -> KernelSolution:
    """Closed-form linear-Gaussian kernel h(y | a_C, a_X).

    Writing E[Y | a_C, f] = g0 + g_C a_C + g_f f and
    E[A_X | a_C, f] = k0 + K_C a_C + K_f f, the kernel mean
    b0 + b_C a_C + b_X a_X solves K_f' b_X = g_f (minimum-norm), with
    b_C = g_C - K_C' b_X and b0 = g0 - k0' b_X.
    """
    f = part.null_function()
    if f.kind != LINEAR:
        raise ValueError("the Gaussian solver needs a linear null function")
    labels = list(joint.labels)
    _check_gaussian_labels(labels, [response, *part.C, *part.X, *part.N])
    W = np.atleast_2d(f.weights)
    F = W @ _selector(labels, f.domain)
    nC, nX, r = len(part.C), len(part.X), F.shape[0]
    mean, cov = _transform(joint, [_selector(labels, [response]), _selector(labels, part.C),
                                   _selector(labels, part.X), F])
    iy, ic = [0], list(range(1, 1 + nC))
    ix = list(range(1 + nC, 1 + nC + nX))
    i_f = list(range(1 + nC + nX, 1 + nC + nX + r))

    # rank of Cov(f, A_X | A_C)
    _, _, resid_xf = _regress(mean, cov, ix + i_f, ic)
    cross = resid_xf[nX:, :nX]
    scale = np.sqrt(np.outer(np.diag(resid_xf)[nX:], np.diag(resid_xf)[:nX]).max())
    sv = np.linalg.svd(cross, compute_uv=False)
    rank = int((sv > max(RANK_RTOL * (sv[0] if sv.size else 0.0), 1e-12 * scale)).sum())
    if rank < min(r, nX) or rank == 0:
        raise RankDeficientCrossCovariance(f"Cov(f(A_N), A_X | A_C) has rank {rank}, need {min(r, nX)}")

    g0, g, sy = _regress(mean, cov, iy, ic + i_f)
    k0, K, sx = _regress(mean, cov, ix, ic + i_f)
    g_C, g_f = g[0, :nC], g[0, nC:]
    K_C, K_f = K[:, :nC], K[:, nC:]
    b_X = np.linalg.pinv(K_f.T, rcond=PINV_RCOND) @ g_f
    residual = float(np.abs(K_f.T @ b_X - g_f).max()) if g_f.size else 0.0
    b_C = g_C - K_C.T @ b_X
    b0 = float(g0[0] - k0 @ b_X)
    tau2 = float(sy[0, 0] - b_X @ sx @ b_X)
    status = "Solved" if residual <= SOLVE_TOL * max(1.0, float(np.abs(g_f).max(initial=0))) else "NoSolution"
    notes = {"cross_cov_rank": rank}
    if tau2 < 0:
        notes["negative_variance"] = tau2
        tau2 = 0.0
    return KernelSolution("linear_gaussian", residual, status, response, part.C, part.X,
                          coef=np.concatenate([[b0], b_C, b_X]), variance=tau2, notes=notes)


def _check_gaussian_labels(labels: Sequence[str], names: Sequence[str]) -> None:
    missing = [n for n in names if n not in labels]
    if missing:
        raise DegeneratePartition(f"variables {missing} are absent from the joint")


def solve_identify_gaussian(
    joint: GaussianDist, part: CausePartition, q: InterventionQuery, response: str = "Y"
) -> GaussianDist:
    """Identified P(y | do(a_C)) for a Gaussian joint over (Y, A).

    ``joint`` may be a true push-forward or a moment estimate from data.
    Integrating the kernel against P(a_X) gives mean b0 + b_C a_C + b_X mu_X
    and variance tau^2 + b_X' Sigma_X b_X.
    """
    kernel = solve_gaussian_kernel(joint, part, response)
    if not kernel.solved:
        raise NoSolution(f"Gaussian kernel residual {kernel.residual:.3g}", kernel.residual)
    assign = q.assignment
    if set(assign) != set(part.C):
        raise DegeneratePartition("query targets must equal the partition's C")
    a_C = np.array([assign[c] for c in part.C])
    nC = len(part.C)
    b0, b_C, b_X = kernel.coef[0], kernel.coef[1:1 + nC], kernel.coef[1 + nC:]
    px = joint.marginal(part.X)
    mean = b0 + b_C @ a_C + b_X @ px.mean
    var = kernel.variance + b_X @ px.cov @ b_X
    return GaussianDist([mean], [[var]], (response,))


def empirical_discrete(data_rows: np.ndarray, labels: Sequence[str], cards: Mapping[str, int]) -> DiscreteDist:
    """Relative-frequency joint table from category codes."""
    shape = tuple(cards[l] for l in labels)
    counts = np.zeros(shape)
    np.add.at(counts, tuple(data_rows.astype(np.intp).T), 1.0)
    return DiscreteDist(counts / max(len(data_rows), 1), tuple(labels))


def empirical_gaussian(data_rows: np.ndarray, labels: Sequence[str]) -> GaussianDist:
    return GaussianDist(data_rows.mean(axis=0), np.cov(data_rows, rowvar=False), tuple(labels))


def quantile_codes(x: np.ndarray, levels: int = 16) -> np.ndarray:
    """Bin a continuous column into at most ``levels`` quantile categories."""
    levels = min(levels, 16)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, levels + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right").astype(float)
