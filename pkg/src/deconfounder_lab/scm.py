"""Structural causal models: definition, validation, sampling and exact joints.

Two mechanism families are supported. Linear-Gaussian worlds attach a
coefficient to each edge plus an intercept and a noise standard deviation to
each node. Tabular-discrete worlds attach a conditional probability table to
each node, with axes ordered as ``(*parents, node)``.

A selection node is Bernoulli. In linear worlds it uses a logistic link on its
parents; in discrete worlds it is an ordinary binary CPT.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import (
    CyclicGraph,
    InvalidSpec,
    NotDiscrete,
    NotLinearGaussian,
    RoleViolation,
    SingularConditioningBlock,
    SupportTooLarge,
)

PSD_TOL = 1e-10
SINGULAR_TOL = 1e-10
CPT_TOL = 1e-12
MAX_JOINT_CELLS = 10**7

LINEAR_GAUSSIAN = "linear_gaussian"
DISCRETE = "discrete"


class NodeRole(str, Enum):
    CAUSE = "cause"
    OUTCOME = "outcome"
    MULTI_CAUSE_CONFOUNDER = "multi_cause_confounder"
    SINGLE_CAUSE_CONFOUNDER = "single_cause_confounder"
    MULTI_CAUSE_COVARIATE = "multi_cause_covariate"
    SINGLE_CAUSE_COVARIATE = "single_cause_covariate"
    OUTCOME_COVARIATE = "outcome_covariate"
    SELECTION = "selection"


CONFOUNDER_ROLES = frozenset({NodeRole.MULTI_CAUSE_CONFOUNDER, NodeRole.SINGLE_CAUSE_CONFOUNDER})
COVARIATE_ROLES = frozenset({NodeRole.MULTI_CAUSE_COVARIATE, NodeRole.SINGLE_CAUSE_COVARIATE})


@dataclass(frozen=True, eq=False)
class Node:
    """One variable of an SCM.

    ``coefs`` pairs with ``parents`` in linear worlds. ``cpt`` has shape
    ``(*parent_cards, card)`` in discrete worlds.
    """

    name: str
    role: NodeRole
    parents: tuple[str, ...] = ()
    coefs: tuple[float, ...] = ()
    noise_sd: float = 1.0
    intercept: float = 0.0
    card: int | None = None
    cpt: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", NodeRole(self.role))
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "coefs", tuple(float(c) for c in self.coefs))
        if self.cpt is not None:
            cpt = np.array(self.cpt, dtype=float)
            cpt.setflags(write=False)
            object.__setattr__(self, "cpt", cpt)


@dataclass(frozen=True, eq=False)
class ScmSpec:
    nodes: tuple[Node, ...]
    mechanism: str = LINEAR_GAUSSIAN

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if self.mechanism not in (LINEAR_GAUSSIAN, DISCRETE):
            raise InvalidSpec(f"unknown mechanism {self.mechanism!r}")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise InvalidSpec("duplicate node names")
        known = set(names)
        for n in self.nodes:
            missing = [p for p in n.parents if p not in known]
            if missing:
                raise InvalidSpec(f"{n.name}: unknown parents {missing}")
            if len(set(n.parents)) != len(n.parents):
                raise InvalidSpec(f"{n.name}: repeated parent")
            if self.mechanism == LINEAR_GAUSSIAN and len(n.coefs) != len(n.parents):
                raise InvalidSpec(f"{n.name}: {len(n.parents)} parents but {len(n.coefs)} coefficients")
        if self.mechanism == DISCRETE:
            for n in self.nodes:
                if n.card is None or n.card < 1 or n.cpt is None:
                    raise InvalidSpec(f"{n.name}: discrete nodes need card and cpt")
                expected = tuple(self.node(p).card for p in n.parents) + (n.card,)
                if n.cpt.shape != expected:
                    raise InvalidSpec(f"{n.name}: cpt shape {n.cpt.shape}, expected {expected}")

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def with_role(self, role: NodeRole) -> list[str]:
        return [n.name for n in self.nodes if n.role == role]

    @property
    def causes(self) -> list[str]:
        return self.with_role(NodeRole.CAUSE)

    @property
    def outcome(self) -> str:
        outs = self.with_role(NodeRole.OUTCOME)
        if len(outs) != 1:
            raise InvalidSpec(f"expected one outcome node, found {len(outs)}")
        return outs[0]

    @property
    def selection(self) -> str | None:
        sel = self.with_role(NodeRole.SELECTION)
        return sel[0] if sel else None

    def children(self, name: str) -> list[str]:
        return [n.name for n in self.nodes if name in n.parents]

    def topological_order(self) -> list[str]:
        try:
            order = TopologicalSorter({n.name: n.parents for n in self.nodes}).static_order()
            return list(order)
        except CycleError as exc:
            raise CyclicGraph(f"cycle through {exc.args[1]}") from None

    def replace_node(self, name: str, **changes: Any) -> ScmSpec:
        nodes = tuple(replace(n, **changes) if n.name == name else n for n in self.nodes)
        return ScmSpec(nodes, self.mechanism)

    def to_dict(self) -> dict[str, Any]:
        out: list[dict[str, Any]] = []
        for n in self.nodes:
            d: dict[str, Any] = {"name": n.name, "role": n.role.value}
            if self.mechanism == LINEAR_GAUSSIAN:
                d["parents"] = dict(zip(n.parents, n.coefs))
                if n.role != NodeRole.SELECTION:
                    d["noise_sd"] = n.noise_sd
                d["intercept"] = n.intercept
            else:
                d["parents"] = list(n.parents)
                d["card"] = n.card
                d["cpt"] = n.cpt.tolist()
            out.append(d)
        return {"mechanism": self.mechanism, "nodes": out}


def spec_from_dict(data: Mapping[str, Any]) -> ScmSpec:
    """Build a spec from a declarative key-value tree.

    Linear nodes list parents as ``{name: coefficient}``; a top-level
    ``edges`` list of ``{from, to, coef}`` entries is also accepted.
    Discrete nodes list parents in CPT axis order and give ``card`` and ``cpt``.
    """
    mechanism = data.get("mechanism", LINEAR_GAUSSIAN)
    raw_nodes = data.get("nodes")
    if not raw_nodes:
        raise InvalidSpec("spec has no nodes")
    extra_edges: dict[str, dict[str, float]] = {}
    for e in data.get("edges", []) or []:
        extra_edges.setdefault(e["to"], {})[e["from"]] = float(e.get("coef", 1.0))
    nodes = []
    for raw in raw_nodes:
        try:
            role = NodeRole(raw["role"])
        except (KeyError, ValueError):
            raise InvalidSpec(f"node {raw.get('name')!r}: bad or missing role") from None
        if mechanism == LINEAR_GAUSSIAN:
            parents = dict(raw.get("parents") or {})
            parents.update(extra_edges.get(raw["name"], {}))
            nodes.append(
                Node(
                    name=raw["name"],
                    role=role,
                    parents=tuple(parents),
                    coefs=tuple(parents.values()),
                    noise_sd=float(raw.get("noise_sd", 1.0)),
                    intercept=float(raw.get("intercept", 0.0)),
                )
            )
        else:
            nodes.append(
                Node(
                    name=raw["name"],
                    role=role,
                    parents=tuple(raw.get("parents") or ()),
                    card=int(raw["card"]),
                    cpt=np.asarray(raw["cpt"], dtype=float),
                )
            )
    return ScmSpec(tuple(nodes), mechanism)


def load_spec(path: str | Path) -> ScmSpec:
    """Read a spec from a YAML or JSON file."""
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if isinstance(data, dict) and "scm" in data and "nodes" not in data:
        data = data["scm"]
    return spec_from_dict(data)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Check:
    rule: str
    node: str | None
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]
    graph_class: str | None
    selection_on_causes: bool

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "graph_class": self.graph_class,
            "selection_on_causes": self.selection_on_causes,
            "checks": [c.__dict__ for c in self.checks],
        }


def _role_checks(spec: ScmSpec) -> list[Check]:
    checks: list[Check] = []

    def add(rule: str, node: str | None, ok: bool) -> None:
        checks.append(Check(rule, node, bool(ok)))

    roles = {n.name: n.role for n in spec.nodes}
    outcomes = spec.with_role(NodeRole.OUTCOME)
    add("exactly one outcome node", None, len(outcomes) == 1)
    add("at most one selection node", None, len(spec.with_role(NodeRole.SELECTION)) <= 1)
    add("at least two causes", None, len(spec.causes) >= 2)
    outcome = outcomes[0] if len(outcomes) == 1 else None

    for n in spec.nodes:
        kids = spec.children(n.name)
        cause_kids = [c for c in kids if roles[c] == NodeRole.CAUSE]
        into_y = outcome is not None and outcome in kids
        kid_roles = {roles[c] for c in kids}
        if n.role == NodeRole.CAUSE:
            add("cause parents are confounders or covariates", n.name,
                all(roles[p] in CONFOUNDER_ROLES | COVARIATE_ROLES for p in n.parents))
            add("cause children are the outcome or selection", n.name,
                kid_roles <= {NodeRole.OUTCOME, NodeRole.SELECTION})
        elif n.role == NodeRole.OUTCOME:
            add("outcome parents are causes, confounders or outcome covariates", n.name,
                all(roles[p] in CONFOUNDER_ROLES | {NodeRole.CAUSE, NodeRole.OUTCOME_COVARIATE}
                    for p in n.parents))
            add("outcome has no children", n.name, not kids)
        elif n.role == NodeRole.SELECTION:
            add("selection has no children", n.name, not kids)
            add("selection parents are confounders or causes", n.name,
                all(roles[p] in CONFOUNDER_ROLES | {NodeRole.CAUSE} for p in n.parents))
        else:
            add("latent and covariate nodes are roots", n.name, not n.parents)
            if n.role in CONFOUNDER_ROLES:
                add("confounder has an edge into the outcome", n.name, into_y)
                add("confounder children are causes, outcome or selection", n.name,
                    kid_roles <= {NodeRole.CAUSE, NodeRole.OUTCOME, NodeRole.SELECTION})
                if n.role == NodeRole.MULTI_CAUSE_CONFOUNDER:
                    add("multi-cause confounder has two or more cause children", n.name, len(cause_kids) >= 2)
                else:
                    add("single-cause confounder has exactly one cause child", n.name, len(cause_kids) == 1)
            elif n.role in COVARIATE_ROLES:
                add("cause covariate has no edge into the outcome", n.name, not into_y)
                add("cause covariate children are causes", n.name, kid_roles <= {NodeRole.CAUSE})
                if n.role == NodeRole.MULTI_CAUSE_COVARIATE:
                    add("multi-cause covariate has two or more cause children", n.name, len(cause_kids) >= 2)
                else:
                    add("single-cause covariate has exactly one cause child", n.name, len(cause_kids) == 1)
            elif n.role == NodeRole.OUTCOME_COVARIATE:
                add("outcome covariate has only the outcome as child", n.name,
                    outcome is not None and kids == [outcome])
    return checks


def _mechanism_checks(spec: ScmSpec) -> list[Check]:
    checks = []
    for n in spec.nodes:
        if spec.mechanism == LINEAR_GAUSSIAN:
            if n.role != NodeRole.SELECTION:
                checks.append(Check("noise sd strictly positive", n.name,
                                    bool(np.isfinite(n.noise_sd) and n.noise_sd > 0)))
        else:
            cpt = n.cpt
            ok = bool(np.all(cpt >= 0) and np.all(np.abs(cpt.sum(axis=-1) - 1.0) <= CPT_TOL))
            checks.append(Check("cpt rows are distributions", n.name, ok))
            if n.role == NodeRole.SELECTION:
                checks.append(Check("selection is binary", n.name, n.card == 2))
    return checks


def validate_spec(spec: ScmSpec, *, strict: bool = True) -> ValidationReport:
    """Check structural invariants and classify the graph.

    Class A is the shared-confounding graph: besides causes and the outcome it
    contains only multi-cause confounders. Any other valid graph is class B.
    With ``strict`` the first failed rule is raised as :class:`RoleViolation`
    (or :class:`InvalidSpec` for mechanism problems).
    """
    spec.topological_order()  # raises CyclicGraph
    checks = _role_checks(spec) + _mechanism_checks(spec)
    report_ok = all(c.passed for c in checks)
    extras = {n.role for n in spec.nodes} - {NodeRole.CAUSE, NodeRole.OUTCOME}
    graph_class = None
    if report_ok:
        graph_class = "A" if extras <= {NodeRole.MULTI_CAUSE_CONFOUNDER} else "B"
    sel = spec.selection
    on_causes = sel is not None and any(
        spec.node(p).role == NodeRole.CAUSE for p in spec.node(sel).parents
    )
    report = ValidationReport(tuple(checks), graph_class, on_causes)
    if strict and not report_ok:
        first = report.failures[0]
        if first.rule in ("noise sd strictly positive", "cpt rows are distributions", "selection is binary"):
            raise InvalidSpec(f"{first.node}: {first.rule}")
        raise RoleViolation(first.node or "<graph>", first.rule)
    return report


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True, eq=False)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if mean.size == 0:
            mean, cov = np.zeros(0), np.zeros((0, 0))
        labels = tuple(self.labels)
        if cov.shape != (mean.size, mean.size) or len(labels) != mean.size:
            raise ValueError("mean, cov and labels disagree in dimension")
        if mean.size:
            if not np.allclose(cov, cov.T, atol=PSD_TOL, rtol=0):
                raise ValueError("covariance is not symmetric")
            if np.linalg.eigvalsh((cov + cov.T) / 2).min() < -PSD_TOL:
                raise ValueError("covariance is not positive semidefinite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, names: Iterable[str]) -> list[int]:
        return [self.labels.index(n) for n in names]

    def marginal(self, names: Sequence[str]) -> GaussianDist:
        idx = self.index(names)
        return GaussianDist(self.mean[idx], self.cov[np.ix_(idx, idx)], tuple(names))

    def var(self, name: str) -> float:
        i = self.labels.index(name)
        return float(self.cov[i, i])

    def sd(self, name: str) -> float:
        return float(np.sqrt(self.var(name)))

    def to_dict(self) -> dict[str, Any]:
        return {"labels": list(self.labels), "mean": self.mean.tolist(), "cov": self.cov.tolist()}


def condition(dist: GaussianDist, given: Mapping[str, float]) -> GaussianDist:
    """Condition a Gaussian on observed values of some of its variables."""
    if not given:
        return dist
    g = dist.index(given)
    r = [i for i in range(dist.dim) if i not in g]
    s_gg = dist.cov[np.ix_(g, g)]
    if np.linalg.eigvalsh(s_gg).min() <= SINGULAR_TOL:
        raise SingularConditioningBlock(f"conditioning block on {list(given)} is singular")
    x = np.array([given[k] for k in given], dtype=float)
    s_rg = dist.cov[np.ix_(r, g)]
    gain = np.linalg.solve(s_gg, s_rg.T).T
    mean = dist.mean[r] + gain @ (x - dist.mean[g])
    cov = dist.cov[np.ix_(r, r)] - gain @ s_rg.T
    cov = (cov + cov.T) / 2
    return GaussianDist(mean, cov, tuple(dist.labels[i] for i in r))


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Joint probability table with one axis per variable."""

    table: np.ndarray
    labels: tuple[str, ...]
    notes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=float).copy()
        labels = tuple(self.labels)
        if table.ndim != len(labels):
            raise ValueError("table rank does not match labels")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "labels", labels)

    @property
    def cards(self) -> dict[str, int]:
        return dict(zip(self.labels, self.table.shape))

    def marginal(self, names: Sequence[str]) -> DiscreteDist:
        names = list(names)
        keep = [self.labels.index(n) for n in names]
        drop = tuple(i for i in range(len(self.labels)) if i not in keep)
        summed = self.table.sum(axis=drop)
        remaining = [i for i in range(len(self.labels)) if i in keep]
        order = [remaining.index(i) for i in keep]
        return DiscreteDist(np.transpose(summed, order), tuple(names))

    def condition(self, given: Mapping[str, int]) -> DiscreteDist:
        """Slice on ``given`` values and renormalise."""
        idx: list[Any] = [slice(None)] * len(self.labels)
        for k, v in given.items():
            idx[self.labels.index(k)] = int(v)
        sliced = self.table[tuple(idx)]
        total = sliced.sum()
        if total <= 0:
            raise ValueError(f"conditioning event {dict(given)} has zero probability")
        labels = tuple(l for l in self.labels if l not in given)
        return DiscreteDist(sliced / total, labels)

    @property
    def pmf(self) -> np.ndarray:
        if len(self.labels) != 1:
            raise ValueError("pmf is defined for one-dimensional distributions")
        return self.table

    def mean(self) -> float:
        return float(np.arange(self.pmf.size) @ self.pmf)

    def var(self) -> float:
        k = np.arange(self.pmf.size)
        return float(k**2 @ self.pmf - self.mean() ** 2)

    def to_dict(self) -> dict[str, Any]:
        return {"labels": list(self.labels), "table": self.table.tolist()}


# ---------------------------------------------------------------------------
# exact joints


def _require(spec: ScmSpec, mechanism: str) -> None:
    if spec.mechanism != mechanism:
        err = NotLinearGaussian if mechanism == LINEAR_GAUSSIAN else NotDiscrete
        raise err(f"spec mechanism is {spec.mechanism}")


def gaussian_moments(spec: ScmSpec, fixed: Mapping[str, float] | None = None) -> GaussianDist:
    """Push-forward of a linear SCM, optionally with some nodes clamped.

    Clamped nodes lose their parents and noise; the selection node is excluded.
    """
    _require(spec, LINEAR_GAUSSIAN)
    fixed = dict(fixed or {})
    names = [n.name for n in spec.nodes if n.role != NodeRole.SELECTION]
    pos = {name: i for i, name in enumerate(names)}
    p = len(names)
    B = np.zeros((p, p))
    c = np.zeros(p)
    d = np.zeros(p)
    for name in names:
        n = spec.node(name)
        i = pos[name]
        if name in fixed:
            c[i] = float(fixed[name])
            continue
        for par, coef in zip(n.parents, n.coefs):
            B[i, pos[par]] = coef
        c[i] = n.intercept
        d[i] = n.noise_sd**2
    T = np.linalg.inv(np.eye(p) - B)
    cov = T @ np.diag(d) @ T.T
    return GaussianDist(T @ c, (cov + cov.T) / 2, tuple(names))


def joint_gaussian(spec: ScmSpec) -> GaussianDist:
    """Exact joint over every node except the selection node."""
    return gaussian_moments(spec)


def discrete_table(spec: ScmSpec, fixed: Mapping[str, int] | None = None) -> DiscreteDist:
    """Truncated-factorisation joint table, clamping any ``fixed`` nodes."""
    _require(spec, DISCRETE)
    fixed = dict(fixed or {})
    labels = spec.names
    shape = tuple(spec.node(l).card for l in labels)
    if int(np.prod(shape, dtype=float)) > MAX_JOINT_CELLS:
        raise SupportTooLarge(f"joint support has {np.prod(shape, dtype=float):.3g} cells")
    table = np.ones(shape)
    for j, name in enumerate(labels):
        n = spec.node(name)
        if name in fixed:
            point = np.zeros(n.card)
            point[int(fixed[name])] = 1.0
            factor, axes = point, [j]
        else:
            factor, axes = n.cpt, [labels.index(p) for p in n.parents] + [j]
        order = np.argsort(axes)
        factor = np.transpose(factor, order)
        bshape = [1] * len(labels)
        for ax in axes:
            bshape[ax] = shape[ax]
        table = table * factor.reshape(bshape)
    return DiscreteDist(table, tuple(labels))


def joint_discrete(spec: ScmSpec) -> DiscreteDist:
    """Exact joint table over all nodes, the selection node included."""
    return discrete_table(spec)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, eq=False)
class Dataset:
    """Simulated or observed rows.

    ``view`` records how the outcome was censored when sampling
    (``full`` or ``selected_outcome``); ``provenance`` becomes ``selected``
    once the rows themselves are restricted to the selected units.
    """

    rows: np.ndarray
    columns: tuple[str, ...]
    roles: tuple[NodeRole, ...]
    selected: np.ndarray | None = None
    seed: int | None = None
    view: str = "full"
    provenance: str = "full"
    discrete: bool = False

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=float).copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "roles", tuple(NodeRole(r) for r in self.roles))
        if self.selected is not None:
            sel = np.asarray(self.selected, dtype=bool).copy()
            sel.setflags(write=False)
            object.__setattr__(self, "selected", sel)
        if rows.ndim != 2 or rows.shape[1] != len(self.columns) or len(self.roles) != len(self.columns):
            raise ValueError("rows, columns and roles disagree")
        causes = [i for i, r in enumerate(self.roles) if r == NodeRole.CAUSE]
        if np.isnan(rows[:, causes]).any():
            raise ValueError("cause columns may not contain missing entries")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return self.rows[:, [self.columns.index(c) for c in names]]

    def names_with_role(self, role: NodeRole) -> list[str]:
        return [c for c, r in zip(self.columns, self.roles) if r == role]

    @property
    def cause_names(self) -> list[str]:
        return self.names_with_role(NodeRole.CAUSE)

    @property
    def outcome_name(self) -> str:
        return self.names_with_role(NodeRole.OUTCOME)[0]

    @property
    def outcome_observed(self) -> np.ndarray:
        return ~np.isnan(self.column(self.outcome_name))

    def take(self, idx: np.ndarray, provenance: str | None = None) -> Dataset:
        return Dataset(
            self.rows[idx],
            self.columns,
            self.roles,
            None if self.selected is None else self.selected[idx],
            self.seed,
            self.view,
            provenance or self.provenance,
            self.discrete,
        )

    def selected_rows(self) -> Dataset:
        """Rows with S=1 only; the result is marked as selection-biased."""
        if self.selected is None:
            raise ValueError("dataset has no selection column")
        return self.take(np.flatnonzero(self.selected), provenance="selected")

    def split(self, holdout_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
        perm = np.random.default_rng(seed).permutation(self.n)
        cut = int(round(self.n * (1 - holdout_fraction)))
        return self.take(np.sort(perm[:cut])), self.take(np.sort(perm[cut:]))

    def to_csv(self, path: str | Path) -> None:
        header = [f"{c}:{r.value}" for c, r in zip(self.columns, self.roles)]
        if self.selected is not None:
            header.append("__selected")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, row in enumerate(self.rows):
                cells = ["" if np.isnan(v) else (str(int(v)) if self.discrete else repr(float(v))) for v in row]
                if self.selected is not None:
                    cells.append("true" if self.selected[i] else "false")
                w.writerow(cells)

    @classmethod
    def from_csv(cls, path: str | Path) -> Dataset:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = list(reader)
        has_sel = header[-1] == "__selected"
        cols = header[:-1] if has_sel else header
        names = [c.rsplit(":", 1)[0] for c in cols]
        roles = [NodeRole(c.rsplit(":", 1)[1]) for c in cols]
        rows = np.array([[float(v) if v else np.nan for v in r[: len(cols)]] for r in body]).reshape(-1, len(cols))
        sel = np.array([r[-1] == "true" for r in body]) if has_sel else None
        return cls(rows, tuple(names), tuple(roles), sel)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def simulate(
    spec: ScmSpec, n: int, rng: np.random.Generator, fixed: Mapping[str, float] | None = None
) -> dict[str, np.ndarray]:
    """Ancestral sampling; ``fixed`` nodes are clamped (mutilated graph)."""
    fixed = dict(fixed or {})
    values: dict[str, np.ndarray] = {}
    for name in spec.topological_order():
        node = spec.node(name)
        if name in fixed:
            values[name] = np.full(n, float(fixed[name]))
            continue
        if spec.mechanism == LINEAR_GAUSSIAN:
            lin = np.full(n, node.intercept)
            for par, coef in zip(node.parents, node.coefs):
                lin = lin + coef * values[par]
            if node.role == NodeRole.SELECTION:
                values[name] = (rng.random(n) < _sigmoid(lin)).astype(float)
            else:
                values[name] = lin + node.noise_sd * rng.standard_normal(n)
        else:
            if node.parents:
                idx = tuple(values[p].astype(np.intp) for p in node.parents)
                probs = node.cpt[idx]
            else:
                probs = np.broadcast_to(node.cpt, (n, node.card))
            cum = np.cumsum(probs, axis=1)
            u = rng.random(n)[:, None]
            values[name] = np.minimum((u >= cum).sum(axis=1), node.card - 1).astype(float)
    return values


def sample(spec: ScmSpec, n: int, seed: int, view: str = "full") -> Dataset:
    """Draw ``n`` rows ancestrally; identical arguments give identical data."""
    if view not in ("full", "selected_outcome"):
        raise ValueError(f"unknown view {view!r}")
    validate_spec(spec)
    values = simulate(spec, int(n), np.random.default_rng(seed))
    sel_name = spec.selection
    names = [nm for nm in spec.names if nm != sel_name]
    rows = np.column_stack([values[nm] for nm in names]) if n else np.zeros((0, len(names)))
    selected = values[sel_name].astype(bool) if sel_name else None
    if view == "selected_outcome" and selected is not None:
        rows[~selected, names.index(spec.outcome)] = np.nan
    return Dataset(
        rows,
        tuple(names),
        tuple(spec.node(nm).role for nm in names),
        selected,
        seed,
        view if selected is not None else "full",
        "full",
        spec.mechanism == DISCRETE,
    )


@dataclass(frozen=True)
class SelectionRate:
    """Convenience summary used when checking the censoring fraction."""

    rate: float
    se: float
    n: int


def selection_rate_mc(spec: ScmSpec, n: int, seed: int) -> SelectionRate:
    """Monte-Carlo estimate of P(S=1) from the selection node's parents.

    Uses the exact conditional probabilities rather than Bernoulli draws,
    which makes the estimate independent of the selection coin flips.
    """
    sel = spec.selection
    if sel is None:
        return SelectionRate(1.0, 0.0, n)
    values = simulate(spec, n, np.random.default_rng(seed))
    node = spec.node(sel)
    if spec.mechanism == LINEAR_GAUSSIAN:
        lin = node.intercept + sum(c * values[p] for p, c in zip(node.parents, node.coefs))
        p = _sigmoid(np.asarray(lin, dtype=float) * np.ones(n))
    else:
        idx = tuple(values[q].astype(np.intp) for q in node.parents)
        p = node.cpt[idx][..., 1] if node.parents else np.full(n, node.cpt[1])
    return SelectionRate(float(p.mean()), float(p.std(ddof=1) / np.sqrt(n)), n)
