"""Reference worlds used by the tests, demos and experiment configs.

Linear fixtures with many coefficients were drawn once by
:func:`draw_class_a` / :func:`draw_meal_world` and frozen to YAML files in
``fixtures/``; loading them never touches a random number generator.
Discrete fixtures are small enough to write down directly.
"""

from __future__ import annotations

from importlib import resources
from typing import Any

import numpy as np
import yaml
from scipy.linalg import null_space

from .scm import DISCRETE, LINEAR_GAUSSIAN, Node, NodeRole, ScmSpec, spec_from_dict

R = NodeRole


def _sigmoid(x: float) -> float:
    return float(1.0 / (1.0 + np.exp(-x)))


def _bernoulli_cpt(p1: np.ndarray) -> np.ndarray:
    p1 = np.asarray(p1, dtype=float)
    return np.stack([1.0 - p1, p1], axis=-1)


# ---------------------------------------------------------------------------
# frozen linear fixtures


def _signed(rng: np.random.Generator, lo: float, hi: float, size: Any) -> np.ndarray:
    return np.round(rng.uniform(lo, hi, size) * rng.choice([-1.0, 1.0], size), 4)


def draw_class_a(seed: int = 0, m: int = 10, k: int = 2) -> dict[str, Any]:
    """Shared-confounding world: k latent confounders, m causes, one outcome.

    Loadings are +-U(1, 2), outcome coefficients on causes +-U(0.3, 1),
    on confounders +-U(0.5, 1); every disturbance is standard normal.
    """
    rng = np.random.default_rng(seed)
    L = _signed(rng, 1.0, 2.0, (m, k))
    a_y = _signed(rng, 0.3, 1.0, m)
    a_u = _signed(rng, 0.5, 1.0, k)
    nodes: list[dict[str, Any]] = [{"name": f"U{j + 1}", "role": "multi_cause_confounder"} for j in range(k)]
    for i in range(m):
        nodes.append({"name": f"A{i + 1}", "role": "cause",
                      "parents": {f"U{j + 1}": float(L[i, j]) for j in range(k)}})
    parents = {f"A{i + 1}": float(a_y[i]) for i in range(m)}
    parents.update({f"U{j + 1}": float(a_u[j]) for j in range(k)})
    nodes.append({"name": "Y", "role": "outcome", "parents": parents})
    return {"mechanism": LINEAR_GAUSSIAN, "nodes": nodes}


def draw_meal_world(seed: int = 1, m: int = 10) -> dict[str, Any]:
    """Meal/body-fat world with lifestyle, vegan and burger-shop latents plus selection.

    Umlt (lifestyle) confounds all causes and Y; Wmlt (vegan) affects all
    causes but not Y; Usng (burger shop access) affects A1 and Y and is
    observed. Selection S is logistic in Umlt and Usng.
    """
    rng = np.random.default_rng(seed)
    l_u = _signed(rng, 1.0, 2.0, m)
    l_w = _signed(rng, 1.0, 2.0, m)
    l_s = float(np.round(rng.uniform(0.5, 1.0), 4))
    a_y = _signed(rng, 0.3, 1.0, m)
    a_yu = float(_signed(rng, 0.5, 1.0, 1)[0])
    a_ys = float(_signed(rng, 0.5, 1.0, 1)[0])
    nodes: list[dict[str, Any]] = [
        {"name": "Umlt", "role": "multi_cause_confounder"},
        {"name": "Wmlt", "role": "multi_cause_covariate"},
        {"name": "Usng", "role": "single_cause_confounder"},
    ]
    for i in range(m):
        parents = {"Umlt": float(l_u[i]), "Wmlt": float(l_w[i])}
        if i == 0:
            parents["Usng"] = l_s
        nodes.append({"name": f"A{i + 1}", "role": "cause", "parents": parents})
    y_parents = {f"A{i + 1}": float(a_y[i]) for i in range(m)}
    y_parents.update({"Umlt": a_yu, "Usng": a_ys})
    nodes.append({"name": "Y", "role": "outcome", "parents": y_parents})
    nodes.append({"name": "S", "role": "selection", "parents": {"Umlt": 1.5, "Usng": 1.0}, "intercept": 0.0})
    return {"mechanism": LINEAR_GAUSSIAN, "nodes": nodes}


def _load(name: str) -> dict[str, Any]:
    text = resources.files(__package__).joinpath("fixtures", name).read_text()
    return yaml.safe_load(text)


def class_a() -> ScmSpec:
    """Frozen m=10, two-confounder shared-confounding world."""
    return spec_from_dict(_load("class_a.yaml"))


def meal_world_selected() -> ScmSpec:
    """Frozen meal world with selection on Umlt and Usng."""
    return spec_from_dict(_load("meal_world.yaml"))


def meal_world() -> ScmSpec:
    """Meal world without the selection node."""
    data = _load("meal_world.yaml")
    data["nodes"] = [n for n in data["nodes"] if n["role"] != "selection"]
    return spec_from_dict(data)


def meal_world_reduced() -> ScmSpec:
    """Meal world without selection and without the single-cause confounder."""
    data = _load("meal_world.yaml")
    nodes = []
    for n in data["nodes"]:
        if n["role"] == "selection" or n["name"] == "Usng":
            continue
        n = dict(n)
        n["parents"] = {p: c for p, c in (n.get("parents") or {}).items() if p != "Usng"}
        nodes.append(n)
    data["nodes"] = nodes
    return spec_from_dict(data)


def meal_world_constant_selection(p: float = 0.5) -> ScmSpec:
    """Selection node present but independent of everything."""
    spec = meal_world_selected()
    return spec.replace_node("S", parents=(), coefs=(), intercept=float(np.log(p / (1 - p))))


# ---------------------------------------------------------------------------
# small linear worlds


def linear(nodes: list[tuple[str, str, dict[str, float]]], noise: dict[str, float] | None = None) -> ScmSpec:
    """Compact builder: ``(name, role, {parent: coef})`` triples."""
    noise = noise or {}
    return ScmSpec(tuple(
        Node(n, R(r), tuple(p), tuple(p.values()), noise.get(n, 1.0)) for n, r, p in nodes
    ))


def unconfounded() -> ScmSpec:
    """U drives the causes with a zero-weight edge into Y; back-door paths run only through other causes."""
    return linear([
        ("U", "multi_cause_confounder", {}),
        ("A1", "cause", {"U": 1.0}),
        ("A2", "cause", {"U": 0.8}),
        ("A3", "cause", {"U": -0.6}),
        ("A4", "cause", {"U": 1.2}),
        ("Y", "outcome", {"A1": 0.7, "A2": -0.4, "A3": 0.5, "U": 0.0}),
    ])


def pair_sum_world() -> ScmSpec:
    """Y depends on A1 + A2, which are identically distributed given U."""
    return linear([
        ("U", "multi_cause_confounder", {}),
        ("A1", "cause", {"U": 1.0}),
        ("A2", "cause", {"U": 1.0}),
        ("A3", "cause", {"U": 0.7}),
        ("Y", "outcome", {"A1": 0.8, "A2": 0.8, "A3": 0.5, "U": 1.0}),
    ])


def null_cause_world(effect: float = 0.0) -> ScmSpec:
    """A2 is a null cause unless ``effect`` is non-zero."""
    return linear([
        ("U", "multi_cause_confounder", {}),
        ("A1", "cause", {"U": 1.0}),
        ("A2", "cause", {"U": 1.0}),
        ("A3", "cause", {"U": 0.7}),
        ("Y", "outcome", {"A1": 0.8, "A2": effect, "A3": 0.5, "U": 1.0}),
    ])


# ---------------------------------------------------------------------------
# discrete worlds


def discrete(nodes: list[tuple[str, str, tuple[str, ...], np.ndarray]]) -> ScmSpec:
    return ScmSpec(tuple(
        Node(n, R(r), parents, card=cpt.shape[-1], cpt=cpt) for n, r, parents, cpt in nodes
    ), DISCRETE)


def _binary_outcome(logit: Any, shape: tuple[int, ...]) -> np.ndarray:
    grid = np.indices(shape)
    return _bernoulli_cpt(np.vectorize(_sigmoid)(logit(*grid)))


def b1() -> ScmSpec:
    """Binary confounder, four binary causes, binary outcome; A4 is a null cause."""
    return discrete([
        ("U", "multi_cause_confounder", (), np.array([0.6, 0.4])),
        ("A1", "cause", ("U",), _bernoulli_cpt([0.2, 0.7])),
        ("A2", "cause", ("U",), _bernoulli_cpt([0.3, 0.8])),
        ("A3", "cause", ("U",), _bernoulli_cpt([0.65, 0.15])),
        ("A4", "cause", ("U",), _bernoulli_cpt([0.25, 0.75])),
        ("Y", "outcome", ("U", "A1", "A2", "A3"),
         _binary_outcome(lambda u, a1, a2, a3: -1.0 + 1.5 * u + 1.0 * a1 + 0.6 * a2 - 0.8 * a3, (2, 2, 2, 2))),
    ])


def b2() -> ScmSpec:
    """Ternary confounder with binary proxies: completeness in f must fail."""
    return discrete([
        ("U", "multi_cause_confounder", (), np.array([0.3, 0.4, 0.3])),
        ("A1", "cause", ("U",), _bernoulli_cpt([0.2, 0.5, 0.8])),
        ("A2", "cause", ("U",), _bernoulli_cpt([0.7, 0.4, 0.1])),
        ("A3", "cause", ("U",), _bernoulli_cpt([0.15, 0.6, 0.85])),
        ("Y", "outcome", ("U", "A1", "A2"),
         _binary_outcome(lambda u, a1, a2: -1.2 + 1.0 * u + 0.9 * a1 + 0.5 * a2, (3, 2, 2))),
    ])


def b3() -> ScmSpec:
    """B1-like world with an observed single-cause confounder of A1 and selection on U, Usng."""
    return discrete([
        ("U", "multi_cause_confounder", (), np.array([0.6, 0.4])),
        ("Usng", "single_cause_confounder", (), np.array([0.5, 0.5])),
        ("A1", "cause", ("U", "Usng"), _bernoulli_cpt([[0.15, 0.45], [0.6, 0.85]])),
        ("A2", "cause", ("U",), _bernoulli_cpt([0.3, 0.8])),
        ("A3", "cause", ("U",), _bernoulli_cpt([0.65, 0.15])),
        ("A4", "cause", ("U",), _bernoulli_cpt([0.25, 0.75])),
        ("Y", "outcome", ("U", "Usng", "A1", "A2", "A3"),
         _binary_outcome(lambda u, s, a1, a2, a3: -1.0 + 1.5 * u + 0.8 * s + 1.0 * a1 + 0.6 * a2 - 0.8 * a3,
                         (2, 2, 2, 2, 2))),
        ("S", "selection", ("U", "Usng"), _bernoulli_cpt([[0.2, 0.5], [0.7, 0.95]])),
    ])


def and_world() -> ScmSpec:
    """Y depends on A1 AND A2 (plus U and A3), never on A1 or A2 alone."""
    return discrete([
        ("U", "multi_cause_confounder", (), np.array([0.5, 0.5])),
        ("A1", "cause", ("U",), _bernoulli_cpt([0.3, 0.7])),
        ("A2", "cause", ("U",), _bernoulli_cpt([0.4, 0.75])),
        ("A3", "cause", ("U",), _bernoulli_cpt([0.6, 0.2])),
        ("Y", "outcome", ("U", "A1", "A2", "A3"),
         _binary_outcome(lambda u, a1, a2, a3: -0.5 + 1.0 * u + 1.5 * (a1 & a2) - 0.7 * a3, (2, 2, 2, 2))),
    ])


def a1_only_world() -> ScmSpec:
    """Y depends on A1 alone among the pair (A1, A2)."""
    return discrete([
        ("U", "multi_cause_confounder", (), np.array([0.5, 0.5])),
        ("A1", "cause", ("U",), _bernoulli_cpt([0.3, 0.7])),
        ("A2", "cause", ("U",), _bernoulli_cpt([0.4, 0.75])),
        ("A3", "cause", ("U",), _bernoulli_cpt([0.6, 0.2])),
        ("Y", "outcome", ("U", "A1", "A3"),
         _binary_outcome(lambda u, a1, a3: -0.5 + 1.0 * u + 1.5 * a1 - 0.7 * a3, (2, 2, 2))),
    ])


def unconfounded_discrete() -> ScmSpec:
    """Constant U: every cause is exogenous."""
    return discrete([
        ("U", "multi_cause_confounder", (), np.array([1.0])),
        ("A1", "cause", ("U",), _bernoulli_cpt([0.4])),
        ("A2", "cause", ("U",), _bernoulli_cpt([0.6])),
        ("A3", "cause", ("U",), _bernoulli_cpt([0.3])),
        ("Y", "outcome", ("U", "A1", "A2"),
         _binary_outcome(lambda u, a1, a2: -0.3 + 1.1 * a1 - 0.4 * a2 + 0 * u, (1, 2, 2))),
    ])


def deterministic_copy() -> ScmSpec:
    """Y = A1 exactly."""
    y = np.zeros((2, 2))
    y[0, 0] = y[1, 1] = 1.0
    return discrete([
        ("U", "multi_cause_confounder", (), np.array([0.5, 0.5])),
        ("A1", "cause", ("U",), _bernoulli_cpt([0.3, 0.6])),
        ("A2", "cause", ("U",), _bernoulli_cpt([0.5, 0.2])),
        ("Y", "outcome", ("A1",), y),
    ])


# ---------------------------------------------------------------------------
# null-function helpers for linear fixtures


def orthogonal_null_weights(cov_n: np.ndarray, alpha_n: np.ndarray, rows: int) -> np.ndarray:
    """``rows`` weight vectors w with w' cov_n alpha_n = 0 (an orthonormal choice)."""
    direction = (np.asarray(cov_n) @ np.asarray(alpha_n)).reshape(1, -1)
    basis = null_space(direction)
    if basis.shape[1] < rows:
        raise ValueError(f"only {basis.shape[1]} orthogonal directions available")
    return basis[:, :rows].T


REGISTRY = {
    "class_a": class_a,
    "meal_world": meal_world,
    "meal_world_selected": meal_world_selected,
    "meal_world_reduced": meal_world_reduced,
    "unconfounded": unconfounded,
    "pair_sum_world": pair_sum_world,
    "b1": b1,
    "b2": b2,
    "b3": b3,
    "and_world": and_world,
    "a1_only_world": a1_only_world,
    "unconfounded_discrete": unconfounded_discrete,
}


def by_name(name: str) -> ScmSpec:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {sorted(REGISTRY)}") from None
