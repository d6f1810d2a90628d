"""The deconfounder: PPCA substitute confounder, linear outcome model, integration.

The outcome design uses one posterior draw of the substitute per row rather
than the posterior mean. For PPCA the posterior mean is an affine function of
the causes, so a design holding both the causes and that mean is always
singular; a posterior draw keeps the design full rank while staying
consistent with the fitted joint of causes and substitute.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import (
    IncompatibleModels,
    InvalidQuery,
    KTooLarge,
    RankDeficientDesign,
    Underdetermined,
    WrongViewProvenance,
)
from .oracle import InterventionQuery
from .scm import Dataset, DiscreteDist, GaussianDist, NodeRole

EM_TOL = 1e-9
EM_MAX_ITER = 2000
DESIGN_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class SubstituteModel:
    """Fitted PPCA: a = mean + loadings @ z + noise, z ~ N(0, I).

    ``fit_log`` holds the average per-row log-likelihood after each EM step.
    ``view`` is ``full`` when fitted on all units and ``selected`` when the
    training rows were restricted to selected units.
    """

    loadings: np.ndarray
    noise_var: float
    mean: np.ndarray
    cause_names: tuple[str, ...]
    fit_log: tuple[float, ...] = ()
    view: str = "full"
    converged: bool = True

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    @property
    def m(self) -> int:
        return self.loadings.shape[0]

    def implied_cov(self) -> np.ndarray:
        W = self.loadings
        return W @ W.T + self.noise_var * np.eye(self.m)

    def to_dict(self) -> dict[str, Any]:
        # loadings row-major: one row per cause, in cause_names order
        return {
            "cause_names": list(self.cause_names),
            "k": self.k,
            "loadings": self.loadings.tolist(),
            "noise_var": self.noise_var,
            "mean": self.mean.tolist(),
            "view": self.view,
            "converged": self.converged,
            "fit_log": list(self.fit_log),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SubstituteModel:
        return cls(np.asarray(d["loadings"], dtype=float), float(d["noise_var"]),
                   np.asarray(d["mean"], dtype=float), tuple(d["cause_names"]),
                   tuple(d.get("fit_log", ())), d.get("view", "full"), bool(d.get("converged", True)))


def _causes_view(data: Dataset | np.ndarray, columns: Sequence[str] | None, view: str | None) -> tuple[np.ndarray, tuple[str, ...], str]:
    if isinstance(data, Dataset):
        names = tuple(columns or data.cause_names)
        return data.matrix(names), names, view or data.provenance
    X = np.asarray(data, dtype=float)
    names = tuple(columns or (f"A{i + 1}" for i in range(X.shape[1])))
    return X, names, view or "full"


def _avg_loglik(S: np.ndarray, W: np.ndarray, s2: float) -> float:
    d = S.shape[0]
    C = W @ W.T + s2 * np.eye(d)
    sign, logdet = np.linalg.slogdet(C)
    return -0.5 * (d * np.log(2 * np.pi) + logdet + np.trace(np.linalg.solve(C, S)))


def fit_substitute(
    data: Dataset | np.ndarray,
    k: int,
    *,
    columns: Sequence[str] | None = None,
    view: str | None = None,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> SubstituteModel:
    """Fit PPCA with ``k`` latent dimensions by EM on the sample covariance."""
    X, names, prov = _causes_view(data, columns, view)
    n, m = X.shape
    if not 1 <= k < m:
        raise KTooLarge(f"k={k} must satisfy 1 <= k < m={m}")
    if n < 10 * m:
        raise Underdetermined(f"n={n} rows for m={m} causes; need at least {10 * m}")
    mu = X.mean(axis=0)
    Xc = X - mu
    S = Xc.T @ Xc / n

    # deterministic start: principal directions at half the PCA scale
    evals, evecs = np.linalg.eigh(S)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    s2 = float(evals.mean())
    W = evecs[:, :k] * np.sqrt(np.maximum(evals[:k], 1e-12) / 2)
    log = [_avg_loglik(S, W, s2)]
    converged = False
    eye = np.eye(k)
    for _ in range(max_iter):
        M = W.T @ W + s2 * eye
        SW = S @ W
        Minv_WtSW = np.linalg.solve(M, W.T @ SW)
        W_new = SW @ np.linalg.inv(s2 * eye + Minv_WtSW)
        s2 = float(np.trace(S - SW @ np.linalg.solve(M, W_new.T)) / m)
        W = W_new
        log.append(_avg_loglik(S, W, s2))
        if abs(log[-1] - log[-2]) <= tol * abs(log[-2]):
            converged = True
            break
    return SubstituteModel(W, s2, mu, names, tuple(log), prov, converged)


def posterior_z(model: SubstituteModel, a: np.ndarray) -> GaussianDist:
    """Exact PPCA posterior of the substitute given one cause vector."""
    a = np.asarray(a, dtype=float)
    if a.shape != (model.m,):
        raise ValueError(f"expected a cause vector of length {model.m}")
    W = model.loadings
    M = W.T @ W + model.noise_var * np.eye(model.k)
    mean = np.linalg.solve(M, W.T @ (a - model.mean))
    cov = model.noise_var * np.linalg.inv(M)
    return GaussianDist(mean, (cov + cov.T) / 2, tuple(f"z{i + 1}" for i in range(model.k)))


def posterior_moments(model: SubstituteModel, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise posterior means (n x k) and the shared posterior covariance."""
    W = model.loadings
    M = W.T @ W + model.noise_var * np.eye(model.k)
    means = np.linalg.solve(M, W.T @ (A - model.mean).T).T
    cov = model.noise_var * np.linalg.inv(M)
    return means, (cov + cov.T) / 2


# ---------------------------------------------------------------------------
# model checking


@dataclass(frozen=True)
class CheckReport:
    score: float
    passed: bool
    verdict: str
    statistic: float | None = None
    per_cause_p: tuple[float, ...] = ()
    n_holdout: int = 0
    replicates: int = 0

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["per_cause_p"] = list(self.per_cause_p)
        return d


def _conditional_loglik(model: SubstituteModel, A: np.ndarray) -> np.ndarray:
    """Per-cause mean of log p(a_j | a_-j) under the model; shape (..., m)."""
    P = np.linalg.inv(model.implied_cov())
    d = np.diag(P)
    r = (A - model.mean) @ P / d  # residual a_j - E[a_j | a_-j]
    ll = -0.5 * np.log(2 * np.pi / d) - 0.5 * r**2 * d
    return ll.mean(axis=-2)


def check_factor(
    model: SubstituteModel, holdout: Dataset | np.ndarray, *, replicates: int = 200, seed: int = 0
) -> CheckReport:
    """Posterior-predictive check on held-out causes.

    Each cause contributes its held-out conditional log-likelihood given the
    others. ``replicates`` datasets of the same size drawn from the fitted
    model give a reference mean and spread per cause, and the discrepancy is
    the sum of squared standardised deviations. Misfit can push single causes
    either way (an isotropic noise term overfits some and underfits others),
    so squaring keeps those deviations from cancelling. The score is the
    predictive p-value P(T_rep >= T_obs); the check passes iff it lies in
    [0.01, 0.99].
    """
    X, _, _ = _causes_view(holdout, model.cause_names if isinstance(holdout, Dataset) else None, None)
    n = X.shape[0]
    if n == 0:
        return CheckReport(float("nan"), False, "Inconclusive")
    obs = _conditional_loglik(model, X)
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(model.implied_cov())
    reps = np.empty((replicates, model.m))
    chunk = max(1, int(2e6 // (n * model.m)))
    for start in range(0, replicates, chunk):
        stop = min(replicates, start + chunk)
        draws = model.mean + rng.standard_normal((stop - start, n, model.m)) @ L.T
        reps[start:stop] = _conditional_loglik(model, draws)
    per_cause = (1 + (reps <= obs).sum(axis=0)) / (replicates + 1)
    centre, spread = reps.mean(axis=0), reps.std(axis=0, ddof=1)
    spread = np.where(spread > 0, spread, 1.0)
    t_obs = float((((obs - centre) / spread) ** 2).sum())
    t_rep = (((reps - centre) / spread) ** 2).sum(axis=1)
    score = float((1 + (t_rep >= t_obs).sum()) / (replicates + 1))
    passed = 0.01 <= score <= 0.99
    return CheckReport(score, passed, "pass" if passed else "fail", t_obs,
                       tuple(float(p) for p in per_cause), n, replicates)


# ---------------------------------------------------------------------------
# outcome model


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    """Linear regression of Y on (A, substitute draw, U^sng)."""

    intercept: float
    coef_a: np.ndarray
    coef_z: np.ndarray
    coef_u: np.ndarray
    residual_var: float
    cause_names: tuple[str, ...]
    u_names: tuple[str, ...] = ()
    fitted_on_selected: bool = False
    n: int = 0
    se: np.ndarray | None = None
    response: str = "Y"

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.coef_a, self.coef_z, self.coef_u])

    @property
    def design_names(self) -> list[str]:
        return ["intercept", *self.cause_names, *(f"z{i + 1}" for i in range(self.coef_z.size)), *self.u_names]

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.design_names.index(name)])

    def to_dict(self) -> dict[str, Any]:
        return {
            "design": self.design_names,
            "coefficients": self.coefficients.tolist(),
            "residual_var": self.residual_var,
            "fitted_on_selected": self.fitted_on_selected,
            "n": self.n,
            "response": self.response,
        }


def fit_outcome(
    data: Dataset,
    substitute: SubstituteModel,
    include_u_sng: bool = False,
    *,
    u_sng: Sequence[str] | None = None,
    seed: int = 0,
) -> OutcomeModel:
    """Least squares of Y on the causes, a posterior substitute draw and U^sng.

    Only rows with an observed outcome are used, so a ``selected_outcome``
    view yields a model fitted on the selected units.
    """
    y_all = data.column(data.outcome_name)
    used = ~np.isnan(y_all)
    y = y_all[used]
    A = data.matrix(substitute.cause_names)[used]
    means, cov = posterior_moments(substitute, A)
    rng = np.random.default_rng(seed)
    Z = means + rng.standard_normal(means.shape) @ np.linalg.cholesky(cov).T
    u_names: tuple[str, ...] = ()
    if include_u_sng:
        u_names = tuple(u_sng or data.names_with_role(NodeRole.SINGLE_CAUSE_CONFOUNDER))
    U = data.matrix(u_names)[used] if u_names else np.zeros((len(y), 0))
    X = np.column_stack([np.ones(len(y)), A, Z, U])
    names = ["intercept", *substitute.cause_names, *(f"z{i + 1}" for i in range(substitute.k)), *u_names]

    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    null = s <= DESIGN_RTOL * s[0]
    if null.any():
        space = [dict(zip(names, np.round(v, 12).tolist())) for v in Vt[null]]
        raise RankDeficientDesign(f"design has {int(null.sum())} collinear direction(s)", space)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(y) - X.shape[1]
    if dof <= 0:
        raise Underdetermined(f"{len(y)} rows for {X.shape[1]} coefficients")
    rv = float(resid @ resid / dof)
    se = np.sqrt(rv * np.diag(np.linalg.inv(X.T @ X)))
    m, k = substitute.m, substitute.k
    selected = data.provenance == "selected" or (data.view == "selected_outcome" and data.selected is not None)
    return OutcomeModel(
        float(coef[0]), coef[1:1 + m], coef[1 + m:1 + m + k], coef[1 + m + k:], rv,
        substitute.cause_names, u_names, selected, len(y), se, data.outcome_name,
    )


# ---------------------------------------------------------------------------
# integration


@dataclass(frozen=True)
class DeconfounderEstimate:
    query: InterventionQuery
    mean: float
    variance: float
    mc_se: float
    n_integration: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"query": self.query.to_dict(), "mean": self.mean, "variance": self.variance,
                "mc_se": self.mc_se, "n_integration": self.n_integration, "diagnostics": self.diagnostics}


def _u_moments(marginal: GaussianDist | DiscreteDist | None, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    if not names:
        return np.zeros(0), np.zeros((0, 0))
    if marginal is None:
        raise IncompatibleModels(f"outcome model uses {list(names)} but no marginal was supplied")
    if isinstance(marginal, GaussianDist):
        g = marginal.marginal(list(names))
        return g.mean, g.cov
    table = marginal.marginal(list(names)).table
    grid = np.indices(table.shape).reshape(len(names), -1).T.astype(float)
    p = table.reshape(-1)
    mu = p @ grid
    c = (grid - mu).T @ ((grid - mu) * p[:, None])
    return mu, c


def _draw_u(marginal: GaussianDist | DiscreteDist, names: Sequence[str], n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(marginal, GaussianDist):
        g = marginal.marginal(list(names))
        return rng.multivariate_normal(g.mean, g.cov, size=n, method="eigh")
    table = marginal.marginal(list(names)).table
    idx = rng.choice(table.size, size=n, p=table.reshape(-1) / table.sum())
    return np.column_stack(np.unravel_index(idx, table.shape)).astype(float)


def _proxy_rank_report(substitute: SubstituteModel, c_idx: list[int]) -> dict[str, Any]:
    """Rank of Cov(z, a_-C | a_C) under the fitted joint of (z, a)."""
    W, m, k = substitute.loadings, substitute.m, substitute.k
    rest = [i for i in range(m) if i not in c_idx]
    cov_a = substitute.implied_cov()
    cov_za = W.T  # Cov(z, a)
    g = np.linalg.solve(cov_a[np.ix_(c_idx, c_idx)], np.eye(len(c_idx)))
    cross = cov_za[:, rest] - cov_za[:, c_idx] @ g @ cov_a[np.ix_(c_idx, rest)]
    sv = np.linalg.svd(cross, compute_uv=False)
    rank = int((sv > 1e-8 * sv[0]).sum()) if sv.size and sv[0] > 0 else 0
    return {"rank": rank, "required": k, "min_singular_value": float(sv[-1]) if sv.size else 0.0}


def _integrate(
    substitute: SubstituteModel,
    outcome: OutcomeModel,
    q: InterventionQuery,
    integration: str | tuple,
    u_marginal: GaussianDist | DiscreteDist | None,
    diagnostics: dict[str, Any],
) -> DeconfounderEstimate:
    if outcome.cause_names != substitute.cause_names or outcome.coef_z.size != substitute.k:
        raise IncompatibleModels("outcome and substitute were fitted on different causes or latent sizes")
    if not q.targets:
        raise InvalidQuery("intervention set is empty")
    unknown = [t for t in q.targets if t not in substitute.cause_names]
    if unknown:
        raise InvalidQuery(f"targets {unknown} are not causes of the fitted model")
    if len(set(q.targets)) >= substitute.m:
        raise InvalidQuery("intervening on every cause is out of scope; use a strict subset")
    names = list(substitute.cause_names)
    c_idx = [names.index(t) for t in q.targets]
    r_idx = [i for i in range(substitute.m) if i not in c_idx]
    a_c = np.array(q.values)
    W, mu, s2 = substitute.loadings, substitute.mean, substitute.noise_var
    b_c, b_r = outcome.coef_a[c_idx], outcome.coef_a[r_idx]
    b_z, b_u = outcome.coef_z, outcome.coef_u
    u_mu, u_cov = _u_moments(u_marginal, outcome.u_names)
    base = outcome.intercept + b_c @ a_c
    diagnostics = {**diagnostics, "completeness_proxy_report": _proxy_rank_report(substitute, c_idx)}

    if integration == "analytic":
        W_r = W[r_idx]
        cov_r = W_r @ W_r.T + s2 * np.eye(len(r_idx))
        mean = base + b_r @ mu[r_idx] + b_u @ u_mu
        var = (outcome.residual_var + b_r @ cov_r @ b_r + 2 * b_r @ W_r @ b_z + b_z @ b_z
               + b_u @ u_cov @ b_u)
        return DeconfounderEstimate(q, float(mean), float(var), 0.0, 0, diagnostics)

    kind, n, seed = integration
    if kind != "mc" or n <= 0:
        raise ValueError(f"unknown integration {integration!r}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), q.digest()]))
    z = rng.standard_normal((n, substitute.k))
    a_r = mu[r_idx] + z @ W[r_idx].T + np.sqrt(s2) * rng.standard_normal((n, len(r_idx)))
    cond_mean = base + a_r @ b_r + z @ b_z
    if outcome.u_names:
        cond_mean = cond_mean + _draw_u(u_marginal, outcome.u_names, n, rng) @ b_u
    se = float(cond_mean.std(ddof=1) / np.sqrt(n))
    var = float(cond_mean.var(ddof=1) + outcome.residual_var)
    return DeconfounderEstimate(q, float(cond_mean.mean()), var, se, int(n), diagnostics)


def estimate_do(
    substitute: SubstituteModel,
    outcome: OutcomeModel,
    q: InterventionQuery,
    integration: str | tuple = "analytic",
    *,
    u_sng_marginal: GaussianDist | DiscreteDist | None = None,
    factor_check: CheckReport | None = None,
) -> DeconfounderEstimate:
    """Integrate the outcome model over the fitted P(a_-C, z) with a_C clamped.

    ``integration`` is ``"analytic"`` or ``("mc", n, seed)``.
    """
    diag = {"factor_check_pvalue": None if factor_check is None else factor_check.score}
    return _integrate(substitute, outcome, q, integration, u_sng_marginal, diag)


def estimate_do_selected(
    substitute_unbiased: SubstituteModel,
    outcome_selected: OutcomeModel,
    u_sng_marginal: GaussianDist | DiscreteDist | None,
    q: InterventionQuery,
    integration: str | tuple = "analytic",
    *,
    factor_check: CheckReport | None = None,
) -> DeconfounderEstimate:
    """Selection-aware integral.

    The outcome conditional comes from the selected units while the
    integration measure over causes, substitute and U^sng comes from the
    unbiased population. Passing models fitted on the wrong view is an error.
    """
    if substitute_unbiased.view != "full":
        raise WrongViewProvenance("substitute model was fitted on selection-biased rows")
    if not outcome_selected.fitted_on_selected:
        raise WrongViewProvenance("outcome model was not fitted on the selected view")
    diag = {"factor_check_pvalue": None if factor_check is None else factor_check.score}
    return _integrate(substitute_unbiased, outcome_selected, q, integration, u_sng_marginal, diag)


def u_marginal_from(data: Dataset, names: Sequence[str]) -> GaussianDist | DiscreteDist:
    """Empirical marginal of observed U^sng columns over all rows of ``data``."""
    X = data.matrix(names)
    if data.discrete:
        cards = [int(X[:, j].max()) + 1 for j in range(X.shape[1])]
        counts = np.zeros(cards)
        np.add.at(counts, tuple(X.astype(np.intp).T), 1.0)
        return DiscreteDist(counts / len(X), tuple(names))
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    return GaussianDist(X.mean(axis=0), cov, tuple(names))


def dumps(obj: SubstituteModel | OutcomeModel | DeconfounderEstimate) -> str:
    return json.dumps(obj.to_dict())
