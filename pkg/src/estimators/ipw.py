"""
Inverse propensity weighting (Hajek) estimator of the ATE

Propensities come from an l2-regularized logistic model fitted by Newton's
method on the penalized negative log-likelihood

    L(theta) = sum_i [-t_i log p_i - (1 - t_i) log(1 - p_i)] + (lam / 2) ||theta||^2

After rows are removed, `fisher_unlearn` moves theta with one Newton step
per mini-batch on the remaining data instead of refitting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from src.data.dataset import Dataset
from src.estimators.design import DesignEncoder, build_encoder, outcome_vector, treatment_vector
from src.state.schemas import CausalQuery
from src.utils.errors import DegenerateGroups, EmptyGroup, Separation, SingularFisher

logger = logging.getLogger(__name__)

# per row: the gradient is a sum over the fitted rows
GRADIENT_TOLERANCE = 1e-8
MAX_NEWTON_ITERATIONS = 100
FISHER_MAX_COND = 1e12
SEPARATION_MARGIN = 1e-6


@dataclass(frozen=True)
class PropensityModel:
    theta: np.ndarray
    lam: float
    clip: float


@dataclass(frozen=True)
class IpwState:
    """
    Fitted propensity model plus per-row caches.

    `propensities` has one (unclipped) entry per dataset row; entries
    outside `support` are stale. `gradient` is the penalized gradient over
    `support` at theta; the Hessian is computed on first use.
    """
    model: PropensityModel
    design: DesignEncoder
    Z: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    o: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)
    propensities: np.ndarray = field(repr=False)
    gradient: np.ndarray = field(repr=False)

    @cached_property
    def hessian(self) -> np.ndarray:
        return _hessian(self.Z[self.support], self.propensities[self.support], self.model.lam)

    @property
    def theta(self) -> np.ndarray:
        return self.model.theta

    @property
    def ate(self) -> float:
        return _hajek(self.t, self.o, self.propensities, self.support, self.model.clip)

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimator": "ipw",
            "design_columns": self.design.names,
            "theta": self.model.theta.tolist(),
            "lambda": self.model.lam,
            "clip": self.model.clip,
            "ate": self.ate,
            "support": int(self.support.sum()),
        }


# === Logistic model pieces ===

def _loss(Z: np.ndarray, t: np.ndarray, theta: np.ndarray, lam: float) -> float:
    eta = Z @ theta
    # log(1 + e^eta) - t * eta, computed stably
    return float(np.sum(np.logaddexp(0.0, eta) - t * eta) + 0.5 * lam * theta @ theta)


def _gradient(Z: np.ndarray, t: np.ndarray, p: np.ndarray, theta: np.ndarray, lam: float) -> np.ndarray:
    return Z.T @ (p - t) + lam * theta


def _hessian(Z: np.ndarray, p: np.ndarray, lam: float) -> np.ndarray:
    w = p * (1.0 - p)
    return (Z * w[:, None]).T @ Z + lam * np.eye(Z.shape[1])


def _check_groups(t: np.ndarray, where: str) -> None:
    treated = int(t.sum())
    if treated == 0 or treated == t.size:
        raise DegenerateGroups(
            f"Both treated and control tuples are required ({where})",
            {"n_treated": treated, "n_control": int(t.size - treated)},
        )


def _checked(Z: np.ndarray, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Reject a fit whose propensities reproduce every label: the groups do not overlap"""
    p = expit(Z @ theta)
    if np.all(np.abs(p - t) < SEPARATION_MARGIN):
        raise Separation(
            "Treatment is perfectly separated by the confounders",
            {"theta_max": float(np.max(np.abs(theta)))},
        )
    return theta


def _resolution(loss: float) -> float:
    return float(np.finfo(float).eps) * max(1.0, abs(loss))


def _newton(Z: np.ndarray, t: np.ndarray, lam: float, theta0: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Damped Newton iterations until ||grad|| <= GRADIENT_TOLERANCE * n, or
    until the Newton decrement falls below the float resolution of the loss.
    Hitting the iteration cap counts as converged when the last step no
    longer lowered the loss.
    """
    theta = np.zeros(Z.shape[1]) if theta0 is None else theta0.copy()
    tolerance = GRADIENT_TOLERANCE * max(1, Z.shape[0])
    loss = _loss(Z, t, theta, lam)
    improvement = np.inf
    for iteration in range(MAX_NEWTON_ITERATIONS):
        p = expit(Z @ theta)
        grad = _gradient(Z, t, p, theta, lam)
        if np.linalg.norm(grad) <= tolerance:
            return _checked(Z, t, theta)
        try:
            step = linalg.cho_solve(linalg.cho_factor(_hessian(Z, p, lam)), grad)
        except linalg.LinAlgError as e:
            raise Separation(
                "Propensity Hessian became singular; treatment is separable by the confounders",
                {"iteration": iteration},
            ) from e

        if np.max(np.abs(step)) <= 1e-14 * max(1.0, np.max(np.abs(theta))):
            return _checked(Z, t, theta)
        if float(grad @ step) <= _resolution(loss):
            return _checked(Z, t, theta)

        # backtracking line search on the penalized loss
        scale = 1.0
        while scale > 1e-10:
            candidate = theta - scale * step
            candidate_loss = _loss(Z, t, candidate, lam)
            if np.isfinite(candidate_loss) and candidate_loss <= loss:
                break
            scale /= 2.0
        else:
            return _checked(Z, t, theta)
        theta, improvement, loss = candidate, loss - candidate_loss, candidate_loss

    if improvement <= _resolution(loss):
        return _checked(Z, t, theta)
    raise Separation(
        f"Logistic fit did not converge in {MAX_NEWTON_ITERATIONS} iterations",
        {"gradient_norm": float(np.linalg.norm(grad)), "theta_max": float(np.max(np.abs(theta)))},
    )


def fit_logistic(
    dataset: Dataset,
    query: CausalQuery,
    lam: float = 1e-4,
    clip: float = 0.01,
    mask: Optional[np.ndarray] = None,
) -> IpwState:
    """
    Fit the propensity model on the rows selected by `mask` (default: alive)

    Raises:
        DegenerateGroups: no treated or no control rows
        Separation: Newton's method diverged or did not converge
    """
    support = np.array(dataset.alive if mask is None else mask, dtype=bool)
    t = treatment_vector(dataset, query)
    _check_groups(t[support], "propensity fit")

    design = build_encoder(dataset, query, support, include_treatment=False)
    Z = design.encode(dataset)
    theta = _newton(Z[support], t[support], lam)

    p = expit(Z @ theta)
    return IpwState(
        model=PropensityModel(theta=theta, lam=lam, clip=clip),
        design=design,
        Z=Z,
        t=t,
        o=outcome_vector(dataset, query),
        support=support,
        propensities=p,
        gradient=_gradient(Z[support], t[support], p[support], theta, lam),
    )


# === Estimate ===

def _hajek(t: np.ndarray, o: np.ndarray, p: np.ndarray, mask: np.ndarray, clip: float) -> float:
    t, o = t[mask], o[mask]
    p = np.clip(p[mask], clip, 1.0 - clip)
    treated_weights = t / p
    control_weights = (1.0 - t) / (1.0 - p)
    treated_total = treated_weights.sum()
    control_total = control_weights.sum()
    if treated_total <= 0 or control_total <= 0:
        raise EmptyGroup(
            "A Hajek denominator is zero",
            {"treated_weight": float(treated_total), "control_weight": float(control_total)},
        )
    return float(treated_weights @ o / treated_total - control_weights @ o / control_total)


def ate_ipw(state: IpwState, dataset: Dataset, query: CausalQuery, mask: Optional[np.ndarray] = None) -> float:
    """
    Self-normalized (Hajek) IPW estimate over the rows of `mask`
    (default: the dataset's alive rows), with clipped propensities

    Raises:
        EmptyGroup: no treated or no control rows among the selected rows
    """
    mask = np.asarray(dataset.alive if mask is None else mask, dtype=bool)
    return _hajek(state.t, state.o, state.propensities, mask, state.model.clip)


# === Unlearning ===

def _inverse_fourth_root(F: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = np.linalg.eigh(F)
    return (eigenvectors * eigenvalues ** -0.25) @ eigenvectors.T


def _fisher_solve(F: np.ndarray, grad: np.ndarray, batch: int) -> np.ndarray:
    condition = np.linalg.cond(F)
    if not np.isfinite(condition) or condition > FISHER_MAX_COND:
        raise SingularFisher(
            f"Fisher matrix is ill-conditioned (cond={condition:.3g})",
            {"batch": batch, "condition": float(condition)},
        )
    return linalg.cho_solve(linalg.cho_factor(F), grad)


def fisher_unlearn(
    state: IpwState,
    removed: np.ndarray,
    batch_size: int = 512,
    sigma: float = 0.0,
    seed: int = 0,
) -> IpwState:
    """
    One Newton step per mini-batch of removed rows

    For each batch (sorted ids, `batch_size` at a time) the gradient and
    Fisher matrix of the penalized loss are taken on the rows still
    remaining once that batch is excluded, and theta <- theta - F^-1 grad.
    With sigma > 0, sigma * F^(-1/4) b (b standard normal, seeded) is added.

    The returned state's support excludes `removed`; the caller owns the
    dataset mask.

    Raises:
        DegenerateGroups: the remaining rows lack treated or control tuples
        SingularFisher: the Fisher matrix is ill-conditioned
    """
    removed = np.unique(np.asarray(removed, dtype=np.int64))
    if removed.size == 0:
        return state
    if not state.support[removed].all():
        raise DegenerateGroups("Removed rows must be in the model support", {"ids": removed.tolist()[:10]})

    support = state.support.copy()
    support[removed] = False
    _check_groups(state.t[support], "after unlearning")

    lam = state.model.lam
    theta = state.model.theta
    rng = np.random.default_rng(seed)
    remaining = state.support.copy()

    for index, start in enumerate(range(0, removed.size, batch_size)):
        batch = removed[start:start + batch_size]
        remaining[batch] = False
        if index == 0:
            # remaining = cached full statistics minus the batch, at the same theta
            Zb, pb = state.Z[batch], state.propensities[batch]
            grad = state.gradient - Zb.T @ (pb - state.t[batch])
            F = state.hessian - _hessian(Zb, pb, 0.0)
        else:
            Zr = state.Z[remaining]
            p = expit(Zr @ theta)
            grad = _gradient(Zr, state.t[remaining], p, theta, lam)
            F = _hessian(Zr, p, lam)

        theta = theta - _fisher_solve(F, grad, index)
        if sigma > 0:
            theta = theta + sigma * _inverse_fourth_root(F) @ rng.standard_normal(theta.size)

    p = expit(state.Z @ theta)
    return replace(
        state,
        model=replace(state.model, theta=theta),
        support=support,
        propensities=p,
        gradient=_gradient(state.Z[support], state.t[support], p[support], theta, lam),
    )


__all__ = ["PropensityModel", "IpwState", "fit_logistic", "ate_ipw", "fisher_unlearn"]
