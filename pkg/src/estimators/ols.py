"""
OLS estimator of the ATE with incremental row-removal downdates

The ATE is the treatment coefficient of the regression of O on
[1, T, encoded Z]. After a block of rows is removed the state is updated
without touching the remaining rows:

- exact:   Woodbury identity on (A - X_rmv^T X_rmv)^-1, O(m^2 r + r^3)
- neumann: first-order Neumann series A^-1 + A^-1 (Delta A^-1), O(m^2 r + m^3)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, Optional

import numpy as np
from scipy import linalg

from src.data.dataset import Dataset
from src.estimators.design import DesignEncoder, build_encoder, outcome_vector, treatment_vector
from src.state.schemas import CausalQuery
from src.utils.errors import DegenerateGroups, NormTooLarge, RankDeficient, SingularCapacitance

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
CAPACITANCE_MAX_COND = 1e10


@dataclass(frozen=True)
class OlsState:
    """
    Cached sufficient statistics of one OLS fit.

    staleness is "exact" or "neumann"; neumann_steps counts consecutive
    approximate updates since the last exact state.
    """
    design: DesignEncoder
    A: np.ndarray
    A_inv: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    n_treated: int
    n_control: int
    staleness: str = "exact"
    neumann_steps: int = 0

    @property
    def treatment_index(self) -> int:
        assert self.design.treatment_index is not None
        return self.design.treatment_index

    @property
    def ate(self) -> float:
        return float(self.beta[self.treatment_index])

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimator": "ols",
            "design_columns": self.design.names,
            "treatment_index": self.treatment_index,
            "A": self.A.tolist(),
            "A_inv": self.A_inv.tolist(),
            "b": self.b.tolist(),
            "beta": self.beta.tolist(),
            "ate": self.ate,
            "staleness": self.staleness,
            "neumann_steps": self.neumann_steps,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
        }


def _check_groups(n_treated: int, n_control: int) -> None:
    if n_treated == 0 or n_control == 0:
        raise DegenerateGroups(
            "Both treated and control tuples are required",
            {"n_treated": n_treated, "n_control": n_control},
        )


def _symmetric_inverse(A: np.ndarray) -> np.ndarray:
    factor = linalg.cho_factor(A)
    A_inv = linalg.cho_solve(factor, np.eye(A.shape[0]))
    return (A_inv + A_inv.T) / 2.0


def fit_ols(dataset: Dataset, query: CausalQuery, mask: Optional[np.ndarray] = None) -> OlsState:
    """
    Fit OLS on the rows selected by `mask` (default: alive rows)

    Raises:
        DegenerateGroups: all selected rows are treated, or all are control
        RankDeficient: encoded confounders are collinear with [1, T]
    """
    mask = np.asarray(dataset.alive if mask is None else mask, dtype=bool)
    t = treatment_vector(dataset, query)[mask]
    n_treated = int(t.sum())
    _check_groups(n_treated, int(t.size - n_treated))

    design = build_encoder(dataset, query, mask)
    ids = np.flatnonzero(mask)
    X = design.encode(dataset, ids)
    o = outcome_vector(dataset, query)[ids]

    singular = linalg.svdvals(X)
    if singular.size < X.shape[1] or singular.min() < RANK_TOLERANCE * singular.max():
        raise RankDeficient(
            "Design matrix is rank deficient",
            {"columns": design.names, "rows": int(ids.size)},
        )

    A = X.T @ X
    b = X.T @ o
    try:
        A_inv = _symmetric_inverse(A)
    except linalg.LinAlgError as e:
        raise RankDeficient("X^T X is not positive definite", {"columns": design.names}) from e

    return OlsState(
        design=design,
        A=A,
        A_inv=A_inv,
        b=b,
        beta=A_inv @ b,
        n_treated=n_treated,
        n_control=int(t.size - n_treated),
    )


def ate(state: OlsState) -> float:
    """beta[treatment_index]"""
    return state.ate


def _removed_counts(state: OlsState, X_rmv: np.ndarray) -> tuple[int, int]:
    treated = int(round(X_rmv[:, state.treatment_index].sum()))
    n_treated = state.n_treated - treated
    n_control = state.n_control - (X_rmv.shape[0] - treated)
    _check_groups(n_treated, n_control)
    return n_treated, n_control


def downdate_exact(state: OlsState, X_rmv: np.ndarray, o_rmv: np.ndarray) -> OlsState:
    """
    Remove rows X_rmv (with outcomes o_rmv) using the Woodbury identity

        (A - U U^T)^-1 = A^-1 + A^-1 U (I_r - U^T A^-1 U)^-1 U^T A^-1,   U = X_rmv^T

    When r exceeds the design width, A - Delta is inverted directly instead.

    Raises:
        SingularCapacitance: I_r - U^T A^-1 U (or A - Delta) is numerically singular
        DegenerateGroups: the removal empties the treated or control group
    """
    X_rmv = np.atleast_2d(np.asarray(X_rmv, dtype=float))
    o_rmv = np.asarray(o_rmv, dtype=float).ravel()
    r, m = X_rmv.shape
    if r == 0:
        return state
    n_treated, n_control = _removed_counts(state, X_rmv)

    A_new = state.A - X_rmv.T @ X_rmv
    b_new = state.b - X_rmv.T @ o_rmv

    if r <= m:
        left = state.A_inv @ X_rmv.T  # m x r
        capacitance = np.eye(r) - X_rmv @ left
        if not np.all(np.isfinite(capacitance)) or np.linalg.cond(capacitance) > CAPACITANCE_MAX_COND:
            raise SingularCapacitance(
                "Capacitance matrix is singular; the remaining rows lose rank",
                {"rows_removed": r},
            )
        A_inv_new = state.A_inv + left @ np.linalg.solve(capacitance, left.T)
        A_inv_new = (A_inv_new + A_inv_new.T) / 2.0
    else:
        if np.linalg.cond(A_new) > CAPACITANCE_MAX_COND**2:
            raise SingularCapacitance("Remaining X^T X is singular", {"rows_removed": r})
        try:
            A_inv_new = _symmetric_inverse(A_new)
        except linalg.LinAlgError as e:
            raise SingularCapacitance("Remaining X^T X is singular", {"rows_removed": r}) from e

    return replace(
        state,
        A=A_new,
        A_inv=A_inv_new,
        b=b_new,
        beta=A_inv_new @ b_new,
        n_treated=n_treated,
        n_control=n_control,
        staleness="exact",
        neumann_steps=0,
    )


def neumann_norm(state: OlsState, X_rmv: np.ndarray) -> float:
    """Frobenius norm of Delta A^-1, an upper bound on its spectral norm"""
    X_rmv = np.atleast_2d(np.asarray(X_rmv, dtype=float))
    return float(np.linalg.norm((X_rmv.T @ X_rmv) @ state.A_inv, ord="fro"))


def downdate_neumann(
    state: OlsState,
    X_rmv: np.ndarray,
    o_rmv: np.ndarray,
    norm_threshold: float = 0.5,
) -> OlsState:
    """
    Approximate removal with the first two Neumann terms:
    (A - Delta)^-1 ~ A^-1 + A^-1 Delta A^-1

    Raises:
        NormTooLarge: ||Delta A^-1||_F >= norm_threshold
        DegenerateGroups: the removal empties the treated or control group
    """
    X_rmv = np.atleast_2d(np.asarray(X_rmv, dtype=float))
    o_rmv = np.asarray(o_rmv, dtype=float).ravel()
    if X_rmv.shape[0] == 0:
        return state
    n_treated, n_control = _removed_counts(state, X_rmv)

    delta = X_rmv.T @ X_rmv
    product = delta @ state.A_inv
    norm = float(np.linalg.norm(product, ord="fro"))
    if norm >= norm_threshold:
        raise NormTooLarge(
            f"||Delta A^-1||_F = {norm:.3g} exceeds {norm_threshold}",
            {"norm": norm, "threshold": norm_threshold, "rows_removed": int(X_rmv.shape[0])},
        )

    A_inv_new = state.A_inv + state.A_inv @ product
    b_new = state.b - X_rmv.T @ o_rmv
    return replace(
        state,
        A=state.A - delta,
        A_inv=A_inv_new,
        b=b_new,
        beta=A_inv_new @ b_new,
        n_treated=n_treated,
        n_control=n_control,
        staleness="neumann",
        neumann_steps=state.neumann_steps + 1,
    )


__all__ = ["OlsState", "fit_ols", "ate", "downdate_exact", "downdate_neumann", "neumann_norm"]
