"""
AteEngine: one estimator bound to one dataset and query

Search code talks to the engine only:

- `ate`             current estimate on the alive rows
- `probe(ids)`      estimate after pretend-deleting ids (no mask or state change)
- `commit(ids)`     delete ids from the dataset and update the cached state
- `refit()`         rebuild the state from scratch on the alive rows
- `refit_ate(mask)` full refit on an arbitrary mask (validation path)

Update modes map to estimator paths:

    mode     OLS                 IPW
    exact    Woodbury downdate   Fisher one-step
    neumann  Neumann K=1         Fisher one-step
    refit    full refit          full refit

Fallbacks: Neumann guard failure -> exact; singular capacitance or
Fisher matrix -> refit; rank deficiency on a later refit -> RankLost.
"""

from __future__ import annotations

import logging
from typing import Any, Optional, Union

import numpy as np

from src.data.dataset import Dataset
from src.estimators.design import outcome_vector, treatment_vector
from src.estimators.ipw import IpwState, ate_ipw, fisher_unlearn, fit_logistic
from src.estimators.ols import OlsState, downdate_exact, downdate_neumann, fit_ols
from src.state.schemas import CausalQuery
from src.utils.config import EstimatorConfig
from src.utils.errors import (
    AlreadyDeleted,
    DegenerateGroups,
    NormTooLarge,
    RankDeficient,
    RankLost,
    SingularCapacitance,
    SingularFisher,
)

logger = logging.getLogger(__name__)

EstimatorState = Union[OlsState, IpwState]


class AteEngine:
    """
    Estimator session over a shared dataset (single writer).

    Args:
        dataset: the dataset whose alive mask this engine mutates on commit
        query: causal query; validated against the dataset schema
        config: estimator kind, update mode and numerical knobs

    Raises:
        QueryError / UnknownAttribute: query does not fit the schema
        DegenerateGroups, RankDeficient, Separation: initial fit fails
    """

    def __init__(self, dataset: Dataset, query: CausalQuery, config: Optional[EstimatorConfig] = None):
        query.validate_against(dataset.schema)
        self.dataset = dataset
        self.query = query
        self.config = config or EstimatorConfig()
        self._t = treatment_vector(dataset, query)
        self._o = outcome_vector(dataset, query)
        self._n_treated = int(self._t[dataset.alive].sum())
        self._n_control = dataset.alive_count - self._n_treated
        self._unlearn_calls = 0
        self.state: EstimatorState = self._fit_raw(dataset.alive)

    # --- properties ---

    @property
    def ate(self) -> float:
        return self._estimate(self.state, self.dataset.alive)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def update(self) -> str:
        return self.config.update

    # --- fitting ---

    def _fit_raw(self, mask: np.ndarray) -> EstimatorState:
        if self.config.kind == "ols":
            return fit_ols(self.dataset, self.query, mask)
        return fit_logistic(self.dataset, self.query, lam=self.config.lam, clip=self.config.clip, mask=mask)

    def _fit(self, mask: np.ndarray) -> EstimatorState:
        try:
            return self._fit_raw(mask)
        except RankDeficient as e:
            raise RankLost(f"Remaining tuples lose full rank: {e.message}", e.details) from e

    def _estimate(self, state: EstimatorState, mask: np.ndarray) -> float:
        if isinstance(state, OlsState):
            return state.ate
        return ate_ipw(state, self.dataset, self.query, mask)

    def refit(self) -> float:
        """Exact state from scratch on the alive rows"""
        self.state = self._fit(self.dataset.alive)
        return self.ate

    def refit_ate(self, mask: Optional[np.ndarray] = None) -> float:
        """Full refit on `mask` (default: alive rows); the engine state is untouched"""
        mask = np.asarray(self.dataset.alive if mask is None else mask, dtype=bool)
        return self._estimate(self._fit(mask), mask)

    # --- updates ---

    def _validate_removal(self, ids: np.ndarray) -> tuple[int, int]:
        for tuple_id in ids:
            if not self.dataset.is_alive(int(tuple_id)):
                raise AlreadyDeleted(int(tuple_id))
        removed_treated = int(self._t[ids].sum())
        n_treated = self._n_treated - removed_treated
        n_control = self._n_control - (int(ids.size) - removed_treated)
        if n_treated <= 0 or n_control <= 0:
            raise DegenerateGroups(
                "Removal would empty the treated or control group",
                {"n_treated": n_treated, "n_control": n_control, "removed": int(ids.size)},
            )
        return n_treated, n_control

    def _updated(self, ids: np.ndarray, mask: np.ndarray, refit: bool) -> EstimatorState:
        """State after removing ids; `mask` is the alive mask minus ids"""
        if refit or self.config.update == "refit":
            return self._fit(mask)

        state = self.state
        if isinstance(state, OlsState):
            X_rmv = state.design.encode(self.dataset, ids)
            o_rmv = self._o[ids]
            try:
                if self.config.update == "neumann":
                    try:
                        return downdate_neumann(state, X_rmv, o_rmv, self.config.norm_threshold)
                    except NormTooLarge as e:
                        logger.debug(f"Neumann guard fired (norm {e.details['norm']:.3g}); exact downdate")
                return downdate_exact(state, X_rmv, o_rmv)
            except SingularCapacitance:
                logger.debug(f"Singular capacitance removing {ids.size} rows; refitting")
                return self._fit(mask)

        self._unlearn_calls += 1
        try:
            return fisher_unlearn(
                state,
                ids,
                batch_size=self.config.batch_size,
                sigma=self.config.sigma,
                seed=self.config.seed + self._unlearn_calls,
            )
        except SingularFisher:
            logger.debug(f"Singular Fisher matrix removing {ids.size} rows; refitting")
            return self._fit(mask)

    def probe(self, ids: Any, refit: bool = False) -> float:
        """
        ATE after pretend-deleting ids. The dataset mask and the engine
        state are left exactly as they were.

        Raises:
            AlreadyDeleted: an id is not alive
            DegenerateGroups: the removal empties a group
            RankLost: the remaining rows are rank deficient
        """
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        if ids.size == 0:
            return self.ate
        self._validate_removal(ids)
        mask = self.dataset.mask_without(ids)
        return self._estimate(self._updated(ids, mask, refit), mask)

    def commit(self, ids: Any, refit: bool = False) -> float:
        """Delete ids from the dataset and move the cached state along"""
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        if ids.size == 0:
            return self.ate
        n_treated, n_control = self._validate_removal(ids)
        mask = self.dataset.mask_without(ids)
        state = self._updated(ids, mask, refit)
        self.dataset.delete(ids)
        self.state = state
        self._n_treated, self._n_control = n_treated, n_control
        if isinstance(state, OlsState) and state.neumann_steps >= self.config.max_neumann_steps:
            logger.debug(f"{state.neumann_steps} consecutive Neumann steps; refitting")
            return self.refit()
        return self.ate

    def state_dict(self) -> dict[str, Any]:
        payload = self.state.to_dict()
        payload["update"] = self.config.update
        return payload


__all__ = ["AteEngine", "EstimatorState"]
