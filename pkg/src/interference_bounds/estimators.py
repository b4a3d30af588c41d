"""Hajek-normalized estimators of the count of units meeting the exposure condition.

For ``k = 1`` the estimator-specific outcome is ``Y``, for ``k = 2`` it is
``1 - Y``. Under a hypothesis ``phi`` the Hajek estimate is linear,
``v_k @ phi``, with nonnegative weights

    v_i = N / N_hat[y] * 1{zbar_i = y} / P(zbar_i = y | T_i),   y = Y_ki.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design_core import ExposureModel
from .errors import ConfigError, DegenerateArmError, PositivityError
from .exposure import ExposureRealization


@dataclass(frozen=True)
class ObservedData:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X)
        Y = np.asarray(self.Y)
        if X.ndim != 1 or Y.ndim != 1 or len(X) != len(Y):
            raise ConfigError("X and Y must be vectors of equal length")
        for name, arr in (("X", X), ("Y", Y)):
            if not np.isin(arr, (0, 1)).all():
                raise ConfigError(f"{name} entries must be 0 or 1")
        object.__setattr__(self, "X", X.astype(np.int8))
        object.__setattr__(self, "Y", Y.astype(np.int8))

    @property
    def n(self) -> int:
        return len(self.X)

    def outcome(self, k: int) -> np.ndarray:
        """Y for k = 1, 1 - Y for k = 2."""
        if k == 1:
            return self.Y
        if k == 2:
            return (1 - self.Y).astype(np.int8)
        raise ConfigError(f"k must be 1 or 2, got {k}")


@dataclass(frozen=True)
class HajekComponents:
    n_hat: tuple  # (N_hat_0, N_hat_1)
    v: dict  # k -> weight vector
    propensity: np.ndarray  # (N, 2) P(zbar_i = a | T_i) at the realized T


def _realized_propensity(propensity: np.ndarray, zbar: np.ndarray, a: int) -> np.ndarray:
    mask = zbar == a
    q = propensity[mask, a]
    if (q <= 0).any():
        i = int(np.flatnonzero(mask)[np.argmax(q <= 0)])
        raise PositivityError(f"unit {i} realized group {a} but its propensity is zero")
    return q


def hajek_normalizers(data: ObservedData, exp: ExposureRealization, model: ExposureModel, propensity=None) -> tuple:
    """(N_hat_0, N_hat_1): inverse-propensity totals of each realized group."""
    if propensity is None:
        propensity = model.propensities(exp)
    out = []
    for a in (0, 1):
        q = _realized_propensity(propensity, exp.zbar, a)
        total = math.fsum(1.0 / q)
        if total <= 0:
            raise DegenerateArmError(f"no unit realized group {a}; the Hajek normalizer N_hat_{a} is zero")
        out.append(total)
    return tuple(out)


def phi_hat_vector(k: int, data: ObservedData, exp: ExposureRealization, model: ExposureModel, propensity=None, n_hat=None) -> np.ndarray:
    """Weights ``v`` with Hajek estimate ``v @ phi`` for any hypothesis ``phi``."""
    if propensity is None:
        propensity = model.propensities(exp)
    if n_hat is None:
        n_hat = hajek_normalizers(data, exp, model, propensity)
    y = data.outcome(k)
    n = data.n
    v = np.zeros(n)
    for a in (0, 1):
        mask = (exp.zbar == a) & (y == a)
        q = propensity[mask, a]
        if (q <= 0).any():
            raise PositivityError(f"a realized unit in group {a} has zero propensity")
        v[mask] = (n / n_hat[a]) / q
    return v


def hajek_components(data: ObservedData, exp: ExposureRealization, model: ExposureModel) -> HajekComponents:
    propensity = model.propensities(exp)
    n_hat = hajek_normalizers(data, exp, model, propensity)
    v = {k: phi_hat_vector(k, data, exp, model, propensity, n_hat) for k in (1, 2)}
    return HajekComponents(n_hat=n_hat, v=v, propensity=propensity)


def tau_contrast(data: ObservedData, exp: ExposureRealization, model: ExposureModel, propensity=None) -> tuple:
    """Hajek-weighted contrast of outcomes between groups 1 and 0.

    Returns ``(delta, abs(delta))``; the absolute value is the point estimate.
    """
    if propensity is None:
        propensity = model.propensities(exp)
    n_hat = hajek_normalizers(data, exp, model, propensity)
    n = data.n
    sides = []
    for a in (0, 1):
        mask = (exp.zbar == a) & (data.Y == 1)
        sides.append(n / n_hat[a] * math.fsum(1.0 / propensity[mask, a]))
    delta = sides[1] - sides[0]
    return delta, abs(delta)


def ht_phi_hat(k: int, phi: np.ndarray, data: ObservedData, exp: ExposureRealization, model: ExposureModel, propensity=None) -> float:
    """Unnormalized inverse-propensity estimate under hypothesis ``phi`` (test use)."""
    if propensity is None:
        propensity = model.propensities(exp)
    y = data.outcome(k)
    terms = []
    for a in (0, 1):
        mask = (exp.zbar == a) & (y == a) & (np.asarray(phi) == 1)
        terms.extend(1.0 / propensity[mask, a])
    return math.fsum(terms)
