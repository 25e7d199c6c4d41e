"""Covariate design and the deterministic probit model algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DataError


@dataclass
class SubjectRecord:
    id: str
    subtype: int  # 1-based
    covariates: dict[str, float]
    outcome: np.ndarray | None = None  # bool, length M in site order


@dataclass
class DesignMatrix:
    """N x P design: K one-hot subtype intercept columns, then covariates.

    ``offsets[c]`` is the mean subtracted from covariate column ``c``
    (0 for uncentered columns), so ``raw = X[:, K + c] + offsets[c]``.
    """

    X: np.ndarray
    n_subtypes: int
    covariate_names: list[str]
    offsets: np.ndarray
    centered: list[bool]
    subtype_labels: list[str] = field(default_factory=list)

    @property
    def n_coefficients(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> list[str]:
        labels = self.subtype_labels or [f"subtype{k + 1}" for k in range(self.n_subtypes)]
        return list(labels) + list(self.covariate_names)

    @property
    def subtypes(self) -> np.ndarray:
        """0-based subtype index per row."""
        return np.argmax(self.X[:, :self.n_subtypes], axis=1)

    def with_subtype(self, row: np.ndarray, k: int) -> np.ndarray:
        """Copy of design row(s) with the subtype block replaced by one-hot ``k`` (0-based)."""
        out = np.array(row, dtype=np.float64, copy=True)
        out[..., :self.n_subtypes] = 0.0
        out[..., k] = 1.0
        return out

    def profile(self, k: int, covariates: dict[str, float] | None = None) -> np.ndarray:
        """Design row for subtype ``k`` (0-based) at raw covariate values.

        Unspecified covariates sit at their reference value: the column mean for
        centered columns and 0 for uncentered ones, i.e. 0 on the design scale.
        """
        x = np.zeros(self.n_coefficients)
        x[k] = 1.0
        for name, value in (covariates or {}).items():
            try:
                c = self.covariate_names.index(name)
            except ValueError:
                raise DataError(f"unknown covariate {name!r}") from None
            x[self.n_subtypes + c] = float(value) - self.offsets[c]
        return x


def _is_binary(column: np.ndarray) -> bool:
    return bool(np.all((column == 0) | (column == 1)))


def build_design(
    records: Sequence[SubjectRecord],
    n_subtypes: int | None = None,
    covariate_names: Sequence[str] | None = None,
    center: Sequence[str] | None = None,
    subtype_labels: Sequence[str] | None = None,
) -> DesignMatrix:
    """Assemble the design matrix from subject records.

    ``center`` lists the covariates to mean-center. By default every
    non-binary covariate is centered and 0/1 columns are left alone.
    """
    if not records:
        raise DataError("no subjects")
    if covariate_names is None:
        covariate_names = list(records[0].covariates)
    covariate_names = list(covariate_names)
    K = n_subtypes if n_subtypes is not None else max(r.subtype for r in records)
    N, C = len(records), len(covariate_names)

    X = np.zeros((N, K + C))
    for i, r in enumerate(records):
        if not 1 <= r.subtype <= K:
            raise DataError(f"subject {r.id}: subtype {r.subtype} outside 1..{K}")
        X[i, r.subtype - 1] = 1.0
        for c, name in enumerate(covariate_names):
            try:
                v = float(r.covariates[name])
            except KeyError:
                raise DataError(f"subject {r.id}: missing covariate {name!r}") from None
            except (TypeError, ValueError):
                raise DataError(f"subject {r.id}: covariate {name!r} is not numeric") from None
            if not math.isfinite(v):
                raise DataError(f"subject {r.id}: covariate {name!r} is not finite ({v})")
            X[i, K + c] = v

    if center is None:
        flags = [not _is_binary(X[:, K + c]) for c in range(C)]
    else:
        unknown = set(center) - set(covariate_names)
        if unknown:
            raise DataError(f"cannot center unknown covariates {sorted(unknown)}")
        flags = [name in center for name in covariate_names]
    offsets = np.zeros(C)
    for c in range(C):
        if flags[c]:
            offsets[c] = X[:, K + c].mean()
            X[:, K + c] -= offsets[c]

    return DesignMatrix(
        X=X,
        n_subtypes=K,
        covariate_names=covariate_names,
        offsets=offsets,
        centered=flags,
        subtype_labels=list(subtype_labels) if subtype_labels else [],
    )


def linear_predictor(x, beta_star, w=0.0, gamma=0.0):
    """eta = x . beta_star + w * gamma (broadcasts over leading axes)."""
    return np.sum(np.asarray(x) * np.asarray(beta_star), axis=-1) + np.asarray(w) * gamma


def lesion_probability(eta):
    """Standard normal CDF."""
    return special.ndtr(eta)


def norm_ppf(p):
    """Standard normal quantile."""
    return special.ndtri(p)


def log_norm_cdf(eta):
    return special.log_ndtr(eta)
