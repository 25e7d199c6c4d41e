"""In-memory cohort: lattice, design, binary outcome maps, spatial covariate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .lattice import Lattice
from .model import DesignMatrix


@dataclass
class Profile:
    """A named covariate setting at which probability maps are reported."""

    name: str
    x: np.ndarray  # design-scale row, length P


@dataclass
class Dataset:
    lattice: Lattice
    design: DesignMatrix
    outcomes: np.ndarray  # (N, M) bool, site order
    spatial: np.ndarray | None = None  # (M,) spatially varying covariate, None means w == 0
    ids: list[str] = field(default_factory=list)
    profiles: list[Profile] = field(default_factory=list)

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=bool)
        N, M = self.outcomes.shape
        if M != self.lattice.n_sites:
            raise DataError(f"outcomes have {M} sites, lattice has {self.lattice.n_sites}")
        if self.design.X.shape[0] != N:
            raise DataError(f"design has {self.design.X.shape[0]} rows, outcomes have {N} subjects")
        if self.spatial is not None:
            self.spatial = np.asarray(self.spatial, dtype=np.float64)
            if self.spatial.shape != (M,):
                raise DataError(f"spatial covariate has shape {self.spatial.shape}, expected ({M},)")
            if not np.all(np.isfinite(self.spatial)):
                raise DataError("spatial covariate has non-finite values")
        if not self.ids:
            self.ids = [str(i) for i in range(N)]
        if len(set(self.ids)) != len(self.ids):
            raise DataError("subject ids are not unique")
        if not self.profiles:
            self.profiles = default_profiles(self.design)

    @property
    def n_subjects(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_sites(self) -> int:
        return self.outcomes.shape[1]

    @property
    def w(self) -> np.ndarray:
        if self.spatial is None:
            return np.zeros(self.n_sites)
        return self.spatial

    @property
    def subtypes(self) -> np.ndarray:
        return self.design.subtypes

    def subset(self, keep) -> "Dataset":
        """Dataset restricted to the subjects selected by ``keep`` (mask or indices).

        The design rows are copied as-is; centering offsets are not recomputed.
        """
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        design = DesignMatrix(
            X=self.design.X[keep],
            n_subtypes=self.design.n_subtypes,
            covariate_names=self.design.covariate_names,
            offsets=self.design.offsets,
            centered=self.design.centered,
            subtype_labels=self.design.subtype_labels,
        )
        return Dataset(self.lattice, design, self.outcomes[keep], self.spatial,
                       [self.ids[i] for i in keep], self.profiles)


def default_profiles(design: DesignMatrix) -> list[Profile]:
    """One profile per subtype with every covariate at its reference value."""
    names = design.names[:design.n_subtypes]
    return [Profile(names[k], design.profile(k)) for k in range(design.n_subtypes)]
