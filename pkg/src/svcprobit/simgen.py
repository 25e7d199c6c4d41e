"""Synthetic lesion cohorts on a 2-D image split into four quadrants.

Each quadrant receives a Poisson number of square lesions with side drawn
uniformly from ``sizes`` and centre uniform over the quadrant's pixels;
overlapping squares merge. Females get ``gender_effect`` extra expected
lesions in both right quadrants, group 1 gets ``group_effect`` extra in both
bottom quadrants.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset, Profile
from .errors import ConfigError
from .lattice import build_lattice
from .model import SubjectRecord, build_design
from .rng import philox_generator

KIND_SIM = 11
KIND_ORACLE = 12

QUADRANTS = ("UL", "UR", "LR", "LL")  # clockwise from upper left
CELLS = (("male", 1), ("female", 1), ("male", 2), ("female", 2))


@dataclass(frozen=True)
class SimDesign:
    side: int = 100
    quadrant: int = 50
    lambda_left: float = 10.0
    lambda_right: float = 8.0
    gender_effect: float = 4.0
    group_effect: float = 4.0
    sizes: tuple = (1, 3, 5)
    margin: int = 2

    def __post_init__(self):
        if self.side != 2 * self.quadrant:
            raise ConfigError("image side must be twice the quadrant side")
        if min(self.lambda_left, self.lambda_right) < 0 or \
                min(self.lambda_left + self.group_effect, self.lambda_right + self.gender_effect,
                    self.lambda_right + self.gender_effect + self.group_effect) < 0:
            raise ConfigError("lesion intensities must be non-negative")
        if not self.sizes or any(s < 1 or s % 2 == 0 for s in self.sizes):
            raise ConfigError("lesion sizes must be odd positive integers")
        if 2 * self.margin >= self.quadrant:
            raise ConfigError("margin too large for the quadrant")

    def intensities(self, gender: str, group: int) -> dict[str, float]:
        female = gender == "female"
        g1 = group == 1
        return {
            "UL": self.lambda_left,
            "UR": self.lambda_right + (self.gender_effect if female else 0.0),
            "LR": self.lambda_right + (self.gender_effect if female else 0.0)
            + (self.group_effect if g1 else 0.0),
            "LL": self.lambda_left + (self.group_effect if g1 else 0.0),
        }

    @property
    def mean_area(self) -> float:
        return float(np.mean(np.square(self.sizes)))

    def coverage(self, lam: float) -> float:
        """Lesion probability of a quadrant-interior pixel under intensity ``lam``."""
        return float(1.0 - np.exp(-lam * self.mean_area / self.quadrant**2))

    def quadrant_slices(self, name: str, margin: int = 0):
        q, m = self.quadrant, margin
        rows = slice(m, q - m) if name in ("UL", "UR") else slice(q + m, 2 * q - m)
        cols = slice(m, q - m) if name in ("UL", "LL") else slice(q + m, 2 * q - m)
        return rows, cols

    def interior_mask(self, name: str | None = None) -> np.ndarray:
        """(side, side) mask of quadrant interiors (all four if ``name`` is None)."""
        out = np.zeros((self.side, self.side), dtype=bool)
        for qn in (QUADRANTS if name is None else (name,)):
            out[self.quadrant_slices(qn, self.margin)] = True
        return out


def cell_name(gender: str, group: int) -> str:
    return f"group{group}_{gender}"


def _lesions(design: SimDesign, gender: str, group: int, gen: np.random.Generator):
    """Lesion centres (row, col) and half-widths for one subject."""
    lam = design.intensities(gender, group)
    rows, cols, half = [], [], []
    q = design.quadrant
    for name in QUADRANTS:
        n = gen.poisson(lam[name])
        r0 = 0 if name in ("UL", "UR") else q
        c0 = 0 if name in ("UL", "LL") else q
        size = gen.choice(np.asarray(design.sizes), size=n)
        rows.append(r0 + gen.integers(0, q, size=n))
        cols.append(c0 + gen.integers(0, q, size=n))
        half.append((size - 1) // 2)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(half)


def _stamp(design: SimDesign, lesions, n_subjects: int) -> np.ndarray:
    """Union of square stamps; lesions = (subject, row, col, half) arrays."""
    subj, r, c, h = lesions
    side = design.side
    img = np.zeros((n_subjects, side * side), dtype=bool)
    hmax = max(design.sizes) // 2
    for dr in range(-hmax, hmax + 1):
        for dc in range(-hmax, hmax + 1):
            ok = (np.abs(dr) <= h) & (np.abs(dc) <= h)
            rr, cc = r + dr, c + dc
            ok &= (rr >= 0) & (rr < side) & (cc >= 0) & (cc < side)
            img[subj[ok], rr[ok] * side + cc[ok]] = True
    return img.reshape(n_subjects, side, side)


def stamp_lesions(design: SimDesign, rows, cols, sides) -> np.ndarray:
    """Image holding the union of squares of odd side ``sides`` centred at (rows, cols)."""
    rows, cols = np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)
    half = (np.asarray(sides, dtype=np.int64) - 1) // 2
    return _stamp(design, (np.zeros(rows.size, dtype=np.int64), rows, cols, half), 1)[0]


def generate_subject(design: SimDesign, gender: str, group: int, gen: np.random.Generator) -> np.ndarray:
    """One (side, side) boolean lesion image."""
    r, c, h = _lesions(design, gender, group, gen)
    return _stamp(design, (np.zeros(r.size, dtype=np.int64), r, c, h), 1)[0]


def _subject_images(design, cells, seed, kind, first_index=0):
    parts = []
    for i, (gender, group) in enumerate(cells):
        gen = philox_generator(seed, kind, first_index + i)
        r, c, h = _lesions(design, gender, group, gen)
        parts.append((np.full(r.size, i, dtype=np.int64), r, c, h))
    lesions = tuple(np.concatenate(x) for x in zip(*parts)) if parts else \
        tuple(np.zeros(0, dtype=np.int64) for _ in range(4))
    return _stamp(design, lesions, len(cells))


@dataclass
class SimCohort:
    dataset: Dataset
    images: np.ndarray  # (N, side, side)
    genders: list[str]
    groups: list[int]
    design: SimDesign

    def covariate_table(self) -> list[dict]:
        return [{"id": sid, "subtype": grp, "gender": 1 if g == "male" else 0}
                for sid, g, grp in zip(self.dataset.ids, self.genders, self.groups)]


def generate_cohort(design: SimDesign, n_per_cell: int, seed: int) -> SimCohort:
    """Balanced cohort over gender x group. Subject i draws from its own keyed stream."""
    if n_per_cell < 1:
        raise ConfigError("need at least one subject per cell")
    cells = [cell for cell in CELLS for _ in range(n_per_cell)]
    images = _subject_images(design, cells, seed, KIND_SIM)
    lattice = build_lattice(np.ones((design.side, design.side), dtype=bool))
    ids = [f"s{i:05d}" for i in range(len(cells))]
    records = [SubjectRecord(id=sid, subtype=grp, covariates={"gender": 1.0 if g == "male" else 0.0})
               for sid, (g, grp) in zip(ids, cells)]
    design_matrix = build_design(records, n_subtypes=2, covariate_names=["gender"], center=[],
                                 subtype_labels=["group1", "group2"])
    outcomes = images.reshape(len(cells), -1)  # row-major (y, x) == site order
    dataset = Dataset(lattice, design_matrix, outcomes, None, ids, cell_profiles(design_matrix))
    return SimCohort(dataset, images, [g for g, _ in cells], [grp for _, grp in cells], design)


def cell_profiles(design_matrix) -> list[Profile]:
    return [Profile(cell_name(g, grp),
                    design_matrix.profile(grp - 1, {"gender": 1.0 if g == "male" else 0.0}))
            for g, grp in CELLS]


def empirical_rate_maps(design: SimDesign, n_per_cell: int, seed: int, chunk: int = 2000) -> dict:
    """Per-cell per-pixel lesion rates from ``n_per_cell`` fresh subjects."""
    maps = {}
    for ci, (gender, group) in enumerate(CELLS):
        total = np.zeros((design.side, design.side))
        for start in range(0, n_per_cell, chunk):
            n = min(chunk, n_per_cell - start)
            imgs = _subject_images(design, [(gender, group)] * n, seed, KIND_ORACLE,
                                   first_index=ci * n_per_cell + start)
            total += imgs.sum(axis=0)
        maps[cell_name(gender, group)] = total / n_per_cell
    return maps


def true_rates(design: SimDesign, n_per_cell: int = 10_000, seed: int = 0) -> dict:
    """Quadrant-interior averages of the empirical rate maps: cell -> quadrant -> rate."""
    maps = empirical_rate_maps(design, n_per_cell, seed)
    return {cell: {q: float(m[design.quadrant_slices(q, design.margin)].mean()) for q in QUADRANTS}
            for cell, m in maps.items()}


def analytic_rates(design: SimDesign) -> dict:
    return {cell_name(g, grp): {q: design.coverage(lam) for q, lam in design.intensities(g, grp).items()}
            for g, grp in CELLS}


def truth_maps(design: SimDesign, rates: dict) -> dict[str, np.ndarray]:
    """Per-cell images holding each quadrant's rate on its interior, NaN elsewhere."""
    out = {}
    for cell, qr in rates.items():
        img = np.full((design.side, design.side), np.nan)
        for q, v in qr.items():
            img[design.quadrant_slices(q, design.margin)] = v
        out[cell] = img
    return out


def interior_mse(design: SimDesign, estimates: dict[str, np.ndarray], rates: dict) -> float:
    """MSE of per-cell probability images against the quadrant truth, over interior pixels."""
    truth = truth_maps(design, rates)
    errs = []
    for cell, t in truth.items():
        est = np.asarray(estimates[cell]).reshape(design.side, design.side)
        keep = ~np.isnan(t)
        errs.append((est[keep] - t[keep]) ** 2)
    return float(np.mean(np.concatenate(errs)))


def design_to_json(design: SimDesign) -> str:
    d = asdict(design)
    d["sizes"] = list(design.sizes)
    return json.dumps(d)


def design_from_json(text: str) -> SimDesign:
    d = json.loads(text)
    d["sizes"] = tuple(d["sizes"])
    return SimDesign(**d)
