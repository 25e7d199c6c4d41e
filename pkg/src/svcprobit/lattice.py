"""Masked regular lattices: site ordering, face neighbours, two-colouring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError


@dataclass(frozen=True, eq=False)
class Lattice:
    """Immutable spatial index over the in-mask cells of a (nx, ny, nz) grid.

    Sites are numbered in lexicographic order with x varying fastest, then y,
    then z. A 2-D image is a grid with nz == 1. Neighbours share a face
    (an edge in 2-D). Neighbour lists are stored in CSR form: the neighbours
    of site ``j`` are ``indices[indptr[j]:indptr[j + 1]]``.
    """

    dims: tuple[int, int, int]
    mask: np.ndarray  # bool, shape (nz, ny, nx)
    coords: np.ndarray  # (M, 3) int64 columns x, y, z
    indptr: np.ndarray
    indices: np.ndarray
    color: np.ndarray  # uint8 parity of x + y + z
    components: int
    site_of_cell: np.ndarray = field(repr=False)  # (nz, ny, nx) int64, -1 outside mask

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def is_2d(self) -> bool:
        return self.dims[2] == 1

    def neighbors(self, j: int) -> np.ndarray:
        return self.indices[self.indptr[j]:self.indptr[j + 1]]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Each unordered neighbour pair once, as (src, dst) with src < dst."""
        src = np.repeat(np.arange(self.n_sites), self.degree)
        keep = src < self.indices
        return src[keep], self.indices[keep]

    def rasterize(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter a per-site vector back onto the (nz, ny, nx) grid."""
        values = np.asarray(values)
        out = np.full(self.mask.shape, fill, dtype=values.dtype)
        out[self.mask] = values
        return out

    def gather(self, raster: np.ndarray) -> np.ndarray:
        """Per-site values of a (nz, ny, nx) raster, in site order."""
        raster = np.asarray(raster)
        if raster.shape != self.mask.shape:
            raise DataError(f"raster shape {raster.shape} does not match lattice {self.mask.shape}")
        return raster[self.mask]


def _as_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, None, :]
    elif mask.ndim == 2:
        mask = mask[None, :, :]
    elif mask.ndim != 3:
        raise DataError(f"mask must be 1-, 2- or 3-dimensional, got {mask.ndim}")
    if min(mask.shape) < 1:
        raise DataError("mask dimensions must be positive")
    return mask


def build_lattice(mask) -> Lattice:
    """Build a :class:`Lattice` from a boolean raster.

    ``mask`` is indexed ``[z, y, x]`` (or ``[y, x]`` for 2-D, ``[x]`` for 1-D).
    """
    mask = _as_mask(mask)
    nz, ny, nx = mask.shape
    M = int(mask.sum())
    if M == 0:
        raise DataError("no in-mask sites")

    site_of_cell = np.full(mask.shape, -1, dtype=np.int64)
    site_of_cell[mask] = np.arange(M)  # C order on [z, y, x] is x fastest
    zz, yy, xx = np.nonzero(mask)
    coords = np.column_stack([xx, yy, zz]).astype(np.int64)

    src_parts, dst_parts = [], []
    for axis in range(3):
        if mask.shape[axis] < 2:
            continue
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a = site_of_cell[tuple(lo)]
        b = site_of_cell[tuple(hi)]
        both = (a >= 0) & (b >= 0)
        src_parts += [a[both], b[both]]
        dst_parts += [b[both], a[both]]
    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(M + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)

    color = (coords.sum(axis=1) % 2).astype(np.uint8)
    return Lattice(
        dims=(nx, ny, nz),
        mask=mask,
        coords=coords,
        indptr=indptr,
        indices=dst.astype(np.int64),
        color=color,
        components=connected_components_of(mask),
        site_of_cell=site_of_cell,
    )


def connected_components_of(mask: np.ndarray) -> int:
    structure = ndimage.generate_binary_structure(3, 1)
    _, n = ndimage.label(_as_mask(mask), structure=structure)
    return int(n)


def connected_components(lattice: Lattice) -> int:
    """Number of face-connected components of the mask."""
    return lattice.components


def color_partition(lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Site indices of the even-parity (A) and odd-parity (B) classes."""
    return (np.flatnonzero(lattice.color == 0).astype(np.int64),
            np.flatnonzero(lattice.color == 1).astype(np.int64))
