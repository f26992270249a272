"""Bookkeeping of token roles through a forward pass.

A layout records, for every token currently alive, whether it is the CLS
token, an image token (with its coordinate on the original patch grid), or
a DC token (with its window-group id).  Reduction steps shrink the image
token set and append DC tokens; the layout is the single source of truth
for who sits where.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLS = 0
IMAGE = 1
DC = 2


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TokenLayout:
    """Per-token roles plus the original grid geometry.

    ``rows``/``cols`` hold grid coordinates for image tokens (-1 elsewhere),
    ``groups`` holds window-group ids for DC tokens (-1 elsewhere).
    ``window`` is the window side of the most recent reduction step, or
    ``None`` before any reduction.
    """

    roles: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    groups: np.ndarray
    grid_side: int
    window: int | None = None

    def __post_init__(self):
        for name in ("roles", "rows", "cols", "groups"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))
        n = self.roles.shape[0]
        if not (self.rows.shape == self.cols.shape == self.groups.shape == (n,)):
            raise ValueError("layout arrays must share one length")
        if np.count_nonzero(self.roles == CLS) > 1:
            raise ValueError("at most one CLS token")
        img = self.roles == IMAGE
        r, c = self.rows[img], self.cols[img]
        if img.any():
            if r.min() < 0 or c.min() < 0 or r.max() >= self.grid_side or c.max() >= self.grid_side:
                raise ValueError("image coordinates outside the grid")
            flat = r * self.grid_side + c
            if np.unique(flat).size != flat.size:
                raise ValueError("image-token grid coordinates must be unique")
        if self.window is not None:
            g = self.groups[self.roles == DC]
            if g.size and (g.min() < 0 or g.max() >= self.window * self.window):
                raise ValueError("DC group id outside [0, window^2)")

    @classmethod
    def full_grid(cls, grid_side: int, has_cls: bool = True) -> "TokenLayout":
        """Layout of an untouched token sequence: [CLS], then row-major grid."""
        n_img = grid_side * grid_side
        rr, cc = np.divmod(np.arange(n_img), grid_side)
        if has_cls:
            roles = np.concatenate([[CLS], np.full(n_img, IMAGE)])
            rows = np.concatenate([[-1], rr])
            cols = np.concatenate([[-1], cc])
        else:
            roles, rows, cols = np.full(n_img, IMAGE), rr, cc
        return cls(roles, rows, cols, np.full(roles.shape, -1), grid_side)

    @property
    def n_tokens(self) -> int:
        return int(self.roles.shape[0])

    @property
    def n_image(self) -> int:
        return int(np.count_nonzero(self.roles == IMAGE))

    def cls_index(self) -> int | None:
        idx = np.flatnonzero(self.roles == CLS)
        return int(idx[0]) if idx.size else None

    def image_indices(self) -> np.ndarray:
        return np.flatnonzero(self.roles == IMAGE)

    def dc_indices(self) -> np.ndarray:
        return np.flatnonzero(self.roles == DC)

    def image_coords(self) -> np.ndarray:
        """(k, 2) array of (row, col) for image tokens, in token order."""
        idx = self.image_indices()
        return np.stack([self.rows[idx], self.cols[idx]], axis=1)
