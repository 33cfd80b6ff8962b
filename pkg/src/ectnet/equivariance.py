"""Distance-kernel message passing on sampled spheres, equivariance diagnostics,
and the rotation-maximised correlation that separates a signal from its mirror image."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import ConvexHull, cKDTree

from .sphere import DirectionSet


class KernelDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistanceKernel:
    """Piecewise-constant matrix-valued function of distance.

    ``at_zero`` is used for d == 0; ``values[i]`` on ``[breaks[i], breaks[i + 1])``
    for d > 0, with ``breaks[0] == 0``. Distances at or beyond ``breaks[-1]``
    are outside the domain.
    """

    at_zero: np.ndarray
    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        z = np.asarray(self.at_zero, dtype=np.float64)
        if b[0] != 0 or np.any(np.diff(b) <= 0) or len(v) != len(b) - 1:
            raise ValueError("breaks must start at 0, increase, and bound len(values) pieces")
        if v.shape[1:] != z.shape:
            raise ValueError("kernel pieces must share the shape of at_zero")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "at_zero", z)

    @classmethod
    def gcn(cls, W0: ArrayLike, W1: ArrayLike, radius: float, n: int) -> "DistanceKernel":
        """n W0 at 0, n W1 on (0, radius), 0 up to the sphere's diameter."""
        W0, W1 = np.asarray(W0, dtype=np.float64), np.asarray(W1, dtype=np.float64)
        return cls(n * W0, np.array([0.0, radius, 2.0 + 1e-9]),
                   np.stack([n * W1, np.zeros_like(W1)]))

    def __call__(self, d: ArrayLike) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        if np.any(d < 0) or np.any(d >= self.breaks[-1]):
            raise KernelDomainError(f"distance outside kernel domain [0, {self.breaks[-1]})")
        idx = np.clip(np.searchsorted(self.breaks, d, side="right") - 1, 0, len(self.values) - 1)
        out = self.values[idx]
        return np.where((d == 0)[(...,) + (None,) * self.at_zero.ndim], self.at_zero, out)


Kernel = Callable[[np.ndarray], np.ndarray]


def _points(D) -> np.ndarray:
    return D.points if isinstance(D, DirectionSet) else np.asarray(D, dtype=np.float64)


def _extended_transform(kernel: Kernel, nodes: np.ndarray, features: np.ndarray, at: np.ndarray) -> np.ndarray:
    """T(f)'(x) = (1/n) sum_j g(|x - x_j|) f(x_j) for every row x of ``at``."""
    n = len(nodes)
    d = np.linalg.norm(at[:, None, :] - nodes[None, :, :], axis=-1)
    # exact zeros on the diagonal when evaluating at the nodes themselves
    d[d < 1e-15] = 0.0
    Gm = kernel(d)  # (m, n, c, c')
    return np.einsum("jc,ijcd->id", features, Gm) / n


def mpnn_layer(D, features: ArrayLike, kernel: Kernel) -> np.ndarray:
    """(1/n) sum_j g(e_ij) f(x_j) over all pairs, self term included via g(0)."""
    P = _points(D)
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if len(f) != len(P):
        raise ValueError("one feature row per direction required")
    d = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    np.fill_diagonal(d, 0.0)
    return np.einsum("jc,ijcd->id", f, kernel(d)) / len(P)


class SphereInterpolator:
    """Resample node values at arbitrary unit vectors: nearest node or piecewise-linear."""

    def __init__(self, D, mode: str = "nearest"):
        self.points = _points(D)
        self.mode = mode
        self.tree = cKDTree(self.points)
        if mode == "linear":
            hull = ConvexHull(self.points)
            self.tris = hull.simplices
            M = self.points[self.tris].transpose(0, 2, 1)  # columns are triangle corners
            self.inv = np.linalg.inv(M)
        elif mode != "nearest":
            raise ValueError("mode must be 'nearest' or 'linear'")

    def nearest(self, q: np.ndarray) -> np.ndarray:
        return self.tree.query(q)[1]

    def __call__(self, values: np.ndarray, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if self.mode == "nearest":
            return values[self.nearest(q)]
        lam = np.einsum("tij,qj->qti", self.inv, q)  # barycentric (unnormalised) per triangle
        inside = np.all(lam >= -1e-12, axis=2)
        tri = np.argmax(inside, axis=1)
        w = lam[np.arange(len(q)), tri]
        w = w / w.sum(axis=1, keepdims=True)
        return np.einsum("qk,qk...->q...", w, values[self.tris[tri]])


def equivariance_error(kernel: Kernel, features, R: ArrayLike, D, mode: str = "nearest") -> float:
    """sup over sampled x of |T(f)'(R x) - T(Rf)'(x)|_inf, with (Rf)(x) = f(R x).

    ``features`` is an (n, c) array of node values or a callable evaluated at the
    nodes; Rf at the nodes is obtained by resampling those node values at R x_j.
    """
    P = _points(D)
    R = np.asarray(R, dtype=np.float64)
    f = features(P) if callable(features) else np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    interp = SphereInterpolator(P, mode)
    Rf = interp(f, P @ R.T)
    lhs = _extended_transform(kernel, P, f, P @ R.T)
    rhs = _extended_transform(kernel, P, Rf, P)
    return float(np.abs(lhs - rhs).max())


def smooth_kernel(width: float = 0.8, c_in: int = 1, c_out: int = 1, seed: int = 0) -> Kernel:
    """Gaussian-in-distance kernel with a fixed random channel-mixing matrix."""
    M = np.random.default_rng(seed).standard_normal((c_in, c_out))

    def g(d):
        d = np.asarray(d, dtype=np.float64)
        return np.exp(-(d / width) ** 2)[..., None, None] * M

    return g


# ---------------------------------------------------------------------------
# rotation-maximised correlation


def random_rotations(count: int, seed: int = 0, include_identity: bool = True) -> np.ndarray:
    """Haar-random elements of SO(3)."""
    from scipy.spatial.transform import Rotation
    mats = Rotation.random(count, random_state=seed).as_matrix()
    if include_identity:
        mats = np.concatenate([np.eye(3)[None], mats])
    return mats


def rotation_max_correlation(f: ArrayLike, g: ArrayLike, D, rotations: ArrayLike,
                             return_argmax: bool = False):
    """max over R of (1/n) sum_i g(R^-1 x_i) f(x_i); g resampled at the nearest node.

    The identity rotation is always included.
    """
    P = _points(D)
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    mats = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    mats = np.concatenate([np.eye(3)[None], mats])
    tree = cKDTree(P)
    support = np.nonzero(f)[0]
    Ps, fs = P[support], f[support]
    # (R^-1 x) = R^T x; for row vectors that is x @ R
    q = np.einsum("ij,rjk->rik", Ps, mats)
    idx = tree.query(q.reshape(-1, 3))[1].reshape(len(mats), len(support))
    corr = (g[idx] * fs[None, :]).sum(axis=1) / len(P)
    best = int(np.argmax(corr))
    if return_argmax:
        return float(corr[best]), mats[best]
    return float(corr[best])


def l_patch(D, center=(0.0, 0.0, 1.0), long_arm: float = 1.3, short_arm: float = 0.8,
            width: float = 0.4, mirror: bool = False) -> np.ndarray:
    """Indicator of an L-shaped region around ``center`` (angles in radians).

    Local coordinates are the angular offsets along two tangent directions; the
    arms have different lengths, so the shape is not congruent to its mirror
    image under rotations.
    """
    P = _points(D)
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    helper = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(c, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    z = P @ c
    u = np.arctan2(P @ e1, z)
    v = np.arctan2(P @ e2, z)
    if mirror:
        u = -u
    front = z > 0
    vertical = (u >= 0) & (u <= width) & (v >= 0) & (v <= long_arm)
    foot = (u >= 0) & (u <= short_arm) & (v >= 0) & (v <= width)
    return (front & (vertical | foot)).astype(np.float64)
