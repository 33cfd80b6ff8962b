"""Synthetic mesh classes with known topology: a sphere and genus 1-3 surfaces.

Each default class has its own Euler characteristic. Every Euler curve ends on
that value, so the classes differ in a feature the conv head sees directly.
"""
from __future__ import annotations

import numpy as np

from .complex import EmbeddedComplex
from .sphere import icosphere_mesh

CLASSES = ("sphere", "torus", "double_torus", "triple_torus")
EXPECTED_CHI = {"sphere": 2, "torus": 0, "double_torus": -2, "triple_torus": -4, "ellipsoid": 2}
# every shape make_instance accepts; the ellipsoid shares chi with the sphere
SHAPES = tuple(EXPECTED_CHI)

# base shapes are built at this size (arbitrary length units)
BASE_SCALE = 10.0
# std of the per-instance placement offset, in the same units
PLACEMENT = 2.0


def torus_grid(n_major: int = 24, n_minor: int = 12, R: float = 1.0, r: float = 0.4):
    """Quad grid on a torus, each quad split into two triangles."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    U, V = np.meshgrid(u, v, indexing="ij")
    X = np.stack([(R + r * np.cos(V)) * np.cos(U),
                  (R + r * np.cos(V)) * np.sin(U),
                  r * np.sin(V)], axis=-1).reshape(-1, 3)

    def vid(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            faces.append((a, b, c))
            faces.append((a, c, d))
    return X, np.array(faces, dtype=np.int64), vid


def torus_chain(genus: int, n_major: int = 24, n_minor: int = 12, R: float = 1.0, r: float = 0.4,
                gap: float = 0.3):
    """Genus-g surface: g tori in a row along x, neighbours joined by a short square tube.

    Tori alternate between the base grid and its mirror image, so the quad
    opened on one torus faces its mirror partner on the next.
    """
    if genus < 1:
        raise ValueError("genus must be at least 1")
    X1, F1, vid = torus_grid(n_major, n_minor, R, r)
    n = len(X1)
    j0, h = n_minor - 1, n_major // 2
    # quads on the outer equator at u = 0 (facing +x) and u = pi (facing -x) in the base grid
    ring_0 = [vid(0, j0), vid(1, j0), vid(1, 0), vid(0, 0)]
    ring_pi = [vid(h, j0), vid(h - 1, j0), vid(h - 1, 0), vid(h, 0)]
    spacing = 2 * (R + r) + gap
    X, faces, rings = [], [], []
    for k in range(genus):
        mirrored = k % 2 == 1
        Xk = X1 * [-1, 1, 1] if mirrored else X1.copy()
        X.append(Xk + [(k - (genus - 1) / 2) * spacing, 0, 0])
        plus, minus = (ring_pi, ring_0) if mirrored else (ring_0, ring_pi)
        opened = set()
        if k < genus - 1:
            opened.update(plus)
        if k > 0:
            opened.update(minus)
        kept = [f for f in F1.tolist() if not set(f) <= opened]
        if len(kept) != len(F1) - len(opened) // 2:
            raise RuntimeError("hole quad not found")
        faces += [[a + k * n, b + k * n, c + k * n] for a, b, c in kept]
        rings.append(([v + k * n for v in plus], [v + k * n for v in minus]))
    for k in range(genus - 1):
        A, B = rings[k][0], rings[k + 1][1]
        for m in range(4):
            faces.append([A[m], A[(m + 1) % 4], B[(m + 1) % 4]])
            faces.append([A[m], B[(m + 1) % 4], B[m]])
    return np.concatenate(X), np.array(faces, dtype=np.int64)


def double_torus(**kwargs):
    return torus_chain(2, **kwargs)


def base_shape(name: str, level: int = 3):
    if name in ("sphere", "ellipsoid"):
        X, F = icosphere_mesh(level)
        if name == "ellipsoid":
            X = X * np.array([1.6, 1.0, 0.6])
    elif name == "torus":
        X, F, _ = torus_grid()
    elif name == "double_torus":
        X, F = torus_chain(2)
    elif name == "triple_torus":
        X, F = torus_chain(3)
    else:
        raise ValueError(f"unknown shape class {name!r}")
    X = X - X.mean(axis=0)
    return X * BASE_SCALE, F


def deform(X: np.ndarray, rng: np.random.Generator, amplitude: float = 0.08) -> np.ndarray:
    """Smooth radial bump: x -> x (1 + a p(x / |x|)) with p a random degree-2 polynomial.

    Also applies a small random anisotropic stretch. Combinatorics are untouched.
    """
    c = X.mean(axis=0)
    Y = X - c
    u = Y / np.maximum(np.linalg.norm(Y, axis=1, keepdims=True), 1e-12)
    lin = rng.standard_normal(3)
    quad = rng.standard_normal((3, 3))
    quad = (quad + quad.T) / 2
    p = u @ lin + np.einsum("ni,ij,nj->n", u, quad, u)
    p = p / max(np.abs(p).max(), 1e-12)
    stretch = 1.0 + 0.05 * rng.standard_normal(3)
    return c + Y * (1.0 + amplitude * p)[:, None] * stretch


def make_instance(name: str, seed: int, level: int = 3, amplitude: float = 0.08,
                  placement: float = PLACEMENT) -> EmbeddedComplex:
    """Deformed copy of a base shape, shifted by a normal offset of std ``placement``."""
    X, F = base_shape(name, level)
    rng = np.random.default_rng(seed)
    Y = deform(X, rng, amplitude) + placement * rng.standard_normal(3)
    return EmbeddedComplex.from_faces(Y, F)
