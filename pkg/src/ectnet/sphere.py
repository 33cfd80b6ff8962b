"""Direction sampling on S^2 and the graphs built over the samples."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike

PHI = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass(frozen=True, eq=False)
class DirectionSet:
    points: np.ndarray
    provenance: str = "custom"

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    def check(self) -> None:
        norms = np.linalg.norm(self.points, axis=1)
        if np.abs(norms - 1.0).max(initial=0.0) > 1e-12:
            raise ValueError("directions must have unit norm")
        if len(self.points) > 1:
            from scipy.spatial import cKDTree
            if cKDTree(self.points).query_pairs(1e-9):
                raise ValueError("duplicate directions")

    def to_csv(self) -> str:
        lines = ["x,y,z"]
        lines += [",".join(f"{c:.17g}" for c in p) for p in self.points]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class SphereGraph:
    num_nodes: int
    edges: np.ndarray          # (m, 2), i < j, sorted
    edge_lengths: np.ndarray   # (m,)

    @classmethod
    def from_pairs(cls, points: np.ndarray, pairs) -> "SphereGraph":
        e = np.array(sorted({(min(i, j), max(i, j)) for i, j in pairs if i != j}),
                     dtype=np.int64).reshape(-1, 2)
        lengths = np.linalg.norm(points[e[:, 0]] - points[e[:, 1]], axis=1) if len(e) else np.zeros(0)
        return cls(len(points), e, lengths)

    def adjacency(self):
        import scipy.sparse as sps
        n = self.num_nodes
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        return sps.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    def is_connected(self) -> bool:
        from scipy.sparse.csgraph import connected_components
        return connected_components(self.adjacency(), directed=False)[0] == 1


def icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Unit icosahedron from cyclic permutations of (0, +-1, +-phi); returns (vertices, faces)."""
    base = []
    for s1, s2 in itertools.product((1.0, -1.0), repeat=2):
        base.append((0.0, s1, s2 * PHI))
    verts = []
    for shift in range(3):
        for p in base:
            verts.append(np.roll(p, shift))
    verts = np.array(verts)
    # edges have length 2 before normalisation
    d = np.linalg.norm(verts[:, None] - verts[None], axis=-1)
    adj = np.abs(d - 2.0) < 1e-9
    faces = [(i, j, k) for i, j, k in itertools.combinations(range(12), 3)
             if adj[i, j] and adj[j, k] and adj[i, k]]
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return verts, np.array(faces, dtype=np.int64)


@lru_cache(maxsize=32)
def _icosphere_cached(level: int):
    V0, F0 = icosahedron()
    n = level
    points = [p for p in V0]
    edge_index: dict[tuple[int, int], list[int]] = {}

    # interior points of each icosahedron edge, ordered from the lower to the higher vertex
    for a, b in sorted({tuple(sorted(e)) for f in F0 for e in itertools.combinations(f, 2)}):
        ids = [a]
        for i in range(1, n):
            ids.append(len(points))
            points.append(((n - i) * V0[a] + i * V0[b]) / n)
        ids.append(b)
        edge_index[(a, b)] = ids

    def edge_point(u, v, i):
        # i-th lattice point walking from u to v
        if u < v:
            return edge_index[(u, v)][i]
        return edge_index[(v, u)][n - i]

    faces = []
    edges = set()
    for a, b, c in F0.tolist():
        # lattice coordinates (i, j): point = a + i/n (b - a) + j/n (c - a), i + j <= n
        grid = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                if j == 0:
                    grid[i, j] = edge_point(a, b, i)
                elif i == 0:
                    grid[i, j] = edge_point(a, c, j)
                elif i + j == n:
                    grid[i, j] = edge_point(b, c, j)
                else:
                    grid[i, j] = len(points)
                    points.append(((n - i - j) * V0[a] + i * V0[b] + j * V0[c]) / n)
        for i in range(n):
            for j in range(n - i):
                tris = [(grid[i, j], grid[i + 1, j], grid[i, j + 1])]
                if i + j + 1 < n:
                    tris.append((grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]))
                for t in tris:
                    faces.append(tuple(sorted(t)))
                    for e in itertools.combinations(sorted(t), 2):
                        edges.add(e)
    P = np.array(points)
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    return P, np.array(sorted(faces), dtype=np.int64), sorted(edges)


def icosphere_mesh(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and triangles of the level-``level`` icosphere (10 L^2 + 2 vertices)."""
    if int(level) < 1:
        raise ValueError("icosphere level must be >= 1")
    P, F, _ = _icosphere_cached(int(level))
    return P.copy(), F.copy()


def icosphere(level: int) -> tuple[DirectionSet, SphereGraph]:
    """Directions at the icosphere vertices with the triangulation edges as graph."""
    if int(level) < 1:
        raise ValueError("icosphere level must be >= 1")
    P, _, edges = _icosphere_cached(int(level))
    return DirectionSet(P, f"icosphere({level})"), SphereGraph.from_pairs(P, edges)


def fibonacci_directions(n: int) -> DirectionSet:
    """Golden-angle spiral lattice with ``n`` points."""
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = np.pi * (3.0 - np.sqrt(5.0)) * i
    P = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    return DirectionSet(P, f"fibonacci({n})")


def threshold_graph(D: DirectionSet, r: float) -> SphereGraph:
    """Connect i, j whenever 0 < |x_i - x_j| < r."""
    if not r > 0:
        raise ValueError("threshold must be positive")
    P = D.points
    d = np.linalg.norm(P[:, None] - P[None], axis=-1)
    i, j = np.nonzero(np.triu((d > 0) & (d < r), k=1))
    return SphereGraph.from_pairs(P, zip(i.tolist(), j.tolist()))


# ---------------------------------------------------------------------------
# symmetry groups used by the exact equivariance checks


@lru_cache(maxsize=1)
def icosahedral_group() -> tuple[np.ndarray, ...]:
    """The 120 orthogonal matrices mapping the icosahedron onto itself."""
    V, F = icosahedron()
    a, b = V[F[0, 0]], V[F[0, 1]]
    src = np.stack([a, b, np.cross(a, b)], axis=1)
    src_inv = np.linalg.inv(src)
    nbrs = {i: [j for j in range(12) if abs(V[i] @ V[j] - V[F[0, 0]] @ V[F[0, 1]]) < 1e-9]
            for i in range(12)}
    mats = []
    for i in range(12):
        for j in nbrs[i]:
            for s in (1.0, -1.0):
                dst = np.stack([V[i], V[j], s * np.cross(V[i], V[j])], axis=1)
                mats.append(dst @ src_inv)
    return tuple(mats)


def signed_permutations(dim: int = 3) -> list[np.ndarray]:
    """All 2^dim * dim! signed permutation matrices (48 in R^3)."""
    out = []
    for perm in itertools.permutations(range(dim)):
        for signs in itertools.product((1.0, -1.0), repeat=dim):
            M = np.zeros((dim, dim))
            M[np.arange(dim), perm] = signs
            out.append(M)
    return out


def point_permutation(points: np.ndarray, R: ArrayLike, tol: float = 1e-9) -> np.ndarray:
    """Index array ``pi`` with ``R @ points[i] == points[pi[i]]``; raises if R does not permute the set."""
    from scipy.spatial import cKDTree
    R = np.asarray(R, dtype=np.float64)
    dist, idx = cKDTree(points).query(points @ R.T)
    if dist.max(initial=0.0) > tol or len(set(idx.tolist())) != len(points):
        raise ValueError("matrix does not map the point set onto itself")
    return idx
