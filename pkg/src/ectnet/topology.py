"""Height filtrations, Euler curves, persistence diagrams and landscapes."""
from __future__ import annotations

import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .complex import EmbeddedComplex
from .sphere import DirectionSet

log = logging.getLogger(__name__)

UNIT_TOL = 1e-12


def heights(X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Dot products ``X @ V.T`` summed in a canonical order.

    The per-coordinate products are sorted before summation, so permuting or
    negating coordinates consistently in X and V gives bit-identical heights.
    """
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    prod = X[:, None, :] * V[None, :, :]
    prod.sort(axis=-1)
    out = prod[..., 0]
    for c in range(1, prod.shape[-1]):
        out = out + prod[..., c]
    return out


def euler_grid(a: float, t: int) -> np.ndarray:
    """Evaluation points x_1..x_t of the regular partition of (-a, a) into t pieces."""
    if not a > 0 or int(t) < 1:
        raise ValueError("need a > 0 and t >= 1")
    return np.linspace(-a, a, int(t) + 1)[1:]


# ---------------------------------------------------------------------------
# filtration and Euler curves


@dataclass(frozen=True, eq=False)
class FiltrationValues:
    """Lower-star entry values of every simplex for one direction.

    ``simplices`` is in canonical (dimension, lexicographic) order; ``order``
    is the filtration order, sorting by (value, dimension, lexicographic tuple).
    """

    simplices: list[tuple]
    dims: np.ndarray
    values: np.ndarray
    order: np.ndarray

    def __len__(self):
        return len(self.simplices)


def height_values(K: EmbeddedComplex, v: ArrayLike) -> FiltrationValues:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (K.ambient_dim,) or abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError("direction must be a unit vector in the ambient space")
    h = heights(K.vertices, v[None])[:, 0] if len(K.vertices) else np.zeros(0)
    simplices, dims, values = [], [], []
    for m, arr in enumerate(K.simplices if len(K.vertices) else ()):
        if len(arr) == 0:
            continue
        simplices.extend(tuple(r) for r in arr.tolist())
        dims.append(np.full(len(arr), m))
        values.append(h[arr].max(axis=1))
    dims = np.concatenate(dims) if dims else np.zeros(0, dtype=np.int64)
    values = np.concatenate(values) if values else np.zeros(0)
    # canonical index already sorts by (dim, lex); primary key is the value
    order = np.lexsort((np.arange(len(values)), values))
    return FiltrationValues(simplices, dims, values, order)


@dataclass(frozen=True, eq=False)
class EulerCurve:
    a: float
    grid: np.ndarray
    values: np.ndarray

    @property
    def t(self) -> int:
        return len(self.grid)


def _grid_of(grid, a=None):
    g = np.asarray(grid, dtype=np.float64)
    if len(g) > 1 and np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    return g, (float(a) if a is not None else float(g[-1]) if len(g) else 0.0)


def euler_curve_by_counting(F: FiltrationValues, grid: ArrayLike) -> EulerCurve:
    """chi(K_{v,x}) by alternating counts of simplices with entry value <= x."""
    g, a = _grid_of(grid)
    order = np.argsort(F.values, kind="stable")
    vals = F.values[order]
    signs = np.where(F.dims[order] % 2 == 0, 1, -1).astype(np.int64)
    running = np.concatenate([[0], np.cumsum(signs)])
    idx = np.searchsorted(vals, g, side="right")
    return EulerCurve(a, g, running[idx])


# ---------------------------------------------------------------------------
# persistence over Z/2


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """Intervals [birth, death) in one homology dimension; +-inf allowed."""

    pairs: np.ndarray
    dim: int = 0

    def __post_init__(self):
        p = np.array(self.pairs, dtype=np.float64).reshape(-1, 2)
        if np.any(p[:, 0] > p[:, 1]):
            raise ValueError("birth must not exceed death")
        object.__setattr__(self, "pairs", p)

    def __len__(self):
        return len(self.pairs)

    @property
    def births(self):
        return self.pairs[:, 0]

    @property
    def deaths(self):
        return self.pairs[:, 1]

    def sorted(self) -> "PersistenceDiagram":
        order = np.lexsort((self.pairs[:, 1], self.pairs[:, 0]))
        return PersistenceDiagram(self.pairs[order], self.dim)

    def to_csv(self, header: bool = True) -> str:
        lines = ["dim,birth,death"] if header else []
        for b, d in self.pairs:
            lines.append(f"{self.dim},{_fmt(b)},{_fmt(d)}")
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def diagrams_to_csv(diagrams: Sequence[PersistenceDiagram]) -> str:
    out = "dim,birth,death\n"
    for D in diagrams:
        out += D.to_csv(header=False) if len(D) else ""
    return out


def diagrams_from_csv(text: str) -> list[PersistenceDiagram]:
    rows: dict[int, list] = {}
    for line in text.strip().splitlines()[1:]:
        d, b, e = line.split(",")
        rows.setdefault(int(d), []).append((float(b), float(e)))
    top = max(rows, default=-1)
    return [PersistenceDiagram(np.array(rows.get(d, []), dtype=np.float64).reshape(-1, 2), d)
            for d in range(top + 1)]


def compute_persistence(F: FiltrationValues, max_dim: int | None = None) -> list[PersistenceDiagram]:
    """Standard column reduction over Z/2 in filtration order.

    Returns one diagram per homology dimension 0..max(2, top dimension).
    Zero-length intervals are dropped.
    """
    order = F.order
    pos = {F.simplices[i]: p for p, i in enumerate(order.tolist())}
    top = int(F.dims.max()) if len(F.dims) else 0
    if max_dim is None:
        max_dim = max(2, top)
    low_of: dict[int, int] = {}
    paired = set()
    intervals: list[list] = [[] for _ in range(max_dim + 1)]
    for p, i in enumerate(order.tolist()):
        s = F.simplices[i]
        col = 0
        if len(s) > 1:
            for k in range(len(s)):
                col ^= 1 << pos[s[:k] + s[k + 1:]]
        while col:
            low = col.bit_length() - 1
            other = low_of.get(low)
            if other is None:
                break
            col ^= other
        if col:
            low = col.bit_length() - 1
            low_of[low] = col
            paired.add(low)
            paired.add(p)
            birth_simplex = order[low]
            b, d = F.values[birth_simplex], F.values[i]
            dim = len(s) - 2
            if d > b and dim <= max_dim:
                intervals[dim].append((b, d))
    for p, i in enumerate(order.tolist()):
        if p not in paired:
            dim = len(F.simplices[i]) - 1
            if dim <= max_dim:
                intervals[dim].append((F.values[i], np.inf))
    return [PersistenceDiagram(np.array(iv, dtype=np.float64).reshape(-1, 2), d).sorted()
            for d, iv in enumerate(intervals)]


def euler_curve_from_persistence(diagrams: Sequence[PersistenceDiagram], grid: ArrayLike) -> EulerCurve:
    """Alternating sum of the numbers of intervals alive at each grid point."""
    g, a = _grid_of(grid)
    vals = np.zeros(len(g), dtype=np.int64)
    for D in diagrams:
        if len(D) == 0:
            continue
        alive = (D.births[None, :] <= g[:, None]) & (g[:, None] < D.deaths[None, :])
        vals += (-1) ** D.dim * alive.sum(axis=1)
    return EulerCurve(a, g, vals)


# ---------------------------------------------------------------------------
# landscapes


@dataclass(frozen=True, eq=False)
class PersistenceLandscape:
    grid: np.ndarray
    samples: np.ndarray  # (depth, t); samples[c - 1, i] = lambda_c(grid[i])

    @property
    def depth(self) -> int:
        return self.samples.shape[0]


def _tents(pairs: np.ndarray, g: np.ndarray) -> np.ndarray:
    b = pairs[:, 0][:, None]
    d = pairs[:, 1][:, None]
    x = g[None, :]
    with np.errstate(invalid="ignore"):
        up = np.where(np.isneginf(b), np.inf, x - b)
        down = np.where(np.isposinf(d), np.inf, d - x)
    return np.maximum(0.0, np.minimum(up, down))


def landscape_from_diagram(D: PersistenceDiagram, grid: ArrayLike, depth: int = 5) -> PersistenceLandscape:
    """lambda_c(x) = c-th largest tent value max(0, min(x - b, d - x))."""
    g = np.asarray(grid, dtype=np.float64)
    out = np.zeros((depth, len(g)))
    if len(D):
        T = -np.sort(-_tents(D.pairs, g), axis=0)
        k = min(depth, len(T))
        out[:k] = T[:k]
    return PersistenceLandscape(g, out)


RankFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def diagram_rank_function(D: PersistenceDiagram) -> RankFunction:
    """beta^{a,b}: number of intervals with birth <= a and death > b."""
    births, deaths = D.births, D.deaths

    def rank(a, b):
        a = np.asarray(a, dtype=np.float64)[..., None]
        b = np.asarray(b, dtype=np.float64)[..., None]
        return ((births <= a) & (deaths > b)).sum(axis=-1)

    return rank


def _z2_rank(columns: list[int]) -> int:
    """Rank over Z/2 of integer bitmask columns."""
    pivots: dict[int, int] = {}
    r = 0
    for c in columns:
        while c:
            h = c.bit_length() - 1
            if h in pivots:
                c ^= pivots[h]
            else:
                pivots[h] = c
                r += 1
                break
    return r


def _z2_kernel(columns: list[int]) -> list[int]:
    """Basis (as bitmasks over column indices) of the kernel of the column matrix."""
    pivots: dict[int, tuple[int, int]] = {}
    kernel = []
    for j, c in enumerate(columns):
        combo = 1 << j
        while c:
            h = c.bit_length() - 1
            if h in pivots:
                pc, pcombo = pivots[h]
                c ^= pc
                combo ^= pcombo
            else:
                pivots[h] = (c, combo)
                break
        if not c:
            kernel.append(combo)
    return kernel


def filtration_rank_function(F: FiltrationValues, dim: int) -> RankFunction:
    """beta^{a,b} = dim im(H_dim(K_a) -> H_dim(K_b)) by direct linear algebra over Z/2.

    Uses dim(Z(K_a) + B(K_b)) - dim B(K_b); no persistence pairing involved.
    """
    index = {s: i for i, s in enumerate(F.simplices)}
    cells = [i for i, s in enumerate(F.simplices) if len(s) == dim + 1]
    cofaces = [i for i, s in enumerate(F.simplices) if len(s) == dim + 2]
    cell_bit = {i: k for k, i in enumerate(cells)}

    def boundary(i):
        s = F.simplices[i]
        col = 0
        if len(s) > 1:
            for k in range(len(s)):
                f = index[s[:k] + s[k + 1:]]
                col ^= 1 << cell_bit[f]
        return col

    def faces_of(i):
        # boundary of a dim-cell expressed over (dim-1)-cells, as bitmask over all simplices
        s = F.simplices[i]
        col = 0
        if len(s) > 1:
            for k in range(len(s)):
                col ^= 1 << index[s[:k] + s[k + 1:]]
        return col

    cell_vals = F.values[cells]
    coface_vals = F.values[cofaces]
    bnd_up = {i: boundary(i) for i in cofaces}
    bnd_down = {i: faces_of(i) for i in cells}

    def one(a, b):
        in_a = [cells[k] for k in range(len(cells)) if cell_vals[k] <= a]
        kern = _z2_kernel([bnd_down[i] for i in in_a])
        cycles = []
        for combo in kern:
            c = 0
            for k, i in enumerate(in_a):
                if combo >> k & 1:
                    c ^= 1 << cell_bit[i]
            cycles.append(c)
        boundaries = [bnd_up[cofaces[k]] for k in range(len(cofaces)) if coface_vals[k] <= b]
        return _z2_rank(boundaries + cycles) - _z2_rank(boundaries)

    def rank(a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        a, b = np.broadcast_arrays(a, b)
        return np.array([one(x, y) for x, y in zip(a.ravel(), b.ravel())]).reshape(a.shape)

    return rank


def landscape_by_rank(source, grid: ArrayLike, depth: int = 5, dim: int = 0,
                      max_iter: int = 200) -> PersistenceLandscape:
    """lambda_c(x) = sup{m >= 0 : beta^{x-m, x+m} >= c}, found by bisection on m.

    ``source`` is a FiltrationValues (ranks by Z/2 linear algebra in dimension
    ``dim``), a PersistenceDiagram, or a rank function ``(a, b) -> beta``.
    """
    if isinstance(source, FiltrationValues):
        rank = filtration_rank_function(source, dim)
        finite = source.values[np.isfinite(source.values)]
    elif isinstance(source, PersistenceDiagram):
        rank = diagram_rank_function(source)
        finite = source.pairs[np.isfinite(source.pairs)]
    else:
        rank, finite = source, np.zeros(0)
    g = np.asarray(grid, dtype=np.float64)
    span = (np.abs(finite).max() if finite.size else 0.0) + np.abs(g).max(initial=0.0) + 1.0
    out = np.zeros((depth, len(g)))
    for c in range(1, depth + 1):
        unbounded = rank(g - np.inf, g + np.inf) >= c
        alive = rank(g, g) >= c
        lo = np.zeros(len(g))
        hi = np.full(len(g), 2.0 * span)
        pending = alive & ~unbounded
        for _ in range(max_iter):
            if not pending.any():
                break
            mid = 0.5 * (lo + hi)
            stuck = (mid <= lo) | (mid >= hi)
            pending &= ~stuck
            ok = rank(g - mid, g + mid) >= c
            lo = np.where(pending & ok, mid, lo)
            hi = np.where(pending & ~ok, mid, hi)
        out[c - 1] = np.where(unbounded, np.inf, np.where(alive, lo, 0.0))
    return PersistenceLandscape(g, out)


# ---------------------------------------------------------------------------
# compactification and bottleneck distance


def compactify_diagram(D: PersistenceDiagram, a0: float = 10.0, a1: float = 0.25) -> PersistenceDiagram:
    """Map both coordinates through x -> a0 tanh(a1 x), sending +-inf to +-a0."""
    if not (0 < a0 < np.inf and 0 < a1 < np.inf):
        raise ValueError("scaling constants must be finite and positive")
    p = D.pairs
    with np.errstate(invalid="ignore"):
        h = np.where(np.isinf(p), np.sign(p) * a0, a0 * np.tanh(a1 * np.where(np.isinf(p), 0.0, p)))
    return PersistenceDiagram(h, D.dim)


def _perfect_matching_exists(cost: np.ndarray, eps: float) -> bool:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_bipartite_matching
    adj = csr_matrix(cost <= eps)
    m = maximum_bipartite_matching(adj, perm_type="column")
    return bool(np.all(m >= 0))


def _finite_bottleneck(P: np.ndarray, Q: np.ndarray) -> float:
    n1, n2 = len(P), len(Q)
    if n1 + n2 == 0:
        return 0.0
    # rows: P points then n2 diagonal slots; columns: Q points then n1 diagonal slots
    big = np.inf
    C = np.full((n1 + n2, n2 + n1), big)
    if n1 and n2:
        C[:n1, :n2] = np.abs(P[:, None, :] - Q[None, :, :]).max(axis=-1)
    if n1:
        C[np.arange(n1), n2 + np.arange(n1)] = (P[:, 1] - P[:, 0]) / 2.0
    if n2:
        C[n1 + np.arange(n2), np.arange(n2)] = (Q[:, 1] - Q[:, 0]) / 2.0
    C[n1:, n2:] = 0.0
    cand = np.unique(C[np.isfinite(C)])
    lo, hi = 0, len(cand) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _perfect_matching_exists(C, cand[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(cand[lo])


def bottleneck_distance(D1: PersistenceDiagram, D2: PersistenceDiagram) -> float:
    """Exact bottleneck distance with the L-infinity ground metric.

    Infinite intervals are matched only among themselves, by their finite
    coordinate; differing counts give +inf.
    """
    P, Q = D1.pairs, D2.pairs
    total = 0.0
    fin1 = np.all(np.isfinite(P), axis=1)
    fin2 = np.all(np.isfinite(Q), axis=1)
    for kind in ((False, True), (True, False), (True, True)):
        def sel(X, fin):
            return (~fin) & (np.isneginf(X[:, 0]) == kind[0]) & (np.isposinf(X[:, 1]) == kind[1])
        A, B = P[sel(P, fin1)], Q[sel(Q, fin2)]
        if len(A) != len(B):
            return np.inf
        if kind == (True, True) or len(A) == 0:
            continue
        col = 0 if kind == (False, True) else 1
        total = max(total, float(np.abs(np.sort(A[:, col]) - np.sort(B[:, col])).max()))
    return max(total, _finite_bottleneck(P[fin1], Q[fin2]))


# ---------------------------------------------------------------------------
# Euler curve transform over a direction set


@dataclass(frozen=True, eq=False)
class EctField:
    directions: np.ndarray  # (n, 3)
    a: float
    curves: np.ndarray      # (n, t) int32

    @property
    def t(self) -> int:
        return self.curves.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return euler_grid(self.a, self.t)

    def to_bytes(self) -> bytes:
        n, t = self.curves.shape
        head = b"ECTF" + struct.pack("<IIId", ECTF_VERSION, n, t, float(self.a))
        return (head + np.ascontiguousarray(self.directions, dtype="<f8").tobytes()
                + np.ascontiguousarray(self.curves, dtype="<i4").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "EctField":
        if data[:4] != b"ECTF":
            raise ValueError("not an ECTF file")
        version, n, t, a = struct.unpack_from("<IIId", data, 4)
        if version != ECTF_VERSION:
            raise ValueError(f"unsupported ECTF version {version}")
        off = 4 + struct.calcsize("<IIId")
        need = off + 24 * n + 4 * n * t
        if len(data) != need:
            raise ValueError(f"ECTF payload has {len(data)} bytes, expected {need}")
        dirs = np.frombuffer(data, dtype="<f8", count=3 * n, offset=off).reshape(n, 3)
        curves = np.frombuffer(data, dtype="<i4", count=n * t, offset=off + 24 * n).reshape(n, t)
        return cls(dirs.astype(np.float64), a, curves.astype(np.int32))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EctField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


ECTF_VERSION = 1


def default_threads() -> int:
    env = os.environ.get("ECTNET_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _ect_rows(K: EmbeddedComplex, V: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, float]:
    t = len(grid)
    n = len(V)
    counts = np.zeros(n * (t + 1), dtype=np.int64)
    h = heights(K.vertices, V)  # (N, n)
    offs = (np.arange(n) * (t + 1))[None, :]
    for m, arr in enumerate(K.simplices):
        if len(arr) == 0:
            continue
        vals = h[arr].max(axis=1)  # (k_m, n)
        idx = np.searchsorted(grid, vals, side="left")
        np.minimum(idx, t - 1, out=idx)
        sign = 1 if m % 2 == 0 else -1
        counts += sign * np.bincount((idx + offs).ravel(), minlength=n * (t + 1))
    reach = float(np.abs(h).max()) if h.size else 0.0
    return np.cumsum(counts.reshape(n, t + 1), axis=1)[:, :t], reach


def ect_field(K: EmbeddedComplex, D, a: float = 8.0, t: int = 512,
              threads: int | None = None, chunk: int = 64) -> EctField:
    """One discretised Euler curve per sampled direction.

    Simplices above ``a`` are counted in the last bin so every row ends at chi(K).
    """
    V = D.points if isinstance(D, DirectionSet) else np.asarray(D, dtype=np.float64)
    grid = euler_grid(a, t)
    out = np.zeros((len(V), int(t)), dtype=np.int32)
    starts = list(range(0, len(V), chunk))
    flags = []

    def work(s):
        rows, reach = _ect_rows(K, V[s:s + chunk], grid)
        out[s:s + chunk] = rows
        return reach

    threads = threads or default_threads()
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            flags = list(ex.map(work, starts))
    else:
        flags = [work(s) for s in starts]
    reach = max(flags, default=0.0)
    if reach >= a:
        log.warning("complex heights reach %.3g, outside (-%g, %g)", reach, a, a)
    return EctField(np.array(V, dtype=np.float64), float(a), out)
