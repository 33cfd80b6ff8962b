"""Embedded simplicial complexes: construction, validation, I/O and transforms."""
from __future__ import annotations

import io
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike

log = logging.getLogger(__name__)

AFFINE_TOL = 1e-9
ORTHO_TOL = 1e-12


class ComplexError(ValueError):
    """Invalid or unsupported complex."""


class DegenerateInputError(ComplexError):
    pass


class MeshParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _closure(simplices: Iterable[Sequence[int]]) -> dict[int, set[tuple]]:
    out: dict[int, set[tuple]] = {}
    for s in simplices:
        s = tuple(sorted(int(i) for i in s))
        for r in range(1, len(s) + 1):
            for f in itertools.combinations(s, r):
                out.setdefault(r - 1, set()).add(f)
    return out


def _as_array(faces, m: int) -> np.ndarray:
    if not faces:
        return np.zeros((0, m + 1), dtype=np.int64)
    return np.array(sorted(faces), dtype=np.int64).reshape(-1, m + 1)


@dataclass(frozen=True, eq=False)
class EmbeddedComplex:
    """A finite simplicial complex with vertex coordinates.

    ``simplices[m]`` is an integer array of shape ``(k_m, m + 1)`` whose rows are
    strictly increasing vertex-index tuples, sorted lexicographically.
    ``simplices[0]`` always lists every vertex.
    """

    vertices: np.ndarray
    simplices: tuple[np.ndarray, ...]
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2:
            raise ComplexError("vertices must be a 2-d array")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        simp = tuple(np.asarray(s, dtype=np.int64) for s in self.simplices)
        for s in simp:
            s.setflags(write=False)
        object.__setattr__(self, "simplices", simp)

    @classmethod
    def from_simplices(cls, vertices: ArrayLike, simplices: Iterable[Sequence[int]] = (),
                       closure: bool = True) -> "EmbeddedComplex":
        """Build a complex from (possibly non-maximal) simplices.

        With ``closure=False`` the given simplices are stored verbatim, apart from
        vertices, which are always the full index range; this is only useful for
        exercising :func:`validate_complex`.
        """
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.ndim == 1 and vertices.size == 0:
            vertices = vertices.reshape(0, 3)
        n = len(vertices)
        if closure:
            by_dim = _closure(simplices)
        else:
            by_dim = {}
            for s in simplices:
                by_dim.setdefault(len(s) - 1, []).append(tuple(int(i) for i in s))
        by_dim[0] = {(i,) for i in range(n)}
        top = max(by_dim) if by_dim else 0
        arrays = []
        for m in range(top + 1):
            faces = by_dim.get(m, ())
            if closure:
                arrays.append(_as_array(faces, m))
            else:
                arrays.append(np.array(list(faces), dtype=np.int64).reshape(-1, m + 1))
        while len(arrays) > 1 and len(arrays[-1]) == 0:
            arrays.pop()
        return cls(vertices, tuple(arrays))

    @classmethod
    def from_faces(cls, vertices: ArrayLike, faces: ArrayLike) -> "EmbeddedComplex":
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        return cls.from_simplices(vertices, faces.tolist())

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def dim(self) -> int:
        return len(self.simplices) - 1 if len(self.vertices) else -1

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.simplices] if len(self.vertices) else []

    def __len__(self):
        return sum(self.counts)

    def __contains__(self, simplex) -> bool:
        if self._lookup is None:
            object.__setattr__(self, "_lookup", {tuple(map(int, r)) for s in self.simplices for r in s})
        return tuple(sorted(int(i) for i in simplex)) in self._lookup

    def iter_simplices(self):
        """All simplices ordered by (dimension, lexicographic tuple)."""
        for s in self.simplices:
            for row in s:
                yield tuple(int(i) for i in row)

    def maximal_simplices(self) -> list[tuple]:
        covered = set()
        for m in range(len(self.simplices) - 1, 0, -1):
            for row in self.simplices[m]:
                for f in itertools.combinations(row.tolist(), m):
                    covered.add(tuple(f))
        return [s for s in self.iter_simplices() if s not in covered]

    def with_vertices(self, vertices: ArrayLike) -> "EmbeddedComplex":
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise ComplexError("vertex array shape changed")
        return EmbeddedComplex(vertices, self.simplices)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    severity: str = "error"  # or "warning"


def _affinely_independent(points: np.ndarray) -> bool:
    if len(points) <= 1:
        return True
    edges = points[1:] - points[0]
    return np.linalg.matrix_rank(edges, tol=AFFINE_TOL) == len(edges)


def _improper_intersection(P: np.ndarray, Q: np.ndarray, shared_p: list[int]) -> bool:
    """True if conv(P) and conv(Q) meet outside the face spanned by the shared vertices.

    Solved as an LP: maximise the barycentric weight on P's non-shared vertices
    over the intersection. Barycentric coordinates are unique for affinely
    independent P, so a positive optimum means a point outside the common face.
    """
    from scipy.optimize import linprog

    p, q = len(P), len(Q)
    d = P.shape[1]
    c = np.zeros(p + q)
    others = [i for i in range(p) if i not in shared_p]
    if not others:
        return False
    c[others] = -1.0
    A_eq = np.zeros((d + 2, p + q))
    A_eq[:d, :p] = P.T
    A_eq[:d, p:] = -Q.T
    A_eq[d, :p] = 1.0
    A_eq[d + 1, p:] = 1.0
    b_eq = np.zeros(d + 2)
    b_eq[d] = b_eq[d + 1] = 1.0
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        return False  # infeasible: disjoint hulls
    return -res.fun > AFFINE_TOL


def validate_complex(K: EmbeddedComplex, geometric: bool = True) -> list[Violation]:
    """Check the complex invariants; returns an empty list for a valid complex.

    Combinatorial and affine-independence problems are errors. Improper
    geometric intersections between simplices are reported as warnings.
    """
    report: list[Violation] = []
    n = len(K.vertices)
    if not np.all(np.isfinite(K.vertices)):
        report.append(Violation("non-finite", "vertex coordinates must be finite"))
    present = set()
    for m, arr in enumerate(K.simplices):
        if arr.size and arr.shape[1] != m + 1:
            report.append(Violation("shape", f"dimension {m} simplices have {arr.shape[1]} vertices"))
            continue
        for row in arr.tolist():
            t = tuple(row)
            if any(i < 0 or i >= n for i in t):
                report.append(Violation("index", f"simplex {t} has an out-of-range vertex index"))
                continue
            if any(a >= b for a, b in zip(t, t[1:])):
                report.append(Violation("order", f"simplex {t} is not strictly increasing"))
            if t in present:
                report.append(Violation("duplicate", f"simplex {t} stored more than once"))
            present.add(t)
    for t in sorted(present, key=lambda s: (len(s), s)):
        if len(t) > 1:
            for f in itertools.combinations(t, len(t) - 1):
                if f not in present:
                    report.append(Violation("missing face", f"face {f} of {t} is not stored"))
        if len(t) > 1 and len(set(t)) == len(t) and all(0 <= i < n for i in t):
            if not _affinely_independent(K.vertices[list(t)]):
                report.append(Violation("degenerate", f"simplex {t} has affinely dependent vertices"))
    if geometric and not any(v.severity == "error" for v in report):
        report.extend(_intersection_warnings(K))
    return report


def _intersection_warnings(K: EmbeddedComplex) -> list[Violation]:
    maximal = K.maximal_simplices()
    if len(maximal) < 2:
        return []
    X = K.vertices
    lo = np.array([X[list(s)].min(axis=0) for s in maximal]) - AFFINE_TOL
    hi = np.array([X[list(s)].max(axis=0) for s in maximal]) + AFFINE_TOL
    out = []
    for i in range(len(maximal)):
        overlap = np.all((lo[i + 1:] <= hi[i]) & (hi[i + 1:] >= lo[i]), axis=1)
        for j in np.nonzero(overlap)[0] + i + 1:
            s, t = maximal[i], maximal[j]
            shared = set(s) & set(t)
            shared_p = [k for k, v in enumerate(s) if v in shared]
            if _improper_intersection(X[list(s)], X[list(t)], shared_p):
                out.append(Violation("intersection",
                                     f"intersection of {s} and {t} is not a shared face",
                                     severity="warning"))
    return out


# ---------------------------------------------------------------------------
# invariants and transforms


def euler_characteristic(K: EmbeddedComplex) -> int:
    return int(sum((-1) ** m * k for m, k in enumerate(K.counts)))


@dataclass(frozen=True, eq=False)
class Isometry:
    """x -> rotation @ x + translation, with ``rotation`` orthogonal."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        w = np.array(self.translation, dtype=np.float64).reshape(-1)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] != w.shape[0]:
            raise ComplexError("rotation must be square and match the translation length")
        if np.abs(R.T @ R - np.eye(len(R))).max() > ORTHO_TOL:
            raise ComplexError("rotation is not orthogonal")
        if abs(abs(np.linalg.det(R)) - 1.0) > ORTHO_TOL:
            raise ComplexError("rotation determinant is not +-1")
        R.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", w)

    @classmethod
    def identity(cls, dim: int = 3) -> "Isometry":
        return cls(np.eye(dim), np.zeros(dim))

    def then(self, other: "Isometry") -> "Isometry":
        """Apply ``self`` first, then ``other``."""
        return Isometry(other.rotation @ self.rotation,
                        other.rotation @ self.translation + other.translation)

    def __call__(self, points: ArrayLike) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def apply_isometry(K: EmbeddedComplex, T: Isometry) -> EmbeddedComplex:
    """Map every vertex x to R x + w; combinatorics are untouched.

    The set written R K in the usual ECT notation (points R^-1 x) corresponds
    to passing ``Isometry(R.T, 0)`` here.
    """
    if K.ambient_dim != len(T.translation):
        raise ComplexError(f"isometry acts on R^{len(T.translation)}, complex lives in R^{K.ambient_dim}")
    return K.with_vertices(T(K.vertices))


def normalize_scale(K: EmbeddedComplex) -> EmbeddedComplex:
    """Divide all coordinates by the population std of the flattened coordinate list.

    Coordinates are not recentred.
    """
    if len(K.vertices) < 2:
        raise DegenerateInputError("need at least two vertices to normalise")
    sd = float(np.std(K.vertices))
    if not sd > 0.0:
        raise DegenerateInputError("all vertices coincide; standard deviation is zero")
    return K.with_vertices(K.vertices / sd)


def random_isometry(seed: int, dim: int = 3) -> Isometry:
    """Haar-random orthogonal matrix plus a standard-normal translation."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((dim, dim))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diag(R))
    w = rng.standard_normal(dim)
    return Isometry(Q, w)


# ---------------------------------------------------------------------------
# subdivision

EDGE_SPLIT = "edge_split"
BARYCENTRIC = "barycentric"


def subdivide(K: EmbeddedComplex, scheme: str = EDGE_SPLIT) -> EmbeddedComplex:
    if scheme == EDGE_SPLIT:
        return _edge_split(K)
    if scheme == BARYCENTRIC:
        return _barycentric(K)
    raise ComplexError(f"unknown subdivision scheme {scheme!r}")


def _edge_split(K: EmbeddedComplex) -> EmbeddedComplex:
    if K.dim > 2:
        raise ComplexError("edge_split supports complexes of dimension <= 2 only")
    X = K.vertices
    n = len(X)
    edges = K.simplices[1] if K.dim >= 1 else np.zeros((0, 2), dtype=np.int64)
    mid = {tuple(e): n + i for i, e in enumerate(edges.tolist())}
    new_x = np.concatenate([X, (X[edges[:, 0]] + X[edges[:, 1]]) / 2.0]) if len(edges) else X.copy()
    out = []
    tri = set()
    if K.dim >= 2:
        for a, b, c in K.simplices[2].tolist():
            ab, ac, bc = mid[(a, b)], mid[(a, c)], mid[(b, c)]
            for t in ((a, ab, ac), (b, ab, bc), (c, ac, bc), (ab, ac, bc)):
                tri.add(tuple(sorted(t)))
    out.extend(tri)
    for (a, b), m in mid.items():
        out.append((a, m))
        out.append((b, m))
    return EmbeddedComplex.from_simplices(new_x, out)


def _barycentric(K: EmbeddedComplex) -> EmbeddedComplex:
    X = K.vertices
    n = len(X)
    index = {}
    coords = [X]
    extra = []
    for s in K.iter_simplices():
        if len(s) == 1:
            index[s] = s[0]
        else:
            index[s] = n + len(extra)
            extra.append(X[list(s)].mean(axis=0))
    if extra:
        coords.append(np.array(extra))
    new_x = np.concatenate(coords)
    # maximal flags: chains of faces ending at each maximal simplex
    chains = []
    for top in K.maximal_simplices():
        for perm in itertools.permutations(top):
            chain = [index[tuple(sorted(perm[: r + 1]))] for r in range(len(perm))]
            chains.append(chain)
    return EmbeddedComplex.from_simplices(new_x, chains)


# ---------------------------------------------------------------------------
# mesh I/O


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _assemble(vertices: np.ndarray, faces: list[tuple[int, tuple]]) -> EmbeddedComplex:
    """Merge identical vertices and duplicate triangles, then close under faces."""
    _, first, inverse = np.unique(vertices, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # keep first-occurrence order for the surviving vertices
    keep = np.sort(first)
    remap_keep = np.empty(len(vertices), dtype=np.int64)
    order_of_unique = np.argsort(np.argsort(first))
    remap_keep[:] = order_of_unique[inverse]
    if len(keep) < len(vertices):
        log.info("merged %d duplicate vertices", len(vertices) - len(keep))
    tris = set()
    for lineno, f in faces:
        g = tuple(sorted(int(remap_keep[i]) for i in f))
        if len(set(g)) < 3:
            log.warning("line %d: face collapses after merging duplicate vertices; dropped", lineno)
            continue
        tris.add(g)
    if len(tris) < len(faces):
        log.info("dropped %d duplicate or collapsed faces", len(faces) - len(tris))
    return EmbeddedComplex.from_simplices(vertices[keep], sorted(tris))


def parse_off(text) -> EmbeddedComplex:
    """Parse an ASCII OFF triangle mesh (string or text stream)."""
    if not isinstance(text, str):
        text = text.read()
    lines = _content_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshParseError(1, "empty input") from None
    if header.split()[0] != "OFF":
        raise MeshParseError(lineno, f"expected 'OFF' header, got {header.split()[0]!r}")
    rest = header.split()[1:]
    if rest:
        counts_line, counts = lineno, rest
    else:
        try:
            counts_line, line = next(lines)
        except StopIteration:
            raise MeshParseError(lineno + 1, "missing counts line") from None
        counts = line.split()
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshParseError(counts_line, "counts line must be 'V F E'") from None
    if nv < 0 or nf < 0:
        raise MeshParseError(counts_line, "negative counts")
    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshParseError(lineno + 1, f"expected {nv} vertices, found {i}") from None
        parts = line.split()
        if len(parts) < 3:
            raise MeshParseError(lineno, "vertex line needs three coordinates")
        try:
            verts[i] = [float(p) for p in parts[:3]]
        except ValueError:
            raise MeshParseError(lineno, "non-numeric vertex coordinate") from None
    faces = []
    for i in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshParseError(lineno + 1, f"expected {nf} faces, found {i}") from None
        try:
            parts = [int(p) for p in line.split()]
        except ValueError:
            raise MeshParseError(lineno, "non-integer face entry") from None
        if not parts or parts[0] != 3 or len(parts) < 4:
            raise MeshParseError(lineno, "only triangular faces '3 i j k' are supported")
        idx = parts[1:4]
        if any(j < 0 or j >= nv for j in idx):
            raise MeshParseError(lineno, f"vertex index out of range in {idx}")
        faces.append((lineno, tuple(idx)))
    extra = next(lines, None)
    if extra is not None:
        raise MeshParseError(extra[0], "unexpected content after the declared faces")
    return _assemble(verts, faces)


def emit_off(K: EmbeddedComplex) -> str:
    """Serialise a triangle mesh (plus isolated vertices) as OFF."""
    if K.ambient_dim != 3:
        raise ComplexError("OFF output requires coordinates in R^3")
    bad = [s for s in K.maximal_simplices() if len(s) not in (1, 3)]
    if bad:
        raise ComplexError(f"OFF cannot represent maximal simplex {bad[0]}")
    tris = K.simplices[2] if K.dim >= 2 else np.zeros((0, 3), dtype=np.int64)
    nedges = len(K.simplices[1]) if K.dim >= 1 else 0
    buf = io.StringIO()
    buf.write("OFF\n")
    buf.write(f"{len(K.vertices)} {len(tris)} {nedges}\n")
    for x in K.vertices:
        buf.write(" ".join(f"{c:.17g}" for c in x) + "\n")
    for t in tris:
        buf.write(f"3 {t[0]} {t[1]} {t[2]}\n")
    return buf.getvalue()


def parse_obj(text) -> EmbeddedComplex:
    """Read the ``v`` and ``f`` records of a Wavefront OBJ file; triangles only."""
    if not isinstance(text, str):
        text = text.read()
    verts, faces = [], []
    for lineno, line in _content_lines(text):
        parts = line.split()
        if parts[0] == "v":
            try:
                verts.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise MeshParseError(lineno, "non-numeric vertex coordinate") from None
            if len(verts[-1]) != 3:
                raise MeshParseError(lineno, "vertex line needs three coordinates")
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshParseError(lineno, "only triangular faces are supported")
            idx = []
            for p in parts[1:]:
                try:
                    j = int(p.split("/")[0])
                except ValueError:
                    raise MeshParseError(lineno, f"bad face index {p!r}") from None
                j = j - 1 if j > 0 else len(verts) + j
                if j < 0 or j >= len(verts):
                    raise MeshParseError(lineno, f"vertex index {p} out of range")
                idx.append(j)
            faces.append((lineno, tuple(idx)))
    return _assemble(np.array(verts, dtype=np.float64).reshape(-1, 3), faces)


def read_mesh(path) -> EmbeddedComplex:
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    if path.lower().endswith(".obj"):
        return parse_obj(text)
    return parse_off(text)


def write_off(K: EmbeddedComplex, path) -> None:
    with open(path, "w") as fh:
        fh.write(emit_off(K))
