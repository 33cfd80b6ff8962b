import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ectnet.complex import (BARYCENTRIC, EDGE_SPLIT, EmbeddedComplex, Isometry, apply_isometry,
                            euler_characteristic, normalize_scale, subdivide)
from ectnet.sphere import icosphere, icosphere_mesh, signed_permutations, point_permutation
from ectnet.synth import make_instance
from ectnet.topology import (EctField, PersistenceDiagram, bottleneck_distance, compactify_diagram,
                             compute_persistence, diagrams_from_csv, diagrams_to_csv, ect_field,
                             euler_curve_by_counting, euler_curve_from_persistence, euler_grid,
                             height_values, landscape_by_rank, landscape_from_diagram)

from conftest import random_complex

E1, E2, E3 = np.eye(3)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def triangle_boundary():
    X = np.array([[0, 0, 0], [0, 0, 0.5], [0, 0, 1.0]])
    return EmbeddedComplex.from_simplices(X, [(0, 1), (1, 2), (0, 2)])


# -- filtration ------------------------------------------------------------

def test_height_values_examples():
    F = height_values(EmbeddedComplex.from_simplices(np.zeros((1, 3))), unit([1, 2, 3]))
    assert F.values.tolist() == [0.0]
    T = EmbeddedComplex.from_faces(np.eye(3), [[0, 1, 2]])
    F = height_values(T, E1)
    assert F.values[F.simplices.index((0, 1, 2))] == 1.0
    with pytest.raises(ValueError):
        height_values(T, [1.0, 1.0, 0.0])


def test_faces_enter_before_cofaces():
    K = make_instance("torus", 2)
    F = height_values(K, unit([0.3, -0.2, 0.9]))
    pos = {F.simplices[i]: p for p, i in enumerate(F.order)}
    for s in F.simplices:
        for k in range(len(s)):
            if len(s) > 1:
                assert pos[s[:k] + s[k + 1:]] < pos[s]


def test_height_values_rotation_multiset():
    K = make_instance("ellipsoid", 4, level=2)
    R = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))[0]
    v = unit([0.2, 0.5, -0.7])
    a = height_values(apply_isometry(K, Isometry(R.T, np.zeros(3))), v).values
    b = height_values(K, R @ v).values
    np.testing.assert_allclose(np.sort(a), np.sort(b), atol=1e-12, rtol=0)


# -- Euler curves ------------------------------------------------------------

def test_counting_two_vertices():
    K = EmbeddedComplex.from_simplices(np.array([[0, 0, 0], [1, 0, 0.0]]))
    c = euler_curve_by_counting(height_values(K, E1), [0.5, 1.5])
    assert c.values.tolist() == [1, 2]


def test_counting_triangle_boundary():
    F = height_values(triangle_boundary(), E3)
    c = euler_curve_by_counting(F, [-0.1, 0.0, 0.25, 0.5, 0.75, 0.99, 1.0, 2.0])
    assert c.values.tolist() == [0, 1, 1, 1, 1, 1, 0, 0]
    p = euler_curve_from_persistence(compute_persistence(F), c.grid)
    assert np.array_equal(p.values, c.values)


def test_curve_ends_at_chi():
    K = make_instance("double_torus", 1)
    F = height_values(normalize_scale(K), unit([1, 1, 1]))
    c = euler_curve_by_counting(F, euler_grid(8, 64))
    assert c.values[-1] == euler_characteristic(K) == -2
    assert c.values[0] == 0


def test_empty_complex_curve():
    K = EmbeddedComplex.from_simplices(np.zeros((0, 3)))
    F = height_values(K, E3)
    assert not euler_curve_from_persistence(compute_persistence(F), euler_grid(1, 8)).values.any()
    assert not euler_curve_by_counting(F, euler_grid(1, 8)).values.any()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_two_routes_agree(seed):
    rng = np.random.default_rng(seed)
    K = random_complex(rng)
    for _ in range(3):
        F = height_values(K, unit(rng.standard_normal(3)))
        g = np.sort(np.concatenate([F.values, rng.uniform(-3, 3, 10)]))
        g = np.unique(g)
        a = euler_curve_by_counting(F, g).values
        b = euler_curve_from_persistence(compute_persistence(F), g).values
        assert np.array_equal(a, b)


# -- persistence ------------------------------------------------------------

def test_persistence_segment():
    K = EmbeddedComplex.from_simplices(np.array([[0, 0, 0], [0, 0, 1.0]]), [(0, 1)])
    H = compute_persistence(height_values(K, E3))
    assert H[0].pairs.tolist() == [[0.0, np.inf]]
    assert len(H[1]) == 0 and len(H[2]) == 0


def test_persistence_triangle_boundary():
    H = compute_persistence(height_values(triangle_boundary(), E3))
    assert H[0].pairs.tolist() == [[0.0, np.inf]]
    assert H[1].pairs.tolist() == [[1.0, np.inf]]


def test_persistence_icosahedron_north_pole():
    P, F = icosphere_mesh(1)
    K = EmbeddedComplex.from_faces(P, F)
    v = P[np.argmax(P[:, 2])]
    H = compute_persistence(height_values(K, v))
    np.testing.assert_allclose(H[0].pairs, [[-1.0, np.inf]], atol=1e-12)
    assert len(H[1]) == 0
    np.testing.assert_allclose(H[2].pairs, [[1.0, np.inf]], atol=1e-12)


def test_persistence_torus_betti():
    K = make_instance("torus", 0)
    H = compute_persistence(height_values(K, unit([0.1, 0.2, 0.97])))
    ess = [int(np.isinf(D.deaths).sum()) for D in H]
    assert ess == [1, 2, 1]


def test_diagram_csv_roundtrip():
    H = compute_persistence(height_values(make_instance("torus", 0), unit([1, 0, 1])))
    text = diagrams_to_csv(H)
    assert "inf" in text
    back = diagrams_from_csv(text)
    for a, b in zip(H, back):
        assert np.array_equal(a.pairs, b.pairs)


# -- landscapes ------------------------------------------------------------

def test_landscape_examples():
    g = np.array([1.0, 2.0, 3.0])
    L = landscape_from_diagram(PersistenceDiagram([[1, 3]]), g, depth=2)
    assert L.samples[0].tolist() == [0, 1, 0]
    assert not L.samples[1].any()
    L = landscape_from_diagram(PersistenceDiagram([[0, 4], [1, 3]]), [2.0], depth=2)
    assert L.samples[:, 0].tolist() == [2, 1]
    x = np.linspace(-2, 5, 15)
    L = landscape_from_diagram(PersistenceDiagram([[0, np.inf]]), x, depth=1)
    np.testing.assert_array_equal(L.samples[0], np.maximum(0, x))


def test_landscape_rank_oracle_examples():
    g = np.linspace(0, 4, 41)
    D = PersistenceDiagram([[1, 3]])
    np.testing.assert_allclose(landscape_by_rank(D, g).samples, landscape_from_diagram(D, g).samples,
                               atol=1e-12, rtol=0)
    empty = PersistenceDiagram(np.zeros((0, 2)))
    assert not landscape_by_rank(empty, g).samples.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_landscape_from_filtration_ranks(seed):
    """Z/2 linear-algebra ranks (no pairing) reproduce the diagram landscape."""
    rng = np.random.default_rng(seed)
    K = random_complex(rng, max_simplices=20)
    F = height_values(K, unit(rng.standard_normal(3)))
    H = compute_persistence(F)
    g = np.linspace(-3, 3, 13)
    for dim in (0, 1):
        direct = landscape_by_rank(F, g, depth=3, dim=dim).samples
        tents = landscape_from_diagram(H[dim], g, depth=3).samples
        np.testing.assert_allclose(direct, tents, atol=1e-12, rtol=0)


def test_landscape_monotone_and_lipschitz():
    rng = np.random.default_rng(3)
    g = np.linspace(-2, 6, 161)
    for _ in range(20):
        b = rng.uniform(0, 4, 8)
        D = PersistenceDiagram(np.stack([b, b + rng.uniform(0, 2, 8)], axis=1))
        S = landscape_from_diagram(D, g, depth=5).samples
        assert np.all(S[:-1] >= S[1:]) and np.all(S >= 0)
        assert np.all(np.abs(np.diff(S, axis=1)) <= np.diff(g) + 1e-12)


# -- compactification and bottleneck ----------------------------------------

def test_compactify_examples():
    C = compactify_diagram(PersistenceDiagram([[0, np.inf]]), a0=1, a1=1)
    assert C.pairs.tolist() == [[0.0, 1.0]]
    C = compactify_diagram(PersistenceDiagram([[-np.inf, np.inf]]))
    assert C.pairs.tolist() == [[-10.0, 10.0]]
    x = np.sort(np.random.default_rng(0).uniform(-20, 20, 200))
    h = compactify_diagram(PersistenceDiagram(np.stack([x, x], 1))).births
    assert np.all(np.diff(h) > 0)


def test_bottleneck_examples():
    D = PersistenceDiagram([[0, 2], [1, 5], [3, np.inf]])
    assert bottleneck_distance(D, D) == 0
    assert bottleneck_distance(PersistenceDiagram([[0, 2]]), PersistenceDiagram(np.zeros((0, 2)))) == 1
    assert bottleneck_distance(PersistenceDiagram([[0, 4]]), PersistenceDiagram([[1, 4]])) == 1
    assert bottleneck_distance(PersistenceDiagram([[0, np.inf]]), PersistenceDiagram([[0, 3]])) == np.inf
    assert bottleneck_distance(PersistenceDiagram([[0, np.inf]]), PersistenceDiagram([[0.5, np.inf]])) == 0.5


def brute_bottleneck(P, Q):
    """Minimum over all augmented perfect matchings (tiny inputs only)."""
    n1, n2 = len(P), len(Q)
    C = np.full((n1 + n2, n2 + n1), np.inf)
    for i in range(n1):
        for j in range(n2):
            C[i, j] = np.abs(P[i] - Q[j]).max()
        C[i, n2 + i] = (P[i, 1] - P[i, 0]) / 2
    for j in range(n2):
        C[n1 + j, j] = (Q[j, 1] - Q[j, 0]) / 2
    C[n1:, n2:] = 0
    best = np.inf
    for perm in itertools.permutations(range(n1 + n2)):
        best = min(best, max((C[i, p] for i, p in enumerate(perm)), default=0.0))
    return best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_bottleneck_matches_brute_force(n1, n2, seed):
    rng = np.random.default_rng(seed)

    def diag(n):
        b = np.round(rng.uniform(0, 5, n), 2)
        return np.stack([b, b + np.round(rng.uniform(0, 3, n), 2)], 1)

    P, Q = diag(n1), diag(n2)
    assert bottleneck_distance(PersistenceDiagram(P), PersistenceDiagram(Q)) == pytest.approx(
        brute_bottleneck(P, Q), abs=1e-12)


def test_bottleneck_lipschitz_in_direction():
    K = normalize_scale(make_instance("torus", 7))
    L = np.linalg.norm(K.vertices, axis=1).max()
    rng = np.random.default_rng(1)
    for _ in range(10):
        v1, v2 = unit(rng.standard_normal(3)), unit(rng.standard_normal(3))
        H1 = compute_persistence(height_values(K, v1))
        H2 = compute_persistence(height_values(K, v2))
        for a, b in zip(H1, H2):
            assert bottleneck_distance(a, b) <= L * np.linalg.norm(v1 - v2) + 1e-9


# -- translations ----------------------------------------------------------

def test_translation_shifts_curve_by_whole_bins():
    a, t = 8.0, 256
    bw = 2 * a / t  # 1/16, exact in binary
    K = make_instance("sphere", 3, level=2)
    K = K.with_vertices(np.round(normalize_scale(K).vertices * 64) / 64)
    k = 5
    w = np.array([0.0, 0.0, k * bw])
    Kw = apply_isometry(K, Isometry(np.eye(3), w))
    g = euler_grid(a, t)
    c = euler_curve_by_counting(height_values(K, E3), g).values
    cw = euler_curve_by_counting(height_values(Kw, E3), g).values
    assert np.array_equal(cw[k:], c[:-k])


def test_translation_shifts_diagrams_and_landscapes():
    K = normalize_scale(make_instance("torus", 1))
    w = np.array([0.3, -0.8, 0.5])
    v = unit([0.4, 0.1, -0.6])
    H = compute_persistence(height_values(K, v))
    Hw = compute_persistence(height_values(apply_isometry(K, Isometry(np.eye(3), w)), v))
    s = v @ w
    for a, b in zip(H, Hw):
        np.testing.assert_allclose(b.pairs, a.pairs + s, atol=1e-9)
    g = np.linspace(-3, 3, 61)
    L = landscape_from_diagram(H[1], g).samples
    Lw = landscape_from_diagram(Hw[1], g + s).samples
    np.testing.assert_allclose(Lw, L, atol=1e-9)


# -- ECT field ----------------------------------------------------------------

@pytest.mark.parametrize("scheme", [EDGE_SPLIT, BARYCENTRIC])
def test_ect_subdivision_invariant(scheme):
    K = normalize_scale(make_instance("torus", 11))
    D, _ = icosphere(3)
    assert ect_field(K, D, t=128).to_bytes() == ect_field(subdivide(K, scheme), D, t=128).to_bytes()


def test_ect_signed_permutation_row_permutation():
    D, _ = icosphere(2)
    K = normalize_scale(make_instance("ellipsoid", 2, level=2))
    E = ect_field(K, D, t=128)
    for R in signed_permutations():
        try:
            pi = point_permutation(D.points, R)
        except ValueError:
            continue
        ER = ect_field(apply_isometry(K, Isometry(R.T, np.zeros(3))), D, t=128)
        # row for v of the rotated complex equals the row for R v of K
        assert np.array_equal(ER.curves, E.curves[pi])


def test_ect_last_bin_is_chi():
    P, F = icosphere_mesh(1)
    E = ect_field(EmbeddedComplex.from_faces(P, F), icosphere(2)[0], a=2, t=64)
    assert np.all(E.curves[:, -1] == 2)


def test_ect_out_of_range_warns_and_clamps(caplog):
    K = make_instance("torus", 0)  # unnormalised: heights around 14
    with caplog.at_level(logging.WARNING, logger="ectnet.topology"):
        E = ect_field(K, icosphere(1)[0], a=8, t=64)
    assert "outside" in caplog.text
    assert np.all(E.curves[:, -1] == 0)


def test_ect_threads_do_not_change_result():
    K = normalize_scale(make_instance("double_torus", 3))
    D, _ = icosphere(4)
    a = ect_field(K, D, t=64, threads=1, chunk=7).to_bytes()
    b = ect_field(K, D, t=64, threads=4, chunk=7).to_bytes()
    assert a == b


def test_ect_file_roundtrip(tmp_path):
    K = normalize_scale(make_instance("sphere", 0, level=2))
    E = ect_field(K, icosphere(10)[0], t=512)
    assert E.curves.shape == (1002, 512)
    E.save(tmp_path / "k.ectf")
    data = (tmp_path / "k.ectf").read_bytes()
    assert data[:4] == b"ECTF"
    assert len(data) == 4 + 4 * 3 + 8 + 1002 * 24 + 1002 * 512 * 4
    F = EctField.load(tmp_path / "k.ectf")
    assert np.array_equal(F.curves, E.curves) and np.array_equal(F.directions, E.directions)
    with pytest.raises(ValueError):
        EctField.from_bytes(data[:-1])
