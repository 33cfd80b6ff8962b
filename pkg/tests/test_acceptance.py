"""Acceptance criteria, one check per criterion.

Run ``python3 tests/test_acceptance.py`` for a PASS/FAIL line per criterion, or
collect with pytest (each criterion is one test; its line is printed too).
"""
from __future__ import annotations

import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import gradient_check, random_complex  # noqa: E402
from ectnet import pipeline as pl  # noqa: E402
from ectnet.complex import (BARYCENTRIC, EDGE_SPLIT, EmbeddedComplex, Isometry, apply_isometry,  # noqa: E402
                            euler_characteristic, normalize_scale, subdivide)
from ectnet.config import ExperimentConfig  # noqa: E402
from ectnet.equivariance import (equivariance_error, l_patch, random_rotations,  # noqa: E402
                                 rotation_max_correlation, smooth_kernel)
from ectnet.nn import ModelParams, TrainConfig, model_forward, octagon_targets  # noqa: E402
from ectnet.sphere import (icosahedral_group, icosphere, icosphere_mesh, point_permutation,  # noqa: E402
                           signed_permutations)
from ectnet.synth import CLASSES, double_torus, make_instance, torus_grid  # noqa: E402
from ectnet.topology import (EctField, PersistenceDiagram, bottleneck_distance,  # noqa: E402
                             compute_persistence, ect_field, euler_curve_by_counting, heights,
                             euler_curve_from_persistence, euler_grid, height_values,
                             landscape_by_rank, landscape_from_diagram)

# tolerances and budgets
LANDSCAPE_TOL = 1e-12
LIPSCHITZ_SLACK = 1e-9
GRAD_REL_TOL = 1e-4
SYMMETRY_TOL = 1e-9
TIE_TOL = 1e-12
DESK_LOSS = 0.01
DESK_ACCURACY = 0.90
DESK_INVARIANCE_FRACTION = 0.10
REFLECTION_MARGIN = 0.05

CRITERIA = []


def criterion(name, budget):
    def wrap(fn):
        CRITERIA.append((name, budget, fn))
        return fn
    return wrap


def unit(v):
    return v / np.linalg.norm(v)


@criterion("chi suite", 1.0)
def chi_suite():
    P, F = icosphere_mesh(3)
    X, T, _ = torus_grid()
    X2, T2 = double_torus()
    got = [euler_characteristic(EmbeddedComplex.from_faces(P, F)),
           euler_characteristic(EmbeddedComplex.from_faces(X, T)),
           euler_characteristic(EmbeddedComplex.from_faces(X2, T2)),
           euler_characteristic(EmbeddedComplex.from_faces(np.eye(3), [[0, 1, 2]]))]
    return got == [2, 0, -2, 1], f"chi = {got}, expected [2, 0, -2, 1]"


@criterion("two-route Euler curves", 30.0)
def two_routes():
    rng = np.random.default_rng(20240601)
    mismatches = 0
    for _ in range(100):
        K = random_complex(rng, max_simplices=30)
        assert len(K) <= 30
        for _ in range(10):
            F = height_values(K, unit(rng.standard_normal(3)))
            g = np.unique(np.concatenate([F.values, euler_grid(4.0, 64)]))
            a = euler_curve_by_counting(F, g).values
            b = euler_curve_from_persistence(compute_persistence(F), g).values
            mismatches += int(not np.array_equal(a, b))
    return mismatches == 0, f"{mismatches} of 1000 curves differ"


@criterion("subdivision invariance", 120.0)
def subdivision_invariance():
    D, _ = icosphere(4)
    a, t = 8.0, 256
    grid = euler_grid(a, t)
    bad, ties = 0, 0
    for i in range(10):
        K = normalize_scale(make_instance(CLASSES[i % 4], 100 + i))
        scheme = EDGE_SPLIT if i < 5 else BARYCENTRIC
        S = subdivide(K, scheme)
        E, ES = ect_field(K, D, a, t), ect_field(S, D, a, t)
        if E.to_bytes() == ES.to_bytes():
            continue
        # only bins where a grid point coincides with an entry value may differ
        h = heights(S.vertices, D.points)
        near = np.abs(h[:, :, None] - grid[None, None, :]).min(axis=0) <= TIE_TOL
        ties += int(near.sum())
        bad += int(np.any((E.curves != ES.curves) & ~near))
    return bad == 0, f"{10 - bad}/10 meshes identical at level 4, t = 256 ({ties} tied bins)"


@criterion("ECT signed-permutation equivariance", 60.0)
def ect_equivariance():
    group = signed_permutations()
    P, _ = icosphere(2)
    # signed permutations act exactly in floating point, so the orbit closes bitwise
    D = np.unique(np.concatenate([P.points @ R.T for R in group]), axis=0)
    failures, checks = 0, 0
    for i, name in enumerate(("torus", "double_torus", "ellipsoid")):
        K = normalize_scale(make_instance(name, 7 + i, level=2))
        E = ect_field(K, D, 8.0, 256)
        for R in group:
            pi = point_permutation(D, R)
            ER = ect_field(apply_isometry(K, Isometry(R.T, np.zeros(3))), D, 8.0, 256)
            failures += int(not np.array_equal(ER.curves, E.curves[pi]))
            checks += 1
    return failures == 0, f"{checks - failures}/{checks} fields are exact row permutations ({len(D)} directions)"


@criterion("landscape oracle equivalence", 10.0)
def landscape_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(0, 21))
        b = rng.uniform(-5, 5, n)
        D = PersistenceDiagram(np.stack([b, b + rng.exponential(2.0, n)], axis=1))
        g = np.linspace(-8, 8, 129)
        x = landscape_from_diagram(D, g, depth=5).samples
        y = landscape_by_rank(D, g, depth=5).samples
        worst = max(worst, float(np.abs(x - y).max()))
    return worst <= LANDSCAPE_TOL, f"max deviation {worst:.3g} (tolerance {LANDSCAPE_TOL:g})"


@criterion("bottleneck Lipschitz", 120.0)
def bottleneck_lipschitz():
    rng = np.random.default_rng(11)
    worst = -np.inf
    names = ("sphere", "torus", "double_torus", "triple_torus", "ellipsoid")
    for i, name in enumerate(names):
        K = normalize_scale(make_instance(name, 50 + i, level=2))
        L = float(np.linalg.norm(K.vertices, axis=1).max())
        for _ in range(100):
            v1, v2 = unit(rng.standard_normal(3)), unit(rng.standard_normal(3))
            H1 = compute_persistence(height_values(K, v1))
            H2 = compute_persistence(height_values(K, v2))
            for d1, d2 in zip(H1, H2):
                worst = max(worst, bottleneck_distance(d1, d2) - L * np.linalg.norm(v1 - v2))
    return worst <= LIPSCHITZ_SLACK, f"max(d_b - L|v1 - v2|) = {worst:.3g} over 500 pairs x 3 dims"


@criterion("gradient check", 120.0)
def gradient():
    worst, count = gradient_check(seed=0, t=64, channels=8, level=1)
    return worst <= GRAD_REL_TOL, f"max relative error {worst:.3g} over {count} coordinates (12 directions)"


@criterion("icosahedral invariance", 60.0)
def icosahedral():
    D, G = icosphere(4)
    cfg = TrainConfig()
    P = ModelParams.init(cfg.channels, 0)
    E = ect_field(normalize_scale(make_instance("double_torus", 3)), D, 8.0, 256)
    y = model_forward(E, G, P, cfg)
    drift = 0.0
    for R in icosahedral_group():
        pi = point_permutation(D.points, R)
        curves = np.empty_like(E.curves)
        curves[pi] = E.curves
        y2 = model_forward(EctField(E.directions, E.a, curves), G, P, cfg)
        drift = max(drift, float(np.abs(y2 - y).max()))
    return drift <= SYMMETRY_TOL, f"max drift {drift:.3g} over 120 elements"


@criterion("equivariance trend", 180.0)
def equivariance_trend():
    def f(X):
        return np.stack([X[:, 0] * X[:, 1] + X[:, 2], np.cos(2 * X[:, 0])], axis=1)

    g = smooth_kernel(0.8, 2, 2, seed=0)
    Rs = random_rotations(20, seed=5, include_identity=False)
    med = []
    for level in (1, 4, 7):
        D, _ = icosphere(level)
        med.append(float(np.median([equivariance_error(g, f, R, D) for R in Rs])))
    ok = med[0] > med[1] > med[2]
    return ok, "median error at levels 1/4/7: " + " > ".join(f"{m:.4g}" for m in med)


@criterion("desk-scale experiment", 1200.0)
def desk_experiment():
    cfg = ExperimentConfig(level=4, resolution=256, epochs=200, lr_drop_epoch=100,
                           per_class_train=5, per_class_eval=5, precision="float32")
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        m = pl.synth_dataset(root, cfg.classes, cfg.per_class_train, cfg.deform_seed,
                             per_class_eval=cfg.per_class_eval, mesh_level=cfg.mesh_level)
        pl.preprocess_ect(m, cfg, root / "ect")
        res = pl.train_model(m, cfg, root / "ect", root / "run")
        rows = pl.embed_meshes(m, root / "run" / "model.ectw", cfg, root / "ect")
        xy = np.array([(r[2], r[3]) for r in rows])
        labels = np.array([e.label for e in m.entries])
        train = np.array([e.split == "train" for e in m.entries])
        acc = pl.nearest_centroid_accuracy(xy[train], labels[train], xy[~train], labels[~train])
        inv = pl.invariance_error_analysis(m, res.params, cfg, num_transforms=10, num_repeats=8)
    T = octagon_targets(cfg.num_classes)
    dmin = min(np.linalg.norm(T[i] - T[j]) for i in range(len(T)) for j in range(i))
    ok = (res.final_loss < DESK_LOSS and acc >= DESK_ACCURACY
          and inv.error < DESK_INVARIANCE_FRACTION * dmin)
    return ok, (f"final loss {res.final_loss:.4g} (< {DESK_LOSS}), held-out accuracy {acc:.0%} "
                f"(>= {DESK_ACCURACY:.0%}), invariance error {inv.error:.4g} "
                f"(< {DESK_INVARIANCE_FRACTION * dmin:.4g})")


@criterion("reflection discrimination", 120.0)
def reflection():
    D, _ = icosphere(7)
    f, g = l_patch(D), l_patch(D, mirror=True)
    Rs = random_rotations(10_000, seed=1, include_identity=False)
    ff = rotation_max_correlation(f, f, D, Rs)
    fg = rotation_max_correlation(f, g, D, Rs)
    margin = (ff - fg) / ff
    return margin >= REFLECTION_MARGIN, f"f.f = {ff:.4g}, f.g = {fg:.4g}, margin {margin:.1%}"


def run(name, budget, fn):
    start = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - start
    within = elapsed <= budget
    status = "PASS" if ok and within else "FAIL"
    line = f"{status} {name}: {detail}; {elapsed:.1f} s (budget {budget:g} s)"
    print(line, flush=True)
    return ok and within, line


@pytest.mark.parametrize("name, budget, fn", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(name, budget, fn):
    ok, line = run(name, budget, fn)
    assert ok, line


if __name__ == "__main__":
    results = [run(*c)[0] for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
