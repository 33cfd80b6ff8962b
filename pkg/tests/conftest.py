import numpy as np
import pytest

from ectnet.complex import EmbeddedComplex

TETRA_OFF = """OFF
4 4 6
0 0 0
1 0 0
0 1 0
0 0 1
3 0 1 2
3 0 1 3
3 0 2 3
3 1 2 3
"""


@pytest.fixture
def tetra_off():
    return TETRA_OFF


def random_complex(rng, max_simplices=30, n_vertices=None):
    """Random face-closed complex in R^3 with at most ``max_simplices`` simplices."""
    n = n_vertices or int(rng.integers(3, 8))
    X = rng.standard_normal((n, 3))
    simplices = [(i,) for i in range(n)]
    K = EmbeddedComplex.from_simplices(X, simplices)
    for _ in range(40):
        m = int(rng.integers(1, 4))
        s = tuple(sorted(rng.choice(n, size=min(m + 1, n), replace=False).tolist()))
        trial = EmbeddedComplex.from_simplices(X, list(K.iter_simplices()) + [s])
        if len(trial) <= max_simplices:
            K = trial
    return K


def gradient_check(seed=0, t=64, channels=8, level=1, k=39, step=1e-6, floor=1e-6):
    """Largest relative error between backprop and central differences over every coordinate."""
    from ectnet.nn import ModelParams, TrainConfig, compute_gradients, model_forward, smooth_l1_loss
    from ectnet.sphere import icosphere
    from ectnet.topology import ect_field
    from ectnet.complex import normalize_scale
    from ectnet.synth import make_instance

    D, G = icosphere(level)
    cfg = TrainConfig(channels=channels, k=k, beta=0.1)
    E = ect_field(normalize_scale(make_instance("torus", seed, level=2)), D, a=8, t=t)
    P = ModelParams.init(channels, seed)
    target = model_forward(E, G, P, cfg) + np.array([0.2, -0.25])  # linear region, small loss value
    batch = [(E, target)]
    _, grads = compute_gradients(batch, G, P, cfg)

    def loss(Q):
        return smooth_l1_loss(model_forward(E, G, Q, cfg), target, cfg.beta)[0]

    worst = 0.0
    count = 0
    for name in P.names():
        x = getattr(P, name)
        g = getattr(grads, name)
        for idx in np.ndindex(x.shape):
            old = x[idx]
            x[idx] = old + step
            up = loss(P)
            x[idx] = old - step
            down = loss(P)
            x[idx] = old
            fd = (up - down) / (2 * step)
            err = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), floor)
            worst = max(worst, err)
            count += 1
    return worst, count
