import numpy as np
import pytest

from bregbayes.models import make_model
from bregbayes.sampler import exact_stream

# small instances of every zoo model
ZOO_CASES = {
    "gaussian": {"mu": [1.0, 2.0], "cov": [1.0, 4.0]},
    "gaussian_linear": {
        "A": [[1.0, 0.5], [0.0, 1.0], [1.0, -1.0]],
        "y": [1.0, 0.0, 2.0],
        "sigma": 0.5,
        "prior_precision": 1.0,
    },
    "laplace_iid": {"n": 3},
    "lasso_1d": {},
    "quartic": {"n": 2},
    "exp_linear": {"n": 2},
    "exponential_cone": {"n": 2},
    "truncated_gaussian_box": {},
    "exp_on_cone": {},
}


def zoo_model(name):
    return make_model(name, ZOO_CASES[name])


def draws(model, N, seed=0):
    return np.concatenate(list(exact_stream(model, N, seed)))


def fd_grad(pot, x, rel=1e-5):
    """Central differences, with the step kept clear of kinks and boundaries at 0."""
    h = rel * (1.0 + np.linalg.norm(x))
    if pot.nonsmooth is not None:
        h = min(h, 0.5 * float(np.min(np.abs(x))))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (pot.value(x + e) - pot.value(x - e)) / (2 * h)
    return g


@pytest.fixture(params=sorted(ZOO_CASES))
def zoo(request):
    return zoo_model(request.param)
