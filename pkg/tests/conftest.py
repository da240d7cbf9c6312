"""Shared randomized-instance generators for solver and acceptance tests."""

import numpy as np

from eewaterfill.model import PowerModelParams
from eewaterfill.solver import WaterfillInputs
from eewaterfill import gridsearch as gs


def random_waterfill_inputs(rng, n_max=8, lam=None, allow_zero_chi=True):
    """One transmitter subproblem with cellular-plausible magnitudes."""
    n = int(rng.integers(1, n_max + 1))
    delta_f = float(rng.choice([15e3, 180e3]))
    slope = float(rng.choice([4.7, 2.6]))
    chi = rng.lognormal(mean=np.log(1e5), sigma=2.5, size=n)
    if allow_zero_chi:
        chi[rng.random(n) < 0.1] = 0.0
    if lam is None:
        lam = 0.0 if rng.random() < 0.1 else float(rng.lognormal(np.log(1e4), 1.5))
    base = (np.log(2.0) / delta_f) * (lam * slope + 1.0)
    price = np.where(
        rng.random(n) < 0.4,
        0.0,
        rng.lognormal(np.log(max(base, 1e-12)), 1.5, size=n),
    )
    tau = np.where(rng.random(n) < 0.5, 0.0, rng.lognormal(-1.0, 1.2, size=n))
    total_cap = float(rng.uniform(0.5, 40.0))
    if rng.random() < 0.7:
        per_cap = np.full(n, total_cap)
    else:
        per_cap = np.full(n, total_cap * rng.uniform(0.05, 0.5))
    return WaterfillInputs(
        chi=chi,
        price_sum=price,
        tau=tau,
        slope=slope,
        delta_f=delta_f,
        total_cap=total_cap,
        per_subcarrier_cap=per_cap,
        lam=lam,
    )


def random_mini_instance(rng, n_tx=None, n_sub=None, users_per_tx=None):
    """A small coupled network with a dominant direct link per user.

    Cross gains sit 10-30 dB below the direct link, the usual cellular
    regime; noise and budgets use the package defaults.
    """
    n_tx = n_tx if n_tx is not None else int(rng.integers(1, 3))
    n_sub = n_sub if n_sub is not None else int(rng.integers(1, 5))
    users_per_tx = users_per_tx if users_per_tx is not None else int(rng.integers(1, 3))
    n_users = n_tx * users_per_tx
    serving = np.repeat(np.arange(n_tx), users_per_tx)
    direct_db = rng.uniform(-110.0, -85.0, size=n_users)
    g = np.zeros((n_users, n_tx, n_sub))
    for k in range(n_users):
        for t in range(n_tx):
            if t == serving[k]:
                link_db = direct_db[k]
            else:
                link_db = direct_db[k] - rng.uniform(10.0, 30.0)
            g[k, t, :] = 10 ** (link_db / 10.0)
    noise = 5.7e-15
    params = [PowerModelParams(130.0, 4.7) for _ in range(n_tx)]
    total = np.full(n_tx, 39.81)
    return gs.build_mini_instance(g, noise, 180e3, serving, params, total)
