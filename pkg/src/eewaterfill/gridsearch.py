"""Exhaustive-search oracle for desk-size instances.

Evaluates the true network objective (sum of per-transmitter energy
efficiencies, or sum rate) over a joint power grid with budget filtering,
refining the grid around the incumbent. Deliberately independent of the
closed-form solver so fixed points can be checked against it. Instances are
restricted to a handful of transmitters and subcarriers; the search refuses
anything bigger.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import engine as eng
from . import solver as slv
from .model import PowerModelParams, SubcarrierGrid, Tier, TransmitterId
from .channel import ChannelState
from .topology import Association, ReusePlan, Schedule, schedule_equal_bandwidth

__all__ = [
    "InstanceTooLarge",
    "OracleReport",
    "MAX_TRANSMITTERS",
    "MAX_SUBCARRIERS",
    "build_mini_instance",
    "evaluate_objective",
    "solve_fixed_point",
    "grid_search",
    "compare",
    "load_instance",
    "save_instance",
]

MAX_TRANSMITTERS = 2
MAX_SUBCARRIERS = 4


class InstanceTooLarge(ValueError):
    """The instance exceeds what exhaustive search can cover."""


def build_mini_instance(
    gains: np.ndarray,
    noise: float,
    delta_f: float,
    serving: np.ndarray,
    power_params: list[PowerModelParams],
    total_cap: np.ndarray,
    per_cap: np.ndarray | None = None,
) -> eng.NetworkInstance:
    """Wrap explicit gain arrays into a runnable instance.

    Every transmitter is treated as its own (measured) sector; users are
    scheduled with the equal-bandwidth rule over the full band.
    """
    gains = np.asarray(gains, dtype=float)
    n_users, n_tx, n_sub = gains.shape
    serving = np.asarray(serving, dtype=int)
    grid = SubcarrierGrid(n_sub, delta_f)
    txs = [TransmitterId(Tier.MACRO_SECTOR, t, t) for t in range(n_tx)]
    state = ChannelState(g=gains, noise_power=noise, transmitters=txs)
    served = [[] for _ in range(n_tx)]
    for k in range(n_users):
        served[int(serving[k])].append(k)
    assoc = Association(transmitters=txs, serving=serving, served=served)
    plan = ReusePlan(usable=[np.arange(n_sub) for _ in range(n_tx)])
    schedule = schedule_equal_bandwidth(assoc, grid, plan)
    total_cap = np.asarray(total_cap, dtype=float)
    return eng.NetworkInstance(
        grid=grid,
        channel_state=state,
        schedule=schedule,
        transmitters=txs,
        tx_params=list(power_params),
        tx_sector=np.arange(n_tx),
        total_cap=total_cap,
        per_cap=np.asarray(per_cap, dtype=float) if per_cap is not None else total_cap.copy(),
        measured_sectors=list(range(n_tx)),
        r_min=np.zeros(n_users),
    )


def _batched_objective(
    inst: eng.NetworkInstance, powers: np.ndarray, variant: slv.SolverVariant
) -> np.ndarray:
    """Objective for a batch of joint power candidates, shape (B, n_tx, N)."""
    g = np.asarray(inst.channel_state.g)
    serving = inst.schedule.serving
    k_idx = np.arange(inst.n_users)
    g_serv = g[k_idx, serving, :]
    mask = inst.schedule.user_mask
    total_rx = np.einsum("btn,ktn->bkn", powers, g)
    p_serv = powers[:, serving, :]
    interference = np.maximum(total_rx - p_serv * g_serv[None], 0.0)
    sinr = p_serv * g_serv[None] / (inst.channel_state.noise_power + interference)
    rate_kn = np.where(mask[None], np.log2(1.0 + sinr), 0.0)
    user_rates = inst.grid.subcarrier_bandwidth * rate_kn.sum(axis=2)  # (B, K)

    obj = np.zeros(powers.shape[0])
    served = inst.served_users()
    for t in range(inst.n_tx):
        rate_t = user_rates[:, served[t]].sum(axis=1) if served[t] else 0.0
        if variant is slv.SolverVariant.THROUGHPUT_MAX:
            obj += rate_t
        else:
            params = inst.tx_params[t]
            consumed = params.p0 + params.slope * powers[:, t, :].sum(axis=1)
            obj += rate_t / consumed
    return obj


def evaluate_objective(
    inst: eng.NetworkInstance, powers: np.ndarray, variant: slv.SolverVariant
) -> float:
    """Exact network objective at one joint power matrix (n_tx, N)."""
    return float(_batched_objective(inst, powers[None], variant)[0])


def solve_fixed_point(
    inst: eng.NetworkInstance,
    variant: slv.SolverVariant,
    pricing: bool,
    iterations: int = 60,
    solver_cfg: slv.SolverConfig | None = None,
) -> np.ndarray:
    """Run the iterative algorithm on the instance and return final powers."""
    cfg = solver_cfg or slv.SolverConfig()
    baseline = {
        (slv.SolverVariant.EE_MAX, False): "no_pricing",
        (slv.SolverVariant.EE_MAX, True): "pricing",
        (slv.SolverVariant.THROUGHPUT_MAX, False): "throughput_max_no_pricing",
        (slv.SolverVariant.THROUGHPUT_MAX, True): "throughput_max_pricing",
    }[(variant, pricing)]
    run = eng.run_power_control(
        inst, cfg, baseline=baseline, outer_iterations=iterations
    )
    return run.final_powers


def _axis_grids(lows: np.ndarray, highs: np.ndarray, points: int) -> list[np.ndarray]:
    return [np.linspace(lo, hi, points) for lo, hi in zip(lows, highs)]


def grid_search(
    inst: eng.NetworkInstance,
    variant: slv.SolverVariant,
    resolution: int = 200,
    max_evals: float = 4e5,
    refinements: int = 2,
    batch: int = 200_000,
):
    """Best objective over a budget-feasible joint power grid.

    Dimensions are all (transmitter, subcarrier) powers. The per-axis point
    count is ``resolution`` capped so the full grid stays under ``max_evals``
    combinations; after the coarse pass the grid zooms around the incumbent
    ``refinements`` times. Returns (best_powers, best_objective).
    """
    n_tx, n_sub = inst.n_tx, inst.grid.n_subcarriers
    if n_tx > MAX_TRANSMITTERS or n_sub > MAX_SUBCARRIERS:
        raise InstanceTooLarge(
            f"exhaustive search supports at most {MAX_TRANSMITTERS} transmitters "
            f"and {MAX_SUBCARRIERS} subcarriers, got {n_tx} and {n_sub}"
        )
    dims = n_tx * n_sub
    points = min(resolution, max(8, int(max_evals ** (1.0 / dims))))

    cap = np.minimum(
        np.repeat(inst.per_cap, n_sub), np.repeat(inst.total_cap, n_sub)
    )
    lows = np.zeros(dims)
    highs = cap.copy()
    best_obj = -np.inf
    best_p = np.zeros(dims)

    for _ in range(refinements + 1):
        axes = _axis_grids(lows, highs, points)
        total = points**dims
        for start in range(0, total, batch):
            idx = np.arange(start, min(start + batch, total))
            combo = np.empty((len(idx), dims))
            rem = idx
            for d in range(dims - 1, -1, -1):
                rem, pos = np.divmod(rem, points)
                combo[:, d] = axes[d][pos]
            p = combo.reshape(len(idx), n_tx, n_sub)
            feasible = np.all(
                p.sum(axis=2) <= inst.total_cap[None, :] * (1 + 1e-12), axis=1
            )
            if not feasible.any():
                continue
            p = p[feasible]
            obj = _batched_objective(inst, p, variant)
            i = int(np.argmax(obj))
            if obj[i] > best_obj:
                best_obj = float(obj[i])
                best_p = p[i].reshape(dims)
        # zoom: one grid step each side of the incumbent
        step = (highs - lows) / (points - 1)
        lows = np.maximum(best_p - step, 0.0)
        highs = np.minimum(best_p + step, cap)

    return best_p.reshape(n_tx, n_sub), best_obj


@dataclass
class OracleReport:
    solver_objective: float
    grid_objective: float
    gap_rel: float  # (grid - solver) / max(grid, tiny); negative: solver ahead
    max_power_dev: float
    solver_powers: np.ndarray
    grid_powers: np.ndarray


def compare(
    inst: eng.NetworkInstance,
    variant: slv.SolverVariant,
    pricing: bool,
    resolution: int = 200,
    iterations: int = 60,
    solver_cfg: slv.SolverConfig | None = None,
) -> OracleReport:
    """Fixed point of the iterative solver versus the exhaustive grid."""
    p_solver = solve_fixed_point(inst, variant, pricing, iterations, solver_cfg)
    obj_solver = evaluate_objective(inst, p_solver, variant)
    p_grid, obj_grid = grid_search(inst, variant, resolution=resolution)
    gap = (obj_grid - obj_solver) / max(abs(obj_grid), 1e-30)
    return OracleReport(
        solver_objective=obj_solver,
        grid_objective=obj_grid,
        gap_rel=gap,
        max_power_dev=float(np.abs(p_solver - p_grid).max()),
        solver_powers=p_solver,
        grid_powers=p_grid,
    )


# ---------------------------------------------------------------------------
# instance files


def save_instance(path, inst: eng.NetworkInstance, variant: slv.SolverVariant, pricing: bool):
    g = np.asarray(inst.channel_state.g)
    with open(path, "w") as fh:
        fh.write(f"variant {variant.value}\n")
        fh.write(f"pricing {'on' if pricing else 'off'}\n")
        fh.write(f"noise {inst.channel_state.noise_power!r}\n")
        fh.write(f"delta_f {inst.grid.subcarrier_bandwidth!r}\n")
        fh.write(f"subcarriers {inst.grid.n_subcarriers}\n")
        for t, params in enumerate(inst.tx_params):
            fh.write(
                f"tx {t} p0 {params.p0!r} slope {params.slope!r} "
                f"total {inst.total_cap[t]!r} per_cap {inst.per_cap[t]!r}\n"
            )
        for k in range(inst.n_users):
            fh.write(f"user {k} serving {int(inst.schedule.serving[k])}\n")
        for k in range(inst.n_users):
            for t in range(inst.n_tx):
                for n in range(inst.grid.n_subcarriers):
                    fh.write(f"gain {k} {t} {n} {g[k, t, n]!r}\n")


def load_instance(path):
    """Parse an instance file; returns (instance, variant, pricing)."""
    meta = {"variant": "ee_max", "pricing": "on"}
    tx_rows, user_rows, gain_rows = {}, {}, []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            key = parts[0]
            if key in ("variant", "pricing", "noise", "delta_f", "subcarriers"):
                meta[key] = parts[1]
            elif key == "tx":
                t = int(parts[1])
                kv = dict(zip(parts[2::2], parts[3::2]))
                tx_rows[t] = kv
            elif key == "user":
                user_rows[int(parts[1])] = int(parts[3])
            elif key == "gain":
                gain_rows.append((int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])))
            else:
                raise ValueError(f"{path}: unknown row {key!r}")
    for required in ("noise", "delta_f", "subcarriers"):
        if required not in meta:
            raise ValueError(f"{path}: missing {required}")
    n_tx = len(tx_rows)
    n_users = len(user_rows)
    n_sub = int(meta["subcarriers"])
    if n_tx == 0 or n_users == 0 or not gain_rows:
        raise ValueError(f"{path}: needs tx, user, and gain rows")
    gains = np.zeros((n_users, n_tx, n_sub))
    for k, t, n, val in gain_rows:
        gains[k, t, n] = val
    serving = np.array([user_rows[k] for k in range(n_users)], dtype=int)
    params = [
        PowerModelParams(float(tx_rows[t]["p0"]), float(tx_rows[t]["slope"]))
        for t in range(n_tx)
    ]
    total = np.array([float(tx_rows[t]["total"]) for t in range(n_tx)])
    per_cap = np.array(
        [float(tx_rows[t].get("per_cap", tx_rows[t]["total"])) for t in range(n_tx)]
    )
    inst = build_mini_instance(
        gains, float(meta["noise"]), float(meta["delta_f"]), serving, params, total, per_cap
    )
    variant = slv.SolverVariant(meta["variant"])
    pricing = meta["pricing"] in ("on", "true", "1", "yes")
    return inst, variant, pricing
