"""Outer-loop orchestration: iterate the per-sector solvers across the network.

One outer iteration, per the distributed protocol: freeze last iteration's
powers and prices, let every sector solve its own subproblem against that
snapshot, damp the power update, step the rate multipliers, then refresh
interference, rates, and prices for the next round. Records are collected
over the measurement set (the central site's sectors) at every iteration,
with record t=0 describing the initial operating point.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import channel as chan
from . import solver as slv
from . import topology as topo
from .model import (
    PowerModelParams,
    SubcarrierGrid,
    Tier,
    TransmitterId,
    consumed_power,
    dbm_to_watts,
    watts_to_dbm,
)

__all__ = [
    "Scenario",
    "Warmup",
    "BASELINES",
    "ExperimentConfig",
    "NetworkInstance",
    "IterationRecord",
    "RunResult",
    "ExperimentResult",
    "build_instance",
    "run_power_control",
    "run_experiment",
    "sector_energy_efficiency",
    "outage_and_rate_cdf",
    "write_run_csv",
    "write_summary_csv",
    "CSV_COLUMNS",
    "SUMMARY_COLUMNS",
]


class Scenario(Enum):
    SINGLE_TIER = "single_tier"
    TWO_TIER = "two_tier"
    TWO_TIER_QOS = "two_tier_qos"


class Warmup(Enum):
    MAX_POWER = "max_power"
    PRICE_FREE_WATERFILL = "price_free_waterfill"


# baseline name -> (solver variant, pricing); max_power skips solving entirely
BASELINES = {
    "max_power": None,
    "no_pricing": (slv.SolverVariant.EE_MAX, False),
    "pricing": (slv.SolverVariant.EE_MAX, True),
    "throughput_max_no_pricing": (slv.SolverVariant.THROUGHPUT_MAX, False),
    "throughput_max_pricing": (slv.SolverVariant.THROUGHPUT_MAX, True),
}


@dataclass(frozen=True)
class ExperimentConfig:
    topology: topo.TopologyConfig = topo.TopologyConfig()
    channel: chan.ChannelConfig = chan.ChannelConfig()
    solver: slv.SolverConfig = slv.SolverConfig()
    grid: SubcarrierGrid = SubcarrierGrid(50, 180e3)
    scenario: Scenario = Scenario.SINGLE_TIER
    warmup: Warmup = Warmup.MAX_POWER
    baselines: tuple[str, ...] = ("max_power", "no_pricing", "pricing")
    reuse: str = "reuse1"
    r_min: float = 0.0
    n_drops: int = 10
    outer_iterations: int = 40
    master_seed: int = 0
    macro_power: PowerModelParams = PowerModelParams(130.0, 4.7)
    pico_power: PowerModelParams = PowerModelParams(56.0, 2.6, sleep_power=6.3)
    macro_total_w: float = dbm_to_watts(46.0)
    pico_total_w: float = dbm_to_watts(30.0)
    macro_subcarrier_cap_w: float | None = None  # None: the total cap applies
    pico_subcarrier_cap_w: float | None = None

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.n_drops < 1:
            raise ValueError("n_drops must be >= 1")
        if self.r_min < 0:
            raise ValueError("r_min must be >= 0")
        if self.macro_total_w <= 0 or self.pico_total_w <= 0:
            raise ValueError("total transmit powers must be > 0")
        for b in self.baselines:
            if b not in BASELINES:
                raise ValueError(f"unknown baseline {b!r}, expected one of {sorted(BASELINES)}")
        if self.reuse not in topo.REUSE_MODES:
            raise ValueError(f"unknown reuse mode {self.reuse!r}")


@dataclass
class NetworkInstance:
    """Everything one drop needs to run power control, topology-free.

    Built either from a generated topology or directly from explicit gain
    arrays (tests, oracle instances). Registry order of ``transmitters``
    matches the channel-state gain axis.
    """

    grid: SubcarrierGrid
    channel_state: chan.ChannelState
    schedule: topo.Schedule
    transmitters: list[TransmitterId]
    tx_params: list[PowerModelParams]
    tx_sector: np.ndarray  # owning sector per transmitter
    total_cap: np.ndarray
    per_cap: np.ndarray
    measured_sectors: list[int]
    r_min: np.ndarray  # per user, bits/sec
    sector_tx: list[list[int]] = field(init=False)
    active_tx: np.ndarray = field(init=False)

    def __post_init__(self):
        n_sectors = int(self.tx_sector.max()) + 1 if len(self.tx_sector) else 0
        self.sector_tx = [[] for _ in range(n_sectors)]
        for t, s in enumerate(self.tx_sector):
            self.sector_tx[int(s)].append(t)
        served = self.served_users()
        self.active_tx = np.array([len(served[t]) > 0 for t in range(self.n_tx)])

    @property
    def n_users(self) -> int:
        return self.channel_state.n_users

    @property
    def n_tx(self) -> int:
        return len(self.transmitters)

    @property
    def n_sectors(self) -> int:
        return len(self.sector_tx)

    def served_users(self) -> list[list[int]]:
        served = [[] for _ in range(self.n_tx)]
        for k in range(self.n_users):
            served[int(self.schedule.serving[k])].append(k)
        return served

    def measured_users(self) -> np.ndarray:
        txs = [
            t for s in self.measured_sectors for t in self.sector_tx[s]
        ]
        mask = np.isin(self.schedule.serving, txs)
        return np.nonzero(mask)[0]


@dataclass
class IterationRecord:
    """Metrics of one outer iteration over the measured sectors."""

    t: int
    sector_ids: list[int]
    ee: np.ndarray  # bits/Joule per measured sector
    throughput: np.ndarray  # bits/sec
    macro_power_w: np.ndarray
    pico_power_w: list[np.ndarray]
    f_residual: np.ndarray  # |surplus|/consumed per sector, nan before a solve
    user_ids: np.ndarray
    user_rates: np.ndarray
    outage_fraction: float
    max_tau: float
    mean_abs_f: float
    flagged: bool = False


@dataclass
class RunResult:
    baseline: str
    records: list[IterationRecord]
    final_powers: np.ndarray
    final_rates: np.ndarray
    final_tau: np.ndarray


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: dict[str, list[RunResult]]  # baseline -> one RunResult per drop


def sector_energy_efficiency(throughput_bps: float, consumed_w: float) -> float:
    """Sector rate over sector supply power, bits/Joule."""
    return throughput_bps / consumed_w


# ---------------------------------------------------------------------------
# instance construction


def _derive_seed(master_seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(master_seed, spawn_key=tuple(key)).generate_state(1)[0])


def build_instance(config: ExperimentConfig, drop: int = 0) -> NetworkInstance:
    """Generate one drop: topology, gains, association, schedule, caps."""
    picos = config.topology.picos_per_sector if config.scenario != Scenario.SINGLE_TIER else 0
    topo_cfg = replace(
        config.topology,
        picos_per_sector=picos,
        rng_seed=_derive_seed(config.master_seed, drop, 0),
    )
    network = topo.generate_topology(topo_cfg)
    state = chan.compute_gains(
        network, config.grid, config.channel, _derive_seed(config.master_seed, drop, 1)
    )
    budgets = {Tier.MACRO_SECTOR: config.macro_total_w, Tier.PICO: config.pico_total_w}
    assoc = topo.associate_users(network, state, budgets)
    plan = topo.build_reuse_plan(config.reuse, config.grid, network)
    schedule = topo.schedule_equal_bandwidth(assoc, config.grid, plan)

    txs = network.transmitter_ids()
    tx_params, total_cap, per_cap = [], [], []
    for tx in txs:
        if tx.tier == Tier.MACRO_SECTOR:
            tx_params.append(config.macro_power)
            total_cap.append(config.macro_total_w)
            cap = config.macro_subcarrier_cap_w
            per_cap.append(cap if cap is not None else config.macro_total_w)
        else:
            tx_params.append(config.pico_power)
            total_cap.append(config.pico_total_w)
            cap = config.pico_subcarrier_cap_w
            per_cap.append(cap if cap is not None else config.pico_total_w)
    tx_sector = np.array([tx.sector_index for tx in txs], dtype=int)

    central_site = 0
    measured = [
        s for s, sec in enumerate(network.sectors) if sec.site == central_site
    ]
    return NetworkInstance(
        grid=config.grid,
        channel_state=state,
        schedule=schedule,
        transmitters=txs,
        tx_params=tx_params,
        tx_sector=tx_sector,
        total_cap=np.array(total_cap),
        per_cap=np.array(per_cap),
        measured_sectors=measured,
        r_min=np.full(network.n_users, config.r_min, dtype=float),
    )


# ---------------------------------------------------------------------------
# the outer loop


def _initial_powers(inst: NetworkInstance) -> np.ndarray:
    """Max-power start: active transmitters spread the budget over their band."""
    p = np.zeros((inst.n_tx, inst.grid.n_subcarriers))
    for t in range(inst.n_tx):
        usable = inst.schedule.usable[t]
        if inst.active_tx[t] and len(usable):
            p[t, usable] = min(
                inst.total_cap[t] / len(usable), inst.per_cap[t]
            )
    return p


def _build_sector_problem(
    inst: NetworkInstance,
    sector: int,
    cinr: np.ndarray,
    price_sums: np.ndarray | None,
    tau: np.ndarray,
    qos: bool,
):
    """Assemble the sector subproblem from the frozen snapshot.

    Returns (problem, tx indices, usable arrays); inactive picos only add
    their sleep power to the base term.
    """
    tx_idx, wfs, usable_list = [], [], []
    base_power = 0.0
    for t in inst.sector_tx[sector]:
        params = inst.tx_params[t]
        if not inst.active_tx[t]:
            if params.sleep_power is not None:
                base_power += params.sleep_power
            continue
        usable = inst.schedule.usable[t]
        owner = inst.schedule.user_of[t][usable]
        safe_owner = np.maximum(owner, 0)
        chi = np.where(owner >= 0, cinr[safe_owner, usable], 0.0)
        prices = price_sums[t, usable] if price_sums is not None else np.zeros(len(usable))
        if qos:
            tau_own = np.where(owner >= 0, tau[safe_owner], 0.0)
        else:
            tau_own = np.zeros(len(usable))
        wfs.append(
            slv.WaterfillInputs(
                chi=chi,
                price_sum=prices,
                tau=tau_own,
                slope=params.slope,
                delta_f=inst.grid.subcarrier_bandwidth,
                total_cap=float(inst.total_cap[t]),
                per_subcarrier_cap=np.full(len(usable), inst.per_cap[t]),
            )
        )
        tx_idx.append(t)
        usable_list.append(usable)
        base_power += params.p0
    return slv.SectorProblem(transmitters=wfs, base_power=base_power), tx_idx, usable_list


def _measure(
    inst: NetworkInstance,
    t: int,
    powers: np.ndarray,
    rates: np.ndarray,
    tau: np.ndarray,
    f_residual_by_sector: np.ndarray,
    flagged: bool,
) -> IterationRecord:
    served = inst.served_users()
    sec_ids = list(inst.measured_sectors)
    ee, tput, macro_w, pico_w, fres = [], [], [], [], []
    for s in sec_ids:
        rate_sum = 0.0
        macro_p = np.zeros(inst.grid.n_subcarriers)
        picos = []
        for tx in inst.sector_tx[s]:
            rate_sum += float(rates[served[tx]].sum()) if served[tx] else 0.0
            if inst.transmitters[tx].tier == Tier.MACRO_SECTOR:
                macro_p = powers[tx]
                macro_params = inst.tx_params[tx]
            else:
                picos.append((inst.tx_params[tx], powers[tx], bool(inst.active_tx[tx])))
        consumed = consumed_power(macro_params, macro_p) + sum(
            consumed_power(pp, pv, active=act) for pp, pv, act in picos
        )
        ee.append(sector_energy_efficiency(rate_sum, consumed))
        tput.append(rate_sum)
        macro_w.append(float(macro_p.sum()))
        pico_w.append(np.array([pv.sum() for _, pv, _ in picos]))
        fres.append(f_residual_by_sector[s])
    users = inst.measured_users()
    user_rates = rates[users]
    r_min = inst.r_min[users]
    with np.errstate(invalid="ignore"):
        outage = float(np.mean(user_rates < r_min)) if len(users) else 0.0
    fres_arr = np.array(fres)
    finite = fres_arr[np.isfinite(fres_arr)]
    return IterationRecord(
        t=t,
        sector_ids=sec_ids,
        ee=np.array(ee),
        throughput=np.array(tput),
        macro_power_w=np.array(macro_w),
        pico_power_w=pico_w,
        f_residual=fres_arr,
        user_ids=users,
        user_rates=user_rates,
        outage_fraction=outage,
        max_tau=float(tau[users].max()) if len(users) else 0.0,
        mean_abs_f=float(finite.mean()) if len(finite) else math.nan,
        flagged=flagged,
    )


def run_power_control(
    inst: NetworkInstance,
    solver_cfg: slv.SolverConfig,
    baseline: str,
    warmup: Warmup = Warmup.MAX_POWER,
    outer_iterations: int = 40,
    sector_order: list[int] | None = None,
) -> RunResult:
    """Iterate one drop under one baseline for ``outer_iterations`` rounds.

    ``sector_order`` only changes the order sector subproblems are visited in
    (results must not depend on it; every sector reads the same snapshot).
    """
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}")
    mode = BASELINES[baseline]
    if mode is not None:
        variant, pricing = mode
        solver_cfg = replace(solver_cfg, variant=variant, pricing=pricing)
    qos = solver_cfg.qos and mode is not None

    delta_f = inst.grid.subcarrier_bandwidth
    order = list(sector_order) if sector_order is not None else list(range(inst.n_sectors))

    powers = _initial_powers(inst)
    tau = np.zeros(inst.n_users)
    alpha = slv.AlphaState.initial(inst.n_users, solver_cfg.qos_alpha0)
    f_by_sector = np.full(inst.n_sectors, math.nan)
    state = chan.compute_interference_and_cinr(inst.channel_state, inst.schedule, powers)
    rates = chan.all_user_rates(state, inst.schedule, delta_f)

    def solve_all(price_sums, current, pricing_on):
        p_next = current.copy()
        any_flag = False
        for s in order:
            problem, tx_idx, usable = _build_sector_problem(
                inst, s, state.cinr, price_sums if pricing_on else None, tau, qos
            )
            if not problem.transmitters:
                continue
            cur = [current[t][u] for t, u in zip(tx_idx, usable)]
            if solver_cfg.variant is slv.SolverVariant.THROUGHPUT_MAX:
                res = slv.throughput_max_step(problem, solver_cfg)
            else:
                res = slv.dinkelbach_lambda(problem, cur, solver_cfg)
            for t, u, p_new in zip(tx_idx, usable, res.powers):
                p_next[t] = 0.0
                p_next[t][u] = p_new
            f_by_sector[s] = abs(res.f_normalized) if res.f_value == res.f_value else math.nan
            any_flag |= not res.converged
        return p_next, any_flag

    if mode is not None and warmup is Warmup.PRICE_FREE_WATERFILL:
        powers, _ = solve_all(None, powers, pricing_on=False)
        f_by_sector[:] = math.nan
        state = chan.compute_interference_and_cinr(inst.channel_state, inst.schedule, powers)
        rates = chan.all_user_rates(state, inst.schedule, delta_f)

    prices = chan.PriceTable.zeros(inst.n_users, inst.n_tx, inst.grid.n_subcarriers)
    records = [_measure(inst, 0, powers, rates, tau, f_by_sector, False)]

    for t in range(1, outer_iterations):
        flagged = False
        if mode is not None:
            price_sums = prices.price_sums(tau if qos else None)
            p_next, flagged = solve_all(price_sums, powers, solver_cfg.pricing)
            powers = slv.mann_update(powers, p_next, t - 1, solver_cfg.mann_delta)
        if qos:
            tau, alpha, _ = slv.update_dual_prices(tau, rates, inst.r_min, alpha, solver_cfg)
        state = chan.compute_interference_and_cinr(inst.channel_state, inst.schedule, powers)
        rates = chan.all_user_rates(state, inst.schedule, delta_f)
        if mode is not None and solver_cfg.pricing:
            prices = chan.compute_prices(state, inst.schedule, powers)
        records.append(_measure(inst, t, powers, rates, tau, f_by_sector, flagged))

    return RunResult(
        baseline=baseline,
        records=records,
        final_powers=powers,
        final_rates=rates,
        final_tau=tau,
    )


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """All baselines over all drops; solver failures flag records, never abort."""
    solver_cfg = config.solver
    if config.scenario is Scenario.TWO_TIER_QOS:
        solver_cfg = replace(solver_cfg, qos=True)
    runs: dict[str, list[RunResult]] = {b: [] for b in config.baselines}
    for drop in range(config.n_drops):
        inst = build_instance(config, drop)
        for b in config.baselines:
            runs[b].append(
                run_power_control(
                    inst,
                    solver_cfg,
                    baseline=b,
                    warmup=config.warmup,
                    outer_iterations=config.outer_iterations,
                )
            )
    return ExperimentResult(config=config, runs=runs)


# ---------------------------------------------------------------------------
# derived outputs


def outage_and_rate_cdf(run_results: list[RunResult], bin_width_bps: float = 1e3):
    """Outage trajectory averaged over drops plus the final-iteration rate CDF.

    The CDF pools the final-iteration user rates of all drops into
    ``bin_width_bps`` bins; returns (outage_curve, bin_edges, cdf_values).
    """
    n_t = len(run_results[0].records)
    outage = np.zeros(n_t)
    for rr in run_results:
        outage += np.array([rec.outage_fraction for rec in rr.records])
    outage /= len(run_results)
    rates = np.concatenate([rr.records[-1].user_rates for rr in run_results])
    top = math.ceil(max(float(rates.max(initial=0.0)), bin_width_bps) / bin_width_bps)
    edges = np.arange(0, top + 1) * bin_width_bps
    counts, _ = np.histogram(rates, bins=np.append(edges, np.inf))
    cdf = np.cumsum(counts) / counts.sum()
    return outage, edges, cdf


# ---------------------------------------------------------------------------
# CSV output

CSV_COLUMNS = [
    "t",
    "sector",
    "ee_bits_per_joule",
    "throughput_bps",
    "macro_power_dbm",
    "mean_pico_power_dbm",
    "outage",
]

SUMMARY_COLUMNS = [
    "baseline",
    "sweep_key",
    "sweep_value",
    "n_drops",
    "ee_bits_per_joule",
    "throughput_bps",
    "macro_power_dbm",
    "outage",
]


def _fmt(x: float) -> str:
    if x != x:
        return "nan"
    return repr(float(x))


def _dbm_str(watts: float) -> str:
    if watts <= 0:
        return ""
    return _fmt(watts_to_dbm(watts))


def write_run_csv(path, run: RunResult):
    """One row per (iteration, measured sector)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in run.records:
            for i, s in enumerate(rec.sector_ids):
                pico = rec.pico_power_w[i]
                mean_pico = float(pico.mean()) if len(pico) else 0.0
                writer.writerow(
                    [
                        rec.t,
                        s,
                        _fmt(rec.ee[i]),
                        _fmt(rec.throughput[i]),
                        _dbm_str(rec.macro_power_w[i]),
                        _dbm_str(mean_pico) if len(pico) else "",
                        _fmt(rec.outage_fraction),
                    ]
                )


def summarize(result: ExperimentResult, sweep_key: str = "", sweep_value: str = ""):
    """Final-iteration means over drops and measured sectors, per baseline."""
    rows = []
    for baseline, drops in result.runs.items():
        ee, tput, macro_w, outage = [], [], [], []
        for rr in drops:
            rec = rr.records[-1]
            ee.append(rec.ee.mean())
            tput.append(rec.throughput.mean())
            macro_w.append(rec.macro_power_w.mean())
            outage.append(rec.outage_fraction)
        rows.append(
            {
                "baseline": baseline,
                "sweep_key": sweep_key,
                "sweep_value": sweep_value,
                "n_drops": str(len(drops)),
                "ee_bits_per_joule": _fmt(float(np.mean(ee))),
                "throughput_bps": _fmt(float(np.mean(tput))),
                "macro_power_dbm": _dbm_str(float(np.mean(macro_w))),
                "outage": _fmt(float(np.mean(outage))),
            }
        )
    return rows


def write_summary_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
