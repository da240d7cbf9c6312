"""Optimization core: multi-level water-filling, budget bisection, ratio iteration.

One closed form covers all variants. For a transmitter with consumption
slope d, sector weight lam, budget multiplier mu, per-subcarrier aggregate
price P(n), served-user rate multiplier tau(n), and CINR chi(n):

    p(n) = clamp( (1+tau(n)) / D(n) - 1/chi(n), 0, cap(n) )
    D(n) = (ln2/delta_f) * (lam*d + mu) + P(n)

Pricing off sets P = 0, no rate constraints set tau = 0; the cut-off value
D(n)/(1+tau(n)) is the CINR threshold below which a subcarrier stays silent.
The budget multiplier comes from a feasibility-preserving bisection, and the
sector weight lam from the classic ratio update lam <- rate/consumed until
the parametric surplus rate - lam*consumed is driven to zero.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

__all__ = [
    "SolverVariant",
    "SolverConfig",
    "WaterfillInputs",
    "BisectionResult",
    "DinkelbachResult",
    "AlphaState",
    "ConvergenceError",
    "SolverConfigError",
    "SectorProblem",
    "cutoff",
    "waterfill",
    "bisect_mu",
    "solve_parametric",
    "f_of_lambda",
    "dinkelbach_lambda",
    "throughput_max_step",
    "default_mann_delta",
    "mann_update",
    "update_dual_prices",
    "solve_single_transmitter",
    "load_waterfill_inputs",
    "save_waterfill_inputs",
]

LN2 = math.log(2.0)


class ConvergenceError(RuntimeError):
    """An iterative stage ran out of iterations; carries diagnostics."""


class SolverConfigError(ValueError):
    """The inputs admit no bounded solution (e.g. zero water-filling denominator)."""


class SolverVariant(Enum):
    EE_MAX = "ee_max"
    THROUGHPUT_MAX = "throughput_max"


def default_mann_delta(t: int) -> float:
    """Blend weight of the damped iterate update: 1 at t=0, then t/(2t+1)."""
    if t <= 0:
        return 1.0
    return t / (2.0 * t + 1.0)


@dataclass(frozen=True)
class SolverConfig:
    variant: SolverVariant = SolverVariant.EE_MAX
    pricing: bool = True
    qos: bool = False
    dinkelbach_eps: float = 1e-6
    dinkelbach_max_iters: int = 50
    bisection_eps: float = 1e-9
    bisection_max_iters: int = 200
    budget_rel_tol: float = 1e-9
    mann_delta: Callable[[int], float] = default_mann_delta
    qos_alpha0: float = 2.5e-4
    qos_beta: float = 2.0
    qos_kappa: float = 0.9
    # the reference step constant is calibrated for rates counted in kbit/s,
    # so deficits in bits/sec are scaled by this factor inside the tau update
    qos_rate_scale: float = 1e-3
    tau_cap: float = 1e6

    def __post_init__(self):
        if self.dinkelbach_eps <= 0 or self.bisection_eps <= 0:
            raise ValueError("tolerances must be > 0")
        if self.dinkelbach_max_iters < 1 or self.bisection_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.qos_alpha0 <= 0:
            raise ValueError("qos_alpha0 must be > 0")
        if self.qos_beta <= 1.0:
            raise ValueError("qos_beta must be > 1")
        if not 0.0 < self.qos_kappa < 1.0:
            raise ValueError("qos_kappa must lie in (0, 1)")
        if abs(self.mann_delta(0) - 1.0) > 1e-12:
            raise ValueError("mann_delta(0) must be 1")
        for t in (1, 2, 10, 1000):
            d = self.mann_delta(t)
            if not 0.0 < d < 1.0:
                raise ValueError(f"mann_delta({t}) = {d} outside (0, 1)")


@dataclass(frozen=True)
class WaterfillInputs:
    """Per-subcarrier data of one transmitter's subproblem.

    Arrays are aligned with the transmitter's usable subcarriers. ``chi`` is
    the scheduled user's CINR (zero where nothing is scheduled); ``price_sum``
    aggregates (1+tau_victim)*price over victims; ``tau`` is the scheduled
    user's own rate multiplier. ``lam`` rides along so the budget bisection
    sees the full water level.
    """

    chi: np.ndarray
    price_sum: np.ndarray
    tau: np.ndarray
    slope: float
    delta_f: float
    total_cap: float
    per_subcarrier_cap: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        chi = np.atleast_1d(np.asarray(self.chi, dtype=float))
        object.__setattr__(self, "chi", chi)
        for name in ("chi", "price_sum", "tau", "per_subcarrier_cap"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 0:
                arr = np.full(chi.shape, float(arr))
            object.__setattr__(self, name, arr)
            if arr.shape != chi.shape:
                raise ValueError(f"{name} shape {arr.shape} != chi shape {chi.shape}")
            if arr.size and float(arr.min()) < 0:
                raise ValueError(f"negative entry in {name}")
        if self.total_cap <= 0:
            raise ValueError("total_cap must be > 0")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be > 0")
        if self.slope <= 0:
            raise ValueError("slope must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    @property
    def n(self) -> int:
        return self.chi.shape[0]


def _denominator(inputs: WaterfillInputs, mu: float) -> np.ndarray:
    return (LN2 / inputs.delta_f) * (inputs.lam * inputs.slope + mu) + inputs.price_sum


def cutoff(inputs: WaterfillInputs, mu: float) -> np.ndarray:
    """CINR threshold per subcarrier; chi at or below it gets zero power."""
    return _denominator(inputs, mu) / (1.0 + inputs.tau)


def waterfill(inputs: WaterfillInputs, mu: float) -> np.ndarray:
    """Closed-form powers at fixed multipliers, clamped to [0, cap].

    Raises SolverConfigError when the water level is unbounded, i.e. the
    denominator vanishes while the subcarrier cap is infinite.
    """
    denom = _denominator(inputs, mu)
    zero_denom = denom <= 0.0
    if np.any(zero_denom & (inputs.chi > 0.0) & ~np.isfinite(inputs.per_subcarrier_cap)):
        raise SolverConfigError(
            "unbounded water level: lam, mu and prices are all zero with no "
            "finite per-subcarrier cap"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        level = np.where(zero_denom, np.inf, (1.0 + inputs.tau) / denom)
        inv_chi = np.where(inputs.chi > 0.0, 1.0 / inputs.chi, np.inf)
        p = np.where(inputs.chi > 0.0, level - inv_chi, 0.0)
    return np.clip(p, 0.0, inputs.per_subcarrier_cap)


@dataclass
class BisectionResult:
    mu: float
    powers: np.ndarray
    iterations: int


def bisect_mu(
    inputs: WaterfillInputs,
    eps: float = 1e-9,
    max_iters: int = 200,
    budget_rel_tol: float = 1e-9,
) -> BisectionResult:
    """Budget multiplier by bisection, feasible side returned.

    If the unconstrained allocation already fits the budget the multiplier is
    zero (complementary slackness); otherwise the bracket [mu_l, mu_u] is
    grown by doubling and halved until it is below ``eps`` and the feasible
    endpoint uses at least (1 - budget_rel_tol) of the budget.
    """
    total = inputs.total_cap
    p0 = waterfill(inputs, 0.0)
    if p0.sum() <= total:
        return BisectionResult(mu=0.0, powers=p0, iterations=0)

    iterations = 0
    mu_l, mu_u = 0.0, 1.0
    p_u = waterfill(inputs, mu_u)
    while p_u.sum() > total:
        mu_l = mu_u
        mu_u *= 2.0
        p_u = waterfill(inputs, mu_u)
        iterations += 1
        if iterations >= max_iters:
            raise ConvergenceError(
                f"bisection bracket did not close: mu_u={mu_u}, "
                f"sum={p_u.sum()}, budget={total}"
            )

    sum_u = p_u.sum()
    while iterations < max_iters:
        tight_interval = (mu_u - mu_l) <= eps * max(1.0, mu_u)
        tight_budget = sum_u >= (1.0 - budget_rel_tol) * total
        if tight_interval and tight_budget:
            break
        mid = 0.5 * (mu_l + mu_u)
        if mid <= mu_l or mid >= mu_u:  # interval exhausted in float
            break
        p_mid = waterfill(inputs, mid)
        if p_mid.sum() > total:
            mu_l = mid
        else:
            mu_u, p_u, sum_u = mid, p_mid, p_mid.sum()
        iterations += 1
    else:
        raise ConvergenceError(
            f"bisection exceeded {max_iters} iterations: interval "
            f"[{mu_l}, {mu_u}], feasible sum {sum_u}, budget {total}"
        )
    return BisectionResult(mu=mu_u, powers=p_u, iterations=iterations)


def solve_single_transmitter(inputs: WaterfillInputs, cfg: SolverConfig) -> BisectionResult:
    """One transmitter at fixed lam: budget bisection plus the closed form."""
    return bisect_mu(
        inputs,
        eps=cfg.bisection_eps,
        max_iters=cfg.bisection_max_iters,
        budget_rel_tol=cfg.budget_rel_tol,
    )


# ---------------------------------------------------------------------------
# sector subproblem


@dataclass
class SectorProblem:
    """All active transmitters of one sector sharing a single weight lam.

    ``base_power`` collects the load-independent terms: p0 of every active
    transmitter plus the sleep power of the sector's dormant picos, so that
    consumed() matches the sector supply-power model.
    """

    transmitters: list[WaterfillInputs]
    base_power: float

    def rate(self, powers: list[np.ndarray]) -> float:
        total = 0.0
        for wf, p in zip(self.transmitters, powers):
            total += wf.delta_f * float(np.log2(1.0 + p * wf.chi).sum())
        return total

    def consumed(self, powers: list[np.ndarray]) -> float:
        total = self.base_power
        for wf, p in zip(self.transmitters, powers):
            total += wf.slope * float(p.sum())
        return total

    def f_value(self, lam: float, powers: list[np.ndarray]) -> float:
        return self.rate(powers) - lam * self.consumed(powers)


def solve_parametric(problem: SectorProblem, lam: float, cfg: SolverConfig):
    """Per-transmitter budget solves at a fixed sector weight."""
    powers, mus = [], []
    for wf in problem.transmitters:
        res = solve_single_transmitter(replace(wf, lam=lam), cfg)
        powers.append(res.powers)
        mus.append(res.mu)
    return powers, mus


def f_of_lambda(problem: SectorProblem, lam: float, cfg: SolverConfig) -> float:
    """Parametric surplus max_p rate - lam*consumed at this sector weight."""
    powers, _ = solve_parametric(problem, lam, cfg)
    return problem.f_value(lam, powers)


@dataclass
class DinkelbachResult:
    lam: float
    powers: list[np.ndarray]
    mus: list[float]
    f_value: float
    rate: float
    consumed: float
    iterations: int
    converged: bool

    @property
    def f_normalized(self) -> float:
        return self.f_value / max(1.0, self.consumed)


def dinkelbach_lambda(
    problem: SectorProblem, current_powers: list[np.ndarray], cfg: SolverConfig
) -> DinkelbachResult:
    """Ratio iteration on the sector weight until the surplus vanishes.

    Starts from lam = rate/consumed at the incoming operating point and
    repeats {solve parametric subproblem, re-evaluate ratio} until
    |rate - lam*consumed| <= eps * max(1, consumed). Non-convergence returns
    the last iterate flagged, never raises.
    """
    lam = problem.rate(current_powers) / problem.consumed(current_powers)
    powers, mus = current_powers, [0.0] * len(problem.transmitters)
    f_val = rate = consumed = 0.0
    for it in range(1, cfg.dinkelbach_max_iters + 1):
        powers, mus = solve_parametric(problem, lam, cfg)
        rate = problem.rate(powers)
        consumed = problem.consumed(powers)
        f_val = rate - lam * consumed
        if abs(f_val) <= cfg.dinkelbach_eps * max(1.0, consumed):
            return DinkelbachResult(lam, powers, mus, f_val, rate, consumed, it, True)
        lam = rate / consumed
    return DinkelbachResult(
        lam, powers, mus, f_val, rate, consumed, cfg.dinkelbach_max_iters, False
    )


def throughput_max_step(problem: SectorProblem, cfg: SolverConfig) -> DinkelbachResult:
    """Single parametric solve at lam = 0 (rate maximization, no ratio loop)."""
    powers, mus = solve_parametric(problem, 0.0, cfg)
    rate = problem.rate(powers)
    consumed = problem.consumed(powers)
    return DinkelbachResult(
        lam=0.0, powers=powers, mus=mus, f_value=math.nan, rate=rate,
        consumed=consumed, iterations=1, converged=True,
    )


def mann_update(
    p_old: np.ndarray, p_next: np.ndarray, t: int,
    delta: Callable[[int], float] = default_mann_delta,
) -> np.ndarray:
    """Damped iterate blend (1-delta(t))*old + delta(t)*next."""
    d = delta(t)
    return (1.0 - d) * np.asarray(p_old, dtype=float) + d * np.asarray(p_next, dtype=float)


# ---------------------------------------------------------------------------
# minimum-rate dual prices


@dataclass
class AlphaState:
    """Adaptive subgradient step sizes and last-seen rate deficits, per user."""

    alpha: np.ndarray
    prev_deficit: np.ndarray | None = None

    @staticmethod
    def initial(n_users: int, alpha0: float) -> "AlphaState":
        return AlphaState(alpha=np.full(n_users, alpha0, dtype=float))


def update_dual_prices(
    tau: np.ndarray,
    rates: np.ndarray,
    r_min: np.ndarray,
    state: AlphaState,
    cfg: SolverConfig,
):
    """Projected subgradient step on the minimum-rate multipliers.

    tau' = max(0, tau - alpha*(rate - r_min)), with rate deficits expressed
    in kbit/s (see SolverConfig.qos_rate_scale). A user's step grows by beta
    whenever its positive deficit failed to shrink by the factor kappa since
    the previous update. tau is capped to keep infeasible users finite; a
    capped tau marks the user as infeasible at the current rates.

    Returns (tau', new state, infeasible-user mask).
    """
    rates = np.asarray(rates, dtype=float)
    r_min = np.broadcast_to(np.asarray(r_min, dtype=float), rates.shape)
    deficit = (r_min - rates) * cfg.qos_rate_scale
    alpha = state.alpha
    if state.prev_deficit is not None:
        stalled = (deficit > 0.0) & (deficit > cfg.qos_kappa * state.prev_deficit)
        alpha = np.where(stalled, cfg.qos_beta * alpha, alpha)
    new_tau = np.maximum(0.0, tau + alpha * deficit)
    infeasible = new_tau >= cfg.tau_cap
    new_tau = np.minimum(new_tau, cfg.tau_cap)
    return new_tau, AlphaState(alpha=alpha, prev_deficit=deficit), infeasible


# ---------------------------------------------------------------------------
# text-table entry point for one transmitter


def save_waterfill_inputs(inputs: WaterfillInputs, path):
    with open(path, "w") as fh:
        fh.write(
            f"# waterfill slope={inputs.slope!r} delta_f={inputs.delta_f!r} "
            f"total_cap={inputs.total_cap!r} lam={inputs.lam!r}\n"
        )
        fh.write("# n chi price_sum tau per_subcarrier_cap\n")
        for n in range(inputs.n):
            fh.write(
                f"{n} {float(inputs.chi[n])!r} {float(inputs.price_sum[n])!r} "
                f"{float(inputs.tau[n])!r} {float(inputs.per_subcarrier_cap[n])!r}\n"
            )


def load_waterfill_inputs(path) -> WaterfillInputs:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        meta[key] = float(val)
                continue
            _, chi, price, tau, cap = line.split()
            rows.append((float(chi), float(price), float(tau), float(cap)))
    if not rows:
        raise ValueError(f"{path}: no subcarrier rows")
    for key in ("slope", "delta_f", "total_cap"):
        if key not in meta:
            raise ValueError(f"{path}: missing {key} in header")
    arr = np.array(rows, dtype=float)
    return WaterfillInputs(
        chi=arr[:, 0],
        price_sum=arr[:, 1],
        tau=arr[:, 2],
        per_subcarrier_cap=arr[:, 3],
        slope=meta["slope"],
        delta_f=meta["delta_f"],
        total_cap=meta["total_cap"],
        lam=meta.get("lam", 0.0),
    )
