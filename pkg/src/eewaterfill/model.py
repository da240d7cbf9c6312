"""Domain types, unit conversions, and the base-station power-consumption model.

Conventions used throughout the package: power is carried in linear watts
(dBm only at config/report boundaries), rates in bits/sec, and energy
efficiency in bits/Joule.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "Tier",
    "TransmitterId",
    "SubcarrierGrid",
    "PowerModelParams",
    "PowerAllocation",
    "DualState",
    "consumed_power",
    "sector_consumed_power",
    "dbm_to_watts",
    "watts_to_dbm",
]


class Tier(IntEnum):
    """Transmitter class. Enum order doubles as the association tie-break order."""

    MACRO_SECTOR = 0
    PICO = 1


@dataclass(frozen=True, order=True)
class TransmitterId:
    """Unique transmitter handle: (tier, owning macro sector, index within tier).

    Macro sectors use their global sector index for both ``sector_index`` and
    ``local_index``; picocells carry the sector that contains them plus a
    network-wide pico counter.
    """

    tier: Tier
    sector_index: int
    local_index: int

    def __str__(self):
        tag = "M" if self.tier == Tier.MACRO_SECTOR else "P"
        return f"{tag}{self.local_index}s{self.sector_index}"


@dataclass(frozen=True)
class SubcarrierGrid:
    """OFDMA grid: ``n_subcarriers`` subbands of ``subcarrier_bandwidth`` Hz each."""

    n_subcarriers: int
    subcarrier_bandwidth: float

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError(f"n_subcarriers must be >= 1, got {self.n_subcarriers}")
        if self.subcarrier_bandwidth <= 0:
            raise ValueError(
                f"subcarrier_bandwidth must be > 0, got {self.subcarrier_bandwidth}"
            )

    @property
    def total_bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_bandwidth


@dataclass(frozen=True)
class PowerModelParams:
    """Affine load-dependent supply-power model of one base station.

    ``p0`` is the consumption at the minimum non-zero RF output, ``slope`` the
    load-dependence factor, and ``sleep_power`` the dormant-mode draw (only
    meaningful for picocells, which power down when they serve nobody).
    """

    p0: float
    slope: float
    sleep_power: float | None = None

    def __post_init__(self):
        if self.p0 <= 0:
            raise ValueError(f"p0 must be > 0, got {self.p0}")
        if self.slope <= 0:
            raise ValueError(f"slope must be > 0, got {self.slope}")
        if self.sleep_power is not None:
            if self.sleep_power < 0 or self.sleep_power >= self.p0:
                raise ValueError(
                    f"sleep_power must satisfy 0 <= sleep < p0, got {self.sleep_power}"
                )


def consumed_power(params: PowerModelParams, p_vec, active: bool = True) -> float:
    """Supply power (watts) drawn for the RF output vector ``p_vec``.

    Active: p0 + slope * sum(p_vec). Inactive (pico with no served users):
    the dormant-mode constant.
    """
    p_vec = np.asarray(p_vec, dtype=float)
    if p_vec.size and float(p_vec.min(initial=0.0)) < 0.0:
        raise ValueError("negative transmit power in p_vec")
    if not active:
        if params.sleep_power is None:
            raise ValueError("inactive transmitter has no sleep_power defined")
        return params.sleep_power
    return params.p0 + params.slope * float(p_vec.sum())


def sector_consumed_power(
    macro_params: PowerModelParams,
    macro_p,
    picos: list[tuple[PowerModelParams, np.ndarray, bool]] = (),
) -> float:
    """Total supply power of one sector: macro plus all its picocells.

    ``picos`` holds (params, p_vec, active) per pico; dormant picos contribute
    their sleep power.
    """
    total = consumed_power(macro_params, macro_p, active=True)
    for params, p_vec, active in picos:
        total += consumed_power(params, p_vec, active=active)
    return total


def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watts_to_dbm(x: float) -> float:
    if x <= 0:
        raise ValueError(f"watts_to_dbm requires x > 0, got {x}")
    return 10.0 * math.log10(x) + 30.0


@dataclass
class PowerAllocation:
    """Per-transmitter, per-subcarrier RF output powers with their caps.

    ``powers`` is an (n_tx, N) array aligned with ``transmitters``; caps are
    per-transmitter scalars (``per_subcarrier_cap`` applies uniformly over the
    band of that transmitter).
    """

    transmitters: list[TransmitterId]
    powers: np.ndarray
    total_cap: np.ndarray
    per_subcarrier_cap: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=float)
        self.total_cap = np.asarray(self.total_cap, dtype=float)
        self.per_subcarrier_cap = np.asarray(self.per_subcarrier_cap, dtype=float)
        self._index = {tx: i for i, tx in enumerate(self.transmitters)}
        if len(self._index) != len(self.transmitters):
            raise ValueError("duplicate TransmitterId in allocation")

    def index_of(self, tx: TransmitterId) -> int:
        return self._index[tx]

    def p(self, tx: TransmitterId) -> np.ndarray:
        return self.powers[self._index[tx]]

    def total(self, tx: TransmitterId) -> float:
        return float(self.powers[self._index[tx]].sum())

    def validate(self, budget_slack: float = 1e-9):
        """Raise ValueError on any violated power bound."""
        if np.any(self.powers < 0):
            raise ValueError("negative subcarrier power")
        if np.any(self.powers > self.per_subcarrier_cap[:, None] * (1 + 1e-12) + 1e-15):
            raise ValueError("per-subcarrier cap exceeded")
        sums = self.powers.sum(axis=1)
        if np.any(sums > self.total_cap + budget_slack + 1e-6 * self.total_cap):
            worst = int(np.argmax(sums - self.total_cap))
            raise ValueError(
                f"total power cap exceeded at {self.transmitters[worst]}: "
                f"{sums[worst]} > {self.total_cap[worst]}"
            )


@dataclass
class DualState:
    """Multipliers of the network problem.

    ``lam`` per sector (bits/Joule weights), ``mu`` per transmitter (budget
    multipliers), ``tau`` per user (minimum-rate multipliers), and ``prices``
    as a (n_users, n_tx, N) interference-price array in 1/watts.
    """

    lam: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    prices: np.ndarray | None = None

    def validate(self):
        for name, arr in (("lam", self.lam), ("mu", self.mu), ("tau", self.tau)):
            arr = np.asarray(arr)
            if arr.size and float(arr.min()) < 0:
                raise ValueError(f"negative entry in {name}")
        if self.prices is not None:
            if not np.all(np.isfinite(self.prices)):
                raise ValueError("non-finite interference price")
            if self.prices.size and float(self.prices.min()) < 0:
                raise ValueError("negative interference price")
