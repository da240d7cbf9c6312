"""Link gains, noise, interference, CINR, and interference prices.

Gains combine distance path loss, log-normal shadowing, and the 3-sector
horizontal antenna pattern; they are frequency-flat per link unless a
per-subband jitter is switched on. All gains are linear power ratios.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import SubcarrierGrid, Tier, TransmitterId

__all__ = [
    "ChannelConfig",
    "ChannelState",
    "PriceTable",
    "compute_gains",
    "compute_interference_and_cinr",
    "compute_prices",
    "user_rate",
    "all_user_rates",
    "export_gains",
    "import_gains",
]


@dataclass(frozen=True)
class ChannelConfig:
    """Propagation defaults in the style of LTE heterogeneous-network studies.

    Path loss is offset + exponent*log10(d_km) in dB; shadowing std devs are
    per tier in dB; the macro antenna rolls off as 12*(theta/theta3db)^2
    capped at the front-to-back limit. Noise is PSD * subband width * noise
    figure. ``subband_jitter_std_db`` > 0 adds iid per-subband gain jitter.
    """

    macro_pathloss_offset_db: float = 128.1
    macro_pathloss_slope_db: float = 37.6
    pico_pathloss_offset_db: float = 140.7
    pico_pathloss_slope_db: float = 36.7
    macro_shadowing_std_db: float = 8.0
    pico_shadowing_std_db: float = 10.0
    antenna_theta3db_deg: float = 70.0
    antenna_front_back_db: float = 25.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    subband_jitter_std_db: float = 0.0
    min_link_distance_m: float = 1.0

    def __post_init__(self):
        if self.min_link_distance_m <= 0:
            raise ValueError("min_link_distance_m must be > 0")
        if self.subband_jitter_std_db < 0:
            raise ValueError("subband_jitter_std_db must be >= 0")


@dataclass
class ChannelState:
    """Gains plus the interference quantities derived from one allocation.

    ``g`` has shape (n_users, n_tx, N). ``interference``, ``cinr`` and
    ``sinr`` are (n_users, N) views of each user's own link, filled in by
    `compute_interference_and_cinr`; ``sinr`` is p*cinr on the serving link.
    """

    g: np.ndarray
    noise_power: float
    transmitters: list[TransmitterId]
    interference: np.ndarray | None = None
    cinr: np.ndarray | None = None
    sinr: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return self.g.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.g.shape[2]


@dataclass
class PriceTable:
    """Interference prices pi[user j, transmitter t, subcarrier n] in 1/watts."""

    pi: np.ndarray

    def price_sums(self, tau: np.ndarray | None = None) -> np.ndarray:
        """Aggregate price seen by each transmitter per subcarrier.

        Returns (n_tx, N): sum over victims j of (1+tau_j)*pi[j, t, n]; with
        ``tau`` omitted the plain sum. Entries for a transmitter's own served
        user are already zero in ``pi``.
        """
        if tau is None:
            return self.pi.sum(axis=0)
        weights = 1.0 + np.asarray(tau, dtype=float)
        return np.einsum("jtn,j->tn", self.pi, weights)

    @staticmethod
    def zeros(n_users: int, n_tx: int, n_subcarriers: int) -> "PriceTable":
        return PriceTable(pi=np.zeros((n_users, n_tx, n_subcarriers)))


def noise_power_watts(config: ChannelConfig, grid: SubcarrierGrid) -> float:
    """Per-subcarrier thermal noise in watts including the receiver noise figure."""
    psd_w = 10.0 ** ((config.noise_psd_dbm_hz - 30.0) / 10.0)
    nf = 10.0 ** (config.noise_figure_db / 10.0)
    return psd_w * grid.subcarrier_bandwidth * nf


def _pattern_db(theta_deg: np.ndarray, config: ChannelConfig) -> np.ndarray:
    roll = 12.0 * (theta_deg / config.antenna_theta3db_deg) ** 2
    return -np.minimum(roll, config.antenna_front_back_db)


def compute_gains(topology, grid: SubcarrierGrid, config: ChannelConfig, rng_seed) -> ChannelState:
    """Long-term gains for every (user, transmitter) link.

    Deterministic given ``rng_seed``. Shadowing is drawn iid per link; when
    the jitter switch is off the per-subcarrier axis is a broadcast view.
    """
    rng = np.random.default_rng(rng_seed)
    txs = topology.transmitter_ids()
    tx_pos = topology.transmitter_positions()
    users = topology.user_positions
    n_users, n_tx = len(users), len(txs)

    diff = users[:, None, :] - tx_pos[None, :, :]
    dist = np.maximum(
        np.sqrt((diff**2).sum(axis=2)), config.min_link_distance_m
    )
    d_km = dist / 1000.0

    is_macro = np.array([tx.tier == Tier.MACRO_SECTOR for tx in txs])
    pl_db = np.where(
        is_macro[None, :],
        config.macro_pathloss_offset_db
        + config.macro_pathloss_slope_db * np.log10(d_km),
        config.pico_pathloss_offset_db
        + config.pico_pathloss_slope_db * np.log10(d_km),
    )

    gain_db = -pl_db
    # macro sector pattern, relative to each sector boresight
    azimuth = np.degrees(np.arctan2(diff[:, :, 1], diff[:, :, 0]))
    for t, tx in enumerate(txs):
        if tx.tier != Tier.MACRO_SECTOR:
            continue
        bore = topology.sectors[tx.sector_index].boresight_deg
        theta = (azimuth[:, t] - bore + 180.0) % 360.0 - 180.0
        gain_db[:, t] += _pattern_db(theta, config)

    shadow_std = np.where(
        is_macro[None, :], config.macro_shadowing_std_db, config.pico_shadowing_std_db
    )
    gain_db += rng.normal(0.0, 1.0, size=(n_users, n_tx)) * shadow_std

    g_link = 10.0 ** (gain_db / 10.0)
    if config.subband_jitter_std_db > 0.0:
        jitter_db = rng.normal(
            0.0, config.subband_jitter_std_db, size=(n_users, n_tx, grid.n_subcarriers)
        )
        g = g_link[:, :, None] * 10.0 ** (jitter_db / 10.0)
    else:
        g = np.broadcast_to(g_link[:, :, None], (n_users, n_tx, grid.n_subcarriers))

    return ChannelState(
        g=g, noise_power=noise_power_watts(config, grid), transmitters=list(txs)
    )


def compute_interference_and_cinr(state: ChannelState, schedule, powers: np.ndarray) -> ChannelState:
    """Fill interference, CINR, and received SINR for the given powers.

    ``powers`` is (n_tx, N). Interference at user k on subcarrier n sums
    p*g over every transmitter except k's serving one; the serving link's
    CINR is g/(noise+I) and its SINR p*cinr.
    """
    serving = schedule.serving
    k_idx = np.arange(state.n_users)
    total_rx = np.einsum("tn,ktn->kn", powers, state.g)
    g_serv = state.g[k_idx, serving, :]
    p_serv = powers[serving, :]
    interference = np.maximum(total_rx - p_serv * g_serv, 0.0)
    cinr = g_serv / (state.noise_power + interference)
    sinr = p_serv * cinr
    return replace(state, interference=interference, cinr=cinr, sinr=sinr)


def compute_prices(state: ChannelState, schedule, powers: np.ndarray) -> PriceTable:
    """Marginal-harm prices each victim user charges other transmitters.

    pi[j, t, n] = sinr_j/(sinr_j+1) * g[j,t,n] / (I_j + noise) for every
    transmitter t other than j's serving one, restricted to subcarriers that
    are both scheduled for j and usable by t; zero elsewhere. Requires the
    derived fields from `compute_interference_and_cinr`.
    """
    if state.sinr is None or state.interference is None:
        raise ValueError("compute_interference_and_cinr must run first")
    n_users, n_tx, n_sub = state.g.shape
    victim = np.where(
        schedule.user_mask,
        state.sinr / (state.sinr + 1.0) / (state.interference + state.noise_power),
        0.0,
    )
    pi = state.g * victim[:, None, :]
    pi[np.arange(n_users), schedule.serving, :] = 0.0
    usable_mask = np.zeros((n_tx, n_sub), dtype=bool)
    for t in range(n_tx):
        usable_mask[t, schedule.usable[t]] = True
    pi *= usable_mask[None, :, :]
    return PriceTable(pi=pi)


def all_user_rates(state: ChannelState, schedule, delta_f: float) -> np.ndarray:
    """Per-user rates in bits/sec over each user's scheduled subcarriers."""
    if state.sinr is None:
        raise ValueError("compute_interference_and_cinr must run first")
    per_subcarrier = np.where(schedule.user_mask, np.log2(1.0 + state.sinr), 0.0)
    return delta_f * per_subcarrier.sum(axis=1)


def user_rate(state: ChannelState, schedule, delta_f: float, user: int) -> float:
    if state.sinr is None:
        raise ValueError("compute_interference_and_cinr must run first")
    ns = schedule.user_subcarriers[user]
    if len(ns) == 0:
        return 0.0
    return float(delta_f * np.log2(1.0 + state.sinr[user, ns]).sum())


def export_gains(state: ChannelState, path):
    """Write rows: user transmitter subcarrier gain (full precision)."""
    with open(path, "w") as fh:
        fh.write(f"# gains noise={state.noise_power!r}\n")
        n_users, n_tx, n_sub = state.g.shape
        for k in range(n_users):
            for t in range(n_tx):
                for n in range(n_sub):
                    fh.write(f"{k} {t} {n} {float(state.g[k, t, n])!r}\n")


def import_gains(path, transmitters: list[TransmitterId]) -> ChannelState:
    """Read an `export_gains` dump back into a ChannelState (gains only)."""
    noise = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("noise="):
                        noise = float(tok[6:])
                continue
            k, t, n, val = line.split()
            rows.append((int(k), int(t), int(n), float(val)))
    if noise is None:
        raise ValueError(f"{path}: missing noise header")
    n_users = max(r[0] for r in rows) + 1
    n_tx = max(r[1] for r in rows) + 1
    n_sub = max(r[2] for r in rows) + 1
    if n_tx != len(transmitters):
        raise ValueError(
            f"{path}: dump has {n_tx} transmitters, registry has {len(transmitters)}"
        )
    g = np.zeros((n_users, n_tx, n_sub))
    for k, t, n, val in rows:
        g[k, t, n] = val
    return ChannelState(g=g, noise_power=noise, transmitters=list(transmitters))
