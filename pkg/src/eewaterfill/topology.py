"""Network geometry: hexagonal macro grid, pico/user drops, association, scheduling.

Geometry conventions: positions are 2-D meters, azimuths in degrees measured
counter-clockwise from the +x axis. Each site owns a hexagonal cell (Voronoi
cell of the site grid) split into ``sectors_per_site`` azimuth wedges; users
and picos of a sector are dropped inside that wedge. Site 0 is the grid
center and its sectors form the default measurement set.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .model import SubcarrierGrid, Tier, TransmitterId

__all__ = [
    "TopologyConfig",
    "NetworkTopology",
    "Association",
    "Schedule",
    "ReusePlan",
    "GenerationError",
    "generate_topology",
    "associate_users",
    "schedule_equal_bandwidth",
    "build_reuse_plan",
    "write_topology",
    "read_topology",
]


class GenerationError(RuntimeError):
    """A random drop could not satisfy its placement constraints."""


@dataclass(frozen=True)
class TopologyConfig:
    n_sites: int = 19
    inter_site_distance: float = 500.0
    sectors_per_site: int = 3
    users_per_sector: int = 30
    picos_per_sector: int = 0
    pico_hotspot_users: int = 2
    pico_hotspot_radius: float = 40.0
    rng_seed: int = 0
    # minimum separations, meters
    user_min_dist_macro: float = 35.0
    user_min_dist_pico: float = 10.0
    pico_min_dist_macro: float = 75.0
    pico_min_dist_pico: float = 40.0
    max_placement_tries: int = 5000

    def __post_init__(self):
        if self.n_sites < 1 or self.sectors_per_site < 1:
            raise ValueError("n_sites and sectors_per_site must be >= 1")
        if min(self.users_per_sector, self.picos_per_sector, self.pico_hotspot_users) < 0:
            raise ValueError("entity counts must be >= 0")
        if self.inter_site_distance <= 0:
            raise ValueError("inter_site_distance must be > 0")
        if self.picos_per_sector * self.pico_hotspot_users > self.users_per_sector:
            raise ValueError(
                "hotspot users per sector exceed users_per_sector "
                f"({self.picos_per_sector} picos x {self.pico_hotspot_users})"
            )


@dataclass(frozen=True)
class Sector:
    site: int
    boresight_deg: float


@dataclass
class NetworkTopology:
    config: TopologyConfig
    site_positions: np.ndarray  # (n_sites, 2)
    sectors: list[Sector]  # global sector s = site * sectors_per_site + local
    pico_positions: np.ndarray  # (n_picos, 2)
    pico_sector: np.ndarray  # (n_picos,) owning global sector
    user_positions: np.ndarray  # (n_users, 2)
    user_sector: np.ndarray  # (n_users,) home global sector

    @property
    def n_sectors(self) -> int:
        return len(self.sectors)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    @property
    def n_picos(self) -> int:
        return len(self.pico_positions)

    def transmitter_ids(self) -> list[TransmitterId]:
        """Macro sectors in sector order, then picos in drop order."""
        ids = [
            TransmitterId(Tier.MACRO_SECTOR, s, s) for s in range(self.n_sectors)
        ]
        ids += [
            TransmitterId(Tier.PICO, int(self.pico_sector[p]), p)
            for p in range(self.n_picos)
        ]
        return ids

    def transmitter_positions(self) -> np.ndarray:
        macro = np.array(
            [self.site_positions[sec.site] for sec in self.sectors], dtype=float
        ).reshape(self.n_sectors, 2)
        if self.n_picos == 0:
            return macro
        return np.vstack([macro, self.pico_positions])


# ---------------------------------------------------------------------------
# hex grid


def hex_site_positions(n_sites: int, isd: float) -> np.ndarray:
    """Centers of a hexagonal site grid, ring by ring from the origin.

    Within a ring, sites are ordered by azimuth so that small ``n_sites``
    prefixes stay compact (n_sites=3 is an equilateral triangle with side isd).
    """
    sites = [(0.0, 0.0)]
    ring = 1
    while len(sites) < n_sites:
        pts = []
        for q in range(-ring, ring + 1):
            for r in range(-ring, ring + 1):
                if max(abs(q), abs(r), abs(q + r)) != ring:
                    continue
                x = isd * (q + 0.5 * r)
                y = isd * r * math.sqrt(3.0) / 2.0
                pts.append((math.atan2(y, x) % (2.0 * math.pi), x, y))
        pts.sort()
        sites.extend((x, y) for _, x, y in pts)
        ring += 1
    return np.array(sites[:n_sites], dtype=float)


_HEX_AXES = np.array(
    [[math.cos(a), math.sin(a)] for a in (0.0, math.pi / 3.0, 2.0 * math.pi / 3.0)]
)


def in_hexagon(offset: np.ndarray, isd: float) -> bool:
    """True if ``offset`` from a site center lies in that site's hex cell."""
    proj = _HEX_AXES @ np.asarray(offset, dtype=float)
    return bool(np.max(np.abs(proj)) <= isd / 2.0 + 1e-9)


def _angle_diff_deg(a: float, b: float) -> float:
    return (a - b + 180.0) % 360.0 - 180.0


def _in_wedge(offset, boresight_deg: float, width_deg: float) -> bool:
    ang = math.degrees(math.atan2(offset[1], offset[0]))
    return abs(_angle_diff_deg(ang, boresight_deg)) <= width_deg / 2.0 + 1e-9


# ---------------------------------------------------------------------------
# drops


def _sample_sector_point(rng, site_xy, boresight, cfg, accept, what):
    """Rejection-sample a point in the sector wedge that passes ``accept``."""
    width = 360.0 / cfg.sectors_per_site
    radius = cfg.inter_site_distance / math.sqrt(3.0)
    for _ in range(cfg.max_placement_tries):
        theta = math.radians(boresight + width * (rng.random() - 0.5))
        rad = radius * math.sqrt(rng.random())
        p = site_xy + rad * np.array([math.cos(theta), math.sin(theta)])
        off = p - site_xy
        if not in_hexagon(off, cfg.inter_site_distance):
            continue
        ok, _ = accept(p)
        if ok:
            return p
    # report the constraint seen on the final attempt
    _, why = accept(p)
    raise GenerationError(f"could not place {what}: {why or 'sector region'}")


def _sample_disc_point(rng, center_xy, radius, site_xy, boresight, cfg, accept, what):
    """Rejection-sample within a disc, constrained to the owning sector region."""
    width = 360.0 / cfg.sectors_per_site
    p = center_xy
    for _ in range(cfg.max_placement_tries):
        theta = 2.0 * math.pi * rng.random()
        rad = radius * math.sqrt(rng.random())
        p = center_xy + rad * np.array([math.cos(theta), math.sin(theta)])
        off = p - site_xy
        if not in_hexagon(off, cfg.inter_site_distance):
            continue
        if not _in_wedge(off, boresight, width):
            continue
        ok, _ = accept(p)
        if ok:
            return p
    _, why = accept(p)
    raise GenerationError(f"could not place {what}: {why or 'sector region'}")


def generate_topology(config: TopologyConfig) -> NetworkTopology:
    """Drop sites, sectors, picos, and users for one network realization.

    Deterministic for a given ``config.rng_seed``. Per sector the first
    ``picos_per_sector * pico_hotspot_users`` users are hotspot users tied to
    a pico; the rest are uniform over the sector region.
    """
    rng = np.random.default_rng(config.rng_seed)
    sites = hex_site_positions(config.n_sites, config.inter_site_distance)

    sectors = []
    for i in range(config.n_sites):
        for j in range(config.sectors_per_site):
            sectors.append(Sector(site=i, boresight_deg=j * 360.0 / config.sectors_per_site))

    pico_positions: list[np.ndarray] = []
    pico_sector: list[int] = []

    def pico_ok(p):
        d_sites = np.linalg.norm(sites - p, axis=1)
        if d_sites.min() < config.pico_min_dist_macro:
            return False, f"pico-to-site separation {config.pico_min_dist_macro} m"
        for q in pico_positions:
            if np.linalg.norm(q - p) < config.pico_min_dist_pico:
                return False, f"pico-to-pico separation {config.pico_min_dist_pico} m"
        return True, None

    for s, sec in enumerate(sectors):
        for k in range(config.picos_per_sector):
            p = _sample_sector_point(
                rng, sites[sec.site], sec.boresight_deg, config, pico_ok,
                f"pico {k} in sector {s}",
            )
            pico_positions.append(p)
            pico_sector.append(s)

    user_positions: list[np.ndarray] = []
    user_sector: list[int] = []
    picos_arr = (
        np.array(pico_positions) if pico_positions else np.zeros((0, 2))
    )

    def user_ok(p):
        d_sites = np.linalg.norm(sites - p, axis=1)
        if d_sites.min() < config.user_min_dist_macro:
            return False, f"user-to-site separation {config.user_min_dist_macro} m"
        if len(picos_arr):
            if np.linalg.norm(picos_arr - p, axis=1).min() < config.user_min_dist_pico:
                return False, f"user-to-pico separation {config.user_min_dist_pico} m"
        return True, None

    for s, sec in enumerate(sectors):
        own_picos = [i for i in range(len(pico_sector)) if pico_sector[i] == s]
        n_hotspot = 0
        for pi in own_picos:
            for h in range(config.pico_hotspot_users):
                p = _sample_disc_point(
                    rng, picos_arr[pi], config.pico_hotspot_radius,
                    sites[sec.site], sec.boresight_deg, config, user_ok,
                    f"hotspot user {h} of pico {pi}",
                )
                user_positions.append(p)
                user_sector.append(s)
                n_hotspot += 1
        for k in range(config.users_per_sector - n_hotspot):
            p = _sample_sector_point(
                rng, sites[sec.site], sec.boresight_deg, config, user_ok,
                f"user {k} in sector {s}",
            )
            user_positions.append(p)
            user_sector.append(s)

    return NetworkTopology(
        config=config,
        site_positions=sites,
        sectors=sectors,
        pico_positions=picos_arr,
        pico_sector=np.array(pico_sector, dtype=int),
        user_positions=np.array(user_positions, dtype=float).reshape(-1, 2),
        user_sector=np.array(user_sector, dtype=int),
    )


# ---------------------------------------------------------------------------
# association


@dataclass
class Association:
    """Serving transmitter per user plus the inverse served-user lists."""

    transmitters: list[TransmitterId]
    serving: np.ndarray  # (n_users,) transmitter index
    served: list[list[int]]  # per transmitter, user indices in ascending order

    def serving_id(self, user: int) -> TransmitterId:
        return self.transmitters[int(self.serving[user])]


def associate_users(topology, channel, total_cap_by_tier) -> Association:
    """Associate each user with the strongest long-term downlink.

    The metric is the subcarrier-averaged gain times the candidate tier's
    total power budget; exact ties go to the lowest TransmitterId (the
    registry is stored in id order, so argmax already does that).
    """
    txs = channel.transmitters
    avg_gain = channel.g.mean(axis=2)  # (users, tx)
    budgets = np.array([total_cap_by_tier[tx.tier] for tx in txs], dtype=float)
    metric = avg_gain * budgets[None, :]
    serving = np.argmax(metric, axis=1).astype(int)
    served = [[] for _ in txs]
    for k in range(len(serving)):
        served[serving[k]].append(k)
    return Association(transmitters=list(txs), serving=serving, served=served)


# ---------------------------------------------------------------------------
# spectrum reuse + scheduling


@dataclass
class ReusePlan:
    """Usable subcarrier indices per transmitter (registry order)."""

    usable: list[np.ndarray]


REUSE_MODES = ("reuse1", "static_ffr")


def build_reuse_plan(mode: str, grid: SubcarrierGrid, topology) -> ReusePlan:
    """reuse1: everyone may use the whole band. static_ffr: macros keep the
    whole band while each pico is pinned to one half by parity of its index
    (a deliberately simple stand-in for a full reuse plan)."""
    if mode not in REUSE_MODES:
        raise ValueError(f"unknown reuse mode {mode!r}, expected one of {REUSE_MODES}")
    n = grid.n_subcarriers
    full = np.arange(n)
    usable = []
    for tx in topology.transmitter_ids():
        if mode == "reuse1" or tx.tier == Tier.MACRO_SECTOR:
            usable.append(full.copy())
        elif tx.local_index % 2 == 0:
            usable.append(np.arange(n // 2))
        else:
            usable.append(np.arange(n // 2, n))
    return ReusePlan(usable=usable)


@dataclass
class Schedule:
    """Static user-to-subcarrier map produced once per drop.

    ``user_of[t][n]`` is the user served by transmitter t on subcarrier n
    (-1 when unassigned); ``user_subcarriers[k]`` is user k's subcarrier set;
    ``user_mask`` is its (n_users, N) boolean form; ``cochannel[n]`` lists all
    users scheduled on n across the network.
    """

    n_subcarriers: int
    usable: list[np.ndarray]
    user_of: list[np.ndarray]
    serving: np.ndarray
    user_subcarriers: dict[int, np.ndarray]
    user_mask: np.ndarray
    cochannel: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not len(self.cochannel):
            groups = [[] for _ in range(self.n_subcarriers)]
            for k, ns in self.user_subcarriers.items():
                for n in ns:
                    groups[int(n)].append(k)
            self.cochannel = [np.array(sorted(g), dtype=int) for g in groups]


def schedule_equal_bandwidth(
    association: Association, grid: SubcarrierGrid, plan: ReusePlan
) -> Schedule:
    """Split each transmitter's usable band into near-equal contiguous blocks.

    With K served users and U usable subcarriers, the first U mod K users get
    ceil(U/K) subcarriers and the rest floor(U/K), in user-index order.
    """
    n = grid.n_subcarriers
    n_users = len(association.serving)
    user_of = []
    user_subcarriers: dict[int, np.ndarray] = {}
    for t, users in enumerate(association.served):
        owner = np.full(n, -1, dtype=int)
        usable = plan.usable[t]
        k_s = len(users)
        if k_s > 0:
            base, extra = divmod(len(usable), k_s)
            start = 0
            for i, k in enumerate(users):
                size = base + (1 if i < extra else 0)
                block = usable[start : start + size]
                owner[block] = k
                user_subcarriers[k] = np.array(block, dtype=int)
                start += size
        user_of.append(owner)
    for k in range(n_users):
        user_subcarriers.setdefault(k, np.zeros(0, dtype=int))
    mask = np.zeros((n_users, n), dtype=bool)
    for k, ns in user_subcarriers.items():
        mask[k, ns] = True
    return Schedule(
        n_subcarriers=n,
        usable=[np.array(u, dtype=int) for u in plan.usable],
        user_of=user_of,
        serving=association.serving.copy(),
        user_subcarriers=user_subcarriers,
        user_mask=mask,
    )


# ---------------------------------------------------------------------------
# dump / load


def write_topology(topology: NetworkTopology, path):
    """Dump as plain text rows: kind id x y owner."""
    cfg = topology.config
    with open(path, "w") as fh:
        fh.write(
            f"# topology isd={cfg.inter_site_distance!r} "
            f"sectors_per_site={cfg.sectors_per_site} seed={cfg.rng_seed}\n"
        )
        for i, (x, y) in enumerate(topology.site_positions):
            fh.write(f"site {i} {float(x)!r} {float(y)!r} -1\n")
        for s, sec in enumerate(topology.sectors):
            x, y = topology.site_positions[sec.site]
            fh.write(f"sector {s} {float(x)!r} {float(y)!r} {sec.site}\n")
        for p in range(topology.n_picos):
            x, y = topology.pico_positions[p]
            fh.write(f"pico {p} {float(x)!r} {float(y)!r} {int(topology.pico_sector[p])}\n")
        for k in range(topology.n_users):
            x, y = topology.user_positions[k]
            fh.write(f"user {k} {float(x)!r} {float(y)!r} {int(topology.user_sector[k])}\n")


def read_topology(path) -> NetworkTopology:
    """Rebuild a topology from a `write_topology` dump."""
    isd, sps, seed = 500.0, 3, 0
    rows = {"site": [], "sector": [], "pico": [], "user": []}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("isd="):
                        isd = float(tok[4:])
                    elif tok.startswith("sectors_per_site="):
                        sps = int(tok[17:])
                    elif tok.startswith("seed="):
                        seed = int(tok[5:])
                continue
            kind, ident, x, y, owner = line.split()
            rows[kind].append((int(ident), float(x), float(y), int(owner)))
    for kind in rows:
        rows[kind].sort()
    sites = np.array([(x, y) for _, x, y, _ in rows["site"]], dtype=float)
    sectors = [
        Sector(site=owner, boresight_deg=(i % sps) * 360.0 / sps)
        for i, _, _, owner in rows["sector"]
    ]
    n_sectors = len(sectors)
    users = np.array([(x, y) for _, x, y, _ in rows["user"]], dtype=float).reshape(-1, 2)
    user_sector = np.array([owner for _, _, _, owner in rows["user"]], dtype=int)
    picos = np.array([(x, y) for _, x, y, _ in rows["pico"]], dtype=float).reshape(-1, 2)
    pico_sector = np.array([owner for _, _, _, owner in rows["pico"]], dtype=int)
    cfg = TopologyConfig(
        n_sites=len(sites),
        inter_site_distance=isd,
        sectors_per_site=sps,
        users_per_sector=len(users) // max(n_sectors, 1),
        picos_per_sector=len(picos) // max(n_sectors, 1),
        rng_seed=seed,
    )
    return NetworkTopology(
        config=cfg,
        site_positions=sites,
        sectors=sectors,
        pico_positions=picos,
        pico_sector=pico_sector,
        user_positions=users,
        user_sector=user_sector,
    )
