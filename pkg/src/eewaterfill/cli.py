"""Command-line front end: run experiments, validate configs, check oracles.

Config files are flat INI key=value sections mirroring the package modules;
every scenario constant has a default here, so an empty file is a valid
config. `run` writes one CSV per (baseline, sweep point, drop) plus a
summary CSV, and prints the summary table verbatim from that file.
"""

import argparse
import configparser
import csv
import io
import os
import sys
from dataclasses import replace

from . import engine as eng
from . import gridsearch as gs
from . import solver as slv
from . import topology as topo
from .channel import ChannelConfig
from .model import PowerModelParams, SubcarrierGrid, dbm_to_watts

__all__ = ["main", "DEFAULTS", "load_config", "build_experiment_config"]


class ConfigError(ValueError):
    pass


# single source of every embedded default; empty string means "unset"
DEFAULTS = {
    "topology": {
        "n_sites": 19,
        "inter_site_distance_m": 500.0,
        "sectors_per_site": 3,
        "users_per_sector": 30,
        "picos_per_sector": 4,
        "pico_hotspot_users": 2,
        "pico_hotspot_radius_m": 40.0,
        "user_min_dist_macro_m": 35.0,
        "user_min_dist_pico_m": 10.0,
        "pico_min_dist_macro_m": 75.0,
        "pico_min_dist_pico_m": 40.0,
    },
    "grid": {
        "n_subcarriers": 50,
        "subcarrier_bandwidth_hz": 180e3,
    },
    "channel": {
        "macro_pathloss_offset_db": 128.1,
        "macro_pathloss_slope_db": 37.6,
        "pico_pathloss_offset_db": 140.7,
        "pico_pathloss_slope_db": 36.7,
        "macro_shadowing_std_db": 8.0,
        "pico_shadowing_std_db": 10.0,
        "antenna_theta3db_deg": 70.0,
        "antenna_front_back_db": 25.0,
        "noise_psd_dbm_hz": -174.0,
        "noise_figure_db": 9.0,
        "subband_jitter_std_db": 0.0,
    },
    "power": {
        "macro_p0_w": 130.0,
        "macro_slope": 4.7,
        "macro_total_dbm": 46.0,
        "macro_subcarrier_cap_dbm": "",
        "pico_p0_w": 56.0,
        "pico_slope": 2.6,
        "pico_sleep_w": 6.3,
        "pico_total_dbm": 30.0,
        "pico_subcarrier_cap_dbm": "",
    },
    "solver": {
        "dinkelbach_eps": 1e-6,
        "dinkelbach_max_iters": 50,
        "bisection_eps": 1e-9,
        "bisection_max_iters": 200,
        "qos_alpha0": 2.5e-4,
        "qos_beta": 2.0,
        "qos_kappa": 0.9,
        "tau_cap": 1e6,
    },
    "experiment": {
        "scenario": "single_tier",
        "warmup": "max_power",
        "baselines": "max_power,no_pricing,pricing",
        "reuse": "reuse1",
        "r_min_kbps": 0.0,
        "n_drops": 10,
        "outer_iterations": 40,
        "seed": 0,
    },
}


def _parse_value(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    raw = raw.strip()
    if isinstance(default, str):
        return raw
    if raw == "":
        return ""
    if isinstance(default, int) and not isinstance(default, bool):
        return int(float(raw))
    return float(raw)


def load_config(path: str | None):
    """Read an INI file onto the defaults table.

    Returns (values, defaulted) where ``defaulted`` lists "section.key" names
    the file did not set.
    """
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    seen = set()
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in cp.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                try:
                    values[section][key] = _parse_value(section, key, raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
                seen.add(f"{section}.{key}")
    defaulted = [
        f"{s}.{k}" for s in DEFAULTS for k in DEFAULTS[s] if f"{s}.{k}" not in seen
    ]
    return values, defaulted


def dump_defaults(stream):
    for section, kv in DEFAULTS.items():
        stream.write(f"[{section}]\n")
        for key, val in kv.items():
            stream.write(f"{key} = {val}\n")
        stream.write("\n")


def build_experiment_config(values) -> eng.ExperimentConfig:
    """Materialize the typed config; raises ConfigError on violated invariants."""
    t, g, c, p, s, e = (
        values["topology"], values["grid"], values["channel"],
        values["power"], values["solver"], values["experiment"],
    )
    try:
        topo_cfg = topo.TopologyConfig(
            n_sites=t["n_sites"],
            inter_site_distance=t["inter_site_distance_m"],
            sectors_per_site=t["sectors_per_site"],
            users_per_sector=t["users_per_sector"],
            picos_per_sector=t["picos_per_sector"],
            pico_hotspot_users=t["pico_hotspot_users"],
            pico_hotspot_radius=t["pico_hotspot_radius_m"],
            user_min_dist_macro=t["user_min_dist_macro_m"],
            user_min_dist_pico=t["user_min_dist_pico_m"],
            pico_min_dist_macro=t["pico_min_dist_macro_m"],
            pico_min_dist_pico=t["pico_min_dist_pico_m"],
        )
        channel_cfg = ChannelConfig(
            macro_pathloss_offset_db=c["macro_pathloss_offset_db"],
            macro_pathloss_slope_db=c["macro_pathloss_slope_db"],
            pico_pathloss_offset_db=c["pico_pathloss_offset_db"],
            pico_pathloss_slope_db=c["pico_pathloss_slope_db"],
            macro_shadowing_std_db=c["macro_shadowing_std_db"],
            pico_shadowing_std_db=c["pico_shadowing_std_db"],
            antenna_theta3db_deg=c["antenna_theta3db_deg"],
            antenna_front_back_db=c["antenna_front_back_db"],
            noise_psd_dbm_hz=c["noise_psd_dbm_hz"],
            noise_figure_db=c["noise_figure_db"],
            subband_jitter_std_db=c["subband_jitter_std_db"],
        )
        solver_cfg = slv.SolverConfig(
            dinkelbach_eps=s["dinkelbach_eps"],
            dinkelbach_max_iters=s["dinkelbach_max_iters"],
            bisection_eps=s["bisection_eps"],
            bisection_max_iters=s["bisection_max_iters"],
            qos_alpha0=s["qos_alpha0"],
            qos_beta=s["qos_beta"],
            qos_kappa=s["qos_kappa"],
            tau_cap=s["tau_cap"],
        )
        grid = SubcarrierGrid(g["n_subcarriers"], g["subcarrier_bandwidth_hz"])
        macro_cap = (
            dbm_to_watts(p["macro_subcarrier_cap_dbm"])
            if p["macro_subcarrier_cap_dbm"] != "" else None
        )
        pico_cap = (
            dbm_to_watts(p["pico_subcarrier_cap_dbm"])
            if p["pico_subcarrier_cap_dbm"] != "" else None
        )
        return eng.ExperimentConfig(
            topology=topo_cfg,
            channel=channel_cfg,
            solver=solver_cfg,
            grid=grid,
            scenario=eng.Scenario(e["scenario"]),
            warmup=eng.Warmup(e["warmup"]),
            baselines=tuple(b.strip() for b in e["baselines"].split(",") if b.strip()),
            reuse=e["reuse"],
            r_min=e["r_min_kbps"] * 1e3,
            n_drops=e["n_drops"],
            outer_iterations=e["outer_iterations"],
            master_seed=e["seed"],
            macro_power=PowerModelParams(p["macro_p0_w"], p["macro_slope"]),
            pico_power=PowerModelParams(
                p["pico_p0_w"], p["pico_slope"], sleep_power=p["pico_sleep_w"]
            ),
            macro_total_w=dbm_to_watts(p["macro_total_dbm"]),
            pico_total_w=dbm_to_watts(p["pico_total_dbm"]),
            macro_subcarrier_cap_w=macro_cap,
            pico_subcarrier_cap_w=pico_cap,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_warnings(values) -> list[str]:
    warnings = []
    e, t = values["experiment"], values["topology"]
    if e["scenario"] == "single_tier" and t["picos_per_sector"] > 0:
        warnings.append(
            f"picos_per_sector={t['picos_per_sector']} is ignored in the "
            "single_tier scenario"
        )
    if e["scenario"] == "two_tier_qos" and e["r_min_kbps"] <= 0:
        warnings.append("two_tier_qos scenario with r_min_kbps=0: no rate constraint binds")
    return warnings


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    if args.dump_defaults:
        dump_defaults(sys.stdout)
        return 0
    if args.config is None:
        print("error: a config path is required unless --dump-defaults is given")
        return 1
    try:
        values, defaulted = load_config(args.config)
        build_experiment_config(values)
    except ConfigError as exc:
        print(f"error: {exc}")
        return 1
    print("OK")
    for warning in config_warnings(values):
        print(f"warning: {warning}")
    for name in defaulted:
        section, key = name.split(".", 1)
        print(f"defaulted {name} = {DEFAULTS[section][key]}")
    return 0


def _parse_sweep(spec: str):
    if "=" not in spec:
        raise ConfigError(f"--sweep expects SECTION.KEY=V1,V2,..., got {spec!r}")
    name, vals = spec.split("=", 1)
    name = name.strip()
    if "." not in name:
        raise ConfigError(f"--sweep key must be SECTION.KEY, got {name!r}")
    section, key = name.split(".", 1)
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError(f"unknown sweep key {name!r}")
    parsed = [_parse_value(section, key, v) for v in vals.split(",") if v.strip()]
    if not parsed:
        raise ConfigError(f"--sweep {name} has no values")
    return section, key, parsed


SCHEMA_TEXT = """\
Per-run CSV (run_<baseline>[_<sweep>]_drop<i>.csv), one row per
(outer iteration, measured sector), '.' decimal separator:
  t                   outer iteration index, 0 is the initial operating point
  sector              global sector id
  ee_bits_per_joule   sector rate / sector supply power
  throughput_bps      sector rate, bits/sec
  macro_power_dbm     sector macro transmit power (empty when 0 W)
  mean_pico_power_dbm mean pico transmit power in the sector (empty if no picos)
  outage              fraction of measured users below their minimum rate

Summary CSV (summary.csv), one row per (baseline, sweep point), final
iteration averaged over drops and measured sectors:
  baseline, sweep_key, sweep_value, n_drops, ee_bits_per_joule,
  throughput_bps, macro_power_dbm, outage
"""


def cmd_run(args) -> int:
    if args.dump_defaults:
        dump_defaults(sys.stdout)
        return 0
    try:
        values, _ = load_config(args.config)
        if args.seed is not None:
            values["experiment"]["seed"] = args.seed
        if args.drops is not None:
            values["experiment"]["n_drops"] = args.drops
        if args.baselines is not None:
            values["experiment"]["baselines"] = args.baselines
        sweep = _parse_sweep(args.sweep) if args.sweep else None
    except ConfigError as exc:
        print(f"error: {exc}")
        return 1

    outdir = args.out
    try:
        os.makedirs(outdir, exist_ok=True)
        probe = os.path.join(outdir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        print(f"error: output directory not writable: {exc}")
        return 1

    points = [None] if sweep is None else sweep[2]
    summary_rows = []
    any_flagged = False
    for value in points:
        sweep_key, sweep_str = "", ""
        run_values = {s: dict(kv) for s, kv in values.items()}
        if sweep is not None:
            section, key, _ = sweep
            run_values[section][key] = value
            sweep_key, sweep_str = f"{section}.{key}", str(value)
        try:
            config = build_experiment_config(run_values)
        except ConfigError as exc:
            print(f"error: {exc}")
            return 1
        for warning in config_warnings(run_values):
            print(f"warning: {warning}")
        result = eng.run_experiment(config)
        tag = f"_{key}={value}" if sweep is not None else ""
        for baseline, drops in result.runs.items():
            for d, run in enumerate(drops):
                any_flagged |= any(rec.flagged for rec in run.records)
                eng.write_run_csv(
                    os.path.join(outdir, f"run_{baseline}{tag}_drop{d}.csv"), run
                )
        summary_rows.extend(eng.summarize(result, sweep_key, sweep_str))

    summary_path = os.path.join(outdir, "summary.csv")
    eng.write_summary_csv(summary_path, summary_rows)
    with open(os.path.join(outdir, "csv_schema.txt"), "w") as fh:
        fh.write(SCHEMA_TEXT)

    # print the summary verbatim from the file so stdout always matches it
    with open(summary_path, newline="") as fh:
        for row in csv.reader(fh):
            print("\t".join(row))
    if any_flagged:
        print("note: some solver runs were flagged as non-converged")
        if args.strict:
            return 2
    return 0


def cmd_oracle(args) -> int:
    try:
        inst, variant, pricing = gs.load_instance(args.instance)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}")
        return 1
    try:
        report = gs.compare(
            inst, variant, pricing,
            resolution=args.grid_points, iterations=args.iters,
        )
    except gs.InstanceTooLarge as exc:
        print(f"refused: {exc}")
        return 2
    print(f"solver objective   {report.solver_objective!r}")
    print(f"grid objective     {report.grid_objective!r}")
    print(f"relative gap       {report.gap_rel!r}")
    print(f"max power deviation {report.max_power_dev!r} W")
    ok = report.gap_rel <= args.gap_tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eewf",
        description="energy-efficiency water-filling network simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment and write CSVs")
    p_run.add_argument("--config", default=None, help="INI config path")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="master seed override")
    p_run.add_argument("--drops", type=int, default=None, help="number of drops override")
    p_run.add_argument("--baselines", default=None, help="comma-separated baseline list")
    p_run.add_argument("--sweep", default=None, help="SECTION.KEY=V1,V2,... sweep axis")
    p_run.add_argument("--strict", action="store_true",
                       help="exit nonzero if any solver run is flagged")
    p_run.add_argument("--dump-defaults", action="store_true",
                       help="print the full defaults config and exit")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config", nargs="?", default=None)
    p_val.add_argument("--dump-defaults", action="store_true")
    p_val.set_defaults(func=cmd_validate)

    p_orc = sub.add_parser("oracle", help="compare the solver against grid search")
    p_orc.add_argument("instance", help="instance file with explicit gains")
    p_orc.add_argument("--grid-points", type=int, default=200)
    p_orc.add_argument("--iters", type=int, default=60)
    p_orc.add_argument("--gap-tol", type=float, default=0.01)
    p_orc.set_defaults(func=cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
