"""Command-line front end: figure presets, parameter scans, simulation runs.

Output is CSV with a '#'-prefixed parameter header (optionally mirrored as
JSON), deterministic byte-for-byte for identical configuration and seed.
Exit code is 0 on success, including all-zero-rate scans; nonzero only on
configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import ProtocolParams, SecurityBudget
from .gaussian import ChannelParams
from .keyrate import (
    KeyRateResult,
    asymptotic_rates,
    calibrate_protocol,
    distance_scenario,
    finite_key_length,
    optimize_keyrate,
    round_counts_from,
    ur_gap,
)
from .simulate import run_protocol

AXES = ("n_tot", "eta_b", "distance_km")
MODES = ("finite", "asymptotic", "gap", "simulate")


@dataclass
class ScanConfig:
    """One scan: a channel, a security budget, an axis, and a mode."""

    channel: ChannelParams
    budget: SecurityBudget
    axis: str
    grid: list[float]
    mode: str = "finite"
    n_tot: float = 1e9
    eta_b: float | None = None
    transmittance: float = 0.99
    seed: int = 1
    out: str = "scan.csv"
    # simulate-mode protocol choices (calibrated automatically)
    r: float = 0.1
    delta: float = 0.1
    db_per_km: float = 0.20
    coupling_loss: float = 0.05
    margin_sigmas: float = 5.0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        grid = [float(v) for v in self.grid]
        if len(grid) == 0:
            raise ValueError("grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("axis grid must be strictly increasing")
        self.grid = grid


def config_diagnostics(raw: dict) -> list[str]:
    """Validate a raw config dict; returns a list of error strings."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        return ["config: top level must be a JSON object"]
    chan = raw.get("channel", {})
    if not isinstance(chan, dict):
        errors.append("channel: must be an object")
        chan = {}
    try:
        ChannelParams(**chan)
    except (TypeError, ValueError) as exc:
        errors.append(f"channel: {exc}")
    bud = raw.get("budget", {})
    if not isinstance(bud, dict):
        errors.append("budget: must be an object")
        bud = {}
    try:
        _budget_from(bud)
    except (TypeError, ValueError) as exc:
        errors.append(f"budget: {exc}")
    t = raw.get("transmittance", 0.99)
    if not 0.5 < t < 1.0:
        errors.append(f"transmittance: must be in (0.5, 1), got {t}")
    for key in ("axis", "grid", "mode"):
        if key not in raw and key != "mode":
            errors.append(f"{key}: missing required field")
    if errors:
        return errors
    try:
        _config_from(raw)
    except (TypeError, ValueError) as exc:
        errors.append(str(exc))
    return errors


def _budget_from(raw: dict) -> SecurityBudget:
    if not raw:
        return SecurityBudget.default()
    known = {f.name for f in dataclasses.fields(SecurityBudget)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown budget fields: {sorted(unknown)}")
    base = {"eps_s": raw.get("eps_s", 1e-9)}
    defaults = SecurityBudget.default(**{
        k: raw[k] for k in ("eps_s", "eps_c", "eps_t") if k in raw
    })
    merged = {f.name: raw.get(f.name, getattr(defaults, f.name))
              for f in dataclasses.fields(SecurityBudget)}
    return SecurityBudget(**merged)


def _config_from(raw: dict) -> ScanConfig:
    known = {f.name for f in dataclasses.fields(ScanConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    kwargs = dict(raw)
    kwargs["channel"] = ChannelParams(**raw.get("channel", {}))
    kwargs["budget"] = _budget_from(raw.get("budget", {}))
    return ScanConfig(**kwargs)


def load_config(path: str | Path) -> ScanConfig:
    with open(path) as fh:
        raw = json.load(fh)
    errors = config_diagnostics(raw)
    if errors:
        raise ValueError("; ".join(errors))
    return _config_from(raw)


# ---------------------------------------------------------------------------
# row evaluation
# ---------------------------------------------------------------------------

_SCAN_COLUMNS = [
    "axis_value", "rate", "key_length", "leak_ir", "r", "delta", "m_range",
    "alpha", "nu", "xi", "mu", "reason",
]


def _channel_at(cfg: ScanConfig, value: float) -> tuple[ChannelParams, float]:
    ch = cfg.channel
    if cfg.axis == "eta_b":
        eta_b = value
    elif cfg.axis == "distance_km":
        eta_b = distance_scenario(value, cfg.db_per_km, cfg.coupling_loss)
    else:
        eta_b = ch.eta_b if cfg.eta_b is None else cfg.eta_b
    n_tot = value if cfg.axis == "n_tot" else cfg.n_tot
    return dataclasses.replace(ch, eta_b=eta_b), n_tot


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if not math.isfinite(v):
        raise ValueError(f"non-finite value in output: {v}")
    return format(float(v), ".10g")


def _finite_row(cfg: ScanConfig, value: float, overlap_mode, log_base) -> list:
    ch, n_tot = _channel_at(cfg, value)
    res = optimize_keyrate(
        ch, cfg.budget, int(n_tot),
        transmittance=cfg.transmittance,
        margin_sigmas=cfg.margin_sigmas,
        overlap_mode=overlap_mode,
        log_base=log_base,
    )
    p = res.params
    return [
        value, res.rate, res.key_length, res.leak_ir,
        p.get("r"), p.get("delta"), p.get("m_range"), p.get("alpha"),
        p.get("nu"), p.get("xi"), p.get("mu"), res.reason or "",
    ]


def _asymptotic_row(cfg: ScanConfig, value: float) -> list:
    ch, _ = _channel_at(cfg, value)
    rates = asymptotic_rates(ch)
    return [value, rates.r_ur, rates.r_opt, rates.r_dr]


def _gap_row(cfg: ScanConfig, value: float) -> list:
    ch, _ = _channel_at(cfg, value)
    g = ur_gap(ch)
    return [value, g.gap_classical, g.gap_quantum]


def _simulate_row(cfg: ScanConfig, value: float, overlap_mode, log_base) -> list:
    ch, n_tot = _channel_at(cfg, value)
    pp, predicted, leak = calibrate_protocol(
        ch, cfg.budget, int(n_tot), cfg.r, cfg.delta,
        transmittance=cfg.transmittance, margin_sigmas=cfg.margin_sigmas,
    )
    rec = run_protocol(ch, pp, cfg.seed)
    stats = rec.pe_stats
    res = finite_key_length(
        ch, pp, cfg.budget, stats, rec.round_counts(),
        leak_per_symbol=leak, overlap_mode=overlap_mode, log_base=log_base,
    )
    return [
        value, res.rate, res.key_length, res.leak_ir,
        pp.r, pp.delta, pp.m_range, pp.alpha,
        res.params.get("nu"), res.params.get("xi"), res.params.get("mu"),
        res.reason or "",
        stats.d_pe, stats.v_d_pe, stats.v_ya_pe, stats.v_yb_pe,
        int(rec.passed),
    ]


_MODE_COLUMNS = {
    "finite": _SCAN_COLUMNS,
    "asymptotic": ["axis_value", "r_ur", "r_opt", "r_dr"],
    "gap": ["axis_value", "gap_classical", "gap_quantum"],
    "simulate": _SCAN_COLUMNS
    + ["d_pe", "v_d_pe", "v_ya_pe", "v_yb_pe", "passed"],
}


def _write_output(path, header_params: dict, columns, rows, also_json: bool):
    lines = [f"# {k} = {v}" for k, v in header_params.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    path = Path(path)
    path.write_text(text)
    if also_json:
        payload = {
            "params": header_params,
            "columns": columns,
            "rows": [[None if v == "" else v for v in row] for row in rows],
        }
        path.with_suffix(".json").write_text(json.dumps(payload, indent=2) + "\n")


def run_scan(cfg: ScanConfig, jobs: int = 1, also_json: bool = False,
             log_base: float = 2.0, overlap_mode: str = "approx") -> Path:
    """Evaluate the configured axis and write the CSV (and JSON mirror)."""
    if cfg.mode == "finite":
        worker = lambda v: _finite_row(cfg, v, overlap_mode, log_base)
    elif cfg.mode == "asymptotic":
        worker = lambda v: _asymptotic_row(cfg, v)
    elif cfg.mode == "gap":
        worker = lambda v: _gap_row(cfg, v)
    else:
        worker = lambda v: _simulate_row(cfg, v, overlap_mode, log_base)

    if jobs > 1 and len(cfg.grid) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_row_task, [
                (cfg, v, overlap_mode, log_base) for v in cfg.grid
            ]))
    else:
        rows = [worker(v) for v in cfg.grid]

    header = {
        "mode": cfg.mode,
        "axis": cfg.axis,
        "seed": cfg.seed,
        "n_tot": _fmt(cfg.n_tot),
        "transmittance": cfg.transmittance,
        "log_base": "e" if log_base == math.e else "2",
        "overlap_mode": overlap_mode,
    }
    for f in dataclasses.fields(ChannelParams):
        header[f"channel.{f.name}"] = _fmt(getattr(cfg.channel, f.name))
    for f in dataclasses.fields(SecurityBudget):
        header[f"budget.{f.name}"] = _fmt(getattr(cfg.budget, f.name))
    if cfg.mode == "simulate":
        header["r"] = _fmt(cfg.r)
        header["delta"] = _fmt(cfg.delta)
    _write_output(cfg.out, header, _MODE_COLUMNS[cfg.mode], rows, also_json)
    return Path(cfg.out)


def _row_task(args):
    cfg, v, overlap_mode, log_base = args
    if cfg.mode == "finite":
        return _finite_row(cfg, v, overlap_mode, log_base)
    if cfg.mode == "asymptotic":
        return _asymptotic_row(cfg, v)
    if cfg.mode == "gap":
        return _gap_row(cfg, v)
    return _simulate_row(cfg, v, overlap_mode, log_base)


# ---------------------------------------------------------------------------
# figure presets
# ---------------------------------------------------------------------------


def _preset_channel(beta=0.95, eta_ex=0.01) -> ChannelParams:
    return ChannelParams(lambda_sq=11.0, lambda_asq=16.0, eta_a=0.0,
                         eta_b=0.0, eta_ex=eta_ex, beta=beta)


def run_preset(name: str, out: str | None = None, points: int | None = None,
               jobs: int = 1, also_json: bool = False, seed: int = 1,
               log_base: float = 2.0) -> Path:
    """Write the data behind one of the five standard figures.

    fig2/fig3: optimized rate vs N_tot (1e6..1e10) for three loss values at
    beta = 0.95 / 0.90.  fig4: rate vs distance at N_tot = 1e9 for three
    reconciliation efficiencies.  fig5: uncertainty-relation gaps vs loss.
    fig6: finite rate (N_tot = 1e11, excess noise 0) plus the asymptotic
    benchmarks vs loss.  ``points`` overrides the default axis density.
    """
    out = out or f"{name}.csv"
    budget = SecurityBudget.default()
    if name in ("fig2", "fig3"):
        beta = 0.95 if name == "fig2" else 0.90
        etas = [0.45, 0.50, 0.55] if name == "fig2" else [0.40, 0.45, 0.50]
        grid = list(np.geomspace(1e6, 1e10, points or 9))
        columns = ["n_tot"] + [f"rate_eta_{e:.2f}" for e in etas]
        rows = []
        for n_tot in grid:
            row = [n_tot]
            for eta in etas:
                ch = dataclasses.replace(_preset_channel(beta=beta), eta_b=eta)
                res = optimize_keyrate(ch, budget, int(n_tot), log_base=log_base)
                row.append(res.rate)
            rows.append(row)
        header = {"preset": name, "beta": beta, "eta_ex": 0.01,
                  "squeezing_db": 11, "antisqueezing_db": 16,
                  "transmittance": 0.99, "eps_s": 1e-9, "eps_c": 1e-9}
        _write_output(out, header, columns, rows, also_json)
    elif name == "fig4":
        betas = [0.95, 0.90, 0.85]
        grid = list(np.linspace(0.0, 30.0, points or 16))
        columns = ["distance_km"] + [f"rate_beta_{b:.2f}" for b in betas]
        rows = []
        for km in grid:
            eta_b = distance_scenario(km)
            row = [km]
            for beta in betas:
                ch = dataclasses.replace(_preset_channel(beta=beta), eta_b=eta_b)
                res = optimize_keyrate(ch, budget, int(1e9), log_base=log_base)
                row.append(res.rate)
            rows.append(row)
        header = {"preset": name, "n_tot": "1e9", "loss_db_per_km": 0.20,
                  "coupling_loss": 0.05, "squeezing_db": 11,
                  "antisqueezing_db": 16}
        _write_output(out, header, columns, rows, also_json)
    elif name == "fig5":
        grid = list(np.linspace(0.0, 0.9, points or 19))
        columns = ["eta_b", "gap_classical", "gap_quantum"]
        rows = []
        for eta in grid:
            ch = dataclasses.replace(_preset_channel(eta_ex=0.0), eta_b=eta)
            g = ur_gap(ch)
            rows.append([eta, g.gap_classical, g.gap_quantum])
        header = {"preset": name, "squeezing_db": 11, "antisqueezing_db": 16,
                  "eta_a": 0, "eta_ex": 0}
        _write_output(out, header, columns, rows, also_json)
    elif name == "fig6":
        grid = list(np.linspace(0.0, 0.9, points or 19))
        columns = ["eta_b", "rate_finite", "r_ur", "r_opt", "r_dr"]
        rows = []
        for eta in grid:
            ch = dataclasses.replace(_preset_channel(eta_ex=0.0), eta_b=eta)
            rates = asymptotic_rates(ch)
            res = optimize_keyrate(ch, budget, int(1e11), log_base=log_base)
            rows.append([eta, res.rate, rates.r_ur, rates.r_opt, rates.r_dr])
        header = {"preset": name, "n_tot": "1e11", "beta": 0.95,
                  "eta_ex": 0, "squeezing_db": 11, "antisqueezing_db": 16}
        _write_output(out, header, columns, rows, also_json)
    else:
        raise ValueError(f"unknown preset {name!r}")
    return Path(out)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p.add_argument("--json", action="store_true", help="also write a JSON mirror")
    p.add_argument("--jobs", type=int, default=1, help="parallel scan workers")
    p.add_argument("--log-base", choices=["2", "e"], default="2",
                   help="logarithm base inside the statistical penalty")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cvkeyrate",
        description="Finite-size key rates for a reverse-reconciliation "
                    "continuous-variable QKD protocol.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_preset = sub.add_parser("preset", help="emit data for a standard figure")
    p_preset.add_argument("name", choices=["fig2", "fig3", "fig4", "fig5", "fig6"])
    p_preset.add_argument("--points", type=int, default=None,
                          help="override the axis density")
    _add_common(p_preset)

    p_scan = sub.add_parser("scan", help="run a config-driven parameter scan")
    p_scan.add_argument("config")
    _add_common(p_scan)

    p_sim = sub.add_parser("simulate", help="run the protocol simulator scan")
    p_sim.add_argument("config")
    _add_common(p_sim)

    p_val = sub.add_parser("validate", help="check a config file, print diagnostics")
    p_val.add_argument("config")

    args = parser.parse_args(argv)
    log_base = math.e if getattr(args, "log_base", "2") == "e" else 2.0

    try:
        if args.command == "preset":
            path = run_preset(
                args.name, out=args.out, points=args.points, jobs=args.jobs,
                also_json=args.json, seed=args.seed or 1, log_base=log_base,
            )
            print(f"wrote {path}")
            return 0
        if args.command in ("scan", "simulate"):
            cfg = load_config(args.config)
            if args.command == "simulate":
                cfg.mode = "simulate"
            if args.out:
                cfg.out = args.out
            if args.seed is not None:
                cfg.seed = args.seed
            path = run_scan(cfg, jobs=args.jobs, also_json=args.json,
                            log_base=log_base)
            print(f"wrote {path}")
            return 0
        if args.command == "validate":
            with open(args.config) as fh:
                raw = json.load(fh)
            errors = config_diagnostics(raw)
            if errors:
                for err in errors:
                    print(f"error: {err}")
            else:
                print("config ok")
            return 0
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
