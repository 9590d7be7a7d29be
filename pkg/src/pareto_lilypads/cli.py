"""Command-line entry point.

Every subcommand reads an optional JSON config (``--config``), applies flag
overrides on top, validates the result and writes its outputs together with
a ``*.provenance.json`` sidecar into the output directory.
"""

from __future__ import annotations

import argparse
import csv
import functools
import io
import json
import math
import os
import platform
import sys
from dataclasses import asdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__, brw, experiments, lilypad
from . import env as env_mod
from .errors import HorizonExceeded, InvalidInput, InvalidParameters

OUTPUT_ENV_VAR = "PARETO_LILYPADS_OUT"

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_HORIZON, EXIT_QUALITY = 0, 1, 2, 3, 4

COMMON = {"output_dir": None, "seed": 0, "workers": 1}

DEFAULTS = {
    "env-sample": {"kind": "poisson", "d": 2, "alpha": 4.0, "R": 1.0, "delta": 0.5, "T": None, "thinning_coef": 0.0},
    "lilypad": {
        "env": None,
        "kind": "poisson",
        "d": 2,
        "alpha": 4.0,
        "R": None,
        "T": None,
        "delta": 0.5,
        "thinning_coef": 1.0,
        "t_max": None,
        "times": [1.0],
        "probes": None,
        "grid_n": 11,
        "grid_R": 1.0,
        "svg": False,
    },
    "brw": {
        "d": 1,
        "alpha": 3.0,
        "T": 5.0,
        "box_radius": 60,
        "t_max": 1.5,
        "particle_cap": 10**6,
        "snapshots": [1.0],
        "replicates": 10,
        "delta": None,
        "window": 1.0,
        "boundary": "stop",
        "flag_threshold": 0.2,
    },
    "ageing": {
        "kind": "poisson",
        "d": 2,
        "alpha": 4.0,
        "T": None,
        "thetas": [0.1, 0.5, 1.0, 2.0],
        "M": 100,
        "delta": 0.05,
        "flag_threshold": 0.2,
    },
    "converge": {
        "d": 2,
        "alpha": 4.0,
        "T_values": [100.0, 1e8],
        "M": 200,
        "delta": 0.05,
        "probe": [1.0, 0.0],
        "self_test": False,
        "flag_threshold": 0.2,
    },
    "render": {"solution": None, "times": [1.0]},
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# configuration


def _parse_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


FLAG_TYPES = {
    "kind": str,
    "d": int,
    "alpha": float,
    "R": float,
    "delta": float,
    "T": float,
    "thinning_coef": float,
    "env": str,
    "t_max": float,
    "times": _parse_list,
    "probes": None,
    "grid_n": int,
    "grid_R": float,
    "box_radius": int,
    "particle_cap": int,
    "snapshots": _parse_list,
    "replicates": int,
    "window": float,
    "boundary": str,
    "flag_threshold": float,
    "thetas": _parse_list,
    "M": int,
    "T_values": _parse_list,
    "probe": _parse_list,
    "solution": str,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="pareto-lilypads", description="Lilypad fields and branching random walks in Pareto environments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        for key in defaults:
            if key == "probes":
                continue
            flag = "--" + key.replace("_", "-")
            if defaults[key] is False:
                p.add_argument(flag, dest=key, action="store_const", const=True)
            else:
                p.add_argument(flag, dest=key, type=FLAG_TYPES[key])
    return parser


def resolve_config(command, args):
    """Defaults, then the JSON config, then flags.  Unknown keys are rejected."""
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config is not valid JSON: {exc}", EXIT_VALIDATION) from exc
        if not isinstance(loaded, dict):
            raise CliError("config must be a JSON object", EXIT_VALIDATION)
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}", EXIT_VALIDATION)
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_ENV_VAR, "out")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise CliError("workers must be a positive integer", EXIT_VALIDATION)
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise CliError("seed must be a 64-bit nonnegative integer", EXIT_VALIDATION)
    return cfg


def _params(cfg):
    try:
        return env_mod.derive_exponents(int(cfg["d"]), float(cfg["alpha"]))
    except InvalidParameters as exc:
        raise CliError(f"invalid parameters: {exc}", EXIT_VALIDATION) from exc


# --------------------------------------------------------------------------
# output helpers


def _versions():
    import numba
    import scipy

    return {
        "pareto_lilypads": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


class Output:
    def __init__(self, directory, command, cfg):
        self.dir = Path(directory)
        self.command = command
        self.cfg = {k: v for k, v in cfg.items() if k not in ("output_dir", "workers")}
        self.files = []
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(f"cannot create output directory: {exc}", EXIT_IO) from exc

    def write(self, name, text):
        path = self.dir / name
        try:
            path.write_text(text, encoding="utf-8", newline="")
        except OSError as exc:
            raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc
        self.files.append(name)
        return path

    def provenance(self, extra=None, complete=True):
        doc = {"command": self.command, "config": self.cfg, "versions": _versions(), "files": self.files, "complete": complete}
        if extra:
            doc.update(extra)
        self.write(f"{self.command}.provenance.json", _dumps(doc))


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _num(x):
    return repr(float(x))


# --------------------------------------------------------------------------
# SVG frames

ORIGIN_COLOR = "#d62728"


def _rank_color(rank, n):
    frac = 0.0 if n <= 1 else rank / (n - 1)
    return f"hsl({int(round(220 - 160 * frac))},70%,{int(round(70 - 30 * frac))}%)"


def render_svg(sol, t, size=480):
    """One frame of the support at time ``t``: an L1 diamond per hit pad."""
    S = lilypad.support_at(sol, t)
    hit = np.flatnonzero(sol.H <= t)
    centers = S.centers[:, :2] if S.dim >= 2 else np.hstack([S.centers, np.zeros((len(S), 1))])
    radii = S.radii
    ext = float(np.max(np.abs(centers).sum(axis=1) + radii)) if len(radii) else 1.0
    ext = ext if ext > 0 else 1.0
    scale = size / (2.2 * ext)
    ranks = np.empty(len(sol.H), dtype=int)
    ranks[np.argsort(sol.node_speed, kind="stable")] = np.arange(len(sol.H))
    best = lilypad.maximizer(sol, t)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f"<title>{escape(f'support at t={t:g}')}</title>",
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    half = size / 2
    for node, (c, r) in zip(hit, zip(centers, radii)):
        cx, cy = half + scale * c[0], half - scale * c[1]
        rr = scale * r
        pts = f"{cx + rr:.4f},{cy:.4f} {cx:.4f},{cy - rr:.4f} {cx - rr:.4f},{cy:.4f} {cx:.4f},{cy + rr:.4f}"
        color = ORIGIN_COLOR if node == 0 else _rank_color(ranks[node], len(sol.H))
        stroke = ' stroke="black" stroke-width="2"' if best.index is not None and node == best.index + 1 else ""
        lines.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.5"{stroke}/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# subcommands


def _sample_env(cfg, params, R, delta, seed):
    th = env_mod.Thinning(float(cfg.get("thinning_coef") or 0.0))
    if cfg["kind"] == "poisson":
        return env_mod.sample_poisson_env(params, R, delta, seed, th)
    if cfg["kind"] == "lattice":
        if cfg.get("T") is None:
            raise CliError("lattice environments need T", EXIT_VALIDATION)
        return env_mod.sample_lattice_env(params, float(cfg["T"]), R, delta, seed, th)
    raise CliError(f"unknown kind {cfg['kind']!r}", EXIT_VALIDATION)


def cmd_env_sample(cfg):
    params = _params(cfg)
    ps = _sample_env(cfg, params, float(cfg["R"]), float(cfg["delta"]), cfg["seed"])
    out = Output(cfg["output_dir"], "env-sample", cfg)
    out.write("env.json", ps.to_json() + "\n")
    meta = {"count": len(ps), "max_mark": float(ps.marks.max()) if len(ps) else None}
    if ps.kind == "poisson":
        meta["expected_count"] = env_mod.poisson_expected_count(params, ps.window_radius, ps.delta)
    out.provenance({"summary": meta})
    print(f"count={meta['count']} max_mark={meta['max_mark']}" + (f" expected_count={meta['expected_count']:g}" if "expected_count" in meta else ""))
    return EXIT_OK


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}", EXIT_VALIDATION) from exc


def _probe_grid(cfg, d):
    if cfg["probes"] is not None:
        return np.asarray(cfg["probes"], dtype=float).reshape(-1, d)
    axis = np.linspace(-cfg["grid_R"], cfg["grid_R"], int(cfg["grid_n"]))
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def cmd_lilypad(cfg):
    times = [float(t) for t in cfg["times"]]
    t_max = float(cfg["t_max"]) if cfg["t_max"] is not None else max(times + [1.0])
    if cfg["env"]:
        ps = env_mod.MarkedPointSet.from_dict(_load_json(cfg["env"]))
        params = ps.params
        delta = float(cfg["delta"]) if cfg["delta"] is not None else ps.delta
    else:
        params = _params(cfg)
        delta = float(cfg["delta"])
        R = float(cfg["R"]) if cfg["R"] is not None else lilypad.auto_radius(params, delta, t_max)
        ps = _sample_env(cfg, params, R, delta, cfg["seed"])
    if ps.kind == "custom":
        sol = lilypad.solve_hitting(ps, delta)
    else:
        sol = lilypad.solve_environment(ps, delta, t_max)
    Z = _probe_grid(cfg, params.d)
    try:
        h = lilypad.hitting_many(sol, Z)
        m = [lilypad.particles_many(sol, Z, t) for t in times]
        frames = [render_svg(sol, t) for t in times] if cfg["svg"] else []
        best = [lilypad.maximizer(sol, t) for t in times]
    except HorizonExceeded as exc:
        need = lilypad.auto_radius(params, delta, exc.required)
        raise CliError(f"{exc}; re-run with t_max >= {exc.required:g} (window radius >= {need:g})", EXIT_HORIZON) from exc
    out = Output(cfg["output_dir"], "lilypad", cfg)
    out.write("solution.json", _dumps(sol.to_dict()))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"z{i + 1}" for i in range(params.d)] + ["h"] + [f"m@{t:g}" for t in times])
    for i, z in enumerate(Z):
        w.writerow([_num(x) for x in z] + [_num(h[i])] + [_num(col[i]) for col in m])
    out.write("fields.csv", buf.getvalue())
    for k, svg in enumerate(frames):
        out.write(f"frame_{k:03d}.svg", svg)
    summary = {
        "points": len(sol.source_set),
        "certified": sol.certified,
        "maximizers": [
            {"t": t, "index": b.index, "value": b.value, "near_tie_gap": b.near_tie_gap, "pos": list(b.point.pos) if b.point else None}
            for t, b in zip(times, best)
        ],
    }
    out.provenance({"summary": summary})
    print(f"points={len(sol.source_set)} certified={sol.certified}")
    return EXIT_OK if sol.certified else EXIT_QUALITY


def cmd_render(cfg):
    if not cfg["solution"]:
        raise CliError("render needs --solution", EXIT_VALIDATION)
    sol = lilypad.LilypadSolution.from_dict(_load_json(cfg["solution"]))
    out = Output(cfg["output_dir"], "render", cfg)
    try:
        for k, t in enumerate(cfg["times"]):
            out.write(f"frame_{k:03d}.svg", render_svg(sol, float(t)))
    except HorizonExceeded as exc:
        raise CliError(str(exc), EXIT_HORIZON) from exc
    out.provenance()
    return EXIT_OK


def _brw_task(i, cfg, params, potential, sol):
    times = tuple(float(s) for s in cfg["snapshots"])
    bc = brw.BrwConfig(
        params,
        float(cfg["T"]),
        int(cfg["box_radius"]),
        float(cfg["t_max"]),
        int(cfg["particle_cap"]),
        times,
        experiments.replicate_seed(cfg["seed"], 1, i),
        cfg["boundary"],
    )
    run = brw.simulate_brw(potential, bc)
    fields = brw.rescale_run(run, bc)
    cmp_ = brw.compare_fields(fields, sol, float(cfg["window"]), times)
    row = {
        "replicate": i,
        "hit_sup": cmp_.hit_sup,
        "count_sup": cmp_.count_sup,
        "censored": cmp_.censored,
        "truncated": run.truncated,
        "cap_reached": run.cap_reached,
        "events": run.events_processed,
        "flagged": bool(cmp_.flagged or run.truncated),
    }
    return row, (fields.to_csv() if i == 0 else None)


def cmd_brw(cfg):
    params = _params(cfg)
    T = float(cfg["T"])
    try:
        a, r = env_mod.scaling_factors(T, params)
        potential = brw.BoxPotential.sample(params, int(cfg["box_radius"]), cfg["seed"])
        delta = float(cfg["delta"]) if cfg["delta"] is not None else 1.0 / a
        ps = env_mod.sample_lattice_env(params, T, int(cfg["box_radius"]) / r, delta, cfg["seed"])
        brw.BrwConfig(params, T, int(cfg["box_radius"]), float(cfg["t_max"]), int(cfg["particle_cap"]), tuple(cfg["snapshots"]), 0, cfg["boundary"])
    except (InvalidInput, InvalidParameters) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    sol = lilypad.solve_hitting(ps, delta)
    fn = functools.partial(_brw_task, cfg=cfg, params=params, potential=potential, sol=sol)
    results = experiments.parallel_map(fn, range(int(cfg["replicates"])), cfg["workers"])
    out = Output(cfg["output_dir"], "brw", cfg)
    buf = io.StringIO()
    cols = ["replicate", "hit_sup", "count_sup", "censored", "truncated", "cap_reached", "events", "flagged"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row, _ in results:
        w.writerow([_num(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    out.write("brw_runs.csv", buf.getvalue())
    if results and results[0][1] is not None:
        out.write("brw_fields_0.csv", results[0][1])
    flagged = sum(r["flagged"] for r, _ in results) / max(1, len(results))
    hs = [r["hit_sup"] for r, _ in results]
    summary = {"flagged_fraction": flagged, "median_hit_sup": float(np.median(hs)) if hs else None, "delta": delta}
    out.provenance({"summary": summary})
    print(f"replicates={len(results)} median_hit_sup={summary['median_hit_sup']} flagged={flagged:.3f}")
    return EXIT_QUALITY if flagged > cfg["flag_threshold"] else EXIT_OK


def cmd_ageing(cfg):
    params = _params(cfg)
    try:
        if cfg["kind"] == "poisson":
            rep = experiments.estimate_ageing_poisson(params, cfg["thetas"], int(cfg["M"]), float(cfg["delta"]), cfg["seed"], cfg["workers"])
        elif cfg["kind"] == "lattice":
            if cfg["T"] is None:
                raise CliError("lattice ageing needs T", EXIT_VALIDATION)
            rep = experiments.estimate_ageing_discrete(params, float(cfg["T"]), cfg["thetas"], int(cfg["M"]), float(cfg["delta"]), cfg["seed"], cfg["workers"])
        else:
            raise CliError(f"unknown kind {cfg['kind']!r}", EXIT_VALIDATION)
    except (InvalidInput, InvalidParameters) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    out = Output(cfg["output_dir"], "ageing", cfg)
    out.write("ageing.csv", rep.to_csv())
    out.write("ageing.json", rep.to_json() + "\n")
    flagged = max(rep.excluded) / rep.replicates
    out.provenance({"summary": {"flagged_fraction": flagged, "near_tie_count": rep.near_tie_count}})
    for th, e, lo, hi in zip(rep.thetas, rep.estimates, rep.ci_low, rep.ci_high):
        print(f"theta={th:g} estimate={e:.4f} ci=[{lo:.4f}, {hi:.4f}]")
    return EXIT_QUALITY if flagged > cfg["flag_threshold"] else EXIT_OK


def cmd_converge(cfg):
    params = _params(cfg)
    try:
        args = (params,)
        if cfg["self_test"]:
            rep = experiments.null_calibration(*args, int(cfg["M"]), float(cfg["delta"]), cfg["probe"], cfg["seed"], cfg["workers"])
        else:
            rep = experiments.convergence_study(*args, cfg["T_values"], int(cfg["M"]), float(cfg["delta"]), cfg["probe"], cfg["seed"], cfg["workers"])
    except (InvalidInput, InvalidParameters) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    out = Output(cfg["output_dir"], "converge", cfg)
    out.write("converge.csv", rep.to_csv())
    out.write("converge.json", rep.to_json() + "\n")
    flagged = max(rep.excluded) / (2 * rep.replicates)
    out.provenance({"summary": {"flagged_fraction": flagged}})
    for T, v in zip(rep.T_values, rep.values):
        print(f"T={T:g} ks={v:.4f} noise_floor={rep.noise_floor:.4f}")
    return EXIT_QUALITY if flagged > cfg["flag_threshold"] else EXIT_OK


COMMANDS = {
    "env-sample": cmd_env_sample,
    "lilypad": cmd_lilypad,
    "brw": cmd_brw,
    "ageing": cmd_ageing,
    "converge": cmd_converge,
    "render": cmd_render,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InvalidInput, InvalidParameters, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        try:
            Output(cfg["output_dir"], args.command, cfg).provenance(complete=False)
        except Exception:
            pass
        print("interrupted; partial outputs marked incomplete", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
