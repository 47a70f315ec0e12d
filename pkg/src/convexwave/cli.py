"""Command-line pipeline driver.

Six subcommands cover the whole experimental protocol:

    phantom   sample a named synthetic coefficient onto the forward box
    simulate  run the FDTD forward solve and store the boundary recording
    pick      reduce a recording to per-level boundary Cauchy data
    invert    multilevel gradient descent; writes tau, c and the J-traces
    verify    randomized probes (carleman | convexity)
    report    score a reconstruction against a phantom; export slices

Every command accepts ``--config FILE`` (JSON, same nesting as the defaults
below) plus individual flag overrides; flags win over the file, the file wins
over built-in defaults, and unknown config keys are rejected.  Each command
writes ``manifest.json`` into its output directory: input digests, the fully
resolved configuration, package version and backend, the produced files, and
a separate ``timing`` section (so manifests minus timing are reproducible).

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(CFL violation, blow-up, optimizer stall), 4 missing input.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime
import json
import os
import sys
import time

import numpy as np

from . import BACKEND, __version__
from .acquire import add_noise, build_cauchy, normalize_amplitude, pick_all, \
    CauchyProjection
from .basis import BasisError, build_time_basis
from .errors import ConfigError, MissingInputError, NumericalError, StallError
from .forward import ForwardConfig, WaveRecording, reduced_config, \
    run_forward, standard_config
from .grid import Grid3, GridError, ScalarField
from .io import IOFormatError, load_field, save_field, sha256_file, write_vtk
from .objective import ObjectiveConfig
from .optimize import MultilevelPlan, baseline_start, multilevel
from .recon import C_FLOOR, c_from_tau, make_phantom, metrics
from .system import SystemCoeffs, auto_floor
from .verify import carleman_sweep, convexity_probe

DEFAULTS = {
    "geometry": {"preset": "paper", "h": 0.125},
    "forward": {"dt": 0.002, "duration": 6.5, "pulse_eps": 0.01,
                "aux_planes": 9, "energy_stride": 0,
                "noise": 0.0, "seed": 0},
    "acquire": {"N": 1, "T1": 0.1, "route": "plane_stack",
                "levels": [0.125]},
    "objective": {"lam": 1.0, "b": 0.0, "beta": 0.0,
                  "neumann_penalty": 10.0},
    "optimize": {"grad_tol": 0.02, "max_iter": 5000, "step0": 0.1,
                 "max_halvings": 40, "project": False, "m_floor": "auto"},
    "recon": {"c_floor": C_FLOOR, "phantom": "test1"},
    "verify": {"lambdas": [4.0, 8.0, 16.0], "b": 0.1, "samples": 200,
               "pairs": 50, "seed": 1, "rho_floor": 1e-3},
    "threads": 0,
}


# -- configuration plumbing -------------------------------------------------

def _merge(base: dict, override: dict, path: str = "") -> None:
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here!r} must be a table")
            _merge(base[key], val, here)
        else:
            base[key] = val


def resolve_config(args: argparse.Namespace,
                   flag_map: dict[str, tuple[str, str]]) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise MissingInputError(args.config)
        with open(args.config) as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file is not valid JSON: {e}")
        _merge(cfg, loaded)
    for flag, (section, key) in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg[section][key] = val
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    return cfg


def _parse_h(text: str) -> float:
    """Spacing given either as a float or as a fraction like 1/8."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_levels(text: str) -> list[float]:
    return [_parse_h(part) for part in text.split(",") if part]


def _parse_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def _hash_dir(directory: str) -> dict[str, str]:
    out = {}
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if os.path.isfile(path) and not name.startswith("manifest"):
            out[name] = sha256_file(path)
    return out


def write_manifest(outdir: str, command: str, config: dict,
                   inputs: dict, outputs: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "backend": BACKEND,
        "config": config,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "timing": {
            "wall_s": round(time.perf_counter() - started, 3),
            "written": datetime.datetime.now(datetime.timezone.utc)
            .isoformat(timespec="seconds"),
        },
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _forward_config(cfg: dict) -> ForwardConfig:
    geo, fwd = cfg["geometry"], cfg["forward"]
    if geo["preset"] == "paper":
        base = standard_config(geo["h"], fwd["dt"], fwd["duration"],
                               fwd["aux_planes"])
    elif geo["preset"] == "reduced":
        base = reduced_config(geo["h"], fwd["dt"], fwd["duration"],
                              fwd["aux_planes"])
    else:
        raise ConfigError(
            f"unknown geometry preset {geo['preset']!r}; use paper or reduced")
    return dataclasses.replace(base, pulse_eps=fwd["pulse_eps"])


def _level_grid(inner: Grid3, h: float) -> Grid3:
    ratio = h / inner.h
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError(
            f"level spacing {h} is not an integer multiple of the recording "
            f"spacing {inner.h}")
    r = int(round(ratio))
    dims = tuple((n - 1) // r + 1 for n in inner.dims)
    if any((n - 1) % r for n in inner.dims):
        raise ConfigError(f"level spacing {h} does not divide the inner cube")
    return Grid3(inner.origin, h, dims)


# -- subcommands ------------------------------------------------------------

def cmd_phantom(args) -> int:
    cfg = resolve_config(args, {
        "name": ("recon", "phantom"), "h": ("geometry", "h"),
        "preset": ("geometry", "preset"),
    })
    started = time.perf_counter()
    phantom = make_phantom(cfg["recon"]["phantom"])
    fcfg = _forward_config(cfg)
    os.makedirs(args.out, exist_ok=True)
    field = phantom.field(fcfg.box)
    save_field(os.path.join(args.out, "c_box"), field)
    write_vtk(os.path.join(args.out, "c_inner.vtk"),
              phantom.field(fcfg.inner), name="c_true")
    with open(os.path.join(args.out, "phantom.json"), "w") as f:
        json.dump({"name": phantom.name, "descriptor": phantom.descriptor},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(args.out, "phantom", cfg, {},
                   ["c_box.json", "c_box.bin", "c_inner.vtk", "phantom.json"],
                   started)
    print(f"phantom {phantom.name}: contrast {phantom.contrast}, "
          f"sampled on {fcfg.box.dims} grid -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = resolve_config(args, {
        "h": ("geometry", "h"), "preset": ("geometry", "preset"),
        "dt": ("forward", "dt"), "duration": ("forward", "duration"),
        "pulse_eps": ("forward", "pulse_eps"),
        "aux_planes": ("forward", "aux_planes"),
        "energy_stride": ("forward", "energy_stride"),
        "noise": ("forward", "noise"), "seed": ("forward", "seed"),
    })
    started = time.perf_counter()
    fcfg = _forward_config(cfg)
    inputs = {}
    if args.c_dir:
        prefix = os.path.join(args.c_dir, "c_box")
        if not os.path.exists(prefix + ".json"):
            raise MissingInputError(prefix + ".json")
        c = load_field(prefix)
        if not isinstance(c, ScalarField) or c.grid != fcfg.box:
            raise ConfigError(
                "coefficient in --c-dir does not live on the configured box "
                "grid; regenerate the phantom with matching geometry")
        inputs["c_dir"] = _hash_dir(args.c_dir)
    else:
        c = ScalarField(fcfg.box, np.ones(fcfg.box.dims))
    rec = run_forward(c, fcfg, energy_stride=cfg["forward"]["energy_stride"])
    if cfg["forward"]["noise"]:
        rec = add_noise(rec, cfg["forward"]["noise"], cfg["forward"]["seed"])
    os.makedirs(args.out, exist_ok=True)
    rec.save(args.out)
    outputs = [n for n in os.listdir(args.out) if n.startswith("recording")]
    write_manifest(args.out, "simulate", cfg, inputs, outputs, started)
    print(f"simulate: {fcfg.n_steps} steps on {fcfg.box.dims}, "
          f"{rec.f0.shape[1]} hull nodes -> {args.out}")
    return 0


def cmd_pick(args) -> int:
    cfg = resolve_config(args, {
        "N": ("acquire", "N"), "T1": ("acquire", "T1"),
        "route": ("acquire", "route"), "levels": ("acquire", "levels"),
    })
    started = time.perf_counter()
    if not os.path.exists(os.path.join(args.rec, "recording.json")):
        raise MissingInputError(os.path.join(args.rec, "recording.json"))
    rec = WaveRecording.load(args.rec)
    acq = cfg["acquire"]
    tb = build_time_basis(acq["T1"], acq["N"])
    levels = sorted(acq["levels"], reverse=True)  # coarse first
    os.makedirs(args.out, exist_ok=True)
    outputs, level_meta = [], []
    for i, h in enumerate(levels):
        grid = _level_grid(rec.cfg.inner, h)
        arrivals = pick_all(rec, grid)
        data = build_cauchy(rec, arrivals, tb, route=acq["route"])
        data.save(args.out, f"level{i}")
        level_meta.append({"name": f"level{i}", "h": h})
        outputs += [n for n in os.listdir(args.out)
                    if n.startswith(f"level{i}.")]
    with open(os.path.join(args.out, "levels.json"), "w") as f:
        json.dump(level_meta, f, indent=2)
        f.write("\n")
    outputs.append("levels.json")
    write_manifest(args.out, "pick", cfg, {"rec": _hash_dir(args.rec)},
                   outputs, started)
    print(f"pick: N={acq['N']}, T1={acq['T1']}, "
          f"levels {', '.join(str(m['h']) for m in level_meta)} -> {args.out}")
    return 0


def _load_datasets(data_dir: str) -> list[CauchyProjection]:
    index = os.path.join(data_dir, "levels.json")
    if not os.path.exists(index):
        raise MissingInputError(index)
    with open(index) as f:
        entries = json.load(f)
    return [CauchyProjection.load(data_dir, e["name"]) for e in entries]


def cmd_invert(args) -> int:
    cfg = resolve_config(args, {
        "lam": ("objective", "lam"), "b": ("objective", "b"),
        "beta": ("objective", "beta"),
        "neumann_penalty": ("objective", "neumann_penalty"),
        "grad_tol": ("optimize", "grad_tol"),
        "max_iter": ("optimize", "max_iter"),
        "step0": ("optimize", "step0"),
        "max_halvings": ("optimize", "max_halvings"),
        "project": ("optimize", "project"),
        "m_floor": ("optimize", "m_floor"),
    })
    started = time.perf_counter()
    datasets = _load_datasets(args.data)
    tb = build_time_basis(datasets[0].T1, datasets[0].N)
    normed = []
    for data in datasets:
        data, kappa = normalize_amplitude(data, tb)
        normed.append(data)
    datasets = normed

    floor = cfg["optimize"]["m_floor"]
    if floor == "auto":
        floor = auto_floor(datasets[0].q0, tb)
    coeffs = SystemCoeffs(tb, m_floor=float(floor))
    ob = cfg["objective"]
    ocfg = ObjectiveConfig(lam=ob["lam"], b=ob["b"], beta=ob["beta"],
                           neumann_penalty=ob["neumann_penalty"])
    op = cfg["optimize"]
    plan = MultilevelPlan(
        spacings=tuple(d.grid.h for d in datasets),
        grad_tol=op["grad_tol"], max_iter=op["max_iter"], step0=op["step0"],
        max_halvings=op["max_halvings"], project=op["project"])

    os.makedirs(args.out, exist_ok=True)
    W0 = baseline_start(datasets[0])
    try:
        W, traces = multilevel(W0, datasets, ocfg, coeffs, plan)
    except StallError as err:
        trace = getattr(err, "trace", None)
        if trace is not None:
            trace.write_csv(os.path.join(args.out, "stalled_trace.csv"))
        raise

    outputs = []
    for i, trace in enumerate(traces):
        name = f"level{i}_trace.csv"
        trace.write_csv(os.path.join(args.out, name))
        outputs.append(name)
    save_field(os.path.join(args.out, "W"), W)
    tau = ScalarField(W.grid, W.values[0])
    save_field(os.path.join(args.out, "tau"), tau)
    c = c_from_tau(tau)
    save_field(os.path.join(args.out, "c"), c)
    write_vtk(os.path.join(args.out, "c.vtk"), c, name="c_recovered")
    outputs += ["W.json", "W.bin", "tau.json", "tau.bin",
                "c.json", "c.bin", "c.vtk"]
    with open(os.path.join(args.out, "traces.json"), "w") as f:
        json.dump([t.summary() for t in traces], f, indent=2, sort_keys=True)
        f.write("\n")
    outputs.append("traces.json")
    write_manifest(args.out, "invert", cfg, {"data": _hash_dir(args.data)},
                   outputs, started)
    for t in traces:
        s = t.summary()
        print(f"level h={s['level_h']:g}: {s['iterations']} iterations, "
              f"J={s['final_J']:.6g}, |grad|={s['final_grad_norm']:.3g}, "
              f"converged={s['converged']}")
    print(f"invert: c in [{c.values.min():.4f}, {c.values.max():.4f}] "
          f"-> {args.out}")
    return 0


def cmd_verify(args) -> int:
    cfg = resolve_config(args, {
        "lambdas": ("verify", "lambdas"), "vb": ("verify", "b"),
        "samples": ("verify", "samples"), "pairs": ("verify", "pairs"),
        "seed": ("verify", "seed"), "rho_floor": ("verify", "rho_floor"),
        "h": ("geometry", "h"),
        "lam": ("objective", "lam"), "b": ("objective", "b"),
        "beta": ("objective", "beta"),
        "neumann_penalty": ("objective", "neumann_penalty"),
        "m_floor": ("optimize", "m_floor"),
    })
    started = time.perf_counter()
    ver = cfg["verify"]
    if args.probe == "carleman":
        h = cfg["geometry"]["h"]
        n = int(round(1.0 / h)) + 1
        grid = Grid3((-0.5, -0.5, 0.0), h, (n, n, n))
        report = carleman_sweep(grid, ver["lambdas"], ver["samples"],
                                ver["seed"], b=ver["b"],
                                rho_floor=ver["rho_floor"])
        inputs = {}
    else:
        datasets = _load_datasets(args.data)
        tb = build_time_basis(datasets[0].T1, datasets[0].N)
        data, _ = normalize_amplitude(datasets[0], tb)
        floor = cfg["optimize"]["m_floor"]
        if floor == "auto":
            floor = auto_floor(data.q0, tb)
        coeffs = SystemCoeffs(tb, m_floor=float(floor))
        ob = cfg["objective"]
        ocfg = ObjectiveConfig(lam=ob["lam"], b=ob["b"], beta=ob["beta"],
                               neumann_penalty=ob["neumann_penalty"])
        report = convexity_probe(data, ocfg, coeffs, ver["pairs"], ver["seed"])
        inputs = {"data": _hash_dir(args.data)}
    print(report.render())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify.json"), "w") as f:
            f.write(report.to_json())
            f.write("\n")
        write_manifest(args.out, f"verify-{args.probe}", cfg, inputs,
                       ["verify.json"], started)
    return 0


def cmd_report(args) -> int:
    cfg = resolve_config(args, {
        "phantom": ("recon", "phantom"), "c_floor": ("recon", "c_floor"),
    })
    started = time.perf_counter()
    prefix = os.path.join(args.run, "c")
    if not os.path.exists(prefix + ".json"):
        raise MissingInputError(prefix + ".json")
    c = load_field(prefix)
    phantom = make_phantom(cfg["recon"]["phantom"])
    rep = metrics(c, phantom, c_floor=cfg["recon"]["c_floor"])
    outdir = args.out or args.run
    os.makedirs(outdir, exist_ok=True)
    written = rep.export(outdir)
    with open(os.path.join(outdir, "report.txt"), "w") as f:
        f.write(rep.render() + "\n")
    with open(os.path.join(outdir, "report.json"), "w") as f:
        json.dump(rep.summary(), f, indent=2, sort_keys=True)
        f.write("\n")
    traces = os.path.join(args.run, "traces.json")
    rows = [f"phantom,{rep.phantom_name}"]
    for key, val in rep.summary().items():
        if key != "phantom":
            rows.append(f"{key},{val}")
    if os.path.exists(traces):
        with open(traces) as f:
            for i, s in enumerate(json.load(f)):
                rows.append(f"level{i}_h,{s['level_h']}")
                rows.append(f"level{i}_final_J,{s['final_J']}")
    with open(os.path.join(outdir, "report.csv"), "w") as f:
        f.write("\n".join(rows) + "\n")
    write_manifest(outdir, "report", cfg, {"run": _hash_dir(args.run)},
                   [os.path.basename(p) for p in written]
                   + ["report.txt", "report.json", "report.csv"], started)
    print(rep.render())
    return 0


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="convexwave",
        description="Globally convex single-source acoustic coefficient "
                    "inversion pipeline.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--threads", type=int,
                       help="cap BLAS/OpenMP worker threads")

    p = sub.add_parser("phantom", help="sample a synthetic coefficient")
    common(p)
    p.add_argument("--name", help="test1 .. test5")
    p.add_argument("--h", type=_parse_h, help="grid spacing (e.g. 1/8)")
    p.add_argument("--preset", choices=("paper", "reduced"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="run the forward solver")
    common(p)
    p.add_argument("--c-dir", help="phantom output directory (default c=1)")
    p.add_argument("--h", type=_parse_h)
    p.add_argument("--preset", choices=("paper", "reduced"))
    p.add_argument("--dt", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--pulse-eps", dest="pulse_eps", type=float)
    p.add_argument("--aux-planes", dest="aux_planes", type=int)
    p.add_argument("--energy-stride", dest="energy_stride", type=int)
    p.add_argument("--noise", type=float, help="relative noise level, e.g. 0.05")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pick", help="reduce a recording to Cauchy data")
    common(p)
    p.add_argument("--rec", required=True, help="simulate output directory")
    p.add_argument("--N", type=int)
    p.add_argument("--T1", type=float)
    p.add_argument("--route", choices=("plane_stack", "shifted_f1"))
    p.add_argument("--levels", type=_parse_levels,
                   help="comma-separated spacings, e.g. 1/8,1/16")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pick)

    p = sub.add_parser("invert", help="multilevel gradient descent")
    common(p)
    p.add_argument("--data", required=True, help="pick output directory")
    p.add_argument("--lam", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--neumann-penalty", dest="neumann_penalty", type=float)
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--step0", type=float)
    p.add_argument("--max-halvings", dest="max_halvings", type=int)
    p.add_argument("--project", action="store_const", const=True)
    p.add_argument("--m-floor", dest="m_floor",
                   help='feasibility floor, a number or "auto"')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("verify", help="randomized analytical probes")
    common(p)
    p.add_argument("probe", choices=("carleman", "convexity"))
    p.add_argument("--h", type=_parse_h)
    p.add_argument("--lambdas", type=_parse_floats)
    p.add_argument("--vb", type=float, help="weight offset b for the probe")
    p.add_argument("--samples", type=int)
    p.add_argument("--rho-floor", dest="rho_floor", type=float)
    p.add_argument("--data", help="pick output directory (convexity)")
    p.add_argument("--pairs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--neumann-penalty", dest="neumann_penalty", type=float)
    p.add_argument("--m-floor", dest="m_floor")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="score a reconstruction")
    common(p)
    p.add_argument("--run", required=True, help="invert output directory")
    p.add_argument("--phantom", dest="phantom")
    p.add_argument("--c-floor", dest="c_floor", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify" and args.probe == "convexity" \
            and not args.data:
        print("error: verify convexity requires --data", file=sys.stderr)
        return 2
    if args.command == "invert" and args.m_floor not in (None, "auto"):
        try:
            args.m_floor = float(args.m_floor)
        except ValueError:
            print(f"error: --m-floor must be a number or 'auto', "
                  f"got {args.m_floor!r}", file=sys.stderr)
            return 2

    limits = None
    threads = getattr(args, "threads", None)
    if threads:
        try:
            import threadpoolctl
            limits = threadpoolctl.threadpool_limits(limits=threads)
        except ImportError:
            print("warning: threadpoolctl not installed; --threads ignored",
                  file=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, GridError, BasisError, IOFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MissingInputError as e:
        print(f"error: missing input: {e}", file=sys.stderr)
        return 4
    except FileNotFoundError as e:
        print(f"error: missing input: {e}", file=sys.stderr)
        return 4
    except NumericalError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return 3
    finally:
        if limits is not None:
            limits.unregister()


if __name__ == "__main__":
    sys.exit(main())
