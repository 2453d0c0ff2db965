"""``coupling-lab``: run coupling experiments from a JSON config.

Subcommands
-----------
couple    coupled replicas, per-time statistics
simulate  uncoupled replicas, per-time particle densities
density   exact density series of one trajectory with the drift bound
cesaro    time-averaged cylinder probabilities
exact     coupling inequality on a finite chain read from text files

Config values can be overridden with ``--set section.key=value`` (value
parsed as JSON when possible).  Exit codes: 0 success, 1 invalid input,
2 an invariant was violated during the run.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import exact as ex
from .coupling import CouplingKind
from .estimators import (
    ReplicaPlan,
    bernoulli_sampler,
    cesaro_estimate,
    constant_sampler,
    density_series,
    drift_bound,
    run_coupled,
)
from .lattice import Configuration, Cylinder, Lattice, LatticeDomainError, density
from .systems import (
    SHIFT_ANNIHILATION,
    InvariantViolation,
    SystemRule,
    identity_rule,
    particle_vacancy_rule,
    tasep_rule,
)

DEFAULTS = {
    "model": {"name": "tasep"},  # parameters default per model (p = 0.5)
    "lattice": {"dimension": 1, "side": 64, "boundary": "torus"},
    "coupling": {"kind": "L_pairing", "L": 4},
    "initial": {
        "x": {"kind": "bernoulli", "r": 0.5},
        "y": {"kind": "bernoulli", "r": 0.5},
    },
    "plan": {"replicas": 4, "horizon": 100, "seed": 0},
    "record": {"radii": [], "cylinders": [], "shift_bound": None, "times": None},
    "cesaro": {"N": 100, "cylinders": [{"0": 1}]},
}

# name -> (constructor, required boundary or None, parameters)
MODELS = {
    "tasep": (lambda c: tasep_rule(float(c.get("p", 0.5))), None, ("p",)),
    "particle_vacancy": (lambda c: particle_vacancy_rule(float(c.get("p", 0.5))), "open", ("p",)),
    "identity": (lambda c: identity_rule(), None, ()),
    "shift_annihilation": (lambda c: SHIFT_ANNIHILATION, "open", ()),
}

PATTERNS = ("zeros", "ones", "alternating", "single")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# --- config ------------------------------------------------------------------

def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict) and k not in ("x", "y") and key != "model":
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a mapping")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, pairs) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, text = item.split("=", 1)
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(key, "unknown key")
            node = node[p]
        if parts[-1] not in node and not (parts[0] == "model" and len(parts) == 2):
            raise ConfigError(key, "unknown key")
        node[parts[-1]] = _parse_value(text)
    return cfg


def load_config(path: str | None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError("config", "top level must be a mapping")
        cfg = _merge(cfg, user)
    return apply_overrides(cfg, overrides)


def _int(cfg, section, key, lo=None):
    v = cfg[section][key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{section}.{key}", f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{section}.{key}", f"must be at least {lo}")
    return v


def build_lattice(cfg) -> Lattice:
    d = _int(cfg, "lattice", "dimension", 1)
    side = _int(cfg, "lattice", "side", 1)
    b = cfg["lattice"]["boundary"]
    if b not in ("torus", "open"):
        raise ConfigError("lattice.boundary", f"expected 'torus' or 'open', got {b!r}")
    try:
        return Lattice(d, side, b)
    except LatticeDomainError as e:
        raise ConfigError("lattice.side", str(e)) from None


def build_model(cfg, lattice: Lattice):
    name = cfg["model"].get("name")
    if name not in MODELS:
        raise ConfigError("model.name", f"unknown model {name!r}; choose from {sorted(MODELS)}")
    make, boundary, params = MODELS[name]
    extra = set(cfg["model"]) - {"name", *params}
    if extra:
        raise ConfigError(f"model.{sorted(extra)[0]}", f"not a parameter of {name}")
    p = cfg["model"].get("p")
    if p is not None and not (isinstance(p, (int, float)) and 0 <= p <= 1):
        raise ConfigError("model.p", f"must be a probability, got {p!r}")
    if boundary is not None and lattice.boundary.value != boundary:
        raise ConfigError("lattice.boundary", f"model {name} needs boundary {boundary!r}")
    if name == "shift_annihilation" and lattice.dimension != 1:
        raise ConfigError("lattice.dimension", "shift_annihilation is one-dimensional")
    return make(cfg["model"])


def _pattern(name: str, lattice: Lattice, key: str) -> Configuration:
    if name == "zeros":
        return Configuration.zeros(lattice)
    if name == "ones":
        return Configuration.full(lattice, 1)
    if name == "alternating":
        return Configuration(lattice, 2, (lattice.coords.sum(axis=1) % 2).reshape(lattice.shape))
    if name == "single":
        return Configuration.from_sites(lattice, [tuple([0] * lattice.dimension)])
    raise ConfigError(key, f"unknown pattern {name!r}; choose from {list(PATTERNS)}")


def build_initial(entry, lattice: Lattice, key: str):
    """A sampler ``rng -> Configuration`` for one component."""
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ConfigError(key, "expected a mapping with a 'kind'")
    kind = entry["kind"]
    if kind == "bernoulli":
        r = entry.get("r")
        if not isinstance(r, (int, float)) or not 0 <= r <= 1:
            raise ConfigError(key + ".r", f"must be a probability, got {r!r}")
        return bernoulli_sampler(lattice, float(r))
    if kind == "pattern":
        return constant_sampler(_pattern(entry.get("name"), lattice, key + ".name"))
    if kind == "file":
        path = entry.get("path")
        try:
            line = Path(path).read_text().strip()
            return constant_sampler(Configuration.from_line(line, lattice))
        except (OSError, TypeError) as e:
            raise ConfigError(key + ".path", f"cannot read {path!r}: {e}") from None
        except (ValueError, LatticeDomainError) as e:
            raise ConfigError(key + ".path", str(e)) from None
    raise ConfigError(key + ".kind", f"unknown initial kind {kind!r}")


def build_plan(cfg) -> ReplicaPlan:
    return ReplicaPlan(
        _int(cfg, "plan", "replicas", 1),
        _int(cfg, "plan", "horizon", 0),
        _int(cfg, "plan", "seed", 0),
    )


def build_cylinders(entries, lattice: Lattice, key: str) -> dict:
    out = {}
    if not isinstance(entries, list):
        raise ConfigError(key, "expected a list of site->value mappings")
    for i, entry in enumerate(entries):
        k = f"{key}[{i}]"
        if not isinstance(entry, dict) or not entry:
            raise ConfigError(k, "expected a nonempty mapping")
        try:
            sites = {tuple(int(c) for c in s.split(",")): int(v) for s, v in entry.items()}
            cyl = Cylinder.of(sites)
            cyl.base_indices(lattice)
        except (ValueError, LatticeDomainError) as e:
            raise ConfigError(k, str(e)) from None
        out[f"c{i}"] = cyl
    return out


# --- output --------------------------------------------------------------------

def write_csv(path: Path, columns: dict, notes):
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="") as fh:
        for line in notes:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_cell(columns[c][i]) for c in names])


def _cell(v):
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return v


def write_json(path: Path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _outputs(args, name: str) -> tuple[Path, Path]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prefix = args.prefix or name
    return out / f"{prefix}.csv", out / f"{prefix}.json"


# --- commands -------------------------------------------------------------------

def cmd_couple(args, cfg) -> int:
    lat = build_lattice(cfg)
    rule = build_model(cfg, lat)
    if not isinstance(rule, SystemRule):
        raise ConfigError("model.name", "coupling needs a particle system model")
    try:
        kind = CouplingKind(cfg["coupling"]["kind"])
    except ValueError:
        raise ConfigError("coupling.kind", f"unknown coupling {cfg['coupling']['kind']!r}") from None
    L = _int(cfg, "coupling", "L", 0)
    if kind is CouplingKind.L_PAIRING and L < 1:
        raise ConfigError("coupling.L", "L-pairing needs L >= 1")
    x0 = build_initial(cfg["initial"]["x"], lat, "initial.x")
    y0 = build_initial(cfg["initial"]["y"], lat, "initial.y")
    plan = build_plan(cfg)
    rec = cfg["record"]
    radii = rec["radii"]
    if not isinstance(radii, list) or not all(isinstance(n, int) and 0 <= n <= lat.radius for n in radii):
        raise ConfigError("record.radii", f"expected radii in 0..{lat.radius}")
    cyls = build_cylinders(rec["cylinders"], lat, "record.cylinders")
    sb = rec["shift_bound"]
    if sb is not None and (not isinstance(sb, int) or sb < 0 or 2 * sb >= lat.side):
        raise ConfigError("record.shift_bound", f"must satisfy 0 <= L < {lat.side}/2")
    trace = [] if args.trace else None
    try:
        run = run_coupled(rule, kind, x0, y0, plan, L=max(L, 1), shift_bound=sb, radii=radii,
                          cylinders=cyls, times=rec["times"], workers=args.workers, trace=trace)
    except LatticeDomainError as e:
        raise ConfigError("record.times", str(e)) from None
    cols = {"t": run.times}
    for name, agg in run.aggregate.items():
        cols[f"{name}_mean"] = agg.mean
        cols[f"{name}_median"] = agg.median
        cols[f"{name}_ci"] = agg.ci
    csv_path, json_path = _outputs(args, "couple")
    write_csv(csv_path, cols, [
        f"coupled replicas: model={cfg['model']['name']} coupling={kind.value} R={plan.R} T={plan.T}",
        "t: time; <series>_mean/_median across replicas; <series>_ci: 3 standard errors",
        "discrepancy: fraction of sites where x and y differ",
        "shifted_discrepancy: minimum over shifts |l| <= shift bound; best_shift_k: minimizing shift",
        "paired / unpaired_x / unpaired_y: particle counts; unpaired_fraction: unpaired share of all particles",
        "density_x_n / density_y_n: particle density in the radius-n window",
        "mismatch_cK: indicator that exactly one component lies in cylinder K",
    ])
    if trace is not None:
        with open(args.trace, "w") as fh:
            for ev in trace:
                fh.write(json.dumps(ev) + "\n")
    last = {k: float(v[-1]) for k, v in cols.items() if k.endswith("_mean")}
    write_json(json_path, {"command": "couple", "config": cfg, "plan": plan.to_dict(),
                           "seeds": [list(s) for s in run.seeds], "final_means": last,
                           "csv": str(csv_path)})
    return 0


def cmd_simulate(args, cfg) -> int:
    lat = build_lattice(cfg)
    dyn = build_model(cfg, lat)
    x0 = build_initial(cfg["initial"]["x"], lat, "initial.x")
    plan = build_plan(cfg)
    radii = cfg["record"]["radii"]
    if not all(isinstance(n, int) and 0 <= n <= lat.radius for n in radii):
        raise ConfigError("record.radii", f"expected radii in 0..{lat.radius}")
    series = {"particles": np.zeros((plan.R, plan.T + 1))}
    for n in radii:
        series[f"density_{n}"] = np.zeros((plan.R, plan.T + 1))
    for r, g in enumerate(plan.generators()):
        x = x0(g)
        for t in range(plan.T + 1):
            if t:
                x = dyn.step(x, g)
            series["particles"][r, t] = x.particle_count()
            for n in radii:
                series[f"density_{n}"][r, t] = float(density(x, n))
    cols = {"t": np.arange(plan.T + 1)}
    for k, v in series.items():
        cols[f"{k}_mean"] = v.mean(axis=0)
    csv_path, json_path = _outputs(args, "simulate")
    write_csv(csv_path, cols, [
        f"uncoupled replicas: model={cfg['model']['name']} R={plan.R} T={plan.T}",
        "particles_mean: mean particle count; density_n_mean: mean density in the radius-n window",
    ])
    write_json(json_path, {"command": "simulate", "config": cfg, "plan": plan.to_dict(),
                           "csv": str(csv_path)})
    return 0


def cmd_density(args, cfg) -> int:
    lat = build_lattice(cfg)
    dyn = build_model(cfg, lat)
    x0 = build_initial(cfg["initial"]["x"], lat, "initial.x")
    plan = build_plan(cfg)
    radii = cfg["record"]["radii"]
    if not all(isinstance(n, int) and 0 <= n <= lat.radius for n in radii):
        raise ConfigError("record.radii", f"expected radii in 0..{lat.radius}")
    rng = plan.generators()[0]
    x = x0(rng)
    series = density_series(dyn, x, [None] + list(radii), plan.T, rng)
    cols = {"t": np.arange(plan.T + 1), "density_full": [float(v) for v in series[None]]}
    bounded = isinstance(dyn, SystemRule) and dyn.conservative
    violations = []
    for n in radii:
        s = series[n]
        cols[f"density_{n}"] = [float(v) for v in s]
        cols[f"change_{n}"] = [0.0] + [float(abs(b - a)) for a, b in zip(s, s[1:])]
        if bounded and n > dyn.V:
            b = drift_bound(n, dyn.V, lat.dimension, x.alphabet.size, exact=True)
            cols[f"bound_{n}"] = [float(b)] * (plan.T + 1)
            violations += [(n, t + 1) for t, (a, c) in enumerate(zip(s, s[1:])) if abs(c - a) > b]
    csv_path, json_path = _outputs(args, "density")
    write_csv(csv_path, cols, [
        f"density series of replica 0: model={cfg['model']['name']} T={plan.T}",
        "density_full: whole-lattice density; density_n: density in the radius-n window",
        "change_n: |density_n(t) - density_n(t-1)|; bound_n: largest change allowed by locality",
    ])
    write_json(json_path, {"command": "density", "config": cfg, "plan": plan.to_dict(),
                           "bound_violations": violations, "csv": str(csv_path)})
    if violations:
        raise InvariantViolation(f"density changed faster than the drift bound at {violations[:5]}")
    return 0


def cmd_cesaro(args, cfg) -> int:
    lat = build_lattice(cfg)
    dyn = build_model(cfg, lat)
    x0 = build_initial(cfg["initial"]["x"], lat, "initial.x")
    plan = build_plan(cfg)
    N = _int(cfg, "cesaro", "N", 1)
    cyls = build_cylinders(cfg["cesaro"]["cylinders"], lat, "cesaro.cylinders")
    est = cesaro_estimate(dyn, x0, N, cyls, plan)
    cols = {
        "cylinder": est.names,
        "sites": [json.dumps(cfg["cesaro"]["cylinders"][i], sort_keys=True) for i in range(len(est.names))],
        "estimate": est.estimates,
        "radius": est.radius,
    }
    csv_path, json_path = _outputs(args, "cesaro")
    write_csv(csv_path, cols, [
        f"time-averaged cylinder probabilities: model={cfg['model']['name']} R={plan.R} N={N}",
        "estimate: mean over replicas of the fraction of times t < N spent in the cylinder",
        f"radius: {est.z} * sqrt(p(1-p)/R)",
    ])
    write_json(json_path, {"command": "cesaro", "config": cfg, "plan": plan.to_dict(),
                           "estimates": est.as_dict(), "csv": str(csv_path)})
    return 0


def cmd_exact(args) -> int:
    try:
        chain = ex.FiniteChain(ex.load_matrix(args.chain, args.exact), exact=args.exact)
        if args.kernel:
            kernel = ex.CouplingKernel(chain, ex.load_matrix(args.kernel, args.exact))
        elif args.coupling == "independent":
            kernel = ex.independent_kernel(chain)
        else:
            kernel = ex.glued_independent_kernel(chain)
    except OSError as e:
        raise ConfigError("chain", str(e)) from None
    report = ex.coupling_inequality_verify(chain, kernel, args.x, args.y, args.T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prefix = args.prefix or "exact"
    payload = report.to_dict()
    payload["rows"] = [{"t": t, "tv": ex._num(a), "survival": ex._num(b)} for t, a, b in report.rows()]
    write_json(out / f"{prefix}.json", payload)
    write_csv(out / f"{prefix}.csv",
              {"t": list(range(args.T + 1)),
               "tv": [ex._num(v) for v in report.tv],
               "survival": [ex._num(v) for v in report.survival]},
              [f"coupling inequality from x={args.x}, y={args.y}",
               "tv: total variation between the laws at time t; survival: P(meeting time > t)"])
    print(report.verdict)
    if not report.holds:
        raise InvariantViolation(f"inequality violated at t={report.violations[:5]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coupling-lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("couple", "coupled replicas"), ("simulate", "uncoupled replicas"),
                        ("density", "density series and drift bound"),
                        ("cesaro", "time-averaged cylinder probabilities")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--prefix", help="output file stem (default: command name)")
        if name == "couple":
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--trace", help="write pairing events of replica 0 as JSON lines")
    p = sub.add_parser("exact", help="coupling inequality on a finite chain")
    p.add_argument("chain", help="matrix file: size, then rows")
    p.add_argument("--kernel", help="pair-chain matrix file (n^2 rows)")
    p.add_argument("--coupling", choices=("glued", "independent"), default="glued")
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--y", type=int, default=1)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--exact", action="store_true", help="rational arithmetic")
    p.add_argument("--out", default=".")
    p.add_argument("--prefix")
    return ap


COMMANDS = {"couple": cmd_couple, "simulate": cmd_simulate, "density": cmd_density,
            "cesaro": cmd_cesaro}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "exact":
            return cmd_exact(args)
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](args, cfg)
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ex.ChainError, LatticeDomainError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
