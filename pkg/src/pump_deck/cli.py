"""``pump-deck`` command line: config ingestion, sweeps, CSV/JSON output.

Configs are TOML.  Every run writes ``<name>.csv`` plus a JSON sidecar
holding the fully resolved config, which can itself be fed back to
``pump-deck run``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .errors import ConfigInvalid, PumpDeckError
from .lindblad import LINEAR, PROTOCOL_KINDS, PumpProtocol, evolve_converged
from .models import KINDS, CUSTOM, LANDAU_ZENER, QWZ, SPIN_ONE, ModelSpec
from .perturbation import (
    lz_transition_closed_form,
    population_transfer,
    three_level_transition_closed_form,
    three_level_transition_corrected,
)
from .pumping import InitialStateSpec, PumpGrid, pumped_charge_numeric, pumped_charge_theory

PUMP_SWEEP = "pump_sweep"
TRANSITION_SWEEP = "transition_sweep"
EXPERIMENTS = (PUMP_SWEEP, TRANSITION_SWEEP)
FIGURES = ("fig1a", "fig1b", "fig2a", "fig2b", "figB1", "figB2", "figB3")
CLOSED_FORMS = ("none", "lz", "three_level", "three_level_printed")

PUMP_HEADER = "gamma,Q_a,Q_b,Q_c,Q_d,Q_theory,Q_numeric,abs_err,flags,wall_time_seconds"
TRANSITION_HEADER = (
    "gamma,delta_p_theory,coherence_part,population_part,delta_p_numeric,"
    "abs_err,closed_form,flags,wall_time_seconds"
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
WORKERS_ENV = "PUMP_DECK_WORKERS"

_TOP_KEYS = {
    "experiment", "name", "gammas", "rate", "protocol", "s_start", "s_end", "numeric",
    "step", "workers", "out", "model", "initial", "grid", "closed_form", "level", "run",
}


def fmt(x):
    """17 significant digits, round-trip safe; empty for missing values."""
    if x is None:
        return ""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    name: str
    model: ModelSpec
    initial: InitialStateSpec
    gammas: tuple
    rate: float = 1e-3
    protocol: str = LINEAR
    s_start: float = -1.0
    s_end: float = 1.0
    grid: PumpGrid = field(default_factory=PumpGrid)
    numeric: bool = True
    step: float | None = None
    closed_form: str = "none"
    level: int | None = None
    workers: int = 1
    out: str = "results"

    def sweep_protocol(self):
        if self.experiment == PUMP_SWEEP:
            return PumpProtocol.linear(self.rate, 0.0, 2 * math.pi)
        return PumpProtocol(self.protocol, self.rate, self.s_start, self.s_end)

    @property
    def tracked_level(self):
        return self.model.dim - 1 if self.level is None else self.level

    def to_dict(self):
        d = {
            "experiment": self.experiment,
            "name": self.name,
            "model": self.model.to_dict(),
            "initial": self.initial.to_dict(),
            "gammas": [float(g) for g in self.gammas],
            "rate": self.rate,
            "numeric": self.numeric,
            "workers": self.workers,
            "out": self.out,
        }
        if self.step is not None:
            d["step"] = self.step
        if self.experiment == PUMP_SWEEP:
            d["grid"] = self.grid.to_dict()
        else:
            d.update(protocol=self.protocol, s_start=self.s_start, s_end=self.s_end,
                     closed_form=self.closed_form, level=self.tracked_level)
        return d

    @classmethod
    def from_dict(cls, raw):
        return _parse(raw)


def _need(d, key, where):
    if key not in d:
        raise ConfigInvalid(f"{where}{key}", "missing")
    return d[key]


def _number(value, name, positive=False, allow_zero=True):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigInvalid(name, f"expected a finite number, got {value!r}")
    if positive and (value < 0 or (value == 0 and not allow_zero)):
        raise ConfigInvalid(name, "must be positive")
    return float(value)


def _gammas(raw):
    if isinstance(raw, dict):
        try:
            start, stop, num = float(raw["start"]), float(raw["stop"]), int(raw["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid("gammas", f"range table needs start, stop, num ({exc})") from None
        spacing = raw.get("spacing", "linear")
        if spacing == "log":
            values = np.logspace(math.log10(start), math.log10(stop), num)
        elif spacing == "linear":
            values = np.linspace(start, stop, num)
        else:
            raise ConfigInvalid("gammas.spacing", f"unknown spacing {spacing!r}")
        raw = [float(v) for v in values]
    if not isinstance(raw, list) or not raw:
        raise ConfigInvalid("gammas", "need a non-empty list")
    values = tuple(_number(g, "gammas") for g in raw)
    if any(g < 0 for g in values):
        raise ConfigInvalid("gammas", "dephasing rates must be non-negative")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigInvalid("gammas", "must be strictly increasing")
    return values


def _model(raw):
    if not isinstance(raw, dict):
        raise ConfigInvalid("model", "expected a table")
    kind = _need(raw, "kind", "model.")
    if kind not in KINDS or kind == CUSTOM:
        raise ConfigInvalid("model.kind", f"unknown or unsupported model {kind!r}")
    extra = set(raw) - {"kind", "delta", "g0", "dephasing"}
    if extra:
        raise ConfigInvalid(f"model.{sorted(extra)[0]}", "unknown key")
    kw = {}
    if "delta" in raw:
        kw["delta"] = _number(raw["delta"], "model.delta")
    if "g0" in raw:
        kw["g0"] = _number(raw["g0"], "model.g0", positive=True, allow_zero=False)
    if "dephasing" in raw:
        kw["dephasing"] = tuple(_number(a, "model.dephasing") for a in raw["dephasing"])
    try:
        return ModelSpec(kind, **kw)
    except ValueError as exc:
        raise ConfigInvalid("model", str(exc)) from None


def _initial(raw, dim):
    if not isinstance(raw, dict):
        raise ConfigInvalid("initial", "expected a table")
    try:
        spec = InitialStateSpec.from_dict(raw)
    except KeyError as exc:
        raise ConfigInvalid(f"initial.{exc.args[0]}", "missing") from None
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("initial", str(exc)) from None
    if spec.dim != dim:
        raise ConfigInvalid("initial", f"state has {spec.dim} levels, model has {dim}")
    return spec


def _parse(raw):
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigInvalid(sorted(unknown)[0], "unknown key")
    experiment = _need(raw, "experiment", "")
    if experiment not in EXPERIMENTS:
        raise ConfigInvalid("experiment", f"expected one of {EXPERIMENTS}, got {experiment!r}")
    name = str(raw.get("name", experiment))
    model = _model(_need(raw, "model", ""))
    initial = _initial(_need(raw, "initial", ""), model.dim)
    kw = dict(
        experiment=experiment,
        name=name,
        model=model,
        initial=initial,
        gammas=_gammas(_need(raw, "gammas", "")),
        rate=_number(raw.get("rate", 1e-3), "rate", positive=True, allow_zero=False),
        numeric=raw.get("numeric", True),
        out=str(raw.get("out", "results")),
    )
    if not isinstance(kw["numeric"], bool):
        raise ConfigInvalid("numeric", "expected true or false")
    if "step" in raw:
        kw["step"] = _number(raw["step"], "step", positive=True, allow_zero=False)
    workers = raw.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigInvalid("workers", "expected an integer >= 1")
    kw["workers"] = workers

    if experiment == PUMP_SWEEP:
        if not model.has_k:
            raise ConfigInvalid("model.kind", "pump sweeps need a lattice model")
        g = raw.get("grid", {})
        try:
            kw["grid"] = PumpGrid(int(g.get("n_k", 201)), int(g.get("n_s", 201)))
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid("grid", str(exc)) from None
        if raw.get("protocol", LINEAR) != LINEAR:
            raise ConfigInvalid("protocol", "pump sweeps run a linear cycle over [0, 2 pi]")
        for key in ("s_start", "s_end", "closed_form", "level"):
            if key in raw:
                raise ConfigInvalid(key, "not used by pump sweeps")
        return ExperimentConfig(**kw)

    protocol = raw.get("protocol", LINEAR)
    if protocol not in PROTOCOL_KINDS:
        raise ConfigInvalid("protocol", f"expected one of {PROTOCOL_KINDS}")
    kw.update(
        protocol=protocol,
        s_start=_number(raw.get("s_start", -1.0), "s_start"),
        s_end=_number(raw.get("s_end", 1.0), "s_end"),
    )
    if kw["s_end"] <= kw["s_start"]:
        raise ConfigInvalid("s_end", "must exceed s_start")
    closed = raw.get("closed_form", "none")
    if closed not in CLOSED_FORMS:
        raise ConfigInvalid("closed_form", f"expected one of {CLOSED_FORMS}")
    if closed == "lz" and (model.kind != LANDAU_ZENER or protocol != LINEAR):
        raise ConfigInvalid("closed_form", "the lz closed form needs a linear Landau-Zener sweep")
    if closed.startswith("three_level") and model.kind != SPIN_ONE:
        raise ConfigInvalid("closed_form", "three-level closed forms need the spin_one model")
    if closed != "none" and (kw["s_start"], kw["s_end"]) != (-1.0, 1.0):
        raise ConfigInvalid("closed_form", "closed forms hold only for s from -1 to 1")
    kw["closed_form"] = closed
    if "level" in raw:
        level = raw["level"]
        if isinstance(level, bool) or not isinstance(level, int) or not 0 <= level < model.dim:
            raise ConfigInvalid("level", f"expected an integer in [0, {model.dim})")
        kw["level"] = level
    if model.has_k:
        raise ConfigInvalid("model.kind", "transition sweeps take a single-parameter model")
    return ExperimentConfig(**kw)


def load_configs(path):
    """Read a TOML config or JSON sidecar; ``[[run]]`` tables expand into
    several configs sharing the top-level defaults."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(str(path), f"not valid JSON ({exc})") from None
        raw = raw.get("config", raw)
    else:
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigInvalid(str(path), f"not valid TOML ({exc})") from None
    runs = raw.pop("run", None)
    if runs is None:
        return [_parse(raw)]
    if not isinstance(runs, list) or not runs:
        raise ConfigInvalid("run", "expected an array of tables")
    out = []
    for i, sub in enumerate(runs):
        merged = {**raw, **sub}
        for key in ("model", "initial", "grid"):
            if isinstance(raw.get(key), dict) and isinstance(sub.get(key), dict):
                merged[key] = {**raw[key], **sub[key]}
        try:
            out.append(_parse(merged))
        except ConfigInvalid as exc:
            raise ConfigInvalid(f"run[{i}].{exc.field}", str(exc).split(": ", 1)[-1]) from None
    names = [c.name for c in out]
    if len(set(names)) != len(names):
        raise ConfigInvalid("run.name", "run names must be unique")
    return out


def preset_path(name):
    if name not in FIGURES:
        raise ConfigInvalid("figure", f"unknown figure {name!r}; expected one of {FIGURES}")
    return resources.files("pump_deck") / "presets" / f"{name}.toml"


# ---------------------------------------------------------------- execution


def _pump_row(cfg, gamma, timing):
    t0 = time.perf_counter()
    protocol = cfg.sweep_protocol()
    br = pumped_charge_theory(cfg.model, cfg.initial, gamma, cfg.grid, protocol=protocol)
    flags = list(br.flags)
    q_num = err = None
    if cfg.numeric:
        num = pumped_charge_numeric(cfg.model, cfg.initial, gamma, cfg.grid, cfg.rate, cfg.step)
        q_num = num.Q
        err = abs(br.Q_theory - q_num)
        flags.extend(f for f in num.flags if f not in flags)
    wall = time.perf_counter() - t0 if timing else None
    return [gamma, br.Q_a, br.Q_b, br.Q_c, br.Q_d, br.Q_theory, q_num, err, ";".join(flags), wall]


def _closed_form(cfg, gamma, rho):
    v = cfg.rate
    if cfg.closed_form == "lz":
        return lz_transition_closed_form(v, gamma), ()
    # descending labels: 1 = top, 2 = middle
    r11, r22, r12 = rho[2, 2].real, rho[1, 1].real, rho[2, 1]
    g0 = cfg.model.g0
    if cfg.closed_form == "three_level":
        return three_level_transition_corrected(v, gamma, g0, r11, r22, r12), ()
    z = three_level_transition_closed_form(v, gamma, g0, -1.0, r11, r22, r12)
    return z.real, (("complex_closed_form",) if abs(z.imag) > 0 else ())


def _transition_row(cfg, gamma, timing):
    t0 = time.perf_counter()
    protocol = cfg.sweep_protocol()
    rho = cfg.initial.density(0.0)
    j = cfg.tracked_level
    rep = population_transfer(cfg.model, protocol, rho, gamma)
    flags = list(rep.flags)
    numeric = err = closed = None
    if cfg.numeric:
        start = cfg.model.frame(0.0, protocol.s_start)
        end = cfg.model.frame(0.0, protocol.s_end)
        traj, report = evolve_converged(start.expand(rho), cfg.model, protocol, gamma, step=cfg.step)
        if not report.passed:
            flags.append("not_converged")
        numeric = float(end.project(traj.final)[j, j].real - rho[j, j].real)
        err = abs(rep.delta_p[j] - numeric)
    if cfg.closed_form != "none":
        closed, extra = _closed_form(cfg, gamma, rho)
        flags.extend(extra)
    wall = time.perf_counter() - t0 if timing else None
    return [gamma, rep.delta_p[j], rep.coherence_part[j], rep.population_part[j],
            numeric, err, closed, ";".join(flags), wall]


def _run_item(args):
    raw, gamma, timing = args
    cfg = _parse(raw)
    if cfg.experiment == PUMP_SWEEP:
        return _pump_row(cfg, gamma, timing)
    return _transition_row(cfg, gamma, timing)


def format_rows(header, rows):
    lines = [header]
    for row in rows:
        cells = [c if isinstance(c, str) else fmt(c) for c in row]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def run_experiment(cfg, workers=None, out=None, theory_only=False, timing=False):
    """Run one config; returns the CSV path.  Row order follows the gamma
    list regardless of worker count."""
    if theory_only:
        cfg = replace(cfg, numeric=False)
    workers = workers or cfg.workers
    cfg.model.check_gapped()
    raw = cfg.to_dict()
    items = [(raw, g, timing) for g in cfg.gammas]
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
            rows = list(pool.map(_run_item, items))
    else:
        rows = [_run_item(it) for it in items]
    header = PUMP_HEADER if cfg.experiment == PUMP_SWEEP else TRANSITION_HEADER
    out_dir = Path(out or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{cfg.name}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_rows(header, rows))
    sidecar = {"version": __version__, "config": cfg.to_dict()}
    with open(out_dir / f"{cfg.name}.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path


def read_rows(path):
    """Parse a pump CSV back into dicts of floats (None for empty cells)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    keys = lines[0].split(",")
    out = []
    for line in lines[1:]:
        row = {}
        for k, cell in zip(keys, line.split(",")):
            if k == "flags":
                row[k] = tuple(cell.split(";")) if cell else ()
            else:
                row[k] = float(cell) if cell else None
        out.append(row)
    return out


# ---------------------------------------------------------------------- CLI


def _default_workers():
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigInvalid(WORKERS_ENV, f"expected an integer, got {value!r}") from None
    if n < 1:
        raise ConfigInvalid(WORKERS_ENV, "must be >= 1")
    return n


def _run_configs(configs, args):
    workers = args.workers or _default_workers()
    for cfg in configs:
        path = run_experiment(cfg, workers, args.out, args.theory_only, args.timing)
        print(f"wrote {path}")


def build_parser():
    p = argparse.ArgumentParser(prog="pump-deck", description=__doc__.splitlines()[0].replace("``", ""))
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${WORKERS_ENV} or config)")
        sp.add_argument("--theory-only", action="store_true", help="skip the Lindblad runs")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--timing", action="store_true", help="fill wall_time_seconds (output no longer byte-reproducible)")

    r = sub.add_parser("run", help="run a TOML config or JSON sidecar")
    r.add_argument("config")
    common(r)

    f = sub.add_parser("figure", help="run a bundled figure preset")
    f.add_argument("name", choices=FIGURES)
    common(f)

    v = sub.add_parser("verify", help="run the property and oracle checks")
    mode = v.add_mutually_exclusive_group()
    mode.add_argument("--fast", dest="full", action="store_false", help="checks under ~2 minutes (default)")
    mode.add_argument("--full", dest="full", action="store_true", help="include desk-scale Lindblad comparisons")
    v.add_argument("--gauge-scramble", action="store_true", help="randomise eigenvector phases before gauge fixing")
    v.add_argument("--coarse-step", type=float, default=None, metavar="FACTOR",
                   help="debug: inflate the integrator step by FACTOR (negative control)")
    v.set_defaults(full=False)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            from .verification import run_checks

            results = run_checks(full=args.full, gauge_scramble=args.gauge_scramble, coarse_step=args.coarse_step)
            width = max(len(r.name) for r in results)
            for r in results:
                print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
            failed = sum(not r.passed for r in results)
            print(f"{len(results) - failed}/{len(results)} checks passed")
            return EXIT_OK if failed == 0 else EXIT_RUNTIME
        if args.workers is not None and args.workers < 1:
            raise ConfigInvalid("--workers", "must be >= 1")
        if args.command == "figure":
            with resources.as_file(preset_path(args.name)) as path:
                configs = load_configs(path)
        else:
            configs = load_configs(args.config)
        _run_configs(configs, args)
    except (ConfigInvalid, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PumpDeckError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
