"""Command-line front end: ``ldflow <subcommand> ...``.

Exit codes: 0 success, 1 runtime error, 2 validation failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .experiments import ExperimentSpec, SpecError, load_instance, run_experiment
from .measures import Flow, Measure
from .model import ModelError, invariant_measure, stationary_flow, validate_assumptions
from .oracle import event_infimum
from .ratefn import (MeasureFlowPair, OptConfig, donsker_varadhan, flow_rate, rate_I,
                     rate_I_variational)
from .simulator import batch_sample
from .tilting import Event, TiltError, build_tilted, estimate_ld_probability

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID, EXIT_USAGE = 0, 1, 2, 64
SCHEMA_VERSION = 1
BUILTIN_MODELS = ("two_cell", "three_cell", "phonon")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _model(arg: str):
    if arg in BUILTIN_MODELS and not Path(arg).exists():
        return load_instance({"kind": arg})
    return load_instance(arg)


def read_vector(path) -> np.ndarray:
    text = Path(path).read_text()
    vals = [float(v) for row in csv.reader(io.StringIO(text)) for v in row if v.strip()]
    return np.asarray(vals)


def read_matrix(path) -> np.ndarray:
    text = Path(path).read_text()
    rows = [[float(v) for v in row if v.strip()] for row in csv.reader(io.StringIO(text))]
    return np.asarray([r for r in rows if r])


def _emit(doc: dict, fmt: str, out=None):
    if fmt == "json":
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["field", "value"])
        for k in sorted(doc):
            v = doc[k]
            w.writerow([k, json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else v])
        text = buf.getvalue()
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _default_start(model, inst) -> int:
    if inst is not None:
        return inst.far_cell()
    ok = np.flatnonzero(~model.absorbing_mask)
    if ok.size == 0:
        raise ModelError("every cell is absorbing")
    return int(ok[0])


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(a) -> int:
    model, _ = _model(a.model)
    rep = validate_assumptions(model, n_deltas=a.n_deltas)
    _emit(rep.to_dict(), a.format, a.out)
    return EXIT_OK if rep.all_passed else EXIT_INVALID


def cmd_simulate(a) -> int:
    model, inst = _model(a.model)
    x0 = a.x0 if a.x0 else [_default_start(model, inst)]
    res = batch_sample(model, x0, a.t, a.paths, a.seed, threads=a.threads)
    if a.binary:
        res.to_binary(a.binary)
    if a.format == "csv":
        text = res.to_csv()
    else:
        rows = []
        for i in range(res.n_paths):
            s = res.summary(i)
            mu = s.pop("mu")
            s["mu"] = {str(int(k)): float(mu[k]) for k in np.flatnonzero(mu)}
            rows.append(s)
        text = json.dumps({"schema_version": SCHEMA_VERSION, "paths": rows,
                           "errors": res.errors}, indent=2) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_INVALID if res.errors else EXIT_OK


def _pair(a, model) -> MeasureFlowPair:
    mu = read_vector(a.mu)
    q = read_matrix(a.q)
    if mu.size != model.n_cells or q.shape != (model.n_cells, model.n_cells):
        raise ValueError("mu/q dimensions do not match the model")
    return MeasureFlowPair(Measure(mu, tol=1e-9), Flow(q), marginal_tol=a.marginal_tol,
                           singular_cells=tuple(a.singular or ()))


def cmd_rate(a) -> int:
    model, _ = _model(a.model)
    pair = _pair(a, model)
    rep = rate_I_variational(pair, model, OptConfig()) if a.variational else rate_I(pair, model)
    _emit(rep.to_dict(), a.format, a.out)
    return EXIT_OK


def cmd_dv(a) -> int:
    model, _ = _model(a.model)
    mu = Measure(read_vector(a.mu), tol=1e-9)
    _emit(donsker_varadhan(mu, model).to_dict(), a.format, a.out)
    return EXIT_OK


def cmd_flowrate(a) -> int:
    model, _ = _model(a.model)
    rep = flow_rate(read_matrix(a.q), model, marginal_tol=a.marginal_tol)
    _emit(rep.to_dict(), a.format, a.out)
    return EXIT_OK


def cmd_tilt(a) -> int:
    model, _ = _model(a.model)
    tilted = build_tilted(_pair(a, model), model)
    text = json.dumps(tilted.to_dict()) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ldprob(a) -> int:
    model, inst = _model(a.model)
    src = a.event
    ev_d = json.loads(Path(src).read_text()) if Path(src).exists() else json.loads(src)
    event = Event.from_dict(ev_d)
    if a.mu and a.q:
        tilted = build_tilted(_pair(a, model), model)
    else:
        n = model.n_cells
        if event.observable == "mu_dot":
            mn = event_infimum(model, event.threshold, f=event.f)
        elif event.observable == "flow_total":
            mn = event_infimum(model, event.threshold, flow_weight=np.ones((n, n)))
        else:
            raise ValueError("automatic tilt supports mu_dot and flow_total events; "
                             "pass --mu/--q otherwise")
        tilted = build_tilted(MeasureFlowPair(mn.mu, mn.q, marginal_tol=1e-8), model)
    x0 = a.x0 if a.x0 is not None else int(tilted.cells[0])
    est = estimate_ld_probability(event, tilted, a.t, a.paths, a.seed, x0=x0,
                                  threads=a.threads)
    doc = est.to_dict()
    doc["decay_rate"] = -est.log_estimate / a.t if est.n_hits else None
    _emit(doc, a.format, a.out)
    return EXIT_OK


def cmd_experiment(a) -> int:
    d = json.loads(Path(a.spec).read_text())
    d["seed"] = a.seed
    if a.out_dir:
        d["out_dir"] = a.out_dir
    if a.paths:
        d["n_paths"] = a.paths
    d["threads"] = a.threads
    spec = ExperimentSpec.from_dict(d)
    status, doc = run_experiment(spec)
    _emit(doc, a.format, None)
    return status


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ldflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt="json"):
        sp.add_argument("model", help="model config JSON or one of " + ", ".join(BUILTIN_MODELS))
        sp.add_argument("--format", choices=("json", "csv"), default=fmt)
        sp.add_argument("--out", help="write output here instead of stdout")

    def stochastic(sp):
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--t", type=float, required=True, help="horizon t_end")
        sp.add_argument("--paths", type=int, required=True)

    def pair(sp, required=True):
        sp.add_argument("--mu", required=required, help="CSV with one weight per cell")
        sp.add_argument("--q", required=required, help="CSV matrix of flow masses")
        sp.add_argument("--marginal-tol", type=float, default=1e-9)
        sp.add_argument("--singular", type=int, nargs="*", help="singular carrier cells")

    sp = sub.add_parser("validate", help="check the standing assumptions")
    common(sp)
    sp.add_argument("--n-deltas", type=int, default=8)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("simulate", help="sample a batch of paths")
    common(sp, fmt="csv")
    stochastic(sp)
    sp.add_argument("--x0", type=int, nargs="+", help="start cells (cycled over paths)")
    sp.add_argument("--binary", help="also write the binary cache here")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("rate", help="joint rate I(mu, Q)")
    common(sp)
    pair(sp)
    sp.add_argument("--variational", action="store_true")
    sp.set_defaults(func=cmd_rate)

    sp = sub.add_parser("dv", help="measure rate by Donsker-Varadhan ascent")
    common(sp)
    sp.add_argument("--mu", required=True)
    sp.set_defaults(func=cmd_dv)

    sp = sub.add_parser("flowrate", help="flow rate function")
    common(sp)
    sp.add_argument("--q", required=True)
    sp.add_argument("--marginal-tol", type=float, default=1e-9)
    sp.set_defaults(func=cmd_flowrate)

    sp = sub.add_parser("tilt", help="tilted model config for a target pair")
    common(sp)
    pair(sp)
    sp.set_defaults(func=cmd_tilt)

    sp = sub.add_parser("ldprob", help="importance-sampling probability of an event")
    common(sp)
    stochastic(sp)
    pair(sp, required=False)
    sp.add_argument("--event", required=True, help="event JSON file or inline JSON")
    sp.add_argument("--x0", type=int)
    sp.set_defaults(func=cmd_ldprob)

    sp = sub.add_parser("experiment", help="run a bundled experiment")
    sp.add_argument("spec", help="experiment spec JSON")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--paths", type=int)
    sp.add_argument("--out-dir")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ModelError, SpecError, TiltError, ValueError, KeyError) as exc:
        sys.stderr.write(f"ldflow: invalid input: {exc}\n")
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"ldflow: error: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
