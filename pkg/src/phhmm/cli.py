"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The default seed comes from ``PHHMM_SEED`` (0 when unset); ``--seed`` wins.
"""

import argparse
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import presets
from .estimate import FitConfig, fit, forward_pass
from .exceptions import DataError, NumericalError, PhHmmError
from .expand import expand_model
from .io import dumps_model, format_number, ingest, read_model, write_csv
from .reservoir import balance_audit, dependability_table, marginal_inflow_law, moran_build, mttf
from .simulate import (DEFAULT_LEVELS, STUDY_ALIGNMENTS, STUDY_INITS, StudySettings,
                       forecast, replication_study)

SEED_ENV = "PHHMM_SEED"
EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed():
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _csv_text(header, rows):
    buf = io.StringIO()
    write_csv(buf, header, rows)
    return buf.getvalue()


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _matrix_rows(P):
    return [[i, *row] for i, row in enumerate(np.asarray(P).tolist())]


def _matrix_header(P):
    return ["from"] + [f"to_{j}" for j in range(np.asarray(P).shape[1])]


def _parse_mask(text, d):
    try:
        rows = [[float(x) for x in r.split(",")] for r in text.split(";")]
    except ValueError:
        raise UsageError(f"bad --jump-mask {text!r}; use rows like '0,1,0;0,0,1;1,0,0'") from None
    if len(rows) != d or any(len(r) != d for r in rows):
        raise UsageError(f"--jump-mask must be {d}x{d}")
    return rows


def _load_model(args):
    if getattr(args, "preset", None):
        return presets.PRESETS[args.preset](), {}
    return read_model(args.model)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fit(args):
    series = ingest(args.data)
    d = args.regimes
    phases = args.phases or [1] * d
    if len(phases) != d:
        raise UsageError(f"--phases needs {d} values")
    fams = args.emission if len(args.emission) > 1 else args.emission[0]
    mask = _parse_mask(args.jump_mask, d) if args.jump_mask else None
    cfg = FitConfig(phase_layout=phases, emission=fams, max_iterations=args.max_iter,
                    tol=args.tol, restarts=args.restarts, seed=args.seed, jump_mask=mask,
                    degenerate_value=args.degenerate_value,
                    labels=tuple(args.labels) if args.labels else None, workers=args.workers)
    rep = fit(series.inflow, cfg)
    meta = {"loglik": rep.model_loglik, "em_loglik": rep.loglik, "aic": rep.aic,
            "parameter_count": rep.k, "iterations": rep.iterations, "seed": args.seed,
            "restarts": args.restarts}
    if args.out:
        Path(args.out).write_text(dumps_model(rep.model, meta), encoding="utf-8")
    order = sorted(range(d), key=lambda i: rep.model.emission[i].mean())
    summary = {
        "loglik": rep.model_loglik,
        "em_loglik": rep.loglik,
        "aic": rep.aic,
        "parameter_count": rep.k,
        "iterations": rep.iterations,
        "restart_logliks": rep.restart_logliks,
        "regimes_by_mean": [{"regime": rep.model.labels[i], "rank": r + 1,
                             "family": rep.model.emission[i].family,
                             "mean": rep.model.emission[i].mean(),
                             "mean_sojourn": rep.model.sojourn[i].mean()}
                            for r, i in enumerate(order)],
    }
    sys.stdout.write(_json_text(summary))


def cmd_reliability(args):
    m, _ = _load_model(args)
    e = expand_model(m)
    n0 = int(math.floor(args.capacity / args.release + 1e-12))
    law = marginal_inflow_law(e, args.release, n0, args.zero_band)
    chain = moran_build(law, args.release, args.capacity, args.max_states)
    times = {}
    for v in range(1, chain.n_states):
        try:
            times[v] = mttf(chain, v)
        except NumericalError:
            times[v] = math.inf
    rows = [(v, n, r, a, times.get(v, math.nan))
            for v, n, r, a in dependability_table(chain, args.horizon)]
    _emit(_csv_text(["v", "n", "reliability", "availability", "mttf"], rows), args.out)
    if args.matrix_out:
        _emit(_csv_text(_matrix_header(chain.P), _matrix_rows(chain.P)), args.matrix_out)


def _param_rows(m):
    yield from ((f"beta[{i + 1}]", b) for i, b in enumerate(m.beta))
    for i in range(m.n_regimes):
        for j in range(m.n_regimes):
            if i != j:
                yield f"jump[{i + 1}][{j + 1}]", m.jump[i, j]
    for i, s in enumerate(m.sojourn):
        for f, a in enumerate(s.alpha):
            yield f"alpha[{i + 1}][{f + 1}]", a
        for f in range(s.order):
            for k in range(s.order):
                yield f"T[{i + 1}][{f + 1}][{k + 1}]", s.T[f, k]
    for i, law in enumerate(m.emission):
        if law.family == "poisson":
            yield f"lambda[{i + 1}]", law.lam
        elif law.family == "exponential":
            yield f"rate[{i + 1}]", law.rate
        elif law.family == "categorical":
            for a, p in zip(law.alphabet, law.probs):
                yield f"prob[{i + 1}][{format_number(a)}]", p


def cmd_simulate(args):
    m, _ = _load_model(args)
    default = presets.SIMULATION_SETTINGS if args.preset == "simulation" else {}
    release = args.release if args.release is not None else default.get("omega")
    capacity = args.capacity if args.capacity is not None else default.get("capacity")
    if release is None or capacity is None:
        raise UsageError("--release and --capacity are required for a model file")
    st = StudySettings(omega=release, capacity=capacity, max_states=args.max_states,
                       zero_band=args.zero_band, horizon=args.horizon, init=args.init,
                       phase_alignment=args.phase_alignment)
    cfg = FitConfig(phase_layout=m.phase_layout, emission=[law.family for law in m.emission],
                    max_iterations=args.max_iter, tol=args.tol, restarts=args.restarts,
                    seed=args.seed, labels=m.labels,
                    degenerate_value=next((law.value for law in m.emission
                                           if law.family == "degenerate"), 0.0))
    rep = replication_study(m, args.replicates, args.length, cfg, seed=args.seed,
                            settings=st, workers=args.workers)
    ok = rep.succeeded
    if not ok:
        raise NumericalError(f"all {args.replicates} replicate fits failed")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    truth = dict(_param_rows(m))
    per_rep = [dict(_param_rows(r.model)) for r in ok]
    prow = []
    for name, tv in truth.items():
        vals = np.array([p[name] for p in per_rep])
        prow.append((name, tv, vals.mean(), vals.std(ddof=1) if vals.size > 1 else 0.0))
    (outdir / "parameters.csv").write_text(
        _csv_text(["parameter", "true", "average", "sd"], prow), encoding="utf-8")
    (outdir / "moran_true.csv").write_text(
        _csv_text(_matrix_header(rep.true_moran), _matrix_rows(rep.true_moran)), encoding="utf-8")
    avg = rep.average_moran()
    (outdir / "moran_average.csv").write_text(
        _csv_text(_matrix_header(avg), _matrix_rows(avg)), encoding="utf-8")
    mean_curves = rep.average_curves()
    crow = []
    for v, n, r, a in rep.true_curves:
        if n == 0:
            continue
        ar, aa = mean_curves[(v, n)]
        if v:
            crow.append(("reliability", v, n, r, ar))
        crow.append(("availability", v, n, a, aa))
    (outdir / "curves.csv").write_text(
        _csv_text(["measure", "v", "n", "true", "average"], crow), encoding="utf-8")
    mrow = [(r.index, v, t) for r in ok for v, t in sorted(r.mttf.items())]
    mrow += [("true", v, t) for v, t in sorted(rep.true_mttf.items())]
    (outdir / "mttf.csv").write_text(_csv_text(["replicate", "v", "mttf"], mrow),
                                     encoding="utf-8")
    summary = {"replicates": args.replicates, "length": args.length, "seed": args.seed,
               "init": args.init, "phase_alignment": args.phase_alignment,
               "failures": rep.failures,
               "errors": [[r.index, r.error] for r in rep.replicates if r.error],
               "files": ["parameters.csv", "moran_true.csv", "moran_average.csv",
                         "curves.csv", "mttf.csv"]}
    (outdir / "summary.json").write_text(_json_text(summary), encoding="utf-8")
    sys.stdout.write(_json_text(summary))


def cmd_forecast(args):
    m, _ = _load_model(args)
    data = ingest(args.data).inflow if args.data else None
    bands = forecast(m, args.horizon, args.bootstrap, seed=args.seed, levels=args.levels,
                     data=data)
    _emit(_csv_text(bands.columns(), list(bands.rows())), args.out)


def cmd_audit(args):
    series = ingest(args.data, capacity=args.capacity)
    if series.outflow is None or series.stored is None:
        raise DataError("audit needs outflow_hm3 and stored_hm3 columns")
    aud = balance_audit(series.inflow, series.outflow, args.capacity, recorded=series.stored)
    rows = zip(series.years, aud.computed, aud.recorded, aud.discrepancy)
    _emit(_csv_text(["hydro_year_start", "computed_hm3", "recorded_hm3", "discrepancy_hm3"],
                    rows), args.out)
    worst = sorted(range(len(series)), key=lambda n: (-abs(aud.discrepancy[n]), n))[: args.top]
    for n in worst:
        if aud.discrepancy[n] != 0:
            print(f"{series.years[n]}: discrepancy {aud.discrepancy[n]:+.3f} hm3",
                  file=sys.stderr)


def cmd_validate(args):
    if args.model:
        m, meta = read_model(args.model)
        msg = {"model": args.model, "regimes": list(m.labels),
               "phase_layout": list(m.phase_layout)}
        if args.data:
            msg["loglik"] = forward_pass(expand_model(m), ingest(args.data).inflow).loglik
        sys.stdout.write(_json_text(msg))
    elif args.data:
        s = ingest(args.data, capacity=args.capacity)
        sys.stdout.write(_json_text({"data": args.data, "years": [int(s.years[0]),
                                                                  int(s.years[-1])],
                                     "length": len(s)}))
    else:
        raise UsageError("validate needs a model file and/or --data")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="phhmm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help=f"base seed (default ${SEED_ENV} or 0)")

    def model_source(sp, preset=True):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--model", help="model JSON file")
        if preset:
            g.add_argument("--preset", choices=sorted(presets.PRESETS))

    f = sub.add_parser("fit", help="fit a PH-HMM to an annual inflow CSV")
    f.add_argument("data")
    f.add_argument("--regimes", type=int, required=True)
    f.add_argument("--phases", type=int, nargs="+")
    f.add_argument("--emission", nargs="+", default=["exponential"],
                   choices=["degenerate", "poisson", "exponential", "categorical"])
    f.add_argument("--jump-mask", help="allowed regime jumps, rows ';' separated")
    f.add_argument("--labels", nargs="+")
    f.add_argument("--degenerate-value", type=float, default=0.0)
    f.add_argument("--max-iter", type=int, default=500)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--restarts", type=int, default=20)
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--out", help="write the fitted model here")
    seeded(f)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("reliability", help="Moran chain dependability tables")
    model_source(r)
    r.add_argument("--release", type=float, required=True)
    r.add_argument("--capacity", type=float, required=True)
    r.add_argument("--horizon", type=int, default=10)
    r.add_argument("--max-states", type=int)
    r.add_argument("--zero-band", type=float, default=1.0,
                   help="upper edge of the 'zero inflow' band for density laws")
    r.add_argument("--out")
    r.add_argument("--matrix-out")
    r.set_defaults(func=cmd_reliability)

    s = sub.add_parser("simulate", help="replicated simulate-and-refit study")
    model_source(s)
    s.add_argument("--replicates", type=int, default=100)
    s.add_argument("--length", type=int, default=100)
    s.add_argument("--restarts", type=int, default=5)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--release", type=float)
    s.add_argument("--capacity", type=float)
    s.add_argument("--max-states", type=int)
    s.add_argument("--zero-band", type=float, default=1.0)
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("--init", choices=STUDY_INITS, default="random",
                   help="EM start per replicate: random restarts or the generating model")
    s.add_argument("--phase-alignment", choices=STUDY_ALIGNMENTS, default="canonical",
                   help="phase order used when averaging fitted sojourn laws")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--outdir", required=True)
    seeded(s)
    s.set_defaults(func=cmd_simulate)

    fc = sub.add_parser("forecast", help="bootstrap predictive bands")
    model_source(fc)
    fc.add_argument("--horizon", type=int, default=5)
    fc.add_argument("--bootstrap", type=int, default=500)
    fc.add_argument("--levels", type=float, nargs="+", default=list(DEFAULT_LEVELS))
    fc.add_argument("--data", help="series to filter the starting hidden state from")
    fc.add_argument("--out")
    seeded(fc)
    fc.set_defaults(func=cmd_forecast)

    a = sub.add_parser("audit", help="water balance audit of recorded volumes")
    a.add_argument("data")
    a.add_argument("--capacity", type=float, required=True)
    a.add_argument("--top", type=int, default=5, help="largest discrepancies to report")
    a.add_argument("--out")
    a.set_defaults(func=cmd_audit)

    v = sub.add_parser("validate", help="check a model file and/or a data file")
    v.add_argument("model", nargs="?")
    v.add_argument("--data")
    v.add_argument("--capacity", type=float)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors exit EXIT_USAGE
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        args.func(args)
    except UsageError as exc:
        print(f"phhmm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"phhmm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, PhHmmError) as exc:
        print(f"phhmm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
