"""Command-line entry point: ``stochattn {fit,calibrate,evaluate,sweep-nu,report}``.

Every command reads one JSON run config and writes into one output
directory, finishing with a ``manifest.json`` that lists each artifact and
its SHA-256. Wall-clock timings go to ``wallclock.json``, the only file not
covered by the byte-for-byte determinism guarantee.

Exit codes: 0 success, 2 config validation failure, 3 numerical failure,
4 I/O failure.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import jsonio
from .backbone import (fit_readout, forward_deterministic, init_encoder, load_model, save_model,
                       with_stochastic_layers)
from .baselines import (DropoutSpec, SGDSchedule, deep_ensemble_predict, deep_ensemble_readout,
                        mc_dropout_ensemble, swag_diag_ensemble, swag_diag_readout)
from .bayesopt import SearchDomain, calibrate_nu, surrogate_objective
from .calibration import CalibrationBatch, eval_loss, target_scale, write_history
from .data import SplitSpec, load_csv, make_sinusoid, split, standardize_splits
from .ensemble import central_interval, draw_ensemble, write_ensembles
from .errors import (EmptySplit, InvalidConfig, MissingColumn, ParseError, StochAttnError)
from .metrics import (coverage_and_sharpness, crps_decomposed, energy_score, evaluate_ensembles,
                      pit, pit_histogram, point_accuracy, temperature_scale, w1_to_uniform)
from .rng import derive_seed

THREADS_ENV = "STOCHATTN_THREADS"
MANIFEST = "manifest.json"
WALLCLOCK = "wallclock.json"
TRACE = "bo_trace.jsonl"
SUMMARY = "calibration_summary.json"
LEDGER = "cost_ledger.json"

# stream tags for the evaluation draws
_SA_TEST, _SA_CAL = 0x5A, 0x5C
_DROP_TEST, _DROP_CAL = 0xD1, 0xD2
_SWAG_FIT, _SWAG_DRAW = 0x5A61, 0x5A62
_BOOT = 0xB0


class CostLedger:
    """Per-method counters; values only ever grow."""

    FIELDS = ("forward_passes", "test_passes", "calibration_passes", "post_hoc_passes",
              "training_steps", "readout_fits")

    def __init__(self):
        self.entries = {}

    def add(self, method, **counts):
        entry = self.entries.setdefault(method, dict.fromkeys(self.FIELDS, 0))
        for key, value in counts.items():
            if key not in entry:
                raise KeyError(f"unknown ledger field {key!r}")
            if value < 0:
                raise ValueError("ledger counts are non-negative")
            entry[key] += int(value)
        return entry

    def to_dict(self):
        return {"methods": {k: dict(v) for k, v in sorted(self.entries.items())}}


class _Clock:
    def __init__(self):
        self.seconds = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - t0


def _threads(value):
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(value)
    except ValueError:
        raise InvalidConfig(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise InvalidConfig("thread count must be >= 1")
    return n


def _map(fn, items, threads):
    """Ordered map; results do not depend on ``threads``."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda it: fn(*it), items))


# ---------------------------------------------------------------- pipeline


def load_splits(cfg):
    """``(train, cal, test)`` datasets for ``cfg``, standardized if requested."""
    d = cfg.dataset
    if d.kind == "sinusoid":
        ds = make_sinusoid(d.n, d.x_range, d.amplitude, d.frequency, d.noise_sigma, d.seed)
    else:
        cols = None if d.feature_columns is None else list(d.feature_columns)
        ds = load_csv(d.csv_path, d.target_column, cols, d.standardize)
    s = cfg.split
    parts = split(ds, SplitSpec(s.train_frac, s.cal_frac, s.test_frac, s.seed))
    if ds.standardize:
        parts, _ = standardize_splits(*parts)
    return parts


def fit_model(cfg, train):
    """Frozen encoder (input width taken from the data) plus ridge readout."""
    enc = replace(cfg.encoder, n_features=train.n_features)
    model = fit_readout(init_encoder(enc), train.cases, cfg.ridge)
    layers = None if cfg.sa.stochastic_layers is None else [int(i) for i in cfg.sa.stochastic_layers]
    return with_stochastic_layers(model, layers)


def bo_forward_passes(cfg):
    """Stochastic passes spent by ``calibrate_nu``: ``K * B * batch_size * M``."""
    s = cfg.sa
    return s.K * s.B * s.batch_size * s.M


def sa_ensembles(model, cases, nu, M, master_seed, tag, threads):
    def one(i, c):
        return draw_ensemble(model, c, nu, M, derive_seed(master_seed, tag, i))

    return _map(one, enumerate(cases), threads)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out):
    """Hash every artifact under ``out`` except the manifest and wall-clock file."""
    out = Path(out)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in (MANIFEST, WALLCLOCK))
    doc = {
        "artifacts": [{"path": p.relative_to(out).as_posix(), "sha256": _sha256(p)} for p in files],
        "unhashed": [WALLCLOCK] if (out / WALLCLOCK).exists() else [],
    }
    jsonio.dump(doc, out / MANIFEST)
    return doc


def _write_wallclock(out, clock):
    path = Path(out) / WALLCLOCK
    old = jsonio.load(path) if path.exists() else {}
    old.update({k: float(v) for k, v in clock.seconds.items()})
    jsonio.dump(dict(sorted(old.items())), path)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------- commands


def cmd_fit(cfg, out, clock=None):
    clock = clock or _Clock()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train, cal, test = load_splits(cfg)
    model = clock.run("fit", fit_model, cfg, train)
    save_model(model, out / "model.json")
    pred_test = [forward_deterministic(model, c) for c in test.cases]
    pred_train = [forward_deterministic(model, c) for c in train.cases]
    rmse, mae = point_accuracy(pred_test, test.targets())
    train_rmse, _ = point_accuracy(pred_train, train.targets())
    report = {
        "dataset": train.name.split(":")[0], "noise_sigma": cfg.dataset.noise_sigma,
        "ridge": cfg.ridge, "n_train": len(train), "n_cal": len(cal), "n_test": len(test),
        "test_rmse": rmse, "test_mae": mae, "train_rmse": train_rmse,
        "stochastic_layers": sorted(model.stochastic_layers),
    }
    jsonio.dump(report, out / "fit_report.json")
    _write_wallclock(out, clock)
    write_manifest(out)
    return report


def cmd_calibrate(cfg, model_path, out, clock=None):
    clock = clock or _Clock()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(model_path)
    _, cal, _ = load_splits(cfg)
    s = cfg.sa
    batch = CalibrationBatch(cal.cases, s.B, s.M, s.batch_size)
    domain = SearchDomain(s.nu_min, s.nu_max)
    s0 = target_scale(model, cal.cases, s.batch_size)
    trace = []
    posteriors = []

    def log(k, record, posterior):
        trace.append({"iteration": k, "nu": record.nu, "record": record.to_dict(),
                      "posterior": None if posterior is None else posterior.summary()})
        posteriors.append(posterior)

    nu_star, history = clock.run("calibrate", calibrate_nu, model, batch, domain, s.K, s.master_seed,
                                 s0=s0, on_iteration=log)
    with open(out / TRACE, "w", encoding="utf-8", newline="\n") as fh:
        for line in trace:
            fh.write(jsonio.dumps(line) + "\n")
    write_history(history, out / "calibration_history.jsonl")
    best = min(r.loss_estimate for r in history)
    curve = {}
    for r in history:
        curve.setdefault(r.nu, r)
    summary = {
        "nu_star": int(nu_star),
        "target_scale": s0,
        "domain": [domain.nu_min, domain.nu_max],
        "K": s.K, "B": s.B, "M": s.M, "batch_size": s.batch_size, "master_seed": s.master_seed,
        "bo_forward_passes": bo_forward_passes(cfg),
        "loss_curve": [
            {"nu": nu, "loss": r.loss_estimate, "normalized_loss": r.loss_estimate / best if best > 0 else 1.0,
             "scale": r.scale_estimate}
            for nu, r in sorted(curve.items())
        ],
        "final_posterior": next((p.summary() for p in reversed(posteriors) if p is not None), None),
    }
    jsonio.dump(summary, out / SUMMARY)
    _write_wallclock(out, clock)
    write_manifest(out)
    return summary


def _method_ensembles(cfg, model, train, cal, test, nu, ledger, clock, threads):
    """``{method: (cal_ensembles, test_ensembles)}`` for SA and each baseline."""
    ms = cfg.sa.master_seed
    b = cfg.baselines
    n_cal, n_test = len(cal), len(test)
    out = {}
    M = cfg.sa.ensemble_size
    out["sa"] = (
        clock.run("sa.calibration_ensembles", sa_ensembles, model, cal.cases, nu, M, ms, _SA_CAL, threads),
        clock.run("sa.test_ensembles", sa_ensembles, model, test.cases, nu, M, ms, _SA_TEST, threads),
    )
    ledger.add("sa", test_passes=M * n_test, post_hoc_passes=M * n_cal)
    Mb = b.ensemble_size
    if "mc_dropout" in b.methods:
        spec = DropoutSpec(b.dropout_rate, b.dropout_location)

        def drop(cases, tag):
            return _map(lambda i, c: mc_dropout_ensemble(model, c, spec, Mb, derive_seed(ms, tag, i)),
                        enumerate(cases), threads)

        out["mc_dropout"] = (clock.run("mc_dropout.calibration_ensembles", drop, cal.cases, _DROP_CAL),
                             clock.run("mc_dropout.test_ensembles", drop, test.cases, _DROP_TEST))
        ledger.add("mc_dropout", test_passes=Mb * n_test, forward_passes=Mb * n_test,
                   post_hoc_passes=Mb * n_cal)
    if "swag_diag" in b.methods:
        sched = SGDSchedule(b.swag_steps, b.swag_lr, b.swag_batch_size, b.swag_burn_in,
                            b.swag_snapshot_every)
        post = clock.run("swag_diag.fit", swag_diag_readout, model, train.cases, cfg.ridge, sched,
                         derive_seed(ms, _SWAG_FIT))
        seed = derive_seed(ms, _SWAG_DRAW)

        def swag(cases):
            return [swag_diag_ensemble(model, post, c, Mb, seed, b.swag_scale) for c in cases]

        out["swag_diag"] = (clock.run("swag_diag.calibration_ensembles", swag, cal.cases),
                            clock.run("swag_diag.test_ensembles", swag, test.cases))
        ledger.add("swag_diag", test_passes=Mb * n_test, forward_passes=Mb * n_test,
                   post_hoc_passes=Mb * n_cal, training_steps=b.swag_steps)
    if "deep_ensemble" in b.methods:
        L = b.bootstrap_members
        members = clock.run("deep_ensemble.fit", deep_ensemble_readout, model, train.cases, L,
                            derive_seed(ms, _BOOT), cfg.ridge)

        def boot(cases):
            return [deep_ensemble_predict(members, c, model) for c in cases]

        out["deep_ensemble"] = (clock.run("deep_ensemble.calibration_ensembles", boot, cal.cases),
                                clock.run("deep_ensemble.test_ensembles", boot, test.cases))
        ledger.add("deep_ensemble", test_passes=L * n_test, forward_passes=L * n_test,
                   post_hoc_passes=L * n_cal, readout_fits=L)
    return out


def _write_method_outputs(out, name, ensembles, targets, report, levels, bins):
    jsonio.dump(report.to_dict(), out / "reports" / f"{name}.json")
    left, right, counts = pit_histogram(pit(ensembles, targets), bins)
    _write_csv(out / "pit" / f"{name}.csv", ["bin_left", "bin_right", "count"],
               zip(left.tolist(), right.tolist(), counts.tolist()))
    rows = []
    for i, (e, y) in enumerate(zip(ensembles, targets)):
        for level in levels:
            lo, hi = central_interval(e, level)
            rows.append([i, float(level), lo, hi, float(y), int(lo <= y <= hi)])
    _write_csv(out / "intervals" / f"{name}.csv",
               ["case_id", "level", "lower", "upper", "target", "covered"], rows)
    write_ensembles(ensembles, out / "ensembles" / f"{name}.csv", out / "ensembles" / f"{name}.json",
                    meta={"method": report.method, "variant": report.variant,
                          "temperature": report.temperature})


def cmd_evaluate(cfg, model_path, out, nu=None, calibration=None, threads=1, clock=None):
    """Draw every method's ensembles on the test split and score them.

    ``nu`` defaults to ``nu_star`` from the calibration summary
    (``calibration``, or ``<out>/calibration_summary.json``), whose BO pass
    count is also charged to SA in the cost ledger.
    """
    clock = clock or _Clock()
    out = Path(out)
    for sub in ("reports", "pit", "intervals", "ensembles"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    summary_path = Path(calibration) if calibration else out / SUMMARY
    summary = jsonio.load(summary_path) if summary_path.exists() else None
    if nu is None:
        if summary is None:
            raise InvalidConfig(f"no --nu given and no calibration summary at {summary_path}")
        nu = int(summary["nu_star"])
    bo_passes = int(summary["bo_forward_passes"]) if summary is not None else 0
    model = load_model(model_path)
    train, cal, test = load_splits(cfg)
    ledger = CostLedger()
    ledger.add("sa", calibration_passes=bo_passes)
    ensembles = _method_ensembles(cfg, model, train, cal, test, nu, ledger, clock, threads)
    sa = ledger.entries["sa"]
    ledger.add("sa", forward_passes=sa["test_passes"] + sa["calibration_passes"])
    m = cfg.metrics
    y_cal, y_test = cal.targets(), test.targets()
    dataset = train.name.split(":")[0]
    reports = {}
    for method, (cal_ens, test_ens) in ensembles.items():
        native = evaluate_ensembles(test_ens, y_test, m.levels, method, dataset, cfg.sa.master_seed)
        tau, scaled = clock.run(f"{method}.temperature", temperature_scale, cal_ens, y_cal, test_ens,
                                m.temperature_mode, m.primary_level, m.primary_level)
        tempered = evaluate_ensembles(scaled, y_test, m.levels, method, dataset, cfg.sa.master_seed,
                                      variant="temperature", temperature=tau)
        for rep, ens in ((native, test_ens), (tempered, scaled)):
            name = f"{method}_{rep.variant}"
            _write_method_outputs(out, name, ens, y_test, rep, m.levels, m.pit_bins)
            reports[name] = rep
    jsonio.dump({"nu": int(nu), **ledger.to_dict()}, out / LEDGER)
    _write_wallclock(out, clock)
    write_manifest(out)
    return reports, ledger


def cmd_sweep_nu(cfg, model_path, out, nus, threads=1, clock=None):
    """One row per ``nu``: calibration loss (all cal cases, shared seeds) and test scores."""
    if not nus:
        raise InvalidConfig("sweep-nu needs a nonempty --nu list")
    clock = clock or _Clock()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(model_path)
    _, cal, test = load_splits(cfg)
    s, m = cfg.sa, cfg.metrics
    batch = CalibrationBatch(cal.cases, len(cal) // s.batch_size, s.M, s.batch_size)
    y = test.targets()
    rows = []
    for nu in nus:
        rec, deltas, resid = clock.run("sweep.loss", eval_loss, model, batch, nu, s.master_seed,
                                       return_samples=True)
        per_batch = np.mean((deltas - resid[:, None]) ** 2, axis=1)
        stderr = float(per_batch.std(ddof=1) / math.sqrt(per_batch.size)) if per_batch.size > 1 else 0.0
        ens = clock.run("sweep.ensembles", sa_ensembles, model, test.cases, nu, s.ensemble_size,
                        s.master_seed, _SA_TEST, threads)
        cov, sharp = coverage_and_sharpness(ens, y, m.primary_level)
        crps = float(np.mean([crps_decomposed(e, t)[0] for e, t in zip(ens, y)]))
        energy = float(np.mean([energy_score(e, t) for e, t in zip(ens, y)]))
        rows.append([int(nu), rec.loss_estimate, stderr, rec.scale_estimate,
                     w1_to_uniform(pit(ens, y)), cov, sharp, crps, energy])
    _write_csv(out / "sweep_nu.csv",
               ["nu", "loss", "loss_stderr", "scale", "pit_w1", "coverage", "sharpness", "crps",
                "energy_score"], rows)
    _write_wallclock(out, clock)
    write_manifest(out)
    return rows


def cmd_report(cfg, out, grid_points=64):
    """Plot data from earlier commands in ``out``.

    * ``surrogate_landscape.csv``: posterior-mean surrogate scale and objective
      over a log grid of the domain, from the final BO posterior;
    * ``loss_curve.csv``: evaluated losses normalised by the best (f / f*);
    * ``metrics_summary.csv``: one row per (method, variant), if evaluated.
    """
    out = Path(out)
    summary = jsonio.load(out / SUMMARY)
    written = []
    lo, hi = summary["domain"]
    s0 = summary["target_scale"]
    post = summary["final_posterior"]
    if post is not None:
        grid = sorted({int(round(v)) for v in np.geomspace(lo, hi, grid_points)})
        a, ln_b = post["a_mean"], post["ln_b_mean"]
        shape, scale = post["ig_shape"], post["ig_scale"]
        eps2 = scale / (shape - 1.0) if shape > 1 else scale / shape
        rows = []
        for nu in grid:
            x = np.array([math.log(nu), 1.0])
            spread = math.sqrt(max(eps2 * (1.0 + x @ np.array(post["scale_matrix"]) @ x), 0.0))
            mid = a * math.log(nu) + ln_b
            rows.append([nu, math.exp(mid), math.exp(mid - 2 * spread), math.exp(mid + 2 * spread),
                         float(surrogate_objective(nu, a, ln_b, eps2, s0)), s0])
        _write_csv(out / "surrogate_landscape.csv",
                   ["nu", "scale_mean", "scale_lower", "scale_upper", "objective", "target_scale"], rows)
        written.append("surrogate_landscape.csv")
    _write_csv(out / "loss_curve.csv", ["nu", "loss", "normalized_loss", "scale"],
               [[p["nu"], p["loss"], p["normalized_loss"], p["scale"]] for p in summary["loss_curve"]])
    written.append("loss_curve.csv")
    reports = sorted((out / "reports").glob("*.json")) if (out / "reports").is_dir() else []
    if reports:
        level = format(float(cfg.metrics.primary_level), "g")
        rows = []
        for path in reports:
            r = jsonio.load(path)
            rows.append([r["method"], r["variant"], r["temperature"], r["rmse"], r["pit_w1"], r["crps"],
                         r["energy_score"], r["coverage"][level], r["sharpness"][level]])
        _write_csv(out / "metrics_summary.csv",
                   ["method", "variant", "temperature", "rmse", "pit_w1", "crps", "energy_score",
                    f"coverage_{level}", f"sharpness_{level}"], rows)
        written.append("metrics_summary.csv")
    write_manifest(out)
    return written


# ---------------------------------------------------------------- entry point


def _parser():
    p = argparse.ArgumentParser(prog="stochattn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.add_argument("--seed", type=int, help="override sa.master_seed")
        sp.add_argument("--threads", help=f"worker threads (default: ${THREADS_ENV} or 1)")
        if model:
            sp.add_argument("--model", help="model JSON (default: <out>/model.json)")

    common(sub.add_parser("fit", help="fit the readout and save the model"))
    sp = sub.add_parser("calibrate", help="select nu by Bayesian optimization")
    common(sp, model=True)
    sp = sub.add_parser("evaluate", help="score SA and baselines on the test split")
    common(sp, model=True)
    sp.add_argument("--nu", type=int, help="concentration (default: nu_star from calibration)")
    sp.add_argument("--calibration", help="calibration summary JSON")
    sp = sub.add_parser("sweep-nu", help="loss and scores over a list of nu")
    common(sp, model=True)
    sp.add_argument("--nu", required=True, help="comma-separated list, e.g. 4,25")
    common(sub.add_parser("report", help="emit plot data from earlier outputs"))
    return p


def _load_config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.from_dict({})
    if args.seed is not None:
        cfg = replace(cfg, sa=replace(cfg.sa, master_seed=args.seed))
    return cfg


def _parse_nus(text):
    try:
        nus = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidConfig(f"--nu expects integers, got {text!r}") from None
    if not nus or any(v < 1 for v in nus):
        raise InvalidConfig("--nu values must be positive integers")
    return nus


def run(argv=None):
    """Parse ``argv`` and execute; raises on failure (see :func:`main`)."""
    args = _parser().parse_args(argv)
    cfg = _load_config(args)
    threads = _threads(args.threads)
    out = Path(args.out or cfg.output_dir)
    model = getattr(args, "model", None) or out / "model.json"
    if args.command != "fit" and args.command != "report" and not Path(model).is_file():
        raise FileNotFoundError(f"model file not found: {model}")
    if args.command == "fit":
        result = cmd_fit(cfg, out)
    elif args.command == "calibrate":
        result = cmd_calibrate(cfg, model, out)
    elif args.command == "evaluate":
        result, _ = cmd_evaluate(cfg, model, out, nu=args.nu, calibration=args.calibration,
                                 threads=threads)
        result = {k: {"pit_w1": v.pit_w1, "crps": v.crps, "temperature": v.temperature}
                  for k, v in result.items()}
    elif args.command == "sweep-nu":
        result = cmd_sweep_nu(cfg, model, out, _parse_nus(args.nu), threads=threads)
    else:
        result = cmd_report(cfg, out)
    return result


def exit_code(exc):
    if isinstance(exc, (InvalidConfig, MissingColumn, EmptySplit)):
        return 2
    if isinstance(exc, (OSError, ParseError, json.JSONDecodeError)):
        return 4
    if isinstance(exc, (StochAttnError, ArithmeticError, np.linalg.LinAlgError, ValueError)):
        return 3
    raise exc


def main(argv=None):
    try:
        result = run(argv)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = exit_code(exc)
        print(f"stochattn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    print(json.dumps(result if not isinstance(result, list) else {"rows": len(result)}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
