"""Command-line entry point: ``infratl <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Progress goes to stdout as JSON lines; messages go to stderr.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import metrics, uq
from .atmosphere import AtmosphericSlice, load_grid_csv, synth_atmosphere
from .config import load_config
from .crnn.checkpoint import ModelCheckpoint
from .crnn.train import cross_validate, predict
from .datapipe import (build_database, fit_norm, make_gw_fields, read_dataset, split_database,
                       standard_slice)
from .errors import ConfigError, DataError, InfraTLError
from .gwfield import GwRealization
from .pe import TlCurve, resample_tl, solve_tl


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _note(msg):
    sys.stderr.write("infratl: %s\n" % msg)


def _grid(cfg):
    src = cfg.run.atmosphere
    if src == "synthetic":
        return synth_atmosphere(cfg.atmosphere, seed=cfg.run.atmosphere_seed)
    if not os.path.exists(src):
        raise ConfigError("atmosphere source %s does not exist" % src)
    return load_grid_csv(src)


def _latlon(text):
    try:
        lat, lon = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError("expected LAT,LON, got %r" % text) from None
    return lat, lon


def _fresh_dir(path, force=False):
    """Outputs are write-once: refuse to reuse a non-empty directory."""
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigError("output directory %s is not empty" % path)
    os.makedirs(path, exist_ok=True)


def _load_ckpt(path):
    if not os.path.exists(path):
        raise ConfigError("checkpoint %s does not exist" % path)
    return ModelCheckpoint.load(path)


def _load_slice(path):
    if not os.path.exists(path):
        raise ConfigError("slice file %s does not exist" % path)
    return AtmosphericSlice.load(path)


# ---------------------------------------------------------------------------
# commands


def cmd_build_db(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    cfg.write_resolved(args.out)
    s = build_database(args.out, _grid(cfg), cfg.dataset.scheme(), seed=cfg.run.seed, gw_params=cfg.gw,
                       pe_cfg=cfg.pe, jobs=cfg.run.jobs, log=lambda m: _emit({"build": m}))
    _emit({"records": s["records"], "slices": s["slices"], "computed": s["computed"],
           "skipped": s["skipped"], "failed": len(s["failed"])})
    if s["failed"]:
        raise DataError("%d labels failed; see %s" % (len(s["failed"]), os.path.join(args.out, "failed.jsonl")))
    return 0


def cmd_train(args, cfg):
    ds = read_dataset(args.dataset)
    scheme_split = cfg.dataset.scheme().split
    runs = args.runs if args.runs is not None else cfg.run.runs
    _fresh_dir(args.out, args.force)
    cfg.write_resolved(args.out)

    def make_sets(sel):
        recs = ds.records if sel == 0 else split_database(ds.records, cfg.run.seed, scheme_split, sel)
        norm = ds.norm if sel == 0 and ds.norm else fit_norm(recs, ds.slice, ds.label)
        tr = [r for r in recs if r.split == "train"]
        va = [r for r in recs if r.split == "val"]
        return ds.arrays(tr, norm), ds.arrays(va, norm), norm

    meta = {"label_step_m": ds.meta.get("label_step_m", 5000.0), "dataset_seed": ds.meta.get("seed")}
    ckpts, best = cross_validate(make_sets, runs, cfg.model, cfg.train, seed=cfg.run.seed, log=_emit, meta=meta)
    for r, c in enumerate(ckpts):
        c.save(os.path.join(args.out, "run_%02d.ckpt" % r))
        with open(os.path.join(args.out, "history_%02d.jsonl" % r), "w") as fh:
            for h in c.history:
                fh.write(json.dumps(h, sort_keys=True) + "\n")
    ckpts[best].save(os.path.join(args.out, "model.ckpt"))
    _emit({"runs": runs, "best_run": best, "best_val": min(h["val_loss"] for h in ckpts[best].history)})
    return 0


def _slice_from_args(args, cfg):
    if args.slice:
        return _load_slice(args.slice)
    if args.origin is None or args.azimuth is None:
        raise ConfigError("give a slice file or --origin and --azimuth")
    return standard_slice(_grid(cfg), _latlon(args.origin), args.azimuth, args.azimuth)


def cmd_predict(args, cfg):
    ckpt = _load_ckpt(args.checkpoint)
    curve = predict(ckpt, _slice_from_args(args, cfg), args.frequency)
    _write_text(args.output, curve.to_csv())
    return 0


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)


def cmd_eval(args, cfg):
    ds = read_dataset(args.dataset)
    recs = ds.select(args.split)
    if not recs:
        raise DataError("split %r is empty in %s" % (args.split, args.dataset))
    if args.predictions:
        preds = []
        for r in recs:
            p = os.path.join(args.predictions, r.sample_id + ".csv")
            if not os.path.exists(p):
                raise DataError("missing prediction %s" % p)
            preds.append(TlCurve.load(p))
    elif args.checkpoint:
        ckpt = _load_ckpt(args.checkpoint)
        preds = predict(ckpt, [ds.slice(r.slice_id) for r in recs], [r.frequency_hz for r in recs])
    else:
        raise ConfigError("eval needs --checkpoint or --predictions")
    results = []
    for r, p in zip(recs, preds):
        lab = ds.label(r)
        slc = ds.slice(r.slice_id)
        results.append(metrics.EvalResult(r.sample_id, r.frequency_hz, metrics.mrae(lab.tl_db, p.tl_db),
                                          metrics.rmse_db(lab.tl_db, p.tl_db), metrics.classify_wind(slc),
                                          metrics.layer_stats(slc)))
    extra = {"split": args.split}
    if args.baseline:
        train = ds.select("train")
        if train:
            mean_curve = np.mean([ds.label(r).tl_db for r in train], axis=0)
            extra["baseline_rmse_db"] = float(np.mean([metrics.rmse_db(ds.label(r).tl_db, mean_curve)
                                                       for r in recs]))
    os.makedirs(args.out, exist_ok=True)
    cfg.write_resolved(args.out)
    summ = metrics.write_report(args.out, results, extra)
    _emit(summ)
    return 0


def _gw_list(path):
    if not os.path.isdir(path):
        raise ConfigError("GW directory %s does not exist" % path)
    files = sorted(f for f in os.listdir(path) if f.endswith(".gwrl"))
    if not files:
        raise DataError("no .gwrl files in %s" % path)
    return [GwRealization.load(os.path.join(path, f)) for f in files]


def cmd_uncertainty(args, cfg):
    ckpt = _load_ckpt(args.checkpoint)
    slc = _slice_from_args(args, cfg)
    seed = cfg.run.seed
    if args.mode == "epistemic":
        est = uq.mc_dropout_predict(ckpt, slc, args.frequency, n=cfg.run.n_mc, seed=seed)
    else:
        gws = _gw_list(args.gw_dir) if args.gw_dir else list(make_gw_fields(cfg.run.n_tta, seed, cfg.gw).values())
        if args.mode == "data":
            est = uq.tta_predict(ckpt, slc, gws, args.frequency)
        else:
            n_mc = max(2, cfg.run.n_mc // len(gws)) if args.n_mc is None else args.n_mc
            est = uq.combined_uncertainty(ckpt, slc, gws, args.frequency, n_mc=n_mc, seed=seed)
    _write_text(args.output, est.to_csv())
    return 0


def cmd_tlmap(args, cfg):
    ckpt = _load_ckpt(args.checkpoint)
    grid = _grid(cfg)
    origin = _latlon(args.origin)
    _fresh_dir(args.out, args.force)
    cfg.write_resolved(args.out)
    azs = 360.0 * np.arange(args.n_azimuths) / args.n_azimuths
    slices, done, errors = [], [], []
    for az in azs:
        try:
            slices.append(standard_slice(grid, origin, az, az))
            done.append(float(az))
        except DataError as e:
            errors.append({"azimuth_deg": float(az), "error": str(e)})
    if not slices:
        raise DataError("no azimuth could be built: %s" % errors[0]["error"])
    t0 = time.perf_counter()
    curves = predict(ckpt, slices, np.full(len(slices), args.frequency))
    elapsed = time.perf_counter() - t0
    tl = np.stack([c.tl_db for c in curves])
    r_km = curves[0].range_axis_m / 1000.0
    std = None
    if args.uncertainty:
        gws = list(make_gw_fields(cfg.run.n_tta, cfg.run.seed, cfg.gw).values())
        std = np.stack([uq.tta_predict(ckpt, s, gws, args.frequency).std_curve for s in slices])
    lines = ["azimuth_deg,range_km,tl_db" + (",std_db" if std is not None else "")]
    for i, az in enumerate(done):
        for j, r in enumerate(r_km):
            row = "%.6g,%.6g,%.6f" % (az, r, tl[i, j])
            if std is not None:
                row += ",%.6f" % std[i, j]
            lines.append(row)
    _write_text(os.path.join(args.out, "tlmap.csv"), "\n".join(lines) + "\n")
    summary = {"azimuths": len(done), "ranges": len(r_km), "predict_seconds": elapsed, "errors": errors}
    if args.oracle:
        step = float(ckpt.meta.get("label_step_m", 5000.0))
        rae = []
        for s in slices:
            lab = resample_tl(solve_tl(s, args.frequency, cfg.pe), step, len(r_km))
            rae.append(lab.tl_db)
        rae = metrics.rae_pointwise(np.stack(rae), tl)
        lines = ["azimuth_deg,range_km,rae_pct"]
        for i, az in enumerate(done):
            lines += ["%.6g,%.6g,%.6f" % (az, r, rae[i, j]) for j, r in enumerate(r_km)]
        _write_text(os.path.join(args.out, "rae_map.csv"), "\n".join(lines) + "\n")
        summary["median_rae_pct"] = float(np.nanmedian(rae))
    if args.svg:
        _write_text(os.path.join(args.out, "tlmap.svg"),
                    metrics.svg_polar_map(done, r_km, tl, title="TL (dB) at %g Hz" % args.frequency))
        if std is not None:
            _write_text(os.path.join(args.out, "std.svg"),
                        metrics.svg_polar_map(done, r_km, std, title="std (dB)"))
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _emit(summary)
    if errors:
        _note("%d azimuths skipped; see summary.json" % len(errors))
    return 0


def cmd_report(args, cfg):
    ds = read_dataset(args.dataset)
    recs = ds.select(args.split) if args.split else ds.records
    sids = sorted({r.slice_id for r in recs})
    slices = [ds.slice(s) for s in sids]
    hists = metrics.layer_histograms(slices)
    os.makedirs(args.out, exist_ok=True)
    cfg.write_resolved(args.out)
    rows = []
    for name, h in hists.items():
        for lo, hi, c, d in zip(metrics.HIST_EDGES[:-1], metrics.HIST_EDGES[1:], h.counts, h.density()):
            rows.append({"layer": name, "lo": lo, "hi": hi, "count": int(c), "density": float(d)})
        if args.svg:
            _write_text(os.path.join(args.out, "hist_%s.svg" % name), metrics.svg_histogram(h, name))
    _write_text(os.path.join(args.out, "layer_histograms.csv"), metrics.rows_to_csv(rows))
    winds = [metrics.classify_wind(s) for s in slices]
    summ = {"slices": len(slices),
            "downwind": winds.count("downwind"), "upwind": winds.count("upwind"),
            "overflow": {n: {"under": h.underflow, "over": h.overflow} for n, h in hists.items()}}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summ, fh, indent=2, sort_keys=True)
    _emit(summ)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="INI file overriding the preset")
    p.add_argument("--preset", choices=("desk", "full"), default=argparse.SUPPRESS if suppress else "desk")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--jobs", type=int, default=d)


def build_parser():
    parser = argparse.ArgumentParser(prog="infratl", description=__doc__.splitlines()[0])
    _global_flags(parser, False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, True)
        p.set_defaults(func=fn)
        return p

    p = add("build-db", cmd_build_db, "enumerate slices and compute PE labels")
    p.add_argument("out")

    p = add("train", cmd_train, "train the surrogate with cross-validation runs")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--runs", type=int)
    p.add_argument("--force", action="store_true", help="allow a non-empty output directory")

    def slice_args(p):
        p.add_argument("checkpoint")
        p.add_argument("slice", nargs="?", help="slice file (.atms) on the standard grid")
        p.add_argument("--origin", help="LAT,LON; builds the slice from the atmosphere source")
        p.add_argument("--azimuth", type=float)
        p.add_argument("--frequency", type=float, required=True)
        p.add_argument("-o", "--output", help="output CSV (default stdout)")

    p = add("predict", cmd_predict, "predict one TL curve")
    slice_args(p)

    p = add("eval", cmd_eval, "score predictions against dataset labels")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of <sample_id>.csv curves instead of a model")
    p.add_argument("--split", default="test")
    p.add_argument("--baseline", action="store_true", help="also score the mean training curve")

    p = add("uncertainty", cmd_uncertainty, "predictive spread for one slice")
    slice_args(p)
    p.add_argument("--gw-dir", help="directory of .gwrl realizations (default: generate n_tta)")
    p.add_argument("--mode", choices=("epistemic", "data", "combined"), default="combined")
    p.add_argument("--n-mc", type=int)

    p = add("tlmap", cmd_tlmap, "polar TL map around an origin")
    p.add_argument("checkpoint")
    p.add_argument("out")
    p.add_argument("--origin", required=True)
    p.add_argument("--frequency", type=float, required=True)
    p.add_argument("--n-azimuths", type=int, default=360)
    p.add_argument("--uncertainty", action="store_true")
    p.add_argument("--oracle", action="store_true", help="also run the PE solver and write an RAE map")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--force", action="store_true")

    p = add("report", cmd_report, "layer statistics of a dataset")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--split")
    p.add_argument("--svg", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = {k: getattr(args, k) for k in ("seed", "jobs") if getattr(args, k, None) is not None}
        cfg = load_config(args.preset, args.config, overrides)
        return args.func(args, cfg)
    except InfraTLError as e:
        _note(str(e))
        return e.exit_code
    except OSError as e:
        _note(str(e))
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
