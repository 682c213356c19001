"""Command-line entry point: simulate, calibrate, evaluate, crossval,
study, stability, ceg, serve.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure, 5 I/O.
All outputs go to paths named by flags; every random choice funnels
through --seed.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from . import clarke, modelio, pipeline, serialize
from .acquisition import (AcquisitionConfig, AcquisitionError, ForwardModel,
                          generate_dataset)
from .data import ChannelSet, DataError, load_dataset, save_dataset
from .dnn import DnnError, LmConfig
from .pipeline import ModelSpec, PipelineError
from .regression import FitError
from .telemetry import serve as telemetry_serve

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

MODEL_KINDS = ("mpr3", "mpr4", "logistic", "svr", "dnn")


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _read_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise CliError(f"config file not found: {path}", EXIT_IO)
        cp.read(path)
    return cp


def _acquisition_config(cp: configparser.ConfigParser, seed: int) -> AcquisitionConfig:
    sec = cp["acquisition"] if cp.has_section("acquisition") else {}
    return AcquisitionConfig(
        adc_bits=int(sec.get("adc_bits", 16)),
        full_scale=float(sec.get("full_scale", 4.096)),
        sample_rate=float(sec.get("sample_rate", 128)),
        averaging_count=int(sec.get("averaging_count", 128)),
        snr_db=float(sec.get("snr_db", 25.2)),
        noise_power=float(sec.get("noise_power", 0.08)),
        seed=seed,
    )


def _lm_config(cp: configparser.ConfigParser, seed: int) -> LmConfig:
    sec = cp["lm"] if cp.has_section("lm") else {}
    return LmConfig(
        lambda_init=float(sec.get("lambda_init", 1e-3)),
        lambda_up=float(sec.get("lambda_up", 10)),
        lambda_down=float(sec.get("lambda_down", 10)),
        max_iters=int(sec.get("max_iters", 200)),
        grad_tol=float(sec.get("grad_tol", 1e-6)),
        seed=seed,
    )


def _model_spec(args, cp: configparser.ConfigParser) -> ModelSpec:
    svr = cp["svr"] if cp.has_section("svr") else {}
    layers = tuple(int(s) for s in args.layers.split("x")) if args.layers else (10,)
    gamma = svr.get("gamma")
    return ModelSpec(
        kind=args.model,
        channels=ChannelSet.from_tag(args.channels),
        hidden_layers=layers,
        seed=args.seed,
        svr_c=float(svr.get("c", 100)),
        svr_eps=float(svr.get("eps_tube", 5)),
        svr_gamma=float(gamma) if gamma else None,
        lm=_lm_config(cp, args.seed),
    )


def _load(path: str, strict: bool = True):
    if not path:
        raise CliError("missing input path", EXIT_USAGE)
    return load_dataset(path, strict=strict)


def _read_pairs(path: str, columns: tuple[str, ...]):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing columns {missing} in {path}")
        rows = [[float(row[c]) for c in columns] for row in reader]
    if not rows:
        raise DataError(f"no data rows in {path}")
    return np.array(rows)


# --- subcommands ------------------------------------------------------------

def cmd_simulate(args) -> int:
    cp = _read_config(args.config)
    cfg = _acquisition_config(cp, args.seed)
    ds = generate_dataset(args.n, cfg=cfg, fm=ForwardModel())
    save_dataset(ds, args.out)
    print(f"simulate: wrote {len(ds)} records to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    cp = _read_config(args.config)
    train = _load(args.train)
    model = _model_spec(args, cp).fit(train)
    modelio.save_model(model, args.out)
    print(f"calibrate: {args.model}/{args.channels} on {len(train)} samples -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    model = modelio.load_model(args.model)
    ds = _load(args.data)
    X = ds.voltage_matrix(modelio.model_channels(model))
    ref = ds.glucose()
    est = np.atleast_1d(modelio.predict(model, X))
    from . import metrics
    report = metrics.full_report(ref, est)
    ceg = clarke.ceg_report(ref, est)
    doc = {"n": report.n, "metrics": report.to_dict(), "ceg": ceg.to_dict()}
    serialize.dump_file(doc, args.report)
    if args.ceg_svg:
        clarke.ceg_svg(ceg, args.ceg_svg)
    print(f"evaluate: n={report.n} mARD={report.mard:.3f}% "
          f"CEG A+B={ceg.percent_ab:.1f}% -> {args.report}")
    return 0


def cmd_crossval(args) -> int:
    cp = _read_config(args.config)
    ds = _load(args.data)
    spec = _model_spec(args, cp)
    result = pipeline.crossval(ds, spec, k=args.folds, seed=args.seed)
    doc = {
        "k": args.folds,
        "pooled": result.pooled.to_dict(),
        "per_fold": [r.to_dict() for r in result.per_fold],
        "fold_errors": {str(k): v for k, v in result.fold_errors.items()},
    }
    serialize.dump_file(doc, args.report)
    if args.out:
        with Path(args.out).open("w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ref", "pred"])
            for r, p in zip(result.ref, result.pred):
                w.writerow([f"{r:g}", f"{p:.6f}"])
    print(f"crossval: k={args.folds} pooled mARD={result.pooled.mard:.3f}% -> {args.report}")
    return 0


def cmd_study(args) -> int:
    train = _load(args.train)
    val = _load(args.data)
    degrees = (args.degree,) if args.degree else (3, 4)
    result = pipeline.run_channel_study(train, val, degrees=degrees)
    serialize.dump_file(result.to_dict(), args.report)
    print(result.to_text())
    return 0


def cmd_stability(args) -> int:
    rows = _read_pairs(args.data, ("timestamp", "ref", "pred"))
    series = [(float(t), r, p) for t, r, p in rows]
    report = pipeline.stability_report(series)
    serialize.dump_file(report.to_dict(), args.report)
    verdict = "stable" if report.stable else "unstable"
    print(f"stability: max deviation {report.max_deviation:.2f} mg/dl ({verdict})")
    return 0


def cmd_ceg(args) -> int:
    rows = _read_pairs(args.data, ("ref", "pred"))
    report = clarke.ceg_report(rows[:, 0], rows[:, 1])
    serialize.dump_file(report.to_dict(), args.report)
    if args.ceg_svg:
        clarke.ceg_svg(report, args.ceg_svg)
    print(f"ceg: n={len(report.points)} A+B={report.percent_ab:.1f}%")
    return 0


def cmd_serve(args) -> int:
    print(f"serve: listening on {args.addr}, store {args.store}")
    telemetry_serve(args.addr, args.store)
    return 0


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nirglucose",
        description="Calibration and evaluation toolkit for a three-channel "
                    "NIR non-invasive glucometer.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "seed" in names:
            p.add_argument("--seed", type=int, default=0)
        if "config" in names:
            p.add_argument("--config", default=None, help="INI config file")
        if "model_kind" in names:
            p.add_argument("--model", choices=MODEL_KINDS, required=True)
            p.add_argument("--channels", default="rm4",
                           choices=["rm1", "rm2", "rm3", "rm4"])
            p.add_argument("--layers", default=None,
                           help="hidden layer sizes for dnn, e.g. 10 or 10x10")

    p = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    common(p, "seed", "config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit a model on a training CSV")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    common(p, "seed", "config", "model_kind")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score a saved model on a dataset")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--ceg-svg", dest="ceg_svg", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--report", required=True)
    p.add_argument("--out", default=None, help="pooled (ref,pred) CSV")
    common(p, "seed", "config", "model_kind")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("study", help="RM1-RM4 x degree channel study")
    p.add_argument("--train", required=True)
    p.add_argument("--data", required=True, help="validation CSV")
    p.add_argument("--degree", type=int, choices=(3, 4), default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("stability", help="repeated-reading stability report")
    p.add_argument("--data", required=True, help="CSV with timestamp,ref,pred")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("ceg", help="Clarke error grid report and SVG")
    p.add_argument("--data", required=True, help="CSV with ref,pred")
    p.add_argument("--report", required=True)
    p.add_argument("--ceg-svg", dest="ceg_svg", default=None)
    p.set_defaults(func=cmd_ceg)

    p = sub.add_parser("serve", help="run the telemetry service")
    p.add_argument("--addr", default="127.0.0.1:8470")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, PipelineError, clarke.CegError, AcquisitionError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, DnnError, np.linalg.LinAlgError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
