"""Command-line interface.

Subcommands: simulate, train, eval, spectrum, experiment, ingest,
predict.  Options resolve in three layers: command-line flag, then the
matching key in the INI file given by --config (section named after the
subcommand), then the built-in default.  Every run that produces files
writes the fully resolved option set to ``<output>.config.ini`` beside
its primary output.  Relative output paths land in $FUNCMEAN_OUTDIR
when that variable is set.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file
format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys

import numpy as np

from . import dataio, evaluate, network, simulate, spectrum, train
from ._backend import BACKEND_NAME
from .errors import ConfigError, DataFormatError, NumericalError, TrainingDiverged
from .grid import build_grid

__all__ = ["main"]


def _parse_dims(text) -> tuple:
    if isinstance(text, tuple):
        return text
    try:
        dims = tuple(int(part) for part in str(text).split(","))
    except ValueError:
        raise ConfigError(f"dims must be comma-separated integers, got {text!r}")
    if not dims:
        raise ConfigError("dims must not be empty")
    return dims


def _parse_sizes(text) -> tuple:
    return _parse_dims(text)


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in {"1", "true", "yes", "on"}:
        return True
    if low in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


class _Opts:
    """Layered option resolution with an echo of what was used."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.file = {}
        self.resolved = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            parser = configparser.ConfigParser()
            try:
                with open(cfg_path) as fh:
                    parser.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config file {cfg_path}: {exc}")
            except configparser.Error as exc:
                raise ConfigError(f"malformed config file {cfg_path}: {exc}")
            if parser.has_section(command):
                self.file = dict(parser.items(command))

    def get(self, key: str, default=None, cast=str, required=False):
        dest = key.replace("-", "_")
        val = getattr(self.args, dest, None)
        source = "option --" + key
        if val is None and key in self.file:
            val = self.file[key]
            source = f"config key {key} in section [{self.command}]"
        if val is None:
            if default is None and required:
                raise ConfigError(f"missing required option --{key}")
            self.resolved[key] = default
            return default
        try:
            val = cast(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}")
        self.resolved[key] = val
        return val

    def echo(self, primary_output: str) -> None:
        parser = configparser.ConfigParser()
        parser[self.command] = {
            k: ("" if v is None else str(v)) for k, v in sorted(self.resolved.items())
        }
        with open(f"{primary_output}.config.ini", "w") as fh:
            parser.write(fh)


def _out_path(path: str) -> str:
    """Resolve an output path against $FUNCMEAN_OUTDIR and make its parent."""
    base = os.environ.get("FUNCMEAN_OUTDIR", "")
    if base and not os.path.isabs(path):
        path = os.path.join(base, path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# subcommand handlers


def _build_kernel(kind, d, xi_var, normalize_by_d, varrho):
    if kind == "none":
        return None
    if kind == "cosine":
        return spectrum.CosineKernel(
            d=d, xi_var=xi_var, normalize_by_d=normalize_by_d
        )
    if kind == "bernoulli":
        if varrho is None:
            raise ConfigError("the bernoulli kernel needs --varrho")
        return spectrum.BernoulliKernel(varrho=varrho, d=d)
    raise ConfigError(f"unknown kernel {kind!r}")


def cmd_simulate(args) -> int:
    opts = _Opts(args, "simulate")
    preset_name = opts.get("preset")
    preset = evaluate.get_preset(preset_name) if preset_name else None
    mean_name = opts.get(
        "mean", default=preset.mean_name if preset else None, required=True
    )
    dims = opts.get("dims", cast=_parse_dims, required=True)
    n = opts.get("n", cast=int, required=True)
    sigma = opts.get("sigma", cast=float, required=True)
    seed = opts.get("seed", default=0, cast=int)
    kernel_kind = opts.get(
        "kernel", default="cosine" if preset is None else "cosine", cast=str
    )
    xi_var = opts.get(
        "xi-var", default=preset.xi_var if preset else 1.0, cast=float
    )
    normalize = opts.get(
        "normalize-by-d",
        default=preset.normalize_by_d if preset else False,
        cast=_parse_bool,
    )
    varrho = opts.get("varrho", cast=float)
    out = _out_path(opts.get("out", required=True))

    grid = build_grid(dims)
    mean = simulate.mean_function(mean_name)
    if mean.d != grid.d:
        raise ConfigError(
            f"mean {mean_name!r} has d={mean.d} but dims {dims} give d={grid.d}"
        )
    kernel = _build_kernel(kernel_kind, grid.d, xi_var, normalize, varrho)
    noise = simulate.NoiseSpec(sigma=sigma)
    dataset = simulate.simulate_dataset(
        n=n, grid=grid, mean=mean, kernel=kernel, noise=noise, seed=seed
    )
    dataio.write_dataset(out, dataset)
    opts.echo(out)
    print(f"wrote {out}: n={n} N={grid.n_points} "
          f"dims={','.join(str(m) for m in dims)} sigma={sigma} seed={seed}")
    return 0


def _architecture_from_opts(opts, dataset):
    mode = opts.get("mode", default="practical")
    if mode not in {"practical", "theory"}:
        raise ConfigError(f"mode must be practical or theory, got {mode!r}")
    layers = opts.get("layers", default=3, cast=int)
    width = opts.get("width", cast=int)
    c_width = opts.get("c-width", default=2.0, cast=float)
    theta = opts.get("theta", default=1.0, cast=float)
    varrho = opts.get("varrho", default=0.0, cast=float)
    grid = dataset.grid
    if mode == "theory":
        arch = network.theory_architecture(
            dataset.n_subjects,
            grid.n_points,
            varrho=varrho,
            theta=theta,
            d=grid.d,
        )
        if width is not None or opts.resolved.get("layers") not in (None, 3):
            raise ConfigError(
                "theory mode selects depth and width itself; "
                "drop --width/--layers"
            )
        return arch, True
    if width is not None:
        widths = (grid.d,) + (width,) * layers + (1,)
        return network.Architecture(n_hidden=layers, widths=widths), False
    arch = network.practical_architecture(
        dataset.n_subjects,
        grid.n_points,
        d=grid.d,
        n_hidden=layers,
        c_width=c_width,
        varrho=varrho,
        theta=theta,
    )
    return arch, False


def cmd_train(args) -> int:
    opts = _Opts(args, "train")
    data_path = opts.get("data", required=True)
    out = _out_path(opts.get("out", required=True))
    dataset = dataio.read_dataset(data_path)
    arch, constrained = _architecture_from_opts(opts, dataset)
    config = train.TrainConfig(
        epochs=opts.get("epochs", default=300, cast=int),
        batch_size=opts.get("batch-size", default=32, cast=int),
        learning_rate=opts.get("lr", default=1e-3, cast=float),
        l1_coeff=opts.get("l1", default=1e-5, cast=float),
        zero_threshold=opts.get("zero-threshold", default=1e-4, cast=float),
        seed=opts.get("seed", default=0, cast=int),
        constrained=constrained,
    )
    report_path = opts.get("report")
    try:
        params, report = train.fit(dataset, arch, config)
    except TrainingDiverged as exc:
        # keep the partial loss trajectory around for post-mortems
        if report_path and exc.report is not None:
            train.write_report_csv(exc.report, _out_path(report_path))
        raise
    network.save_params(out, params, report.architecture)
    opts.echo(out)
    if report_path:
        train.write_report_csv(report, _out_path(report_path))
    print(
        f"wrote {out}: widths={','.join(str(w) for w in report.architecture.widths)} "
        f"final_loss={report.final_data_loss!r} nonzero={report.nonzero} "
        f"seconds={report.seconds:.2f} backend={BACKEND_NAME}"
    )
    return 0


def cmd_eval(args) -> int:
    opts = _Opts(args, "eval")
    data_path = opts.get("data", required=True)
    params_path = opts.get("params", required=True)
    mean_name = opts.get("mean")
    dump = opts.get("dump")
    dataset = dataio.read_dataset(data_path)
    params, arch = network.load_params(params_path)
    if arch.d != dataset.grid.d:
        raise ConfigError(
            f"network expects d={arch.d}, dataset grid has d={dataset.grid.d}"
        )
    if mean_name is None:
        mean_name = dataset.meta.get("mean", "")
    try:
        mean = simulate.mean_function(mean_name)
    except ConfigError:
        raise ConfigError(
            f"no usable truth: dataset metadata names mean {mean_name!r}; "
            "pass --mean"
        )
    risk = evaluate.empirical_l2_risk(
        params, mean, dataset.grid, clip=arch.f_bound
    )
    print(repr(risk))
    if dump:
        dump = _out_path(dump)
        grid = dataset.grid
        truth = mean.evaluate(grid)
        pred = network.forward_batch(params, grid)
        if arch.f_bound is not None:
            pred = np.clip(pred, -arch.f_bound, arch.f_bound)
        coords = grid.coords()
        with open(dump, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["index"] + [f"x{k + 1}" for k in range(grid.d)]
                + ["prediction", "truth", "sq_error"]
            )
            # 1-based linear indices, matching the grid's external convention
            for j in range(grid.n_points):
                p, t = float(pred[j]), float(truth[j])
                writer.writerow(
                    [j + 1] + [repr(float(c)) for c in coords[j]]
                    + [repr(p), repr(t), repr((p - t) ** 2)]
                )
        opts.echo(dump)
    return 0


def cmd_spectrum(args) -> int:
    opts = _Opts(args, "spectrum")
    kind = opts.get("kernel", required=True)
    d = opts.get("d", default=1, cast=int)
    sizes = opts.get("sizes", cast=_parse_sizes, required=True)
    varrho = opts.get("varrho", default=0.0, cast=float)
    xi_var = opts.get("xi-var", default=1.0, cast=float)
    normalize = opts.get("normalize-by-d", default=False, cast=_parse_bool)
    out = opts.get("out")
    report = spectrum.decay_sweep(
        kind, d, sizes, varrho=varrho, xi_var=xi_var, normalize_by_d=normalize
    )
    if report.fit is not None:
        summary = (
            f"# rho_hat={report.fit.rho_hat!r} stderr={report.fit.stderr!r} "
            f"sizes={report.fit.n_points}"
        )
    else:
        summary = "# rho_hat=unavailable (need at least three distinct sizes)"
    if out:
        out = _out_path(out)
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kernel", "varrho", "d", "N", "lambda1", "method"])
            for n_axis, lam, method in report.rows:
                writer.writerow(
                    [report.kernel, repr(report.varrho), report.d,
                     n_axis, repr(lam), method]
                )
            fh.write(summary + "\n")
        opts.echo(out)
    for n_axis, lam, method in report.rows:
        print(f"N={n_axis} lambda1={lam!r} ({method})")
    print(summary.lstrip("# "))
    return 0


_RECORD_FIELDS = ["sigma", "N", "n", "rep", "seed", "risk", "seconds"]


def _write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RECORD_FIELDS)
        for rec in records:
            writer.writerow(
                [repr(rec.sigma), rec.n_points, rec.n_subjects, rec.rep,
                 rec.seed, repr(rec.risk), repr(rec.seconds)]
            )


def _read_records(path) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _RECORD_FIELDS:
            raise DataFormatError(
                f"{path}: unexpected header {header!r}"
            )
        for row in reader:
            if len(row) != len(_RECORD_FIELDS):
                raise DataFormatError(f"{path}: malformed row {row!r}")
            records.append(
                evaluate.RiskRecord(
                    sigma=float(row[0]),
                    n_points=int(row[1]),
                    n_subjects=int(row[2]),
                    rep=int(row[3]),
                    seed=int(row[4]),
                    risk=float(row[5]),
                    seconds=float(row[6]),
                )
            )
    return records


def cmd_experiment(args) -> int:
    opts = _Opts(args, "experiment")
    preset_ref = opts.get("preset", required=True)
    if preset_ref in evaluate.PRESET_NAMES:
        preset = evaluate.get_preset(preset_ref)
    elif os.path.exists(preset_ref):
        preset = evaluate.preset_from_file(preset_ref)
    else:
        raise ConfigError(
            f"preset {preset_ref!r} is neither a built-in name "
            f"({', '.join(evaluate.PRESET_NAMES)}) nor a file"
        )
    reps = opts.get("reps", cast=int, default=preset.reps)
    seed = opts.get("seed", default=0, cast=int)
    jobs = opts.get("jobs", default=1, cast=int)
    outdir = _out_path(opts.get("outdir", default="."))
    os.makedirs(outdir, exist_ok=True)
    records_path = os.path.join(outdir, "records.csv")
    existing = []
    if os.path.exists(records_path):
        existing = _read_records(records_path)
        print(f"resuming: {len(existing)} records already present",
              file=sys.stderr)

    def progress(out):
        if isinstance(out, evaluate.FailedReplication):
            print(
                f"sigma={out.sigma} N={out.n_points} n={out.n_subjects} "
                f"rep={out.rep} FAILED: {out.message}",
                file=sys.stderr,
            )
        else:
            print(
                f"sigma={out.sigma} N={out.n_points} n={out.n_subjects} "
                f"rep={out.rep} risk={out.risk:.6g} ({out.seconds:.2f}s)",
                file=sys.stderr,
            )

    result = evaluate.run_replications(
        preset,
        reps=reps,
        base_seed=seed,
        jobs=jobs,
        skip_keys={rec.key for rec in existing},
        progress=progress,
    )
    if result.failures:
        print(
            f"warning: {result.n_failed} replication(s) diverged and were "
            "excluded; rerun to retry them",
            file=sys.stderr,
        )
    records = sorted(existing + result.records, key=lambda r: r.key)
    _write_records(records_path, records)
    rows = evaluate.aggregate(records)
    tables_path = os.path.join(outdir, "tables.csv")
    with open(tables_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "N", "n", "reps", "mean_risk", "sd_risk"])
        for row in rows:
            writer.writerow(
                [repr(row.sigma), row.n_points, row.n_subjects, row.reps,
                 repr(row.mean_risk), repr(row.sd_risk)]
            )
    rate_path = os.path.join(outdir, "rate.csv")
    with open(rate_path, "w", newline="") as fh:
        fh.write("# slope of log mean risk on log(n*N^varrho); any slowly "
                 "varying log factor in the true rate is ignored\n")
        writer = csv.writer(fh)
        writer.writerow(["sigma", "N", "slope", "stderr", "target", "cells"])
        for sigma in preset.sigmas:
            for dims in preset.dims_options:
                n_pts = int(np.prod(dims))
                cells = [
                    (row.n_subjects, row.n_points, row.mean_risk)
                    for row in rows
                    if row.sigma == float(sigma) and row.n_points == n_pts
                ]
                if len(cells) < 3:
                    continue
                diag = evaluate.rate_diagnostic(
                    cells, varrho=preset.varrho, theta=preset.theta
                )
                writer.writerow(
                    [repr(float(sigma)), n_pts, repr(diag.slope),
                     repr(diag.stderr), repr(diag.target), diag.n_points]
                )
    opts.echo(os.path.join(outdir, "experiment"))
    for row in rows:
        print(
            f"sigma={row.sigma} N={row.n_points} n={row.n_subjects} "
            f"reps={row.reps} mean_risk={row.mean_risk:.6g} "
            f"sd={row.sd_risk:.6g}"
        )
    return 0


def cmd_ingest(args) -> int:
    opts = _Opts(args, "ingest")
    raw = opts.get("raw", required=True)
    dims = opts.get("dims", cast=_parse_dims, required=True)
    n = opts.get("n", cast=int, required=True)
    out = _out_path(opts.get("out", required=True))
    meta = {}
    for item in getattr(args, "meta", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--meta needs key=value, got {item!r}")
        meta[key] = val
    dataio.ingest_raw(raw, dims, n, out, meta)
    opts.echo(out)
    print(f"wrote {out}: n={n} dims={','.join(str(m) for m in dims)}")
    return 0


def cmd_predict(args) -> int:
    opts = _Opts(args, "predict")
    params_path = opts.get("params", required=True)
    dims = opts.get("dims", cast=_parse_dims, required=True)
    out = _out_path(opts.get("out", required=True))
    fmt = opts.get("format", default="csv")
    if fmt not in {"csv", "pgm", "raw"}:
        raise ConfigError(f"format must be csv, pgm or raw, got {fmt!r}")
    params, arch = network.load_params(params_path)
    grid = build_grid(dims)
    if arch.d != grid.d:
        raise ConfigError(
            f"network expects d={arch.d}, prediction grid has d={grid.d}"
        )
    values = network.forward_batch(params, grid)
    if arch.f_bound is not None:
        # same truncation cmd_eval applies, so the columns agree exactly
        values = np.clip(values, -arch.f_bound, arch.f_bound)
    if fmt == "pgm":
        files = dataio.export_pgm(values, grid, out)
        message = f"wrote {len(files)} image(s), first {files[0]}"
    elif fmt == "raw":
        values.astype("<f8").tofile(out)
        message = f"wrote {out}: {grid.n_points} float64 values"
    else:
        coords = grid.coords()
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["index"] + [f"x{k + 1}" for k in range(grid.d)]
                + ["prediction"]
            )
            for j in range(grid.n_points):
                writer.writerow(
                    [j + 1] + [repr(float(c)) for c in coords[j]]
                    + [repr(float(values[j]))]
                )
        message = f"wrote {out}: {grid.n_points} rows"
    opts.echo(out)
    print(message)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funcmean",
        description="Mean-surface estimation for gridded functional data "
        "with sparse ReLU networks.",
    )
    sub = parser.add_subparsers(dest="command")

    def add_common(p):
        p.add_argument("--config", help="INI file; section [<command>]")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--preset", help="study preset supplying mean and kernel")
    p.add_argument("--mean", help="mean surface name")
    p.add_argument("--dims", help="axis sizes, e.g. 15,15")
    p.add_argument("--n", type=int, help="number of subjects")
    p.add_argument("--sigma", type=float, help="noise standard deviation")
    p.add_argument("--seed", type=int, help="dataset seed (default 0)")
    p.add_argument("--kernel", choices=["cosine", "bernoulli", "none"],
                   help="process covariance family (default cosine)")
    p.add_argument("--xi-var", type=float, help="coefficient variance")
    p.add_argument("--normalize-by-d", action="store_const", const=True,
                   help="divide the cosine covariance by d")
    p.add_argument("--varrho", type=float, help="decay index (bernoulli)")
    p.add_argument("--out", help="output dataset path")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("train", help="fit a network to a dataset's average curve")
    add_common(p)
    p.add_argument("--data", help="dataset path")
    p.add_argument("--out", help="output parameter path")
    p.add_argument("--mode", choices=["practical", "theory"],
                   help="architecture mode (default practical)")
    p.add_argument("--layers", type=int, help="hidden layers (practical)")
    p.add_argument("--width", type=int, help="fixed hidden width (practical)")
    p.add_argument("--c-width", type=float, help="width rule constant")
    p.add_argument("--theta", type=float, help="rate exponent (default 1)")
    p.add_argument("--varrho", type=float, help="grid-size exponent (default 0)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--l1", type=float, help="L1 penalty coefficient")
    p.add_argument("--zero-threshold", type=float)
    p.add_argument("--seed", type=int, help="training seed (default 0)")
    p.add_argument("--report", help="per-epoch loss CSV path")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="empirical L2 risk of a fit vs the truth")
    add_common(p)
    p.add_argument("--data", help="dataset path")
    p.add_argument("--params", help="parameter path")
    p.add_argument("--mean", help="truth mean name (default: dataset metadata)")
    p.add_argument("--dump", help="per-point CSV path")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("spectrum", help="tracked eigenvalue sweep of a kernel")
    add_common(p)
    p.add_argument("--kernel", choices=["cosine", "bernoulli"])
    p.add_argument("--d", type=int, help="number of axes (default 1)")
    p.add_argument("--sizes", help="axis sizes, e.g. 8,16,32")
    p.add_argument("--varrho", type=float, help="decay index (bernoulli)")
    p.add_argument("--xi-var", type=float, help="coefficient variance (cosine)")
    p.add_argument("--normalize-by-d", action="store_const", const=True)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(handler=cmd_spectrum)

    p = sub.add_parser("experiment", help="replicated simulate-fit-evaluate study")
    add_common(p)
    p.add_argument("--preset", help="built-in preset name or preset INI path")
    p.add_argument("--reps", type=int, help="replications per design cell "
                                            "(default: the preset's)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.add_argument("--outdir", help="output directory (default .)")
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("ingest", help="wrap a raw float64 payload as a dataset")
    add_common(p)
    p.add_argument("--raw", help="raw payload path")
    p.add_argument("--dims", help="axis sizes, e.g. 79,95,69")
    p.add_argument("--n", type=int, help="number of subjects")
    p.add_argument("--meta", action="append", help="extra key=value metadata")
    p.add_argument("--out", help="output dataset path")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("predict",
                       help="evaluate a fit on a new grid, as CSV or images")
    add_common(p)
    p.add_argument("--params", help="parameter path")
    p.add_argument("--dims", help="prediction grid axis sizes")
    p.add_argument("--out",
                   help="output path (PGM basename when --format pgm)")
    p.add_argument("--format", choices=["csv", "pgm", "raw"],
                   help="csv rows, 8-bit graymaps, or raw float64 "
                        "(default csv)")
    p.set_defaults(handler=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_help()
        return 2
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
