"""Command-line entry point: ``tempgan <command> ...``.

Every command writes its outputs plus a ``manifest.json`` under ``--out``.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import HourlyGaussianBaseline
from .grid_store import (
    ConditionLabel,
    GridFormatError,
    SampleBucket,
    aggregate,
    export_bucket,
    export_buckets,
    export_grid,
    ingest_bucket,
    ingest_buckets,
    ingest_grid,
)
from .metrics import (
    MetricReport,
    daily_extrema,
    daily_means,
    fdtd,
    qq_envelope,
    spacd,
    tgdd,
    write_csv,
    write_ecdf_csv,
    write_histogram_csv,
    write_qq_csv,
)
from .nets import ArchConfig
from .trainer import GANCheckpoint, TrainConfig, TrainingDiverged, sample_conditioned, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METRICS = ("spacd", "fdtd", "tgdd", "qq", "ecdf", "extrema")
VALUE_KINDS = ("daily_mean", "daily_max", "daily_min", "pixel")

logger = logging.getLogger("tempgan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def sha256(path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(p.rglob("*")) if p.is_dir() else [p]
    for f in files:
        if f.is_file():
            if p.is_dir():
                h.update(str(f.relative_to(p)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, command: str, config: dict, seeds: dict, inputs: list, outputs: list) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": sorted(str(Path(p).relative_to(out)) if Path(p).is_relative_to(out) else str(p) for p in outputs),
        "artifact_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _thread_limit():
    """Honour TEMPGEN_THREADS by capping BLAS pools for the command's duration."""
    value = os.environ.get("TEMPGEN_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"TEMPGEN_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("TEMPGEN_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load_json_arg(value: str | None) -> dict:
    """Accept inline JSON or a path to a JSON file."""
    if not value:
        return {}
    text = Path(value).read_text() if Path(value).is_file() else value
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {value!r}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("JSON config must be an object")
    return data


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ------------------------------------------------------------------------------

def cmd_aggregate(args) -> int:
    ds = ingest_grid(args.input, args.format)
    base_year = args.base_year if args.base_year is not None else int(ds.meta.get("base_year", 1979))
    buckets = aggregate(ds, base_year)
    if not buckets:
        raise GridFormatError(f"{args.input}: no complete 8x8 region or full day found")
    out = _out_dir(args)
    paths = export_buckets(buckets, out / "buckets")
    summary = {
        "regions": sorted({(b.label.x, b.label.y) for b in buckets}),
        "n_buckets": len(buckets),
        "bucket_sizes": {p.name: len(b) for p, b in zip(paths, buckets)},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    write_manifest(out, "aggregate", {"format": args.format, "base_year": base_year}, {},
                   [args.input], [*paths, out / "summary.json"])
    print(f"{len(buckets)} buckets from {len(summary['regions'])} regions -> {out / 'buckets'}")
    return EXIT_OK


TRAIN_FLAGS = ("epochs", "batch_size", "lr_g", "lr_d", "n_critic", "lambda_gp", "lambda_tp", "variant", "seed",
               "checkpoint_every")


def _arch_from(value) -> ArchConfig:
    if isinstance(value, dict):
        return ArchConfig.from_dict(value)
    if value in (None, "toy"):
        return ArchConfig.toy()
    if value == "full":
        return ArchConfig()
    raise UsageError(f"arch must be 'toy', 'full' or an object, got {value!r}")


def cmd_train(args) -> int:
    raw = _load_json_arg(args.config)
    for name in TRAIN_FLAGS + ("arch", "base_year"):
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v
    arch = _arch_from(raw.pop("arch", "toy"))
    base_year = int(raw.pop("base_year", 1979))
    unknown = set(raw) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = TrainConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    buckets = ingest_buckets(args.buckets)
    if not buckets:
        raise GridFormatError(f"no .tbkt buckets found in {args.buckets}")
    out = _out_dir(args)
    ckpt_dir = out / "checkpoint"
    try:
        ckpt, log = train(buckets, cfg, arch, base_year=base_year, out_dir=out)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            exc.last_good.save(out / "last_good")
        raise
    ckpt.save(ckpt_dir)
    log.to_csv(out / "train_log.csv")
    config = {"train": cfg.to_dict(), "arch": arch.to_dict(), "base_year": base_year}
    write_manifest(out, "train", config, {"seed": cfg.seed}, list(args.buckets),
                   [*sorted(ckpt_dir.iterdir()), out / "train_log.csv"])
    print(f"trained {cfg.epochs} epochs on {sum(map(len, buckets))} samples -> {ckpt_dir}")
    return EXIT_OK


def _label(args) -> ConditionLabel:
    try:
        return ConditionLabel(args.month, args.x, args.y, args.k)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_sample(args) -> int:
    label = _label(args)
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    ckpt = GANCheckpoint.load(args.ckpt)
    samples = sample_conditioned(ckpt, label, args.n, args.seed)
    out = _out_dir(args)
    path = out / "samples.tbkt"
    export_bucket(SampleBucket(label, samples.astype(np.float32)), path)
    write_manifest(out, "sample", {"label": label.as_dict(), "n": args.n}, {"seed": args.seed},
                   [args.ckpt], [path])
    print(f"{args.n} samples -> {path}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    buckets = ingest_buckets(args.buckets)
    if not buckets:
        raise GridFormatError(f"no .tbkt buckets found in {args.buckets}")
    out = _out_dir(args)
    paths = []
    for b in buckets:
        lab = b.label
        p = out / f"baseline_x{lab.x}_y{lab.y}_k{lab.k}_m{lab.month:02d}.json"
        HourlyGaussianBaseline().fit(b).save(p)
        paths.append(p)
    write_manifest(out, "baseline", {}, {}, list(args.buckets), paths)
    print(f"{len(paths)} baseline models -> {out}")
    return EXIT_OK


def _values(samples: np.ndarray, kind: str) -> np.ndarray:
    if kind == "daily_mean":
        return daily_means(samples)
    if kind == "daily_max":
        return daily_extrema(samples)[:, 0]
    if kind == "daily_min":
        return daily_extrema(samples)[:, 1]
    return np.asarray(samples, dtype=np.float64).ravel()


_ALLOWED_PARAMS = {
    "spacd": set(),
    "fdtd": {"percentiles"},
    "tgdd": {"n_bins"},
    "qq": {"n_realizations", "values", "levels"},
    "ecdf": {"values"},
    "extrema": set(),
}


def cmd_eval(args) -> int:
    params = _load_json_arg(args.params)
    bad = set(params) - _ALLOWED_PARAMS[args.metric]
    if bad:
        raise UsageError(f"metric {args.metric} does not take params {sorted(bad)}")
    kind = params.get("values", "daily_mean")
    if kind not in VALUE_KINDS:
        raise UsageError(f"values must be one of {VALUE_KINDS}")
    if (args.gen is None) == (args.ckpt is None):
        raise UsageError("give exactly one of --gen or --ckpt")
    real_b = ingest_bucket(args.real)
    real = real_b.samples.astype(np.float64)
    ckpt = GANCheckpoint.load(args.ckpt) if args.ckpt else None
    seed = args.seed
    if ckpt is not None:
        gen = sample_conditioned(ckpt, real_b.label, len(real), seed)
    else:
        gen = ingest_bucket(args.gen).samples.astype(np.float64)

    out = _out_dir(args)
    outputs = []
    report_params = dict(params)
    if args.metric == "spacd":
        value = spacd(real, gen)
    elif args.metric == "fdtd":
        res = fdtd(daily_means(real), daily_means(gen), tuple(params.get("percentiles", (10, 90))))
        value = res.value
        report_params.update(mu_real=res.mu_real, sigma_real=res.sigma_real, mu_gen=res.mu_gen, sigma_gen=res.sigma_gen)
    elif args.metric == "tgdd":
        res = tgdd(real, gen, int(params.get("n_bins", 10)))
        value = res.value
        report_params["effective_bins"] = res.effective_bins
        write_histogram_csv(res, out / "tgdd_bins.csv")
        outputs.append(out / "tgdd_bins.csv")
    elif args.metric == "qq":
        n_real = int(params.get("n_realizations", 100))
        real_v = _values(real, kind)
        if ckpt is not None:
            def sampler(i):
                return _values(sample_conditioned(ckpt, real_b.label, len(real), seed + 1 + i), kind)
        else:
            def sampler(i):
                idx = np.random.default_rng([seed, i]).integers(0, len(gen), len(real))
                return _values(gen[idx], kind)
        env = qq_envelope(real_v, sampler, n_real, params.get("levels"))
        value = float(np.mean(env.contains_identity))
        report_params.update(values=kind, n_realizations=n_real, median_offset=float(np.median(env.offset)))
        write_qq_csv(env, out / "qq.csv")
        outputs.append(out / "qq.csv")
    elif args.metric == "ecdf":
        write_ecdf_csv(_values(real, kind), out / "ecdf_real.csv")
        write_ecdf_csv(_values(gen, kind), out / "ecdf_gen.csv")
        outputs += [out / "ecdf_real.csv", out / "ecdf_gen.csv"]
        value = len(real)
        report_params["values"] = kind
    else:  # extrema
        er, eg = daily_extrema(real), daily_extrema(gen)
        write_csv(out / "extrema_real.csv", ("tmax", "tmin"), er.tolist())
        write_csv(out / "extrema_gen.csv", ("tmax", "tmin"), eg.tolist())
        outputs += [out / "extrema_real.csv", out / "extrema_gen.csv"]
        real_mean, gen_mean = er.mean(axis=0), eg.mean(axis=0)
        # headline: the larger gap between mean daily max / min
        value = float(np.abs(real_mean - gen_mean).max())
        report_params.update(real_mean_tmax=real_mean[0], real_mean_tmin=real_mean[1],
                             gen_mean_tmax=gen_mean[0], gen_mean_tmin=gen_mean[1])

    report = MetricReport(args.metric, value, report_params, real_b.label.as_dict(), len(real), len(gen))
    report.to_json(out / "report.json")
    outputs.append(out / "report.json")
    inputs = [args.real, args.gen or args.ckpt]
    write_manifest(out, "eval", {"metric": args.metric, "params": params}, {"seed": seed}, inputs, outputs)
    print(json.dumps({"metric": args.metric, "value": report.to_dict()["value"]}))
    return EXIT_OK


def cmd_synth_grid(args) -> int:
    from .synthetic import synthetic_grid

    start = datetime.fromisoformat(args.start).replace(tzinfo=timezone.utc)
    ds = synthetic_grid(args.width, args.height, start, args.days, args.base_year, args.seed)
    out = _out_dir(args)
    path = out / "grid.tgrd"
    export_grid(ds, path)
    config = {"width": args.width, "height": args.height, "start": args.start, "days": args.days,
              "base_year": args.base_year}
    write_manifest(out, "synth-grid", config, {"seed": args.seed}, [], [path])
    print(f"{args.width}x{args.height} grid, {ds.n_hours} hours -> {path}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tempgan", description="Conditional GAN for hourly regional temperature maps.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("aggregate", help="grid file -> per-label sample buckets")
    a.add_argument("--input", required=True)
    a.add_argument("--format", choices=("binary", "csv"), default="binary")
    a.add_argument("--base-year", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_aggregate)

    t = sub.add_parser("train", help="train generator and critics on buckets")
    t.add_argument("--buckets", nargs="+", required=True, help="bucket files or directories")
    t.add_argument("--config", help="JSON file or inline JSON; flags override it")
    t.add_argument("--out", required=True)
    t.add_argument("--arch", choices=("toy", "full"))
    t.add_argument("--base-year", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr-g", type=float)
    t.add_argument("--lr-d", type=float)
    t.add_argument("--n-critic", type=int)
    t.add_argument("--lambda-gp", type=float)
    t.add_argument("--lambda-tp", type=float)
    t.add_argument("--variant", choices=("dual_critic", "ex_wgan_tgp"))
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw Kelvin samples for one label")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--month", type=int, required=True)
    s.add_argument("--x", type=int, required=True)
    s.add_argument("--y", type=int, required=True)
    s.add_argument("--k", type=int, default=0)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    b = sub.add_parser("baseline", help="fit per-hour Gaussian baselines")
    b.add_argument("--buckets", nargs="+", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    e = sub.add_parser("eval", help="compare real and generated samples")
    e.add_argument("--metric", choices=METRICS, required=True)
    e.add_argument("--real", required=True, help="real bucket file")
    e.add_argument("--gen", help="generated bucket file")
    e.add_argument("--ckpt", help="checkpoint directory to sample from")
    e.add_argument("--params", help="JSON object (inline or file) of metric parameters")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("synth-grid", help="write a synthetic diurnal grid file")
    g.add_argument("--width", type=int, default=16)
    g.add_argument("--height", type=int, default=8)
    g.add_argument("--start", default="1979-01-01")
    g.add_argument("--days", type=int, default=1461)
    g.add_argument("--base-year", type=int, default=1979)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_synth_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"tempgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"tempgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"tempgan: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"tempgan: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GridFormatError, FileNotFoundError, ValueError) as exc:
        print(f"tempgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
