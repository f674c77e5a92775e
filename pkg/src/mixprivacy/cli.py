"""Command-line interface.

Exit status: 0 success, 1 usage error, 2 data error, 3 privacy-gate failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import attacks, thresholds
from .imgcore import ImageError, load_image, resize_bilinear
from .metrics import Metric, frechet_distance, load_features, score
from .obfuscate import ObfuscationParams, Scheme
from .pipeline import DataError, Dataset, EpochConfig, Gate, GateError, generate_survey_samples, read_private, run_epochs

EXIT_USAGE, EXIT_DATA, EXIT_GATE = 1, 2, 3
METRICS = [m.value for m in Metric]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use flag names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 256x256, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mixprivacy", description="Mixup-based image obfuscation with measurable privacy.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("obfuscate", help="generate obfuscated epochs of a dataset")
    o.add_argument("--config", help="key = value file; command-line flags win")
    o.add_argument("--dataset", help="path,label CSV or a directory with one sub-directory per class")
    o.add_argument("--outdir", default="obfuscated")
    o.add_argument("--size", type=_size, default=(256, 256))
    o.add_argument("--scheme", choices=[s.value for s in Scheme], default="mix")
    o.add_argument("--lambda", dest="lam", type=float, default=0.5)
    o.add_argument("--lambda-grid", help="comma-separated weights; picks per pair the most obfuscating one")
    o.add_argument("--p", type=float, help="graft fraction (graft-mix)")
    o.add_argument("--block", type=int, help="tile edge (shuffle-mix, pixelize-mix)")
    o.add_argument("--sigma", type=float, help="noise std on the 0-255 scale (noise-mix)")
    o.add_argument("--blur-sigma", type=float, help="Gaussian blur std (blur-mix)")
    o.add_argument("--ksize", type=int, help="Gaussian kernel width (blur-mix)")
    o.add_argument("--pairing", choices=["disjoint", "permutation"], default="disjoint")
    o.add_argument("--intra-class", action="store_true")
    o.add_argument("--epochs", type=int, default=1)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--metric", choices=METRICS, default="dssim", help="metric recorded per sample")
    o.add_argument("--gate-metric", choices=METRICS)
    o.add_argument("--gate-min", type=float)
    o.add_argument("--gate-attempts", type=int, default=5)
    o.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("score", help="score two images (or two feature files for fid)")
    s.add_argument("--metric", choices=METRICS, default="dssim")
    s.add_argument("--size", type=_size, help="resize both images first")
    s.add_argument("a")
    s.add_argument("b")

    r = sub.add_parser("roc", help="ROC, AUC and thresholds from recognition records")
    r.add_argument("--records", required=True)
    r.add_argument("--metric", choices=METRICS)
    r.add_argument("--outdir", help="write roc_<metric>.csv files here")

    a = sub.add_parser("attack", help="run a de-obfuscation attack on a generated epoch")
    a.add_argument("--epoch-dir", required=True)
    a.add_argument("--dataset", required=True)
    a.add_argument("--size", type=_size, default=(256, 256))
    a.add_argument("--attack", choices=sorted(attacks.ATTACKS), default="wiener")
    a.add_argument("--window", type=int, default=3, help="wiener window")
    a.add_argument("--ksize", type=int, default=5, help="gaussian-denoise kernel width")
    a.add_argument("--denoise-sigma", type=float, default=0.0, help="gaussian-denoise std (0: from ksize)")
    a.add_argument("--metric", choices=METRICS, default="dssim")
    a.add_argument("--out", help="report CSV (default: <epoch-dir>/attack_<attack>.csv)")

    g = sub.add_parser("survey-gen", help="generate survey images from the parameter grids")
    g.add_argument("--dataset", required=True)
    g.add_argument("--outdir", default="survey")
    g.add_argument("--size", type=_size, default=(256, 256))
    g.add_argument("--count", type=int, default=49)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--metric", choices=METRICS, default="dssim")
    return p


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {act.dest for act in sub._actions}
        aliases = {"lambda": "lam", "intra": "intra_class"}
        defaults = {}
        for key, value in cfg.items():
            dest = aliases.get(key, key)
            if dest not in known:
                raise UsageError(f"unknown config key {key!r}")
            defaults[dest] = value
        for act in sub._actions:
            if act.dest in defaults:
                raw = defaults[act.dest]
                if isinstance(act, argparse._StoreTrueAction):
                    defaults[act.dest] = raw.lower() in ("1", "true", "yes")
                elif act.type is not None:
                    defaults[act.dest] = act.type(raw)
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _cmd_obfuscate(args) -> int:
    if not args.dataset:
        raise UsageError("--dataset is required")
    if args.gate_metric or args.gate_min is not None:
        if not (args.gate_metric and args.gate_min is not None):
            raise UsageError("--gate-metric and --gate-min go together")
    try:
        params = ObfuscationParams(
            Scheme(args.scheme), (args.lam, 1.0 - args.lam),
            p=args.p, b=args.block, sigma=args.sigma, blur_sigma=args.blur_sigma, ksize=args.ksize,
        )
        gate = Gate(args.gate_metric, args.gate_min, args.gate_attempts) if args.gate_metric else None
        grid = tuple(float(x) for x in args.lambda_grid.split(",")) if args.lambda_grid else None
        cfg = EpochConfig(
            params, pairing=args.pairing, class_mode="intra" if args.intra_class else "blind",
            master_seed=args.seed, gate=gate, score_metric=args.metric, lambda_grid=grid,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = Dataset.open(args.dataset, args.size)
    manifests = run_epochs(ds, cfg, args.outdir, args.epochs, workers=args.workers)
    for e, m in enumerate(manifests):
        st = m.stats()
        extra = " ".join(f"{k}={st[k]:.6f}" for k in ("mean", "median", "min") if k in st)
        print(f"epoch {e}: accepted={st['accepted']} rejected={st['rejected']} {st['metric']} {extra}".rstrip())
    return 0


def _cmd_score(args) -> int:
    metric = Metric.parse(args.metric)
    if metric is Metric.FID:
        value = frechet_distance(load_features(args.a), load_features(args.b))
    else:
        a, b = load_image(args.a, strip_alpha=True), load_image(args.b, strip_alpha=True)
        if args.size:
            a, b = resize_bilinear(a, *args.size), resize_bilinear(b, *args.size)
        value = score(a, b, metric)
    print(f"{value:.9f}")
    return 0


def _cmd_roc(args) -> int:
    records = thresholds.ingest_records(args.records)
    metrics = [Metric.parse(args.metric)] if args.metric else sorted({r.metric for r in records}, key=lambda m: m.value)
    for m in metrics:
        roc = thresholds.build_roc(records, m)
        t = thresholds.select_thresholds(roc)
        print(
            f"metric={m.value} auc={round(roc.auc, 9)} "
            f"t_acc={t.t_acc:.9g} ({t.acc_point[0]:.3f}, {t.acc_point[1]:.3f}) "
            f"t_cutoff={t.t_cutoff:.9g} ({t.cutoff_point[0]:.3f}, {t.cutoff_point[1]:.3f})"
        )
        if args.outdir:
            Path(args.outdir).mkdir(parents=True, exist_ok=True)
            thresholds.export_roc(roc, Path(args.outdir) / f"roc_{m.value}.csv")
    return 0


def _cmd_attack(args) -> int:
    epoch_dir = Path(args.epoch_dir)
    ds = Dataset.open(args.dataset, args.size)
    entries = read_private(epoch_dir / "private.csv")
    if not entries:
        raise DataError(f"{epoch_dir}: no samples")
    images = [load_image(epoch_dir / e.file) for e in entries]
    sources = [[ds.image_by_id(s) for s in e.sources] for e in entries]
    if args.attack == "wiener":
        fn = attacks.make_attack("wiener", window=args.window)
    elif args.attack == "gaussian-denoise":
        fn = attacks.make_attack("gaussian-denoise", sigma=args.denoise_sigma, ksize=args.ksize)
    else:
        fn = attacks.make_attack(args.attack)
    reports = attacks.evaluate_attack(images, sources, fn, args.metric, sample_ids=[e.file for e in entries])
    out = Path(args.out) if args.out else epoch_dir / f"attack_{args.attack}.csv"
    attacks.write_reports(reports, out)
    s = attacks.summarize(reports)
    print(f"{args.attack}: n={s['count']} mean_before={s['mean_before']:.6f} mean_after={s['mean_after']:.6f} mean_drop={s['mean_drop']:.4f}")
    return 0


def _cmd_survey(args) -> int:
    ds = Dataset.open(args.dataset, args.size)
    m = generate_survey_samples(ds, args.count, args.seed, args.outdir, args.metric)
    print(f"wrote {len(m.public)} survey images to {args.outdir}")
    return 0


COMMANDS = {
    "obfuscate": _cmd_obfuscate,
    "score": _cmd_score,
    "roc": _cmd_roc,
    "attack": _cmd_attack,
    "survey-gen": _cmd_survey,
}


def main(argv=None) -> int:
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"mixprivacy: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"mixprivacy: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mixprivacy: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GateError as exc:
        print(f"mixprivacy: gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (DataError, ImageError, thresholds.RecordFormatError, ValueError, OSError) as exc:
        print(f"mixprivacy: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
