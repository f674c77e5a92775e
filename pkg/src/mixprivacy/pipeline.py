"""Epoch-wise dataset obfuscation, privacy gating and manifest emission.

Each epoch pairs the dataset afresh, obfuscates every pair with its own random
stream derived from ``(master_seed, epoch_index, pair_index, attempt)`` and
writes::

    <outdir>/epoch_<e>/<sample_id>.png
    <outdir>/epoch_<e>/public.csv     file,label                 (server-visible)
    <outdir>/epoch_<e>/private.csv    file,sources,lambdas,...   (client only)
    <outdir>/epoch_<e>/summary.json   score statistics

Sample ids are positions in a shuffled pair list and carry no source information.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import statistics
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import obfuscate as ob
from .imgcore import Image, derive_seed, load_image, make_rng, quantize, resize_bilinear, save_image, to_grayscale, to_rgb
from .metrics import BOUNDED, Metric, score_sample

log = logging.getLogger(__name__)

PAIRINGS = ("disjoint", "permutation")
CLASS_MODES = ("blind", "intra")
MAX_REJECT_FRACTION = 0.5

# Survey parameter grids.
SURVEY_LAMBDAS = (0.5, 0.6, 0.7)
# 3-way vectors as printed, with the exact fractions they round from.
SURVEY_3WAY = (
    ((0.7, 0.2, 0.1), (Fraction(7, 10), Fraction(2, 10), Fraction(1, 10))),
    ((0.5, 0.33, 0.16), (Fraction(1, 2), Fraction(1, 3), Fraction(1, 6))),
    ((0.33, 0.33, 0.33), (Fraction(1, 3), Fraction(1, 3), Fraction(1, 3))),
)
SURVEY_P = (0.5, 0.6, 0.7, 0.8)
SURVEY_KSIZE = (17, 35, 45)
SURVEY_PIXEL = (16, 20, 32)
SURVEY_BLOCK = (4, 8, 16)
SURVEY_SIGMA = (10, 20, 40)
SURVEY_SCHEMES = (ob.Scheme.MIX, ob.Scheme.GRAFT, ob.Scheme.SHUFFLE, ob.Scheme.NOISE, ob.Scheme.PIXELIZE, ob.Scheme.BLUR)


class DataError(ValueError):
    pass


class GateError(RuntimeError):
    pass


# -- dataset ------------------------------------------------------------------

@dataclass(frozen=True)
class Entry:
    id: str
    path: Path
    label: int


class Dataset:
    """Labelled images, served resized to a canonical ``size = (W, H)``."""

    def __init__(self, entries: Sequence[Entry], size: tuple[int, int], num_classes: int | None = None, channels: int = 3):
        self.entries = list(entries)
        if len(self.entries) < 2:
            raise DataError("a dataset needs at least two images")
        if len({e.id for e in self.entries}) != len(self.entries):
            raise DataError("duplicate entry ids in dataset")
        self.num_classes = num_classes if num_classes is not None else max(e.label for e in self.entries) + 1
        if self.num_classes < 2:
            raise DataError("a dataset needs at least two classes")
        for e in self.entries:
            if not 0 <= e.label < self.num_classes:
                raise DataError(f"{e.id}: label {e.label} outside [0, {self.num_classes})")
        if channels not in (1, 3):
            raise DataError("channels must be 1 or 3")
        self.size = (int(size[0]), int(size[1]))
        self.channels = channels
        self._cache: dict[int, Image] = {}
        self._lock = threading.Lock()
        self._by_id = {e.id: i for i, e in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_csv(cls, path, size, **kw) -> "Dataset":
        """Read a ``path,label`` CSV; relative paths resolve against the CSV's folder."""
        path = Path(path)
        entries = []
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header] != ["path", "label"]:
                raise DataError(f"{path}:1: expected header path,label")
            for row in reader:
                if not row:
                    continue
                if len(row) != 2:
                    raise DataError(f"{path}:{reader.line_num}: expected 2 fields")
                rel, label = row[0].strip(), row[1].strip()
                try:
                    lbl = int(label)
                except ValueError:
                    raise DataError(f"{path}:{reader.line_num}: label must be an integer") from None
                entries.append(Entry(rel, path.parent / rel, lbl))
        return cls(entries, size, **kw)

    @classmethod
    def from_dir(cls, root, size, **kw) -> "Dataset":
        """One sub-directory per class (sorted names map to ids 0, 1, ...), PNGs inside."""
        root = Path(root)
        classes = sorted(p for p in root.iterdir() if p.is_dir())
        entries = []
        for label, cdir in enumerate(classes):
            for f in sorted(cdir.glob("*.png")):
                entries.append(Entry(f.relative_to(root).as_posix(), f, label))
        return cls(entries, size, num_classes=max(len(classes), 2), **kw)

    @classmethod
    def open(cls, path, size, **kw) -> "Dataset":
        path = Path(path)
        if path.is_dir():
            return cls.from_dir(path, size, **kw)
        if path.is_file():
            return cls.from_csv(path, size, **kw)
        raise DataError(f"dataset {path} does not exist")

    def image(self, i: int) -> Image:
        """Entry ``i`` at canonical size and channel count (cached, read-only)."""
        img = self._cache.get(i)
        if img is not None:
            return img
        img = load_image(self.entries[i].path, strip_alpha=True)
        img = to_rgb(img) if self.channels == 3 else to_grayscale(img)
        w, h = self.size
        if img.shape[:2] != (h, w):
            img = resize_bilinear(img, w, h)
        img.setflags(write=False)
        with self._lock:
            self._cache.setdefault(i, img)
        return self._cache[i]

    def image_by_id(self, entry_id: str) -> Image:
        try:
            return self.image(self._by_id[entry_id])
        except KeyError:
            raise DataError(f"unknown dataset entry {entry_id!r}") from None

    def by_class(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for i, e in enumerate(self.entries):
            groups.setdefault(e.label, []).append(i)
        return groups


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class Gate:
    metric: Metric
    min_score: float
    max_attempts: int = 5

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric.parse(self.metric))
        if self.metric is Metric.FID:
            raise ValueError("FID cannot gate single images")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        hi = 1.0 if self.metric in BOUNDED else float("inf")
        if not 0.0 <= self.min_score <= hi:
            raise ValueError(f"gate minimum {self.min_score} outside the range of {self.metric.value}")


@dataclass(frozen=True)
class EpochConfig:
    params: ob.ObfuscationParams
    pairing: str = "disjoint"
    class_mode: str = "blind"
    epoch_index: int = 0
    master_seed: int = 0
    gate: Gate | None = None
    score_metric: Metric = Metric.DSSIM
    lambda_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")
        if self.class_mode not in CLASS_MODES:
            raise ValueError(f"class_mode must be one of {CLASS_MODES}")
        if len(self.params.weights) != 2:
            raise ValueError("epoch obfuscation mixes pairs; give two weights")
        object.__setattr__(self, "score_metric", Metric.parse(self.score_metric))

    @property
    def metric(self) -> Metric:
        return self.gate.metric if self.gate else self.score_metric


# -- manifests ----------------------------------------------------------------

@dataclass(frozen=True)
class PublicEntry:
    file: str
    label: int


@dataclass(frozen=True)
class PrivateEntry:
    file: str
    sources: tuple[str, ...]
    weights: tuple[float, ...]
    seed: int
    score: float
    scheme: str
    params: str


@dataclass
class EpochManifest:
    public: list[PublicEntry] = field(default_factory=list)
    private: list[PrivateEntry] = field(default_factory=list)
    rejected: list[tuple[str, ...]] = field(default_factory=list)
    metric: Metric = Metric.DSSIM

    def stats(self) -> dict:
        scores = [p.score for p in self.private]
        out = {"metric": self.metric.value, "accepted": len(self.private), "rejected": len(self.rejected)}
        if scores:
            out.update(mean=statistics.fmean(scores), median=statistics.median(scores), min=min(scores), max=max(scores))
        return out


PUBLIC_HEADER = ["file", "label"]
PRIVATE_HEADER = ["file", "sources", "lambdas", "seed", "score", "scheme", "params"]


def write_manifest(manifest: EpochManifest, epoch_dir) -> None:
    epoch_dir = Path(epoch_dir)
    with (epoch_dir / "public.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PUBLIC_HEADER)
        for e in manifest.public:
            w.writerow([e.file, e.label])
    private = epoch_dir / "private.csv"
    with private.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRIVATE_HEADER)
        for e in manifest.private:
            w.writerow([e.file, ";".join(e.sources), ";".join(repr(x) for x in e.weights), e.seed, repr(e.score), e.scheme, e.params])
    try:
        os.chmod(private, 0o600)
    except OSError:  # pragma: no cover - platform without POSIX modes
        pass
    (epoch_dir / "summary.json").write_text(json.dumps(manifest.stats(), indent=2, sort_keys=True) + "\n")


def read_public(path) -> list[PublicEntry]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [PublicEntry(r["file"], int(r["label"])) for r in reader]


def read_private(path) -> list[PrivateEntry]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            PrivateEntry(
                r["file"],
                tuple(r["sources"].split(";")),
                tuple(float(x) for x in r["lambdas"].split(";")),
                int(r["seed"]),
                float(r["score"]),
                r["scheme"],
                r["params"],
            )
            for r in reader
        ]


# -- pairing ------------------------------------------------------------------

def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    # rejection sampling: about e draws on average, uniform over derangements
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def _plan_group(members: list[int], cfg: EpochConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    n = len(members)
    if cfg.pairing == "disjoint":
        if n % 2:
            members = members[: cfg.epoch_index % n] + members[cfg.epoch_index % n + 1:]
        order = [members[k] for k in rng.permutation(len(members))]
        return [(order[k], order[k + 1]) for k in range(0, len(order), 2)]
    perm = _derangement(n, rng)
    return [(members[k], members[perm[k]]) for k in range(n)]


def plan_epoch(ds: Dataset, cfg: EpochConfig) -> list[tuple[int, int]]:
    """Pairs of dataset indices for one epoch, in random order.

    ``disjoint`` uses every image at most once (one image sits out when the
    count is odd, rotating with the epoch); ``permutation`` pairs each image
    with a random partner other than itself. ``intra`` keeps partners within
    a class.
    """
    rng = make_rng(derive_seed(cfg.master_seed, cfg.epoch_index))
    if len(ds) < 2:
        raise DataError("need at least two images")
    if cfg.class_mode == "intra":
        pairs = []
        for label, members in sorted(ds.by_class().items()):
            if len(members) < 2:
                raise DataError(f"intra-class mixing: class {label} has a single image")
            pairs.extend(_plan_group(members, cfg, rng))
    else:
        pairs = _plan_group(list(range(len(ds))), cfg, rng)
    return [pairs[k] for k in rng.permutation(len(pairs))]


# -- epoch generation ---------------------------------------------------------

@dataclass
class _Outcome:
    sample_id: str
    pair: tuple[int, int]
    accepted: bool
    label: int = -1
    weights: tuple[float, ...] = ()
    seed: int = 0
    score: float = float("nan")
    params: str = ""
    image: np.ndarray | None = None


def _obfuscate_pair(ds: Dataset, cfg: EpochConfig, k: int, pair: tuple[int, int]) -> _Outcome:
    i, j = pair
    xi, xj = ds.image(i), ds.image(j)
    params = cfg.params
    if cfg.lambda_grid:
        lam = ob.choose_lambda(xi, xj, cfg.metric, cfg.lambda_grid)
        params = replace(params, weights=(lam, 1.0 - lam))
    sources = [(xi, ds.entries[i].label), (xj, ds.entries[j].label)]
    attempts = cfg.gate.max_attempts if cfg.gate else 1
    sample_id = f"{k:06d}"
    best = None
    for attempt in range(attempts):
        seed = derive_seed(cfg.master_seed, cfg.epoch_index, k, attempt)
        sample = ob.apply(params, sources, make_rng(seed))
        released = quantize(sample.image)
        value = score_sample(released, [xi, xj], cfg.metric)
        outcome = _Outcome(sample_id, pair, True, sample.label, params.weights, seed, value, params.describe(), released)
        if cfg.gate is None or value >= cfg.gate.min_score:
            return outcome
        best = outcome
    best.accepted = False
    best.image = None
    return best


def run_epoch(ds: Dataset, cfg: EpochConfig, outdir, workers: int = 1) -> EpochManifest:
    """Obfuscate one epoch into ``outdir/epoch_<e>`` and return its manifest.

    With a gate, a pair whose sample misses the minimum score is re-drawn with
    fresh scheme randomness (same partner) up to ``max_attempts`` times and is
    left out of the release if it never passes. More than half the pairs
    failing raises :class:`GateError` and removes the epoch directory.
    """
    pairs = plan_epoch(ds, cfg)
    epoch_dir = Path(outdir) / f"epoch_{cfg.epoch_index}"
    if epoch_dir.exists():
        shutil.rmtree(epoch_dir)
    epoch_dir.mkdir(parents=True)

    def task(item):
        k, pair = item
        out = _obfuscate_pair(ds, cfg, k, pair)
        if out.accepted:
            save_image(out.image, epoch_dir / f"{out.sample_id}.png")
            out.image = None
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(task, enumerate(pairs)))
    else:
        outcomes = [task(item) for item in enumerate(pairs)]

    manifest = EpochManifest(metric=cfg.metric)
    for o in outcomes:
        ids = (ds.entries[o.pair[0]].id, ds.entries[o.pair[1]].id)
        if not o.accepted:
            manifest.rejected.append(ids)
            continue
        fname = f"{o.sample_id}.png"
        manifest.public.append(PublicEntry(fname, o.label))
        manifest.private.append(PrivateEntry(fname, ids, o.weights, o.seed, o.score, cfg.params.scheme.value, o.params))

    if cfg.gate and pairs and len(manifest.rejected) > MAX_REJECT_FRACTION * len(pairs):
        shutil.rmtree(epoch_dir, ignore_errors=True)
        raise GateError(
            f"epoch {cfg.epoch_index}: {len(manifest.rejected)}/{len(pairs)} pairs stayed below "
            f"{cfg.gate.metric.value} >= {cfg.gate.min_score} after {cfg.gate.max_attempts} attempts; "
            "use stronger obfuscation parameters or a lower gate"
        )
    write_manifest(manifest, epoch_dir)
    log.info("epoch %d: %s", cfg.epoch_index, manifest.stats())
    return manifest


def run_epochs(ds: Dataset, cfg: EpochConfig, outdir, epochs: int, workers: int = 1) -> list[EpochManifest]:
    return [run_epoch(ds, replace(cfg, epoch_index=cfg.epoch_index + e), outdir, workers) for e in range(epochs)]


# -- survey samples -----------------------------------------------------------

def _survey_params(scheme: ob.Scheme, rng: np.random.Generator) -> tuple[ob.ObfuscationParams, int, str]:
    """Draw parameters for ``scheme``; returns (params, source count, note)."""
    pick = lambda grid: grid[int(rng.integers(len(grid)))]  # noqa: E731
    lam = pick(SURVEY_LAMBDAS)
    w2 = (lam, 1.0 - lam)
    if scheme is ob.Scheme.MIX:
        if rng.integers(2):
            printed, exact = pick(SURVEY_3WAY)
            weights = tuple(float(x) for x in exact)
            weights = weights[:-1] + (1.0 - sum(weights[:-1]),)
            return ob.ObfuscationParams(scheme, weights), 3, f"grid={printed!r}"
        return ob.ObfuscationParams(scheme, w2), 2, ""
    if scheme is ob.Scheme.GRAFT:
        return ob.ObfuscationParams(scheme, w2, p=pick(SURVEY_P)), 2, ""
    if scheme is ob.Scheme.SHUFFLE:
        return ob.ObfuscationParams(scheme, w2, b=pick(SURVEY_BLOCK)), 2, ""
    if scheme is ob.Scheme.NOISE:
        return ob.ObfuscationParams(scheme, w2, sigma=float(pick(SURVEY_SIGMA))), 2, ""
    if scheme is ob.Scheme.PIXELIZE:
        return ob.ObfuscationParams(scheme, w2, b=pick(SURVEY_PIXEL)), 2, ""
    return ob.ObfuscationParams(scheme, w2, ksize=pick(SURVEY_KSIZE)), 2, ""


def generate_survey_samples(ds: Dataset, count: int, seed: int, outdir, metric="dssim") -> EpochManifest:
    """Survey images cycling the six schemes, parameters drawn from the survey grids.

    Sources come from distinct classes: classes are drawn first, then one image
    within each. Images and manifests go to ``outdir``.
    """
    groups = ds.by_class()
    if len(groups) < 3:
        raise DataError(f"survey generation needs at least 3 non-empty classes, got {len(groups)}")
    if count < 1:
        raise ValueError("count must be >= 1")
    metric = Metric.parse(metric)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    classes = sorted(groups)
    manifest = EpochManifest(metric=metric)
    for k in range(count):
        sample_seed = derive_seed(seed, k)
        rng = make_rng(sample_seed)
        scheme = SURVEY_SCHEMES[k % len(SURVEY_SCHEMES)]
        params, n, note = _survey_params(scheme, rng)
        chosen = [classes[c] for c in rng.choice(len(classes), size=n, replace=False)]
        idx = [groups[c][int(rng.integers(len(groups[c])))] for c in chosen]
        sources = [(ds.image(i), ds.entries[i].label) for i in idx]
        sample = ob.apply(params, sources, rng)
        released = quantize(sample.image)
        value = score_sample(released, [s for s, _ in sources], metric)
        fname = f"q{k:04d}.png"
        save_image(released, outdir / fname)
        desc = ";".join(x for x in (params.describe(), note) if x)
        manifest.public.append(PublicEntry(fname, sample.label))
        manifest.private.append(
            PrivateEntry(fname, tuple(ds.entries[i].id for i in idx), params.weights, sample_seed, value, scheme.value, desc)
        )
    write_manifest(manifest, outdir)
    return manifest
