"""Train/test splitting, confusion matrices, parameter sweeps and reports."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, forest
from .errors import DegenerateLabels, InvalidArgument, PipelineError, TraceIOError
from .features import FeatureMatrix, build_feature_matrix
from .ingest import WINDOW, Trace
from .neighbors import DEFAULT_K, NeighborTable, k_nearest_by_distance
from .noise import NoiseSpec, inject_noise

log = logging.getLogger(__name__)

CLASSIFIERS = ("rf", "knn", "nb")
SWEEP_COLUMNS = ("sigma", "fraction", "classifier", "seed", "tn", "fp", "fn", "tp",
                 "accuracy", "seconds", "precision", "recall", "error")
OOB_TREE_COUNTS = (1, 2, 5, 10, 15, 20, 25, 30, 36, 50, 100)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are the actual class, columns the prediction (0 normal, 1 outlier)."""

    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @classmethod
    def from_labels(cls, actual, predicted) -> "ConfusionMatrix":
        a = np.asarray(actual).astype(bool)
        p = np.asarray(predicted).astype(bool)
        if a.shape != p.shape:
            raise InvalidArgument("label arrays differ in length")
        return cls(int(np.sum(~a & ~p)), int(np.sum(~a & p)),
                   int(np.sum(a & ~p)), int(np.sum(a & p)))

    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else math.nan

    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total <= 0:
        raise InvalidArgument("accuracy of an empty confusion matrix")
    return (cm.tn + cm.tp) / cm.total


def split(matrix: FeatureMatrix, test_fraction: float = 0.3,
          seed: int = 0) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Stratified split; each class contributes ``round(test_fraction * n_c)`` test rows."""
    if not 0.0 <= test_fraction <= 1.0:
        raise InvalidArgument("test_fraction must lie in [0, 1]")
    y = np.asarray(matrix.y)
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("split needs both classes")
    rng = np.random.default_rng(seed)
    test = []
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        take = int(math.floor(test_fraction * len(idx) + 0.5))
        test.append(rng.permutation(idx)[:take])
    test_idx = np.sort(np.concatenate(test))
    mask = np.ones(len(y), dtype=bool)
    mask[test_idx] = False
    return matrix.subset(np.flatnonzero(mask)), matrix.subset(test_idx)


@dataclass(frozen=True)
class PipelineSettings:
    attribute: str = "temperature"
    noise_attribute: str | None = None  # defaults to ``attribute``
    window: int = WINDOW
    k: int = DEFAULT_K
    entropy_mode: str = "sum"
    context: str = "clean"
    pairing: str = "neighbor"
    n_trees: int = forest.DEFAULT_TREES
    max_depth: int | None = forest.DEFAULT_MAX_DEPTH
    min_leaf: int = forest.DEFAULT_MIN_LEAF
    mtry: int | None = None
    knn_k: int = baselines.DEFAULT_K
    test_fraction: float = 0.3
    record_timing: bool = False


@dataclass
class SweepCell:
    sigma: float
    fraction: float
    classifier: str
    seed: int
    cm: ConfusionMatrix | None
    accuracy: float | None
    seconds: float | None = None
    error: str | None = None

    @property
    def key(self) -> tuple:
        return (self.sigma, self.fraction, self.classifier, self.seed)

    @property
    def name(self) -> str:
        return f"s{self.sigma:g}_f{self.fraction:g}_{self.classifier}_seed{self.seed}"


@dataclass
class SweepResult:
    cells: list[SweepCell]
    importance: forest.ImportanceReport | None = None
    oob_curve: list[tuple[int, float]] = field(default_factory=list)

    def cell(self, sigma, fraction, classifier, seed) -> SweepCell:
        for c in self.cells:
            if c.key == (sigma, fraction, classifier, seed):
                return c
        raise KeyError((sigma, fraction, classifier, seed))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SweepResult):
            return NotImplemented
        imp = lambda r: None if r is None else [(f.feature, f.mda, f.mdg) for f in r.features]
        return (self.cells == other.cells and imp(self.importance) == imp(other.importance)
                and self.oob_curve == other.oob_curve)


def classify(name: str, train: FeatureMatrix, test: FeatureMatrix,
             settings: PipelineSettings, seed: int):
    """Predict test labels with one classifier; returns (predictions, fitted forest or None)."""
    if name == "rf":
        model = forest.fit_forest(train, settings.n_trees, settings.max_depth,
                                  settings.min_leaf, settings.mtry, seed)
        return model.predict(test.X), model
    if name == "knn":
        return baselines.knn_fit_predict(train, test.X, settings.knn_k), None
    if name == "nb":
        return baselines.nb_fit_predict(train, test.X), None
    raise InvalidArgument(f"unknown classifier {name!r}")


def _run_group(args) -> tuple[list[SweepCell], forest.ImportanceReport | None, list]:
    """All classifiers for one (sigma, fraction, seed): features are shared."""
    trace, table, sigma, fraction, seed, classifiers, settings, diagnostics = args
    cells = []
    importance = None
    curve = []
    try:
        spec = NoiseSpec(sigma, fraction, settings.noise_attribute or settings.attribute, seed)
        matrix = build_feature_matrix(inject_noise(trace, spec), table, settings.attribute,
                                      settings.window, settings.entropy_mode,
                                      settings.context, settings.pairing)
        train, test = split(matrix, settings.test_fraction, seed)
    except PipelineError as exc:
        return [SweepCell(sigma, fraction, c, seed, None, None, error=exc.code)
                for c in classifiers], None, []
    for name in classifiers:
        start = time.perf_counter()
        try:
            pred, model = classify(name, train, test, settings, seed)
        except PipelineError as exc:
            cells.append(SweepCell(sigma, fraction, name, seed, None, None, error=exc.code))
            continue
        cm = ConfusionMatrix.from_labels(test.y, pred)
        secs = time.perf_counter() - start if settings.record_timing else None
        acc = accuracy(cm) if cm.total else None
        cells.append(SweepCell(sigma, fraction, name, seed, cm, acc, secs))
        if diagnostics and model is not None:
            importance = forest.importance(model, train, seed)
            curve = [(n, forest.oob_error(model, train, n))
                     for n in OOB_TREE_COUNTS if n <= model.n_trees]
            if not curve or curve[-1][0] != model.n_trees:
                curve.append((model.n_trees, forest.oob_error(model, train)))
    return cells, importance, curve


def run_sweep(trace: Trace, sigmas, fractions, classifiers=CLASSIFIERS, seeds=(0,),
              settings: PipelineSettings | None = None,
              table: NeighborTable | None = None, jobs: int = 1) -> SweepResult:
    """Evaluate every (sigma, fraction, classifier, seed) cell.

    Cells come back in sorted grid order whatever order the grids were given
    in. Importance and the OOB-vs-trees curve come from the first random
    forest cell. A failing cell is recorded with its error code.
    """
    settings = settings or PipelineSettings()
    sigmas, fractions, seeds = sorted(set(sigmas)), sorted(set(fractions)), sorted(set(seeds))
    classifiers = [c for c in CLASSIFIERS if c in set(classifiers)] + \
        sorted(set(classifiers) - set(CLASSIFIERS))
    if not (sigmas and fractions and classifiers and seeds):
        raise InvalidArgument("every sweep grid must be non-empty")
    if table is None:
        table = k_nearest_by_distance(trace.locations, settings.k)
    groups = [(trace, table, s, f, seed, classifiers, settings, i == 0)
              for i, (s, f, seed) in enumerate(itertools.product(sigmas, fractions, seeds))]
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_group, groups))
    else:
        outputs = [_run_group(g) for g in groups]
    order = {c: i for i, c in enumerate(classifiers)}
    cells = sorted((c for out in outputs for c in out[0]),
                   key=lambda c: (c.sigma, c.fraction, order[c.classifier], c.seed))
    importance, curve = outputs[0][1], outputs[0][2]
    return SweepResult(cells, importance, curve)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def report_files(result: SweepResult) -> list[str]:
    """Names of the files emit_report writes for ``result``."""
    names = ["sweep.csv", "importance.csv", "oob_vs_trees.csv"]
    names += [f"confusion_{c.name}.csv" for c in result.cells if c.cm is not None]
    names += [f"accuracy_vs_fraction_s{s:g}.svg"
              for s in sorted({c.sigma for c in result.cells})]
    return names


def emit_report(result: SweepResult, out_dir: str | Path) -> list[Path]:
    if not result.cells:
        raise InvalidArgument("nothing to report: the sweep result is empty")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        rows = []
        for c in result.cells:
            cm = c.cm
            rows.append([c.sigma, c.fraction, c.classifier, c.seed,
                         *(astuple_cm(cm) if cm else ("", "", "", "")),
                         c.accuracy, c.seconds,
                         cm.precision() if cm else None, cm.recall() if cm else None,
                         c.error])
        _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
        written.append(out / "sweep.csv")
        for c in result.cells:
            if c.cm is None:
                continue
            cm = c.cm
            path = out / f"confusion_{c.name}.csv"
            _write_csv(path, ("actual", "pred_0", "pred_1", "total"), [
                (0, cm.tn, cm.fp, cm.tn + cm.fp),
                (1, cm.fn, cm.tp, cm.fn + cm.tp),
                ("total", cm.tn + cm.fn, cm.fp + cm.tp, cm.total),
            ])
            written.append(path)
        imp = result.importance.features if result.importance else []
        _write_csv(out / "importance.csv", ("feature", "mda", "mdg"),
                   [(f.feature, f.mda, f.mdg) for f in imp])
        _write_csv(out / "oob_vs_trees.csv", ("n_trees", "oob_error"), result.oob_curve)
        written += [out / "importance.csv", out / "oob_vs_trees.csv"]
        for sigma in sorted({c.sigma for c in result.cells}):
            path = out / f"accuracy_vs_fraction_s{sigma:g}.svg"
            path.write_text(accuracy_svg(result, sigma), encoding="utf-8")
            written.append(path)
    except OSError as exc:
        raise TraceIOError(f"cannot write report to {out}: {exc}", path=str(out)) from exc
    return written


def astuple_cm(cm: ConfusionMatrix) -> tuple[int, int, int, int]:
    return (cm.tn, cm.fp, cm.fn, cm.tp)


def _opt_float(s: str) -> float | None:
    return float(s) if s else None


def load_report(out_dir: str | Path) -> SweepResult:
    """Read back a directory written by emit_report."""
    out = Path(out_dir)
    try:
        with open(out / "sweep.csv", newline="", encoding="utf-8") as fh:
            sweep_rows = list(csv.DictReader(fh))
        with open(out / "importance.csv", newline="", encoding="utf-8") as fh:
            imp_rows = list(csv.DictReader(fh))
        with open(out / "oob_vs_trees.csv", newline="", encoding="utf-8") as fh:
            oob_rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise TraceIOError(f"cannot read report from {out}: {exc}", path=str(out)) from exc
    cells = []
    for r in sweep_rows:
        cm = None
        if r["tn"]:
            cm = ConfusionMatrix(int(r["tn"]), int(r["fp"]), int(r["fn"]), int(r["tp"]))
        cells.append(SweepCell(float(r["sigma"]), float(r["fraction"]), r["classifier"],
                               int(r["seed"]), cm, _opt_float(r["accuracy"]),
                               _opt_float(r["seconds"]), r["error"] or None))
    importance = None
    if imp_rows:
        importance = forest.ImportanceReport([
            forest.FeatureImportance(r["feature"], float(r["mda"]), float(r["mdg"]))
            for r in imp_rows])
    curve = [(int(r["n_trees"]), float(r["oob_error"])) for r in oob_rows]
    return SweepResult(cells, importance, curve)


_PALETTE = {"rf": "#1b9e77", "knn": "#d95f02", "nb": "#7570b3"}


def accuracy_svg(result: SweepResult, sigma: float, width: int = 480, height: int = 320) -> str:
    """Line chart of seed-mean accuracy against noise fraction, one line per classifier."""
    pad = 48
    cells = [c for c in result.cells if c.sigma == sigma and c.accuracy is not None]
    fractions = sorted({c.fraction for c in cells})
    classifiers = list(dict.fromkeys(c.classifier for c in cells))
    lo_x, hi_x = (fractions[0], fractions[-1]) if fractions else (0.0, 1.0)
    if hi_x == lo_x:
        lo_x, hi_x = lo_x - 0.05, hi_x + 0.05
    accs = [c.accuracy for c in cells] or [0.0, 1.0]
    lo_y = max(0.0, math.floor(min(accs) * 20) / 20)
    hi_y = 1.0 if lo_y < 1.0 else 1.05

    def sx(v):
        return pad + (v - lo_x) / (hi_x - lo_x) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - lo_y) / (hi_y - lo_y) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
        f'accuracy vs noise fraction, sigma={sigma:g}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{lo_x:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" font-size="10" text-anchor="end">{hi_x:g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{lo_y:.2f}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{hi_y:.2f}</text>',
    ]
    for i, name in enumerate(classifiers):
        pts = []
        for f in fractions:
            vals = [c.accuracy for c in cells if c.classifier == name and c.fraction == f]
            if vals:
                pts.append(f"{sx(f):.2f},{sy(float(np.mean(vals))):.2f}")
        color = _PALETTE.get(name, "#444444")
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i}" font-size="11" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

