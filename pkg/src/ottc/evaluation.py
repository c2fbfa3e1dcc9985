"""Metrics and evaluation protocol for motion-in-depth predictions.

The per-object loss is ``|ln eta_pred - ln eta_gt| * 1e4``.  oMiD averages
it over matched objects and oMiD+ over objects whose ground truth approaches
(eta_gt < 1).  Binary risk accuracy is TP / (TP + FP + FN) with ground truth
inside the neutral band [risk_lower, risk_upper) ignored.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .core import (
    BBox,
    DenseMiDMap,
    MiDAnnotation,
    Method,
    OttcError,
    PredictionRecord,
    RiskLabel,
    TrackedSequence,
)
from .ttc import GeometryError, consecutive_pairs, pair_eta

SCALE = 1e4
REPORT_HEADER = "ottc-report v1"


class EvalError(OttcError, ValueError):
    code = "EvalError"


class NonPositiveEta(EvalError):
    code = "NonPositiveEta"


class EmptyInput(EvalError):
    code = "EmptyInput"


class LengthMismatch(EvalError):
    code = "LengthMismatch"


class UndefinedAccuracy(EvalError):
    code = "UndefinedAccuracy"


class ConfigError(EvalError):
    code = "ConfigError"


class MatchKind(str, enum.Enum):
    TRACK = "track"
    CENTER = "center"
    IOU = "iou"


class MissingPolicy(str, enum.Enum):
    SKIP = "skip"
    COUNT_MISSING = "count-missing"


class BaselineKind(str, enum.Enum):
    UNIT = "unit"
    HEIGHT_RATIO = "height-ratio"
    HEIGHT_RATIO_CORRECTED = "height-ratio-corrected"


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings.

    ``match_param`` is the radius in pixels for center matching and the IoU
    threshold for box matching.  Under COUNT_MISSING an unmatched risky
    ground truth also counts as a false negative; under SKIP it is only
    tallied in ``n_missing_pred``.
    """

    categories: Tuple[str, ...] = ("Car", "Pedestrian")
    risk_lower: float = 0.998
    risk_upper: float = 1.002
    match_kind: MatchKind = MatchKind.TRACK
    match_param: Optional[float] = None
    missing_policy: MissingPolicy = MissingPolicy.SKIP

    def __post_init__(self) -> None:
        object.__setattr__(self, "match_kind", MatchKind(self.match_kind))
        object.__setattr__(self, "missing_policy", MissingPolicy(self.missing_policy))
        object.__setattr__(self, "categories", tuple(self.categories))
        if not self.risk_lower < 1 < self.risk_upper:
            raise ConfigError(f"risk band must straddle 1, got [{self.risk_lower}, {self.risk_upper})")
        if self.match_kind is MatchKind.CENTER and not (self.match_param or 0) > 0:
            raise ConfigError("center matching needs a positive radius")
        if self.match_kind is MatchKind.IOU and not 0 < (self.match_param or 0) <= 1:
            raise ConfigError("IoU matching needs a threshold in (0, 1]")


def mid_loss(eta_pred: float, eta_gt: float) -> float:
    if not (eta_pred > 0 and eta_gt > 0):
        raise NonPositiveEta(f"eta must be positive, got {eta_pred}, {eta_gt}")
    return abs(math.log(eta_pred) - math.log(eta_gt)) * SCALE


def o_mid(pairs: Sequence[Tuple[float, float]]) -> Tuple[float, Optional[float]]:
    """(oMiD, oMiD+) over (eta_pred, eta_gt) pairs; oMiD+ is None without approaching GT."""
    if not pairs:
        raise EmptyInput("oMiD of an empty pair list")
    losses = [mid_loss(p, g) for p, g in pairs]
    plus = [loss for loss, (_, g) in zip(losses, pairs) if g < 1]
    return sum(losses) / len(losses), (sum(plus) / len(plus) if plus else None)


def risk_label_gt(eta_gt: float, config: EvalConfig = EvalConfig()) -> RiskLabel:
    if eta_gt < config.risk_lower:
        return RiskLabel.RISKY
    if eta_gt < config.risk_upper:
        return RiskLabel.NEUTRAL
    return RiskLabel.SAFE


def risk_label_pred(eta_pred: float, config: EvalConfig = EvalConfig()) -> RiskLabel:
    return RiskLabel.RISKY if eta_pred < config.risk_lower else RiskLabel.SAFE


def confusion(
    pred_labels: Sequence[RiskLabel], gt_labels: Sequence[RiskLabel]
) -> Tuple[int, int, int]:
    """(TP, FP, FN) with Risky as positive; neutral ground truth is ignored."""
    if len(pred_labels) != len(gt_labels):
        raise LengthMismatch(f"{len(pred_labels)} predictions vs {len(gt_labels)} labels")
    tp = fp = fn = 0
    for p, g in zip(pred_labels, gt_labels):
        if g is RiskLabel.NEUTRAL:
            continue
        if p is RiskLabel.NEUTRAL:
            raise EvalError("predicted labels must be risky or safe")
        if p is RiskLabel.RISKY:
            if g is RiskLabel.RISKY:
                tp += 1
            else:
                fp += 1
        elif g is RiskLabel.RISKY:
            fn += 1
    return tp, fp, fn


def accuracy_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        raise UndefinedAccuracy("no risky predictions or ground truth")
    return tp / (tp + fp + fn)


def binary_risk_accuracy(pred_labels: Sequence[RiskLabel], gt_labels: Sequence[RiskLabel]) -> float:
    return accuracy_from_counts(*confusion(pred_labels, gt_labels))


# -- reports ----------------------------------------------------------------


@dataclass
class Tally:
    """Additive sufficient statistics; merging tallies is exact bookkeeping."""

    n_matched: int = 0
    n_missing_pred: int = 0
    n_ignored_neutral: int = 0
    loss_sum: float = 0.0
    n_plus: int = 0
    loss_plus_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def merge(self, other: "Tally") -> "Tally":
        return Tally(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    @property
    def o_mid(self) -> Optional[float]:
        return self.loss_sum / self.n_matched if self.n_matched else None

    @property
    def o_mid_plus(self) -> Optional[float]:
        return self.loss_plus_sum / self.n_plus if self.n_plus else None

    @property
    def risk_accuracy(self) -> Optional[float]:
        total = self.tp + self.fp + self.fn
        return self.tp / total if total else None


@dataclass
class MetricsReport:
    overall: Tally = field(default_factory=Tally)
    per_category: Dict[str, Tally] = field(default_factory=dict)

    @property
    def o_mid(self) -> Optional[float]:
        return self.overall.o_mid

    @property
    def o_mid_plus(self) -> Optional[float]:
        return self.overall.o_mid_plus

    @property
    def risk_accuracy(self) -> Optional[float]:
        return self.overall.risk_accuracy

    @property
    def n_matched(self) -> int:
        return self.overall.n_matched

    @property
    def n_missing_pred(self) -> int:
        return self.overall.n_missing_pred

    @property
    def n_ignored_neutral(self) -> int:
        return self.overall.n_ignored_neutral

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        cats = dict(self.per_category)
        for name, tally in other.per_category.items():
            cats[name] = cats[name].merge(tally) if name in cats else tally
        return MetricsReport(self.overall.merge(other.overall), cats)


_TALLY_FIELDS = [f.name for f in fields(Tally)]
_REPORT_COLUMNS = ["scope", *_TALLY_FIELDS, "o_mid", "o_mid_plus", "risk_accuracy"]


def _fmt(value) -> str:
    if value is None:
        return "null"
    return repr(value)


def write_report(report: MetricsReport) -> str:
    rows = [("all", report.overall)] + sorted(report.per_category.items())
    lines = [REPORT_HEADER, "\t".join(_REPORT_COLUMNS)]
    for scope, t in rows:
        values = [getattr(t, name) for name in _TALLY_FIELDS] + [t.o_mid, t.o_mid_plus, t.risk_accuracy]
        lines.append("\t".join([scope] + [_fmt(v) for v in values]))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> MetricsReport:
    from .ingest import SchemaViolation

    lines = text.splitlines()
    if len(lines) < 3 or lines[0] != REPORT_HEADER or lines[1].split("\t") != _REPORT_COLUMNS:
        raise SchemaViolation("line 1", f"not an {REPORT_HEADER} document")
    tallies = {}
    for lineno, raw in enumerate(lines[2:], start=3):
        cols = raw.split("\t")
        if len(cols) != len(_REPORT_COLUMNS):
            raise SchemaViolation(f"line {lineno}", f"expected {len(_REPORT_COLUMNS)} columns")
        try:
            values = {
                name: (float(v) if name.endswith("sum") else int(v))
                for name, v in zip(_TALLY_FIELDS, cols[1:])
            }
        except ValueError as exc:
            raise SchemaViolation(f"line {lineno}", str(exc)) from None
        tallies[cols[0]] = Tally(**values)
    if "all" not in tallies:
        raise SchemaViolation("line 3", "missing overall row")
    overall = tallies.pop("all")
    return MetricsReport(overall, tallies)


def format_table(report: MetricsReport, title: str = "") -> str:
    def num(v: Optional[float], digits: int = 1) -> str:
        return "-" if v is None else f"{v:.{digits}f}"

    header = f"{'scope':<12} {'oMiD':>9} {'oMiD+':>9} {'risk acc':>9} {'matched':>8} {'missing':>8} {'neutral':>8}"
    lines = [title] if title else []
    lines.append(header)
    rows = [("all", report.overall)] + sorted(report.per_category.items())
    for scope, t in rows:
        lines.append(
            f"{scope:<12} {num(t.o_mid):>9} {num(t.o_mid_plus):>9} {num(t.risk_accuracy, 3):>9} "
            f"{t.n_matched:>8} {t.n_missing_pred:>8} {t.n_ignored_neutral:>8}"
        )
    return "\n".join(lines)


# -- matching ---------------------------------------------------------------


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def sample_map_at_centers(
    dense: DenseMiDMap, annotations: Iterable[MiDAnnotation]
) -> Tuple[List[Tuple[float, float]], List[MiDAnnotation]]:
    """Read ``dense`` at the nearest pixel to each annotation center.

    Returns (eta_pred, eta_gt) pairs and the annotations that fell outside
    the map or on NoData pixels.
    """
    pairs, missing = [], []
    for a in annotations:
        col, row = round_half_away(a.center[0]), round_half_away(a.center[1])
        value = None
        if 0 <= col < dense.width and 0 <= row < dense.height:
            value = dense.value_at(col, row)
        if value is None:
            missing.append(a)
        else:
            pairs.append((value, a.eta))
    return pairs, missing


def predictions_from_map(
    dense: DenseMiDMap, sequence_id: str, annotations: Iterable[MiDAnnotation]
) -> List[PredictionRecord]:
    """Center-sampled dense-map values as track-keyed predictions."""
    out = []
    for a in annotations:
        if a.sequence_id != sequence_id or a.frame_index != dense.frame_index:
            continue
        got, _ = sample_map_at_centers(dense, [a])
        if got:
            out.append(PredictionRecord(sequence_id, a.frame_index, got[0][0], track_id=a.track_id))
    return out


def iou(a: BBox, b: BBox) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def _greedy(candidates: List[Tuple[float, int, int]]) -> Dict[int, int]:
    """One-to-one assignment from (cost, gt index, pred index), cheapest first."""
    used_gt, used_pred, out = set(), set(), {}
    for _, gi, pi in sorted(candidates):
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        out[gi] = pi
    return out


def match(
    predictions: Sequence[PredictionRecord],
    annotations: Sequence[MiDAnnotation],
    config: EvalConfig,
    gt_boxes: Optional[Mapping[Tuple[str, int, int], BBox]] = None,
) -> Dict[int, PredictionRecord]:
    """Map annotation index -> matched prediction under ``config.match_kind``."""
    kind = config.match_kind
    wanted = {MatchKind.TRACK: "track", MatchKind.CENTER: "center", MatchKind.IOU: "box"}[kind]
    for p in predictions:
        if p.key_kind != wanted:
            raise ConfigError(f"{kind.value} matching needs {wanted}-keyed predictions, got {p.key_kind}")
    if kind is MatchKind.TRACK:
        by_key: Dict[Tuple[str, int, int], PredictionRecord] = {}
        for p in predictions:
            key = (p.sequence_id, p.frame_index, p.track_id)
            if key in by_key:
                raise ConfigError(f"duplicate prediction for {key}")
            by_key[key] = p
        return {i: by_key[a.key] for i, a in enumerate(annotations) if a.key in by_key}
    if kind is MatchKind.IOU and gt_boxes is None:
        raise ConfigError("IoU matching needs ground-truth boxes")

    groups: Dict[Tuple[str, int], List[int]] = {}
    for pi, p in enumerate(predictions):
        groups.setdefault((p.sequence_id, p.frame_index), []).append(pi)
    candidates = []
    for gi, a in enumerate(annotations):
        for pi in groups.get((a.sequence_id, a.frame_index), ()):
            p = predictions[pi]
            if kind is MatchKind.CENTER:
                d = math.hypot(p.center[0] - a.center[0], p.center[1] - a.center[1])
                if d <= config.match_param:
                    candidates.append((d, gi, pi))
            else:
                box = gt_boxes.get(a.key)
                if box is None:
                    continue
                overlap = iou(box, p.box)
                if overlap >= config.match_param:
                    candidates.append((-overlap, gi, pi))
    return {gi: predictions[pi] for gi, pi in _greedy(candidates).items()}


def evaluate(
    predictions: Sequence[PredictionRecord],
    annotations: Sequence[MiDAnnotation],
    config: EvalConfig = EvalConfig(),
    gt_boxes: Optional[Mapping[Tuple[str, int, int], BBox]] = None,
) -> MetricsReport:
    """Score predictions against annotations of the configured categories."""
    annotations = sorted(
        (a for a in annotations if a.category in config.categories),
        key=lambda a: a.key,
    )
    matched = match(predictions, annotations, config, gt_boxes)
    report = MetricsReport(per_category={c: Tally() for c in config.categories})
    for i, a in enumerate(annotations):
        t = Tally()
        gt_label = risk_label_gt(a.eta, config)
        pred = matched.get(i)
        if pred is None:
            t.n_missing_pred = 1
            if config.missing_policy is MissingPolicy.COUNT_MISSING and gt_label is RiskLabel.RISKY:
                t.fn = 1
        else:
            loss = mid_loss(pred.eta_pred, a.eta)
            t.n_matched, t.loss_sum = 1, loss
            if a.eta < 1:
                t.n_plus, t.loss_plus_sum = 1, loss
            if gt_label is RiskLabel.NEUTRAL:
                t.n_ignored_neutral = 1
            else:
                label = pred.risk_pred or risk_label_pred(pred.eta_pred, config)
                t.tp, t.fp, t.fn = confusion([label], [gt_label])
        report.overall = report.overall.merge(t)
        report.per_category[a.category] = report.per_category[a.category].merge(t)
    return report


# -- baselines --------------------------------------------------------------


_BASELINE_METHOD = {
    BaselineKind.HEIGHT_RATIO: Method.TRACKS_2D,
    BaselineKind.HEIGHT_RATIO_CORRECTED: Method.TRACKS_2D_CORRECTED,
}


def baseline_predict(seq: TrackedSequence, kind: BaselineKind) -> List[PredictionRecord]:
    """Two-frame predictors for every object with a successor in the next frame.

    The height-ratio kinds reuse the 2D-track ground-truth formulas as
    predictors; objects whose geometry fails get no prediction.
    """
    kind = BaselineKind(kind)
    out = []
    for t0, t1 in consecutive_pairs(seq):
        if t1 is None:
            continue
        if kind is BaselineKind.UNIT:
            eta = 1.0
        else:
            try:
                eta = pair_eta(_BASELINE_METHOD[kind], t0, t1)
            except GeometryError:
                continue
        out.append(PredictionRecord(seq.sequence_id, t0.frame_index, eta, track_id=t0.track_id))
    return out
