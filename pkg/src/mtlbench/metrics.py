"""Forecasting metrics: minADE, minFDE, heading-frame match tests, miss rate,
trajectory-shape bucketing, per-category average precision and mAP.

The match test rotates the world-frame error into the ground-truth heading
frame (x = longitudinal) and compares against thresholds that grow with the
horizon and shrink for slow agents. Average precision pools every predicted
mode across records, allows at most one true positive per record (claimed by
the highest-ranked matching mode) and integrates the monotone precision
envelope over recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import PredictionSet, select_modes
from .errors import InputError
from .scene import Scenario, VectorizeConfig, prepare

SHAPE_CATEGORIES = (
    "stationary",
    "straight",
    "straight_left",
    "straight_right",
    "left_turn",
    "right_turn",
    "left_u_turn",
    "right_u_turn",
)


@dataclass
class MatchThresholds:
    """Lateral base thresholds per horizon checkpoint; longitudinal is a fixed
    multiple. Both scale with the agent's speed at prediction time through a
    piecewise-linear multiplier. Values between checkpoints interpolate
    linearly and clamp at the ends."""

    lateral_checkpoints: tuple = ((3.0, 1.0), (5.0, 1.8), (8.0, 3.0))
    longitudinal_scale: float = 2.0
    speed_curve: tuple = ((1.4, 0.5), (11.0, 1.0))

    def speed_multiplier(self, speed: float) -> float:
        xs = [p[0] for p in self.speed_curve]
        ys = [p[1] for p in self.speed_curve]
        return float(np.interp(speed, xs, ys))

    def lateral(self, horizon_s: float, speed: float) -> float:
        xs = [p[0] for p in self.lateral_checkpoints]
        ys = [p[1] for p in self.lateral_checkpoints]
        return float(np.interp(horizon_s, xs, ys)) * self.speed_multiplier(speed)

    def longitudinal(self, horizon_s: float, speed: float) -> float:
        return self.lateral(horizon_s, speed) * self.longitudinal_scale


# -- displacement metrics ----------------------------------------------------------


def min_ade(gt: np.ndarray, preds: np.ndarray) -> float:
    """Smallest mean per-step L2 distance between gt (T, 2) and any of the
    K predicted trajectories (K, T, 2)."""
    gt = np.asarray(gt, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if gt.ndim != 2 or gt.shape[0] == 0:
        raise InputError(f"ground truth must be (T, 2) with T >= 1, got {gt.shape}")
    d = np.linalg.norm(preds - gt[None, :, :], axis=2)
    return float(d.mean(axis=1).min())


def min_fde(gt: np.ndarray, preds: np.ndarray) -> float:
    """Smallest final-step L2 distance."""
    gt = np.asarray(gt, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if gt.ndim != 2 or gt.shape[0] == 0:
        raise InputError(f"ground truth must be (T, 2) with T >= 1, got {gt.shape}")
    return float(np.linalg.norm(preds[:, -1, :] - gt[None, -1, :], axis=1).min())


def is_match(gt_point, gt_heading: float, pred_point, xi_long: float, xi_lat: float) -> bool:
    """Strict heading-frame displacement test for one (gt, prediction) step."""
    err = np.asarray(gt_point, dtype=np.float64) - np.asarray(pred_point, dtype=np.float64)
    c, s = np.cos(gt_heading), np.sin(gt_heading)
    longitudinal = err[0] * c + err[1] * s
    lateral = -err[0] * s + err[1] * c
    return bool(abs(longitudinal) < xi_long and abs(lateral) < xi_lat)


# -- records --------------------------------------------------------------------------


@dataclass
class EvalRecord:
    """One scored example: ground truth future, its headings, the agent's
    speed at prediction time, the (post-selection) prediction set, and the
    trajectory-shape category."""

    gt: np.ndarray  # (T, 2)
    headings: np.ndarray  # (T,)
    speed: float
    prediction: PredictionSet
    category: str
    scenario_id: str = ""


def classify_shape(traj: np.ndarray, headings: np.ndarray,
                   stationary_below: float = 2.0, turn_above_deg: float = 30.0,
                   u_turn_above_deg: float = 135.0, lateral_offset_above: float = 5.0) -> str:
    """Bucket a trajectory by endpoint displacement and net heading change."""
    traj = np.asarray(traj, dtype=np.float64)
    if len(traj) < 2:
        raise InputError("need at least two steps to classify a trajectory")
    displacement = traj[-1] - traj[0]
    if np.linalg.norm(displacement) < stationary_below:
        return "stationary"
    unwrapped = np.unwrap(np.asarray(headings, dtype=np.float64))
    net = np.degrees(unwrapped[-1] - unwrapped[0])
    if abs(net) > u_turn_above_deg:
        return "left_u_turn" if net > 0 else "right_u_turn"
    if abs(net) > turn_above_deg:
        return "left_turn" if net > 0 else "right_turn"
    h0 = float(headings[0])
    lateral = -displacement[0] * np.sin(h0) + displacement[1] * np.cos(h0)
    if lateral > lateral_offset_above:
        return "straight_left"
    if lateral < -lateral_offset_above:
        return "straight_right"
    return "straight"


def mode_matches(record: EvalRecord, horizon_index: int, horizon_s: float,
                 thresholds: MatchThresholds) -> np.ndarray:
    """Boolean match flag per mode at the evaluation horizon."""
    xi_long = thresholds.longitudinal(horizon_s, record.speed)
    xi_lat = thresholds.lateral(horizon_s, record.speed)
    gt_point = record.gt[horizon_index]
    heading = float(record.headings[horizon_index])
    return np.array(
        [
            is_match(gt_point, heading, record.prediction.trajectories[k, horizon_index], xi_long, xi_lat)
            for k in range(record.prediction.num_modes)
        ]
    )


def miss_rate(records: list[EvalRecord], horizon_index: int, horizon_s: float,
              thresholds: MatchThresholds) -> float:
    """Fraction of records where no mode matches at the horizon."""
    if not records:
        raise InputError("miss rate over an empty record list")
    misses = sum(1 for r in records if not mode_matches(r, horizon_index, horizon_s, thresholds).any())
    return misses / len(records)


def average_precision(records: list[EvalRecord], horizon_index: int, horizon_s: float,
                      thresholds: MatchThresholds) -> float:
    """AP over the pooled, confidence-ranked predictions of one category.

    Rank ties break on (record index, mode index). A prediction is a true
    positive iff it matches its record's ground truth and no higher-ranked
    prediction already claimed that record; every other prediction is a false
    positive. Recall is against the record count; the area is taken under the
    monotone (right-max) precision envelope.
    """
    if not records:
        raise InputError("average precision of an empty category")
    pool = []
    for r_idx, record in enumerate(records):
        matched = mode_matches(record, horizon_index, horizon_s, thresholds)
        for m_idx in range(record.prediction.num_modes):
            pool.append((-record.prediction.confidences[m_idx], r_idx, m_idx, bool(matched[m_idx])))
    pool.sort()
    claimed = set()
    tp = np.zeros(len(pool))
    for rank, (_, r_idx, _, matched) in enumerate(pool):
        if matched and r_idx not in claimed:
            tp[rank] = 1.0
            claimed.add(r_idx)
    tp_cum = np.cumsum(tp)
    recall = tp_cum / len(records)
    precision = tp_cum / np.arange(1, len(pool) + 1)

    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[1.0], precision])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(np.diff(mrec) > 0) + 1
    return float(((mrec[steps] - mrec[steps - 1]) * mpre[steps]).sum())


def mean_ap(records: list[EvalRecord], horizon_index: int, horizon_s: float,
            thresholds: MatchThresholds):
    """Unweighted mean AP over non-empty categories; returns (mAP, breakdown)."""
    if not records:
        raise InputError("mAP over an empty record list")
    breakdown = {}
    for category in SHAPE_CATEGORIES:
        subset = [r for r in records if r.category == category]
        if subset:
            breakdown[category] = (average_precision(subset, horizon_index, horizon_s, thresholds), len(subset))
    if not breakdown:
        raise InputError("no non-empty shape categories")
    score = float(np.mean([ap for ap, _ in breakdown.values()]))
    return score, breakdown


# -- end-to-end evaluation ---------------------------------------------------------------


@dataclass
class EvalConfig:
    vectorize: VectorizeConfig = field(default_factory=VectorizeConfig)
    thresholds: MatchThresholds = field(default_factory=MatchThresholds)
    rate: float = 10.0
    horizon_index: int | None = None  # None = final step
    select_target: int = 6
    nms_radius: float = 2.5


@dataclass
class MetricsReport:
    map_score: float
    min_ade: float
    min_fde: float
    miss_rate: float
    samples: int
    per_category: dict[str, tuple[float, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mAP": self.map_score,
            "minADE": self.min_ade,
            "minFDE": self.min_fde,
            "missRate": self.miss_rate,
            "samples": self.samples,
            "perCategoryAP": {k: {"ap": ap, "count": n} for k, (ap, n) in self.per_category.items()},
        }

    def to_text(self) -> str:
        lines = [
            f"mAP={self.map_score:.6f}",
            f"minADE={self.min_ade:.6f}",
            f"minFDE={self.min_fde:.6f}",
            f"missRate={self.miss_rate:.6f}",
            f"samples={self.samples}",
        ]
        for k, (ap, n) in sorted(self.per_category.items()):
            lines.append(f"ap.{k}={ap:.6f} (n={n})")
        return "\n".join(lines) + "\n"


def build_record(inputs, prediction: PredictionSet, config: EvalConfig) -> EvalRecord:
    selected = select_modes(prediction, target=config.select_target, radius=config.nms_radius)
    return EvalRecord(
        gt=inputs.gt_future,
        headings=inputs.gt_headings,
        speed=inputs.focal_speed,
        prediction=selected,
        category=classify_shape(inputs.gt_future, inputs.gt_headings),
        scenario_id=inputs.scenario_id,
    )


def summarize(records: list[EvalRecord], config: EvalConfig) -> MetricsReport:
    if not records:
        raise InputError("cannot evaluate an empty split")
    horizon = len(records[0].gt) - 1 if config.horizon_index is None else config.horizon_index
    horizon_s = (horizon + 1) / config.rate
    ades = [min_ade(r.gt, r.prediction.trajectories) for r in records]
    fdes = [min_fde(r.gt, r.prediction.trajectories) for r in records]
    mr = miss_rate(records, horizon, horizon_s, config.thresholds)
    score, breakdown = mean_ap(records, horizon, horizon_s, config.thresholds)
    return MetricsReport(
        map_score=score,
        min_ade=float(np.mean(ades)),
        min_fde=float(np.mean(fdes)),
        miss_rate=mr,
        samples=len(records),
        per_category=breakdown,
    )


def evaluate(predictor, scenarios: list[Scenario], config: EvalConfig) -> MetricsReport:
    """Run the predictor over a split and score it. Deterministic given both."""
    records = []
    for s in scenarios:
        inputs = prepare(s, config.vectorize)
        records.append(build_record(inputs, predictor.predict_inputs(inputs), config))
    return summarize(records, config)
