"""Verification-protocol harness and error metrics.

Scores are distances: a probe is accepted when score <= threshold, so FAR
(fraction of impostor attempts accepted) grows with the threshold while FRR
(fraction of genuine attempts rejected) shrinks.  The equal-error rate is
read off the lower convex hull of the empirical (FAR, FRR) operating points
with linear interpolation between the two points bracketing FAR = FRR; the
hull keeps the estimator inside [0, 0.5] and handles stepwise score ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, MetricUndefinedError, ProtocolError

DEFAULT_ROC_POINTS = 1000


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Genuine and impostor distance scores from one protocol run."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=np.float64).ravel()
        i = np.asarray(self.impostor, dtype=np.float64).ravel()
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)
        for name, arr in (("genuine", g), ("impostor", i)):
            if arr.size and not np.isfinite(arr).all():
                raise DataError(f"{name} scores contain non-finite values")
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise DataError(f"{name} scores must lie in [0, 1]")

    def all_scores(self) -> np.ndarray:
        return np.concatenate([self.genuine, self.impostor])


@dataclass(frozen=True, eq=False)
class MetricsReport:
    eer: float
    eer_threshold: float
    crr: float
    di: float
    roc: tuple  # ((threshold, far, frr), ...) strictly increasing thresholds

    def __post_init__(self):
        if not (0.0 <= self.eer <= 0.5):
            raise DataError(f"eer out of range: {self.eer}")
        if not (0.0 <= self.crr <= 100.0):
            raise DataError(f"crr out of range: {self.crr}")
        ts = [row[0] for row in self.roc]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError("roc thresholds must be strictly increasing")

    def to_dict(self) -> dict:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "crr": self.crr,
            "di": self.di,
            "roc": [list(row) for row in self.roc],
        }


def far_frr(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    """Operating point at one threshold (accept when score <= threshold)."""
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise DataError("far_frr needs non-empty genuine and impostor scores")
    far = float(np.mean(scores.impostor <= threshold))
    frr = float(np.mean(scores.genuine > threshold))
    return far, frr


def _operating_points(scores: ScoreSet) -> list[tuple[float, float, float]]:
    """(threshold, far, frr) swept over the sorted union of scores, plus a
    virtual below-minimum threshold contributing the (0, 1) corner."""
    union = np.unique(scores.all_scores())
    lo = float(union[0]) - max(1e-9, (float(union[-1]) - float(union[0])) * 1e-3)
    pts = [(lo, 0.0, 1.0)]
    for t in union:
        far, frr = far_frr(scores, float(t))
        pts.append((float(t), far, frr))
    return pts


def _lower_hull(points: list[tuple[float, float, float]]) -> list[tuple[float, float, float]]:
    """Lower convex hull in the (far, frr) plane, thresholds carried along."""
    pts = sorted(points, key=lambda p: (p[1], p[2]))

    def cross(o, a, b):
        return (a[1] - o[1]) * (b[2] - o[2]) - (a[2] - o[2]) * (b[1] - o[1])

    hull: list[tuple[float, float, float]] = []
    for p in pts:
        while len(hull) >= 2 and cross(hull[-2], hull[-1], p) <= 0.0:
            hull.pop()
        hull.append(p)
    return hull


def eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal-error rate and its threshold.

    Returns (eer, threshold) where eer is the height of the FAR = FRR
    crossing of the convex operating frontier and threshold the linearly
    interpolated score at which it occurs.
    """
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise DataError("eer needs non-empty genuine and impostor scores")
    hull = _lower_hull(_operating_points(scores))
    diffs = [far - frr for _, far, frr in hull]
    for i, d in enumerate(diffs):
        if d == 0.0:
            t, far, frr = hull[i]
            return (far + frr) / 2.0, t
        if i + 1 < len(diffs) and d < 0.0 < diffs[i + 1]:
            t0, f0, r0 = hull[i]
            t1, f1, r1 = hull[i + 1]
            lam = -d / (diffs[i + 1] - d)
            far = f0 + lam * (f1 - f0)
            frr = r0 + lam * (r1 - r0)
            return (far + frr) / 2.0, t0 + lam * (t1 - t0)
    raise MetricUndefinedError("no FAR = FRR crossing found")  # unreachable for non-empty sets


def crr_rank1(probe_scores: list[tuple[str, list[tuple[str, float]]]]) -> float:
    """Rank-1 correct recognition rate, in percent.

    Each entry is (true identity, [(candidate identity, score), ...]); a
    probe counts as recognized only when the minimum score is achieved
    uniquely by the true identity (ties break toward failure).
    """
    if not probe_scores:
        raise DataError("crr_rank1 needs at least one probe")
    correct = 0
    for true_id, scored in probe_scores:
        if not scored:
            raise DataError(f"probe for {true_id!r} has no candidate scores")
        ids = [sid for sid, _ in scored]
        if true_id not in ids:
            raise ProtocolError(f"probe subject {true_id!r} missing from candidates")
        own = min(s for sid, s in scored if sid == true_id)
        others = [s for sid, s in scored if sid != true_id]
        if not others or own < min(others):
            correct += 1
    return 100.0 * correct / len(probe_scores)


def decidability_index(scores: ScoreSet) -> float:
    """Separation of the two score distributions:
    |mean_g - mean_i| / sqrt((var_g + var_i) / 2), sample variances."""
    g, i = scores.genuine, scores.impostor
    if g.size < 2 or i.size < 2:
        raise DataError("decidability_index needs >= 2 scores on each side")
    pooled = (g.var(ddof=1) + i.var(ddof=1)) / 2.0
    if pooled == 0.0:
        raise MetricUndefinedError("zero variance in both score sets; index undefined")
    return float(abs(g.mean() - i.mean()) / np.sqrt(pooled))


def roc_grid(scores: ScoreSet, points: int = DEFAULT_ROC_POINTS) -> list[tuple[float, float, float]]:
    """(threshold, far, frr) rows over an even grid spanning the score range."""
    if points < 2:
        raise DataError(f"roc grid needs >= 2 points, got {points}")
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise DataError("roc needs non-empty genuine and impostor scores")
    all_scores = scores.all_scores()
    lo, hi = float(all_scores.min()), float(all_scores.max())
    if hi <= lo:
        raise DataError("degenerate score range; roc grid undefined")
    rows = []
    for t in np.linspace(lo, hi, points):
        far, frr = far_frr(scores, float(t))
        rows.append((float(t), far, frr))
    return rows


def export_roc(scores: ScoreSet, path, points: int = DEFAULT_ROC_POINTS) -> None:
    """Write the ROC as CSV with columns threshold,far,frr,gar (gar = 1 - frr).

    Formatting is repr-based, so re-exporting the same scores is
    byte-identical.
    """
    rows = roc_grid(scores, points)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold,far,frr,gar\n")
        for t, far, frr in rows:
            fh.write(f"{t!r},{far!r},{frr!r},{1.0 - frr!r}\n")


def match_probes(
    handles: dict[str, object],
    probes: dict[str, list],
    score_fn,
) -> list[tuple[str, list[tuple[str, float]]]]:
    """Score every probe image against every enrolled handle.

    Returns one (true identity, [(identity, score), ...]) entry per probe
    image, candidates in sorted identity order.
    """
    gallery_ids = sorted(handles)
    out = []
    for pid in sorted(probes):
        if pid not in handles:
            raise ProtocolError(f"probe subject {pid!r} has no gallery enrollment")
        for img in probes[pid]:
            out.append((pid, [(sid, float(score_fn(handles[sid], img))) for sid in gallery_ids]))
    return out


def scores_from_matches(matches: list[tuple[str, list[tuple[str, float]]]]) -> ScoreSet:
    genuine = [s for pid, scored in matches for sid, s in scored if sid == pid]
    impostor = [s for pid, scored in matches for sid, s in scored if sid != pid]
    return ScoreSet(genuine=np.array(genuine), impostor=np.array(impostor))


def run_protocol(
    gallery: dict[str, list],
    probes: dict[str, list],
    enroll_fn,
    score_fn,
) -> ScoreSet:
    """Enroll every gallery subject, score every probe against every
    enrollment, and split the scores into genuine and impostor sets.

    With S subjects and P probe images each this yields S*P genuine and
    S*(S-1)*P impostor scores.
    """
    if len(gallery) < 2:
        raise ProtocolError(f"protocol needs >= 2 gallery subjects, got {len(gallery)}")
    for sid, imgs in gallery.items():
        if not list(imgs):
            raise DataError(f"gallery subject {sid!r} has no images")
    unknown = set(probes) - set(gallery)
    if unknown:
        raise ProtocolError(f"probe subjects missing from gallery: {sorted(unknown)}")
    handles = {sid: enroll_fn(sid, list(imgs)) for sid, imgs in sorted(gallery.items())}
    return scores_from_matches(match_probes(handles, probes, score_fn))
