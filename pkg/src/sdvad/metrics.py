"""Frame-level and segment-level VAD scores.

Segment-level scoring combines four numbers in [0, 1]:

* SBA / EBA: share of reference segment starts / ends matched by a hypothesis
  boundary of the same kind within ``tol`` frames (one-to-one matching),
* BP: ``min(N_ref, N_hyp) / max(N_ref, N_hyp)`` over segment counts,
* ACC: frame accuracy,

and J_VAD is their harmonic mean.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError
from .segmenter import to_segments

DEFAULT_TOL = 10


@dataclass(frozen=True)
class FrameScores:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def acc(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp else 0.0

    @property
    def f1(self) -> float:
        if self.tp == 0:
            return 0.0
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r)

    def __add__(self, other: "FrameScores") -> "FrameScores":
        return FrameScores(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(acc=self.acc, precision=self.precision, recall=self.recall, f1=self.f1)
        return d


def harmonic_mean(values) -> float:
    values = [float(v) for v in values]
    if any(v <= 0.0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


@dataclass(frozen=True)
class JvadReport:
    sba: float
    eba: float
    bp: float
    acc: float

    @property
    def jvad(self) -> float:
        return harmonic_mean([self.sba, self.eba, self.bp, self.acc])

    def as_dict(self) -> dict:
        return dict(sba=self.sba, eba=self.eba, bp=self.bp, acc=self.acc, jvad=self.jvad)


def _check_pair(ref, hyp):
    ref = np.asarray(ref, dtype=np.int8)
    hyp = np.asarray(hyp, dtype=np.int8)
    if ref.shape != hyp.shape:
        raise ContractError(f"reference has {len(ref)} frames, hypothesis has {len(hyp)}")
    return ref, hyp


def frame_scores(ref, hyp) -> FrameScores:
    ref, hyp = _check_pair(ref, hyp)
    if len(ref) == 0:
        raise ContractError("cannot score an empty label sequence")
    ref_b, hyp_b = ref.astype(bool), hyp.astype(bool)
    tp = int(np.sum(ref_b & hyp_b))
    fp = int(np.sum(~ref_b & hyp_b))
    fn = int(np.sum(ref_b & ~hyp_b))
    return FrameScores(tp, fp, len(ref) - tp - fp - fn, fn)


def count_matched_boundaries(ref_points, hyp_points, tol: int) -> int:
    """Size of a maximum one-to-one matching with ``|r - h| <= tol``.

    Sweeping both sorted lists and giving each reference point the leftmost
    free hypothesis point inside its window is optimal because all windows
    have the same width.
    """
    ref_points = sorted(ref_points)
    hyp_points = sorted(hyp_points)
    j = matched = 0
    for r in ref_points:
        while j < len(hyp_points) and hyp_points[j] < r - tol:
            j += 1
        if j < len(hyp_points) and hyp_points[j] <= r + tol:
            matched += 1
            j += 1
    return matched


def _boundaries(segs, which: str):
    if which == "start":
        return [s for s, _ in segs]
    if which == "end":
        return [e for _, e in segs]
    raise ValueError(f"which must be 'start' or 'end', got {which!r}")


def boundary_accuracy(ref_segs, hyp_segs, tol: int = DEFAULT_TOL, which: str = "start") -> float:
    if not ref_segs:
        return 1.0
    matched = count_matched_boundaries(_boundaries(ref_segs, which), _boundaries(hyp_segs, which), tol)
    return matched / len(ref_segs)


def border_precision(ref_segs, hyp_segs) -> float:
    return segment_count_ratio(len(ref_segs), len(hyp_segs))


def segment_count_ratio(n_ref: int, n_hyp: int) -> float:
    if n_ref == 0 and n_hyp == 0:
        return 1.0
    return min(n_ref, n_hyp) / max(n_ref, n_hyp)


def jvad(ref, hyp, tol: int = DEFAULT_TOL) -> JvadReport:
    ref, hyp = _check_pair(ref, hyp)
    rs, hs = to_segments(ref), to_segments(hyp)
    return JvadReport(
        sba=boundary_accuracy(rs, hs, tol, "start"),
        eba=boundary_accuracy(rs, hs, tol, "end"),
        bp=border_precision(rs, hs),
        acc=frame_scores(ref, hyp).acc,
    )


class ScoreAccumulator:
    """Corpus-level pooling of per-utterance statistics.

    Confusion counts are pooled frame-weighted, BP pools segment counts and
    SBA/EBA pool matched and reference boundaries.
    """

    def __init__(self, tol: int = DEFAULT_TOL):
        self.tol = tol
        self.frames = FrameScores(0, 0, 0, 0)
        self.n_ref = self.n_hyp = 0
        self.start_hits = self.end_hits = 0

    def add(self, ref, hyp) -> tuple[FrameScores, JvadReport]:
        fs = frame_scores(ref, hyp)
        rs, hs = to_segments(ref), to_segments(hyp)
        self.frames = self.frames + fs
        self.n_ref += len(rs)
        self.n_hyp += len(hs)
        self.start_hits += count_matched_boundaries(_boundaries(rs, "start"), _boundaries(hs, "start"), self.tol)
        self.end_hits += count_matched_boundaries(_boundaries(rs, "end"), _boundaries(hs, "end"), self.tol)
        return fs, jvad(ref, hyp, self.tol)

    def report(self) -> JvadReport:
        sba = self.start_hits / self.n_ref if self.n_ref else 1.0
        eba = self.end_hits / self.n_ref if self.n_ref else 1.0
        return JvadReport(sba, eba, segment_count_ratio(self.n_ref, self.n_hyp), self.frames.acc)
