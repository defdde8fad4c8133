"""Frame decisions, rule-based post-processing and segment conversion.

Segments are half-open ``(start, end)`` frame ranges.  A canonical segment list
is sorted with at least one non-speech frame between consecutive segments, which
is exactly what :func:`to_segments` produces.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError

SEGMENT_LABELS = ("speech", "target")


def threshold(posteriors, theta: float = 0.5) -> np.ndarray:
    """1 where the speech posterior reaches ``theta`` (ties go to speech)."""
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"theta must lie in (0, 1), got {theta}")
    return (np.asarray(posteriors, dtype=np.float64) >= theta).astype(np.int8)


def smooth_lookahead(W: int) -> int:
    """Future frames a centred window of ``W`` frames needs."""
    return W // 2


def smooth(labels, W: int) -> np.ndarray:
    """Centred majority vote over ``W`` frames with edge replication.

    For even ``W`` the window reaches one frame further into the future than
    into the past, and a tied vote yields 1.
    """
    if W < 1:
        raise ConfigError(f"smoothing window must be >= 1, got {W}")
    labels = np.asarray(labels, dtype=np.int8)
    T = len(labels)
    if W == 1 or T == 0:
        return labels.copy()
    ahead = smooth_lookahead(W)
    behind = W - 1 - ahead
    padded = np.concatenate([np.repeat(labels[:1], behind), labels, np.repeat(labels[-1:], ahead)])
    csum = np.concatenate([[0], np.cumsum(padded, dtype=np.int64)])
    votes = csum[W:] - csum[:-W]
    return (2 * votes >= W).astype(np.int8)


def to_segments(labels) -> list[tuple[int, int]]:
    labels = np.asarray(labels, dtype=np.int8)
    if len(labels) == 0:
        return []
    padded = np.concatenate([[0], labels, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def from_segments(segs, total: int) -> np.ndarray:
    out = np.zeros(total, dtype=np.int8)
    prev_end = -1
    for start, end in segs:
        if not 0 <= start < end <= total:
            raise ContractError(f"segment [{start}, {end}) outside [0, {total})")
        if start <= prev_end:
            raise ContractError(f"segment [{start}, {end}) overlaps or touches its predecessor")
        out[start:end] = 1
        prev_end = end
    return out


def merge_segments(labels, min_gap: int = 10, min_speech: int = 10) -> np.ndarray:
    """Fill short pauses between speech, then drop short speech segments."""
    if min_gap < 0 or min_speech < 0:
        raise ConfigError("min_gap and min_speech must be >= 0")
    labels = np.asarray(labels, dtype=np.int8)
    segs = to_segments(labels)
    merged: list[list[int]] = []
    for s, e in segs:
        if merged and s - merged[-1][1] < min_gap:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    out = np.zeros_like(labels)
    for s, e in merged:
        if e - s >= min_speech:
            out[s:e] = 1
    return out


def postprocess(labels, W: int = 10, min_gap: int = 10, min_speech: int = 10) -> np.ndarray:
    return merge_segments(smooth(labels, W), min_gap, min_speech)


# -- segment label files ----------------------------------------------------------------

def read_label_file(path) -> dict[str, dict[str, list[tuple[int, int]]]]:
    """Parse ``<utt-id> <start-frame> <end-frame> <label>`` lines.

    Returns ``{utt_id: {label: [(start, end), ...]}}``.
    """
    out: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        utt, start, end, label = parts
        if label not in SEGMENT_LABELS:
            raise FormatError(f"{path}:{lineno}: unknown label {label!r}")
        try:
            start, end = int(start), int(end)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer frame index") from None
        if not 0 <= start < end:
            raise FormatError(f"{path}:{lineno}: bad segment [{start}, {end})")
        out[utt][label].append((start, end))
    return {k: {lab: sorted(v) for lab, v in d.items()} for k, d in out.items()}


def write_label_file(path, entries) -> None:
    """``entries`` is an iterable of ``(utt_id, label, segments)``."""
    by_utt: dict[str, list] = {}
    for utt, label, segs in entries:
        if label not in SEGMENT_LABELS:
            raise ContractError(f"unknown label {label!r}")
        by_utt.setdefault(utt, []).extend((s, e, label) for s, e in segs)
    lines = [f"{utt} {s} {e} {label}" for utt, rows in by_utt.items() for s, e, label in sorted(rows)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
