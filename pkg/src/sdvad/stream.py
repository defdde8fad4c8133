"""Frame-synchronous decoding with bounded look-ahead.

:class:`SdvadStream` consumes one feature frame at a time and emits final
labels as soon as every stage has enough future context: binning waits for a
full bin, context stacking for ``r`` further bins, smoothing for ``W // 2``
further frames, and merging until the enclosing segment is decided.  The
emitted labels are bit-identical to :func:`decode_offline` on the same input.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .feats import FeatureMatrix, bin_features, bin_mean, context_window, expand_predictions
from .nnet import LstmModel, attach_speaker, predict
from .segmenter import merge_segments, smooth, smooth_lookahead, threshold


def assemble_inputs(feats, model, ivec=None) -> np.ndarray:
    """Bin, stack context and append the speaker embedding, as the model was trained."""
    fm = feats if isinstance(feats, FeatureMatrix) else FeatureMatrix(np.asarray(feats, dtype=np.float64))
    x = context_window(bin_features(fm, model.bin_n), model.context).values
    if ivec is not None:
        x = attach_speaker(x, ivec)
    return x


def decode_offline(model, feats, ivec=None, theta: float = 0.5, W: int = 1,
                   min_gap: int = 0, min_speech: int = 0, merge: bool | None = None):
    """Frame labels for a whole utterance; also returns the per-frame speech posteriors."""
    T = getattr(feats, "num_frames", None) or len(np.asarray(feats))
    post = predict(model, assemble_inputs(feats, model, ivec))[:, 1]
    frame_post = expand_predictions(post, model.bin_n, T)
    labels = expand_predictions(threshold(post, theta), model.bin_n, T)
    labels = smooth(labels, W)
    if merge if merge is not None else (min_gap or min_speech):
        labels = merge_segments(labels, min_gap, min_speech)
    return labels, frame_post


def merge_lookahead(min_gap: int, min_speech: int) -> int:
    """Worst-case frames a label waits in :class:`StreamingMerger`."""
    close = max(min_gap, 1)
    if min_speech <= 1:
        return close - 1
    return (min_speech - 1) + close


class StreamingMerger:
    """Incremental twin of :func:`segmenter.merge_segments`.

    Speech runs separated by fewer than ``min_gap`` zeros form one cluster; a
    cluster is released as soon as it is known to reach ``min_speech`` frames
    or has been closed by ``min_gap`` zeros.
    """

    def __init__(self, min_gap: int, min_speech: int):
        self.min_gap = min_gap
        self.min_speech = min_speech
        self.close = max(min_gap, 1)
        self.open = False
        self.kept = False  # current cluster already known to survive
        self.span = 0  # frames from cluster start to its last speech frame
        self.pending_zeros = 0  # zeros after the last speech frame

    def push(self, x: int) -> list[int]:
        out: list[int] = []
        if not self.open:
            if x == 0:
                return [0]
            self.open, self.kept, self.span, self.pending_zeros = True, False, 1, 0
        elif x == 1:
            self.span += self.pending_zeros + 1
            if self.kept:
                out.extend([1] * (self.pending_zeros + 1))
            self.pending_zeros = 0
        else:
            self.pending_zeros += 1
            if self.pending_zeros >= self.close:
                if not self.kept:
                    out.extend([1 if self.span >= self.min_speech else 0] * self.span)
                out.extend([0] * self.pending_zeros)
                self.open = False
                return out
            return out
        if not self.kept and self.span >= self.min_speech:
            self.kept = True
            out.extend([1] * self.span)
        return out

    def flush(self) -> list[int]:
        if not self.open:
            return []
        out = [] if self.kept else [1 if self.span >= self.min_speech else 0] * self.span
        out.extend([0] * self.pending_zeros)
        self.open = False
        return out


class StreamingSmoother:
    """Centred majority vote emitted ``W // 2`` frames late."""

    def __init__(self, W: int):
        self.W = W
        self.ahead = smooth_lookahead(W)
        self.behind = W - 1 - self.ahead
        self.labels: list[int] = []
        self.offset = 0  # absolute index of labels[0]
        self.next_out = 0

    def _vote(self, t: int, last: int) -> int:
        total = 0
        for j in range(t - self.behind, t + self.ahead + 1):
            j = min(max(j, 0), last)
            total += self.labels[j - self.offset]
        return 1 if 2 * total >= self.W else 0

    def push(self, x: int) -> list[int]:
        self.labels.append(int(x))
        known = self.offset + len(self.labels) - 1
        out = []
        while self.next_out + self.ahead <= known:
            out.append(self._vote(self.next_out, known + 10 ** 12))
            self.next_out += 1
        self._trim()
        return out

    def flush(self) -> list[int]:
        last = self.offset + len(self.labels) - 1
        out = []
        while self.next_out <= last:
            out.append(self._vote(self.next_out, last))
            self.next_out += 1
        return out

    def _trim(self):
        keep_from = max(0, self.next_out - self.behind)
        drop = keep_from - self.offset
        if drop > 0 and drop < len(self.labels):
            del self.labels[:drop]
            self.offset = keep_from


class SdvadStream:
    """Per-stream decoding state; the model is shared and never modified."""

    def __init__(self, model, ivec=None, theta: float = 0.5, W: int = 1,
                 min_gap: int = 0, min_speech: int = 0, merge: bool | None = None):
        self.model = model
        self.emb = None if ivec is None else np.asarray(getattr(ivec, "values", ivec), dtype=np.float64).ravel()
        self.theta = theta
        self.n = model.bin_n
        self.r = model.context
        feat_dim = model.input_dim // (2 * self.r + 1) if self.emb is None else \
            (model.input_dim - self.emb.size) // (2 * self.r + 1)
        if feat_dim <= 0 or feat_dim * (2 * self.r + 1) + (0 if self.emb is None else self.emb.size) != model.input_dim:
            raise ContractError(f"model input size {model.input_dim} does not fit context {self.r} "
                                f"and embedding of size {0 if self.emb is None else self.emb.size}")
        self.feat_dim = feat_dim
        self.lstm_state = model.init_state() if isinstance(model, LstmModel) else None
        self.pending: list[np.ndarray] = []  # frames of the current bin
        self.bins: list[np.ndarray] = []
        self.bin_offset = 0
        self.bin_sizes: list[int] = []
        self.next_bin = 0
        self.smoother = StreamingSmoother(W)
        use_merge = merge if merge is not None else bool(min_gap or min_speech)
        self.merger = StreamingMerger(min_gap, min_speech) if use_merge else None
        self.consumed = 0
        self.emitted = 0
        self.latency = (self.n - 1) + self.r * self.n + smooth_lookahead(W) + \
            (merge_lookahead(min_gap, min_speech) if use_merge else 0)

    # stages -------------------------------------------------------------
    def _classify(self, k: int, last_bin: int) -> list[int]:
        idx = [min(max(j, 0), last_bin) - self.bin_offset for j in range(k - self.r, k + self.r + 1)]
        row = np.concatenate([self.bins[i] for i in idx])
        if self.emb is not None:
            row = np.concatenate([row, self.emb])
        if self.lstm_state is not None:
            post, self.lstm_state = self.model.step(self.lstm_state, row)
        else:
            post = self.model.step(row)
        label = 1 if post[1] >= self.theta else 0
        return [label] * self.bin_sizes[k - self.bin_offset]

    def _downstream(self, labels: list[int], final: bool = False) -> list[int]:
        smoothed = []
        for x in labels:
            smoothed.extend(self.smoother.push(x))
        if final:
            smoothed.extend(self.smoother.flush())
        if self.merger is None:
            return smoothed
        out = []
        for x in smoothed:
            out.extend(self.merger.push(x))
        if final:
            out.extend(self.merger.flush())
        return out

    def _close_bin(self):
        self.bins.append(bin_mean(np.array(self.pending)))
        self.bin_sizes.append(len(self.pending))
        self.pending = []

    def _ready_labels(self, final: bool) -> list[int]:
        last = self.bin_offset + len(self.bins) - 1
        labels = []
        while self.next_bin <= last and (final or self.next_bin + self.r <= last):
            labels.extend(self._classify(self.next_bin, last if final else last + 10 ** 12))
            self.next_bin += 1
        drop = (self.next_bin - self.r) - self.bin_offset
        if drop > 0 and not final:
            del self.bins[:drop]
            del self.bin_sizes[:drop]
            self.bin_offset += drop
        return labels

    # public -------------------------------------------------------------
    def push(self, frame) -> list[int]:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.feat_dim,):
            raise ContractError(f"expected a {self.feat_dim}-dim frame, got shape {frame.shape}")
        self.consumed += 1
        self.pending.append(frame)
        labels = []
        if len(self.pending) == self.n:
            self._close_bin()
            labels = self._ready_labels(final=False)
        out = self._downstream(labels)
        self.emitted += len(out)
        return out

    def flush(self) -> list[int]:
        if self.pending:
            self._close_bin()
        out = self._downstream(self._ready_labels(final=True), final=True)
        self.emitted += len(out)
        return out

    @property
    def pending_frames(self) -> int:
        return self.consumed - self.emitted


def decode_stream(model, frames, ivec=None, **kw) -> np.ndarray:
    stream = SdvadStream(model, ivec, **kw)
    out: list[int] = []
    for row in np.asarray(getattr(frames, "values", frames), dtype=np.float64):
        out.extend(stream.push(row))
    out.extend(stream.flush())
    return np.asarray(out, dtype=np.int8)
