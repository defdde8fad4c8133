"""
Frame-by-frame decoding and its latency
=======================================

A stream consumes one feature frame at a time and emits labels as soon as
they are final.  Binning and smoothing delay the output by a fixed number of
frames; the output itself is identical to decoding the whole utterance.
"""

import numpy as np

from sdvad.nnet import init_lstm
from sdvad.stream import SdvadStream, decode_offline

rng = np.random.default_rng(0)
feats = rng.standard_normal((200, 36))
ivec = rng.standard_normal(32)

for n, W in [(1, 1), (4, 1), (1, 10), (4, 10)]:
    model = init_lstm(36 + 32, 16, 1, seed=1, bin_n=n)
    stream = SdvadStream(model, ivec, W=W)
    emitted = []
    waits = []
    for k, frame in enumerate(feats):
        for label in stream.push(frame):
            waits.append(k - len(emitted))
            emitted.append(label)
    emitted += stream.flush()
    offline, _ = decode_offline(model, feats, ivec, W=W)
    print("bin %d, smoothing %2d: reported latency %d frames, longest wait %d, identical to offline: %s"
          % (n, W, stream.latency, max(waits), np.array_equal(emitted, offline)))
