"""
Why fragmented output scores badly
==================================

Frame accuracy hardly notices a few flipped frames inside a long segment,
but the segment-level scores do.  Smoothing and merging repair most of it.
"""

import numpy as np

from sdvad.metrics import frame_scores, jvad
from sdvad.segmenter import merge_segments, smooth, to_segments

rng = np.random.default_rng(3)
ref = np.zeros(600, dtype=np.int8)
for start, stop in [(50, 200), (260, 420), (470, 560)]:
    ref[start:stop] = 1

# flip 4% of the frames at random
noisy = ref.copy()
flip = rng.random(len(ref)) < 0.04
noisy[flip] = 1 - noisy[flip]
cleaned = merge_segments(smooth(noisy, 10), min_gap=10, min_speech=10)

for name, hyp in [("noisy", noisy), ("smoothed + merged", cleaned)]:
    rep = jvad(ref, hyp, tol=10)
    print("%-18s segments %3d  ACC %.3f  F1 %.3f  SBA %.3f  EBA %.3f  BP %.3f  J_VAD %.3f"
          % (name, len(to_segments(hyp)), rep.acc, frame_scores(ref, hyp).f1, rep.sba, rep.eba, rep.bp, rep.jvad))
