"""
From a waveform to binned log-mel frames
========================================

Synthesize one utterance for a random speaker, run the shared front end and
look at what binning does to the frame rate and to the labels.
"""

import numpy as np

from sdvad.corpus import make_profiles, synth_utterance
from sdvad.feats import bin_features, bin_labels, expand_predictions, extract, mfcc

# a speaker is a spectral envelope over the mel bands plus a pitch
profile = make_profiles(["spk000"], seed=0)["spk000"]
print("pitch %.1f Hz, envelope range %.3f .. %.3f" % (profile.pitch, profile.envelope.min(), profile.envelope.max()))

# bursts of voiced speech separated by pauses; labels come with the audio
utt = synth_utterance(profile, duration=3.0, seed=1)
print("%d samples at %d Hz, speech in %.0f%% of the frames"
      % (len(utt.audio.samples), utt.audio.sample_rate, 100 * utt.speech_labels.mean()))

# 25 ms windows every 10 ms, 36 log-mel bands
feats = extract(utt.audio)
print("log-mel:", feats.values.shape)

# the speaker models work on cepstra computed from the same log-mel matrix
print("MFCC:", mfcc(feats).values.shape)

# binning averages n adjacent frames; the classifier then runs n times less often
for n in (1, 2, 4):
    binned = bin_features(feats, n)
    labels = bin_labels(utt.speech_labels, n)
    back = expand_predictions(labels, n, feats.num_frames)
    agree = np.mean(back == utt.speech_labels)
    print("n=%d: %4d bins, labels survive the round trip on %.1f%% of frames" % (n, binned.num_frames, 100 * agree))
