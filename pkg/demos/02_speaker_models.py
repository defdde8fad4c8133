"""
i-vectors and PLDA on a small synthetic corpus
==============================================

Train a GMM-UBM, a total variability matrix and a PLDA back end on a few
synthetic speakers, then score held-out utterances and read off the equal
error rate.
"""

import numpy as np

from sdvad.corpus import make_profiles, synth_utterance
from sdvad.feats import extract, mfcc
from sdvad.speaker import (
    bw_stats, eer_threshold, extract_ivector, length_normalize, plda_score, train_plda, train_tv, train_ubm,
)

speakers = [f"spk{i:03d}" for i in range(16)]
profiles = make_profiles(speakers, seed=0)


def cepstra(spk, k):
    utt = synth_utterance(profiles[spk], duration=2.0, seed=[k, int(spk[3:])])
    cep = mfcc(extract(utt.audio)).values
    return cep[utt.speech_labels.astype(bool)]  # speech frames only


# four utterances per speaker for training, two more for testing
train = {(s, k): cepstra(s, k) for s in speakers[:12] for k in range(4)}
test = {(s, k): cepstra(s, k) for s in speakers[12:] for k in range(4, 6)}

ubm = train_ubm(list(train.values()), C=16, iters=10, seed=0)
stats = {key: bw_stats(c, ubm) for key, c in train.items()}
tv = train_tv(list(stats.values()), ubm, d=8, iters=5, seed=0)


def ivector(cep):
    return length_normalize(extract_ivector(bw_stats(cep, ubm), tv, ubm))


ivecs = {key: length_normalize(extract_ivector(s, tv, ubm)) for key, s in stats.items()}
plda = train_plda(list(ivecs.values()), [s for s, _ in ivecs])

# every test utterance against every other one
keys = sorted(test)
vecs = {k: ivector(test[k]) for k in keys}
target, nontarget = [], []
for i, a in enumerate(keys):
    for b in keys[i + 1:]:
        (target if a[0] == b[0] else nontarget).append(plda_score(plda, vecs[a], vecs[b]))
eer, thr = eer_threshold(target, nontarget)
print("mean target score %.2f, mean non-target score %.2f" % (np.mean(target), np.mean(nontarget)))
print("EER %.1f%% at threshold %.2f" % (100 * eer, thr))
