"""
The whole recipe on a tiny corpus
=================================

Every stage of the command-line recipe (corpus, UBM, TV, PLDA, VAD, SDVAD,
decoding and scoring) on a corpus small enough to finish in seconds.
The numbers are far from the default configuration's; the point is the flow.

Run ``sdvad run-all --workdir work`` for the full-size version.
"""

import sys
import tempfile

from sdvad import pipeline
from sdvad.config import EngineConfig

workdir = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="sdvad-")
cfg = EngineConfig(workdir=workdir, n_train=12, n_dev=3, n_test=3, utts_per_speaker=4, n_enroll=1,
                   min_duration=2.0, max_duration=3.0, train_convs=40, dev_convs=6, test_convs=8,
                   ubm_components=16, tv_rank=8, hidden=16, layers=1, epochs=4)

report = pipeline.run_all(cfg, binned=4)
print("artifacts in", workdir)
print("%-16s %7s %7s %7s %7s" % ("system", "ACC", "F1", "BP", "J_VAD"))
for row in report["comparison"]:
    print("%-16s %7.4f %7.4f %7.4f %7.4f" % (row["system"], row["acc"], row["f1"], row["bp"], row["jvad"]))
