"""Speaker-dependent voice activity detection on numpy and scipy.

Modules
-------
feats      framing, log-mel and MFCC front end, context stacking, feature binning
speaker    GMM-UBM, total variability, i-vectors and two-covariance PLDA
nnet       MLP / LSTM frame classifiers with hand-written backpropagation
segmenter  thresholding, smoothing, segment merging, label files
metrics    frame scores and the segment-level J_VAD family
corpus     synthetic speakers, conversations and real-corpus adapter
stream     frame-synchronous decoding identical to offline decoding
pipeline   training recipes, VAD/SV baseline, evaluation reports
"""

from .errors import ConfigError, ContractError, DataError, FormatError, NumericalError, SdvadError

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DataError", "FormatError", "NumericalError", "SdvadError",
           "__version__"]
