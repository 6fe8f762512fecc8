"""Semi-supervised self-training of audio event detectors.

MFCC frames are soft-quantized against a GMM vocabulary into Bag-of-Audio-Words
histograms, scored by one-vs-rest SVM or MLP detectors, and the detectors are
retrained on confidently pseudo-labeled unlabeled segments.
"""

__version__ = "0.1.0"
