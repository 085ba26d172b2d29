"""Fast ground-level infrasound transmission-loss estimation.

Pipeline pieces: effective-sound-speed slices (:mod:`infratl.atmosphere`),
stochastic gravity-wave fields (:mod:`infratl.gwfield`), a split-step
parabolic-equation solver for ground truth (:mod:`infratl.pe`), dataset
assembly (:mod:`infratl.datapipe`), the convolutional-recurrent surrogate
(:mod:`infratl.crnn`), predictive uncertainty (:mod:`infratl.uq`) and
evaluation (:mod:`infratl.metrics`).
"""

__version__ = "0.1.0"
