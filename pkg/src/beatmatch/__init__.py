"""Cut-point prediction for background music.

The package is layered bottom-up: ``tensor`` (reverse-mode autodiff on
numpy), ``nn``/``optim``/``checkpoint``, then the audio pipeline
(``audio``, ``features``, ``context``, ``attention``), the models, the
label scope loss (``scope``), evaluation (``metrics``), synthetic data,
training and the command line.
"""

__version__ = "0.1.0"
