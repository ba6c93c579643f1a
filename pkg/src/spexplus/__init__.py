"""Multi-scale time-domain target speaker extraction, built from scratch.

The package bundles a small tape-based autodiff tensor core, the layer and
network definitions, an SI-SDR + speaker cross-entropy training objective,
a synthetic two-talker mixture simulator, a training harness, and an
evaluation/reporting CLI.
"""

__version__ = "0.1.0"
