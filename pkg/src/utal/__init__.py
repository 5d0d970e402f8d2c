"""Single-stage temporal action localization with uncertainty-aware boundary regression.

The package trains a small two-branch dense network on pooled proposal
features, refines proposal boundaries in a cascade at test time, and
evaluates with mAP at several tIoU thresholds on a synthetic benchmark.
Boundary offsets can be predicted either as point estimates (plain l1
regression) or as per-class Gaussians whose variances are learned with a
KL-based piecewise loss, a sampled l1 loss (reparameterization trick), or
the closed-form expectation of the l1 loss.
"""

from utal.errors import ConfigError, NumericError, UtalError, VerificationError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "NumericError",
    "UtalError",
    "VerificationError",
    "__version__",
]
