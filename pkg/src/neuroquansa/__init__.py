"""neuroquansa

Spike-based sampling emulation used as a variational ansatz for ground states
of the transverse-field Ising model, plus the hardware-limitation studies.
See `SPEC_FULL.md` for requirements and `DESIGN.md` for the module map.
"""

__all__ = [
    "__version__",
]

# Keep in sync with pyproject.toml
__version__ = "0.1.0"
