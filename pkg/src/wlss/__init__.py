"""Source separation trained with weakly labelled data only.

A sound event detection network mines anchor segments from tag-only clips;
a condition-injected U-Net learns to separate mixtures of anchor segments
without ever seeing clean isolated sources.  Everything runs on a small
float64 numpy autodiff engine; quality is measured with SDR/SIR/SAR.
"""

__version__ = "0.1.0"
