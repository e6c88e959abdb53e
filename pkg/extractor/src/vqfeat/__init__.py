"""Feature extraction for blind video quality assessment.

Decodes videos, runs the spatial (residual-50) and motion (fast-pathway 3D)
backbones, pools activations to (T, 4096) and (ceil(T/2), 512) sequences,
and writes them in the interchange tensor/manifest formats the training
package consumes. Also hosts the pairwise quality-aware pre-training of the
spatial backbone.
"""

__version__ = "0.1.0"
