"""Joint autoregressive modeling of human video and 3D human motion, desk scale.

The package provides:
  * a surrogate parametric body (forward kinematics + linear blend skinning),
  * procedural motion generation and a velocity/prefix-sum codec,
  * a VQ motion tokenizer with temporal expansion and four expert decoders,
  * a synthetic renderer plus a toy patch-VQ video tokenizer,
  * a single transformer that generates video+motion from an image (i2vm)
    and captures motion from video (v2m) over interleaved token sequences,
  * motion-capture metrics (MPJPE, PA-MPJPE, PVE, Accel, FID, DIV),
  * a CLI covering data generation, two-stage training, evaluation and sweeps.
"""

__version__ = "0.1.0"
