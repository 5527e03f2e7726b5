"""Scene synthesis from a single RGB-D view at desk scale.

A point cloud lifted from one input view is re-rendered into new camera
poses with a soft z-buffer splat; missing regions are completed by an
order-aware autoregressive model over a quantized patch codebook, and
completed views are lifted back into the shared cloud so that every later
render of the same scene is 3D-consistent.
"""

__version__ = "0.1.0"
