"""Composite two overlapping Gaussians and look at what the renderer returns.

A half-transparent white Gaussian sits in front of an opaque black one, both on
the optical axis. At the center pixel the front one covers half the light and the
back one (alpha clamped to 0.999) takes almost all of the rest.

    python demos/render_two_gaussians.py
"""

import numpy as np

from streetsplat.render import GaussianSet, render, render_backward
from streetsplat.scene_io import CameraModel

cam = CameraModel(fx=20.0, fy=20.0, cx=7.0, cy=7.0, w2c=np.eye(4), width=15, height=15, near=0.5, far=100.0)
pair = GaussianSet(
    means=np.array([[0.0, 0.0, 3.0], [0.0, 0.0, 5.0]]),
    opacities=np.array([0.5, 1.0]),
    scales=np.full((2, 3), 0.05),
    quats=np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]]),
    colors=np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]),
)

out = render(pair, cam, background=(0.0, 0.0, 1.0))
print("center color ", out.color[7, 7])
print("center alpha ", round(float(out.alpha[7, 7]), 6))
# alpha-normalized depth: (0.5*3 + 0.5*0.999*5) / (0.5 + 0.5*0.999)
print("center depth ", round(float(out.depth[7, 7]), 6))
print("corner color ", out.color[0, 0], "(background)")

# d(center red)/d(opacity): a plain linear read-out of one pixel
probe = np.zeros((15, 15, 3))
probe[7, 7, 0] = 1.0
grads = render_backward(pair, cam, (0.0, 0.0, 1.0), probe)
print("d red / d opacity", grads["opacities"])
