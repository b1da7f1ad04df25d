"""Projection onto an l2 ball around the noisy input.

The ball radius is tied to the noise level through a single trainable
log-scale parameter alpha:

    radius(alpha, sigma, n) = exp(alpha) * sigma * sqrt(n - 1)

which for alpha = 0 matches the expected noise norm on n pixels.  The
projection itself is the usual radial rescale

    project(v) = y + r * radius / max(||r||, radius),   r = v - y.

Both backward passes share one convention at the ball surface
||r|| == radius: the point counts as interior, so the input gradient is
the identity and the alpha gradient is exactly zero.  The exterior input
gradient scales by radius/||r|| and removes the radial component; the
exterior alpha gradient is (radius/||r||) <r, grad_q> because the radius
itself has derivative radius w.r.t. alpha.
"""

import math

import numpy as np

from .errors import BadArgument, ShapeMismatch

__all__ = [
    "ball_radius",
    "project",
    "project_input_backward",
    "project_param_backward",
]


def ball_radius(alpha, sigma, n_total):
    if not sigma > 0:
        raise BadArgument("sigma must be positive")
    if n_total < 2:
        raise BadArgument("need at least two samples for a noise radius")
    return math.exp(float(alpha)) * sigma * math.sqrt(n_total - 1)


def _residual(v, y):
    v = np.asarray(v)
    y = np.asarray(y)
    if v.shape != y.shape:
        raise ShapeMismatch("point and center shapes differ")
    r = v - y
    return r, float(np.linalg.norm(r))


def project(v, y, radius):
    """Nearest point to v inside the ball of the given radius around y."""
    if not radius > 0:
        raise BadArgument("radius must be positive")
    r, n = _residual(v, y)
    return y + (radius / max(n, radius)) * r


def project_input_backward(v, y, radius, grad_q):
    """Gradient of <project(v), grad_q> w.r.t. v."""
    if not radius > 0:
        raise BadArgument("radius must be positive")
    r, n = _residual(v, y)
    grad_q = np.asarray(grad_q)
    if grad_q.shape != r.shape:
        raise ShapeMismatch("cotangent shape does not match point")
    scale = radius / max(n, radius)
    if n <= radius:
        # interior (surface included): projection is locally the identity,
        # and scale == 1.0 exactly
        return scale * grad_q
    return scale * (grad_q - (float(np.vdot(r, grad_q)) / (n * n)) * r)


def project_param_backward(v, y, radius, grad_q):
    """Gradient of <project(v), grad_q> w.r.t. alpha (the log radius scale)."""
    if not radius > 0:
        raise BadArgument("radius must be positive")
    r, n = _residual(v, y)
    grad_q = np.asarray(grad_q)
    if grad_q.shape != r.shape:
        raise ShapeMismatch("cotangent shape does not match point")
    if n <= radius:
        return 0.0
    return (radius / n) * float(np.vdot(r, grad_q))
