"""Field interpolation over the parameter space.

Precomputed fields (convection velocities in the pipeline) are projected
on their own orthogonal basis and the reduced coordinates are
interpolated with radial basis functions, so a field can be produced for
parameter points that were never solved.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RBFInterpolator


def pod_rbf_interpolate(training_fields, training_params, query) -> np.ndarray:
    """Interpolate a field at a new parameter point.

    Parameters
    ----------
    training_fields : (dim, m) array
        One column per training field.
    training_params : (m, p) array
        Parameter coordinates of the training fields; must be pairwise
        distinct.
    query : (p,) array
        Parameter point to evaluate.

    Returns
    -------
    (dim,) array.  Training points reproduce their own field (thin-plate
    splines interpolate), and fields depending linearly on the parameters
    are reproduced exactly through the polynomial tail.
    """
    fields = np.atleast_2d(np.asarray(training_fields, dtype=np.float64))
    pts = np.atleast_2d(np.asarray(training_params, dtype=np.float64))
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    m = fields.shape[1]
    if m < 2:
        raise ValueError("need at least two training fields")
    if pts.shape[0] != m:
        raise ValueError(f"{m} fields but {pts.shape[0]} parameter points")
    if query.shape[0] != pts.shape[1]:
        raise ValueError(f"query has {query.shape[0]} coordinates, expected {pts.shape[1]}")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    if np.min(dist[~np.eye(m, dtype=bool)]) == 0.0:
        raise ValueError("training parameter points must be pairwise distinct")

    u, s, vt = np.linalg.svd(fields, full_matrices=False)
    keep = s > s[0] * 1e-13 if s[0] > 0 else s > -1
    u = u[:, keep]
    coords = (s[keep, None] * vt[keep]).T  # (m, r) reduced coordinates

    # the thin-plate kernel needs a degree-1 tail, which needs p+1 points
    if m >= pts.shape[1] + 1:
        rbf = RBFInterpolator(pts, coords, kernel="thin_plate_spline", degree=1)
    else:
        rbf = RBFInterpolator(pts, coords, kernel="linear", degree=0)
    return u @ rbf(query[None, :])[0]
