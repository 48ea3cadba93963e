"""Independent reference implementations used only by the tests."""

import math

import numpy as np


def naive_kf_update(x, P, i, j, z_body, yaw_i, N_body, odo_i, odo_j):
    """Textbook linear KF with an explicit dense H and a full matrix inverse."""
    n3 = len(x)
    c, s = math.cos(yaw_i), math.sin(yaw_i)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])  # body -> world
    z = np.array(odo_i) + Rz @ np.array(z_body) - np.array(odo_j)
    Nw = Rz @ N_body @ Rz.T
    H = np.zeros((3, n3))
    H[:, 3 * i:3 * i + 3] = -np.eye(3)
    H[:, 3 * j:3 * j + 3] = np.eye(3)
    S = H @ P @ H.T + Nw
    K = P @ H.T @ np.linalg.inv(S)
    x_new = x + K @ (z - H @ x)
    P_new = (np.eye(n3) - K @ H) @ P
    return x_new, P_new, S


def random_psd(rng, dim, scale=1.0, rank=None):
    rank = dim if rank is None else rank
    A = rng.normal(size=(dim, rank)) * scale
    return A @ A.T / rank


def segment_cells_bruteforce(grid_origin, res, dims, a, b):
    """All cells whose closed square touches the closed segment a-b (shapely)."""
    from shapely.geometry import LineString, box

    seg = LineString([tuple(a), tuple(b)]) if tuple(a) != tuple(b) else None
    out = set()
    ox, oy = grid_origin
    for ix in range(dims[0]):
        for iy in range(dims[1]):
            cell = box(ox + ix * res, oy + iy * res, ox + (ix + 1) * res, oy + (iy + 1) * res)
            if seg is None:
                from shapely.geometry import Point

                hit = cell.intersects(Point(a))
            else:
                hit = cell.intersects(seg)
            if hit:
                out.add((ix, iy))
    return out
