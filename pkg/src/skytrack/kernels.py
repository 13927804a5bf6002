"""Hot numeric kernels.

Each kernel has a numba ``@njit`` build and a pure-numpy fallback. The
fallback is selected when numba is unavailable or when the environment
variable ``SKYTRACK_NUMBA=0`` is set (useful for debugging and for the
benchmark in benchmarks/bench_kernels.py). Both paths use the same
first-occurrence tie-break and agree to float tolerance; tests compare
them directly.
"""
from __future__ import annotations

import os

import numpy as np

_EPS = 1e-12


def _numba_enabled() -> bool:
    if os.environ.get("SKYTRACK_NUMBA", "1") == "0":
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def ncc_search_numpy(window: np.ndarray, template: np.ndarray) -> tuple[int, int, float]:
    """Exhaustive normalized cross-correlation of ``template`` over ``window``.

    Returns (dy, dx, best_ncc): the top-left placement of the best match
    inside the window and its NCC score in [-1, 1].
    """
    window = np.asarray(window, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    th, tw = template.shape
    t = template - template.mean()
    tnorm = np.sqrt((t * t).sum())
    views = np.lib.stride_tricks.sliding_window_view(window, (th, tw))
    means = views.mean(axis=(2, 3))
    cross = np.einsum("ijkl,kl->ij", views, t)
    sq = np.einsum("ijkl,ijkl->ij", views, views)
    n = th * tw
    wnorm = np.sqrt(np.maximum(sq - n * means * means, 0.0))
    scores = cross / (wnorm * tnorm + _EPS)
    idx = int(np.argmax(scores))
    dy, dx = divmod(idx, scores.shape[1])
    return dy, dx, float(scores[dy, dx])


if _numba_enabled():
    from numba import njit

    @njit(cache=True)
    def _ncc_search_jit(window, template):  # pragma: no cover - exercised via wrapper
        th, tw = template.shape
        wh, ww = window.shape
        tmean = 0.0
        for i in range(th):
            for j in range(tw):
                tmean += template[i, j]
        n = th * tw
        tmean /= n
        tnorm = 0.0
        for i in range(th):
            for j in range(tw):
                d = template[i, j] - tmean
                tnorm += d * d
        tnorm = np.sqrt(tnorm)
        best_dy, best_dx, best = 0, 0, -2.0
        for oy in range(wh - th + 1):
            for ox in range(ww - tw + 1):
                s = 0.0
                sq = 0.0
                cross = 0.0
                for i in range(th):
                    for j in range(tw):
                        v = window[oy + i, ox + j]
                        s += v
                        sq += v * v
                        cross += v * (template[i, j] - tmean)
                wmean = s / n
                wvar = sq - n * wmean * wmean
                if wvar < 0.0:
                    wvar = 0.0
                score = cross / (np.sqrt(wvar) * tnorm + _EPS)
                if score > best:
                    best = score
                    best_dy, best_dx = oy, ox
        return best_dy, best_dx, best

    def ncc_search(window: np.ndarray, template: np.ndarray) -> tuple[int, int, float]:
        dy, dx, score = _ncc_search_jit(
            np.ascontiguousarray(window, dtype=np.float64),
            np.ascontiguousarray(template, dtype=np.float64),
        )
        return int(dy), int(dx), float(score)

    USING_NUMBA = True
else:
    ncc_search = ncc_search_numpy
    USING_NUMBA = False
