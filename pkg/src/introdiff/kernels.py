"""Forward-Euler time-stepping kernels for the diffusion dynamics.

These inner loops dominate the runtime of a fit (one solve per MCMC
proposal), so they are compiled with numba when available.  Setting the
environment variable ``INTRODIFF_DISABLE_NUMBA=1`` before import selects the
pure-numpy path instead; both paths perform the identical floating-point
operations in the identical order, so results are bit-for-bit equal.

Two steppers are provided:

``run_coarse``
    Upscaled dynamics ``dc/dt = mu_bar * lap(c) + lam_bar * c`` on the coarse
    grid (the rate multiplies the Laplacian of the already-scaled field).

``run_fine``
    Direct fine-grid dynamics ``du/dt = lap(mu * u) + lam * u`` with the
    Laplacian applied to the product field.

Cells where ``active`` is False (outside the study area, or on the outermost
ring) are pinned to zero every step.  Both return ``(frames, status)`` where
``frames[0]`` is the clamped initial state, one frame is saved every
``save_stride`` steps, and ``status`` is -1 on success or the 1-based index
of the first step that produced a non-finite value.
"""

from __future__ import annotations

import os

import numpy as np

DISABLE_NUMBA = os.environ.get("INTRODIFF_DISABLE_NUMBA", "0") == "1"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False


def _run_coarse_py(c0, mu, lam, active, dt, inv_h2, n_steps, save_stride):
    nr, nc = c0.shape
    n_frames = n_steps // save_stride + 1
    frames = np.zeros((n_frames, nr, nc))
    c = np.where(active, c0, 0.0)
    frames[0] = c
    status = -1
    for s in range(n_steps):
        lap = (
            c[:-2, 1:-1]
            + c[2:, 1:-1]
            + c[1:-1, :-2]
            + c[1:-1, 2:]
            - 4.0 * c[1:-1, 1:-1]
        ) * inv_h2
        cn = np.zeros_like(c)
        cn[1:-1, 1:-1] = c[1:-1, 1:-1] + dt * (
            mu[1:-1, 1:-1] * lap + lam[1:-1, 1:-1] * c[1:-1, 1:-1]
        )
        cn[~active] = 0.0
        c = cn
        if (s + 1) % save_stride == 0:
            if not np.isfinite(c).all():
                return frames, s + 1
            frames[(s + 1) // save_stride] = c
    return frames, status


def _run_fine_py(u0, mu, lam, active, dt, inv_h2, n_steps, save_stride):
    nr, nc = u0.shape
    n_frames = n_steps // save_stride + 1
    frames = np.zeros((n_frames, nr, nc))
    u = np.where(active, u0, 0.0)
    frames[0] = u
    status = -1
    for s in range(n_steps):
        g = mu * u
        lap = (
            g[:-2, 1:-1]
            + g[2:, 1:-1]
            + g[1:-1, :-2]
            + g[1:-1, 2:]
            - 4.0 * g[1:-1, 1:-1]
        ) * inv_h2
        un = np.zeros_like(u)
        un[1:-1, 1:-1] = u[1:-1, 1:-1] + dt * (lap + lam[1:-1, 1:-1] * u[1:-1, 1:-1])
        un[~active] = 0.0
        u = un
        if (s + 1) % save_stride == 0:
            if not np.isfinite(u).all():
                return frames, s + 1
            frames[(s + 1) // save_stride] = u
    return frames, status


if HAS_NUMBA:

    @njit(cache=True)
    def _coarse_loop(frames, c, cn, mu, lam, active, dt, inv_h2, n_steps, save_stride):
        nr, nc = c.shape
        for s in range(n_steps):
            for i in range(1, nr - 1):
                for j in range(1, nc - 1):
                    if active[i, j]:
                        lap = (
                            c[i - 1, j]
                            + c[i + 1, j]
                            + c[i, j - 1]
                            + c[i, j + 1]
                            - 4.0 * c[i, j]
                        ) * inv_h2
                        cn[i, j] = c[i, j] + dt * (mu[i, j] * lap + lam[i, j] * c[i, j])
                    else:
                        cn[i, j] = 0.0
            c, cn = cn, c
            if (s + 1) % save_stride == 0:
                ok = True
                for i in range(nr):
                    for j in range(nc):
                        if not np.isfinite(c[i, j]):
                            ok = False
                if not ok:
                    return s + 1
                frames[(s + 1) // save_stride] = c
        return -1

    @njit(cache=True)
    def _fine_loop(frames, u, un, g, mu, lam, active, dt, inv_h2, n_steps, save_stride):
        nr, nc = u.shape
        for s in range(n_steps):
            for i in range(nr):
                for j in range(nc):
                    g[i, j] = mu[i, j] * u[i, j]
            for i in range(1, nr - 1):
                for j in range(1, nc - 1):
                    if active[i, j]:
                        lap = (
                            g[i - 1, j]
                            + g[i + 1, j]
                            + g[i, j - 1]
                            + g[i, j + 1]
                            - 4.0 * g[i, j]
                        ) * inv_h2
                        un[i, j] = u[i, j] + dt * (lap + lam[i, j] * u[i, j])
                    else:
                        un[i, j] = 0.0
            u, un = un, u
            if (s + 1) % save_stride == 0:
                ok = True
                for i in range(nr):
                    for j in range(nc):
                        if not np.isfinite(u[i, j]):
                            ok = False
                if not ok:
                    return s + 1
                frames[(s + 1) // save_stride] = u
        return -1

    def _run_coarse_nb(c0, mu, lam, active, dt, inv_h2, n_steps, save_stride):
        nr, nc = c0.shape
        frames = np.zeros((n_steps // save_stride + 1, nr, nc))
        c = np.where(active, c0, 0.0)
        frames[0] = c
        if n_steps == 0:
            return frames, -1
        cn = np.zeros_like(c)
        status = _coarse_loop(
            frames, c, cn, mu, lam, active, dt, inv_h2, n_steps, save_stride
        )
        return frames, status

    def _run_fine_nb(u0, mu, lam, active, dt, inv_h2, n_steps, save_stride):
        nr, nc = u0.shape
        frames = np.zeros((n_steps // save_stride + 1, nr, nc))
        u = np.where(active, u0, 0.0)
        frames[0] = u
        if n_steps == 0:
            return frames, -1
        un = np.zeros_like(u)
        g = np.zeros_like(u)
        status = _fine_loop(
            frames, u, un, g, mu, lam, active, dt, inv_h2, n_steps, save_stride
        )
        return frames, status


if HAS_NUMBA and not DISABLE_NUMBA:
    BACKEND = "numba"
    run_coarse = _run_coarse_nb
    run_fine = _run_fine_nb
else:
    BACKEND = "numpy"
    run_coarse = _run_coarse_py
    run_fine = _run_fine_py


def backends() -> dict[str, tuple]:
    """All available (run_coarse, run_fine) pairs, keyed by backend name."""
    out = {"numpy": (_run_coarse_py, _run_fine_py)}
    if HAS_NUMBA:
        out["numba"] = (_run_coarse_nb, _run_fine_nb)
    return out
