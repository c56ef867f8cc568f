"""Hot inner loops, compiled with numba unless ``EFMQC_BACKEND=numpy``.

Two kernels dominate trajectory-ensemble runtime:

* ``rk4_electronic`` -- fixed-substep RK4 for the electronic coefficients of
  every trajectory, with linear interpolation of the adiabatic inputs across
  the nuclear step.  The quantum-momentum term is nonlinear in the
  coefficients (it carries the instantaneous populations), so the stage
  populations are recomputed inside each RK4 stage.
* ``qmom0_centers`` -- the O(N^2) Gaussian-weighted neighbor mean used by the
  coupled-trajectory quantum momentum.

Each kernel exists as ``*_np`` (pure numpy) and ``*_nb`` (numba); the public
names are bound at import time from :mod:`efmqc.backend`.
"""

import numpy as np

from efmqc.backend import USE_NUMBA

if USE_NUMBA:
    from numba import njit


def _electronic_deriv_np(coeffs, e, vd, xf):
    pops = np.abs(coeffs) ** 2
    dc = -1j * e * coeffs
    dc -= np.einsum("nlk,nk->nl", vd, coeffs)
    dc += np.einsum("nlk,nk->nl", xf, pops) * coeffs
    return dc


def rk4_electronic_np(coeffs, e0, e1, vd0, vd1, xf0, xf1, dt, nsub):
    """Advance coefficients over one nuclear step of length ``dt``.

    Inputs at the start (``*0``) and end (``*1``) of the step are linearly
    interpolated onto the RK4 stage times. Shapes: ``coeffs (N, ns)``,
    ``e (N, ns)``, ``vd``/``xf`` ``(N, ns, ns)``.
    """
    c = coeffs.copy()
    h = dt / nsub
    de, dvd, dxf = e1 - e0, vd1 - vd0, xf1 - xf0
    for i in range(nsub):
        s0 = i / nsub
        sh = (i + 0.5) / nsub
        s1 = (i + 1.0) / nsub
        ea, vda, xfa = e0 + s0 * de, vd0 + s0 * dvd, xf0 + s0 * dxf
        eb, vdb, xfb = e0 + sh * de, vd0 + sh * dvd, xf0 + sh * dxf
        ec, vdc, xfc = e0 + s1 * de, vd0 + s1 * dvd, xf0 + s1 * dxf
        k1 = _electronic_deriv_np(c, ea, vda, xfa)
        k2 = _electronic_deriv_np(c + 0.5 * h * k1, eb, vdb, xfb)
        k3 = _electronic_deriv_np(c + 0.5 * h * k2, eb, vdb, xfb)
        k4 = _electronic_deriv_np(c + h * k3, ec, vdc, xfc)
        c += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return c


def qmom0_centers_np(pos, sigma):
    """Gaussian-weighted neighbor mean of every trajectory position.

    ``pos (N, D)``, ``sigma (D,)``. Returns ``(centers (N, D), n_underflow)``
    where ``n_underflow`` counts pair weights that underflowed to zero.
    """
    d = pos[:, None, :] - pos[None, :, :]
    w = np.exp(-np.sum(d * d / (2.0 * sigma**2), axis=2))
    n_under = int(np.count_nonzero(w == 0.0))
    centers = (w @ pos) / np.sum(w, axis=1)[:, None]
    return centers, n_under


if USE_NUMBA:

    @njit(cache=True)
    def _rk4_electronic_nb(coeffs, e0, e1, vd0, vd1, xf0, xf1, dt, nsub):
        n, ns = coeffs.shape
        out = coeffs.copy()
        h = dt / nsub
        c = np.empty(ns, dtype=np.complex128)
        cs = np.empty(ns, dtype=np.complex128)
        ks = np.empty((4, ns), dtype=np.complex128)
        e = np.empty(ns)
        vd = np.empty((ns, ns))
        xf = np.empty((ns, ns))
        stage_s = np.empty(4)
        for a in range(n):
            for l in range(ns):
                c[l] = out[a, l]
            for i in range(nsub):
                stage_s[0] = i / nsub
                stage_s[1] = (i + 0.5) / nsub
                stage_s[2] = stage_s[1]
                stage_s[3] = (i + 1.0) / nsub
                for st in range(4):
                    s = stage_s[st]
                    for l in range(ns):
                        e[l] = e0[a, l] + s * (e1[a, l] - e0[a, l])
                        for k in range(ns):
                            vd[l, k] = vd0[a, l, k] + s * (vd1[a, l, k] - vd0[a, l, k])
                            xf[l, k] = xf0[a, l, k] + s * (xf1[a, l, k] - xf0[a, l, k])
                    if st == 0:
                        for l in range(ns):
                            cs[l] = c[l]
                    elif st == 1:
                        for l in range(ns):
                            cs[l] = c[l] + 0.5 * h * ks[0, l]
                    elif st == 2:
                        for l in range(ns):
                            cs[l] = c[l] + 0.5 * h * ks[1, l]
                    else:
                        for l in range(ns):
                            cs[l] = c[l] + h * ks[2, l]
                    for l in range(ns):
                        acc = -1j * e[l] * cs[l]
                        xfr = 0.0
                        for k in range(ns):
                            acc -= vd[l, k] * cs[k]
                            xfr += xf[l, k] * (cs[k].real ** 2 + cs[k].imag ** 2)
                        ks[st, l] = acc + xfr * cs[l]
                for l in range(ns):
                    c[l] += (h / 6.0) * (ks[0, l] + 2.0 * ks[1, l] + 2.0 * ks[2, l] + ks[3, l])
            for l in range(ns):
                out[a, l] = c[l]
        return out

    @njit(cache=True)
    def _qmom0_centers_nb(pos, sigma):
        n, ndof = pos.shape
        centers = np.empty((n, ndof))
        inv2s2 = 0.5 / (sigma * sigma)
        n_under = 0
        for a in range(n):
            wsum = 0.0
            acc = np.zeros(ndof)
            for b in range(n):
                arg = 0.0
                for v in range(ndof):
                    d = pos[a, v] - pos[b, v]
                    arg += d * d * inv2s2[v]
                w = np.exp(-arg)
                if w == 0.0:
                    n_under += 1
                wsum += w
                for v in range(ndof):
                    acc[v] += w * pos[b, v]
            for v in range(ndof):
                centers[a, v] = acc[v] / wsum
        return centers, n_under

    def rk4_electronic(coeffs, e0, e1, vd0, vd1, xf0, xf1, dt, nsub):
        return _rk4_electronic_nb(
            np.ascontiguousarray(coeffs),
            np.ascontiguousarray(e0), np.ascontiguousarray(e1),
            np.ascontiguousarray(vd0), np.ascontiguousarray(vd1),
            np.ascontiguousarray(xf0), np.ascontiguousarray(xf1),
            float(dt), int(nsub),
        )

    def qmom0_centers(pos, sigma):
        return _qmom0_centers_nb(np.ascontiguousarray(pos), np.ascontiguousarray(sigma))

else:
    rk4_electronic = rk4_electronic_np
    qmom0_centers = qmom0_centers_np
