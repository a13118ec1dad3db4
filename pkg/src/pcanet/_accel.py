"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``PCANET_NUMBA`` is not set to ``0``.  Both paths are always
importable under explicit names (``*_numba`` / ``*_numpy``) so the
benchmark and the parity tests can compare them in one process.
"""
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def numba_enabled():
    flag = os.environ.get("PCANET_NUMBA", "1").strip().lower()
    return HAS_NUMBA and flag not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# harmonic-mean face coefficients for the 5-point variable-coefficient stencil
# ---------------------------------------------------------------------------

def harmonic_faces_numpy(a):
    """Face coefficients of a (p, p) nodal coefficient array.

    Boundary nodes take the value of the adjacent interior node.  Returns
    ``ax`` of shape (p+1, p) and ``ay`` of shape (p, p+1).
    """
    ae = np.pad(a, 1, mode="edge")
    left, right = ae[:-1, 1:-1], ae[1:, 1:-1]
    ax = 2.0 * left * right / (left + right)
    down, up = ae[1:-1, :-1], ae[1:-1, 1:]
    ay = 2.0 * down * up / (down + up)
    return ax, ay


@njit(cache=True)
def harmonic_faces_numba(a):
    p = a.shape[0]
    ax = np.empty((p + 1, p))
    ay = np.empty((p, p + 1))
    for i in range(p + 1):
        il = max(i - 1, 0)
        ir = min(i, p - 1)
        for j in range(p):
            l = a[il, j]
            r = a[ir, j]
            ax[i, j] = 2.0 * l * r / (l + r)
    for i in range(p):
        for j in range(p + 1):
            jd = max(j - 1, 0)
            ju = min(j, p - 1)
            d = a[i, jd]
            u = a[i, ju]
            ay[i, j] = 2.0 * d * u / (d + u)
    return ax, ay


# ---------------------------------------------------------------------------
# stencil application  (A_h w)_ij = -div(a grad w) with zero Dirichlet data
# ---------------------------------------------------------------------------

def stencil_apply_numpy(w, ax, ay, h):
    we = np.pad(w, 1)
    fx = ax * (we[1:, 1:-1] - we[:-1, 1:-1])
    fy = ay * (we[1:-1, 1:] - we[1:-1, :-1])
    return -((fx[1:, :] - fx[:-1, :]) + (fy[:, 1:] - fy[:, :-1])) / (h * h)


@njit(cache=True)
def stencil_apply_numba(w, ax, ay, h):
    p = w.shape[0]
    out = np.empty_like(w)
    inv = 1.0 / (h * h)
    for i in range(p):
        for j in range(p):
            c = w[i, j]
            e = w[i + 1, j] if i + 1 < p else 0.0
            o = w[i - 1, j] if i > 0 else 0.0
            n = w[i, j + 1] if j + 1 < p else 0.0
            s = w[i, j - 1] if j > 0 else 0.0
            out[i, j] = inv * (ax[i + 1, j] * (c - e) + ax[i, j] * (c - o)
                               + ay[i, j + 1] * (c - n) + ay[i, j] * (c - s))
    return out


# ---------------------------------------------------------------------------
# conjugate gradients on the stencil operator
# ---------------------------------------------------------------------------

def cg_numpy(f, ax, ay, h, rtol, maxiter):
    x = np.zeros_like(f)
    r = f.copy()
    d = r.copy()
    rr = float(np.sum(r * r))
    fnorm = np.sqrt(float(np.sum(f * f)))
    if fnorm == 0.0:
        return x, 0, 0.0
    it = 0
    while np.sqrt(rr) > rtol * fnorm and it < maxiter:
        q = stencil_apply_numpy(d, ax, ay, h)
        alpha = rr / float(np.sum(d * q))
        x += alpha * d
        r -= alpha * q
        rr_new = float(np.sum(r * r))
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1
    return x, it, np.sqrt(rr) / fnorm


@njit(cache=True)
def cg_numba(f, ax, ay, h, rtol, maxiter):
    x = np.zeros_like(f)
    r = f.copy()
    d = r.copy()
    rr = np.sum(r * r)
    fnorm = np.sqrt(np.sum(f * f))
    if fnorm == 0.0:
        return x, 0, 0.0
    it = 0
    while np.sqrt(rr) > rtol * fnorm and it < maxiter:
        q = stencil_apply_numba(d, ax, ay, h)
        alpha = rr / np.sum(d * q)
        x += alpha * d
        r -= alpha * q
        rr_new = np.sum(r * r)
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1
    return x, it, np.sqrt(rr) / fnorm


# ---------------------------------------------------------------------------
# weighted face energy  sum_faces a_f (w_+ - w_-)^2, boundary values zero
# ---------------------------------------------------------------------------

def face_energy_numpy(w, ax, ay):
    we = np.pad(w, 1)
    dx = we[1:, 1:-1] - we[:-1, 1:-1]
    dy = we[1:-1, 1:] - we[1:-1, :-1]
    return float(np.sum(ax * dx * dx) + np.sum(ay * dy * dy))


@njit(cache=True)
def face_energy_numba(w, ax, ay):
    p = w.shape[0]
    acc = 0.0
    for i in range(p + 1):
        for j in range(p):
            hi = w[i, j] if i < p else 0.0
            lo = w[i - 1, j] if i > 0 else 0.0
            acc += ax[i, j] * (hi - lo) ** 2
    for i in range(p):
        for j in range(p + 1):
            hi = w[i, j] if j < p else 0.0
            lo = w[i, j - 1] if j > 0 else 0.0
            acc += ay[i, j] * (hi - lo) ** 2
    return acc


# ---------------------------------------------------------------------------
# sawtooth approximation of t**2 on [0, 1]: t - sum_s g_s(t) / 4**s
# ---------------------------------------------------------------------------

def sawtooth_square_numpy(t, m):
    t = np.asarray(t, dtype=np.float64)
    g = t.copy()
    f = t.copy()
    for s in range(1, m + 1):
        g = np.where(g < 0.5, 2.0 * g, 2.0 - 2.0 * g)
        f = f - g / 4.0 ** s
    return f


@njit(cache=True)
def _sawtooth_square_flat(t, m):
    out = np.empty_like(t)
    for i in range(t.size):
        g = t[i]
        f = t[i]
        scale = 1.0
        for _ in range(m):
            g = 2.0 * g if g < 0.5 else 2.0 - 2.0 * g
            scale *= 0.25
            f -= g * scale
        out[i] = f
    return out


def sawtooth_square_numba(t, m):
    t = np.ascontiguousarray(t, dtype=np.float64)
    return _sawtooth_square_flat(t.ravel(), int(m)).reshape(t.shape)


def _pick(name):
    return globals()[name + ("_numba" if numba_enabled() else "_numpy")]


def harmonic_faces(a):
    return _pick("harmonic_faces")(np.ascontiguousarray(a, dtype=np.float64))


def stencil_apply(w, ax, ay, h):
    return _pick("stencil_apply")(np.ascontiguousarray(w, dtype=np.float64), ax, ay, float(h))


def cg(f, ax, ay, h, rtol=1e-10, maxiter=10000):
    f = np.ascontiguousarray(f, dtype=np.float64)
    x, it, rel = _pick("cg")(f, ax, ay, float(h), float(rtol), int(maxiter))
    return x, int(it), float(rel)


def face_energy(w, ax, ay):
    return float(_pick("face_energy")(np.ascontiguousarray(w, dtype=np.float64), ax, ay))


def sawtooth_square(t, m):
    return _pick("sawtooth_square")(t, int(m))
