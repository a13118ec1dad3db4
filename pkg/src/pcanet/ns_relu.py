"""ReLU-network emulation of the spectral Navier-Stokes step.

Products are realized with the polarization identity
``xy = ((x+y)^2 - x^2 - y^2)/2`` and the sawtooth approximation of the
square on [0, 1],

    f_m(t) = t - sum_{s=1..m} g_s(t) / 4^s,    g_s = tent o ... o tent (s times),

which interpolates t^2 at the nodes j 2^-m and overestimates it by at most
2^(-2m-2).  With t1 = (x+y)/S, t2 = x/M, t3 = y/L and S = M + L the
one-sided errors give |x y - xy_m| <= S^2 / 2^(2m+3) on [-M, M] x [-L, L].

The emulated nonlinearity evaluates point values of u and grad v on the
dealiased grid with an exact linear map, applies a bank of product networks
pointwise, sums, and maps back with an exact (truncation + Leray) linear map.
Every object here has two evaluation paths: an arithmetic one (FFTs plus the
closed-form sawtooth) used by the time stepper, and the materialized ReLU
network built from sparse weight matrices.
"""
from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp

from . import _accel
from .nn import Mlp, forward
from . import spectral_ns as ns

# nonzero count of the product net is at most 24m + 22 <= 46m for every m >= 1
PRODUCT_SIZE_CONSTANT = 46


def product_error_bound(m, M, L):
    """Construction bound S^2 / 2^(2m+3) with S = M + L."""
    return (M + L) ** 2 / 2.0 ** (2 * m + 3)


def drm_bound(m, M, L):
    """The product-network accuracy (M + L) / 2^(m+1)."""
    return (M + L) / 2.0 ** (m + 1)


def _eye(n):
    return sp.identity(n, format="csr", dtype=np.float64)


def _diag(v):
    return sp.diags(np.asarray(v, dtype=np.float64), format="csr")


def _csr(a):
    return sp.csr_matrix(a, dtype=np.float64)


def bank_layers(t_map, scales, m):
    """Hidden layers and output map of a bank of P product networks.

    ``t_map`` (3P x n_in) produces the arguments [t1; t2; t3] from the layer
    input, ``scales`` (3P,) are the output weights [S^2/2, -M^2/2, -L^2/2].
    Returns ``(layers, out)``: a list of (W, b) for the m hidden layers and
    the sparse (P x width) matrix reading the products off the last layer.
    """
    t_map = _csr(t_map)
    u = t_map.shape[0]
    p = u // 3
    eye = _eye(u)
    zero_b, half_b = np.zeros(u), np.full(u, -0.5)
    layers = [(sp.vstack([t_map, -t_map, t_map, -t_map], format="csr"),
               np.concatenate([zero_b, zero_b, half_b, half_b]))]
    if m == 1:
        fsel = sp.hstack([0.5 * eye, 0.5 * eye, eye, eye], format="csr")
    else:
        g = sp.hstack([2 * eye, 2 * eye, -4 * eye, -4 * eye])
        f = sp.hstack([0.5 * eye, 0.5 * eye, eye, eye])
        layers.append((sp.vstack([g, g, f], format="csr"), np.concatenate([zero_b, half_b, zero_b])))
        for j in range(2, m):
            g = sp.hstack([2 * eye, -4 * eye, sp.csr_matrix((u, u))])
            f = sp.hstack([(-2.0 / 4 ** j) * eye, (4.0 / 4 ** j) * eye, eye])
            layers.append((sp.vstack([g, g, f], format="csr"), np.concatenate([zero_b, half_b, zero_b])))
        fsel = sp.hstack([(-2.0 / 4 ** m) * eye, (4.0 / 4 ** m) * eye, eye], format="csr")
    s = np.asarray(scales, dtype=np.float64)
    comb = sp.hstack([_diag(s[:p]), _diag(s[p:2 * p]), _diag(s[2 * p:])], format="csr")
    return layers, _csr(comb @ fsel)


def emulated_product(x, y, m, M, L):
    """Closed-form value of the product network (same arithmetic, no matrices)."""
    s = M + L
    f = _accel.sawtooth_square
    return 0.5 * (s * s * f(np.abs(x + y) / s, m) - M * M * f(np.abs(x) / M, m)
                  - L * L * f(np.abs(y) / L, m))


@dataclass(frozen=True)
class ProductNet:
    m: int
    M: float
    L: float
    net: Mlp

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = forward(self.net, np.stack([x.ravel(), y.ravel()], axis=1))
        return out[:, 0].reshape(x.shape)

    @property
    def bound(self):
        return drm_bound(self.m, self.M, self.L)

    @property
    def size_constant(self):
        return PRODUCT_SIZE_CONSTANT


def build_product_net(m, M, L):
    """ReLU network of depth m + 1 approximating xy on [-M, M] x [-L, L]."""
    if int(m) < 1 or M <= 0 or L <= 0:
        raise ValueError("need m >= 1 and positive bounds")
    m = int(m)
    s = M + L
    t_map = np.array([[1.0 / s, 1.0 / s], [1.0 / M, 0.0], [0.0, 1.0 / L]])
    layers, out = bank_layers(t_map, [0.5 * s * s, -0.5 * M * M, -0.5 * L * L], m)
    dense = [(w.toarray(), b) for w, b in layers] + [(out.toarray(), np.zeros(1))]
    return ProductNet(m, float(M), float(L), Mlp([w for w, _ in dense], [b for _, b in dense]))


def lattice_error(pnet, points=201):
    xs = np.linspace(-pnet.M, pnet.M, points)
    ys = np.linspace(-pnet.L, pnet.L, points)
    x, y = np.meshgrid(xs, ys, indexing="ij")
    return float(np.max(np.abs(pnet(x, y) - x * y)))


# ---------------------------------------------------------------------------
# exact linear blocks (real-linear maps on interleaved coefficient vectors)
# ---------------------------------------------------------------------------

def _synthesis_1d(K, n):
    x = 2.0 * math.pi * np.arange(n) / n
    return np.exp(1j * np.outer(x, np.arange(-K, K + 1)))


def _real_columns(g):
    """Real matrix R with R @ [re, im interleaved] = Re(g @ c)."""
    r = np.empty((g.shape[0], 2 * g.shape[1]))
    r[:, 0::2] = g.real
    r[:, 1::2] = -g.imag
    return r


class LinearBlocks:
    """Dense synthesis / analysis matrices for cutoff K on the (4K+1)^2 grid."""

    def __init__(self, K):
        self.K = K
        self.n = ns.dealiased_points(K)
        self.J = self.n ** 2
        self.Kc = ns.mode_count(K)
        self.D = 4 * self.Kc
        e1 = _synthesis_1d(K, self.n)
        self.E = np.kron(e1, e1)

    def synth_u(self):
        """(2J x D): coefficients of u -> [u_0(x_j); u_1(x_j)]."""
        r = _real_columns(self.E)
        z = np.zeros_like(r)
        return np.block([[r, z], [z, r]])

    def synth_grad(self):
        """(4J x D): coefficients of v -> [d_l v_i(x_j)] in (l, i) order."""
        k1, k2, _ = ns._leray_tables(self.K)
        blocks = []
        for kl in (k1, k2):
            r = _real_columns(self.E * (1j * kl.reshape(-1))[None, :])
            z = np.zeros_like(r)
            blocks.append([r, z])
            blocks.append([z, r])
        return np.block(blocks)

    def analysis(self):
        """(D x 2J): point values [w_0; w_1] -> Leray-projected interleaved coefficients."""
        a = np.conj(self.E).T / self.J
        k1, k2, inv = ns._leray_tables(self.K)
        k1, k2, inv = k1.reshape(-1), k2.reshape(-1), inv.reshape(-1)
        ks = (k1, k2)
        out = np.zeros((self.D, 2 * self.J))
        kc = self.Kc
        for i in range(2):
            for ip in range(2):
                proj = (1.0 if i == ip else 0.0) - ks[i] * ks[ip] * inv
                blk = proj[:, None] * a
                rows = slice(2 * i * kc, 2 * (i + 1) * kc)
                cols = slice(ip * self.J, (ip + 1) * self.J)
                sub = np.empty((2 * kc, self.J))
                sub[0::2] = blk.real
                sub[1::2] = blk.imag
                out[rows, cols] = sub
        return out


def fft_network_size(n):
    """Nonzero count model of a butterfly-factored length-n transform (4 n log2 n)."""
    return 4 * n * max(1, math.ceil(math.log2(max(n, 2))))


class EmulatedNonlinearity:
    """ReLU emulation of NL(u, v) for cutoff K, inputs bounded by m_bar in l2.

    The per-point product accuracy m is the smallest integer with
    S^2/2^(2m+3) <= eps / (2 sqrt(2) sqrt(|J|)), i.e. the eps budget split
    evenly over the |J| = (4K+1)^2 grid points.  ``product`` selects the
    multiplication used by the arithmetic path: "network" (the sawtooth
    product the ReLU net computes) or "exact" (oracle substitution).
    """

    kind = "emulated"

    def __init__(self, K, m_bar, eps, product="network"):
        if not 0 < eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if m_bar < 1:
            raise ValueError("m_bar must be >= 1")
        if product not in ("network", "exact"):
            raise ValueError("product must be 'network' or 'exact'")
        self.K, self.m_bar, self.eps, self.product = int(K), float(m_bar), float(eps), product
        self.n = ns.dealiased_points(self.K)
        self.J = self.n ** 2
        self.Kc = ns.mode_count(self.K)
        self.D = 4 * self.Kc
        ks = np.arange(-self.K, self.K + 1)
        self.bound_u = math.sqrt(self.Kc) * self.m_bar
        self.bound_grad = math.sqrt((2 * self.K + 1) * float(np.sum(ks ** 2))) * self.m_bar
        self.per_point_budget = self.eps / (2.0 * math.sqrt(2.0) * math.sqrt(self.J))
        s = self.bound_u + self.bound_grad
        m = 1
        while product_error_bound(m, self.bound_u, self.bound_grad) > self.per_point_budget:
            m += 1
        self.m = m
        self._blocks = None
        self._bank = None
        self._net = None
        self._s = s

    def with_product(self, product):
        return EmulatedNonlinearity(self.K, self.m_bar, self.eps, product)

    # -- arithmetic path ----------------------------------------------------
    def multiply(self, x, y):
        if self.product == "exact":
            return x * y
        return emulated_product(x, y, self.m, self.bound_u, self.bound_grad)

    def bind(self, u):
        cu = ns._coeffs(u)
        if (cu.shape[1] - 1) // 2 != self.K:
            raise ValueError("cutoff mismatch")
        ug = ns.synthesize(cu, self.n)
        return ns._Bound(ug, self.K, self.n, self._combine)

    def _combine(self, ug, grads):
        mul = self.multiply
        return mul(ug[0], grads[0]) + mul(ug[1], grads[1])

    def __call__(self, u, v):
        return ns.SpectralField(self.bind(u)(ns._coeffs(v)))

    # -- structure ----------------------------------------------------------
    @property
    def blocks(self):
        if self._blocks is None:
            self._blocks = LinearBlocks(self.K)
        return self._blocks

    def _point_layout(self):
        """Index helpers for the 6J point-value vector [u_0, u_1, dv_00, dv_01, dv_10, dv_11]."""
        J = self.J
        j = np.arange(J)
        prods = []
        for l in range(2):
            for i in range(2):
                prods.append((l * J + j, 2 * J + (2 * l + i) * J + j))
        xi = np.concatenate([a for a, _ in prods])
        yi = np.concatenate([b for _, b in prods])
        return xi, yi

    def t_map(self):
        """(3P x 6J) map from point values to the arguments t1, t2, t3 of every product."""
        xi, yi = self._point_layout()
        p = xi.size
        s, mu, mv = self._s, self.bound_u, self.bound_grad
        r = np.arange(p)
        rows = np.concatenate([r, r, p + r, 2 * p + r])
        cols = np.concatenate([xi, yi, xi, yi])
        vals = np.concatenate([np.full(p, 1 / s), np.full(p, 1 / s), np.full(p, 1 / mu), np.full(p, 1 / mv)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(3 * p, 6 * self.J))

    def sum_map(self):
        """(2J x P): w_i(x_j) = sum_l prod_(l, i, j)."""
        J = self.J
        p = 4 * J
        q = np.arange(p)
        l, rem = divmod(q, 2 * J)
        i, j = divmod(rem, J)
        return sp.csr_matrix((np.ones(p), (i * J + j, q)), shape=(2 * J, p))

    def scales(self):
        p = 4 * self.J
        s, mu, mv = self._s, self.bound_u, self.bound_grad
        return np.concatenate([np.full(p, 0.5 * s * s), np.full(p, -0.5 * mu * mu), np.full(p, -0.5 * mv * mv)])

    def bank(self, t_in):
        """Bank layers whose arguments are ``t_map() @ t_in`` applied to the layer input."""
        return bank_layers(self.t_map() @ t_in, self.scales(), self.m)

    def network(self):
        """Materialized ReLU network on [u; v] (interleaved real, length 2D)."""
        if self._net is None:
            b = self.blocks
            D, J = self.D, self.J
            w1 = sp.bmat([[_csr(b.synth_u()), None], [None, _csr(b.synth_grad())]], format="csr")
            first = (sp.vstack([w1, -w1], format="csr"), np.zeros(12 * J))
            eye6 = _eye(6 * J)
            hidden, out = self.bank(sp.hstack([eye6, -eye6], format="csr"))
            pw = _csr(self.sum_map() @ out)
            pm = (sp.vstack([pw, -pw], format="csr"), np.zeros(4 * J))
            qa = _csr(b.analysis())
            last = (sp.hstack([qa, -qa], format="csr"), np.zeros(D))
            layers = [first] + hidden + [pm, last]
            self._net = Mlp([w for w, _ in layers], [bb for _, bb in layers])
        return self._net

    def evaluate_network(self, u, v):
        z = np.concatenate([ns.SpectralField(ns._coeffs(u)).to_real(), ns.SpectralField(ns._coeffs(v)).to_real()])
        return ns.SpectralField.from_real(forward(self.network(), z), self.K)

    def evaluate_dense(self, u, v):
        """Arithmetic path through the dense linear blocks (no FFTs)."""
        b = self.blocks
        zu = ns.SpectralField(ns._coeffs(u)).to_real()
        zv = ns.SpectralField(ns._coeffs(v)).to_real()
        pu = b.synth_u() @ zu
        pg = b.synth_grad() @ zv
        J = self.J
        w = np.empty(2 * J)
        for i in range(2):
            w[i * J:(i + 1) * J] = sum(self.multiply(pu[l * J:(l + 1) * J], pg[(2 * l + i) * J:(2 * l + i + 1) * J])
                                       for l in range(2))
        return ns.SpectralField.from_real(b.analysis() @ w, self.K)

    def size(self):
        return self.network().size()

    def depth(self):
        return self.m + 3

    def bank_size(self):
        hidden, out = self.bank(sp.hstack([_eye(6 * self.J), -_eye(6 * self.J)], format="csr"))
        pw = self.sum_map() @ out
        return sum(w.nnz + np.count_nonzero(bb) for w, bb in hidden) + 2 * _csr(pw).nnz

    def factored_size(self):
        """Size with the dense transforms replaced by the butterfly count model."""
        lin = 2 * 6 * fft_network_size(self.J) + 2 * (2 * fft_network_size(self.J) + 8 * self.Kc)
        return self.bank_size() + lin


def build_nl_net(K, m_bar, eps):
    return EmulatedNonlinearity(K, m_bar, eps)


# ---------------------------------------------------------------------------
# one time step as a network, and its unrolled composition
# ---------------------------------------------------------------------------

def _interleaved(values):
    """Repeat a (2, 2K+1, 2K+1) real table to the interleaved real layout."""
    return np.repeat(np.asarray(values, dtype=np.float64).reshape(-1), 2)


class EmulatedStep:
    """psi*: u^m -> u^{m+1} by L fixed-point blocks F joined with +- junctions.

    Each F-block maps s = [u^m; w] to [u^m; F(w)] with depth m + 3, carrying
    u^m through its hidden layers as the pair (relu(u), relu(-u)).
    """

    def __init__(self, config, nl=None):
        self.config = config
        self.nl = nl if nl is not None else EmulatedNonlinearity(config.K, config.m_bar, config.eps)
        if self.nl.K != config.K:
            raise ValueError("nonlinearity cutoff does not match the run configuration")
        self._layers = None

    def _build(self):
        nl, cfg = self.nl, self.config
        b = nl.blocks
        D, J = nl.D, nl.J
        su, sg = _csr(b.synth_u()), _csr(b.synth_grad())
        eye_d = _eye(D)
        w1 = sp.bmat([[su, None], [0.5 * sg, 0.5 * sg], [eye_d, None]], format="csr")
        first_full = sp.vstack([w1, -w1], format="csr")
        first_start = _csr(first_full[:, :D])
        width1 = 6 * J + D
        eye6 = _eye(6 * J)
        t_in = sp.hstack([eye6, sp.csr_matrix((6 * J, D)), -eye6, sp.csr_matrix((6 * J, D))], format="csr")
        hidden, out = nl.bank(t_in)
        carry_first = sp.bmat([[sp.csr_matrix((D, 6 * J)), eye_d, sp.csr_matrix((D, width1))],
                               [sp.csr_matrix((D, width1)), sp.csr_matrix((D, 6 * J)), eye_d]], format="csr")
        eye2d = _eye(2 * D)
        mid = []
        for k, (w, bias) in enumerate(hidden):
            if k == 0:
                w = sp.vstack([w, carry_first], format="csr")
            else:
                w = sp.block_diag([w, eye2d], format="csr")
            mid.append((w, np.concatenate([bias, np.zeros(2 * D)])))
        pw = _csr(nl.sum_map() @ out)
        zero = sp.csr_matrix((2 * J, 2 * D))
        pm_w = sp.vstack([sp.hstack([pw, zero]), sp.hstack([-pw, zero]),
                          sp.hstack([sp.csr_matrix((2 * D, pw.shape[1])), eye2d])], format="csr")
        mid.append((pm_w, np.zeros(4 * J + 2 * D)))
        lap, inv = ns.heat_factor(cfg.K, cfg.dt, cfg.nu)
        lap = np.stack([lap, lap])
        inv = np.stack([inv, inv])
        dinv = _interleaved(inv)
        keep = _interleaved(inv * (1.0 - 0.5 * cfg.dt * cfg.nu * lap))
        dq = _csr(_diag(cfg.dt * dinv) @ _csr(b.analysis()))
        out_w = sp.bmat([[None, None, eye_d, -eye_d],
                         [-dq, dq, _diag(keep), -_diag(keep)]], format="csr")
        out_w = sp.csr_matrix(out_w)
        out_b = np.zeros(2 * D)
        self._layers = {
            "first_start": (first_start, np.zeros(first_start.shape[0])),
            "first_pm": (sp.hstack([first_full, -first_full], format="csr"), np.zeros(first_full.shape[0])),
            "mid": mid,
            "out_pm": (sp.vstack([out_w, -out_w], format="csr"), np.concatenate([out_b, -out_b])),
            "out_final": (_csr(out_w[D:]), out_b[D:].copy()),
            "out_block": (out_w, out_b),
            "first_block": (first_full, np.zeros(first_full.shape[0])),
        }

    @property
    def parts(self):
        if self._layers is None:
            self._build()
        return self._layers

    def block_network(self):
        """A single F-block as a network on [u^m; w]."""
        p = self.parts
        layers = [p["first_block"]] + p["mid"] + [p["out_block"]]
        return Mlp([w for w, _ in layers], [b for _, b in layers], validate=False)

    def layers(self):
        p = self.parts
        L = self.config.L
        seq = [p["first_start"]]
        for ell in range(L):
            seq += p["mid"]
            if ell < L - 1:
                seq += [p["out_pm"], p["first_pm"]]
        seq.append(p["out_final"])
        return seq

    def network(self):
        layers = self.layers()
        return Mlp([w for w, _ in layers], [b for _, b in layers], validate=False)

    def __call__(self, u):
        return ns.SpectralField.from_real(forward(self.network(), ns.SpectralField(ns._coeffs(u)).to_real()),
                                          self.config.K)


def build_step_net(config, nl=None):
    return EmulatedStep(config, nl)


def _layer_size(layer):
    w, b = layer
    return int(np.count_nonzero(w.data)) + int(np.count_nonzero(b))


class UnrolledNet:
    """psi = psi* o ... o psi* (n_T copies) joined with +- junctions."""

    def __init__(self, step_net, n_steps):
        self.step = step_net
        self.n_steps = int(n_steps)
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        base = step_net.layers()
        first_w, first_b = base[0]
        last_w, last_b = base[-1]
        up = (sp.vstack([last_w, -last_w], format="csr"), np.concatenate([last_b, -last_b]))
        down = (sp.hstack([first_w, -first_w], format="csr"), first_b)
        seq = []
        for s in range(self.n_steps):
            body = list(base)
            if s > 0:
                body[0] = down
            if s < self.n_steps - 1:
                body[-1] = up
            seq += body
        self._layers = seq
        self._step_size = sum(_layer_size(l) for l in base)
        self._junction = _layer_size(base[-1]) + int(np.count_nonzero(first_w.data))

    def network(self):
        return Mlp([w for w, _ in self._layers], [b for _, b in self._layers], validate=False)

    def size(self):
        return sum(_layer_size(l) for l in self._layers)

    def depth(self):
        return len(self._layers)

    def step_size(self):
        return self._step_size

    def predicted_size(self):
        """n_T size(psi*) + (n_T - 1) (nonzeros doubled by each junction)."""
        return self.n_steps * self._step_size + (self.n_steps - 1) * self._junction

    def __call__(self, u0):
        z = forward(self.network(), ns.SpectralField(ns._coeffs(u0)).to_real())
        return ns.SpectralField.from_real(z, self.step.config.K)


def unroll(step_net, n_steps=None):
    return UnrolledNet(step_net, step_net.config.n_steps if n_steps is None else n_steps)


def structural_run(u0, config, nl):
    """Algorithm 1 control flow evaluated through the dense linear blocks of ``nl``."""
    c = ns._coeffs(u0)
    lap, inv = ns.heat_factor(config.K, config.dt, config.nu)
    for _ in range(config.n_steps):
        w = np.zeros_like(c)
        for _ in range(config.L):
            nlv = nl.evaluate_dense(c, 0.5 * (c + w)).coeffs
            w = inv * (c - config.dt * nlv - 0.5 * config.dt * config.nu * lap * c)
        c = w
    return ns.SpectralField(c)


@dataclass
class EmulationRow:
    K: int
    dt: float
    n_steps: int
    emulated_error: float
    arithmetic_error: float
    m: int


def emulation_error_study(configs, initial, reference):
    """Errors at T of the emulated and exact schemes against ``reference(config)``.

    ``initial(K)`` gives the initial coefficients for cutoff K.
    """
    rows = []
    for cfg in configs:
        u0 = initial(cfg.K)
        ref = reference(cfg)
        nl = EmulatedNonlinearity(cfg.K, cfg.m_bar, cfg.eps)
        ue, _ = ns.run(u0, cfg, nl)
        ua, _ = ns.run(u0, cfg, ns.EXACT_NL)
        rows.append(EmulationRow(cfg.K, cfg.dt, cfg.n_steps, (ue - ref).norm(), (ua - ref).norm(), nl.m))
    return rows
