"""First and second linearizations of the solution map.

The solution for boundary data eps1*g1 + eps2*g2 expands in the amplitudes.
The first-order terms are plain free transports of g1 and g2.  The mixed
second-order term solves a transport equation whose right-hand side S is a
collision-type quadrature of the two first-order fields, so it integrates
along backward characteristics:

    W(x, v) = int_0^{tau(x,v)} S(x - s v, v) ds.

When both first-order fields depend on v only, S does too and the integral
collapses to tau(x,v) * S(v).

The same W is also reachable from measured data alone: the second mixed
difference of the boundary operator, divided by eps1*eps2, converges to the
trace of W on the outgoing boundary as the amplitudes shrink.  This module
implements both routes and cross-validates them.
"""

from dataclasses import dataclass, field

import numpy as np

from .collision import KernelSpec, QuadratureRule, kernel_eval
from .errors import ConvergenceError, PreconditionError
from .geometry import Domain, exit_times
from .solver import (BoundarySource, PhaseField, PhaseGrid, PicardOptions,
                     apply_A, free_transport)

__all__ = [
    "LinearizationConfig", "SecondOrderSource", "FDConvergence", "WTable",
    "p_function", "first_linearization", "second_order_source",
    "w_quadrature", "w_finite_difference", "convergence_to_csv",
]


def p_function(v0, u, omega):
    """Closed form of the collision bracket for the pair (e^{|v-v0|^2}, 1).

    P(v0, u, omega) = (1 - e^{-c^2}) (e^{c^2} - e^{m^2}) with
    c = (v0-u).omega and m = |u - v0|.  Since c^2 <= m^2 the second factor
    is <= 0 and the first is >= 0, so P <= 0 everywhere; P = 0 exactly when
    omega is orthogonal to v0-u or parallel to it.
    """
    v0 = np.asarray(v0, dtype=float)
    u = np.asarray(u, dtype=float)
    omega = np.asarray(omega, dtype=float)
    d = v0 - u
    c2 = np.sum(d * omega, axis=-1) ** 2
    m2 = np.sum(d * d, axis=-1)
    return (1.0 - np.exp(-c2)) * (np.exp(c2) - np.exp(m2))


@dataclass(frozen=True)
class LinearizationConfig:
    """Amplitude schedule for the finite-difference route.

    ``pairs`` is a shrinking sequence of (eps1, eps2); empty means geometric
    halving from (eps1, eps2) over three points.
    """

    eps1: float = 1e-2
    eps2: float = 1e-2
    pairs: tuple = ()

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise PreconditionError("amplitudes must be positive")
        pairs = self.pairs
        if not pairs:
            pairs = tuple((self.eps1 * 0.5**k, self.eps2 * 0.5**k)
                          for k in range(3))
        pairs = tuple((float(a), float(b)) for a, b in pairs)
        for (a, b) in pairs:
            if not (a > 0 and b > 0):
                raise PreconditionError("amplitudes must be positive")
        for (a0, b0), (a1, b1) in zip(pairs, pairs[1:]):
            if a1 > a0 or b1 > b0:
                raise PreconditionError(
                    "amplitude pairs must shrink along the sequence")
        object.__setattr__(self, "pairs", pairs)

    def check_smallness(self, sup1: float, sup2: float, threshold: float):
        # the largest pair is the binding one
        e1, e2 = self.pairs[0]
        worst = e1 * sup1 + e2 * sup2
        if worst >= threshold:
            raise PreconditionError(
                f"combined amplitude {worst:.3e} exceeds the smallness "
                f"threshold {threshold:.3e}")


class SecondOrderSource:
    """Collision-bracket source built from two first-order fields.

    Evaluates, at (x, v) or at v alone when both inputs are x-independent,

        S = sum_u sum_omega B * [V1(v')V2(u') + V1(u')V2(v')
                                 - V1(u)V2(v) - V1(v)V2(u)]

    under the supplied quadrature rule.  Inputs may be plain callables of v
    (treated as x-independent) or PhaseField instances.  Out-of-range
    interpolation events of PhaseField inputs are surfaced via oor_count.
    """

    def __init__(self, spec: KernelSpec, rule: QuadratureRule, V1, V2):
        self.spec = spec
        self.rule = rule
        self._direct = None
        self._f1, vo1, c1 = _wrap_field(V1)
        self._f2, vo2, c2 = _wrap_field(V2)
        self.velocity_only = vo1 and vo2
        self._counters = [c for c in (c1, c2) if c is not None]

    @classmethod
    def from_function(cls, fn, spec=None, rule=None, velocity_only=True):
        """Wrap an explicit S(v) or S(x, v); no quadrature is performed."""
        obj = cls.__new__(cls)
        obj.spec = spec
        obj.rule = rule
        obj._direct = fn
        obj._f1 = obj._f2 = None
        obj.velocity_only = velocity_only
        obj._counters = []
        return obj

    @property
    def oor_count(self) -> int:
        return int(sum(f.oor_count - base for f, base in self._counters))

    def eval_v(self, V):
        """Velocity-only table evaluation; defined when velocity_only."""
        if not self.velocity_only:
            raise PreconditionError(
                "source depends on x; use eval(x, v) instead")
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if self._direct is not None:
            return np.asarray(self._direct(V), dtype=float)
        return self._quadrature(None, V)

    def eval(self, X, V):
        """General evaluation at paired points (x, v)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if self._direct is not None:
            if self.velocity_only:
                return np.asarray(self._direct(V), dtype=float)
            return np.asarray(self._direct(X, V), dtype=float)
        if self.velocity_only:
            X = None
        return self._quadrature(X, V)

    def _quadrature(self, X, V):
        U = self.rule.u_nodes
        W = self.rule.omega_nodes
        wu = self.rule.u_weights
        ww = self.rule.omega_weights
        P, dim = V.shape
        NU, NW = U.shape[0], W.shape[0]

        c = np.einsum("pqd,md->pqm", V[:, None, :] - U[None, :, :], W)
        vp = V[:, None, None, :] - c[..., None] * W[None, None, :, :]
        up = U[None, :, None, :] + c[..., None] * W[None, None, :, :]
        B = kernel_eval(self.spec, V[:, None, None, :], U[None, :, None, :],
                        W[None, None, :, :])

        if X is None:
            Xrep = None
        else:
            Xrep = np.broadcast_to(X[:, None, None, :],
                                   (P, NU, NW, dim)).reshape(-1, dim)
        flatv = vp.reshape(-1, dim)
        flatu = up.reshape(-1, dim)
        V1vp = self._f1(Xrep, flatv).reshape(P, NU, NW)
        V1up = self._f1(Xrep, flatu).reshape(P, NU, NW)
        V2vp = self._f2(Xrep, flatv).reshape(P, NU, NW)
        V2up = self._f2(Xrep, flatu).reshape(P, NU, NW)

        Xu = None if X is None else np.broadcast_to(
            X[:, None, :], (P, NU, dim)).reshape(-1, dim)
        Urep = np.broadcast_to(U[None, :, :], (P, NU, dim)).reshape(-1, dim)
        V1u = self._f1(Xu, Urep).reshape(P, NU)
        V2u = self._f2(Xu, Urep).reshape(P, NU)
        V1v = self._f1(X, V)
        V2v = self._f2(X, V)

        bracket = (V1vp * V2up + V1up * V2vp
                   - V1u[:, :, None] * V2v[:, None, None]
                   - V1v[:, None, None] * V2u[:, :, None])
        return np.einsum("q,m,pqm,pqm->p", wu, ww, B, bracket)


def _wrap_field(V):
    """Normalize a first-order field to fn(X, Vb), plus metadata."""
    if isinstance(V, PhaseField):
        base = V.oor_count

        def fn(X, Vb):
            if X is None:
                raise PreconditionError(
                    "PhaseField input needs x coordinates")
            return V.eval(X, Vb)

        return fn, False, (V, base)
    if callable(V):
        return (lambda X, Vb: np.asarray(V(Vb), dtype=float)), True, None
    raise PreconditionError("field must be a PhaseField or a callable of v")


def first_linearization(g: BoundarySource, domain: Domain,
                        grid: PhaseGrid = None) -> PhaseField:
    """Derivative of the solution map at zero amplitude in the g direction.

    The quadratic collision term contributes nothing at first order, so this
    is exactly the free transport of g.
    """
    return free_transport(g, domain, grid)


def second_order_source(V1, V2, spec: KernelSpec,
                        rule: QuadratureRule) -> SecondOrderSource:
    """Mixed second-order source from two first-order fields."""
    return SecondOrderSource(spec, rule, V1, V2)


@dataclass
class WTable:
    x: np.ndarray
    v: np.ndarray
    value: np.ndarray
    method: str


def w_quadrature(S, domain: Domain, X, V, order: int = 24,
                 force_quadrature: bool = False) -> WTable:
    """Integrate S along backward characteristics through (x, v) samples.

    Velocity-only sources use the exact shortcut tau(x,v) * S(v) unless
    force_quadrature is set (the two paths agree to roundoff and the
    quadrature route exists for x-dependent sources).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    tau = exit_times(domain, X, V, sign=-1)
    if S.velocity_only and not force_quadrature:
        return WTable(X, V, tau * S.eval_v(V), "shortcut")
    xs, ws = np.polynomial.legendre.leggauss(order)
    s = 0.5 * tau[:, None] * (xs[None, :] + 1.0)
    nodes = X[:, None, :] - s[..., None] * V[:, None, :]
    P, K, dim = nodes.shape
    Vrep = np.broadcast_to(V[:, None, :], (P, K, dim)).reshape(-1, dim)
    Sv = S.eval(nodes.reshape(-1, dim), Vrep).reshape(P, K)
    vals = 0.5 * tau * (Sv @ ws)
    return WTable(X, V, vals, "quadrature")


@dataclass
class FDConvergence:
    """Finite-difference route per amplitude pair, against the quadrature
    reference, with the disagreement split into its three sources."""

    pairs: tuple
    x: np.ndarray
    v: np.ndarray
    W_fd: np.ndarray        # (n_pairs, n_samples)
    W_quad: np.ndarray      # (n_samples,)
    errors: np.ndarray      # (n_pairs,) max abs deviation
    est_trace: float        # boundary-trace extrapolation, worst pair
    est_quad: float         # quadrature error of the reference
    est_rem: float          # linearization remainder, from the last two pairs
    meta: dict = field(default_factory=dict)

    @property
    def est_total(self) -> float:
        return self.est_trace + self.est_quad + self.est_rem


def _scaled_source(g1: BoundarySource, g2: BoundarySource, e1: float,
                   e2: float) -> BoundarySource:
    vo = g1.velocity_only and g2.velocity_only
    sup = None
    if g1.sup_norm is not None and g2.sup_norm is not None:
        sup = e1 * g1.sup_norm + e2 * g2.sup_norm

    def func(X, V):
        return e1 * g1(X, V) + e2 * g2(X, V)

    return BoundarySource(func=func, velocity_only=vo, sup_norm=sup)


def w_finite_difference(spec: KernelSpec, g1: BoundarySource,
                        g2: BoundarySource, cfg: LinearizationConfig,
                        X, V, grid: PhaseGrid, rule: QuadratureRule,
                        options: PicardOptions = None,
                        order: int = 24) -> FDConvergence:
    """Recover W on outgoing samples from second differences of the
    boundary operator, one solve triple per amplitude pair.

    For each pair, W_fd = [A(e1 g1 + e2 g2) - A(e1 g1) - A(e2 g2)] / (e1 e2)
    at the given samples (A(0) = 0).  The quadrature reference is computed
    once from the first-order fields.  Raises on amplitudes above the
    smallness threshold; a failed solve names the offending amplitudes.
    """
    opts = options if options is not None else PicardOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))

    sup1 = g1.sup_norm if g1.sup_norm is not None else g1.estimate_sup(
        grid.domain, grid.R_v)
    sup2 = g2.sup_norm if g2.sup_norm is not None else g2.estimate_sup(
        grid.domain, grid.R_v)
    cfg.check_smallness(sup1, sup2, opts.smallness_threshold)

    # quadrature reference from the first-order fields
    if g1.velocity_only and g2.velocity_only:
        zero_x = np.zeros((1, grid.domain.dim))
        V1 = lambda Vb: g1(np.broadcast_to(zero_x, Vb.shape), Vb)
        V2 = lambda Vb: g2(np.broadcast_to(zero_x, Vb.shape), Vb)
    else:
        V1 = first_linearization(g1, grid.domain)
        V2 = first_linearization(g2, grid.domain)
    S = second_order_source(V1, V2, spec, rule)
    ref = w_quadrature(S, grid.domain, X, V, order=order)

    # quadrature error estimate: same source under a refined rule
    fine = QuadratureRule.build(
        grid.domain.dim, sphere_order=2 * rule.sphere_order,
        radial_order=rule.radial_order + 2,
        angular_order=2 * rule.angular_order, R_v=rule.R_v)
    S_fine = second_order_source(V1, V2, spec, fine)
    ref_fine = w_quadrature(S_fine, grid.domain, X, V, order=2 * order)
    est_quad = float(np.max(np.abs(ref_fine.value - ref.value)))

    tables = np.empty((len(cfg.pairs), X.shape[0]))
    trace_res = 0.0
    for k, (e1, e2) in enumerate(cfg.pairs):
        jobs = (("combined", _scaled_source(g1, g2, e1, e2), 1.0),
                ("first", _scaled_source(g1, g2, e1, 0.0), -1.0),
                ("second", _scaled_source(g1, g2, 0.0, e2), -1.0))
        acc = np.zeros(X.shape[0])
        for label, src, sgn in jobs:
            try:
                tab, _rep = apply_A(spec, src, grid, rule, X, V, opts)
            except ConvergenceError as exc:
                raise ConvergenceError(
                    f"solve failed for the {label} data at amplitudes "
                    f"(eps1={e1:.3e}, eps2={e2:.3e}): {exc}",
                    report=exc.report) from exc
            acc += sgn * tab.value
            trace_res = max(trace_res,
                            float(np.max(tab.extrap_residual)) / (e1 * e2))
        tables[k] = acc / (e1 * e2)

    errors = np.max(np.abs(tables - ref.value[None, :]), axis=1)
    if len(cfg.pairs) >= 2:
        est_rem = float(np.max(np.abs(tables[-1] - tables[-2])))
    else:
        est_rem = float(errors[-1])
    return FDConvergence(
        pairs=cfg.pairs, x=X, v=V, W_fd=tables, W_quad=ref.value,
        errors=errors, est_trace=trace_res, est_quad=est_quad,
        est_rem=est_rem,
        meta={"order": order, "method": ref.method})


def convergence_to_csv(conv: FDConvergence, path: str):
    """One row per (amplitude pair, sample); deterministic formatting."""
    dim = conv.x.shape[1]
    xcols = ",".join(f"x{i}" for i in range(dim))
    vcols = ",".join(f"v{i}" for i in range(dim))
    with open(path, "w", newline="") as fh:
        fh.write(f"eps1,eps2,sample,{xcols},{vcols},W_fd,W_quad,abs_err\n")
        for k, (e1, e2) in enumerate(conv.pairs):
            for i in range(conv.x.shape[0]):
                xs = ",".join("%.17g" % c for c in conv.x[i])
                vs = ",".join("%.17g" % c for c in conv.v[i])
                err = abs(conv.W_fd[k, i] - conv.W_quad[i])
                fh.write("%.17g,%.17g,%d,%s,%s,%.17g,%.17g,%.17g\n"
                         % (e1, e2, i, xs, vs, conv.W_fd[k, i],
                            conv.W_quad[i], err))
