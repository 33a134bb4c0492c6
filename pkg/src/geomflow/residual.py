"""Fully discrete nonlinear slab systems for the two flows.

Four coupled blocks per slab, tested against degree-(s-1) polynomials in
time:

  (a)  normal velocity:  int (Xdot . nu, y)     =  curvature coupling
  (b)  tangential rate:  int (grad Xdot, grad Q) + (p nu . Q)  =  0
  (c)  constraint:       int (R . nu, s)        =  0
  (d)  curvature def.:   int (grad R, grad L) + (kappa nu . L) = -int (grad X, grad L)

Normal pairings are assembled with the unnormalized normal nu (identical
to n J pointwise, polynomial in the unknowns).  Each matched pair of
terms shares one quadrature rule by construction: blocks (b), (c) and the
grad-R/grad-Xdot terms use the base space rule; block (a) and the
kappa-nu term use the elevated space rule; the right-hand side of (d)
additionally uses the elevated time rule.  The Jacobian is the exact
directional derivative, including the geometry dependence of nu, J and
the inverse metric on X.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .fields import SpaceField, dofmap
from .geometry import geometry_from_gradient, tabulation
from .timeslab import (
    QuadraturePolicy,
    TimePolyField,
    default_policy,
    test_basis,
    trial_basis,
)

def _es(*args, **kw):
    kw.setdefault("optimize", True)
    return np.einsum(*args, **kw)


FLOWS = ("mcf", "sd")


@dataclass(frozen=True)
class FlowSpec:
    """Problem configuration for one run."""

    flow: str
    degree: int = 1          # spatial polynomial degree k
    stages: int = 1          # CPG stage count s
    timestep: float = 1e-4
    final_time: float = 1e-2
    geometry: str = "sphere"
    policy: QuadraturePolicy | None = None
    policy_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.flow not in FLOWS:
            raise ConfigError(f"unknown flow {self.flow!r}; choose from {FLOWS}")
        if self.degree < 1 or self.stages < 1:
            raise ConfigError("degree and stages must be >= 1")
        if self.timestep <= 0:
            raise ConfigError("timestep must be positive")
        if self.final_time <= 0:
            raise ConfigError("final_time must be positive")

    def resolve_policy(self, d: int) -> QuadraturePolicy:
        if self.policy is not None:
            return self.policy
        return default_policy(d, self.degree, self.stages, **self.policy_overrides)


@dataclass(eq=False)
class SlabState:
    """All unknowns of one slab: X in P_s, (p, R, kappa) in P_{s-1}.

    Coefficients are stored in the nodal time bases; the node-0
    coefficient of X is the incoming state and is not an unknown.
    """

    mesh: object
    degree: int
    stages: int
    Xc: np.ndarray      # (s+1, N, d+1)
    pc: np.ndarray      # (s, N)
    Rc: np.ndarray      # (s, N, d+1)
    kc: np.ndarray      # (s, N)
    t_start: float = 0.0
    dt: float = 1.0

    @property
    def X(self) -> TimePolyField:
        return TimePolyField(trial_basis(self.stages), self.Xc, self.t_start, self.dt)

    @property
    def p(self) -> TimePolyField:
        return TimePolyField(test_basis(self.stages), self.pc, self.t_start, self.dt)

    @property
    def R(self) -> TimePolyField:
        return TimePolyField(test_basis(self.stages), self.Rc, self.t_start, self.dt)

    @property
    def kappa(self) -> TimePolyField:
        return TimePolyField(test_basis(self.stages), self.kc, self.t_start, self.dt)

    def end_field(self) -> SpaceField:
        return SpaceField(self.mesh, self.degree, self.X.at(1.0))

    def start_field(self) -> SpaceField:
        return SpaceField(self.mesh, self.degree, self.Xc[0])

    def unknowns(self) -> np.ndarray:
        return np.concatenate(
            [self.Xc[1:].ravel(), self.pc.ravel(), self.Rc.ravel(), self.kc.ravel()]
        )

    def with_unknowns(self, u: np.ndarray) -> "SlabState":
        s, N = self.stages, self.Xc.shape[1]
        c = self.Xc.shape[2]
        nX, nS = s * N * c, s * N
        Xc = self.Xc.copy()
        Xc[1:] = u[:nX].reshape(s, N, c)
        pc = u[nX : nX + nS].reshape(s, N)
        Rc = u[nX + nS : 2 * nX + nS].reshape(s, N, c)
        kc = u[2 * nX + nS :].reshape(s, N)
        return replace(self, Xc=Xc, pc=pc, Rc=Rc, kc=kc)

    @classmethod
    def initial_guess(
        cls, incoming: SpaceField, stages: int, t_start: float, dt: float,
        prev: "SlabState | None" = None, lift: tuple | None = None,
        extrapolate: bool = True,
    ) -> "SlabState":
        """Predictor for the slab Newton iteration.

        With a previous slab, all fields are extrapolated from its
        polynomials (constant carry-over of the terminal values when
        ``extrapolate`` is off).  On slab 0, X is constant in time and
        (p, R, kappa) are zero unless a static (R, kappa) lift is given.
        """
        N, c = incoming.dofs.shape
        s = stages
        Xc = np.repeat(incoming.dofs[None], s + 1, axis=0)
        if prev is None:
            pc = np.zeros((s, N))
            if lift is None:
                Rc = np.zeros((s, N, c))
                kc = np.zeros((s, N))
            else:
                R0, k0 = lift
                Rc = np.repeat(R0[None], s, axis=0)
                kc = np.repeat(k0[None], s, axis=0)
        elif extrapolate:
            tn = trial_basis(s).nodes
            un = test_basis(s).nodes
            Xc = np.stack([prev.X.at(1.0 + float(t)) for t in tn])
            pc = np.stack([prev.p.at(1.0 + float(t)) for t in un])
            Rc = np.stack([prev.R.at(1.0 + float(t)) for t in un])
            kc = np.stack([prev.kappa.at(1.0 + float(t)) for t in un])
        else:
            pc = np.repeat(prev.p.at(1.0)[None], s, axis=0)
            Rc = np.repeat(prev.R.at(1.0)[None], s, axis=0)
            kc = np.repeat(prev.kappa.at(1.0)[None], s, axis=0)
        return cls(incoming.mesh, incoming.degree, s, Xc, pc, Rc, kc, t_start, dt)


def _contract(w, P, Q):
    """out[c,x,y] = sum_q w[q] P[q,x] Q[c,q,y] (P may also carry a cell axis)."""
    Qw = Q * w[None, :, None]
    if P.ndim == 2:
        return np.tensordot(P, Qw, axes=(0, 1)).transpose(1, 0, 2)
    return np.matmul(P.transpose(0, 2, 1), Qw)


def _dnu(Bphi: np.ndarray, A: np.ndarray, d: int) -> np.ndarray:
    """Derivative of nu w.r.t. a nodal perturbation; shape (C,Q,L,c,c).

    Entry [c,q,b,j,i] is the i-component of d(nu)/d(X coefficient at local
    node b, ambient component j).
    """
    C, Q = A.shape[:2]
    L = Bphi.shape[1]
    if d == 1:
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # d(nu)/dt for e_j tangent bump
        return _es("qb,ji->qbji", Bphi[:, :, 0], rot)[None].repeat(C, axis=0)
    out = np.zeros((C, Q, L, 3, 3))
    for col, sign in ((1, 1.0), (0, -1.0)):
        v = A[..., col]  # (C,Q,3); rows of (e_j x v)
        cr = np.zeros((C, Q, 3, 3))
        cr[..., 0, 1] = -v[..., 2]
        cr[..., 0, 2] = v[..., 1]
        cr[..., 1, 0] = v[..., 2]
        cr[..., 1, 2] = -v[..., 0]
        cr[..., 2, 0] = -v[..., 1]
        cr[..., 2, 1] = v[..., 0]
        out += sign * _es("qb,cqji->cqbji", Bphi[:, :, 1 - col], cr)
    return out


class _RuleData:
    """Geometry bundle and derivative carriers for one spatial rule.

    All time quadrature points of one rule are batched: theta and dtheta
    have shape (T, s+1) and the time axis is merged into the leading cell
    axis, so every downstream contraction sees T*C "cells".
    """

    def __init__(self, phi, Bphi, Xloc, theta, dtheta, d, scale, slab=None):
        self.phi, self.Bphi, self.d = phi, Bphi, d
        self._Xloc, self._theta, self._dtheta = Xloc, theta, dtheta
        self.T = theta.shape[0]
        self.C = Xloc.shape[0]
        L, c = Xloc.shape[2], Xloc.shape[3]
        Xl = _es("tm,cmlk->tclk", theta, Xloc).reshape(-1, L, c)
        self.A = _es("qld,clk->cqkd", Bphi, Xl)
        self.geo = geometry_from_gradient(
            self.A, d, scale, slab=slab, ncells=self.C
        )

    # time-derivative and linearization carriers, computed on demand: the
    # line-search (residual-only) path never touches most of them
    @cached_property
    def _Xdl(self):
        L, c = self._Xloc.shape[2], self._Xloc.shape[3]
        return _es("tm,cmlk->tclk", self._dtheta, self._Xloc).reshape(-1, L, c)

    @cached_property
    def Adot(self):
        return _es("qld,clk->cqkd", self.Bphi, self._Xdl)

    @cached_property
    def Xdot(self):
        return _es("ql,clk->cqk", self.phi, self._Xdl)

    @cached_property
    def Dphi(self):
        return _es("cqde,qle->cqld", self.geo.Ginv, self.Bphi)

    @cached_property
    def Kst(self):
        return _es("qld,cqmd->cqlm", self.Bphi, self.Dphi)  # sans J

    @cached_property
    def AG(self):
        return _es("cqke,cqed->cqkd", self.A, self.geo.Ginv)

    @cached_property
    def AGB(self):
        # (A Ginv Bphi_a)_k, both residual kernel and dGinv carrier
        return _es("cqkd,qad->cqak", self.AG, self.Bphi)

    @cached_property
    def dnu(self):
        return _dnu(self.Bphi, self.A, self.d)

    @cached_property
    def dJ(self):
        return _es("cqbji,cqi->cqbj", self.dnu, self.geo.n)

    def grad_pair_dginv_w(self, F, w):
        """Quadrature-summed kernel of (F dGinv Bphi_a)_i J, F of shape (C,Q,i,d).

        Returns (C, L*c, L*c) indexed (test a,i) x (trial b,j); contracts
        over quadrature points with batched matmuls to avoid large
        six-index intermediates."""
        C, Q, c = F.shape[:3]
        L = self.Bphi.shape[1]
        wJ = w[None, :] * self.geo.J
        FD = _es("cqid,cqbd->cqbi", F, self.Dphi).reshape(C, Q, L * c)
        FAG = _es("cqid,cqjd->cqij", F, self.AG).reshape(C, Q, c * c)
        AGBw = self.AGB.reshape(C, Q, L * c) * wJ[:, :, None]
        t1 = np.matmul(AGBw.transpose(0, 2, 1), FD)        # (C, aj, bi)
        t1 = t1.reshape(C, L, c, L, c).transpose(0, 1, 4, 3, 2)
        t2 = np.matmul(
            self.Kst.reshape(C, Q, L * L).transpose(0, 2, 1), FAG * wJ[:, :, None]
        )                                                  # (C, ab, ij)
        t2 = t2.reshape(C, L, L, c, c).transpose(0, 1, 3, 2, 4)
        return -(t1 + t2).reshape(C, L * c, L * c)

    def grad_pair_res(self, F):
        """Residual kernel (F Ginv Bphi_a)_i J; returns (C,Q,a,i)."""
        FG = _es("cqie,cqed->cqid", F, self.geo.Ginv)
        return _es("cqid,qad,cq->cqai", FG, self.Bphi, self.geo.J)

    def grad_pair_base(self, F):
        """(F Ginv Bphi_a)_i without J; returns (C,Q,a,i)."""
        FG = _es("cqie,cqed->cqid", F, self.geo.Ginv)
        return _es("cqid,qad->cqai", FG, self.Bphi)


class SlabAssembler:
    """Assembles residual and exact Jacobian of the slab system.

    Built once per run; holds tabulations, dof layout, scatter indices.
    """

    def __init__(self, mesh, spec: FlowSpec):
        self.mesh = mesh
        self.spec = spec
        self.d = mesh.dim
        self.c = mesh.dim + 1
        self.k = spec.degree
        self.s = spec.stages
        self.policy = spec.resolve_policy(self.d)
        self.dm = dofmap(mesh, self.k)
        self.N = self.dm.ndofs
        self.cell_nodes = self.dm.cell_nodes
        self.L = self.cell_nodes.shape[1]

        self.phiB, self.gradB = tabulation(self.d, self.k, self.policy.space_rule)
        self.phiE, self.gradE = tabulation(self.d, self.k, self.policy.space_rule_elev)
        self.wB = self.policy.space_rule.weights
        self.wE = self.policy.space_rule_elev.weights

        self.trial = trial_basis(self.s)
        self.test = test_basis(self.s)
        tr = self.policy.time_rule
        te = self.policy.time_rule_elev
        self.t_base = tr.points
        self.w_base = tr.weights
        self.t_elev = te.points
        self.w_elev = te.weights
        self.theta_base = self.trial.eval(self.t_base)      # (qt, s+1)
        self.dtheta_base = self.trial.eval_deriv(self.t_base)
        self.psi_base = self.test.eval(self.t_base)          # (qt, s)
        self.theta_elev = self.trial.eval(self.t_elev)
        self.dtheta_elev = self.trial.eval_deriv(self.t_elev)
        self.psi_elev = self.test.eval(self.t_elev)

        self._build_indices()

    # -- layout ---------------------------------------------------------------

    @property
    def nunknowns(self) -> int:
        return 2 * self.s * self.N * (self.c + 1)

    def _build_indices(self):
        s, N, c, L = self.s, self.N, self.c, self.L
        C = len(self.cell_nodes)
        g = self.cell_nodes  # (C, L)
        Lc = L * c
        Tl = 2 * L + 2 * Lc

        # local test layout: [a (L)] [b (L,c)] [c (L)] [d (L,c)]
        rows = np.empty((C, s, Tl), dtype=np.int64)
        off_b, off_c, off_d = s * N, s * N * (1 + c), s * N * (1 + c) + s * N
        comp = np.arange(c)
        for m in range(s):
            rows[:, m, :L] = m * N + g
            rows[:, m, L : L + Lc] = (off_b + m * N * c + g[:, :, None] * c + comp).reshape(C, Lc)
            rows[:, m, L + Lc : 2 * L + Lc] = off_c + m * N + g
            rows[:, m, 2 * L + Lc :] = (off_d + m * N * c + g[:, :, None] * c + comp).reshape(C, Lc)
        self.rows_loc = rows.reshape(C, s * Tl)

        # local trial layout: [X (L,c)] [p (L)] [R (L,c)] [kappa (L)]
        cols = np.empty((C, s, Tl), dtype=np.int64)
        offX, offp = 0, s * N * c
        offR, offk = s * N * (c + 1), s * N * (2 * c + 1)
        for m in range(s):
            cols[:, m, :Lc] = (offX + m * N * c + g[:, :, None] * c + comp).reshape(C, Lc)
            cols[:, m, Lc : Lc + L] = offp + m * N + g
            cols[:, m, Lc + L : 2 * Lc + L] = (offR + m * N * c + g[:, :, None] * c + comp).reshape(C, Lc)
            cols[:, m, 2 * Lc + L :] = offk + m * N + g
        self.cols_loc = cols.reshape(C, s * Tl)

        self.Tl = Tl
        nl = s * Tl
        self._coo_rows = np.broadcast_to(self.rows_loc[:, :, None], (C, nl, nl)).ravel()
        self._coo_cols = np.broadcast_to(self.cols_loc[:, None, :], (C, nl, nl)).ravel()

        # slices into the local layout, per block/field (within one time node)
        self.sl_a = slice(0, L)
        self.sl_b = slice(L, L + Lc)
        self.sl_c = slice(L + Lc, 2 * L + Lc)
        self.sl_d = slice(2 * L + Lc, Tl)
        self.sl_X = slice(0, Lc)
        self.sl_p = slice(Lc, Lc + L)
        self.sl_R = slice(Lc + L, 2 * Lc + L)
        self.sl_k = slice(2 * Lc + L, Tl)

    # -- field localization -----------------------------------------------------

    def _local(self, coeffs):
        """(time-node, N, ...) -> (C, time-node, L, ...)"""
        return coeffs[:, self.cell_nodes].transpose(1, 0, *range(2, coeffs.ndim + 1))

    def _scale(self, state):
        return float(np.abs(state.Xc).max())

    def _rule_data(self, which, Xloc, theta, dtheta, scale, slab):
        if which == "base":
            return _RuleData(self.phiB, self.gradB, Xloc, theta, dtheta, self.d, scale, slab)
        return _RuleData(self.phiE, self.gradE, Xloc, theta, dtheta, self.d, scale, slab)

    # -- assembly ---------------------------------------------------------------

    def assemble(self, state: SlabState, want_jacobian: bool = True, slab=None):
        """Residual vector and (optionally) the sparse Jacobian."""
        s, N, c, L = self.s, self.N, self.c, self.L
        C = len(self.cell_nodes)
        tau = state.dt
        mcf = self.spec.flow == "mcf"
        scale = self._scale(state)

        Xloc = self._local(state.Xc)   # (C, s+1, L, c)
        ploc = self._local(state.pc)   # (C, s, L)
        Rloc = self._local(state.Rc)   # (C, s, L, c)
        kloc = self._local(state.kc)   # (C, s, L)

        res_loc = np.zeros((C, s, self.Tl))
        elem = (
            np.zeros((C, s, self.Tl, s, self.Tl)) if want_jacobian else None
        )

        QB, QE = len(self.wB), len(self.wE)
        Lc = L * c

        # base time rule: every paired block, all time points at once
        TB = len(self.t_base)
        fB = self.w_base * tau
        thB = self.theta_base
        dthB = self.dtheta_base / tau
        psiB = self.psi_base
        B = self._rule_data("base", Xloc, thB, dthB, scale, slab)
        E = self._rule_data("elev", Xloc, thB, dthB, scale, slab)

        pB = _es("tm,ql,cml->tcq", psiB, self.phiB, ploc).reshape(-1, QB)
        RB = _es("tm,ql,cmlk->tcqk", psiB, self.phiB, Rloc).reshape(-1, QB, c)
        BRB = _es("tm,qld,cmlk->tcqkd", psiB, self.gradB, Rloc).reshape(-1, QB, c, self.d)
        kE = _es("tm,ql,cml->tcq", psiB, self.phiE, kloc).reshape(-1, QE)
        gkE = _es("tm,qld,cml->tcqd", psiB, self.gradE, kloc).reshape(-1, QE, self.d)

        self._residual_at(res_loc, fB, psiB, B, E, pB, RB, BRB, kE, gkE, mcf)
        if want_jacobian:
            self._jacobian_at(elem, fB, psiB, thB, dthB, B, E, pB, RB, BRB, kE, gkE, mcf)

        # block (d) RHS: (grad X, grad Lambda), elevated space and time rules
        TE = len(self.t_elev)
        fE = self.w_elev * tau
        psiE = self.psi_elev
        EE = self._rule_data("elev", Xloc, self.theta_elev, self.dtheta_elev / tau, scale, slab)
        kern = _es("q,cqai->cai", self.wE, EE.grad_pair_res(EE.A))
        res_loc[:, :, self.sl_d] += _es(
            "t,tm,tcai->cmai", fE, psiE, kern.reshape(TE, C, L, c)
        ).reshape(C, s, Lc)
        if want_jacobian:
            kX = EE.grad_pair_dginv_w(EE.A, self.wE)
            kX += _contract(
                self.wE,
                EE.grad_pair_base(EE.A).reshape(-1, QE, Lc),
                EE.dJ.reshape(-1, QE, Lc),
            )
            SJ = _es("q,cq,cqab->cab", self.wE, EE.geo.J, EE.Kst)
            kX += _es("cab,ij->caibj", SJ, np.eye(c)).reshape(-1, Lc, Lc)
            thuE = self.theta_elev[:, 1:]
            w = (fE[:, None, None] * psiE[:, :, None] * thuE[:, None, :]).reshape(TE, s * s)
            out = np.tensordot(w, kX.reshape(TE, -1), axes=(0, 0))
            elem[:, :, self.sl_d, :, self.sl_X] += out.reshape(
                s, s, C, Lc, Lc
            ).transpose(2, 0, 3, 1, 4)

        # scatter residual
        res = np.bincount(
            self.rows_loc.ravel(),
            weights=res_loc.reshape(C, -1).ravel(),
            minlength=self.nunknowns,
        )
        if not want_jacobian:
            return res, None
        jac = sp.coo_matrix(
            (elem.ravel(), (self._coo_rows, self._coo_cols)),
            shape=(self.nunknowns, self.nunknowns),
        ).tocsc()
        return res, jac

    def _residual_at(self, res_loc, f, psi, B, E, pB, RB, BRB, kE, gkE, mcf):
        C, s, L, c = res_loc.shape[0], self.s, self.L, self.c
        T = psi.shape[0]
        wB, wE = self.wB, self.wE
        XdotE = E.Xdot

        # (a): (Xdot . nu, y) - rhs, elevated space rule
        xdnu = _es("cqk,cqk->cq", XdotE, E.geo.nu)
        if mcf:
            ra = _es("q,cq,ql->cl", wE, xdnu - kE * E.geo.J, self.phiE)
        else:
            ra = _es("q,cq,ql->cl", wE, xdnu, self.phiE)
            ra -= _es("q,cqd,cqld,cq->cl", wE, gkE, E.Dphi, E.geo.J)
        res_loc[:, :, self.sl_a] += _es("t,tm,tcl->cml", f, psi, ra.reshape(T, C, L))

        # (b): (grad Xdot, grad Q) + (p nu, Q), base rule
        rb = _es("q,cqai->cai", wB, B.grad_pair_res(B.Adot))
        rb += _es("q,cq,cqi,qa->cai", wB, pB, B.geo.nu, self.phiB)
        res_loc[:, :, self.sl_b] += _es(
            "t,tm,tcai->cmai", f, psi, rb.reshape(T, C, L, c)
        ).reshape(C, s, L * c)

        # (c): (R . nu, s), base rule
        rc = _es("q,cqk,cqk,ql->cl", wB, RB, B.geo.nu, self.phiB)
        res_loc[:, :, self.sl_c] += _es("t,tm,tcl->cml", f, psi, rc.reshape(T, C, L))

        # (d) LHS: (grad R, grad L) base + (kappa nu, L) elevated space
        rd = _es("q,cqai->cai", wB, B.grad_pair_res(BRB))
        rd += _es("q,cq,cqi,qa->cai", wE, kE, E.geo.nu, self.phiE)
        res_loc[:, :, self.sl_d] += _es(
            "t,tm,tcai->cmai", f, psi, rd.reshape(T, C, L, c)
        ).reshape(C, s, L * c)

    def _jacobian_at(self, elem, f, psi, th, dth, B, E, pB, RB, BRB, kE, gkE, mcf):
        s, L, c = self.s, self.L, self.c
        C = elem.shape[0]
        T = psi.shape[0]
        M = T * C  # merged (time point, cell) batch
        wB, wE = self.wB, self.wE
        eye = np.eye(c)
        thu, dthu = th[:, 1:], dth[:, 1:]

        def add(sl_test, sl_trial, kern, carrier):
            # kern has merged shape (T*C, x, y); result (C, s, x, s, y)
            x, y = kern.shape[1:]
            w = (f[:, None, None] * psi[:, :, None] * carrier[:, None, :]).reshape(T, s * s)
            out = np.tensordot(w, kern.reshape(T, -1), axes=(0, 0))  # (mn, Cxy)
            elem[:, :, sl_test, :, sl_trial] += out.reshape(s, s, C, x, y).transpose(
                2, 0, 3, 1, 4
            )

        QB, QE = len(wB), len(wE)
        Lc, Lcc = L * c, L * c * c

        def dnu_test_kernel(rule, phi, w, field):
            """(a,i)x(b,j) kernel of sum w * field * phi_a * dnu[b,j,i]."""
            Z = rule.dnu.reshape(-1, len(w), Lcc) * field[:, :, None]
            t = _contract(w, phi, Z)  # (M, a, b*j*i)
            return t.reshape(M, L, L, c, c).transpose(0, 1, 4, 2, 3).reshape(M, Lc, Lc)

        def nu_phi_kernel(rule, phi, w):
            """(a,i)x(b) kernel of sum w * phi_a * nu_i * phi_b."""
            Q_ = _es("qa,cqi->cqai", phi, rule.geo.nu).reshape(M, len(w), Lc)
            return _contract(w, phi, Q_).transpose(0, 2, 1)  # (M, ai, b)

        # ---- block (a), elevated space rule
        # vs X, theta-dot carrier: (phi_b e_j . nu) phi_a
        Q_ = _es("qb,cqj->cqbj", self.phiE, E.geo.nu).reshape(M, QE, Lc)
        add(self.sl_a, self.sl_X, _contract(wE, self.phiE, Q_), dthu)
        # vs X, theta carrier: Xdot . dnu, minus rhs geometry terms
        Z = _es("cqk,cqbjk->cqbj", E.Xdot, E.dnu).reshape(M, QE, Lc)
        if mcf:
            Z -= kE[:, :, None] * E.dJ.reshape(M, QE, Lc)
            kern = _contract(wE, self.phiE, Z)
        else:
            kern = _contract(wE, self.phiE, Z)
            # +(gk^T Ginv dG Ginv Bphi_a) J - (gk^T Ginv Bphi_a) dJ
            wJ = wE[None, :] * E.geo.J
            gkD = _es("cqd,cqld->cql", gkE, E.Dphi)  # test or trial node index
            gkAG = _es("cqd,cqjd->cqj", gkE, E.AG)
            t1 = np.matmul(
                gkD.transpose(0, 2, 1), E.AGB.reshape(M, QE, Lc) * wJ[:, :, None]
            )  # (M, b, aj)
            kern += t1.reshape(M, L, L, c).transpose(0, 2, 1, 3).reshape(M, L, Lc)
            t2 = np.matmul(
                E.Kst.reshape(M, QE, L * L).transpose(0, 2, 1), gkAG * wJ[:, :, None]
            )  # (M, ab, j)
            kern += t2.reshape(M, L, Lc)
            kern -= _contract(wE, gkD, E.dJ.reshape(M, QE, Lc))
        add(self.sl_a, self.sl_X, kern, thu)
        # vs kappa (psi carrier)
        if mcf:
            Q_ = _es("qb,cq->cqb", self.phiE, E.geo.J)
            kern = -_contract(wE, self.phiE, Q_)
        else:
            kern = -_es("q,cq,cqab->cab", wE, E.geo.J, E.Kst)
        add(self.sl_a, self.sl_k, kern, psi)

        # ---- block (b), base rule
        SJ = _es("q,cq,cqab->cab", wB, B.geo.J, B.Kst)
        eyeSJ = _es("cab,ij->caibj", SJ, eye).reshape(M, Lc, Lc)
        add(self.sl_b, self.sl_X, eyeSJ, dthu)
        kern = B.grad_pair_dginv_w(B.Adot, wB)
        kern += _contract(
            wB, B.grad_pair_base(B.Adot).reshape(M, QB, Lc), B.dJ.reshape(M, QB, Lc)
        )
        kern += dnu_test_kernel(B, self.phiB, wB, pB)
        add(self.sl_b, self.sl_X, kern, thu)
        add(self.sl_b, self.sl_p, nu_phi_kernel(B, self.phiB, wB), psi)

        # ---- block (c), base rule
        Z = _es("cqk,cqbjk->cqbj", RB, B.dnu).reshape(M, QB, Lc)
        add(self.sl_c, self.sl_X, _contract(wB, self.phiB, Z), thu)
        Q_ = _es("qb,cqj->cqbj", self.phiB, B.geo.nu).reshape(M, QB, Lc)
        add(self.sl_c, self.sl_R, _contract(wB, self.phiB, Q_), psi)

        # ---- block (d): grad-R part base rule, kappa-nu part elevated space
        kern = B.grad_pair_dginv_w(BRB, wB)
        kern += _contract(
            wB, B.grad_pair_base(BRB).reshape(M, QB, Lc), B.dJ.reshape(M, QB, Lc)
        )
        kern += dnu_test_kernel(E, self.phiE, wE, kE)
        add(self.sl_d, self.sl_X, kern, thu)
        add(self.sl_d, self.sl_R, eyeSJ, psi)
        add(self.sl_d, self.sl_k, nu_phi_kernel(E, self.phiE, wE), psi)

    # -- diagnostics ------------------------------------------------------------

    def dissipation_integral(self, state: SlabState, slab=None) -> float:
        """Slab dissipation D_n: base time rule, elevated spatial rule."""
        Xloc = self._local(state.Xc)
        kloc = self._local(state.kc)
        scale = self._scale(state)
        mcf = self.spec.flow == "mcf"
        QE = len(self.wE)
        T = len(self.t_base)
        E = self._rule_data(
            "elev", Xloc, self.theta_base, self.dtheta_base / state.dt, scale, slab
        )
        if mcf:
            kE = _es("tm,ql,cml->tcq", self.psi_base, self.phiE, kloc).reshape(-1, QE)
            val = kE**2 * E.geo.J
        else:
            gkE = _es("tm,qld,cml->tcqd", self.psi_base, self.gradE, kloc).reshape(
                -1, QE, self.d
            )
            val = _es("cqd,cqde,cqe->cq", gkE, E.geo.Ginv, gkE) * E.geo.J
        C = kloc.shape[0]
        return state.dt * float(
            _es("t,q,tcq->", self.w_base, self.wE, val.reshape(T, C, QE))
        )

    def orthogonality_residual(self, state: SlabState, slab=None) -> float:
        """Base-rule evaluation of int (grad Xdot, grad R) over the slab."""
        Xloc = self._local(state.Xc)
        Rloc = self._local(state.Rc)
        scale = self._scale(state)
        QB = len(self.wB)
        T = len(self.t_base)
        C = Rloc.shape[0]
        B = self._rule_data(
            "base", Xloc, self.theta_base, self.dtheta_base / state.dt, scale, slab
        )
        BRB = _es("tm,qld,cmlk->tcqkd", self.psi_base, self.gradB, Rloc).reshape(
            -1, QB, self.c, self.d
        )
        tr = _es("cqkd,cqde,cqke->cq", B.Adot, B.geo.Ginv, BRB) * B.geo.J
        return state.dt * float(
            _es("t,q,tcq->", self.w_base, self.wB, tr.reshape(T, C, QB))
        )

    def slab_gradient_norms(self, state: SlabState) -> tuple[float, float]:
        """L2(slab) norms of grad Xdot and grad R (base rules)."""
        Xloc = self._local(state.Xc)
        Rloc = self._local(state.Rc)
        scale = self._scale(state)
        QB = len(self.wB)
        T = len(self.t_base)
        C = Rloc.shape[0]
        B = self._rule_data(
            "base", Xloc, self.theta_base, self.dtheta_base / state.dt, scale, None
        )
        BRB = _es("tm,qld,cmlk->tcqkd", self.psi_base, self.gradB, Rloc).reshape(
            -1, QB, self.c, self.d
        )
        trx = _es("cqkd,cqde,cqke->cq", B.Adot, B.geo.Ginv, B.Adot) * B.geo.J
        trr = _es("cqkd,cqde,cqke->cq", BRB, B.geo.Ginv, BRB) * B.geo.J
        nx = state.dt * float(_es("t,q,tcq->", self.w_base, self.wB, trx.reshape(T, C, QB)))
        nr = state.dt * float(_es("t,q,tcq->", self.w_base, self.wB, trr.reshape(T, C, QB)))
        return np.sqrt(max(nx, 0.0)), np.sqrt(max(nr, 0.0))


def curvature_lift(X0: SpaceField, spec: FlowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Consistent (R, kappa) for a static immersion.

    Solves the linear constraint and curvature-definition blocks at the
    fixed geometry X0, with the same quadrature-rule assignment as the
    slab system.  Used to seed the first slab's Newton iteration; the
    zero guess stalls on geometries with concentrated curvature (sharp
    edges, thin necks).
    """
    import scipy.sparse.linalg as spla

    mesh, k = X0.mesh, X0.degree
    d, c = mesh.dim, mesh.dim + 1
    policy = spec.resolve_policy(d)
    dm = dofmap(mesh, k)
    g = dm.cell_nodes
    C, L = g.shape
    N = dm.ndofs
    Lc = L * c

    phiB, gradB = tabulation(d, k, policy.space_rule)
    phiE, gradE = tabulation(d, k, policy.space_rule_elev)
    wB = policy.space_rule.weights
    wE = policy.space_rule_elev.weights
    Xloc = X0.dofs[g]
    scale = float(np.abs(X0.dofs).max())

    AB = _es("qld,clk->cqkd", gradB, Xloc)
    AE = _es("qld,clk->cqkd", gradE, Xloc)
    geoB = geometry_from_gradient(AB, d, scale)
    geoE = geometry_from_gradient(AE, d, scale)

    # (c) rows x R: int phi_a (nu . R) with the base rule
    Kc_R = _es("q,qa,cqj,qb->cabj", wB, phiB, geoB.nu, phiB).reshape(C, L, Lc)
    # (d) rows x R: int (grad phi_b, Ginv grad phi_a) J, identity in components
    DphiB = _es("cqde,qle->cqld", geoB.Ginv, gradB)
    SJ = _es("q,cq,qad,cqbd->cab", wB, geoB.J, gradB, DphiB)
    Kd_R = _es("cab,ij->caibj", SJ, np.eye(c)).reshape(C, Lc, Lc)
    # (d) rows x kappa: int phi_a nu_i phi_b with the elevated rule
    Kd_k = _es("q,qa,cqi,qb->caib", wE, phiE, geoE.nu, phiE).reshape(C, Lc, L)
    # (d) right-hand side: -int (A Ginv grad phi_a)_i J, elevated rule
    AGE = _es("cqke,cqed->cqkd", AE, geoE.Ginv)
    rhs_d = -_es("q,cqid,qad,cq->cai", wE, AGE, gradE, geoE.J).reshape(C, Lc)

    # global layout: rows [(c): N][(d): N*c]; cols [R: N*c][kappa: N]
    comp = np.arange(c)
    rows_c = g
    rows_d = (N + g[:, :, None] * c + comp).reshape(C, Lc)
    cols_R = (g[:, :, None] * c + comp).reshape(C, Lc)
    cols_k = N * c + g

    def coo(rows, cols, vals):
        nr, nc = vals.shape[1:]
        return (
            np.broadcast_to(rows[:, :, None], (C, nr, nc)).ravel(),
            np.broadcast_to(cols[:, None, :], (C, nr, nc)).ravel(),
            vals.ravel(),
        )

    parts = [coo(rows_c, cols_R, Kc_R), coo(rows_d, cols_R, Kd_R), coo(rows_d, cols_k, Kd_k)]
    A = sp.coo_matrix(
        (
            np.concatenate([p[2] for p in parts]),
            (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])),
        ),
        shape=(N * (c + 1), N * (c + 1)),
    ).tocsc()
    b = np.zeros(N * (c + 1))
    np.add.at(b, rows_d.ravel(), rhs_d.ravel())
    u = spla.splu(A).solve(b)
    return u[: N * c].reshape(N, c), u[N * c :]


def assemble_residual(state: SlabState, spec: FlowSpec) -> np.ndarray:
    """One-shot residual assembly (convenience wrapper)."""
    return SlabAssembler(state.mesh, spec).assemble(state, want_jacobian=False)[0]


def assemble_jacobian(state: SlabState, spec: FlowSpec):
    """One-shot Jacobian assembly (convenience wrapper)."""
    return SlabAssembler(state.mesh, spec).assemble(state, want_jacobian=True)[1]


def orthogonality_residual(state: SlabState, spec: FlowSpec) -> float:
    return SlabAssembler(state.mesh, spec).orthogonality_residual(state)


def fd_jacobian(assembler: SlabAssembler, state: SlabState, step: float = 1e-7):
    """Dense finite-difference Jacobian oracle (small problems only)."""
    u0 = state.unknowns()
    n = len(u0)
    J = np.zeros((n, n))
    for i in range(n):
        du = np.zeros(n)
        du[i] = step
        rp, _ = assembler.assemble(state.with_unknowns(u0 + du), want_jacobian=False)
        rm, _ = assembler.assemble(state.with_unknowns(u0 - du), want_jacobian=False)
        J[:, i] = (rp - rm) / (2 * step)
    return J
