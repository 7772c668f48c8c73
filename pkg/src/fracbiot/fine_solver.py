"""Monolithic implicit L1 time stepping of the coupled multicontinuum
poroelasticity system on the fine grid (the reference solver).

Unknown layout: pressures stacked by continuum, then the interleaved
displacement vector.  The left-hand matrix is constant across steps (the L1
weights are fixed), so it is factorized once and reused; the fractional memory
enters only through the right-hand side sums over the stored history.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (SystemMatrices, apply_dirichlet_rows,
                       assemble_manufactured_fracture_source,
                       assemble_manufactured_source,
                       assemble_manufactured_vector_source, assemble_system,
                       tagged_nodes)
from .errors import ConfigurationError, ContractError, NumericalError
from .fractional import TimeHistory, l1_weights, memory_sum
from .mesh import FineMesh

LINEAR_RESIDUAL_RTOL = 1e-10


@dataclass(frozen=True)
class DirichletBC:
    """One Dirichlet constraint: a continuum name or 'ux'/'uy', boundary tags,
    and a value (float, or callable (x, y, t) -> value)."""

    target: str
    tags: tuple
    value: object = 0.0


def roller_bc():
    """u_x = 0 on left/right, u_y = 0 on top/bottom (traction natural)."""
    return [DirichletBC("ux", ("left", "right")), DirichletBC("uy", ("top", "bottom"))]


@dataclass
class SolutionState:
    pressures: list          # per continuum, in continuum DOF space
    u: np.ndarray
    n: int
    t: float


class FineSolver:
    """Assembles, constrains and steps the fully discrete system."""

    def __init__(self, mesh: FineMesh, continua, exchange, elasticity, bc,
                 t_final, n_steps, p0=1.0, flow_sources=None, mech_source=None,
                 linear_solver="direct"):
        if n_steps < 1 or t_final <= 0.0:
            raise ConfigurationError("need n_steps >= 1 and t_final > 0")
        self.mesh = mesh
        self.continua = list(continua)
        self.bc = list(bc)
        self.tau = t_final / n_steps
        self.n_steps = n_steps
        self.t_final = t_final
        self.p0 = p0
        self.flow_sources = dict(flow_sources or {})
        self.mech_source = mech_source
        if linear_solver not in ("direct", "iterative"):
            raise ConfigurationError(f"unknown linear solver {linear_solver!r}")
        self.linear_solver = linear_solver

        self.sm: SystemMatrices = assemble_system(mesh, self.continua, exchange, elasticity)
        self.layout = self.sm.layout

        self.w_alpha = [l1_weights(s.alpha, self.tau, n_steps) for s in self.continua]
        self.w_beta = [l1_weights(s.beta, self.tau, n_steps) for s in self.continua]

        self._collect_dirichlet()
        self._build_lhs()

        self.p_hist = None
        self.u_hist = None
        self.states = []

    # -- setup ------------------------------------------------------------

    def _collect_dirichlet(self):
        lay = self.layout
        mesh = self.mesh
        dofs, values = [], []
        for c in self.bc:
            if c.target in ("ux", "uy"):
                comp = 0 if c.target == "ux" else 1
                nodes = tagged_nodes(mesh, c.tags)
                gdofs = lay.n_p + 2 * nodes + comp
            else:
                i = lay.index(c.target)
                nodes = tagged_nodes(mesh, c.tags)
                if self.continua[i].support == "fracture":
                    nodes = np.array([n for n in nodes if n in mesh.frac_dof_of_node],
                                     dtype=np.int64)
                    local = np.array([mesh.frac_dof_of_node[int(n)] for n in nodes],
                                     dtype=np.int64)
                else:
                    local = nodes
                gdofs = lay.offsets[i] + local
            for gd, node in zip(gdofs, nodes):
                dofs.append(int(gd))
                values.append((int(node), c.value))
        order = np.argsort(dofs, kind="stable")
        self.dirichlet_dofs = np.array([dofs[o] for o in order], dtype=np.int64)
        self._dirichlet_values = [values[o] for o in order]
        if len(set(self.dirichlet_dofs.tolist())) != len(self.dirichlet_dofs):
            raise ConfigurationError("conflicting Dirichlet constraints on one DOF")

    def dirichlet_values(self, t):
        out = np.empty(len(self._dirichlet_values))
        for k, (node, value) in enumerate(self._dirichlet_values):
            if callable(value):
                x, y = self.mesh.nodes[node]
                out[k] = value(x, y, t)
            else:
                out[k] = value
        return out

    def _build_lhs(self):
        lay = self.layout
        sm = self.sm
        nC = len(self.continua)
        blocks = [[None] * (nC + 1) for _ in range(nC + 1)]
        for i in range(nC):
            blocks[i][i] = self.w_alpha[i].zeta_tau * sm.M[i] + sm.A[i]
            blocks[i][nC] = self.w_beta[i].zeta_tau * sm.D[i]
        for (i, j), Qc in sm.Q_cross.items():
            blocks[i][i] = blocks[i][i] + sm.Q_diag[(i, j)]
            blocks[j][j] = blocks[j][j] + sm.Q_diag[(j, i)]
            blocks[i][j] = -Qc if blocks[i][j] is None else blocks[i][j] - Qc
            blocks[j][i] = -Qc.T if blocks[j][i] is None else blocks[j][i] - Qc.T
        # mechanics row, as printed in the discrete system: sum_j D_j^T p_j + A_u u
        for j in range(nC):
            blocks[nC][j] = sm.D[j].T
        blocks[nC][nC] = sm.A_u

        lhs = sp.bmat(blocks, format="csr")
        if self.dirichlet_dofs.size:
            lhs = apply_dirichlet_rows(lhs, self.dirichlet_dofs)
        self.lhs = lhs
        if self.linear_solver == "direct":
            try:
                self._factor = spla.splu(lhs.tocsc())
            except RuntimeError as exc:
                raise NumericalError(
                    f"LHS factorization failed (n={lhs.shape[0]}, "
                    f"nnz={lhs.nnz}): {exc}") from exc
        else:
            self._ilu = spla.spilu(lhs.tocsc(), drop_tol=1e-8, fill_factor=30)

    def _solve(self, rhs):
        if self.linear_solver == "direct":
            x = self._factor.solve(rhs)
            # one step of iterative refinement: the raw factor solve can sit
            # right at the residual tolerance for high-contrast systems
            x = x + self._factor.solve(rhs - self.lhs @ x)
        else:
            prec = spla.LinearOperator(self.lhs.shape, self._ilu.solve)
            x, info = spla.gmres(self.lhs, rhs, rtol=1e-13, atol=0.0,
                                 restart=200, maxiter=50, M=prec)
            if info != 0:
                raise NumericalError(f"iterative solve did not converge (info={info})")
        res = np.linalg.norm(self.lhs @ x - rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0 and res > LINEAR_RESIDUAL_RTOL * scale:
            raise NumericalError(f"linear residual {res / scale:.3e} above tolerance")
        return x

    # -- time stepping ----------------------------------------------------

    def split(self, x):
        lay = self.layout
        ps = [x[lay.pressure_slice(i)].copy() for i in range(len(self.continua))]
        return ps, x[lay.n_p:].copy()

    def initialize(self) -> SolutionState:
        """p_i^0 = p0 at free DOFs (Dirichlet values where imposed); u^0 from
        the elastostatic solve against p^0 under the displacement BCs."""
        lay = self.layout
        p_full = np.full(lay.n_p, float(self.p0))
        vals0 = self.dirichlet_values(0.0)
        pdofs_mask = self.dirichlet_dofs < lay.n_p
        p_full[self.dirichlet_dofs[pdofs_mask]] = vals0[pdofs_mask]
        # mechanics solve: A_u u = b_u - sum_j D_j^T p_j
        rhs_u = -sum(self.sm.D[j].T @ p_full[lay.pressure_slice(j)]
                     for j in range(len(self.continua)))
        if self.mech_source is not None:
            rhs_u = rhs_u + assemble_manufactured_vector_source(
                self.mesh, lambda x, y: self.mech_source(x, y, 0.0))

        udofs = self.dirichlet_dofs[self.dirichlet_dofs >= lay.n_p] - lay.n_p
        A_u = apply_dirichlet_rows(self.sm.A_u, udofs) if udofs.size else self.sm.A_u
        if udofs.size:
            rhs_u[udofs] = vals0[self.dirichlet_dofs >= lay.n_p]
        try:
            u0 = spla.spsolve(A_u.tocsc(), rhs_u)
        except RuntimeError as exc:
            raise ConfigurationError(f"singular elasticity block: {exc}") from exc

        ps = [p_full[lay.pressure_slice(i)] for i in range(len(self.continua))]
        state = SolutionState(pressures=ps, u=u0, n=0, t=0.0)
        self.p_hist = [TimeHistory(p) for p in ps]
        self.u_hist = TimeHistory(u0)
        self.states = [state]
        return state

    def build_rhs(self, n) -> np.ndarray:
        """Right-hand side of step n (history must hold steps 0..n-1)."""
        lay = self.layout
        if self.p_hist is None or len(self.u_hist) != n:
            raise ContractError("history does not cover steps 0..n-1")
        t_n = n * self.tau
        rhs = np.zeros(lay.n_total)
        for i, s in enumerate(self.continua):
            wa, wb = self.w_alpha[i], self.w_beta[i]
            mem_p = memory_sum(wa, self.p_hist[i])
            mem_u = memory_sum(wb, self.u_hist)
            part = wa.zeta_tau * (self.sm.M[i] @ (self.p_hist[i][n - 1] - mem_p))
            part = part + wb.zeta_tau * (self.sm.D[i] @ (self.u_hist[n - 1] - mem_u))
            if s.name in self.flow_sources:
                f = self.flow_sources[s.name]
                assemble = (assemble_manufactured_source if s.support == "bulk"
                            else assemble_manufactured_fracture_source)
                part = part + assemble(self.mesh, lambda x, y: f(x, y, t_n))
            rhs[lay.pressure_slice(i)] = part
        if self.mech_source is not None:
            rhs[lay.n_p:] = assemble_manufactured_vector_source(
                self.mesh, lambda x, y: self.mech_source(x, y, t_n))
        if self.dirichlet_dofs.size:
            rhs[self.dirichlet_dofs] = self.dirichlet_values(t_n)
        return rhs

    def step(self) -> SolutionState:
        n = len(self.states)
        rhs = self.build_rhs(n)
        x = self._solve(rhs)
        ps, u = self.split(x)
        for i, p in enumerate(ps):
            self.p_hist[i].append(p)
        self.u_hist.append(u)
        state = SolutionState(pressures=ps, u=u, n=n, t=n * self.tau)
        self.states.append(state)
        return state

    def run(self):
        """Full trajectory p^0..p^N as a list of SolutionState."""
        if not self.states:
            self.initialize()
        while len(self.states) <= self.n_steps:
            self.step()
        return self.states
