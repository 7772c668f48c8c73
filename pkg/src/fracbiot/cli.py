"""Command line interface.

Subcommands:
    run     full experiment (fine reference + multiscale sweep + tables)
    fine    fine reference solve only
    basis   build and dump the multiscale space
    verify  built-in fractional-ODE and manufactured-solution checks

Exit codes: 0 success, 2 validation/configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import FracbiotError, NumericalError, ValidationError
from .errors import ConfigurationError, ContractError, DataError, GeometryError, MeshParseError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_VALIDATION_ERRORS = (ValidationError, ConfigurationError, DataError,
                      MeshParseError, GeometryError, ContractError)


def _parser():
    p = argparse.ArgumentParser(prog="fracbiot",
                                description="time-fractional poroelasticity "
                                            "multiscale solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name, desc in (("run", "full experiment"),
                       ("fine", "fine reference solve only"),
                       ("basis", "build and dump the multiscale space"),
                       ("verify", "run built-in analytic verification suites")):
        s = sub.add_parser(name, help=desc)
        if name != "verify":
            s.add_argument("--scenario", required=True, help="scenario TOML file")
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--threads", type=int, default=1,
                       help="worker threads for patch computations")
    return p


def _cmd_run(args):
    from .experiment import run_experiment
    from .scenario import parse_scenario
    scn = parse_scenario(args.scenario)
    report = run_experiment(scn, out_dir=args.out, threads=args.threads)
    for row in report.rows:
        print(f"M={row.m} DOF_H={row.dof_h} eL2_u={row.e_l2_u:.3f}% "
              + " ".join(f"eL2_p{c + 1}={v:.3f}%" for c, v in enumerate(row.e_l2_p)))
    return EXIT_OK


def _cmd_fine(args):
    from .experiment import run_fine_only
    from .scenario import parse_scenario
    scn = parse_scenario(args.scenario)
    fine = run_fine_only(scn, out_dir=args.out)
    final = fine.states[-1]
    print(f"fine solve complete: {len(fine.states) - 1} steps, "
          f"{fine.layout.n_total} DOFs, |u|_max={np.abs(final.u).max():.6g}")
    return EXIT_OK


def _cmd_basis(args):
    from .experiment import dump_basis
    from .scenario import parse_scenario
    scn = parse_scenario(args.scenario)
    ms = dump_basis(scn, out_dir=args.out, threads=args.threads)
    print(f"multiscale space built: {ms.n_vertices} patches, m_max={ms.m_max}, "
          f"R_p {ms.R_p.shape}, R_u {ms.R_u.shape}")
    return EXIT_OK


def _cmd_verify(args):
    """Fractional-ODE convergence against the Mittag-Leffler solution, and a
    linear-in-space/time manufactured solution on a small fractured mesh."""
    from .fractional import mittag_leffler, solve_scalar_fractional_decay
    ok = True
    for alpha in (0.5, 0.8, 0.9):
        errs = []
        for n in (40, 80, 160):
            traj = solve_scalar_fractional_decay(alpha, 1.0, 1.0, 1.0 / n, n)
            exact = mittag_leffler(alpha, -1.0)
            errs.append(abs(traj[-1] - exact))
        order = np.log2(errs[1] / errs[2])
        # the decay solution has a t^alpha kink at t=0, so on uniform grids the
        # final-time L1 error is first order regardless of alpha
        good = order >= 0.8 and errs[-1] < 5e-3
        ok &= good
        print(f"fractional ODE alpha={alpha}: err(1/160)={errs[-1]:.3e} "
              f"order={order:.2f} [{'ok' if good else 'FAIL'}]")

    err = _mms_error()
    good = err < 1e-9
    ok &= good
    print(f"manufactured solution: max nodal error {err:.3e} [{'ok' if good else 'FAIL'}]")
    if not ok:
        raise NumericalError("verification suite failed")
    return EXIT_OK


def _mms_error():
    from .assembly import ContinuumSpec, ElasticitySpec, ExchangeSpec
    from .fine_solver import DirichletBC, FineSolver
    from .meshgen import rectangle_mesh

    gamma = 0.1
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 8, 8,
                          fractures=[((0.0, 0.5), (1.0, 0.5))])
    continua = [ContinuumSpec("matrix", "bulk", 1.0, 1.0, gamma=gamma),
                ContinuumSpec("fracture", "fracture", 1.0, 1.0)]
    exch = ExchangeSpec()
    el = ElasticitySpec(E=1.0, nu=0.3)
    tags = ("left", "right", "top", "bottom")
    bc = [DirichletBC("matrix", tags, lambda x, y, t: t * x),
          DirichletBC("fracture", tags, lambda x, y, t: t * x),
          DirichletBC("ux", tags, lambda x, y, t: t * x),
          DirichletBC("uy", tags, 0.0)]
    # p = t*x, u = (t*x, 0): c dp/dt = c*x, gamma div(du/dt) = gamma,
    # -div(k grad p) = 0; mechanics row sum D^T p + A_u u needs load -gamma*t*(1,0)
    solver = FineSolver(mesh, continua, exch, el, bc, t_final=1.0, n_steps=10,
                        p0=0.0,
                        flow_sources={"matrix": lambda x, y, t: 1.0 * x + gamma,
                                      "fracture": lambda x, y, t: 1.0 * x},
                        mech_source=lambda x, y, t: (-gamma * t, 0.0))
    solver.run()
    st = solver.states[-1]
    x = mesh.nodes[:, 0]
    err_p = np.abs(st.pressures[0] - 1.0 * x).max()
    err_pf = np.abs(st.pressures[1] - 1.0 * x[mesh.fracture_nodes]).max() \
        if mesh.n_fracture_dofs else 0.0
    err_u = max(np.abs(st.u[0::2] - 1.0 * x).max(), np.abs(st.u[1::2]).max())
    return max(err_p, err_pf, err_u)


def main(argv=None):
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "fine": _cmd_fine,
               "basis": _cmd_basis, "verify": _cmd_verify}[args.command]
    try:
        return handler(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FracbiotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
