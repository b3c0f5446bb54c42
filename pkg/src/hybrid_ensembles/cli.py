"""Command-line front end.

Subcommands: brackets, ehrenfest, measure, thermal, selfcheck.  Each runs
its verification battery, writes plot-ready CSV and/or a JSON report, and
exits 0 when every check passed, 1 on a verification failure, 2 on a
usage/configuration error.  Identical configuration and seed give
byte-identical outputs.  HYBRID_ENSEMBLE_THREADS caps the FFT worker pool.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import scipy.fft as sfft

from . import __version__
from .bracket import (
    jacobi_residual,
    poisson_bracket_ps,
    poisson_bracket_psi,
    strong_separability_integral,
    strong_separability_probe,
    verify_cc_homomorphism,
    verify_configuration_separability,
    verify_qq_homomorphism,
)
from .config import ConfigError, RunConfig
from .dynamics import DynamicsError, EhrenfestBenchmark, default_ehrenfest_grid, ehrenfest_experiment
from .ensemble import EnsembleError, from_ps, gaussian_packet, phase_point_ensemble, product
from .grid import ClassicalSector, GridError, HybridGrid, QuantumSector
from .measurement import (
    KappaProfile,
    MeasurementError,
    MeasurementSetup,
    collapse,
    evolve_measurement,
    exact_post_measurement,
    pointer_distribution,
)
from .observables import (
    ClassicalObservable,
    GenericFunctional,
    ObservableError,
    QuantumObservable,
    homogeneity_check,
    operator_library,
    phase_library,
    resolve_observable,
)
from .reporting import Stopwatch, VerificationReport, write_csv, write_json
from .thermal import ThermalError, canonical_table, hamiltonian_library, quantum_gibbs_closed_form
from . import thermal as thermal_mod

USAGE_ERROR = 2
VERIFY_ERROR = 1


def _fingerprint(**extra) -> dict:
    fp = {
        "package_version": __version__,
        "threads": os.environ.get("HYBRID_ENSEMBLE_THREADS", "1"),
    }
    fp.update(extra)
    return fp


# ---------------------------------------------------------------------------
# standard fixtures
# ---------------------------------------------------------------------------


def _bracket_fixture(hbar: float = 1.0):
    """Entangled smooth ensemble on a continuous-q grid: amplitude-correlated
    Gaussian with a phase coupling, nodeless and spectrally resolved."""
    grid = HybridGrid(QuantumSector.continuous(-9, 9, 64), ClassicalSector(-9, 9, 64))
    P = np.exp(-(grid.q**2 + grid.x**2 + 0.5 * grid.q * grid.x))
    S = 0.3 * grid.q * grid.x
    return from_ps(grid, P, S, hbar)


def run_brackets(args) -> int:
    report = VerificationReport(fingerprint=_fingerprint(suite="brackets"))
    with Stopwatch() as sw:
        e = _bracket_fixture()
        grid = e.grid
        names = ("x", "k", "x2", "k2", "xk", "ho")
        fs = {n: phase_library(n) for n in names}
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                report.add_check(verify_cc_homomorphism(fs[a], fs[b], e))
        ops = {n: operator_library(n, grid) for n in ("q", "q2", "p")}
        ops["kinetic"] = operator_library("kinetic", grid, m=1.0)
        keys = list(ops)
        for i, a in enumerate(keys):
            for b in keys[i + 1 :]:
                report.add_check(verify_qq_homomorphism(ops[a], ops[b], e))
        for chk in verify_configuration_separability(
            e, g=phase_library("x2"), M=ops["kinetic"], G=ops["q2"], f=fs["ho"]
        ):
            report.add_check(chk)
        probe = strong_separability_probe(e)
        integral = strong_separability_integral(e)
        report.add("strong separability violation (bracket vs explicit integral)", probe.value, integral, 1e-6 * max(1.0, abs(integral)), "quadrature of the explicit kinetic-kinetic integral")
        report.add("strong separability violation is nonzero", min(abs(probe.value), 2e-3), 2e-3, 1.001e-3, "entangled fixture")
        psi_q = gaussian_packet(grid.quantum.coords, 0.4, 1.0)
        psi_c = gaussian_packet(grid.classical.coords, -0.3, 0.9, momentum=0.7)
        prod = product(grid, psi_q, psi_c)
        report.add("strong separability on a product ensemble", strong_separability_probe(prod).value, 0.0, 1e-9, "independent ensemble")
        # Lie structure
        A, B = ClassicalObservable(fs["x"]), ClassicalObservable(fs["k"])
        ab = poisson_bracket_ps(A, B, e).value
        ba = poisson_bracket_ps(B, A, e).value
        report.add("antisymmetry {C_x,C_k} + {C_k,C_x}", ab + ba, 0.0, 1e-12, "structural")
        report.add("{C_x,C_k} = 1", ab, 1.0, 1e-12, "normalization")
        ps = poisson_bracket_ps(A, QuantumObservable(ops["kinetic"]), e)
        psi_form = poisson_bracket_psi(A, QuantumObservable(ops["kinetic"]), e)
        report.add("PS form vs psi form bracket", ps.value, psi_form.value, max(1e-8, ps.estimated_error), "dual evaluation routes")
        report.add(
            "Jacobi residual (C_x, C_k, C_x2)",
            jacobi_residual(ClassicalObservable(fs["x"]), ClassicalObservable(fs["k"]), ClassicalObservable(fs["x2"]), _classical_line_fixture(), eps=1e-5),
            0.0,
            1e-4,
            "numerical outer variational derivatives",
        )
    report.wall_time = sw.elapsed
    report.print_lines()
    if args.out:
        write_json(args.out, report.as_dict())
    return 0 if report.passed else VERIFY_ERROR


def _classical_line_fixture():
    grid = HybridGrid(QuantumSector.discrete(1), ClassicalSector(-8, 8, 64))
    P = np.exp(-grid.x**2)
    S = 0.7 * np.sin(2 * np.pi * grid.x / 16.0)
    return from_ps(grid, P, S)


def run_ehrenfest(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    phys = cfg.physics
    exp = cfg.experiment
    bench = EhrenfestBenchmark(
        m_q=phys.get("m_q", 1.0),
        m_c=phys.get("m_c", 1.0),
        omega=phys.get("omega", 1.0),
        Omega=phys.get("big_omega", 1.0),
        coupling_K=phys.get("coupling_k", 0.25),
        q0=exp.get("q0", 1.0),
        p0=exp.get("p0", 0.0),
        x0=exp.get("x0", -1.0),
        k0=exp.get("k0", 0.0),
        hbar=phys.get("hbar", 1.0),
        sigma_q=exp.get("sigma_q", float(np.sqrt(2.0))),
        sigma_x=exp.get("sigma_x", 1.0),
    )
    g = cfg.grid
    if g:
        cfg.require("grid", "q_min", "q_max", "n_q", "x_min", "x_max", "n_x")
        grid = HybridGrid(
            QuantumSector.continuous(g["q_min"], g["q_max"], g["n_q"]),
            ClassicalSector(g["x_min"], g["x_max"], g["n_x"]),
            g.get("scheme", "spectral"),
        )
    else:
        grid = default_ehrenfest_grid()
    t_final = exp.get("t_final", float(4 * np.pi))
    dt = exp.get("dt", 1.1e-3)
    record_every = exp.get("record_every", 4)

    result = ehrenfest_experiment(bench, t_final, dt, grid=grid, record_every=record_every)
    rec = result.record
    table = {
        "t": rec.times,
        "mean_x": rec.expectations["mean_x"],
        "mean_k": rec.expectations["mean_k"],
        "mean_q": rec.expectations["mean_q"],
        "mean_p": rec.expectations["mean_p"],
        "dV_dx": rec.expectations["dV_dx"],
        "dV_dq": rec.expectations["dV_dq"],
        "energy": rec.energy,
        "norm": rec.norm,
        "ode_x": result.ode_reference["ode_x"],
        "ode_k": result.ode_reference["ode_k"],
        "ode_q": result.ode_reference["ode_q"],
        "ode_p": result.ode_reference["ode_p"],
    }
    out_csv = args.out or cfg.output.get("csv")
    if out_csv:
        write_csv(out_csv, table)
    report = VerificationReport(fingerprint=_fingerprint(suite="ehrenfest", grid=grid.descriptor(), dt=dt, t_final=t_final))
    for name, dev in result.deviations.items():
        report.add(f"{name} matches classical ODE oracle", dev, 0.0, args.tolerance, "DOP853 integration of the closed centroid system")
    for name, resid in result.residuals.items():
        report.add(name, resid, 0.0, args.tolerance, "centered differences of recorded expectations")
    energy_drift = float(np.max(np.abs(rec.energy - rec.energy[0])) / max(abs(rec.energy[0]), 1e-300))
    report.add("relative energy drift", energy_drift, 0.0, 1e-7, "ensemble Hamiltonian value along the run")
    report.add("per-step norm drift", rec.max_norm_drift, 0.0, 1e-10, "quadrature of |psi|^2 before renormalization")
    report.print_lines()
    json_out = cfg.output.get("json")
    if json_out:
        write_json(json_out, report.as_dict())
    return 0 if report.passed else VERIFY_ERROR


def _parse_state(text: str) -> np.ndarray:
    try:
        return np.array([complex(tok.strip().replace(" ", "")) for tok in text.split(",")], dtype=complex)
    except ValueError as err:
        raise ConfigError(f"cannot parse state amplitudes {text!r}: {err}") from err


def run_measure(args) -> int:
    psi_q = _parse_state(args.state)
    d = psi_q.shape[0]
    grid = HybridGrid(QuantumSector.discrete(d), ClassicalSector(-6, 6, 256))
    if args.operator.startswith("diag:"):
        vals = [float(t) for t in args.operator[5:].split(",")]
        M = operator_library("diag", grid, 1.0, *vals)
    else:
        M = operator_library(args.operator, grid)
    pointer = gaussian_packet(grid.classical.coords, 0.0, args.pointer_width)
    setup = MeasurementSetup(M, KappaProfile.bump(args.K, args.duration), pointer)

    exact = exact_post_measurement(psi_q, setup, grid)
    numeric = evolve_measurement(psi_q, setup, grid, dt=args.dt)
    l2 = float(np.sqrt(grid.integrate(np.abs(numeric.psi - exact.psi) ** 2)))
    outcome = pointer_distribution(exact, setup)

    report = VerificationReport(fingerprint=_fingerprint(suite="measure", operator=M.label, K=args.K))
    report.add("hybrid Schroedinger evolution vs exact shifted sum (L2)", l2, 0.0, 1e-6, "closed-form displaced-branch solution")
    weights_expected = [(lam, float(np.real(psi_q.conj() @ (E @ psi_q)) / np.real(psi_q.conj() @ psi_q))) for lam, E in setup.eigensystem]
    for (lam, w), (_, w_exp) in zip(outcome.branch_weights, weights_expected):
        report.add(f"branch weight at eigenvalue {lam:g}", w, w_exp, 1e-9, "projector algebra <psi|E_n|psi>")
    collapsed = None
    if args.collapse_at is not None and args.collapse_at != "none":
        a = float(args.collapse_at)
        collapsed = collapse(exact, a, setup)
        report.add("collapsed ensemble norm", collapsed.norm(), 1.0, 1e-9, "quadrature")
    report.print_lines()
    if args.out:
        if args.out.endswith(".json"):
            payload = report.as_dict()
            payload["pointer_density"] = outcome.pointer_density.tolist()
            payload["x"] = grid.classical.coords.tolist()
            payload["branch_weights"] = [[lam, w] for lam, w in outcome.branch_weights]
            if collapsed is not None:
                payload["quantum_marginal_after_collapse"] = collapsed.marginal_quantum().tolist()
            write_json(args.out, payload)
        else:
            write_csv(args.out, {"x": grid.classical.coords, "pointer_density": outcome.pointer_density})
    return 0 if report.passed else VERIFY_ERROR


def run_thermal(args) -> int:
    H = _parse_label_call(args.hamiltonian, hamiltonian_library)
    observables = [
        ("H", H),
        ("x2", phase_library("x2")),
        ("kinetic", phase_library("kinetic")),
    ]
    results = canonical_table(
        [f for _, f in observables],
        H,
        beta=args.beta,
        n_samples=args.samples,
        T_avg=args.t_avg,
        sampler=args.sampler,
        seed=args.seed,
    )
    report = VerificationReport(fingerprint=_fingerprint(suite="thermal", hamiltonian=H.label, beta=args.beta, seed=args.seed))
    rows = {"observable": [], "mixture_value": [], "stderr": [], "quadrature_reference": [], "z_score": []}
    for (name, _), res in zip(observables, results):
        rows["observable"].append(name)
        rows["mixture_value"].append(res.value)
        rows["stderr"].append(res.stderr)
        rows["quadrature_reference"].append(res.quadrature_reference)
        rows["z_score"].append(res.z_score)
        report.add(f"<{name}> vs phase-space quadrature (3 sigma)", res.value, res.quadrature_reference, 3.0 * res.stderr, "2D Gauss-Legendre quadrature of the canonical density")
    report.print_lines()
    if args.out:
        write_csv(args.out, rows)
    return 0 if report.passed else VERIFY_ERROR


def _parse_label_call(label: str, factory):
    label = label.strip()
    if "(" in label:
        name, raw = label.split("(", 1)
        raw = raw.rstrip(")")
        params = {}
        for tok in raw.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if "=" not in tok:
                raise ConfigError(f"parameters must be key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            params[k.strip()] = float(v)
        return factory(name.strip(), **params)
    return factory(label)


def run_selfcheck(args) -> int:
    report = VerificationReport(fingerprint=_fingerprint(suite="selfcheck"))
    with Stopwatch() as sw:
        e = _bracket_fixture()
        grid = e.grid
        fs = {n: phase_library(n) for n in ("x", "k", "x2", "ho")}
        report.add_check(verify_cc_homomorphism(fs["x"], fs["k"], e, tolerance=1e-12))
        report.add_check(verify_cc_homomorphism(fs["x2"], fs["ho"], e))
        ops = {"q": operator_library("q", grid), "p": operator_library("p", grid), "kin": operator_library("kinetic", grid, m=1.0)}
        report.add_check(verify_qq_homomorphism(ops["q"], ops["p"], e))
        for chk in verify_configuration_separability(e, g=phase_library("x2"), M=ops["kin"], G=operator_library("q2", grid), f=fs["ho"]):
            report.add_check(chk)
        probe = strong_separability_probe(e)
        report.add("strong separability violation (vs explicit integral)", probe.value, strong_separability_integral(e), 1e-6, "quadrature of the explicit integral")
        for label in ("C:x", "C:kinetic(m=1)", "Q:q", "Q:kinetic(m=1)"):
            obs = resolve_observable(label, grid)
            rs, rl = homogeneity_check(obs, e, 2.0)
            report.add(f"homogeneity of {label} (scaling)", rs, 0.0, 1e-9, "direct evaluation at scaled density")
            report.add(f"homogeneity of {label} (local density)", rl, 0.0, 1e-9, "quadrature of P dA/dP")
        counter = GenericFunctional(lambda st: st.grid.integrate(st.P**2), grad_P_fn=lambda st: 2 * st.P, grad_S_fn=lambda st: np.zeros(st.grid.shape), label="int P^2")
        rs, _ = homogeneity_check(counter, e, 2.0)
        expected = 2.0 * (2.0 - 1.0) * e.grid.integrate(e.P**2)
        report.add("int P^2 counterexample residual", rs, expected, 1e-12, "direct evaluation")
        # measurement quick check
        mgrid = HybridGrid(QuantumSector.discrete(2), ClassicalSector(-6, 6, 256))
        pointer = gaussian_packet(mgrid.classical.coords, 0.0, 0.12)
        setup = MeasurementSetup(operator_library("sigma_z", mgrid), KappaProfile.bump(1.0, 1.0), pointer)
        psi_q = np.array([np.sqrt(0.3), np.sqrt(0.7)])
        out = pointer_distribution(exact_post_measurement(psi_q, setup, mgrid), setup)
        for (lam, w), w_exp in zip(out.branch_weights, (0.7, 0.3)):
            report.add(f"pointer branch weight at {lam:+g}", w, w_exp, 1e-9, "projector algebra")
        # quantum Gibbs quick check
        op = operator_library("diag", mgrid, 1.0, -1.0, 1.0)
        report.add("quantum Gibbs average vs two-level closed form", quantum_gibbs_closed_form(op, 1.3), float(-np.tanh(1.3)), 1e-12, "analytic tanh")
    report.wall_time = sw.elapsed
    report.print_lines()
    if args.out:
        write_json(args.out, report.as_dict())
    return 0 if report.passed else VERIFY_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybens", description="Hybrid quantum-classical configuration ensembles")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("brackets", help="verify the bracket identity battery")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(fn=run_brackets)

    p = sub.add_parser("ehrenfest", help="coupled-oscillator benchmark vs the classical ODE oracle")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=run_ehrenfest)

    p = sub.add_parser("measure", help="pointer measurement protocol")
    p.add_argument("--operator", default="sigma_z", help="sigma_x|sigma_y|sigma_z|diag:v0,v1,...")
    p.add_argument("--state", default="0.7071067811865476,0.7071067811865476", help="comma-separated complex amplitudes")
    p.add_argument("--K", type=float, default=1.0, help="total coupling impulse")
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--pointer-width", type=float, default=0.12, dest="pointer_width")
    p.add_argument("--collapse-at", default=None, dest="collapse_at", help="pointer reading (or 'none')")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--out", help="CSV or JSON output path")
    p.set_defaults(fn=run_measure)

    p = sub.add_parser("thermal", help="thermal mixture vs canonical quadrature")
    p.add_argument("--hamiltonian", default="ho(m=1,omega=1)")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--t-avg", type=float, default=None, dest="t_avg")
    p.add_argument("--sampler", default="importance", choices=("importance", "metropolis"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(fn=run_thermal)

    p = sub.add_parser("selfcheck", help="run the invariant battery with shipped defaults")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(fn=run_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize --help to 0
        return int(exc.code or 0)
    workers = os.environ.get("HYBRID_ENSEMBLE_THREADS")
    try:
        nworkers = max(1, int(workers)) if workers else 1
    except ValueError:
        print(f"error: HYBRID_ENSEMBLE_THREADS must be an integer, got {workers!r}", file=sys.stderr)
        return USAGE_ERROR
    try:
        with sfft.set_workers(nworkers):
            return args.fn(args)
    except (ConfigError, GridError, EnsembleError, ObservableError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (DynamicsError, MeasurementError, ThermalError) as err:
        print(f"run failed: {err}", file=sys.stderr)
        return VERIFY_ERROR


if __name__ == "__main__":
    sys.exit(main())
