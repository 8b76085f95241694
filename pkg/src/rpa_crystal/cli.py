"""Command-line front end: ``rpa-crystal {bands,response,epsm,dynamics,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .bands import (BandStructure, FermiData, PeriodicPotential, density_basis, fermi_data,
                    free_bands_reference, scf_periodic, solve_bands)
from .config import ConfigError, config_hash, load_config, validate_config
from .coulomb import FourierDensity
from .dielectric import b_vector, eps_m_sweep, nonzero_kbasis, small_q_limit, write_eps_csv
from .dynamics import (DriveTerm, ExternalDrive, SupercellModel, hartree_evolve, single_mode,
                       sinusoid, smooth_pulse, write_trajectory_csv)
from .errors import (FrequencyOutOfGap, GapClosed, InvalidLattice, MetallicSystem,
                     NumericalFailure, RPACrystalError)
from .lattice import Lattice, build_reciprocal, bz_grid, plane_wave_basis
from .oracle import build_supercell_reference, resolvent_solve, static_density_response
from .response import (ResponseQuery, kset_from_cutoff, polarization, t_eta, t_eta_contour,
                       write_block_csv)

log = logging.getLogger("rpa_crystal")

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class Instance:
    cfg: dict
    lattice: Lattice
    bands: BandStructure
    fermi: FermiData
    potential: PeriodicPotential


def _modes(terms):
    return {tuple(t["K"]): float(t["value"]) for t in terms}


def build_potential(cfg, lattice, basis, threads=None) -> PeriodicPotential:
    dens = density_basis(basis)
    pot = cfg["potential"]
    if pot["kind"] == "cosine":
        return PeriodicPotential.cosine(dens, _modes(pot.get("terms", [])))
    shape = PeriodicPotential.cosine(dens, _modes(pot["nuclear"]))
    coeffs = shape.coeffs.copy()
    # neutral background: N electrons' worth of positive charge per cell
    coeffs[dens.zero_index] = cfg["n_electrons"] / np.sqrt(lattice.volume)
    rho_nuc = FourierDensity(dens, coeffs, real=True)
    grid = bz_grid(basis.rl, cfg["bz_grid"])
    return scf_periodic(rho_nuc, cfg["n_electrons"], basis, grid, mixing=pot.get("mixing", 0.3),
                        tol=pot.get("tol", 1e-8), max_iter=pot.get("max_iter", 500), threads=threads)


def build_bands(cfg, threads=None):
    lattice = Lattice(np.asarray(cfg["lattice"], dtype=float))
    rl = build_reciprocal(lattice)
    basis = plane_wave_basis(rl, cfg["e_cut"])
    pot = build_potential(cfg, lattice, basis, threads)
    return lattice, pot, solve_bands(pot, basis, bz_grid(rl, cfg["bz_grid"]), threads)


def build_instance(cfg, threads=None) -> Instance:
    lattice, pot, bands = build_bands(cfg, threads)
    return Instance(cfg, lattice, bands, fermi_data(bands, cfg["n_electrons"]), pot)


def _kset(inst: Instance):
    k_cut = inst.cfg["response"]["k_cut"]
    basis = inst.bands.basis
    return kset_from_cutoff(basis, basis.e_cut / 4 if k_cut is None else k_cut)


def _sidecar(path, cfg, command, extra=None):
    meta = {"command": command, "config_hash": config_hash(cfg), "version": __version__}
    meta.update(extra or {})
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def cmd_bands(cfg, out, threads):
    lattice, pot, bands = build_bands(cfg, threads)
    path = os.path.join(out, "bands.csv")
    bands.to_csv(path)
    _sidecar(path, cfg, "bands", {"n_bands": bands.n_bands})
    # the band table is written even when the Fermi data below fails
    fermi = fermi_data(bands, cfg["n_electrons"])
    fermi.to_json(os.path.join(out, "fermi.json"))
    log.info("gap %.6g, Fermi level %.6g", fermi.gap, fermi.fermi)
    return Instance(cfg, lattice, bands, fermi, pot)


def cmd_response(cfg, out, threads):
    inst = build_instance(cfg, threads)
    r = cfg["response"]
    query = ResponseQuery(r["omegas"], r["eta"], r["q"], _kset(inst))
    block = polarization(inst.bands, inst.fermi, query, threads)
    path = os.path.join(out, "response.csv")
    write_block_csv(block, path)
    _sidecar(path, cfg, "response", {
        "eta": r["eta"], "e_cut": cfg["e_cut"], "grid": cfg["bz_grid"],
        "n_electrons": cfg["n_electrons"], "gap": inst.fermi.gap,
        "kset": query.kset.tolist(),
    })
    return block


def cmd_epsm(cfg, out, threads):
    inst = build_instance(cfg, threads)
    e = cfg["epsm"]
    g = inst.fermi.gap
    omegas = np.linspace(-e["window"] * g, e["window"] * g, e["n_omega"])
    samples = eps_m_sweep(inst.bands, inst.fermi, omegas, threads)
    path = os.path.join(out, "epsm.csv")
    write_eps_csv(samples, path)
    _sidecar(path, cfg, "epsm", {
        "gap": g,
        "L": [s.L.tolist() for s in samples],
        "asymmetry": max(s.asymmetry for s in samples),
        "min_eig": min(s.min_eig for s in samples),
        "c_condition": max(s.c_condition for s in samples),
    })
    return samples


def _drive_terms(model, specs):
    terms = []
    for s in specs:
        shape = s.get("shape", "sinusoid")
        if shape == "sinusoid":
            g, dg = sinusoid(s.get("omega", 0.5), 1.0, s.get("ramp", 0.0))
        elif shape == "pulse":
            g, dg = smooth_pulse(s.get("center", 5.0), s.get("width", 4.0))
        else:
            g, dg = (lambda t: 1.0), (lambda t: 0.0)
        terms.append(DriveTerm(single_mode(model, s["mode"], s["amplitude"]), g, dg))
    return ExternalDrive(terms, kind="charge")


def build_model(cfg, threads=None) -> SupercellModel:
    lattice = Lattice(np.asarray(cfg["lattice"], dtype=float))
    basis = plane_wave_basis(build_reciprocal(lattice), cfg["e_cut"])
    pot = build_potential(cfg, lattice, basis, threads)
    return SupercellModel.build(lattice, pot, cfg["e_cut"], cfg["dynamics"]["n_cells"], cfg["n_electrons"])


def cmd_dynamics(cfg, out, threads):
    dyn = cfg["dynamics"]
    model = build_model(cfg, threads)
    drive = _drive_terms(model, dyn["drive"])
    n = int(round(dyn["t_final"] / dyn["dt"]))
    t = np.linspace(0.0, n * dyn["dt"], n + 1)
    res = hartree_evolve(model, drive, None, t, tol=dyn["picard_tol"])
    path = os.path.join(out, "trajectory.csv")
    write_trajectory_csv(res, path)
    _sidecar(path, cfg, "dynamics", {
        "supercell_size": model.size, "gap": model.gap,
        "max_budget_residual": res.report.max_residual,
        "max_trace_drift": float(np.abs(res.trace - res.trace[0]).max()),
    })
    return res


# ---------------------------------------------------------------- validation


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def _first_nonzero_q(grid):
    for f in grid.frac:
        if np.any(f != 0):
            return f
    return grid.frac[0]


def check_free_bands(inst):
    basis = inst.bands.basis
    free = solve_bands(PeriodicPotential.zeros(density_basis(basis)), basis, inst.bands.grid)
    err = max(np.abs(e - free_bands_reference(basis, q)).max() for e, q in zip(free.energies, free.grid.cart))
    return err, 1e-12


def check_orthogonality(inst):
    ks = _kset(inst)
    g = inst.fermi.gap
    blk = t_eta(inst.bands, inst.fermi, ResponseQuery([0.0, 0.3 * g, 2 * g], 0.1, np.zeros(inst.lattice.dim), ks))
    zero = np.flatnonzero(np.all(ks == 0, axis=1))
    return float(np.abs(blk.T[:, zero, :]).max()), 1e-13


def check_contour(inst):
    ks = _kset(inst)
    eta = min(0.5, inst.fermi.gap)
    q = ResponseQuery([0.0, 0.4 * inst.fermi.gap], eta, _first_nonzero_q(inst.bands.grid), ks)
    ref = t_eta(inst.bands, inst.fermi, q).T
    return _rel(t_eta_contour(inst.bands, inst.fermi, q, n_nodes=2048), ref), 1e-6


def check_static_oracle(inst, max_states=400):
    cfg = inst.cfg
    counts = cfg["bz_grid"]
    size = int(np.prod(counts)) * len(inst.bands.basis)
    if size > max_states:
        return None, 1e-5
    modes = {}
    if cfg["potential"]["kind"] == "cosine":
        # straight from the configuration, independent of the potential builder
        for k, v in _modes(cfg["potential"].get("terms", [])).items():
            for key in (k, tuple(-x for x in k)):
                modes[key] = modes.get(key, 0.0) + v
    else:
        pot = inst.potential
        scale = 1.0 / np.sqrt(inst.lattice.volume)
        modes = {tuple(c): v * scale for c, v in zip(pot.basis.coords.tolist(), pot.coeffs)}
    ref = build_supercell_reference(inst.lattice, modes, cfg["e_cut"], counts, cfg["n_electrons"])
    q = _first_nonzero_q(inst.bands.grid)
    ks = _kset(inst)
    chi = t_eta(inst.bands, inst.fermi, ResponseQuery([0.0], 0.0, q, ks)).chi0[0]
    rl = inst.bands.basis.rl
    kc = rl.to_cartesian(ks + q)
    orc = np.array([[static_density_response(ref, kc[j], kc[i]) for j in range(len(ks))] for i in range(len(ks))])
    return _rel(chi, orc), 1e-5


def check_homogenization(inst):
    d = inst.lattice.dim
    direction = np.eye(d)[0]
    from .dielectric import eps_m

    e = eps_m(inst.bands, inst.fermi, 0.0)
    lim = small_q_limit(inst.bands, inst.fermi, 0.0, direction)
    return abs(1.0 / e.quadratic(direction) - lim) / abs(lim), 1e-3


def resolvent_b_reference(bands, fermi, omega, direction, kb):
    """``P0 b_k`` from two dense resolvent solves per occupied band."""
    from .bands import assemble_hq
    from .coulomb import FOUR_PI

    nocc = fermi.n_electrons
    acc = np.zeros(len(kb.coords), dtype=complex)
    kg = bands.basis.cart @ np.asarray(direction, dtype=float)
    for w, q, e, c in zip(bands.grid.weights, bands.grid.cart, bands.energies, bands.vectors):
        h = assemble_hq(bands.potential, bands.basis, q).matrix
        perp = np.eye(len(h)) - c[:, :nocc] @ c[:, :nocc].conj().T
        for n in range(nocc):
            grad = 1j * kg * c[:, n]
            x = resolvent_solve(h, e[n] + omega, grad, perp)
            x = resolvent_solve(h, e[n] - omega, x, perp)
            for i, K in enumerate(kb.coords):
                idx = bands.basis.shifted_indices(K)
                ok = idx >= 0
                acc[i] += w * np.sum(np.conj(c[ok, n]) * x[idx[ok]])
    return -2j * np.sqrt(FOUR_PI) / bands.cell_volume * kb.half * acc


def check_resolvent(inst):
    kb = nonzero_kbasis(inst.bands)
    om = 0.3 * inst.fermi.gap
    direction = np.eye(inst.lattice.dim)[0]
    main = b_vector(inst.bands, inst.fermi, om, direction, kb)
    ref = resolvent_b_reference(inst.bands, inst.fermi, om, direction, kb)
    return _rel(main, ref), 1e-8


def check_conservation(inst):
    cfg = dict(inst.cfg)
    cfg["dynamics"] = dict(cfg["dynamics"], n_cells=[1] * inst.lattice.dim)
    model = build_model(cfg)
    mode = [1] + [0] * (inst.lattice.dim - 1)
    drive = ExternalDrive([DriveTerm(single_mode(model, mode, 0.1), *sinusoid(0.5 * model.gap, 1.0, 1.0))],
                          kind="charge")
    res = hartree_evolve(model, drive, None, np.linspace(0, 5, 101))
    err = max(float(np.abs(res.trace - res.trace[0]).max()), float(res.projector_residual.max()))
    return err, 1e-10


CHECKS = [
    ("free_electron_bands", check_free_bands),
    ("orthogonality_zeros", check_orthogonality),
    ("contour_vs_sum_over_states", check_contour),
    ("static_response_vs_finite_difference", check_static_oracle),
    ("b_vector_vs_resolvent_solve", check_resolvent),
    ("permittivity_vs_small_q_probe", check_homogenization),
    ("hartree_conservation", check_conservation),
]


def cmd_validate(cfg, out, threads):
    inst = build_instance(cfg, threads)
    rows = []
    for name, fn in CHECKS:
        value, tol = fn(inst)
        status = "skipped" if value is None else ("pass" if value <= tol else "FAIL")
        rows.append({"check": name, "value": value, "tolerance": tol, "status": status})
        print(f"{name:40s} {status:8s} {'' if value is None else f'{value:.3e}'} (tol {tol:.0e})")
    path = os.path.join(out, "validate.json")
    with open(path, "w") as fh:
        json.dump({"checks": rows, "config_hash": config_hash(cfg), "version": __version__}, fh, indent=2)
        fh.write("\n")
    return rows


COMMANDS = {
    "bands": cmd_bands,
    "response": cmd_response,
    "epsm": cmd_epsm,
    "dynamics": cmd_dynamics,
    "validate": cmd_validate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="rpa-crystal", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML run configuration")
        s.add_argument("--output", default=None, help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, default=None, help="worker threads for q/omega maps")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        threads = args.threads or cfg["threads"]
        if args.threads is not None:
            cfg["threads"] = args.threads
        out = args.output or cfg["output"]
        os.makedirs(out, exist_ok=True)
        result = COMMANDS[args.command](cfg, out, threads)
    except (ConfigError, InvalidLattice) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MetallicSystem, FrequencyOutOfGap, GapClosed) as exc:
        print(f"physical precondition violated: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except (NumericalFailure, RPACrystalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.command == "validate" and any(r["status"] == "FAIL" for r in result):
        return EXIT_NUMERIC
    return EXIT_OK


__all__ = ["main", "build_instance", "build_model", "validate_config"]
