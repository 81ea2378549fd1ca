"""``vspin`` command line.

Exit status: 0 on success, 2 on invalid input, 3 when a solver or fit
does not converge.  Errors go to standard error as ``E:<code>: message``.
"""

import argparse
import dataclasses
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import io as vio
from .config import RunConfig, config_from_dict, parse_config
from .errors import ConvergenceError, IntegrationError, VSpinError

log = logging.getLogger("vspin")

SUBCOMMANDS = ("eig", "spectrum", "map", "dynamics", "fit-t1", "fit-depletion", "fit-doublet", "fit-hyperfine")
EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3


class NotConverged(Exception):
    pass


def packaged_fixture(name="recovery_4h.csv"):
    return resources.files("vspin") / "data" / name


# ---------------------------------------------------------------------------
# subcommands


def _eig(cfg, out):
    from .hamiltonian import solve_manifold
    model, c = cfg.defect_model(), cfg.physical_constants()
    rows = []
    for B in cfg.eig.fields:
        for name, params in (("ground", model.ground), ("excited", model.excited)):
            es = solve_manifold(params, B, c)
            for k in range(len(es)):
                rows.append((B, name, k, es.energies[k], es.electron_branch[k], es.nuclear_label[k],
                             es.nuclear_weight[k]))
    header = ["b_mT", "manifold", "index", "energy_MHz", "branch", "nuclear_label", "nuclear_weight"]
    return [vio.write_csv(out / "levels.csv", header, rows)]


def _spectrum(cfg, out):
    from .spectra import enumerate_transitions
    model, c = cfg.defect_model(), cfg.physical_constants()
    rows = []
    for B in cfg.eig.fields:
        for t in enumerate_transitions(model, B, c, cfg.scan.spin_flip_weight):
            rows.append((B, t.gs_index, t.es_index, t.frequency_offset, t.strength, t.gs_branch, t.es_branch,
                         t.gs_nuclear, t.es_nuclear))
    header = ["b_mT", "gs_index", "es_index", "frequency_offset_MHz", "strength", "gs_branch", "es_branch",
              "gs_nuclear", "es_nuclear"]
    return [vio.write_csv(out / "transitions.csv", header, rows)]


def _map(cfg, out):
    from .spectra import synthesize_two_laser_map
    model, c, s = cfg.defect_model(), cfg.physical_constants(), cfg.scan
    m = synthesize_two_laser_map(model, s.field_grid(), s.detuning_grid(), s.kernel_fwhm, c,
                                 spin_flip_weight=s.spin_flip_weight, include_x=s.include_x)
    rows = ((b, d, m.intensity[i, j]) for i, b in enumerate(m.field_axis) for j, d in enumerate(m.detuning_axis))
    csv_path = vio.write_csv(out / "map.csv", ["b_mT", "detuning_MHz", "intensity"], rows)
    envelope = {
        "model": model.name,
        "field_axis_mT": {"min": s.field_min, "max": s.field_max, "steps": s.field_steps},
        "detuning_axis_MHz": {"min": float(m.detuning_axis[0]), "max": float(m.detuning_axis[-1]),
                              "steps": int(m.detuning_axis.size)},
        "kernel_fwhm_MHz": s.kernel_fwhm,
        "spin_flip_weight": s.spin_flip_weight,
        "include_x": s.include_x,
        "normalization": "max |intensity| = 1",
        "data": "map.csv",
    }
    return [csv_path, vio.write_json(out / "map.json", envelope)]


def _dynamics(cfg, out):
    from .dynamics import (PulseSequence, default_recovery_delays, depletion_recovery_scan, simulate_sequence,
                           standard_recovery_sequence)
    d = cfg.dynamics
    p = d.rates.build()
    if d.sequence is not None:
        seq = PulseSequence.from_dict(d.sequence)
    else:
        seq = standard_recovery_sequence(1.0, d.pump_duration, d.pump_rate)
    taus = default_recovery_delays() if d.taus is None else np.asarray(d.taus)
    curve = depletion_recovery_scan(taus, seq, p)
    if d.noise > 0:
        curve = curve.with_noise(d.noise, cfg.seed)
    rec = vio.write_csv(out / "recovery.csv", ["tau_s", "recovered_fraction"], vio.recovery_rows(curve))
    traced = seq.replace(segments=tuple(dataclasses.replace(s, bins=d.trace_bins) for s in seq.segments))
    t, f = simulate_sequence(traced, p).trace()
    tr = vio.write_csv(out / "trace.csv", ["time_s", "fluorescence"], zip(t, f))
    return [rec, tr]


def _noisy(y, level, seed):
    if level <= 0:
        return y
    return y + level * np.random.default_rng(seed).standard_normal(np.shape(y))


def _report(out, name, result, extra=None):
    doc = result.to_dict()
    if extra:
        doc.update(extra)
    path = vio.write_json(out / name, doc)
    if not result.converged:
        raise NotConverged(f"fit did not converge: {', '.join(result.flags) or 'no details'}")
    return [path]


def _fit_t1(cfg, out):
    from .fitting import fit_biexponential
    if cfg.fit.input:
        src = cfg.fit.input
        curve = vio.ingest_trace(src, "recovery")
    else:
        src = "packaged:recovery_4h.csv"
        with resources.as_file(packaged_fixture()) as path:
            curve = vio.ingest_trace(path, "recovery")
    y = _noisy(curve.recovered_fraction, cfg.fit.noise, cfg.seed)
    res = fit_biexponential(curve.tau, y, curve.sigma, n_starts=cfg.fit.n_starts)
    return _report(out, "fit_t1.json", res, {"task": "fit-t1", "input": str(src)})


def _fit_depletion(cfg, out):
    from .dynamics import depletion_vs_field
    from .fitting import fit_lorentzian
    model, c = cfg.defect_model(), cfg.physical_constants()
    if cfg.fit.input:
        tr = vio.ingest_trace(cfg.fit.input, "depletion")
        B, y, sigma = tr.x, tr.y, tr.sigma
    else:
        B, y = depletion_vs_field(model, fields=np.arange(30.0, 491.0, 20.0),
                                  single_spin_fwhm=cfg.fit.single_spin_fwhm_GHz, c=c)
        sigma = None
    y = _noisy(y, cfg.fit.noise, cfg.seed)
    res = fit_lorentzian(B, y, sigma, slope=cfg.fit.slope_MHz_per_mT, model=model, c=c)
    return _report(out, "fit_depletion.json", res, {"task": "fit-depletion"})


def _fit_doublet(cfg, out):
    from .dynamics import EnsembleModel, optical_splittings, simulate_ple_sweep
    from .fitting import LineshapeTemplate, fit_zeeman_doublet, spin_temperature
    model, c = cfg.defect_model(), cfg.physical_constants()
    zg, _ = optical_splittings(model, 490.0, c)
    if cfg.fit.input:
        tr = vio.ingest_trace(cfg.fit.input, "spectrum")
        if not cfg.fit.template:
            raise VSpinError("fit-doublet with an input spectrum also needs fit.template")
        tpl_tr = vio.ingest_trace(cfg.fit.template, "spectrum")
        x, y = tr.x, tr.y
        tpl = LineshapeTemplate(tpl_tr.x, tpl_tr.y)
    else:
        e = EnsembleModel.gaussian(1000.0, model, n=241)
        p = cfg.dynamics.rates.build().replace(temperature=cfg.fit.temperature)
        s0 = simulate_ple_sweep(e, 0.0, p, green=True, c=c)
        s1 = simulate_ple_sweep(e, 490.0, p, green=True, laser_grid=np.linspace(-3500, 3500, 281), c=c)
        tpl = LineshapeTemplate(s0.detuning, s0.signal)
        x, y = s1.detuning, s1.signal / s0.signal.max()
    y = _noisy(y, cfg.fit.noise, cfg.seed)
    res = fit_zeeman_doublet(x, tpl, y)
    lo, hi = sorted([abs(res["A_low"]), abs(res["A_high"])])
    splitting = cfg.fit.splitting_MHz or zg
    extra = {"task": "fit-doublet", "amplitude_ratio": lo / hi, "ground_splitting_MHz": splitting}
    if 0 < lo < hi:
        extra["spin_temperature_K"] = spin_temperature(lo / hi, splitting, c)
    return _report(out, "fit_doublet.json", res, extra)


def _fit_hyperfine(cfg, out):
    from .fitting import fit_hyperfine_from_map, synthesize_features
    from .fitting.hyperfine import excited_with
    model, c = cfg.defect_model(), cfg.physical_constants()
    if cfg.fit.input:
        feats = vio.read_features(cfg.fit.input)
    else:
        feats = synthesize_features(model, c=c, noise=cfg.fit.noise, seed=cfg.seed)
    ex = model.excited
    f = 1 + cfg.fit.start_perturbation
    start = excited_with(ex, ex.A_tensor[0, 2] * f, ex.A_tensor[2, 2] * f, ex.g_tensor[2, 2] * f)
    res = fit_hyperfine_from_map(feats, (model.ground, start), c, n_starts=cfg.fit.n_starts, seed=cfg.seed)
    return _report(out, "fit_hyperfine.json", res, {"task": "fit-hyperfine", "features": len(feats)})


HANDLERS = {
    "eig": _eig, "spectrum": _spectrum, "map": _map, "dynamics": _dynamics, "fit-t1": _fit_t1,
    "fit-depletion": _fit_depletion, "fit-doublet": _fit_doublet, "fit-hyperfine": _fit_hyperfine,
}


def run_subcommand(name, config):
    """Run one subcommand; returns ``(exit_status, written_paths)``.

    Library errors are not caught here; :func:`main` maps them to exit codes.
    """
    if name not in HANDLERS:
        raise VSpinError(f"unknown subcommand {name!r}")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return EXIT_OK, HANDLERS[name](config, out)
    except NotConverged as exc:
        print(f"E:not-converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED, []


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    ap = argparse.ArgumentParser(prog="vspin", description="Vanadium-in-SiC spin Hamiltonian toolkit.")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", metavar="PATH", help="JSON run configuration")
    ap.add_argument("--preset", choices=("4H-alpha", "6H-alpha"))
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--field-min", type=float)
    ap.add_argument("--field-max", type=float)
    ap.add_argument("--field-steps", type=int)
    ap.add_argument("--detuning-min", type=float)
    ap.add_argument("--detuning-max", type=float)
    ap.add_argument("--detuning-steps", type=int)
    ap.add_argument("--kernel-fwhm", type=float)
    ap.add_argument("--input", metavar="PATH", help="input CSV for fit-* commands")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _merge(cfg, args):
    doc = cfg.model_dump()
    for key in ("preset", "out", "seed"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    for key in ("field_min", "field_max", "field_steps", "detuning_min", "detuning_max", "detuning_steps",
                "kernel_fwhm"):
        if getattr(args, key) is not None:
            doc["scan"][key] = getattr(args, key)
    if args.input is not None:
        doc["fit"]["input"] = args.input
    return config_from_dict(_prune(doc))


def _prune(doc):
    """Drop None-valued optional sections so defaults re-apply."""
    if isinstance(doc, dict):
        return {k: _prune(v) for k, v in doc.items() if v is not None}
    return doc


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        cfg = _merge(cfg, args)
        status, paths = run_subcommand(args.command, cfg)
    except (ConvergenceError, IntegrationError) as exc:
        print(f"E:{exc.code}: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except VSpinError as exc:
        print(f"E:{exc.code}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for p in paths:
        print(p)
    return status


if __name__ == "__main__":
    sys.exit(main())
