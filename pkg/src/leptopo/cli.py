"""Command-line front end.

    leptopo [--config FILE] [--output DIR] [--format csv|json] [--seed N] [--jobs N]
            {spectrum,evolve-fit,loop,resultant,verify} [options]

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, dynamics, eigen, model, topology, verify
from .io import write_csv, write_json

log = logging.getLogger("leptopo")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# config key -> (section, type). Every key is also a flag of the same name.
KEYS = {
    "omega": ("params", float),
    "delta": ("params", float),
    "kappa": ("params", float),
    "units": ("params", str),
    "radius": ("loop", float),
    "samples": ("loop", int),
    "center_omega": ("loop", float),
    "center_delta": ("loop", float),
    "direction": ("loop", int),
    "phase": ("loop", float),
    "ref_lep2": ("loop", float),
    "ref_lep3": ("loop", float),
    "r_scan": ("loop", str),
    "t0": ("grid", float),
    "t1": ("grid", float),
    "n": ("grid", int),
    "sigma": ("noise", float),
    "omega_min": ("sweep", float),
    "omega_max": ("sweep", float),
    "omega_n": ("sweep", int),
    "delta_min": ("sweep", float),
    "delta_max": ("sweep", float),
    "delta_n": ("sweep", int),
}

DEFAULTS = {
    "kappa": 1.0,
    "units": "kappa",
    "radius": 0.327,
    "samples": 128,
    "center_omega": 0.5,
    "center_delta": 0.0,
    "direction": 1,
    "phase": 0.5,
    "ref_lep2": topology.LEP2_REFERENCE,
    "ref_lep3": topology.LEP3_REFERENCE,
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    values: dict
    output: Path
    fmt: str
    seed: int
    jobs: int
    output_given: bool = False
    warnings: list = field(default_factory=list)
    conversion: dict | None = None

    def get(self, key, default=None):
        v = self.values.get(key)
        return DEFAULTS.get(key, default) if v is None else v

    def require(self, *keys):
        missing = [k for k in keys if self.values.get(k) is None and k not in DEFAULTS]
        if missing:
            raise UsageError(f"missing required setting(s): {', '.join(missing)}")

    def params(self) -> model.SystemParams:
        self.require("omega", "delta")
        om, de, ka = self.get("omega"), self.get("delta"), self.get("kappa")
        units = self.get("units")
        try:
            if units == "kappa":
                return model.SystemParams(om, de, 1.0) if ka == 1.0 else model.SystemParams(om, de, ka).normalized()
            if units == "physical":
                # omega/2pi and delta/2pi in MHz, kappa in 1/us
                p = model.SystemParams.from_physical(om, de, ka)
                self.conversion = {
                    "omega_over_2pi_MHz": om,
                    "delta_over_2pi_MHz": de,
                    "kappa_per_us": ka,
                    "omega_over_kappa": p.omega,
                    "delta_over_kappa": p.delta,
                    "time_unit_us": 1.0 / ka,
                }
                return p
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        raise UsageError(f"units must be 'kappa' or 'physical', got {units!r}")

    def time_scale(self) -> float:
        """Grid times are given in 1/kappa, or in us with physical units."""
        if self.get("units") == "physical":
            return float(self.get("kappa"))
        return 1.0

    def loop(self) -> topology.ParameterLoop:
        try:
            return topology.ParameterLoop(
                radius=self.get("radius"),
                samples=self.get("samples"),
                center_omega=self.get("center_omega"),
                center_delta=self.get("center_delta"),
                direction=self.get("direction"),
                phase=self.get("phase"),
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def grid(self) -> dynamics.TimeGrid:
        if all(self.values.get(k) is None for k in ("t0", "t1", "n")):
            return dynamics.TimeGrid.default()
        s = self.time_scale()
        try:
            return dynamics.TimeGrid.uniform(
                float(self.get("t0", 0.0)) * s,
                float(self.get("t1", dynamics.DEFAULT_SPAN / s)) * s,
                int(self.get("n", dynamics.DEFAULT_SAMPLES)),
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def warn(self, msg: str):
        self.warnings.append(msg)
        print(f"warning: {msg}", file=sys.stderr)

    def metadata(self, command: str, **extra) -> dict:
        meta = {
            "command": command,
            "version": __version__,
            "seed": self.seed,
            "format": self.fmt,
            "alpha_detuning_coefficient": model.ALPHA_DETUNING_COEFF,
            "settings": {k: self.values[k] for k in sorted(self.values) if self.values[k] is not None},
            "units": "kappa = 1; rates in kappa, times in 1/kappa",
        }
        if self.conversion:
            meta["conversion"] = self.conversion
        meta.update(extra)
        meta["warnings"] = list(self.warnings)
        return meta


def load_config(path: str | None) -> dict:
    vals: dict = {}
    if not path:
        return vals
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for section in cp.sections():
        for key, raw in cp.items(section):
            if key not in KEYS:
                raise UsageError(f"unknown config key [{section}] {key}")
            want_section, typ = KEYS[key]
            if section != want_section:
                raise UsageError(f"key {key} belongs in [{want_section}], found in [{section}]")
            try:
                vals[key] = typ(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r}") from exc
    return vals


def _complex_cols(prefix: str) -> list[str]:
    return [f"re_{prefix}", f"im_{prefix}"]


def _emit(cfg: RunConfig, name: str, header: list[str], rows: list, json_obj=None) -> Path:
    if cfg.fmt == "csv":
        return write_csv(cfg.output / f"{name}.csv", header, rows)
    obj = json_obj if json_obj is not None else [dict(zip(header, r)) for r in rows]
    return write_json(cfg.output / f"{name}.json", obj)


def _pool_map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# spectrum


def _point_rows(args):
    om, de = args
    p = model.SystemParams(om, de)
    spec = eigen.liouvillian_spectrum(p)
    an = model.analytic_eigenvalues(p)
    rows = []
    for j in range(9):
        i = spec.by_label(j)
        lam = spec.eigenvalues[i]
        rows.append((om, de, j, an[j].real, an[j].imag, lam.real, lam.imag, abs(lam - an[j])))
    return rows


def cmd_spectrum(cfg: RunConfig) -> int:
    header = ["omega", "delta", "branch", *_complex_cols("analytic"), *_complex_cols("numeric"), "abs_diff"]
    sweep = any(cfg.values.get(k) is not None for k in ("omega_min", "omega_max", "omega_n", "delta_min", "delta_max", "delta_n"))
    if sweep:
        om = np.linspace(cfg.get("omega_min", 0.0), cfg.get("omega_max", 1.5), int(cfg.get("omega_n", 61)))
        de = np.linspace(cfg.get("delta_min", -1.0), cfg.get("delta_max", 1.0), int(cfg.get("delta_n", 61)))
        pts = [(float(o), float(d)) for o in om for d in de]
        rows = [r for block in _pool_map(_point_rows, pts, cfg.jobs) for r in block]
        worst = max(r[-1] for r in rows)
        _emit(cfg, "spectrum_sweep", header, rows)
        write_json(cfg.output / "metadata.json", cfg.metadata("spectrum", mode="sweep", points=len(pts), max_abs_diff=worst))
        print(f"{len(rows)} rows, max |analytic - numeric| = {worst:.3g}")
        return EXIT_OK

    p = cfg.params()
    spec = eigen.liouvillian_spectrum(p)
    rows = [r for r in _point_rows((p.omega, p.delta))]
    groups = [sorted(int(spec.labels[i]) for i in g) for g in spec.defective_groups]
    group_of = {j: "+".join(map(str, g)) for g in groups for j in g}
    header_pt = header + ["residual", "defective_group"]
    rows = [r + (float(spec.residuals[spec.by_label(r[2])]), group_of.get(r[2], "")) for r in rows]
    if groups:
        cfg.warn(f"defective clusters (branch labels): {groups}")
    _emit(cfg, "spectrum", header_pt, rows)
    meta = cfg.metadata(
        "spectrum",
        mode="point",
        params={"omega": p.omega, "delta": p.delta, "kappa": p.kappa},
        defectiveness=spec.defectiveness,
        defective_clusters=groups,
        refined_in_extended_precision=sorted(int(spec.labels[i]) for i in spec.refined),
        max_abs_diff=max(r[7] for r in rows),
    )
    write_json(cfg.output / "metadata.json", meta)
    for r in rows:
        print(f"lambda_{r[2]} = {complex(r[5], r[6]):.12g}  |diff| = {r[7]:.2g}  {r[9]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evolve + fit


def cmd_evolve_fit(cfg: RunConfig) -> int:
    p = cfg.params()
    grid = cfg.grid()  # already in units of 1/kappa
    rho0 = dynamics.initial_superposition()
    states = dynamics.evolve(p, rho0, grid)
    spec = eigen.liouvillian_spectrum(p)
    try:
        spec = dynamics.align_to_state(eigen.biorthonormalize(spec), rho0)
    except eigen.DefectiveClusterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    a0 = dynamics.exact_amplitudes(spec, rho0)
    sigma = cfg.get("sigma")
    if sigma:
        series = dynamics.synth_noisy_run(p, rho0, grid, float(sigma), cfg.seed, spec=spec, states=states)
    else:
        series = dynamics.amplitudes(spec, states, grid)

    # rho(t)
    hdr = ["t"] + [f"{part}_rho{i}{j}" for i in range(3) for j in range(3) for part in ("re", "im")] + ["trace"]
    rows = []
    for t, rho in zip(grid.times, states):
        flat = []
        for z in rho.reshape(9):
            flat += [z.real, z.imag]
        rows.append([t, *flat, np.trace(rho).real])
    _emit(cfg, "states", hdr, rows)
    for s in series:
        _emit(cfg, f"amplitude_{s.branch}", ["t", "re_a", "im_a"], [(t, a.real, a.imag) for t, a in zip(s.times, s.values)])

    an = model.analytic_eigenvalues(p)
    fit_rows = []
    any_warn = False
    for s in series:
        j = s.branch
        status, fit = "ok", None
        if abs(a0[j]) <= dynamics.NO_SIGNAL:
            status = "no-signal"
        else:
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    fit = dynamics.fit_eigenvalue(s)
                for w in caught:
                    cfg.warn(str(w.message))
            except dynamics.FitConvergenceError as exc:
                status, fit = "not-converged", exc.best
                any_warn = True
                cfg.warn(str(exc))
            except dynamics.NoSignalError:
                status = "no-signal"
        if fit is None:
            fit_rows.append([j, status, "", "", an[j].real, an[j].imag, "", "", "", a0[j].real, a0[j].imag])
        else:
            fit_rows.append([
                j, status, fit.rate.real, fit.rate.imag, an[j].real, an[j].imag,
                abs(fit.rate - an[j]), fit.residual, fit.iterations, a0[j].real, a0[j].imag,
            ])
    hdr = ["branch", "status", *_complex_cols("fit"), *_complex_cols("analytic"), "abs_err", "residual", "iterations", *_complex_cols("amp0")]
    _emit(cfg, "fits", hdr, fit_rows)
    write_json(
        cfg.output / "metadata.json",
        cfg.metadata(
            "evolve-fit",
            params={"omega": p.omega, "delta": p.delta, "kappa": p.kappa},
            grid={"t0": grid.t0, "t1": grid.t1, "n": grid.n},
            noise_sigma=sigma or 0.0,
            fit_warning=any_warn,
        ),
    )
    for r in fit_rows:
        err = f"{r[6]:.3g}" if r[6] != "" else "-"
        print(f"branch {r[0]}: {r[1]:13s} |fit - analytic| = {err}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# loop


def _parse_scan(text: str) -> list[float]:
    try:
        if ":" in text:
            a, b, s = (float(x) for x in text.split(":"))
            n = int(round((b - a) / s)) + 1
            return [round(a + i * s, 12) for i in range(n)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad r_scan {text!r}; use a:b:step or a comma list") from exc


def _cycles_text(perm) -> str:
    cyc = [c for c in topology.permutation_cycles(perm) if len(c) > 1]
    return "".join("(" + " ".join(map(str, c)) + ")" for c in cyc) or "id"


def cmd_loop(cfg: RunConfig) -> int:
    scan = cfg.get("r_scan")
    if scan:
        radii = _parse_scan(scan)
        rows = []
        for r in radii:
            try:
                lp = topology.ParameterLoop(r, cfg.get("samples"), cfg.get("center_omega"), cfg.get("center_delta"))
                perm = topology.track_branches(lp, cfg.jobs).permutation
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            rows.append([r, " ".join(map(str, perm)), _cycles_text(perm)])
            print(f"r = {r:.4g}: {_cycles_text(perm)}")
        _emit(cfg, "rscan", ["radius", "permutation", "cycles"], rows)
        write_json(cfg.output / "metadata.json", cfg.metadata("loop", mode="r-scan"))
        return EXIT_OK

    lp = cfg.loop()
    tr = topology.track_branches(lp, cfg.jobs)
    rows = []
    for i, k in enumerate(tr.k):
        for j in range(9):
            z = tr.values[i, j]
            rows.append([k, j, z.real, z.imag])
    _emit(cfg, "loop", ["k", "branch", "re_lambda", "im_lambda"], rows)

    refs = {j: (cfg.get("ref_lep2") if 1 <= j <= 4 else cfg.get("ref_lep3")) for j in range(1, 9)}
    wrows = []
    for j in range(1, 9):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            w = topology.winding_number(tr.paths[j], refs[j])
        for c in caught:
            cfg.warn(str(c.message))
        wrows.append([j, refs[j], 0.0, str(w.value), w.raw, w.closure_m, w.quantized])
    _emit(cfg, "windings", ["branch", *_complex_cols("reference"), "winding", "raw", "closure_m", "quantized"], wrows)
    # complex-plane trajectories per branch over its full closure
    trows = []
    for path in tr.paths:
        for k, z in zip(path.k, path.values):
            trows.append([path.branch_id, k, z.real, z.imag])
    _emit(cfg, "trajectories", ["branch", "k", "re_lambda", "im_lambda"], trows)
    meta = cfg.metadata(
        "loop",
        loop={"radius": lp.radius, "samples": lp.samples, "center": [lp.center_omega, lp.center_delta],
              "direction": lp.direction, "phase": lp.phase},
        permutation=[int(x) for x in tr.permutation],
        cycles=_cycles_text(tr.permutation),
        bisections=tr.bisections,
        min_vector_overlap=tr.min_overlap,
        windings={str(r[0]): r[3] for r in wrows},
    )
    write_json(cfg.output / "metadata.json", meta)
    write_json(cfg.output / "plot_manifest.json", _plot_manifest(cfg))
    print(f"permutation {meta['cycles']}; " + ", ".join(f"W{r[0]}={r[3]}" for r in wrows))
    return EXIT_OK


def _plot_manifest(cfg: RunConfig) -> dict:
    ext = cfg.fmt
    return {
        "figures": [
            {
                "name": "eigenvalue_trajectories",
                "file": f"trajectories.{ext}",
                "x": "re_lambda",
                "y": "im_lambda",
                "group_by": "branch",
                "markers": [{"label": "LEP2", "x": cfg.get("ref_lep2"), "y": 0.0},
                            {"label": "LEP3", "x": cfg.get("ref_lep3"), "y": 0.0}],
            },
            {"name": "windings", "file": f"windings.{ext}", "kind": "table"},
        ]
    }


# ---------------------------------------------------------------------------
# resultant


def cmd_resultant(cfg: RunConfig) -> int:
    lp = cfg.loop()
    h = topology.homotopy_invariant(lp)
    rows = [
        [k, a.real, a.imag, b.real, b.imag, x, y]
        for k, a, b, x, y in zip(h.k, h.r1, h.r2, h.x, h.y)
    ]
    _emit(cfg, "resultant", ["k", "re_r1", "im_r1", "re_r2", "im_r2", "x_rescaled", "y_rescaled"], rows)
    r1 = np.abs(h.r1)
    meta = cfg.metadata(
        "resultant",
        loop={"radius": lp.radius, "samples": lp.samples, "center": [lp.center_omega, lp.center_delta]},
        invariant=h.invariant,
        raw_winding=h.raw,
        r1_abs_range=[float(r1.min()), float(r1.max())],
    )
    write_json(cfg.output / "metadata.json", meta)
    print(f"homotopy invariant {h.invariant} (raw {h.raw:.3g}); |R1| in [{r1.min():.3g}, {r1.max():.3g}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(cfg: RunConfig) -> int:
    checks = verify.run_all(jobs=cfg.jobs)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    failed = [c.name for c in checks if not c.passed]
    report = {
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
        "failed": failed,
    }
    if cfg.output_given:
        write_json(cfg.output / "verify.json", report)
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "evolve-fit": cmd_evolve_fit,
    "loop": cmd_loop,
    "resultant": cmd_resultant,
    "verify": cmd_verify,
}


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="INI file with [params] [loop] [grid] [noise] [sweep]")
    p.add_argument("--output", default=d(None), help="output directory (default: ./out)")
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"))
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--jobs", type=int, default=d(None), help="worker processes (default: CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leptopo", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _add_globals(sp, suppress=True)
        for key, (_, typ) in KEYS.items():
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    try:
        vals = load_config(args.config)
        for key in KEYS:
            v = getattr(args, key, None)
            if v is not None:
                vals[key] = v
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = RunConfig(
            values=vals,
            output=Path(args.output or "out"),
            fmt=args.format,
            seed=args.seed,
            jobs=args.jobs or os.cpu_count() or 1,
            output_given=args.output is not None,
        )
        return _run(cfg, args.command)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _run(cfg: RunConfig, command: str) -> int:
    try:
        return COMMANDS[command](cfg)
    except (topology.TrackingError, topology.LoopDegeneracyError) as exc:
        k = getattr(exc, "k", None)
        print(f"numerical failure at k = {k!r}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except eigen.EigenConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
