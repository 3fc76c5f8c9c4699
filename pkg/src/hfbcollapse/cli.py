"""Command-line entry point: ``simulate``, ``validate``, ``sweep`` and ``report``.

Runs are described by an INI file.  Every physics default lives in a named,
versioned preset (see :data:`PRESETS`); a config selects one with
``[run] preset = ...`` and overrides individual keys.  Unknown sections or
keys are configuration errors.

Exit codes: 0 for a completed run (breakdown included, it is flagged in the
record), 1 for configuration errors, 2 for invariant failures.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import hashlib
import json
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .checks import CheckResult
from .diagnostics import (
    NormalizationError,
    envelope_check,
    envelope_params,
    step2_inequality,
)
from .dynamics import CSV_COLUMNS, IntegratorConfig, integrate
from .kernels import PRESETS as POTENTIAL_PRESETS
from .kernels import PotentialSpec
from .meanfield import Model
from .radial import SCHEMES, build_grid
from .state import CONSTANTS, InitialDataError, Moments, make_initial_data, save_checkpoint

__all__ = ["ConfigError", "RunConfig", "PRESETS", "PRESETS_VERSION", "main",
           "run_simulation", "validation_suite", "write_report"]

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2

PRESETS_VERSION = "1"

_BASE = {
    "run": {"model": "hf", "seed": "0"},
    "grid": {"N": "96", "R": "30.0", "scheme": "legendre-mapped"},
    "sectors": {"lmax": "2", "cutoff": ""},
    "potential": {"preset": "newton", "kappa": "0.5", "mass": "0.0", "epsilon": "0.5",
                  "c": "", "sigma": "", "lambda": ""},
    "initial": {"family": "gaussian-shells", "orbitals": "2,1,1", "sigma": "1.5", "center": "0.0",
                "chirp": "0.0", "fill": "1.0", "pairing_sectors": "0", "pairing_fraction": "1.0",
                "omega": "1.0", "temperature": "0.2", "mu": "1.0", "delta": "0.2",
                "target": "none", "margin": "1.0", "zero_pairing": "false"},
    "integrator": {"t_final": "1.0", "sample_interval": "0.05", "dt_init": "0.001",
                   "step_tol": "1e-10", "energy_tol": "1e-7"},
    "output": {"checkpoint_every": "0"},
}

#: Named parameter sets.  ``t_final = auto`` means twice the predicted
#: vanishing time of ``Tr M gamma`` (``sqrt(Tr M gamma_0 / -E_0)``) and
#: ``sample_interval = auto`` a fortieth of that time.
PRESETS = {
    "bound-hf": {"potential": {"mass": "1.0"}},
    "collapse-hf": {
        "grid": {"N": "128"},
        "sectors": {"lmax": "0"},
        "potential": {"kappa": "0.1"},
        "initial": {"orbitals": "2", "chirp": "-0.3", "target": "negative-energy-HF"},
        "integrator": {"t_final": "auto", "sample_interval": "auto", "step_tol": "1e-8",
                       "energy_tol": "1e-5"},
    },
    "collapse-hfb": {
        "run": {"model": "hfb"},
        "grid": {"N": "128"},
        "sectors": {"lmax": "0"},
        "potential": {"kappa": "0.1"},
        "initial": {"orbitals": "2", "chirp": "-0.3", "fill": "0.8",
                    "target": "negative-energy-HFB"},
        "integrator": {"t_final": "auto", "sample_interval": "auto", "step_tol": "1e-8",
                       "energy_tol": "1e-5"},
    },
}

_SWEEP_AXES = ("kappa", "lambda_cutoff", "mass")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _merge(base, override):
    out = copy.deepcopy(base)
    for sec, items in override.items():
        out.setdefault(sec, {}).update(items)
    return out


@dataclass
class RunConfig:
    """Validated run description.

    ``sections`` keeps the raw (string) values after preset resolution; they
    are what the manifest records and what the config hash covers.
    """

    sections: dict

    @classmethod
    def from_mapping(cls, mapping):
        mapping = {sec: {k: str(v) for k, v in items.items()} for sec, items in mapping.items()}
        preset = mapping.get("run", {}).get("preset", "bound-hf")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        resolved = _merge(_merge(_BASE, PRESETS[preset]), {})
        for sec, items in mapping.items():
            if sec not in _BASE and sec != "sweep":
                raise ConfigError(f"unknown config section [{sec}]")
            for key, val in items.items():
                if sec == "run" and key == "preset":
                    continue
                if sec != "sweep" and key not in _BASE[sec] and not (sec == "integrator" and key in _INTEGRATOR_KEYS):
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                resolved.setdefault(sec, {})[key] = val
        resolved["run"]["preset"] = preset
        resolved["run"]["preset_version"] = PRESETS_VERSION
        cfg = cls(resolved)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping({sec: dict(parser[sec]) for sec in parser.sections()})

    def get(self, sec, key, kind=str):
        raw = self.sections[sec][key]
        try:
            if kind is bool:
                if raw.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "yes", "1")
            if kind is list:
                return [int(x) for x in raw.replace(" ", "").split(",") if x]
            return kind(raw)
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {key} = {raw!r} is not a valid {kind.__name__}") from exc

    def with_override(self, sec, key, value):
        return self.with_overrides({(sec, key): value})

    def with_overrides(self, changes):
        """New config with ``{(section, key): value}`` applied, validated once at the end."""
        sections = copy.deepcopy(self.sections)
        for (sec, key), value in changes.items():
            sections[sec][key] = str(value)
        cfg = RunConfig(sections)
        cfg.validate()
        return cfg

    # -- derived objects -----------------------------------------------------

    @property
    def model_kind(self):
        return self.sections["run"]["model"]

    @property
    def lmax(self):
        return self.get("sectors", "lmax", int)

    @property
    def cutoff(self):
        raw = self.sections["sectors"]["cutoff"]
        return self.lmax if raw == "" else self.get("sectors", "cutoff", int)

    def potential(self):
        p = self.sections["potential"]
        name = p["preset"]
        kappa, mass, eps = (self.get("potential", k, float) for k in ("kappa", "mass", "epsilon"))
        try:
            if name == "newton":
                return PotentialSpec.newton(kappa, mass, eps)
            if name == "gaussian":
                return PotentialSpec.gaussian(kappa, mass, self.get("potential", "c", float),
                                              self.get("potential", "sigma", float), eps)
            return PotentialSpec.yukawa_screened(kappa, mass, self.get("potential", "c", float),
                                                 self.get("potential", "lambda", float), eps)
        except ValueError as exc:
            raise ConfigError(f"[potential] {exc}") from exc

    def grid(self):
        try:
            return build_grid(self.get("grid", "N", int), self.get("grid", "R", float),
                              self.sections["grid"]["scheme"])
        except ValueError as exc:
            raise ConfigError(f"[grid] {exc}") from exc

    def initial_params(self):
        ini = self.sections["initial"]
        out = {key: self.get("initial", key, float)
               for key in ("sigma", "center", "chirp", "fill", "pairing_fraction", "omega",
                           "temperature", "mu", "delta")}
        out["orbitals"] = self.get("initial", "orbitals", list)
        out["pairing_sectors"] = self.get("initial", "pairing_sectors", list)
        out["family"] = ini["family"]
        return out

    def target(self):
        t = self.sections["initial"]["target"]
        return None if t == "none" else t

    def integrator(self, t_star=None):
        vals = {}
        for key, raw in self.sections["integrator"].items():
            if raw == "auto":
                if t_star is None or not math.isfinite(t_star):
                    raise ConfigError(f"[integrator] {key} = auto needs initial data with negative energy")
                vals[key] = 2.0 * t_star if key == "t_final" else t_star / 40.0
            else:
                vals[key] = _INTEGRATOR_KEYS[key](raw) if _INTEGRATOR_KEYS[key] is not bool \
                    else self.get("integrator", key, bool)
        vals["keep_states"] = False
        try:
            return IntegratorConfig(**vals)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[integrator] {exc}") from exc

    def validate(self):
        s = self.sections
        if s["run"]["model"] not in ("hf", "hfb"):
            raise ConfigError("[run] model must be 'hf' or 'hfb'")
        self.get("run", "seed", int)
        if s["grid"]["scheme"] not in SCHEMES:
            raise ConfigError(f"[grid] scheme must be one of {SCHEMES}")
        if self.get("grid", "N", int) < 8 or not self.get("grid", "R", float) > 0:
            raise ConfigError("[grid] need N >= 8 and R > 0")
        if self.lmax < 0:
            raise ConfigError("[sectors] lmax must be >= 0")
        if not 0 <= self.cutoff <= self.lmax:
            raise ConfigError("[sectors] cutoff (Lambda) must satisfy 0 <= cutoff <= lmax")
        if s["potential"]["preset"] not in POTENTIAL_PRESETS:
            raise ConfigError(f"[potential] preset must be one of {sorted(POTENTIAL_PRESETS)}")
        if not self.get("potential", "kappa", float) > 0:
            raise ConfigError("[potential] kappa must be > 0")
        if self.get("potential", "mass", float) < 0:
            raise ConfigError("[potential] mass must be >= 0")
        self.potential()
        if s["initial"]["family"] not in ("gaussian-shells", "thermal-like"):
            raise ConfigError("[initial] family must be 'gaussian-shells' or 'thermal-like'")
        if self.target() not in (None, "negative-energy-HF", "negative-energy-HFB"):
            raise ConfigError("[initial] target must be none, negative-energy-HF or negative-energy-HFB")
        self.initial_params()
        self.get("initial", "margin", float)
        self.get("initial", "zero_pairing", bool)
        if any(k > self.cutoff for k, n in enumerate(self.get("initial", "orbitals", list)) if n):
            raise ConfigError("[initial] orbitals occupy sectors above the cutoff")
        for key in s["integrator"]:
            if key not in _INTEGRATOR_KEYS:
                raise ConfigError(f"unknown key {key!r} in [integrator]")
        if self.get("output", "checkpoint_every", int) < 0:
            raise ConfigError("[output] checkpoint_every must be >= 0")

    def normalized(self):
        return {sec: dict(sorted(items.items())) for sec, items in sorted(self.sections.items())}

    def digest(self):
        return hashlib.sha256(json.dumps(self.normalized(), sort_keys=True).encode()).hexdigest()

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for sec, items in self.normalized().items():
            parser[sec] = {k: v for k, v in items.items() if not (sec == "run" and k == "preset_version")}
        lines = []
        for sec in parser.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in parser[sec].items())
            lines.append("")
        return "\n".join(lines)


_INTEGRATOR_KEYS = {name: ({"bool": bool, "int": int}.get(str(f.type), float))
                    for name, f in ((f.name, f) for f in fields(IntegratorConfig))
                    if name != "keep_states"}


# -- simulate ----------------------------------------------------------------


def prepare_run(cfg):
    """Grid, model, initial state and integrator settings for ``cfg``."""
    grid = cfg.grid()
    pot = cfg.potential()
    model = Model.build(grid, cfg.lmax, pot, cutoff=cfg.cutoff)
    params = cfg.initial_params()
    family = params.pop("family")
    try:
        state, pot2, info = make_initial_data(
            family, params, grid, cfg.lmax, pot, model.kinetics, model.table,
            model=cfg.model_kind, target=cfg.target(), margin=cfg.get("initial", "margin", float))
    except InitialDataError as exc:
        raise ConfigError(f"[initial] {exc}") from exc
    if pot2 is not pot:
        model = model.with_potential(pot2)
    if state.is_hfb and not any(np.any(a) for a in state.a) and not cfg.get("initial", "zero_pairing", bool):
        raise ConfigError("hfb run without pairing: give pairing initial data or set [initial] zero_pairing = true")
    from .diagnostics import compute_moments

    m0 = compute_moments(state, model)
    t_star = math.sqrt(m0.virial_M / -m0.energy) if m0.energy < 0 else math.inf
    info["t_star_estimate"] = t_star
    return model, state, cfg.integrator(t_star), info


def _versions():
    import scipy

    return {"hfbcollapse": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_simulation(cfg, out_dir, config_path=None):
    """Run one simulation and write every artifact into ``out_dir``.

    Returns ``(exit_code, diagnostics_dict)``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, state, icfg, info = prepare_run(cfg)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    every = cfg.get("output", "checkpoint_every", int)
    counter = {"n": 0}

    def checkpoint(s):
        if every and counter["n"] % every == 0:
            save_checkpoint(ckpt_dir / f"sample_{counter['n']:05d}.ckpt", s, model.potential)
        counter["n"] += 1

    start = time.perf_counter()
    failure = None
    try:
        traj = integrate(state, model, icfg, checkpoint=checkpoint)
    except NormalizationError as exc:
        failure = str(exc)
        traj = None
    elapsed = time.perf_counter() - start
    if traj is None:
        diag = {"status": "invariant-failure", "error": failure}
        _write_json(out / "diagnostics.json", diag)
        return EXIT_INVARIANT, diag
    save_checkpoint(ckpt_dir / "final.ckpt", traj.final_state(), model.potential,
                    extra={"breakdown": traj.breakdown, "reason": traj.reason})
    traj.write_csv(out / "trajectory.csv")
    (out / "config.ini").write_text(cfg.to_ini())
    manifest = {
        "config_hash": cfg.digest(),
        "config": cfg.normalized(),
        "config_source": str(config_path) if config_path else None,
        "constants": CONSTANTS,
        "model": model.manifest(),
        "initial_data": _jsonable(info),
        "integrator": asdict(icfg),
        "versions": _versions(),
        "csv_columns": CSV_COLUMNS,
        "artifacts": ["trajectory.csv", "diagnostics.json", "report.json", "report.txt",
                      "virial_M.svg", "energy.svg", "angular.svg", "config.ini",
                      "checkpoints/final.ckpt"],
    }
    _write_json(out / "manifest.json", manifest)
    report = write_report(out, runtime=elapsed)
    code = EXIT_INVARIANT if report["invariant_failure"] else EXIT_OK
    return code, report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_json(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


# -- report ------------------------------------------------------------------


def read_trajectory(path, model_kind):
    """Rebuild a lightweight trajectory record from ``trajectory.csv``."""
    from .dynamics import _CSV_FIELDS, TrajectoryRecord

    traj = TrajectoryRecord(model_kind)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header != CSV_COLUMNS:
        raise ConfigError(f"{path} does not have the documented column order")
    for row in rows[1:]:
        vals = dict(zip(header, (float(x) for x in row)))
        traj.dts.append(vals["dt"])
        traj.moments.append(Moments(**{_CSV_FIELDS[c]: vals[c] for c in header if c != "dt"}))
    return traj


def write_report(run_dir, runtime=None):
    """Recompute the trajectory checks of a finished run and write the report files."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = RunConfig(manifest["config"])
    pot = cfg.potential().with_kappa(manifest["model"]["potential"]["kappa"])
    stub = SimpleNamespace(kappa=pot.kappa, potential=pot)
    traj = read_trajectory(run_dir / "trajectory.csv", cfg.model_kind)
    final = json.loads((run_dir / "checkpoints" / "final.ckpt").open("rb").readline())["extra"]
    traj.breakdown, traj.reason = final["breakdown"], final["reason"]
    m0, m1 = traj.moments[0], traj.moments[-1]
    checks = [step2_inequality(traj, stub)]
    params = envelope_params(traj, stub)
    env = envelope_check(traj, params)
    checks.append(env)
    tol = manifest["integrator"]["constraint_tol"]
    worst = max(max(m.pauli_defect, m.bogoliubov_defect) for m in traj.moments)
    checks.append(CheckResult("constraints 0 <= Gamma <= 1", worst <= tol, tol - worst, tol,
                              len(traj.moments), {"max_defect": worst}))
    e_drift = abs(m1.energy - m0.energy) / max(abs(m0.energy), 1e-300)
    n_drift = abs(m1.particle_number - m0.particle_number) / max(m0.particle_number, 1e-300)
    drift_tol = 1e-4
    checks.append(CheckResult("energy and particle-number conservation", max(e_drift, n_drift) <= drift_tol,
                              drift_tol - max(e_drift, n_drift), drift_tol, len(traj.moments),
                              {"energy_drift": e_drift, "particle_drift": n_drift}))
    if traj.model == "hf":
        l2 = np.array([m.L2_moment for m in traj.moments])
        dl2 = float(np.max(np.abs(l2 - l2[0])) / max(abs(l2[0]), 1.0))
        checks.append(CheckResult("|L|^2 moment conservation (HF)", dl2 <= drift_tol, drift_tol - dl2,
                                  drift_tol, len(l2), {"max_relative_change": dl2}))
    invariant_failure = any(not c.passed and c.applicable for c in checks[2:]) \
        or traj.reason == "constraint-violation"
    report = {
        "config_hash": manifest["config_hash"],
        "model": traj.model,
        "breakdown": traj.breakdown,
        "reason": traj.reason,
        "t_end": m1.time,
        "samples": len(traj.moments),
        "energy": m0.energy,
        "threshold_margin": manifest["initial_data"].get("threshold_margin"),
        "t_star": env.details.get("t_star"),
        "envelope": {"a": params.a, "b": params.b, "c": params.c, "b_fit": params.b_fit},
        "checks": [c.to_json() for c in checks],
        "L65_moment_final": m1.L65_moment,
        "sqrt_laplacian_growth": m1.sqrt_laplacian / m0.sqrt_laplacian if m0.sqrt_laplacian else None,
        "invariant_failure": invariant_failure,
    }
    if runtime is not None:
        report["runtime_seconds"] = runtime
    _write_json(run_dir / "report.json", report)
    _write_json(run_dir / "diagnostics.json", {"checks": report["checks"], "envelope": report["envelope"]})
    lines = [f"run {manifest['config_hash'][:12]} ({traj.model}), t_end = {m1.time:.4g}, "
             f"breakdown = {traj.breakdown} ({traj.reason})"]
    lines += [c.line() for c in checks]
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n")
    t = traj.times
    mvals = np.array([m.virial_M for m in traj.moments])
    curves = [("Tr M gamma", t, mvals)]
    if params.a < 0:
        curves.append(("envelope", t, params(t)))
    write_svg(run_dir / "virial_M.svg", curves, "virial M and its envelope", "t", "Tr M gamma")
    energy = np.array([m.energy for m in traj.moments])
    write_svg(run_dir / "energy.svg", [("relative drift", t, (energy - energy[0]) / max(abs(energy[0]), 1e-300))],
              "energy drift", "t", "(E - E0)/|E0|")
    write_svg(run_dir / "angular.svg",
              [("Tr |L|^2 gamma", t, np.array([m.L2_moment for m in traj.moments])),
               ("Tr |L|^6.5 gamma", t, np.array([m.L65_moment for m in traj.moments]))],
              "angular moments", "t", "moment")
    return report


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def write_svg(path, curves, title, xlabel, ylabel, width=640, height=400):
    """Static line plot; ``curves`` is a list of ``(label, x, y)``."""
    left, right, top, bottom = 70, 20, 40, 50
    xs = np.concatenate([np.asarray(c[1], float) for c in curves])
    ys = np.concatenate([np.asarray(c[2], float) for c in curves])
    finite = np.isfinite(ys)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(ys[finite].min()), float(ys[finite].max())) if finite.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return left + (x - x0) / (x1 - x0) * (width - left - right)

    def py(y):
        return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
             f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>']
    for k in range(5):
        xv = x0 + k * (x1 - x0) / 4
        yv = y0 + k * (y1 - y0) / 4
        parts.append(f'<text x="{px(xv):.1f}" y="{height - bottom + 16}" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    parts.append(f'<text x="14" y="{height / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {height / 2})">{_esc(ylabel)}</text>')
    for i, (label, x, y) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if math.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - right - 4}" y="{top + 14 * (i + 1)}" text-anchor="end" '
                     f'fill="{color}">{_esc(label)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _esc(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# -- validate ----------------------------------------------------------------


def validation_suite(level="fast"):
    """Kernel, Gaunt, Legendre, kinetic and oracle checks; returns CheckResults."""
    from .kernels import build_kernel_table, newton_kernel, verify_kernel_bounds
    from .legendre import GauntTable, gap_ratio, gap_ratio_bound, gaunt_allowed, legendre_all, legendre_deriv
    from .radial import build_kinetic

    from scipy.integrate import quad

    full = level == "full"
    results = []

    lmax_g = 12 if full else 6
    table = GauntTable.build(2 * lmax_g)
    bad = 0
    nodes, wq = np.polynomial.legendre.leggauss(2 * lmax_g + 2)
    pg = legendre_all(lmax_g, nodes)
    for a in range(lmax_g + 1):
        for b in range(lmax_g + 1):
            for c in range(2 * lmax_g + 1):
                val = table(a, b, c)
                if gaunt_allowed(a, b, c) != (val != 0.0) or val != table(b, c, a) or val < 0:
                    bad += 1
            total = sum((2 * c + 1) * table(a, b, c) ** 2 / 2.0 for c in range(2 * lmax_g + 1))
            # completeness of Legendre polynomials: sum_c (2c+1)/2 G^2 = int P_a^2 P_b^2
            ref = float(np.sum(wq * pg[a] ** 2 * pg[b] ** 2))
            if abs(total - ref) > 1e-12 * max(1.0, ref):
                bad += 1
    results.append(CheckResult("Gaunt selection rules and completeness", bad == 0, -bad, 0, (lmax_g + 1) ** 2,
                               {"violations": bad, "max_degree": lmax_g}))

    lmax_a = 20
    t = np.linspace(-1, 1, 401)
    p = legendre_all(lmax_a + 1, t)
    worst = 0.0
    for n in range(1, lmax_a + 1):
        lhs = (2 * n + 1) * p[n]
        rhs = legendre_deriv(n + 1, t) - legendre_deriv(n - 1, t)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))) / (2 * n + 1))
        # P_n'(t) = sum over k = n-1, n-3, ... of (2k+1) P_k(t)
        integ = sum((2 * k + 1) * p[k] for k in range(n - 1, -1, -2))
        worst = max(worst, float(np.max(np.abs(integ - legendre_deriv(n, t)))) / (n * (n + 1)))
    results.append(CheckResult("Legendre derivative identities (l <= 20)", worst <= 1e-11, 1e-11 - worst, 1e-11,
                               lmax_a, {"max_error": worst}))

    gap_max = 20 if full else 8
    worst = max(gap_ratio(a, b, samples=20_000) / gap_ratio_bound(a, b)
                for a in range(gap_max + 1) for b in range(gap_max + 1) if a != b)
    results.append(CheckResult("gap ratio bound", worst <= 1.0 + 1e-12, 1.0 - worst, 1e-12, 0,
                               {"max_ratio": worst, "max_degree": gap_max}))

    lmax_k = 4 if full else 2
    pots = [PotentialSpec.newton(1.0, 0.0), PotentialSpec.gaussian(1.0, 0.0, 0.8, 0.7)]
    grids = [build_grid(48, 12.0, "uniform"), build_grid(48, 12.0, "legendre-mapped")]
    for grid in grids:
        for pot in pots:
            tbl = build_kernel_table(lmax_k, grid, pot)
            hard = verify_kernel_bounds(tbl)[0]
            hard.name = f"{hard.name} [{grid.scheme}, {pot.name}]"
            results.append(hard)

    gt = GauntTable.build(4)
    worst = 0.0
    for l1, l2 in ((0, 0), (1, 1), (2, 0), (2, 2)):
        for r, rp in ((0.7, 1.3), (2.0, 0.5), (1.0, 1.0 + 1e-3)):
            def integrand(tt):
                pp = legendre_all(max(l1, l2), np.array([tt]))
                return -pp[l1][0] * pp[l2][0] / math.sqrt(r * r + rp * rp - 2 * r * rp * tt)
            pts = [1.0] if abs(r - rp) < 1e-2 else None
            ref = 2 * math.pi * quad(integrand, -1, 1, points=pts, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
            val = float(newton_kernel(l1, l2, r, rp, gt))
            worst = max(worst, abs(val - ref) / abs(ref))
    results.append(CheckResult("Newton multipole kernel vs quadrature", worst <= 1e-9, 1e-9 - worst, 1e-9, 12,
                               {"max_relative_error": worst}))

    grid = build_grid(64, 10.0, "legendre-mapped")
    r = grid.points
    worst = 0.0
    for ell in range(3):
        # f = r^l exp(-r^2/2), u = r f: <f, (-Delta_l + m^2) f> = int u'^2 + l(l+1) u^2 / r^2 dr + m^2 |f|^2
        u2 = quad(lambda x: x ** (2 * ell + 2) * math.exp(-x * x), 0, math.inf)[0]
        du2 = quad(lambda x: (((ell + 1) * x**ell - x ** (ell + 2)) ** 2 + ell * (ell + 1) * x ** (2 * ell))
                   * math.exp(-x * x), 0, math.inf)[0]
        f = grid.to_unitary(r**ell * np.exp(-r * r / 2))
        f = f / np.linalg.norm(f)
        for mass in (0.0, 0.7):
            k = build_kinetic(ell, mass, grid)
            form = float(np.real(f.conj() @ k.matrix @ k.matrix @ f))
            ref = du2 / u2 + mass**2
            worst = max(worst, abs(form - ref) / ref,
                        float(np.abs(k.matrix - k.matrix.T).max()),
                        max(0.0, mass - float(np.linalg.eigvalsh(k.matrix).min())))
    results.append(CheckResult("sector kinetic operators (K_l^2 form, hermiticity, K_l >= m)",
                               worst <= 1e-6, 1e-6 - worst, 1e-6, 6, {"max_error": worst}))

    from . import oracle

    seeds = (0, 1, 2) if full else (0,)
    n_radial = 192 if full else 128
    pot = PotentialSpec.newton(0.7, 0.5)
    grid = build_grid(n_radial, 7.0, "uniform")
    model = Model.build(grid, 2 if full else 1, pot)
    for seed in seeds:
        st = oracle.random_small_state(grid, model.lmax, np.random.default_rng(seed))
        errs = oracle.compare_observables(st, model, oracle.TensorGrid(10 if full else 8, 3.7 if full else 3.4))
        tol = 1e-3 if full else 1e-2
        worst = max(errs.values())
        results.append(CheckResult(f"oracle equivalence (seed {seed})", worst <= tol, tol - worst, tol, len(errs),
                                   errs))
    return results


# -- sweep -------------------------------------------------------------------


def _sweep_one(args):
    cfg_sections, axis, value, out_dir = args
    cfg = RunConfig(cfg_sections)
    row = {"axis": axis, "value": value}
    try:
        if axis == "kappa":
            cfg = cfg.with_override("potential", "kappa", value)
            cfg = cfg.with_override("initial", "target", "none")
        elif axis == "mass":
            cfg = cfg.with_override("potential", "mass", value)
        else:
            lam = int(value)
            orbs = cfg.get("initial", "orbitals", list)
            # both keys change together: the intermediate config would be inconsistent
            cfg = cfg.with_overrides({("sectors", "cutoff"): lam,
                                      ("initial", "orbitals"): ",".join(str(n) for n in orbs[: lam + 1])})
        code, report = run_simulation(cfg, out_dir)
        row.update(exit_code=code, energy=report.get("energy"), threshold_margin=report.get("threshold_margin"),
                   breakdown=report.get("breakdown"), reason=report.get("reason"), t_end=report.get("t_end"),
                   t_star=report.get("t_star"), status="ok")
    except ConfigError as exc:
        row.update(exit_code=EXIT_CONFIG, status=f"config-error: {exc}")
    except Exception as exc:  # per-run failures are recorded, the sweep continues
        row.update(exit_code=EXIT_INVARIANT, status=f"error: {type(exc).__name__}: {exc}")
    return row


SWEEP_COLUMNS = ["axis", "value", "status", "exit_code", "energy", "threshold_margin", "breakdown", "reason",
                 "t_end", "t_star"]


def run_sweep(cfg, axis, values, out_dir, threads=1):
    """Run ``simulate`` per value and write ``summary.csv``; returns the rows."""
    if axis not in _SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {_SWEEP_AXES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.sections, axis, v, out / f"{axis}_{i:03d}") for i, v in enumerate(values)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in SWEEP_COLUMNS})
    return rows


# -- argument parsing ----------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="hfbcollapse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required, help="INI run configuration")
        sp.add_argument("--out", default="run", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")

    common(sub.add_parser("simulate", help="run one simulation"), True)
    v = sub.add_parser("validate", help="certification and oracle suite")
    common(v, False)
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    s = sub.add_parser("sweep", help="run a parameter sweep")
    common(s, True)
    s.add_argument("--axis", choices=_SWEEP_AXES, help="overrides [sweep] axis")
    s.add_argument("--values", help="comma-separated values, overrides [sweep] values")
    r = sub.add_parser("report", help="recompute checks and plots of a finished run")
    common(r, False)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "simulate":
            cfg = RunConfig.from_file(args.config)
            code, report = run_simulation(cfg, args.out, args.config)
            print((Path(args.out) / "report.txt").read_text() if (Path(args.out) / "report.txt").exists()
                  else json.dumps(_jsonable(report)))
            return code
        if args.command == "validate":
            results = validation_suite(args.level)
            for res in results:
                print(res.line())
            Path(args.out).mkdir(parents=True, exist_ok=True)
            _write_json(Path(args.out) / "validation.json", [r.to_json() for r in results])
            return EXIT_OK if all(r.passed or not r.applicable for r in results) else EXIT_INVARIANT
        if args.command == "sweep":
            cfg = RunConfig.from_file(args.config)
            sweep = cfg.sections.get("sweep", {})
            axis = args.axis or sweep.get("axis")
            raw = args.values if args.values is not None else sweep.get("values", "")
            try:
                values = [float(x) for x in raw.split(",") if x.strip()]
            except ValueError as exc:
                raise ConfigError(f"sweep values {raw!r} are not numbers") from exc
            rows = run_sweep(cfg, axis, values, args.out, args.threads)
            for row in rows:
                print(f"{row['axis']}={row['value']}: {row['status']} breakdown={row.get('breakdown')} "
                      f"reason={row.get('reason')}")
            return EXIT_OK
        if args.command == "report":
            if not (Path(args.out) / "manifest.json").exists():
                raise ConfigError(f"{args.out} is not a run directory (no manifest.json)")
            report = write_report(args.out)
            print((Path(args.out) / "report.txt").read_text())
            return EXIT_INVARIANT if report["invariant_failure"] else EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
