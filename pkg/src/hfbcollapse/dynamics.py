"""Time integration of the sector-reduced HF and cutoff-HFB flows.

With ``F = [[H, Pi], [Pi*, -conj(H)]]`` and
``Gamma = [[G, A], [A*, 1 - conj(G)]]``, the equation ``i dGamma/dt = [F, Gamma]``
reads, sector by sector,

    dG/dt = -i [H, G] - i (Pi A* - A Pi*)
    dA/dt = -i (H A + A conj(H) + Pi - Pi conj(G) - G Pi).

``A = 0`` gives back the HF flow.  The cutoff is realised by zero blocks of
``F`` above ``model.cutoff`` (see :func:`.meanfield.assemble`).

Stepping is classical RK4.  In adaptive mode each step is compared with two
half steps; the step is accepted when the difference and the energy change
are within tolerance.  Breakdown (step collapse, kinetic ceiling, leakage to
the box edge, constraint violation) ends the run and is reported in the
record rather than raised.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import compute_moments
from .meanfield import assemble
from .state import HFBState, HFState, constraint_defects, total_energy

__all__ = [
    "IntegratorConfig",
    "TrajectoryRecord",
    "hf_rhs",
    "hfb_rhs",
    "state_derivative",
    "rk4_step",
    "integrate",
    "hf_vs_hfb_consistency",
    "CSV_COLUMNS",
    "HFB_WELLPOSED_KAPPA",
]

HFB_WELLPOSED_KAPPA = 4.0 / math.pi

CSV_COLUMNS = [
    "t", "dt", "energy", "particle_number", "kinetic", "L2_moment", "virial_M", "virial_A",
    "pairing_mass", "pauli_defect", "bogoliubov_defect", "boundary_density",
    "L3_moment", "L65_moment", "sqrt_laplacian", "projector_defect",
]
_CSV_FIELDS = {
    "t": "time", "energy": "energy", "particle_number": "particle_number", "kinetic": "kinetic",
    "L2_moment": "L2_moment", "virial_M": "virial_M", "virial_A": "virial_A",
    "pairing_mass": "pairing_mass", "pauli_defect": "pauli_defect",
    "bogoliubov_defect": "bogoliubov_defect", "boundary_density": "boundary_density",
    "L3_moment": "L3_moment", "L65_moment": "L65_moment", "sqrt_laplacian": "sqrt_laplacian",
    "projector_defect": "projector_defect",
}


@dataclass
class IntegratorConfig:
    """Step control, sampling and breakdown thresholds.

    ``step_tol`` bounds the step-doubling difference (max entry over all
    blocks) per step; ``energy_tol`` bounds the relative energy change per
    unit time.  ``adaptive=False`` gives plain fixed-step RK4 with
    ``dt_init``.  ``cfl`` caps ``dt`` at ``cfl / max|spec H|``.
    """

    t_final: float = 1.0
    dt_init: float = 0.01
    dt_min: float = 1e-7
    dt_max: float = 0.1
    rk_order: int = 4
    adaptive: bool = True
    step_tol: float = 1e-10
    energy_tol: float = 1e-7
    projection_interval: int = 10
    constraint_tol: float = 1e-6
    hermiticity_tol: float = 1e-10
    sample_interval: float = 0.05
    kinetic_ceiling: float = 10.0
    boundary_threshold: float = 1e-6
    cfl: float = 1.25
    keep_states: bool = False
    max_steps: int = 200_000

    def __post_init__(self):
        if self.rk_order != 4:
            raise ValueError("only the classical fourth-order scheme is provided")
        if not 0 < self.dt_min < self.dt_init:
            raise ValueError("need 0 < dt_min < dt_init")
        for name in ("step_tol", "energy_tol", "constraint_tol", "hermiticity_tol", "sample_interval",
                     "t_final", "dt_max", "cfl"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.projection_interval < 1:
            raise ValueError("projection_interval must be >= 1")


@dataclass
class TrajectoryRecord:
    """Samples of a run: times, observables, step sizes and the breakdown verdict."""

    model: str
    moments: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    states: list = field(default_factory=list)
    breakdown: bool = False
    reason: str | None = None
    steps: int = 0
    rejected: int = 0
    clamps: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def times(self):
        return np.array([m.time for m in self.moments])

    def series(self, name):
        return np.array([getattr(m, name) for m in self.moments])

    def final_state(self):
        return self.states[-1] if self.states else None

    def rows(self):
        for m, dt in zip(self.moments, self.dts):
            d = asdict(m)
            yield [repr(float(dt)) if c == "dt" else repr(float(d[_CSV_FIELDS[c]])) for c in CSV_COLUMNS]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow(row)

    def summary(self):
        m0, m1 = self.moments[0], self.moments[-1]
        return {
            "model": self.model,
            "t_end": m1.time,
            "samples": len(self.moments),
            "steps": self.steps,
            "rejected_steps": self.rejected,
            "spectrum_clamps": self.clamps,
            "breakdown": self.breakdown,
            "reason": self.reason,
            "energy_drift": abs(m1.energy - m0.energy) / max(abs(m0.energy), 1e-300),
            "particle_drift": abs(m1.particle_number - m0.particle_number) / m0.particle_number,
            "sqrt_laplacian_growth": m1.sqrt_laplacian / m0.sqrt_laplacian if m0.sqrt_laplacian else math.nan,
            **self.flags,
        }


# -- right-hand sides -------------------------------------------------------


def hf_rhs(state, blocks):
    """``dG_l/dt = -i [H_l, G_l]`` for every sector."""
    blocks.check(state)
    out = []
    for h, g in zip(blocks.H, state.g):
        hg = h @ g
        out.append(-1j * (hg - hg.conj().T))
    return out


def hfb_rhs(state, blocks):
    """``(dG_l/dt, dA_l/dt)`` for the cutoff HFB flow."""
    blocks.check(state)
    dg, da = [], []
    for h, p, g, a in zip(blocks.H, blocks.Pi, state.g, state.a):
        hg = h @ g
        pa = p @ a.conj().T
        dg.append(-1j * (hg - hg.conj().T) - 1j * (pa - pa.conj().T))
        gp = g @ p
        body = h @ a + a @ h.conj() + p - (gp - gp.T)
        # p conj(g) = -(g p)^T because p is antisymmetric and g hermitian
        da.append(-1j * body)
    return dg, da


def state_derivative(state, model):
    """Right-hand side of the flow at ``state``: ``(dG,)`` or ``(dG, dA)``."""
    blocks = assemble(state, model)
    if state.is_hfb:
        return hfb_rhs(state, blocks)
    return (hf_rhs(state, blocks),)


def _advance(state, incr, dt, time_shift=0.0):
    """``state + dt * incr`` as a new state (incr is a tuple of block lists)."""
    g = [b + dt * d for b, d in zip(state.g, incr[0])]
    if state.is_hfb:
        a = [b + dt * d for b, d in zip(state.a, incr[1])]
        return HFBState(state.grid, g, a, state.time + time_shift, state.step)
    return HFState(state.grid, g, state.time + time_shift, state.step)


def rk4_step(state, model, dt):
    """One classical RK4 step of size ``dt``."""
    k1 = state_derivative(state, model)
    k2 = state_derivative(_advance(state, k1, 0.5 * dt, 0.5 * dt), model)
    k3 = state_derivative(_advance(state, k2, 0.5 * dt, 0.5 * dt), model)
    k4 = state_derivative(_advance(state, k3, dt, dt), model)
    incr = tuple(
        [(a + 2 * b + 2 * c + d) / 6.0 for a, b, c, d in zip(*parts)]
        for parts in zip(k1, k2, k3, k4)
    )
    new = _advance(state, incr, dt, dt)
    new.step = state.step + 1
    return new


def _difference(s1, s2):
    d = max(float(np.abs(a - b).max()) for a, b in zip(s1.g, s2.g))
    if s1.is_hfb:
        d = max(d, max(float(np.abs(a - b).max()) for a, b in zip(s1.a, s2.a)))
    return d


def _spectral_bound(state, model):
    """Cheap upper bound on ``max |spec H_l|`` used for the stability cap."""
    kmax = max(k.eigenvalues[-1] for k in model.kinetics[: state.lmax + 1])
    blocks = assemble(state, model)
    inter = max(float(np.abs(np.diag(blocks.potential)).max()) if blocks.potential.size else 0.0, 0.0)
    inter += max(float(np.linalg.norm(x)) for x in blocks.exchange)
    pair = max(float(np.linalg.norm(p)) for p in blocks.Pi) if blocks.Pi else 0.0
    return kmax + model.kappa * inter + pair


def _project(state, tol):
    """Re-hermitise/antisymmetrise and clamp small spectral excursions.

    Returns ``(state, clamped, defect)``; ``defect`` above ``tol`` means the
    state was left untouched and the run must stop.
    """
    g = [0.5 * (b + b.conj().T) for b in state.g]
    a = [0.5 * (b - b.T) for b in state.a] if state.is_hfb else None
    tmp = HFBState(state.grid, g, a, state.time, state.step) if state.is_hfb else \
        HFState(state.grid, g, state.time, state.step)
    pauli, bogo, _ = constraint_defects(tmp)
    defect = max(pauli, bogo)
    if defect > tol:
        return state, False, defect
    if defect <= 1e-13:
        return tmp, False, defect
    n = state.grid.size
    if state.is_hfb:
        new_g, new_a = [], []
        for gb, ab in zip(g, a):
            big = np.block([[gb, ab], [ab.conj().T, np.eye(n) - gb.conj()]])
            ev, vec = np.linalg.eigh(0.5 * (big + big.conj().T))
            big = (vec * np.clip(ev, 0.0, 1.0)) @ vec.conj().T
            new_g.append(0.5 * (big[:n, :n] + big[:n, :n].conj().T))
            new_a.append(0.5 * (big[:n, n:] - big[:n, n:].T))
        out = HFBState(state.grid, new_g, new_a, state.time, state.step)
    else:
        new_g = []
        for gb in g:
            ev, vec = np.linalg.eigh(gb)
            new_g.append((vec * np.clip(ev, 0.0, 1.0)) @ vec.conj().T)
        out = HFState(state.grid, new_g, state.time, state.step)
    return out, True, defect


def integrate(state, model, config, checkpoint=None):
    """Evolve ``state`` to ``config.t_final`` or until breakdown.

    Parameters
    ----------
    checkpoint : callable, optional
        Called as ``checkpoint(state)`` at every sample.

    Returns
    -------
    TrajectoryRecord

    Raises
    ------
    ValueError
        If the initial datum has weight in sectors above ``model.cutoff``;
        the cutoff flow is only defined for data supported below it.
    """
    above = [b for b in state.g[model.cutoff + 1:]]
    if state.is_hfb:
        above += state.a[model.cutoff + 1:]
    if any(np.any(b) for b in above):
        raise ValueError(f"initial datum has weight in sectors above the cutoff {model.cutoff}")
    traj = TrajectoryRecord("hfb" if state.is_hfb else "hf")
    if state.is_hfb and model.kappa >= HFB_WELLPOSED_KAPPA:
        traj.flags["kappa_outside_hfb_wellposed_range"] = True
    traj.flags["kappa"] = model.kappa
    m0 = compute_moments(state, model)
    traj.moments.append(m0)
    traj.dts.append(0.0)
    if config.keep_states:
        traj.states.append(state)
    if checkpoint:
        checkpoint(state)
    e_scale = max(abs(m0.energy), m0.kinetic, 1e-300)
    k_ref = m0.sqrt_laplacian
    dt = min(config.dt_init, config.dt_max)
    t = state.time
    t_end = state.time + config.t_final
    next_sample = t + config.sample_interval
    energy = m0.energy
    dt_cap = config.cfl / _spectral_bound(state, model)
    steps_since_projection = 0
    last_dt = dt

    def fail(reason, current):
        traj.breakdown = True
        traj.reason = reason
        if traj.moments[-1].time < current.time:
            traj.moments.append(compute_moments(current, model))
            traj.dts.append(last_dt)
            if config.keep_states:
                traj.states.append(current)

    while t < t_end - 1e-12 * max(1.0, abs(t_end)):
        if traj.steps + traj.rejected >= config.max_steps:
            fail("dt-collapse", state)
            break
        target = min(next_sample, t_end)
        h = min(dt, target - t)
        if config.adaptive:
            h = min(h, dt_cap)
            full = rk4_step(state, model, h)
            half = rk4_step(rk4_step(state, model, 0.5 * h), model, 0.5 * h)
            err = _difference(full, half) / 15.0
            new_energy = total_energy(half, model.table, model.kinetics)
            drift = abs(new_energy - energy) / e_scale
            ratio = max(err / config.step_tol, drift / (config.energy_tol * h))
            if not math.isfinite(ratio) or ratio > 1.0:
                traj.rejected += 1
                factor = 0.5 if not math.isfinite(ratio) else max(0.2, 0.9 * ratio ** (-0.2))
                dt = h * factor
                if dt < config.dt_min:
                    fail("dt-collapse", state)
                    break
                continue
            new = half
            energy = new_energy
            grow = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio ** (-0.2))
            # do not let a short step forced by a sample time shrink the next one
            dt = max(dt, h) if h < dt and ratio < 1.0 else h * max(1.0, grow)
            dt = min(dt, config.dt_max)
        else:
            new = rk4_step(state, model, h)
        last_dt = h
        traj.steps += 1
        new.time = t + h
        new.step = state.step + 1
        state = new
        t = state.time
        steps_since_projection += 1
        if steps_since_projection >= config.projection_interval:
            steps_since_projection = 0
            projected, clamped, defect = _project(state, config.constraint_tol)
            if defect > config.constraint_tol:
                fail("constraint-violation", state)
                break
            traj.clamps += int(clamped)
            state = projected
            if config.adaptive:
                dt_cap = config.cfl / _spectral_bound(state, model)
                energy = total_energy(state, model.table, model.kinetics)
        if t >= target - 1e-12 * max(1.0, abs(target)):
            mom = compute_moments(state, model)
            traj.moments.append(mom)
            traj.dts.append(last_dt)
            if config.keep_states:
                traj.states.append(state)
            if checkpoint:
                checkpoint(state)
            next_sample = target + config.sample_interval
            if max(mom.pauli_defect, mom.bogoliubov_defect) > config.constraint_tol:
                traj.breakdown, traj.reason = True, "constraint-violation"
                break
            if k_ref > 0 and mom.sqrt_laplacian > config.kinetic_ceiling * k_ref:
                traj.breakdown, traj.reason = True, "kinetic-ceiling"
                break
            if mom.boundary_density > config.boundary_threshold:
                traj.breakdown, traj.reason = True, "boundary-leak"
                break
    if not config.keep_states:
        traj.states = [state]
    elif traj.states[-1] is not state and not traj.breakdown:
        traj.states.append(state)
    return traj


def hf_vs_hfb_consistency(state, model, config):
    """Run HF and HFB (with ``alpha_0 = 0``) from the same ``gamma_0``.

    Returns a dict with the largest sector-wise deviation over the common
    samples; not applicable when ``state`` carries pairing.
    """
    if state.is_hfb and any(np.any(a) for a in state.a):
        return {"applicable": False, "reason": "alpha_0 != 0: the flows differ by design"}
    base = state.to_hf() if state.is_hfb else state
    cfg = IntegratorConfig(**{**asdict(config), "keep_states": True})
    hf = integrate(base, model, cfg)
    hfb = integrate(base.to_hfb(), model, cfg)
    n = min(len(hf.states), len(hfb.states))
    dev_g = max(max(float(np.abs(x - y).max()) for x, y in zip(s1.g, s2.g))
                for s1, s2 in zip(hf.states[:n], hfb.states[:n]))
    dev_a = max(max(float(np.abs(a).max()) for a in s.a) for s in hfb.states[:n])
    return {"applicable": True, "max_deviation": max(dev_g, dev_a), "density_deviation": dev_g,
            "pairing_max": dev_a, "samples": n,
            "times_match": bool(np.allclose(hf.times[:n], hfb.times[:n], rtol=0, atol=1e-14))}
