"""Spherically symmetric HF and HFB states in the sector representation.

A rotation-invariant one-body density matrix has the expansion

    gamma(x, y) = sum_l g_l(|x|, |y|) (2l + 1) P_l(omega_x . omega_y),

and acts on the ``(l, m)`` subspace as the radial operator ``4 pi g_l``.  We
store ``G_l = 4 pi g_l`` (in unitary grid coordinates, see :mod:`.radial`),
which is the operator itself: the Pauli principle reads ``0 <= G_l <= 1`` and
every trace is a plain matrix trace weighted by the multiplicity ``2l + 1``.
Pairing matrices ``A_l = 4 pi a_l`` are stored the same way and are
antisymmetric.

The constants linking these blocks to three-dimensional integrals are
collected in :data:`CONSTANTS`; the tensor-grid oracle pins them and the test
suite freezes them.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .checks import CheckResult
from .kernels import direct_potential
from .radial import build_grid

__all__ = [
    "CONSTANTS",
    "HFState",
    "HFBState",
    "Moments",
    "InitialDataError",
    "particle_number",
    "angular_moment",
    "density",
    "energy_parts",
    "hf_energy",
    "hfb_energy",
    "pairing_mass",
    "boundary_density",
    "check_constraints",
    "constraint_defects",
    "make_initial_data",
    "save_checkpoint",
    "load_checkpoint",
]

FOUR_PI = 4.0 * math.pi

#: Normalisations of the sector formulas (see module docstring).
#:  c0: Tr gamma = c0 sum (2l+1) Tr G_l
#:  rho: rho(r) = rho * sum (2l+1) G_l(r, r) (kernel values)
#:  c1: two-body pairing  c1 sum (2l+1)(2l'+1) <G_l, F_{l,l'} o G_l'>
#:  c2: exchange block    c2 sum (2l'+1)(2m+1) G(l,l',m) F_{m,0} o G_l'
CONSTANTS = {
    "c0": 1.0,
    "rho": 1.0 / FOUR_PI,
    "c1": 1.0 / FOUR_PI,
    "c2": 1.0 / (2.0 * FOUR_PI),
    "block_convention": "G_l = 4*pi*g_l in unitary coordinates sqrt(w_i) g(r_i,r_j) sqrt(w_j)",
    "conjugation": "complex conjugate in the real radial grid basis",
}

_stamps = itertools.count(1)


def _as_blocks(blocks, n, what):
    out = []
    for k, b in enumerate(blocks):
        b = np.array(b, dtype=complex)
        if b.shape != (n, n):
            raise ValueError(f"{what} block {k} has shape {b.shape}, expected {(n, n)}")
        out.append(b)
    return out


@dataclass(eq=False)
class HFState:
    """Sector blocks ``G_0 .. G_lmax`` of a spherically symmetric density matrix.

    Treat instances as values: operations return new states.  ``stamp`` is a
    unique id used to match cached mean-field blocks with the state they came
    from.
    """

    grid: object
    g: list
    time: float = 0.0
    step: int = 0
    stamp: int = field(default=0, compare=False)

    def __post_init__(self):
        self.g = _as_blocks(self.g, self.grid.size, "density")
        if not self.g:
            raise ValueError("a state needs at least one sector")
        self.stamp = next(_stamps)

    @property
    def lmax(self):
        return len(self.g) - 1

    @property
    def is_hfb(self):
        return False

    @property
    def a(self):
        return [np.zeros_like(b) for b in self.g]

    def multiplicities(self):
        return 2 * np.arange(self.lmax + 1) + 1

    def replace(self, g=None, time=None, step=None):
        return HFState(self.grid, self.g if g is None else g,
                       self.time if time is None else time, self.step if step is None else step)

    def conjugate(self):
        return HFState(self.grid, [b.conj() for b in self.g], self.time, self.step)

    def with_sectors(self, lmax):
        """Same state padded with zero sectors (or truncated) to ``lmax``."""
        return self.replace(g=_resize(self.g, lmax))

    def to_hfb(self):
        return HFBState(self.grid, self.g, [np.zeros_like(b) for b in self.g], self.time, self.step)


class HFBState(HFState):
    """HF blocks plus antisymmetric pairing blocks ``A_0 .. A_lmax``."""

    def __init__(self, grid, g, a, time=0.0, step=0):
        self.grid = grid
        self.a_blocks = _as_blocks(a, grid.size, "pairing")
        self.time = time
        self.step = step
        self.g = g
        self.__post_init__()
        if len(self.a_blocks) != len(self.g):
            raise ValueError("pairing and density need the same number of sectors")

    @property
    def is_hfb(self):
        return True

    @property
    def a(self):
        return self.a_blocks

    def replace(self, g=None, a=None, time=None, step=None):
        return HFBState(self.grid, self.g if g is None else g, self.a_blocks if a is None else a,
                        self.time if time is None else time, self.step if step is None else step)

    def conjugate(self):
        return HFBState(self.grid, [b.conj() for b in self.g], [b.conj() for b in self.a_blocks],
                        self.time, self.step)

    def with_sectors(self, lmax):
        return self.replace(g=_resize(self.g, lmax), a=_resize(self.a_blocks, lmax))

    def to_hf(self):
        return HFState(self.grid, self.g, self.time, self.step)


def _resize(blocks, lmax):
    n = blocks[0].shape[0]
    out = [b.copy() for b in blocks[: lmax + 1]]
    out += [np.zeros((n, n), dtype=complex) for _ in range(lmax + 1 - len(out))]
    return out


@dataclass
class Moments:
    """Observables recorded along a trajectory."""

    time: float
    particle_number: float
    energy: float
    kinetic: float
    L2_moment: float
    L3_moment: float
    L65_moment: float
    virial_M: float
    virial_A: float
    pairing_mass: float
    pauli_defect: float
    bogoliubov_defect: float
    boundary_density: float
    sqrt_laplacian: float
    projector_defect: float = 0.0


# -- traces and moments --------------------------------------------------


def particle_number(state):
    """``Tr gamma``."""
    mult = state.multiplicities()
    return CONSTANTS["c0"] * float(sum(m * np.trace(b).real for m, b in zip(mult, state.g)))


def angular_moment(state, s=2.0):
    """``Tr |L|^s gamma`` (``|L|^2 = l(l+1)`` on sector ``l``)."""
    if not s > 0:
        raise ValueError("moment order must be positive")
    ell = np.arange(state.lmax + 1)
    weight = (2 * ell + 1) * (ell * (ell + 1.0)) ** (s / 2.0)
    return CONSTANTS["c0"] * float(sum(w * np.trace(b).real for w, b in zip(weight, state.g)))


def density(state):
    """``rho(r_i) = gamma(x, x)`` at the grid points (real part)."""
    diag = sum(m * np.diag(b).real for m, b in zip(state.multiplicities(), state.g))
    return CONSTANTS["rho"] * diag / state.grid.weights


def pairing_mass(state):
    """``Tr alpha* alpha = sum (2l+1) ||A_l||_HS^2``."""
    if not state.is_hfb:
        return 0.0
    return float(sum(m * np.sum(np.abs(b) ** 2) for m, b in zip(state.multiplicities(), state.a)))


def boundary_density(state, fraction=0.1):
    """Share of the particle number located in the outer ``fraction`` of the box."""
    grid = state.grid
    rho = density(state)
    outer = grid.points > (1.0 - fraction) * grid.box_radius
    total = grid.integrate(rho) * FOUR_PI
    if total <= 0:
        return 0.0
    return float(FOUR_PI * np.sum(grid.weights[outer] * rho[outer]) / total)


def _two_body(blocks, table, conj_blocks=None):
    """``c1 sum (2l+1)(2l'+1) sum_ij F_{l,l'} X_l conj(X_l')`` (real part)."""
    conj_blocks = blocks if conj_blocks is None else conj_blocks
    total = 0.0
    for l1, b1 in enumerate(blocks):
        for l2, b2 in enumerate(conj_blocks):
            total += (2 * l1 + 1) * (2 * l2 + 1) * np.sum(table.F[l1, l2] * b1 * b2.conj()).real
    return CONSTANTS["c1"] * float(total)


def energy_parts(state, table, kinetics):
    """Kinetic, direct, exchange and pairing contributions to the energy.

    Interaction parts already include the coupling ``kappa``.
    """
    if table.lmax < state.lmax:
        raise ValueError(f"kernel table covers sectors up to {table.lmax}, state has {state.lmax}")
    if len(kinetics) < state.lmax + 1:
        raise ValueError("missing kinetic operators for some sectors")
    kappa = table.potential.kappa
    mult = state.multiplicities()
    kinetic = float(sum(m * np.sum(k.matrix.T * b).real for m, k, b in zip(mult, kinetics, state.g)))
    rho = density(state)
    phi = direct_potential(rho, state.grid, table)
    # rho and V*rho are radial functions: the outer angular integral adds 4 pi
    direct = 0.5 * kappa * FOUR_PI * float(state.grid.integrate(rho * phi))
    exchange = -0.5 * kappa * _two_body(state.g, table)
    pairing = 0.5 * kappa * _two_body(state.a, table) if state.is_hfb else 0.0
    return {"kinetic": kinetic, "direct": direct, "exchange": exchange, "pairing": pairing}


def hf_energy(state, table, kinetics):
    """HF energy: kinetic + direct + exchange."""
    p = energy_parts(state.to_hf() if state.is_hfb else state, table, kinetics)
    return p["kinetic"] + p["direct"] + p["exchange"]


def hfb_energy(state, table, kinetics):
    """HF energy plus the pairing term ``(kappa/2) int |alpha|^2 V``."""
    p = energy_parts(state, table, kinetics)
    return p["kinetic"] + p["direct"] + p["exchange"] + p["pairing"]


def total_energy(state, table, kinetics):
    return hfb_energy(state, table, kinetics) if state.is_hfb else hf_energy(state, table, kinetics)


# -- constraints ---------------------------------------------------------


def _herm(m):
    return 0.5 * (m + m.conj().T)


def constraint_defects(state):
    """Worst violations ``(pauli, bogoliubov, projector)`` over the sectors.

    ``pauli`` is how far the spectrum of any ``G_l`` leaves ``[0, 1]``.
    ``bogoliubov`` is the largest of: the amount by which
    ``G_l(1 - G_l) - A_l A_l*`` fails to be nonnegative, how far the
    generalized block ``[[G, A], [A*, 1 - conj(G)]]`` leaves ``[0, 1]``, and
    the antisymmetry residual of ``A_l``.  ``projector`` is
    ``max ||G^2 + A A* - G||``.
    """
    pauli = bogo = proj = 0.0
    n = state.grid.size
    for g, a in zip(state.g, state.a):
        gh = _herm(g)
        ev = np.linalg.eigvalsh(gh)
        pauli = max(pauli, -ev[0], ev[-1] - 1.0)
        aa = a @ a.conj().T
        proj = max(proj, float(np.linalg.norm(gh @ gh + aa - gh, 2)))
        if state.is_hfb:
            bogo = max(bogo, -np.linalg.eigvalsh(_herm(gh - gh @ gh - aa))[0])
            big = np.block([[gh, a], [a.conj().T, np.eye(n) - gh.conj()]])
            evb = np.linalg.eigvalsh(_herm(big))
            bogo = max(bogo, -evb[0], evb[-1] - 1.0, float(np.abs(a + a.T).max()))
    return max(pauli, 0.0), max(bogo, 0.0), proj


def check_constraints(state, tol=1e-9):
    """Pauli and Bogoliubov constraints, sector by sector.

    Returns a list of :class:`CheckResult` (report only, never raises).
    """
    results = []
    for ell, (g, a) in enumerate(zip(state.g, state.a)):
        ev = np.linalg.eigvalsh(_herm(g))
        herm = float(np.abs(g - g.conj().T).max())
        worst = max(-ev[0], ev[-1] - 1.0, herm)
        results.append(CheckResult(
            f"pauli sector {ell}", worst <= tol, -worst, tol, len(ev),
            {"min_eig": float(ev[0]), "max_eig": float(ev[-1]), "hermiticity": herm},
        ))
        if state.is_hfb:
            gh = _herm(g)
            slack = np.linalg.eigvalsh(_herm(gh - gh @ gh - a @ a.conj().T))[0]
            anti = float(np.abs(a + a.T).max())
            worst_b = max(-slack, anti)
            results.append(CheckResult(
                f"bogoliubov sector {ell}", worst_b <= tol, -worst_b, tol, len(ev),
                {"min_eig_g(1-g)-aa*": float(slack), "antisymmetry": anti},
            ))
    if state.is_hfb:
        pm, nn = pairing_mass(state), particle_number(state)
        results.append(CheckResult("pairing mass <= particle number", pm <= nn + tol, nn - pm, tol, 1))
    return results


# -- initial data --------------------------------------------------------


class InitialDataError(ValueError):
    """Requested initial data could not be produced."""

    def __init__(self, message, achieved_energy=None):
        super().__init__(message)
        self.achieved_energy = achieved_energy


def _orthonormal_shells(grid, ell, count, sigma, center, chirp):
    """Gram-Schmidt orthonormalised ``r^(l+2k) exp(-(r-c)^2/(2 s^2))`` in unitary coordinates."""
    r = grid.points
    cols = [grid.to_unitary(r ** (ell + 2 * k) * np.exp(-((r - center) ** 2) / (2 * sigma**2)))
            for k in range(count)]
    q, _ = np.linalg.qr(np.array(cols).T)
    q = q * np.sign(np.sum(q, axis=0) + 1e-300)
    return q * np.exp(1j * chirp * r**2)[:, None]


def _shell_state(grid, lmax, params, model):
    orbitals = list(params.get("orbitals", [2] + [0] * lmax))
    orbitals = (orbitals + [0] * (lmax + 1))[: lmax + 1]
    sigma = float(params.get("sigma", 1.0))
    center = float(params.get("center", 0.0))
    chirp = float(params.get("chirp", 0.0))
    fill = float(params.get("fill", 1.0))
    pairing_sectors = set(params.get("pairing_sectors", [0]))
    pairing_fraction = float(params.get("pairing_fraction", 1.0))
    if not 0.0 < fill <= 1.0:
        raise InitialDataError("occupation 'fill' must lie in (0, 1]")
    if not 0.0 <= pairing_fraction <= 1.0:
        raise InitialDataError("'pairing_fraction' must lie in [0, 1]")
    n = grid.size
    gs, as_ = [], []
    for ell, count in enumerate(orbitals):
        g = np.zeros((n, n), dtype=complex)
        a = np.zeros((n, n), dtype=complex)
        if count:
            phi = _orthonormal_shells(grid, ell, count, sigma, center, chirp)
            g = fill * phi @ phi.conj().T
            if model == "hfb" and ell in pairing_sectors:
                s = pairing_fraction * math.sqrt(fill * (1.0 - fill))
                for j in range(0, count - 1, 2):
                    u, v = phi[:, j], phi[:, j + 1]
                    a += s * (np.outer(u, v) - np.outer(v, u))
        gs.append(g)
        as_.append(a)
    return gs, as_


def _fermi(evals, mu, temperature):
    x = np.clip((evals - mu) / temperature, -700, 700)
    return 1.0 / (1.0 + np.exp(x))


def _thermal_state(grid, lmax, params, model, kinetics):
    omega = float(params.get("omega", 1.0))
    temperature = float(params.get("temperature", 0.2))
    mu = float(params.get("mu", 1.0))
    delta = float(params.get("delta", 0.2))
    pairing_sectors = set(params.get("pairing_sectors", [0]))
    if temperature <= 0:
        raise InitialDataError("temperature must be positive")
    r = grid.points
    n = grid.size
    gs, as_ = [], []
    for ell in range(lmax + 1):
        h = kinetics[ell].matrix + np.diag(0.5 * omega**2 * r**2)
        h = 0.5 * (h + h.T)
        if model == "hfb" and ell in pairing_sectors and delta != 0.0:
            ev, vec = np.linalg.eigh(h)
            u, v = vec[:, 0], vec[:, 1]
            gap = delta * (np.outer(u, v) - np.outer(v, u))
            bdg = np.block([[h - mu * np.eye(n), gap], [gap.conj().T, -(h - mu * np.eye(n))]])
            ev, vec = np.linalg.eigh(bdg)
            # occupation of quasi-particle levels with energy e: f(e) at mu = 0
            gamma = (vec * _fermi(ev, 0.0, temperature)) @ vec.conj().T
            g = gamma[:n, :n]
            a = gamma[:n, n:]
            a = 0.5 * (a - a.T)
        else:
            ev, vec = np.linalg.eigh(h)
            g = (vec * _fermi(ev, mu, temperature)) @ vec.T
            a = np.zeros((n, n))
        gs.append(_herm(np.asarray(g, dtype=complex)))
        as_.append(np.asarray(a, dtype=complex))
    return gs, as_


def make_initial_data(family, params, grid, lmax, potential, kinetics, table=None,
                      model="hf", target=None, margin=0.1, kappa_max=1e4):
    """Build spherically symmetric initial data.

    Parameters
    ----------
    family : {"gaussian-shells", "thermal-like"}
        ``gaussian-shells``: in sector ``l``, ``orbitals[l]`` orthonormalised
        functions ``r^(l+2k) exp(-(r-center)^2/(2 sigma^2))`` times an optional
        phase ``exp(i chirp r^2)``, occupied with ``fill``.  For HFB, orbital
        pairs ``(u, v)`` in ``pairing_sectors`` carry ``A = s (u v^T - v u^T)``
        with ``s = pairing_fraction sqrt(fill (1 - fill))``; ``pairing_fraction
        = 1`` makes the generalized density matrix a projector.
        ``thermal-like``: Fermi occupation of ``K_l + omega^2 r^2 / 2``; for HFB
        the Fermi function of a Bogoliubov matrix with a small antisymmetric gap.
    target : {None, "negative-energy-HF", "negative-energy-HFB"}
        If set, raise ``kappa`` to ``(1 + margin)`` times the smallest value
        for which the energy lies below the blowup threshold
        ``-(kappa/2) sup_neg ((Tr gamma)^2 [+ Tr gamma])``.  The margin is then
        ``margin`` times the kinetic energy.

    Returns
    -------
    state, potential, info
        ``potential`` carries the possibly adjusted coupling.
    """
    if model not in ("hf", "hfb"):
        raise ValueError("model must be 'hf' or 'hfb'")
    if family == "gaussian-shells":
        gs, as_ = _shell_state(grid, lmax, params, model)
    elif family == "thermal-like":
        gs, as_ = _thermal_state(grid, lmax, params, model, kinetics)
    else:
        raise InitialDataError(f"unknown initial-data family {family!r}")
    state = HFBState(grid, gs, as_) if model == "hfb" else HFState(grid, gs)
    info = {"family": family, "kappa_in": potential.kappa}
    if target is None:
        return state, potential, info
    if target not in ("negative-energy-HF", "negative-energy-HFB"):
        raise InitialDataError(f"unknown target {target!r}")
    if table is None:
        raise ValueError("a kernel table is needed to reach an energy target")
    if target == "negative-energy-HFB" and not state.is_hfb:
        state = state.to_hfb()
    nb = particle_number(state)
    q = nb**2 + (nb if target == "negative-energy-HFB" else 0.0)
    parts = energy_parts(state, table, kinetics)
    kin = parts["kinetic"]
    kappa = potential.kappa
    per_kappa = (parts["direct"] + parts["exchange"] + parts["pairing"]) / kappa if kappa > 0 else 0.0
    slope = per_kappa + 0.5 * potential.sup_neg * q
    energy = kin + kappa * per_kappa
    if kappa <= 0 or slope >= 0:
        raise InitialDataError(
            f"energy {energy:.6g} cannot be pushed below the blowup threshold by rescaling kappa "
            f"(interaction slope {slope:.3g})", achieved_energy=energy)
    kappa_crit = kin / -slope
    new_kappa = max(kappa, (1.0 + margin) * kappa_crit)
    if new_kappa > kappa_max:
        raise InitialDataError(
            f"needs kappa = {new_kappa:.4g} > kappa_max = {kappa_max:.4g}", achieved_energy=energy)
    potential = potential.with_kappa(new_kappa)
    energy = kin + new_kappa * per_kappa
    threshold = -0.5 * new_kappa * potential.sup_neg * q
    info.update(kappa=new_kappa, kappa_crit=kappa_crit, energy=energy, threshold=threshold,
                threshold_margin=threshold - energy, particle_number=nb)
    return state, potential, info


# -- checkpoints ---------------------------------------------------------

_MAGIC = "hfbcollapse-checkpoint-1"


def save_checkpoint(path, state, potential=None, extra=None):
    """Write a JSON header line followed by raw little-endian complex128 blocks.

    Each block is row-major with interleaved real/imaginary parts; offsets in
    the header are relative to the first byte after the header line.
    """
    blocks = [("g", ell, b) for ell, b in enumerate(state.g)]
    if state.is_hfb:
        blocks += [("a", ell, b) for ell, b in enumerate(state.a)]
    entries, offset = [], 0
    for kind, ell, b in blocks:
        nbytes = b.size * 16
        entries.append({"kind": kind, "ell": ell, "shape": list(b.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format": _MAGIC,
        "dtype": "<f8 interleaved re/im, row-major",
        "model": "hfb" if state.is_hfb else "hf",
        "grid": state.grid.spec(),
        "lmax": state.lmax,
        "constants": CONSTANTS,
        "potential": potential.to_json() if potential is not None else None,
        "time": state.time,
        "step": state.step,
        "blocks": entries,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, _, b in blocks:
            fh.write(np.ascontiguousarray(b, dtype="<c16").tobytes())


def load_checkpoint(path, grid=None):
    """Inverse of :func:`save_checkpoint`; returns ``(state, header)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    if header.get("format") != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint written by this package")
    spec = header["grid"]
    if grid is None:
        grid = build_grid(spec["N"], spec["R"], spec["scheme"])
    elif grid.spec() != spec:
        raise ValueError("checkpoint grid does not match the supplied grid")
    blocks = {"g": {}, "a": {}}
    for e in header["blocks"]:
        raw = payload[e["offset"]: e["offset"] + e["nbytes"]]
        blocks[e["kind"]][e["ell"]] = np.frombuffer(raw, dtype="<c16").reshape(e["shape"]).copy()
    lmax = header["lmax"]
    gs = [blocks["g"][ell] for ell in range(lmax + 1)]
    if header["model"] == "hfb":
        state = HFBState(grid, gs, [blocks["a"][ell] for ell in range(lmax + 1)], header["time"], header["step"])
    else:
        state = HFState(grid, gs, header["time"], header["step"])
    return state, header
