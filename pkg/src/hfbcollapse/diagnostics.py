"""Virial observables, blowup monitors and derived-inequality checks.

``M = sum_i x_i sqrt(-Delta + m^2) x_i`` and ``A = x.p + p.x`` are the two
virial operators.  Along the flow, ``d/dt Tr A gamma`` is bounded by twice the
(conserved) energy plus a threshold term, which forces ``Tr M gamma`` under a
downward parabola when the energy is negative enough.  The functions here
evaluate these quantities in the sector representation and test the
inequalities on recorded trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checks import CheckResult
from .meanfield import coupled_block
from .radial import operator_norm
from .state import (
    CONSTANTS,
    Moments,
    angular_moment,
    boundary_density,
    constraint_defects,
    energy_parts,
    pairing_mass,
    particle_number,
)

__all__ = [
    "virial_M",
    "virial_M_rate",
    "virial_A",
    "sqrt_laplacian_trace",
    "compute_moments",
    "EnvelopeParams",
    "step2_inequality",
    "envelope_params",
    "envelope_check",
    "l2_moment_derivatives",
    "kl_difference_scan",
    "pairing_commutator_scan",
    "virial_M_block",
]


class NormalizationError(RuntimeError):
    """A manifestly nonnegative quantity came out negative."""


def virial_M(state, kinetics, tol=1e-9):
    """``Tr M gamma`` through the sector shift ``(x.y) gamma``.

    Multiplying ``gamma(x, y)`` by ``x.y = r r' t`` and using
    ``(2l+1) t P_l = (l+1) P_{l+1} + l P_{l-1}`` moves sector ``l`` weight to
    ``l +- 1``.  With ``R = diag(r)``:

        Tr M gamma = sum_m Tr(K_m R (m G_{m-1} + (m+1) G_{m+1}) R).

    ``kinetics`` must reach sector ``lmax + 1``.
    """
    r = state.grid.points
    total = _virial_M_form(state.g, r, kinetics)
    scale = sum(np.trace(k.matrix).real for k in kinetics) * max(1.0, np.max(r)) ** 2
    if total < -tol * scale * max(1.0, particle_number(state)):
        raise NormalizationError(f"Tr M gamma = {total:.3e} is negative")
    return float(total)


def _virial_M_form(g, r, kinetics):
    lmax = len(g) - 1
    if len(kinetics) < lmax + 2:
        raise ValueError("virial_M needs kinetic operators up to lmax + 1")
    total = 0.0
    for m in range(lmax + 2):
        shifted = np.zeros_like(g[0])
        if 1 <= m <= lmax + 1:
            shifted = shifted + m * g[m - 1]
        if m + 1 <= lmax:
            shifted = shifted + (m + 1) * g[m + 1]
        if not np.any(shifted):
            continue
        h = r[:, None] * shifted * r[None, :]
        total += np.sum(kinetics[m].matrix.T * h).real
    return CONSTANTS["c0"] * total


def virial_M_rate(state, model):
    """Exact ``d/dt Tr M gamma_t`` from the flow's right-hand side.

    ``Tr M gamma`` is linear in the sector blocks, so applying it to
    ``dG_l/dt`` gives the derivative without differencing.  The difference
    ``virial_M_rate - Tr A gamma`` is the interaction contribution that the
    blowup argument bounds by a constant.
    """
    from .dynamics import state_derivative

    return _virial_M_form(state_derivative(state, model)[0], state.grid.points, model.kinetics)


def virial_A(state, dilation):
    """``Tr A gamma = sum (2l+1) Tr(A_rad G_l)`` (real part)."""
    mult = state.multiplicities()
    val = sum(m * np.sum(dilation.matrix.T * b) for m, b in zip(mult, state.g))
    return CONSTANTS["c0"] * float(np.real(val))


def virial_A_imag(state, dilation):
    mult = state.multiplicities()
    val = sum(m * np.sum(dilation.matrix.T * b) for m, b in zip(mult, state.g))
    return float(np.imag(val))


def sqrt_laplacian_trace(state, massless):
    """``Tr (-Delta)^(1/2) gamma``, the quantity that diverges at blowup."""
    mult = state.multiplicities()
    return float(sum(m * np.sum(k.matrix.T * b).real for m, k, b in zip(mult, massless, state.g)))


def compute_moments(state, model):
    """All recorded observables for one state."""
    parts = energy_parts(state, model.table, model.kinetics)
    energy = parts["kinetic"] + parts["direct"] + parts["exchange"] + parts["pairing"]
    pauli, bogo, proj = constraint_defects(state)
    eps = model.potential.epsilon
    return Moments(
        time=state.time,
        particle_number=particle_number(state),
        energy=energy,
        kinetic=parts["kinetic"],
        L2_moment=angular_moment(state, 2.0),
        L3_moment=angular_moment(state, 3.0),
        L65_moment=angular_moment(state, 6.0 + eps),
        virial_M=virial_M(state, model.kinetics),
        virial_A=virial_A(state, model.dilation),
        pairing_mass=pairing_mass(state),
        pauli_defect=pauli,
        bogoliubov_defect=bogo,
        boundary_density=boundary_density(state),
        sqrt_laplacian=sqrt_laplacian_trace(state, model.massless),
        projector_defect=proj,
    )


# -- trajectory inequalities ---------------------------------------------


def _series(traj, name):
    return np.array([getattr(m, name) for m in traj.moments])


def _centered_derivative(t, y):
    """Centered derivative at interior samples and a truncation-error estimate.

    Works on nonuniform samples (three-point formula).  The error estimate is
    ``h_+ h_- |y'''| / 6`` with ``y'''`` from neighbouring second differences.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    d = (h0**2 * y[2:] - h1**2 * y[:-2] + (h1**2 - h0**2) * y[1:-1]) / (h0 * h1 * (h0 + h1))
    second = 2.0 * (h0 * y[2:] - (h0 + h1) * y[1:-1] + h1 * y[:-2]) / (h0 * h1 * (h0 + h1))
    third = np.zeros_like(second)
    if len(second) > 1:
        slope = np.abs(np.diff(second) / np.maximum(np.diff(t[1:-1]), 1e-300))
        third[:-1] = slope
        third[1:] = np.maximum(third[1:], slope)
    err = h0 * h1 * third / 6.0
    return d, err


def step2_inequality(traj, model, error_factor=3.0, rounding=1e-10):
    """``d/dt Tr A gamma <= 2 E + kappa sup_neg ((Tr gamma)^2 [+ Tr gamma])``.

    The derivative is a centered difference of the recorded ``Tr A gamma``;
    a sample passes if it exceeds the bound by no more than
    ``error_factor`` times the finite-difference error estimate (plus a
    small rounding floor).
    """
    t = _series(traj, "time")
    if len(t) < 3:
        return CheckResult("virial A inequality", False, details={"reason": "fewer than 3 samples"},
                           applicable=False)
    a_series = _series(traj, "virial_A")
    deriv, err = _centered_derivative(t, a_series)
    energy = _series(traj, "energy")[1:-1]
    nb = _series(traj, "particle_number")[1:-1]
    kappa, sup_neg = model.kappa, model.potential.sup_neg
    q = nb**2 + (nb if traj.model == "hfb" else 0.0)
    bound = 2.0 * energy + kappa * sup_neg * q
    scale = rounding * np.maximum(1.0, np.abs(bound))
    excess = deriv - bound
    allowed = error_factor * err + scale
    ok = excess <= allowed
    margin = float(np.min(allowed - excess))
    return CheckResult(
        "virial A inequality", bool(np.all(ok)), margin, error_factor,
        len(deriv),
        {"max_excess": float(np.max(excess)), "min_slack": float(np.min(bound - deriv)),
         "fd_error_max": float(np.max(err)), "violations": int(np.sum(~ok))},
    )


@dataclass
class EnvelopeParams:
    """Coefficients of the parabola ``a t^2 + b t + c`` bounding ``Tr M gamma``."""

    a: float
    b: float
    c: float
    b_fit: float = 0.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c = Tr M gamma_0 must be nonnegative")

    def __call__(self, t):
        t = np.asarray(t, float)
        return self.a * t**2 + self.b * t + self.c

    def vanishing_time(self):
        """Positive root of the parabola (``inf`` when it never vanishes)."""
        if self.a >= 0:
            return math.inf
        disc = self.b**2 - 4 * self.a * self.c
        return float((-self.b - math.sqrt(disc)) / (2 * self.a))


def envelope_params(traj, model, fit_samples=4):
    """Envelope from the initial data, with the linear coefficient fitted.

    ``a = E_0 + (kappa/2) sup_neg ((Tr gamma_0)^2 [+ Tr gamma_0])`` and
    ``c = Tr M gamma_0`` are known.  The linear coefficient contains a
    constant without an explicit value; it is set to the smallest ``b`` for
    which the parabola dominates the first ``fit_samples`` samples (and is at
    least ``Tr A gamma_0``), then frozen for the rest of the run.
    """
    m0 = traj.moments[0]
    nb = m0.particle_number
    q = nb**2 + (nb if traj.model == "hfb" else 0.0)
    a = m0.energy + 0.5 * model.kappa * model.potential.sup_neg * q
    c = m0.virial_M
    b = m0.virial_A
    t = _series(traj, "time")[1: fit_samples + 1]
    mvals = _series(traj, "virial_M")[1: fit_samples + 1]
    b_fit = 0.0
    if len(t):
        need = np.max((mvals - a * t**2 - c) / t)
        if need > b:
            b_fit = float(need - b)
            b = float(need)
    return EnvelopeParams(a, b, c, b_fit)


def envelope_check(traj, params, rel_tol=1e-9):
    """``Tr M gamma_t <= a t^2 + b t + c`` at every sample; reports ``t*``.

    Not applicable when ``a >= 0``.  ``details["b_required"]`` is the
    smallest linear coefficient that would cover the whole run; comparing it
    with the frozen ``b`` shows how far the early-time fit undershoots.
    """
    t = _series(traj, "time")
    mvals = _series(traj, "virial_M")
    tstar = params.vanishing_time()
    details = {"a": params.a, "b": params.b, "c": params.c, "b_fit": params.b_fit,
               "t_star": tstar, "t_end": float(t[-1]),
               "breakdown": traj.breakdown, "reason": traj.reason}
    if params.a >= 0:
        return CheckResult("virial M envelope", True, details=details, applicable=False)
    env = params(t)
    slack = env - mvals
    tol = rel_tol * max(1.0, params.c)
    ok = slack >= -tol
    later = t > 0
    b_required = float(np.max((mvals[later] - params.a * t[later]**2 - params.c) / t[later])) \
        if np.any(later) else params.b
    details.update(fraction_of_t_star=float(t[-1] / tstar), min_M=float(mvals.min()),
                   violations=int(np.sum(~ok)), b_required=b_required,
                   decreasing_at_end=bool(len(mvals) > 1 and mvals[-1] < mvals[-2]))
    return CheckResult("virial M envelope", bool(np.all(ok)), float(np.min(slack)), tol, len(t), details)


# -- |L|^2 moment under pairing ---------------------------------------------


def _sector_v_alpha(state, table, which="full"):
    """Blocks of ``V alpha`` (``which='full'``), ``-alpha/|x-y|`` (``'newton'``) or ``w alpha`` (``'w'``)."""
    if which == "full":
        return [coupled_block(ell, state.a, table) for ell in range(table.lmax + 1)]
    from .kernels import KernelTable, newton_kernel  # local: only needed here

    r = state.grid.points
    mult = []
    for m in range(2 * table.lmax + 1):
        newton = table.potential.newton_weight * newton_kernel(m, 0, r[:, None], r[None, :], table.gaunt)
        mult.append(newton if which == "newton" else table.multipoles[m] - newton)
    sub = KernelTable(table.lmax, table.grid, table.potential, table.gaunt, table.F, np.array(mult))
    return [coupled_block(ell, state.a, sub) for ell in range(table.lmax + 1)]


def l2_moment_derivatives(state, model, cutoff=None):
    """First and second time derivative of ``Tr |L|^2 gamma_t`` at ``t = 0``.

    The first derivative is ``sum_l (2l+1) l(l+1) Tr (G_alpha)_l`` (only the
    pairing term can change the sector populations).

    For pairing supported in sector 0 the first derivative vanishes.  The
    second derivative is then
    ``2 sum_l (2l+1) l(l+1) Re Tr((Pi_l - Pi_l conj(G_l) - G_l Pi_l) Pi_l*)``
    with ``Pi = kappa V alpha_0``, summed over the sectors the flow keeps
    (``l <= cutoff``).  When ``gamma_0`` is radial as well (only sector 0
    occupied) this is ``kappa^2 <V alpha_0, (L_x^2 + L_y^2) V alpha_0>``,
    reported as ``details["radial_form"]``; ``details`` also lists the
    contributions of ``alpha_0/|x-y|`` and ``w alpha_0`` separately.

    Returns ``(first, second, details)``; ``second`` is ``None`` when the
    pairing is not confined to sector 0.
    """
    cutoff = model.cutoff if cutoff is None else cutoff
    if not state.is_hfb:
        return 0.0, 0.0, {}
    from .meanfield import g_alpha_term

    ell = np.arange(state.lmax + 1)
    weight = (2 * ell + 1) * ell * (ell + 1.0)
    ga = g_alpha_term(state, model.table,
                      [model.kappa * b if k <= cutoff else 0 * b
                       for k, b in enumerate(_sector_v_alpha(state, model.table))])
    first = float(sum(w * np.trace(b).real for w, b in zip(weight, ga)))
    sector0 = all(not np.any(b) for b in state.a[1:])
    if not sector0:
        return first, None, {"sector0": False}
    full = _sector_v_alpha(state.with_sectors(model.table.lmax), model.table)
    newton = _sector_v_alpha(state.with_sectors(model.table.lmax), model.table, "newton")
    wpart = _sector_v_alpha(state.with_sectors(model.table.lmax), model.table, "w")
    k2 = model.kappa**2
    lt = np.arange(model.table.lmax + 1)
    wt = (2 * lt + 1) * lt * (lt + 1.0)

    def mass(blocks, top):
        return float(sum(wt[k] * np.sum(np.abs(blocks[k]) ** 2) for k in range(top + 1)))

    radial_form = 2.0 * k2 * mass(full, cutoff)
    g_all = state.with_sectors(model.table.lmax).g
    second = 0.0
    for k in range(1, cutoff + 1):
        p = model.kappa * full[k]
        x = p - p @ g_all[k].conj() - g_all[k] @ p
        second += 2.0 * wt[k] * float(np.sum(x * p.conj()).real)
    details = {
        "sector0": True,
        "gamma_radial": all(not np.any(b) for b in state.g[1:]),
        "radial_form": radial_form,
        "second_newton_only": 2.0 * k2 * mass(newton, cutoff),
        "second_w_only": 2.0 * k2 * mass(wpart, cutoff),
        "second_untruncated_table": 2.0 * k2 * mass(full, model.table.lmax),
        "cutoff": cutoff,
    }
    return first, second, details


# -- operator-norm scans ------------------------------------------------------


def kl_difference_scan(lmax, grid, kinetics):
    """``||(K_l - K_l') r||`` for all pairs up to ``lmax``, with a fitted constant.

    Returns a dict with the norm table, the ratio to ``(1 + l + l')|l - l'|``
    and the fitted ``C`` (maximum ratio).
    """
    if len(kinetics) < lmax + 1:
        raise ValueError("need kinetic operators up to lmax")
    r = grid.points
    norms = np.zeros((lmax + 1, lmax + 1))
    ratio = np.zeros_like(norms)
    for l1 in range(lmax + 1):
        for l2 in range(l1 + 1, lmax + 1):
            diff = (kinetics[l1].matrix - kinetics[l2].matrix) * r[None, :]
            val = operator_norm(diff)
            norms[l1, l2] = norms[l2, l1] = val
            shape = (1 + l1 + l2) * abs(l1 - l2)
            ratio[l1, l2] = ratio[l2, l1] = val / shape
    return {"norms": norms, "ratio": ratio, "C": float(ratio.max()), "grid": grid.spec()}


def virial_M_block(ell, kinetics, grid):
    """Sector ``ell`` of ``M``: ``R ((l+1) K_{l+1} + l K_{l-1}) R / (2l+1)``."""
    r = grid.points
    k = (ell + 1) * kinetics[ell + 1].matrix
    if ell >= 1:
        k = k + ell * kinetics[ell - 1].matrix
    return r[:, None] * k * r[None, :] / (2 * ell + 1)


def pairing_commutator_scan(states, model):
    """Shape scan for the pairing commutator ``<alpha, [M_x + M_y, V] alpha>``.

    The commutator expectation is ``2i Im <(M_x + M_y) alpha, V alpha>``;
    its magnitude is compared with
    ``(Tr(1+|L|^3)gamma)^(1/2) (Tr(1+|L|^(6+eps))gamma)^(1/2) (sum_l (1+l^(1+eps))^-1)^(1/2)``.
    The constant has no explicit value, so the scan only reports the largest
    ratio over the given states.
    """
    eps = model.potential.epsilon
    rows = []
    lt = np.arange(model.lmax + 1)
    tail = math.sqrt(float(np.sum(1.0 / (1.0 + lt ** (1 + eps)))))
    for st in states:
        if not st.is_hfb:
            continue
        nb = particle_number(st)
        shape = math.sqrt(nb + angular_moment(st, 3.0)) * math.sqrt(nb + angular_moment(st, 6 + eps)) * tail
        va = _sector_v_alpha(st, model.table)
        val = 0.0
        for ell, (a, v) in enumerate(zip(st.a, va)):
            mb = virial_M_block(ell, model.kinetics, model.grid)
            ma = mb @ a + a @ mb.T
            val += (2 * ell + 1) * 2.0 * np.imag(np.sum(ma.conj() * v))
        rows.append({"commutator": float(abs(val)), "shape": shape,
                     "ratio": abs(val) / shape if shape else 0.0})
    return {"rows": rows, "C": max((r["ratio"] for r in rows), default=0.0)}
