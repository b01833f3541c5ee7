"""Velocity fields V^i(t, x, r) with certified Lipschitz metadata.

The gallery covers the standard models: congestion-driven pedestrian flow,
1D sedimentation, linear local fields, constant drifts, and the ODE/PDE
coupling where single-particle species follow their own right-hand sides.
Metadata (sup, Lip_x, Lip_r) is declared analytically per model and can be
cross-checked by the sampling auditor; every stability constant downstream
derives from these numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernels import AuditError, Kernel, KernelMatrix, convolve_vector_batch, diagonal_matrix, sample_box
from .measures import MeasureVector


@dataclass(frozen=True)
class VelocityField:
    """One species' velocity law.

    ``evaluate(t, x, r)`` maps time, position (d,) and the convolution
    vector r (k,) to a velocity (d,).  Fields of single-particle species may
    additionally receive the stacked positions of all such species
    (``needs_dirac_positions``), matching the coupled ODE block.
    """

    dim: int
    k: int
    evaluate: Callable[..., np.ndarray]
    sup_bound: float
    lip_x: float
    lip_r: float
    evaluate_batch: Callable[..., np.ndarray] | None = None
    needs_dirac_positions: bool = False


@dataclass(frozen=True)
class VelocityModel:
    """The full right-hand side: one field per species plus their kernels."""

    fields: tuple[VelocityField, ...]
    kernels: KernelMatrix
    dirac_species: tuple[int, ...] = ()

    def __post_init__(self):
        fields = tuple(self.fields)
        if len(fields) != self.kernels.k:
            raise ValueError("one velocity field per species required")
        if any(f.dim != self.kernels.dim or f.k != self.kernels.k for f in fields):
            raise ValueError("field dims must match the kernel matrix")
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "dirac_species", tuple(self.dirac_species))

    @property
    def k(self) -> int:
        return len(self.fields)

    @property
    def dim(self) -> int:
        return self.kernels.dim

    @property
    def lip_x(self) -> float:
        return max(f.lip_x for f in self.fields)

    @property
    def lip_r(self) -> float:
        return max(f.lip_r for f in self.fields)

    @property
    def sup_bound(self) -> float:
        return max(f.sup_bound for f in self.fields)


def lipschitz_bound_b(model: VelocityModel, mass: float) -> float:
    """Lipschitz constant of the effective field b(t,x) = V(t, x, rho*eta)."""
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    return model.lip_x + model.lip_r * model.kernels.lip_x * mass


def dirac_positions(model: VelocityModel, rho: MeasureVector) -> np.ndarray:
    """Stacked positions of the single-particle species, shape (k1, d)."""
    rows = []
    for j in model.dirac_species:
        mu = rho.species[j]
        if len(mu) != 1:
            raise ValueError(
                f"Dirac species {j} must hold exactly one particle, found {len(mu)}"
            )
        rows.append(mu.positions[0])
    return np.array(rows).reshape(len(rows), model.dim)


def velocity_batch(
    model: VelocityModel,
    source: MeasureVector,
    i: int,
    t: float,
    points: np.ndarray,
) -> np.ndarray:
    """V^i(t, x, (source * eta^i)(x)) at many points, shape (M, d)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    conv = convolve_vector_batch(source, model.kernels.row(i), t, pts)
    field = model.fields[i]
    extra = ()
    if field.needs_dirac_positions:
        extra = (dirac_positions(model, source),)
    if field.evaluate_batch is not None:
        return np.asarray(field.evaluate_batch(t, pts, conv, *extra), dtype=np.float64)
    return np.array(
        [np.atleast_1d(field.evaluate(t, pts[m], conv[m], *extra)) for m in range(pts.shape[0])],
        dtype=np.float64,
    )


def eval_nonlocal_velocity(
    model: VelocityModel, rho: MeasureVector, i: int, t: float, x: np.ndarray
) -> np.ndarray:
    point = np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(1, -1)
    return velocity_batch(model, rho, i, t, point)[0]


# ---------------------------------------------------------------------------
# scalar speed laws and direction fields for the pedestrian model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeedLaw:
    """Scalar speed as a function of the averaged density."""

    func: Callable[[np.ndarray], np.ndarray]
    sup_bound: float
    lip: float


def congestion_speed(v_max: float = 1.0, r_crit: float = 1.0) -> SpeedLaw:
    """v(s) = v_max * clip(1 - s / r_crit, 0, 1): full speed when free, stop at congestion."""

    def func(s):
        return v_max * np.clip(1.0 - np.asarray(s) / r_crit, 0.0, 1.0)

    return SpeedLaw(func, v_max, v_max / r_crit)


@dataclass(frozen=True)
class DirectionField:
    """Bounded Lipschitz direction field; func acts on (M, d) arrays."""

    func: Callable[[np.ndarray], np.ndarray]
    sup_bound: float
    lip: float


def constant_direction(vec: Sequence[float]) -> DirectionField:
    v = np.asarray(vec, dtype=np.float64)

    def func(x):
        return np.broadcast_to(v, (np.atleast_2d(x).shape[0], v.size)).copy()

    return DirectionField(func, float(np.linalg.norm(v)), 0.0)


def toward_point(target: Sequence[float]) -> DirectionField:
    """Softly normalized pull toward a target: u / sqrt(1 + |u|^2), u = p - x.

    Jacobian norm is bounded by 1 and |dir| < 1, so sup = lip = 1 exactly.
    """
    p = np.asarray(target, dtype=np.float64)

    def func(x):
        u = p - np.atleast_2d(x)
        return u / np.sqrt(1.0 + np.sum(u * u, axis=1, keepdims=True))

    return DirectionField(func, 1.0, 1.0)


def pedestrian_field(speed: SpeedLaw, direction: DirectionField, kernel: Kernel) -> VelocityModel:
    """V(t, x, r) = v(r) * dir(x) for a single species.

    Product metadata is exact for this form: lip_x = sup(v) * Lip(dir),
    lip_r = Lip(v) * sup(dir), sup = sup(v) * sup(dir).
    """
    dim = kernel.dim

    def evaluate(t, x, r):
        return speed.func(r[0]) * direction.func(x.reshape(1, -1))[0]

    def evaluate_batch(t, xs, rs):
        return np.asarray(speed.func(rs[:, 0]))[:, None] * direction.func(xs)

    field = VelocityField(
        dim,
        1,
        evaluate,
        sup_bound=speed.sup_bound * direction.sup_bound,
        lip_x=speed.sup_bound * direction.lip,
        lip_r=speed.lip * direction.sup_bound,
        evaluate_batch=evaluate_batch,
    )
    return VelocityModel((field,), diagonal_matrix(kernel, 1))


def sedimentation_field(kernel: Kernel, mass: float = 1.0) -> VelocityModel:
    """1D model with V(t, x, r) = r: particles drift at their averaged density.

    sup_bound is the reachable bound mass * sup(eta) on the ball B_M.
    """
    if kernel.dim != 1:
        raise ValueError("sedimentation model is one-dimensional")

    field = VelocityField(
        1,
        1,
        lambda t, x, r: np.array([r[0]]),
        sup_bound=mass * kernel.sup_bound,
        lip_x=0.0,
        lip_r=1.0,
        evaluate_batch=lambda t, xs, rs: rs[:, :1].copy(),
    )
    return VelocityModel((field,), diagonal_matrix(kernel, 1))


def linear_local_field(alpha: float, domain_radius: float, dim: int = 1) -> VelocityModel:
    """Local field V = alpha * x paired with a constant kernel (r is ignored).

    Bounded only on the declared domain; sup is certified on the box
    |x_a| <= domain_radius.
    """
    from .kernels import kernel_library

    field = VelocityField(
        dim,
        1,
        lambda t, x, r: alpha * x,
        sup_bound=abs(alpha) * domain_radius * np.sqrt(dim),
        lip_x=abs(alpha),
        lip_r=0.0,
        evaluate_batch=lambda t, xs, rs: alpha * xs,
    )
    return VelocityModel((field,), diagonal_matrix(kernel_library("constant", dim), 1))


def constant_drift_field(vec: Sequence[float], kernel: Kernel | None = None) -> VelocityModel:
    from .kernels import kernel_library

    v = np.asarray(vec, dtype=np.float64)
    if kernel is None:
        kernel = kernel_library("constant", v.size)

    field = VelocityField(
        v.size,
        1,
        lambda t, x, r: v.copy(),
        sup_bound=float(np.linalg.norm(v)),
        lip_x=0.0,
        lip_r=0.0,
        evaluate_batch=lambda t, xs, rs: np.broadcast_to(v, (xs.shape[0], v.size)).copy(),
    )
    return VelocityModel((field,), diagonal_matrix(kernel, 1))


def dirac_coupling_field(
    density_fields: Sequence[VelocityField],
    phi_fields: Sequence[VelocityField],
    kernels: KernelMatrix,
) -> VelocityModel:
    """Couple density species with single-particle (Dirac) species.

    Density species come first and feel their fields through the extended
    convolution vector, whose Dirac components are exactly lambda(x - p_j).
    The last ``len(phi_fields)`` species are single particles driven by the
    ODE right-hand sides, which receive the stacked Dirac positions.
    """
    k0 = len(density_fields)
    k1 = len(phi_fields)
    if k0 + k1 != kernels.k:
        raise ValueError("field count must match kernel matrix size")
    fields = list(density_fields)
    for f in phi_fields:
        if not f.needs_dirac_positions:
            raise ValueError("Dirac species fields must accept the position block")
        fields.append(f)
    return VelocityModel(tuple(fields), kernels, dirac_species=tuple(range(k0, k0 + k1)))


def phi_field(
    func: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    dim: int,
    k: int,
    sup_bound: float,
    lip_x: float,
    lip_r: float,
) -> VelocityField:
    """ODE right-hand side Phi(t, x_own, r, p) for a single-particle species."""
    return VelocityField(
        dim, k, func, sup_bound, lip_x, lip_r, needs_dirac_positions=True
    )


# ---------------------------------------------------------------------------
# sampling auditor
# ---------------------------------------------------------------------------


def _l1_ball_samples(k: int, radius: float, n: int, seed: int) -> np.ndarray:
    u = 2.0 * sample_box(np.zeros(k), np.ones(k), n, seed) - 1.0
    norms = np.maximum(np.abs(u).sum(axis=1), 1.0)
    return radius * u / norms[:, None]


def audit_velocity_field(
    field: VelocityField,
    box_radius: float,
    r_radius: float,
    times: Sequence[float] = (0.0,),
    samples: int = 1500,
    seed: int = 0,
    rel_tol: float = 1e-8,
    dirac_block: np.ndarray | None = None,
) -> None:
    """Sample-check sup and Lipschitz declarations of one velocity field.

    r is sampled from the norm-1 ball of radius M = mass * sup(eta); x from
    the declared box.  Raises :class:`AuditError` with the witness on
    violation.
    """
    lo = -box_radius * np.ones(field.dim)
    hi = box_radius * np.ones(field.dim)
    xs = sample_box(lo, hi, samples, seed)
    ys = sample_box(lo, hi, samples, seed + 5)
    rs = _l1_ball_samples(field.k, r_radius, samples, seed + 9)
    qs = _l1_ball_samples(field.k, r_radius, samples, seed + 13)
    extra = (dirac_block,) if field.needs_dirac_positions else ()
    scale = max(field.sup_bound, field.lip_x, field.lip_r, 1.0)
    for t in times:
        vx = np.array([field.evaluate(t, x, r, *extra) for x, r in zip(xs, rs)])
        speeds = np.linalg.norm(vx, axis=1)
        worst = int(np.argmax(speeds))
        if speeds[worst] > field.sup_bound + rel_tol * scale:
            raise AuditError(
                f"velocity sup audit failed: |V({t}, {xs[worst]}, {rs[worst]})| = "
                f"{speeds[worst]} > declared {field.sup_bound}"
            )
        vy = np.array([field.evaluate(t, y, r, *extra) for y, r in zip(ys, rs)])
        gaps = np.linalg.norm(xs - ys, axis=1)
        ok = gaps > 1e-12
        ratio = np.linalg.norm(vx - vy, axis=1)[ok] / gaps[ok]
        worst = int(np.argmax(ratio))
        if ratio[worst] > field.lip_x + rel_tol * scale:
            raise AuditError(
                f"velocity Lip_x audit failed: slope {ratio[worst]} between "
                f"x={xs[ok][worst]} and y={ys[ok][worst]} > declared {field.lip_x}"
            )
        vq = np.array([field.evaluate(t, x, q, *extra) for x, q in zip(xs, qs)])
        rgaps = np.abs(rs - qs).sum(axis=1)
        ok = rgaps > 1e-12
        ratio = np.linalg.norm(vx - vq, axis=1)[ok] / rgaps[ok]
        worst = int(np.argmax(ratio))
        if ratio[worst] > field.lip_r + rel_tol * scale:
            raise AuditError(
                f"velocity Lip_r audit failed: slope {ratio[worst]} between "
                f"r={rs[ok][worst]} and q={qs[ok][worst]} > declared {field.lip_r}"
            )


def audit_model(
    model: VelocityModel,
    box_radius: float,
    mass: float,
    times: Sequence[float] = (0.0,),
    samples: int = 1500,
    seed: int = 0,
) -> None:
    """Audit every kernel entry and velocity field of a model."""
    from .kernels import audit_kernel

    for row in model.kernels.entries:
        for kn in row:
            audit_kernel(kn, box_radius, times, samples, seed)
    r_radius = mass * model.kernels.sup_bound
    block = None
    if model.dirac_species:
        block = sample_box(
            -box_radius * np.ones(model.dim), box_radius * np.ones(model.dim),
            len(model.dirac_species), seed + 21,
        )
    for field in model.fields:
        audit_velocity_field(
            field, box_radius, r_radius, times, samples, seed, dirac_block=block
        )
