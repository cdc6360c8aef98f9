"""Diffusion paths, particle clouds, and Monte Carlo form semigroups.

The base diffusion solves

    d xi = beta(xi) dt + sqrt(2) dB

(Euler--Maruyama in R^d, geodesic steps on the sphere), so its generator is
Delta + <beta, grad> and the scalar semigroup E[F(xi_gamma(t))] estimates
e^{-tH} F for H = -Delta - <beta, grad>.  The diffusion coefficient sqrt(2)
is fixed: it is the unique normalization for which the generator matches H
without a factor 1/2.

A configuration evolves as independent particles sharing one clock.  Form
semigroups additionally carry a frame matrix along the paths: per m-subset
of the starting configuration the frame solves

    M' = J(xi(s)) M,        M(0) = I,

for a symmetric block potential J (with discrete parallel transport
interleaved on the sphere), and the estimator averages the pulled-back
components M^T W(xi_gamma(t)).  With J = 0 this represents the Bochner
semigroup e^{-t H^B}; with J = -(curvature potential) it represents the
de Rham semigroup e^{-t H^R}.  The frame ODE is discretized multiplicatively
with the symmetric order-2 splitting

    M <- expm((dt/2) J_{k+1}) T_k expm((dt/2) J_k) M,

where T_k is the transport step (identity in R^d); for path-independent J
both halves merge into the midpoint rule expm((dt/2)(J_k + J_{k+1})).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from .exterior import Multivector, mv_to_vec, t_basis, transport_slot, vec_to_mv
from .forms import CylinderForm, CylinderFunction, EvalCache, FormValue, eval_form
from .geometry import IntensitySpec, Space, Sphere, Window
from .geometry import beta as beta_at
from .operators import _outer_rows, h_pi_sigma, lift, r_pi_sigma, OperatorReport
from .pointprocess import Configuration, RngStream, sample
from .report import CheckResult, McEstimate

__all__ = [
    "BlowUpError",
    "SdeConfig",
    "ParticlePath",
    "FrameMatrix",
    "BlockPotential",
    "zero_potential",
    "curvature_potential",
    "simulate_sde",
    "simulate_particles",
    "parallel_translate",
    "semigroup_T0",
    "FormEstimate",
    "semigroup_Tn",
    "eigen_decay_check",
    "domination_check",
    "frame_bound_check",
    "generator_check",
    "generator_check_function",
    "semigroup_property_check",
    "poisson_invariance_check",
    "sphere_uniform_check",
]


class BlowUpError(RuntimeError):
    """A path left the finite domain; reported rather than dropped."""

    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state at step {step} (t = {time:.6g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SdeConfig:
    """Time horizon and step for the drifted diffusion.

    ``dt`` is a target granularity: the integrator uses t / round(t/dt)
    steps so the horizon is hit exactly.
    """

    t: float
    dt: float = 1e-2
    scheme: str = "euler-maruyama"  # or "geodesic-em"

    def __post_init__(self):
        if self.t <= 0.0 or self.dt <= 0.0:
            raise ValueError("t and dt must be positive")
        if self.dt > self.t * (1.0 + 1e-12):
            raise ValueError("dt must not exceed the horizon t")
        if self.scheme not in ("euler-maruyama", "geodesic-em"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t / self.dt)))

    @property
    def step(self) -> float:
        return self.t / self.n_steps

    def with_horizon(self, t: float) -> "SdeConfig":
        """Same granularity (steps scaled proportionally), new horizon."""
        return SdeConfig(t=t, dt=min(self.dt, t), scheme=self.scheme)


def _drift_rows(space: Space, intensity: IntensitySpec, X: np.ndarray) -> np.ndarray:
    """beta at each row of X, vectorized for the standard families."""
    if intensity.family == "gaussian":
        return -X / intensity.scale**2
    if intensity.family == "uniform":
        return np.zeros_like(X)
    return np.stack([beta_at(space, intensity, x) for x in X])


def _step_rows(
    space: Space,
    intensity: IntensitySpec,
    X: np.ndarray,
    eps: np.ndarray,
    dt: float,
    step_index: int,
) -> np.ndarray:
    """One Euler--Maruyama step on every row; geodesic version on the sphere."""
    w = _drift_rows(space, intensity, X) * dt + math.sqrt(2.0 * dt) * eps
    if isinstance(space, Sphere):
        # project the ambient increment to the tangent plane, then follow
        # the geodesic; the projected 3d white noise is white in the frame
        w = w - np.sum(w * X, axis=1, keepdims=True) * X
        norm = np.linalg.norm(w, axis=1, keepdims=True)
        small = norm < 1e-300
        direction = np.where(small, 0.0, w / np.where(small, 1.0, norm))
        Xn = np.cos(norm) * X + np.sin(norm) * direction
        Xn /= np.linalg.norm(Xn, axis=1, keepdims=True)
    else:
        Xn = X + w
    if not np.all(np.isfinite(Xn)):
        raise BlowUpError(step_index, (step_index + 1) * dt)
    return Xn


@dataclass
class ParticlePath:
    """Independent particle paths over a shared clock.

    ``paths`` has shape (n_particles, len(ts), ambient_dim); when simulated
    with ``keep_paths=False`` only the first and last frames are stored.
    """

    space: Space
    ts: np.ndarray
    paths: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.paths.shape[0]

    @property
    def t(self) -> float:
        return float(self.ts[-1]) if len(self.ts) else 0.0

    def final(self) -> np.ndarray:
        return self.paths[:, -1, :]

    def config(self, k: int = -1) -> Configuration:
        return Configuration(self.paths[:, k, :].copy())


def simulate_sde(
    space: Space,
    intensity: IntensitySpec,
    x: np.ndarray,
    cfg: SdeConfig,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Single path from x; returns (ts, path) with path[k] the state at ts[k]."""
    x = np.asarray(x, dtype=float)
    K = cfg.n_steps
    dt = cfg.step
    eps = rng.gen.normal(size=(K, x.shape[0]))
    out = np.empty((K + 1, x.shape[0]))
    out[0] = x
    X = x[None, :]
    for k in range(K):
        X = _step_rows(space, intensity, X, eps[k][None, :], dt, k)
        out[k + 1] = X[0]
    ts = np.linspace(0.0, cfg.t, K + 1)
    return ts, out


def simulate_particles(
    space: Space,
    intensity: IntensitySpec,
    gamma: Configuration,
    cfg: SdeConfig,
    rng: RngStream,
    keep_paths: bool = True,
) -> ParticlePath:
    """Evolve every point of gamma independently (per-particle sub-streams)."""
    P = gamma.n
    K = cfg.n_steps
    dt = cfg.step
    da = gamma.points.shape[1] if P else space.ambient_dim
    ts = np.linspace(0.0, cfg.t, K + 1)
    if P == 0:
        frames = K + 1 if keep_paths else 2
        return ParticlePath(space, ts if keep_paths else ts[[0, -1]], np.empty((0, frames, da)))
    eps = np.stack([rng.child(i).gen.normal(size=(K, da)) for i in range(P)])
    X = gamma.points.copy()
    if keep_paths:
        paths = np.empty((P, K + 1, da))
        paths[:, 0, :] = X
        for k in range(K):
            X = _step_rows(space, intensity, X, eps[:, k, :], dt, k)
            paths[:, k + 1, :] = X
        return ParticlePath(space, ts, paths)
    start = X.copy()
    for k in range(K):
        X = _step_rows(space, intensity, X, eps[:, k, :], dt, k)
    return ParticlePath(space, ts[[0, -1]], np.stack([start, X], axis=1))


# ---------------------------------------------------------------------------
# block potentials and the frame ODE


class BlockPotential:
    """Symmetric potential acting blockwise on the n-covector fibre over an
    m-point tuple, in the ``t_basis`` ordering.

    ``scalar`` marks the case J = c * Identity on every block, which admits
    exact exponentials and needs no path storage on flat space.
    """

    def __init__(
        self,
        n: int,
        block_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        scalar: Optional[float] = None,
        name: str = "J",
    ):
        if block_fn is None and scalar is None:
            raise ValueError("provide a block function or a scalar")
        self.n = n
        self._fn = block_fn
        self.scalar = scalar
        self.name = name

    def block(self, points: np.ndarray, k: int) -> np.ndarray:
        """Matrix on the fibre over the given points (k = fibre dimension)."""
        if self.scalar is not None:
            return self.scalar * np.eye(k)
        return np.asarray(self._fn(points), dtype=float)


def zero_potential(n: int) -> BlockPotential:
    return BlockPotential(n, scalar=0.0, name="0")


def curvature_potential(
    space: Space,
    intensity: IntensitySpec,
    n: int,
    sign: float = -1.0,
    allow_scalar: bool = True,
) -> BlockPotential:
    """sign times the lifted curvature potential R_pi_sigma on n-covectors.

    The default sign -1 is the de Rham choice: with M' = J M the pulled-back
    estimator represents e^{-t H^R} = e^{-t(H^B + R)}.  For the gaussian
    intensity on R^d the potential is (n / scale^2) I on every block, and on
    the uniform sphere it is the identity on 1-covector fibres, so those
    cases run on the exact-exponential fast path unless ``allow_scalar`` is
    switched off (useful to exercise the generic ODE).
    """
    scalar = None
    if allow_scalar and not isinstance(space, Sphere):
        if intensity.family == "gaussian":
            scalar = sign * n / intensity.scale**2
        elif intensity.family == "uniform":
            scalar = sign * 0.0
    if allow_scalar and isinstance(space, Sphere) and n == 1:
        if intensity.family == "uniform":
            scalar = sign * 1.0
    if scalar is not None:
        return BlockPotential(n, scalar=scalar, name=f"{sign:+g}*R")
    return BlockPotential(
        n,
        block_fn=lambda pts: sign * r_pi_sigma(space, intensity, pts, n),
        name=f"{sign:+g}*R",
    )


@dataclass
class FrameMatrix:
    """Frame solution at time t, mapping the starting fibre to the fibre at
    the path endpoints, together with the largest J-eigenvalue met on the
    path (the constant in the norm bound)."""

    t: float
    P: np.ndarray
    c_sup: float

    def norm(self) -> float:
        # empty fibre (m-subset with m > n has no fully occupied sector)
        return float(np.linalg.norm(self.P, 2)) if self.P.size else 0.0

    def bound_slack(self) -> float:
        """norm / e^{t c_sup} - 1; the discretization keeps this below 5 dt."""
        return self.norm() / math.exp(self.t * self.c_sup) - 1.0

    def bound_ok(self, dt: float) -> bool:
        return self.bound_slack() <= 5.0 * dt


def _expm_sym(A: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(A)
    return (V * np.exp(lam)) @ V.T


def _transport_matrix(
    space: Space, basis: Sequence, pts_from: np.ndarray, pts_to: np.ndarray
) -> np.ndarray:
    """Matrix of the per-slot parallel transport on the fibre basis."""
    k = len(basis)
    index = {key: r for r, key in enumerate(basis)}
    T = np.zeros((k, k))
    m = pts_from.shape[0]
    frames_from = [space.frame(pts_from[s]) for s in range(m)]
    frames_to = [space.frame(pts_to[s]) for s in range(m)]
    for col, key in enumerate(basis):
        mv = Multivector({key: 1.0})
        for s in range(m):
            if any(ks == s for ks, _ in key):
                mv = transport_slot(
                    space, mv, s, pts_from[s], pts_to[s],
                    frame_q=frames_from[s], frame_p=frames_to[s],
                )
        for kk, c in mv.coef.items():
            T[index[kk], col] += c
    return T


def parallel_translate(
    space: Space,
    path: ParticlePath,
    J: BlockPotential,
    n: int,
    subset: Optional[Sequence[int]] = None,
) -> FrameMatrix:
    """Solve M' = J(xi(s)) M along the stored path (transport interleaved on
    the sphere) for the fibre over the chosen particles (default: all)."""
    parts = list(range(path.n_particles)) if subset is None else list(subset)
    m = len(parts)
    d = space.dim
    basis = t_basis(n, m, d)
    k = len(basis)
    if k == 0:
        # no fully occupied sector over this subset (m exceeds the degree)
        return FrameMatrix(path.t, np.zeros((0, 0)), J.scalar or 0.0)
    pts = path.paths[parts]  # (m, K+1, ambient)
    K = pts.shape[1] - 1
    if K < 1:
        return FrameMatrix(path.t, np.eye(k), J.scalar or 0.0)
    dt = float(path.ts[1] - path.ts[0])
    flat = not isinstance(space, Sphere)
    M = np.eye(k)
    if J.scalar is not None and flat:
        return FrameMatrix(path.t, math.exp(path.t * J.scalar) * np.eye(k), J.scalar)
    c_sup = -math.inf
    B_next = J.block(pts[:, 0, :], k)
    c_sup = max(c_sup, float(np.linalg.eigvalsh(B_next)[-1]))
    for j in range(K):
        B0 = B_next
        B_next = J.block(pts[:, j + 1, :], k)
        c_sup = max(c_sup, float(np.linalg.eigvalsh(B_next)[-1]))
        if flat:
            M = _expm_sym((dt / 2.0) * (B0 + B_next)) @ M
        else:
            T = _transport_matrix(space, basis, pts[:, j, :], pts[:, j + 1, :])
            M = _expm_sym((dt / 2.0) * B_next) @ T @ _expm_sym((dt / 2.0) * B0) @ M
    return FrameMatrix(path.t, M, c_sup)


# ---------------------------------------------------------------------------
# scalar semigroup


def _noise_block(rng: RngStream, R: int, P: int, K: int, da: int) -> np.ndarray:
    """Per-replica sub-streams; particle rows occupy a fixed layout."""
    eps = np.empty((R, P, K, da))
    for r in range(R):
        eps[r] = rng.child(r).gen.normal(size=(P, K, da))
    return eps


def _evolve_endpoints(
    space: Space,
    intensity: IntensitySpec,
    X0: np.ndarray,
    eps: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Evolve (R, P) particles; returns endpoints (R, P, da)."""
    R, P, K, da = eps.shape
    X = np.broadcast_to(X0, (R, P, da)).reshape(R * P, da).copy()
    for k in range(K):
        X = _step_rows(space, intensity, X, eps[:, :, k, :].reshape(R * P, da), dt, k)
    return X.reshape(R, P, da)


def _evolve_paths(
    space: Space,
    intensity: IntensitySpec,
    X0: np.ndarray,
    eps: np.ndarray,
    dt: float,
) -> np.ndarray:
    R, P, K, da = eps.shape
    out = np.empty((R, P, K + 1, da))
    X = np.broadcast_to(X0, (R, P, da)).reshape(R * P, da).copy()
    out[:, :, 0, :] = X.reshape(R, P, da)
    for k in range(K):
        X = _step_rows(space, intensity, X, eps[:, :, k, :].reshape(R * P, da), dt, k)
        out[:, :, k + 1, :] = X.reshape(R, P, da)
    return out


def _f_rows(F: CylinderFunction, pts: np.ndarray) -> np.ndarray:
    """F at each replica of a (R, P, da) block of configurations."""
    R, P, da = pts.shape
    flat = pts.reshape(R * P, da)
    stats = np.stack(
        [phi.value_batch(flat).reshape(R, P).sum(axis=1) for phi in F.inners],
        axis=1,
    ) if P else np.zeros((R, len(F.inners)))
    return _outer_rows(F.outer, stats)


def semigroup_T0(
    space: Space,
    intensity: IntensitySpec,
    F: CylinderFunction,
    gamma: Configuration,
    t: float,
    cfg: SdeConfig,
    n_samples: int,
    rng: RngStream,
    antithetic: bool = False,
) -> McEstimate:
    """Monte Carlo estimate of E[F(xi_gamma(t))]."""
    if t == 0.0 or gamma.n == 0:
        return McEstimate.exact(float(F.value(gamma.points)))
    run = cfg.with_horizon(t)
    K, dt = run.n_steps, run.step
    da = gamma.points.shape[1]
    R = n_samples // 2 if antithetic else n_samples
    eps = _noise_block(rng, R, gamma.n, K, da)
    vals = _f_rows(F, _evolve_endpoints(space, intensity, gamma.points, eps, dt))
    if antithetic:
        vals_m = _f_rows(F, _evolve_endpoints(space, intensity, gamma.points, -eps, dt))
        vals = 0.5 * (vals + vals_m)
    return McEstimate.from_samples(vals)


# ---------------------------------------------------------------------------
# form semigroup


class FormEstimate:
    """Componentwise Monte Carlo estimate of a form value at the starting
    configuration: one McEstimate per (subset, covector-key) pair."""

    def __init__(self, entries: dict, n_samples: int):
        self.entries = entries
        self.n_samples = n_samples

    def mean_form(self) -> FormValue:
        comps: dict = {}
        for (idx, key), est in self.entries.items():
            comps.setdefault(idx, {})[key] = est.mean
        return FormValue({idx: Multivector(d) for idx, d in comps.items()})

    def against(self, target: FormValue) -> tuple[float, float]:
        """Euclidean distance of the mean to the target and its propagated
        standard error over the union of components."""
        keys = set(self.entries)
        tgt = {}
        for idx, mv in target.components.items():
            for key, c in mv.coef.items():
                tgt[(idx, key)] = c
        keys |= set(tgt)
        diff2 = 0.0
        var = 0.0
        for k in keys:
            est = self.entries.get(k)
            mean = est.mean if est else 0.0
            se = est.stderr if est else 0.0
            d = mean - tgt.get(k, 0.0)
            diff2 += d * d
            var += se * se
        return math.sqrt(diff2), math.sqrt(var)


def _accumulate(sums: dict, sq: dict, idx, key, val: float):
    k = (idx, key)
    sums[k] = sums.get(k, 0.0) + val
    sq[k] = sq.get(k, 0.0) + val * val


def _pullback_one(
    space: Space,
    intensity: IntensitySpec,
    W: CylinderForm,
    gamma0: Configuration,
    moved: Configuration,
    J: BlockPotential,
    frames: Optional[dict],
) -> dict:
    """Pulled-back components of W at the moved configuration: a dict
    (idx, key) -> coefficient over the starting fibre."""
    v = eval_form(W, moved)
    out: dict = {}
    for idx, mv in v.components.items():
        m = len(idx)
        basis = t_basis(W.degree, m, space.dim)
        if frames is None:
            fac = 1.0
            for key, c in mv.coef.items():
                out[(idx, key)] = out.get((idx, key), 0.0) + fac * c
        else:
            P = frames[idx]
            back = P.T @ mv_to_vec(mv, basis)
            for row, c in enumerate(back):
                if c != 0.0:
                    key = basis[row]
                    out[(idx, key)] = out.get((idx, key), 0.0) + c
    return out


def _tn_run(
    space: Space,
    intensity: IntensitySpec,
    W: CylinderForm,
    gamma: Configuration,
    t: float,
    J: BlockPotential,
    cfg: SdeConfig,
    n_samples: int,
    rng: RngStream,
    antithetic: bool,
    contract: Optional[dict],
):
    """Shared engine: accumulate componentwise sums, or scalar samples when
    ``contract`` (a (idx, key) -> coefficient dict) is given."""
    run = cfg.with_horizon(t)
    K, dt = run.n_steps, run.step
    da = gamma.points.shape[1]
    fast = (not isinstance(space, Sphere)) and J.scalar is not None
    fac = math.exp(t * J.scalar) if J.scalar is not None else None
    sizes = sorted(m for m in W.subset_sizes() if 0 < m <= gamma.n)
    subsets = {m: list(combinations(range(gamma.n), m)) for m in sizes}
    R = n_samples // 2 if antithetic else n_samples
    eps = _noise_block(rng, R, gamma.n, K, da)
    sums: dict = {}
    sqs: dict = {}
    scalars = np.empty(R) if contract is not None else None
    signs = (1.0, -1.0) if antithetic else (1.0,)
    if fast:
        blocks = {s: _evolve_endpoints(space, intensity, gamma.points, s * eps, dt) for s in signs}
    else:
        blocks = {s: _evolve_paths(space, intensity, gamma.points, s * eps, dt) for s in signs}
        ts = np.linspace(0.0, t, K + 1)
    for r in range(R):
        acc: dict = {}
        for s in signs:
            if fast:
                moved = Configuration(blocks[s][r])
                frames = None
                comp = _pullback_one(space, intensity, W, gamma, moved, J, frames)
                if fac != 1.0:
                    comp = {k: fac * c for k, c in comp.items()}
            else:
                path = ParticlePath(space, ts, blocks[s][r])
                moved = path.config(-1)
                frames = {}
                for m in sizes:
                    for idx in subsets[m]:
                        frames[idx] = parallel_translate(space, path, J, W.degree, idx).P
                comp = _pullback_one(space, intensity, W, gamma, moved, J, frames)
            for k, c in comp.items():
                acc[k] = acc.get(k, 0.0) + c / len(signs)
        if contract is not None:
            scalars[r] = sum(c * contract.get(k, 0.0) for k, c in acc.items())
        else:
            for k, c in acc.items():
                _accumulate(sums, sqs, k[0], k[1], c)
    if contract is not None:
        return scalars
    entries = {}
    for k, ssum in sums.items():
        mean = ssum / R
        var = max(sqs[k] - ssum * ssum / R, 0.0) / max(R - 1, 1) / R
        entries[k] = McEstimate(mean=mean, stderr=math.sqrt(var), n=R)
    return FormEstimate(entries, R)


def semigroup_Tn(
    space: Space,
    intensity: IntensitySpec,
    W: CylinderForm,
    gamma: Configuration,
    t: float,
    J: BlockPotential,
    cfg: SdeConfig,
    n_samples: int,
    rng: RngStream,
    antithetic: bool = False,
) -> FormEstimate:
    """Monte Carlo estimate of the J-twisted form semigroup at gamma:
    componentwise mean of the pulled-back M^T W(xi_gamma(t))."""
    if gamma.n == 0 or t == 0.0:
        v = eval_form(W, gamma)
        entries = {
            (idx, key): McEstimate.exact(c)
            for idx, mv in v.components.items()
            for key, c in mv.coef.items()
        }
        return FormEstimate(entries, n_samples)
    return _tn_run(
        space, intensity, W, gamma, t, J, cfg, n_samples, rng, antithetic, None
    )


def _contract_dict(v: FormValue) -> dict:
    return {
        (idx, key): c
        for idx, mv in v.components.items()
        for key, c in mv.coef.items()
    }


def eigen_decay_check(
    space: Space,
    intensity: IntensitySpec,
    W: CylinderForm,
    gamma: Configuration,
    t: float,
    rate: float,
    J: BlockPotential,
    cfg: SdeConfig,
    n_samples: int,
    rng: RngStream,
    name: Optional[str] = None,
) -> CheckResult:
    """For an eigenform, <T(t) W, W>(gamma) = e^{-rate t} |W(gamma)|^2."""
    base = eval_form(W, gamma)
    z = _tn_run(
        space, intensity, W, gamma, t, J, cfg, n_samples, rng, False,
        _contract_dict(base),
    )
    target = math.exp(-rate * t) * base.inner(base)
    label = name or f"decay-{W.name}-t{t:g}"
    return CheckResult.from_estimates(
        label,
        McEstimate.from_samples(z),
        McEstimate.exact(target),
        detail=f"rate={rate:g} n={len(z)}",
    )


def domination_check(
    space: Space,
    intensity: IntensitySpec,
    W: CylinderForm,
    gamma: Configuration,
    t: float,
    J: BlockPotential,
    cfg: SdeConfig,
    n_samples: int,
    rng: RngStream,
    name: Optional[str] = None,
) -> CheckResult:
    """Pathwise domination: e^{tC} |W(xi(t))| - |M^T W(xi(t))| >= 0 up to
    3 standard errors (C from the J-eigenvalues met on the paths)."""
    run = cfg.with_horizon(t)
    K, dt = run.n_steps, run.step
    da = gamma.points.shape[1]
    sizes = sorted(m for m in W.subset_sizes() if 0 < m <= gamma.n)
    subsets = {m: list(combinations(range(gamma.n), m)) for m in sizes}
    R = n_samples
    eps = _noise_block(rng, R, gamma.n, K, da)
    fast = (not isinstance(space, Sphere)) and J.scalar is not None
    if fast:
        ends = _evolve_endpoints(space, intensity, gamma.points, eps, dt)
    else:
        paths = _evolve_paths(space, intensity, gamma.points, eps, dt)
        ts = np.linspace(0.0, t, K + 1)
    diffs = np.empty(R)
    c_glob = -math.inf
    basis_cache = {m: t_basis(W.degree, m, space.dim) for m in sizes}
    for r in range(R):
        if fast:
            moved = Configuration(ends[r])
            frames = None
            c_here = J.scalar
        else:
            path = ParticlePath(space, ts, paths[r])
            moved = path.config(-1)
            frames = {}
            c_here = -math.inf
            for m in sizes:
                for idx in subsets[m]:
                    fm = parallel_translate(space, path, J, W.degree, idx)
                    frames[idx] = fm.P
                    c_here = max(c_here, fm.c_sup)
        v = eval_form(W, moved)
        raw = v.norm()
        if frames is None:
            pulled = math.exp(t * J.scalar) * raw
        else:
            tot = 0.0
            for idx, mv in v.components.items():
                back = frames[idx].T @ mv_to_vec(mv, basis_cache[len(idx)])
                tot += float(back @ back)
            pulled = math.sqrt(tot)
        c_glob = max(c_glob, c_here)
        diffs[r] = pulled - math.exp(t * c_here) * raw
    est = McEstimate.from_samples(-diffs)  # mean of e^{tC}|W| - |pulled|
    label = name or f"domination-{W.name}-t{t:g}"
    passed = est.mean >= -3.0 * max(est.stderr, 1e-300)
    return CheckResult(
        check=label,
        lhs=est.mean,
        rhs=0.0,
        stderr=est.stderr,
        tol=3.0 * est.stderr,
        passed=bool(passed),
        detail=f"C={c_glob:g} n={R}",
    )


def frame_bound_check(
    space: Space,
    intensity: IntensitySpec,
    gamma: Configuration,
    J: BlockPotential,
    n: int,
    cfg: SdeConfig,
    n_paths: int,
    rng: RngStream,
    name: Optional[str] = None,
) -> CheckResult:
    """norm(M(t)) <= e^{t c_sup} (1 + 5 dt) on every sampled path, for the
    full block and each singleton block."""
    worst = -math.inf
    dt = cfg.step
    for r in range(n_paths):
        path = simulate_particles(space, intensity, gamma, cfg, rng.child(r))
        blocks = [None] + [[i] for i in range(gamma.n)]
        for sub in blocks:
            fm = parallel_translate(space, path, J, n, sub)
            worst = max(worst, fm.bound_slack())
    label = name or f"frame-bound-{J.name}"
    return CheckResult.deterministic(
        label, worst, 0.0, 5.0 * dt, detail=f"paths={n_paths}"
    )


# ---------------------------------------------------------------------------
# generator checks


def _richardson(ts: Sequence[float], slopes: Sequence[float], ses: Sequence[float]):
    """Extrapolate slope(t) = s0 + a t to t = 0 from the two smallest t."""
    order = np.argsort(ts)
    t1, t2 = ts[order[1]], ts[order[0]]  # t2 < t1
    s1, s2 = slopes[order[1]], slopes[order[0]]
    w = t1 / (t1 - t2)
    s0 = w * s2 - (w - 1.0) * s1
    se = math.hypot(w * ses[order[0]], (w - 1.0) * ses[order[1]])
    return s0, se


def generator_check(
    space: Space,
    intensity: IntensitySpec,
    W: CylinderForm,
    gammas: Sequence[Configuration],
    kind: str,
    cfg_dt_ratio: float = 0.1,
    ts: Sequence[float] = (0.02, 0.01, 0.005),
    n_samples: int = 20_000,
    rng: Optional[RngStream] = None,
    name: Optional[str] = None,
) -> OperatorReport:
    """Short-time slopes (W - T(t)W)/t, contracted against the analytic
    H W and Richardson-extrapolated to t = 0; one row per configuration.

    kind 'bochner' runs with J = 0, kind 'deRham' with J = -R; the target is
    the corresponding lift.  Pass when |extrapolated - target| is below
    max(3 stderr, 5e-3) relative to the target scale.
    """
    if kind not in ("bochner", "deRham"):
        raise ValueError("kind must be 'bochner' or 'deRham'")
    if rng is None:
        rng = RngStream(0)
    J = (
        zero_potential(W.degree)
        if kind == "bochner"
        else curvature_potential(space, intensity, W.degree, sign=-1.0)
    )
    checks = []
    for gi, gamma in enumerate(gammas):
        target_v = lift(kind, space, intensity, W, gamma)
        base_v = eval_form(W, gamma)
        scale = max(target_v.norm(), 1.0)
        unit = target_v.scale(1.0 / scale)
        cdict = _contract_dict(unit)
        base = base_v.inner(unit)
        tgt = target_v.inner(unit)
        slopes, ses = [], []
        for ti, t in enumerate(ts):
            cfg = SdeConfig(t=t, dt=t * cfg_dt_ratio)
            z = _tn_run(
                space, intensity, W, gamma, t, J, cfg, n_samples,
                rng.child(gi, ti), True, cdict,
            )
            est = McEstimate.from_samples(z)
            slopes.append((base - est.mean) / t)
            ses.append(est.stderr / t)
        s0, se = _richardson(np.asarray(ts), slopes, ses)
        diff = abs(s0 - tgt) / scale
        tol = max(3.0 * se / scale, 5e-3)
        checks.append(
            CheckResult(
                check=f"generator-{kind}-{W.name}-g{gi}",
                lhs=s0,
                rhs=tgt,
                stderr=se,
                tol=tol * scale,
                passed=bool(diff <= tol),
                detail=f"ts={list(ts)} n={n_samples}",
            )
        )
    return OperatorReport(name or f"generator-{kind}-{W.name}", checks)


def generator_check_function(
    space: Space,
    intensity: IntensitySpec,
    F: CylinderFunction,
    gammas: Sequence[Configuration],
    ts: Sequence[float] = (0.02, 0.01, 0.005),
    n_samples: int = 20_000,
    rng: Optional[RngStream] = None,
    name: Optional[str] = None,
) -> OperatorReport:
    """Degree-0 reduction: (F - T_0(t)F)/t extrapolates to H F."""
    if rng is None:
        rng = RngStream(0)
    checks = []
    for gi, gamma in enumerate(gammas):
        target = h_pi_sigma(space, intensity, F, gamma)
        base = float(F.value(gamma.points))
        scale = max(abs(target), 1.0)
        slopes, ses = [], []
        for ti, t in enumerate(ts):
            cfg = SdeConfig(t=t, dt=t * 0.1)
            est = semigroup_T0(
                space, intensity, F, gamma, t, cfg, n_samples,
                rng.child(gi, ti), antithetic=True,
            )
            slopes.append((base - est.mean) / t)
            ses.append(est.stderr / t)
        s0, se = _richardson(np.asarray(ts), slopes, ses)
        diff = abs(s0 - target) / scale
        tol = max(3.0 * se / scale, 5e-3)
        checks.append(
            CheckResult(
                check=f"generator-scalar-{F.name}-g{gi}",
                lhs=s0,
                rhs=target,
                stderr=se,
                tol=tol * scale,
                passed=bool(diff <= tol),
                detail=f"ts={list(ts)} n={n_samples}",
            )
        )
    return OperatorReport(name or f"generator-scalar-{F.name}", checks)


def semigroup_property_check(
    space: Space,
    intensity: IntensitySpec,
    F: CylinderFunction,
    gamma: Configuration,
    t: float,
    s: float,
    cfg: SdeConfig,
    n_outer: int,
    n_inner: int,
    rng: RngStream,
    name: Optional[str] = None,
) -> CheckResult:
    """T_0(t+s) F = T_0(t) T_0(s) F, nested Monte Carlo with fresh streams."""
    direct = semigroup_T0(
        space, intensity, F, gamma, t + s, cfg, n_outer * 4, rng.child(0)
    )
    run = cfg.with_horizon(t)
    eps = _noise_block(rng.child(1), n_outer, gamma.n, run.n_steps, gamma.points.shape[1])
    mids = _evolve_endpoints(space, intensity, gamma.points, eps, run.step)
    ys = np.empty(n_outer)
    for r in range(n_outer):
        ys[r] = semigroup_T0(
            space, intensity, F, Configuration(mids[r]), s, cfg, n_inner,
            rng.child(2, r),
        ).mean
    nested = McEstimate.from_samples(ys)
    label = name or f"semigroup-{F.name}"
    return CheckResult.from_estimates(
        label, nested, direct, detail=f"outer={n_outer} inner={n_inner}"
    )


# ---------------------------------------------------------------------------
# law-preservation checks


def poisson_invariance_check(
    space: Space,
    intensity: IntensitySpec,
    t: float,
    cfg: SdeConfig,
    n_samples: int,
    rng: RngStream,
    edges: Sequence[float] = (0.0, 0.5, 1.0, 1.5, 2.0),
    name: Optional[str] = None,
) -> CheckResult:
    """Evolving a gaussian-intensity point process by its matching drifted
    diffusion preserves the law: radial band counts keep their Poisson means
    (and the total count keeps variance = mean), all within 3 stderr."""
    if intensity.family != "gaussian":
        raise ValueError("invariance check is for the gaussian family")
    window = Window("all")
    edges = list(edges) + [math.inf]
    s2 = intensity.scale**2
    expected = [
        2.0 * math.pi * s2 * (
            math.exp(-edges[i] ** 2 / (2 * s2))
            - (0.0 if math.isinf(edges[i + 1]) else math.exp(-edges[i + 1] ** 2 / (2 * s2)))
        )
        for i in range(len(edges) - 1)
    ]
    counts = np.zeros((n_samples, len(expected)))
    totals = np.zeros(n_samples)
    for r in range(n_samples):
        sub = rng.child(r)
        gamma = sample(space, intensity, window, sub)
        path = simulate_particles(
            space, intensity, gamma, cfg.with_horizon(t), sub.child(1),
            keep_paths=False,
        )
        pts = path.final()
        totals[r] = pts.shape[0]
        if pts.shape[0]:
            rads = np.linalg.norm(pts, axis=1)
            for b in range(len(expected)):
                counts[r, b] = np.sum((rads >= edges[b]) & (rads < edges[b + 1]))
    zmax = 0.0
    for b, mu in enumerate(expected):
        est = McEstimate.from_samples(counts[:, b])
        zmax = max(zmax, abs(est.mean - mu) / max(est.stderr, 1e-300))
    # Poisson law: variance of the total equals its mean
    var = float(np.var(totals, ddof=1))
    mean = float(np.mean(totals))
    se_var = math.sqrt(2.0 / (n_samples - 1)) * var  # normal-ish approximation
    zmax = max(zmax, abs(var - mean) / max(se_var, 1e-300))
    label = name or "poisson-invariance"
    return CheckResult(
        check=label,
        lhs=zmax,
        rhs=0.0,
        stderr=1.0,
        tol=3.0,
        passed=bool(zmax <= 3.0),
        detail=f"bands={len(expected)} n={n_samples}",
    )


def sphere_uniform_check(
    t: float,
    cfg: SdeConfig,
    n_samples: int,
    rng: RngStream,
    n_bands: int = 8,
    name: Optional[str] = None,
) -> CheckResult:
    """Driftless sphere diffusion preserves the uniform law: chi-squared on
    equal-area latitude bands, pass when p > 0.01."""
    from scipy import stats

    space = Sphere()
    intensity = IntensitySpec("uniform", 1.0)
    gen = rng.gen
    v = gen.normal(size=(n_samples, 3))
    X = v / np.linalg.norm(v, axis=1, keepdims=True)
    run = cfg.with_horizon(t)
    eps = rng.child(0).gen.normal(size=(n_samples, run.n_steps, 3))
    for k in range(run.n_steps):
        X = _step_rows(space, intensity, X, eps[:, k, :], run.step, k)
    # z uniform on [-1, 1] under the uniform law: equal-probability bands
    bins = np.linspace(-1.0, 1.0, n_bands + 1)
    obs, _ = np.histogram(X[:, 2], bins=bins)
    chi2, p = stats.chisquare(obs)
    label = name or "sphere-uniform"
    return CheckResult(
        check=label,
        lhs=float(p),
        rhs=1.0,
        stderr=0.0,
        tol=0.01,
        passed=bool(p > 0.01),
        detail=f"chi2={chi2:.2f} bands={n_bands} n={n_samples}",
    )
