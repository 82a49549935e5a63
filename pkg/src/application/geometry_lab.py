from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Any

import numpy as np
from scipy.integrate import trapezoid

from ..domain.errors import ArgumentError
from ..domain.models import (
    CurvatureCheckRecord,
    FrameField,
    GeodesicPath,
    LengthVariation,
    Manifold,
    VariationCase,
    VariationField,
)
from ..domain.specs import CostSpec
from .connections import Connection, SphereConnection, connection_for, schild_ladder

FRAME_TOLERANCE = 1e-8
BERGER_CONSTANT = 7.0
TRIAL_CHUNK = 256


def riemann(M: Manifold, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """R(u, v)w for constant sectional curvature Ktilde."""
    k = M.curvature.Ktilde
    return k * (np.dot(v, w) * u - np.dot(u, w) * v)


def parallel_transport(P: GeodesicPath, v: Any) -> np.ndarray:
    connection = connection_for(P.manifold)
    v = connection.require_tangent(P.start, v)
    if isinstance(connection, SphereConnection):
        return connection.transport_along(P.start, P.tangents[0], P.length, v)
    if P.manifold.kind == "flat-torus":
        return connection.project(P.end, v)
    return schild_ladder(connection, P.samples, v)


def transport_field(P: GeodesicPath, v: Any) -> np.ndarray:
    """Parallel field along P with initial value v, one vector per sample."""
    connection = connection_for(P.manifold)
    v = connection.require_tangent(P.start, v)
    return _transport_from(P, connection, v, index=0)


def transport_back(P: GeodesicPath, w: Any) -> np.ndarray:
    """Parallel field along P with final value w."""
    connection = connection_for(P.manifold)
    w = connection.require_tangent(P.end, w)
    return _transport_from(P, connection, w, index=P.n_samples - 1)


def _transport_from(P: GeodesicPath, connection: Connection, v: np.ndarray, index: int) -> np.ndarray:
    out = np.empty_like(P.samples)
    if isinstance(connection, SphereConnection):
        for k, t in enumerate(P.times):
            out[k] = connection.transport_along(P.start, P.tangents[0], t - P.times[index], v)
        out[index] = v
        return out
    if P.manifold.kind == "flat-torus":
        out[:] = connection.project(P.start, v)
        return out
    order = range(index, P.n_samples) if index == 0 else range(index, -1, -1)
    previous = None
    for k in order:
        if previous is None:
            out[k] = v
        else:
            out[k] = schild_ladder(connection, P.samples[[previous, k]], out[previous])
        previous = k
    return out


def parallel_variation(P: GeodesicPath, v: Any) -> VariationField:
    return VariationField(P, transport_field(P, v))


def _check_field(xi: VariationField, tol: float = 1e-9) -> Connection:
    connection = connection_for(xi.path.manifold)
    for x, v in zip(xi.path.samples, xi.vectors):
        connection.require_tangent(x, v, tol)
    return connection


def covariant_derivative(xi: VariationField) -> np.ndarray:
    """
    nabla_{gamma'} xi at every sample: neighbours are transported to the sample
    and differenced (central inside, one-sided at the ends).
    """
    P = xi.path
    connection = connection_for(P.manifold)
    out = np.empty_like(xi.vectors)
    last = P.n_samples - 1
    for k in range(P.n_samples):
        lo, hi = max(k - 1, 0), min(k + 1, last)
        x = P.samples[k]
        ahead = xi.vectors[hi] if hi == k else connection.transport(P.samples[hi], x, xi.vectors[hi])
        behind = xi.vectors[lo] if lo == k else connection.transport(P.samples[lo], x, xi.vectors[lo])
        out[k] = connection.project(x, (ahead - behind) / (P.times[hi] - P.times[lo]))
    return out


def first_variation(P: GeodesicPath, xi: VariationField) -> float:
    _check_field(xi)
    return float(np.dot(xi.vectors[-1], P.tangents[-1]) - np.dot(xi.vectors[0], P.tangents[0]))


def _curvature_terms(P: GeodesicPath, xi: VariationField) -> np.ndarray:
    return np.array(
        [np.dot(riemann(P.manifold, v, t, t), v) for v, t in zip(xi.vectors, P.tangents)]
    )


def second_variation_upper(P: GeodesicPath, xi: VariationField) -> float:
    """
    Upper bound -(first variation)^2 / l + int (|nabla xi|^2 - <R(xi, g')g', xi>) dt
    for exponential variations. The squared boundary term is divided by the
    length so the bound holds for geodesics longer than one.
    """
    _check_field(xi)
    dxi = covariant_derivative(xi)
    integrand = np.einsum("kd,kd->k", dxi, dxi) - _curvature_terms(P, xi)
    first = first_variation(P, xi)
    return float(-(first**2) / P.length + trapezoid(integrand, P.times))


def second_variation_exact(P: GeodesicPath, xi: VariationField) -> float:
    """int (|nabla xi|^2 - <nabla xi, g'>^2 - <R(xi, g')g', xi>) dt for exponential variations."""
    _check_field(xi)
    dxi = covariant_derivative(xi)
    along = np.einsum("kd,kd->k", dxi, P.tangents)
    integrand = np.einsum("kd,kd->k", dxi, dxi) - along**2 - _curvature_terms(P, xi)
    return float(trapezoid(integrand, P.times))


def _polyline_length(connection: Connection, points: np.ndarray) -> float:
    return float(sum(connection.distance(a, b) for a, b in zip(points[:-1], points[1:])))


def finite_difference_length_variation(
    P: GeodesicPath, xi: VariationField, s: float, h: CostSpec | None = None
) -> LengthVariation:
    if not s > 0:
        raise ArgumentError(f"Finite-difference step must be positive, got {s}.")
    connection = _check_field(xi)
    profile = h.h if h is not None else (lambda t: np.asarray(t, dtype=float))
    plus = np.array([connection.exp(x, s * v) for x, v in zip(P.samples, xi.vectors)])
    minus = np.array([connection.exp(x, -s * v) for x, v in zip(P.samples, xi.vectors)])
    length_plus = _polyline_length(connection, plus)
    length_minus = _polyline_length(connection, minus)
    length = _polyline_length(connection, P.samples)
    first = (length_plus - length_minus) / (2.0 * s)
    second = (float(profile(length_plus)) + float(profile(length_minus)) - 2.0 * float(profile(length))) / s**2
    return LengthVariation(first_fd=float(first), second_fd=float(second))


def smoothstep(x: np.ndarray) -> np.ndarray:
    return 3.0 * x**2 - 2.0 * x**3


def orthonormality_defect(frame: np.ndarray) -> float:
    gram = frame @ frame.T
    return float(np.max(np.abs(gram - np.eye(frame.shape[0]))))


def interpolated_frame(P: GeodesicPath, V: Any, W: Any) -> FrameField:
    """Blends the forward transport of V with the backward transport of W by a smoothstep."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if V.shape != W.shape:
        raise ArgumentError(f"Endpoint frames differ in shape: {V.shape} vs {W.shape}.")
    for name, frame in (("start", V), ("end", W)):
        defect = orthonormality_defect(frame)
        if defect > FRAME_TOLERANCE:
            raise ArgumentError(f"The {name} frame is not orthonormal (defect {defect:.3e}).")

    forward = np.stack([transport_field(P, v) for v in V], axis=1)
    backward = np.stack([transport_back(P, w) for w in W], axis=1)
    eta = smoothstep(P.times / P.length)
    frames = (1.0 - eta)[:, None, None] * forward + eta[:, None, None] * backward
    frames[0] = V
    frames[-1] = W

    defect = max(orthonormality_defect(frame) for frame in frames)
    max_gap = float(np.max(np.linalg.norm(backward - forward, axis=2)))
    derivatives = np.stack(
        [covariant_derivative(VariationField(P, frames[:, i, :])) for i in range(frames.shape[1])], axis=1
    )
    derivative_norms = np.max(np.linalg.norm(derivatives, axis=2), axis=1)
    return FrameField(
        path=P,
        frames=frames,
        defect=defect,
        max_gap=max_gap,
        derivative_norms=derivative_norms,
        transported_start=forward,
        transported_end=backward,
    )


def trace_defect(A: np.ndarray, X: np.ndarray) -> float:
    """|tr A - sum_i <A X_i, X_i>| for the columns X_i of X."""
    quadratic = np.einsum("ij,ij->j", X, A @ X)
    return float(abs(np.trace(A) - quadratic.sum()))


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, chunk])))


def _chunks(trials: int) -> list[tuple[int, int]]:
    return [(index, min(TRIAL_CHUNK, trials - start)) for index, start in enumerate(range(0, trials, TRIAL_CHUNK))]


def _berger_chunk(M: Manifold, seed: int, chunk: int, size: int) -> float:
    rng = _chunk_rng(seed, chunk)
    connection = connection_for(M)
    worst = 0.0
    for _ in range(size):
        basis = connection.tangent_basis(M.vertices[rng.integers(M.n_vertices)])
        u, v, w, z = (coeffs @ basis for coeffs in rng.standard_normal((4, 2)))
        scale = np.linalg.norm(u) * np.linalg.norm(v) * np.linalg.norm(w) * np.linalg.norm(z)
        if scale == 0.0:
            continue
        worst = max(worst, abs(float(np.dot(riemann(M, u, v, w), z))) / scale)
    return worst


def _trace_chunk(seed: int, chunk: int, size: int, sigma: float, n: int) -> float:
    rng = _chunk_rng(seed, chunk)
    worst = 0.0
    for _ in range(size):
        A = rng.standard_normal((n, n))
        X = np.eye(n) + rng.uniform(-sigma / 4.0, sigma / 4.0, size=(n, n))
        measured = orthonormality_defect(X.T)
        error = trace_defect(A, X)
        if measured == 0.0:
            ratio = 0.0 if error == 0.0 else np.inf
        else:
            ratio = error / (measured * np.linalg.norm(A, 2))
        worst = max(worst, ratio)
    return worst


def curvature_algebra_checks(
    M: Manifold,
    trials: int,
    seed: int,
    sigma: float | None = None,
    dimension: int = 2,
    workers: int = 1,
) -> list[CurvatureCheckRecord]:
    """
    Seeded Berger (|g(R(u,v)w,z)| <= 7 Ktilde |u||v||w||z|) and quasi-orthonormal
    trace (|tr A - sum <A X_i, X_i>| <= 4 n^2 sigma |A|) checks. Trials are split
    into fixed chunks seeded by (seed, chunk), so results do not depend on workers.
    """
    if trials < 1:
        raise ArgumentError("trials must be >= 1.")
    n = int(dimension)
    if sigma is None:
        sigma = 1.0 / (4.0 * n)
    if sigma < 0 or sigma * n >= 0.5:
        raise ArgumentError(f"sigma must satisfy 0 <= sigma < 1/(2n) = {0.5 / n}, got {sigma}.")

    chunks = _chunks(trials)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        berger = list(pool.map(lambda c: _berger_chunk(M, seed, c[0], c[1]), chunks))
        trace = list(pool.map(lambda c: _trace_chunk(seed + 1, c[0], c[1], sigma, n), chunks))

    berger_bound = BERGER_CONSTANT * M.curvature.Ktilde
    berger_ratio = max(berger)
    trace_bound = 4.0 * n * n
    trace_ratio = max(trace)
    return [
        CurvatureCheckRecord("berger", trials, berger_ratio, berger_bound, berger_ratio <= berger_bound, seed),
        CurvatureCheckRecord("trace", trials, trace_ratio, trace_bound, trace_ratio <= trace_bound, seed),
    ]


def geodesic_from(M: Manifold, p: Any, u: Any, length: float, steps: int) -> GeodesicPath:
    """Unit-speed geodesic t -> exp_p(t u / |u|) for t in [0, length]; torus samples stay unwrapped."""
    if not length > 0:
        raise ArgumentError(f"Geodesic length must be positive, got {length}.")
    if steps < 2:
        raise ArgumentError(f"steps must be >= 2, got {steps}.")
    connection = connection_for(M)
    p = np.asarray(p, dtype=float)
    u = connection.project(p, np.asarray(u, dtype=float))
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise ArgumentError("The initial direction has no tangential component.")
    u = u / norm
    times = length * np.arange(steps + 1) / steps
    if isinstance(connection, SphereConnection):
        samples, tangents = connection.great_circle(p, u, times)
        return GeodesicPath(M, samples, times, tangents, float(length))
    if M.kind == "flat-torus":
        samples = p[None, :] + times[:, None] * u[None, :]
        return GeodesicPath(M, samples, times, np.repeat(u[None, :], steps + 1, axis=0), float(length))
    raise ArgumentError("Geodesics by initial velocity are only available on analytic manifolds.")


def _random_start(M: Manifold, rng: np.random.Generator) -> np.ndarray:
    if M.kind == "sphere":
        x = rng.standard_normal(3)
        return x * (M.radius / np.linalg.norm(x))
    if M.kind == "flat-torus":
        return np.array([rng.uniform(0.0, M.grid.Lx), rng.uniform(0.0, M.grid.Ly), 0.0])
    raise ArgumentError("The variation suite runs on analytic manifolds only.")


def variation_suite(
    M: Manifold, cases: int, seed: int, steps: int = 64, s: float = 1e-2
) -> list[VariationCase]:
    """
    Seeded geodesics of length in [0.3, 2.5] with variation fields
    xi = (a0 + a1 tau) E + (b0 + b1 tau) gamma', E the parallel unit normal
    and tau = t / l. Each case compares the variation formulas with finite
    differences of the length.
    """
    if cases < 1:
        raise ArgumentError("cases must be >= 1.")
    connection = connection_for(M)
    out = []
    for case in range(cases):
        rng = _chunk_rng(seed, case)
        p = _random_start(M, rng)
        u = rng.standard_normal(2) @ connection.tangent_basis(p)
        length = float(rng.uniform(0.3, 2.5))
        if M.kind == "sphere":
            length = min(length, 0.9 * np.pi * M.radius)
        a0, a1, b0, b1 = rng.uniform(-1.0, 1.0, size=4)

        P = geodesic_from(M, p, u, length, steps)
        normal = np.cross(connection.normal(P.start), P.tangents[0])
        E = transport_field(P, normal)
        tau = (P.times / P.length)[:, None]
        xi = VariationField(P, (a0 + a1 * tau) * E + (b0 + b1 * tau) * P.tangents)
        fd = finite_difference_length_variation(P, xi, s)
        out.append(
            VariationCase(
                case=case,
                length=length,
                first=first_variation(P, xi),
                first_fd=fd.first_fd,
                upper=second_variation_upper(P, xi),
                exact=second_variation_exact(P, xi),
                second_fd=fd.second_fd,
            )
        )
    return out
