"""
Model Weil-Petersson manifold: cusp plane crossed with a flat 2-torus

    g = 4 dx^2 + x^6 dtau^2 + phi(x, y1) (dy1^2 + dy2^2)
    phi = 1 + eta x^4 cos(2 pi y1 / L1)

The metric is diagonal in the chart (x, tau, y1, y2), so every tensor below is
assembled from the diagonal entries and their first and second derivatives.
Array functions take q, v of shape (..., 4) and never check the domain; the
point functions (metric_at, christoffel_at, ...) do.
"""

import logging
import math
from typing import Tuple

import numpy as np

from wpflow.config.config_manager import MetricSpec
from wpflow.models.errors import DegeneratePlaneError, DomainError
from wpflow.models.points import ManifoldPoint, TangentVector

logger = logging.getLogger(__name__)

# f = l^{1/2} = sqrt(2 pi^2) x
SQRT_2PI2 = math.sqrt(2.0) * math.pi
# |lambda|_g, constant on the whole chart
LAMBDA_NORM = math.pi / math.sqrt(2.0)

_EYE = np.eye(4)


def sqrt_length(q: np.ndarray) -> np.ndarray:
    """f = sqrt(l) for the pinching curve"""
    return SQRT_2PI2 * np.asarray(q)[..., 0]


def x_of_f(f: float) -> float:
    """Depth x at which sqrt(l) equals f"""
    return f / SQRT_2PI2


def _phi_terms(q: np.ndarray, spec: MetricSpec):
    x = q[..., 0]
    k = 2.0 * math.pi / spec.torus_sides[0]
    c = np.cos(k * q[..., 2])
    s = np.sin(k * q[..., 2])
    eta = spec.eta
    x2 = x * x
    x3 = x2 * x
    x4 = x2 * x2
    phi = 1.0 + eta * x4 * c
    phi_x = 4.0 * eta * x3 * c
    phi_y = -eta * x4 * k * s
    phi_xx = 12.0 * eta * x2 * c
    phi_xy = -4.0 * eta * x3 * k * s
    phi_yy = -eta * x4 * k * k * c
    return phi, phi_x, phi_y, phi_xx, phi_xy, phi_yy


def metric_diagonal(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Diagonal entries (g_xx, g_tautau, g_y1y1, g_y2y2)"""
    q = np.asarray(q, dtype=float)
    x = q[..., 0]
    phi = _phi_terms(q, spec)[0]
    g = np.empty(q.shape)
    g[..., 0] = 4.0
    g[..., 1] = x ** 6
    g[..., 2] = phi
    g[..., 3] = phi
    return g


def metric_derivatives(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """dg[..., l, i] = d_l g_ii"""
    q = np.asarray(q, dtype=float)
    x = q[..., 0]
    _, phi_x, phi_y, _, _, _ = _phi_terms(q, spec)
    dg = np.zeros(q.shape[:-1] + (4, 4))
    dg[..., 0, 1] = 6.0 * x ** 5
    dg[..., 0, 2] = phi_x
    dg[..., 0, 3] = phi_x
    dg[..., 2, 2] = phi_y
    dg[..., 2, 3] = phi_y
    return dg


def metric_second_derivatives(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """ddg[..., m, l, i] = d_m d_l g_ii"""
    q = np.asarray(q, dtype=float)
    x = q[..., 0]
    _, _, _, phi_xx, phi_xy, phi_yy = _phi_terms(q, spec)
    ddg = np.zeros(q.shape[:-1] + (4, 4, 4))
    ddg[..., 0, 0, 1] = 30.0 * x ** 4
    for i in (2, 3):
        ddg[..., 0, 0, i] = phi_xx
        ddg[..., 0, 2, i] = phi_xy
        ddg[..., 2, 0, i] = phi_xy
        ddg[..., 2, 2, i] = phi_yy
    return ddg


def _christoffel_numerator(dg: np.ndarray) -> np.ndarray:
    # A[k,i,j] = delta_kj d_i g_k + delta_ki d_j g_k - delta_ij d_k g_i
    t1 = np.einsum("kj,...ik->...kij", _EYE, dg)
    t2 = np.einsum("ki,...jk->...kij", _EYE, dg)
    t3 = np.einsum("ij,...ki->...kij", _EYE, dg)
    return t1 + t2 - t3


def christoffel_symbols(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Gamma[..., k, i, j] = Gamma^k_ij of the Levi-Civita connection"""
    g = metric_diagonal(q, spec)
    A = _christoffel_numerator(metric_derivatives(q, spec))
    return A / (2.0 * g[..., :, None, None])


def christoffel_derivatives(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """dGamma[..., m, k, i, j] = d_m Gamma^k_ij"""
    g = metric_diagonal(q, spec)
    dg = metric_derivatives(q, spec)
    ddg = metric_second_derivatives(q, spec)
    A = _christoffel_numerator(dg)
    # d_m A has the same index pattern with ddg[m] in place of dg
    dA = np.stack([_christoffel_numerator(ddg[..., m, :, :]) for m in range(4)], axis=-4)
    gk = g[..., None, :, None, None]
    dgk = dg[..., :, :, None, None]  # d_m g_k
    return dA / (2.0 * gk) - A[..., None, :, :, :] * dgk / (2.0 * gk * gk)


def riemann_tensor(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """R[..., r, s, m, n] = R^r_smn with R(d_m, d_n) d_s = R^r_smn d_r"""
    G = christoffel_symbols(q, spec)
    dG = christoffel_derivatives(q, spec)
    return (
        np.einsum("...mrns->...rsmn", dG)
        - np.einsum("...nrms->...rsmn", dG)
        + np.einsum("...rml,...lns->...rsmn", G, G)
        - np.einsum("...rnl,...lms->...rsmn", G, G)
    )


def geodesic_acceleration(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """-Gamma^k_ij v^i v^j, specialised to a diagonal metric"""
    g = metric_diagonal(q, spec)
    dg = metric_derivatives(q, spec)
    directional = np.einsum("...ik,...i->...k", dg, v)  # sum_i d_i g_k v^i
    gradient = np.einsum("...ki,...i->...k", dg, v * v)  # sum_i d_k g_i (v^i)^2
    return -(2.0 * v * directional - gradient) / (2.0 * g)


def norm_squared(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    return np.sum(metric_diagonal(q, spec) * v * v, axis=-1)


def inner_product(q: np.ndarray, v: np.ndarray, w: np.ndarray, spec: MetricSpec) -> np.ndarray:
    return np.sum(metric_diagonal(q, spec) * v * w, axis=-1)


def frame_scales(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Orthonormal frame e_i = s_i d_i, s_i = g_ii^{-1/2}"""
    return 1.0 / np.sqrt(metric_diagonal(q, spec))


def to_frame(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Chart components -> orthonormal-frame components"""
    return np.asarray(v) / frame_scales(q, spec)


def from_frame(q: np.ndarray, z: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Orthonormal-frame components -> chart components"""
    return np.asarray(z) * frame_scales(q, spec)


def rotate_J(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Almost complex structure: e1 -> e2 on the cusp plane, e3 -> e4 on the torus"""
    z = to_frame(q, v, spec)
    Jz = np.stack([-z[..., 1], z[..., 0], -z[..., 3], z[..., 2]], axis=-1)
    return from_frame(q, Jz, spec)


def lambda_vector(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """lambda = grad sqrt(l); g^xx = 1/4 so lambda = (sqrt(2 pi^2)/4) d_x"""
    q = np.asarray(q, dtype=float)
    lam = np.zeros(q.shape)
    lam[..., 0] = SQRT_2PI2 / metric_diagonal(q, spec)[..., 0]
    return lam


def check_domain(q: np.ndarray, spec: MetricSpec) -> None:
    x = np.asarray(q)[..., 0]
    slack = 1e-12 * spec.x_max
    if np.any(x < spec.x_floor - slack) or np.any(x > spec.x_max + slack):
        bad = x[(x < spec.x_floor - slack) | (x > spec.x_max + slack)].ravel()[0]
        raise DomainError(f"x = {bad} outside [{spec.x_floor}, {spec.x_max}]")


# ---- point API -------------------------------------------------------------

def metric_at(p: ManifoldPoint, spec: MetricSpec) -> np.ndarray:
    """Metric as a symmetric 4x4 matrix"""
    q = p.as_array()
    check_domain(q, spec)
    return np.diag(metric_diagonal(q, spec))


def christoffel_at(p: ManifoldPoint, spec: MetricSpec) -> np.ndarray:
    """Gamma^k_ij as a (4, 4, 4) array indexed [k, i, j]"""
    q = p.as_array()
    check_domain(q, spec)
    return christoffel_symbols(q, spec)


def riemann_at(p: ManifoldPoint, spec: MetricSpec) -> np.ndarray:
    q = p.as_array()
    check_domain(q, spec)
    return riemann_tensor(q, spec)


def sectional_curvature(
    p: ManifoldPoint,
    plane: Tuple[TangentVector, TangentVector],
    spec: MetricSpec,
    tolerance: float = 1e-12,
) -> float:
    """
    Sectional curvature of the plane spanned by two tangent vectors

    K(u, v) = <R(u, v) v, u> / (|u|^2 |v|^2 - <u, v>^2)
    """
    q = p.as_array()
    check_domain(q, spec)
    u = plane[0].as_array()
    w = plane[1].as_array()
    g = metric_diagonal(q, spec)
    uu = float(np.sum(g * u * u))
    ww = float(np.sum(g * w * w))
    uw = float(np.sum(g * u * w))
    area = uu * ww - uw * uw
    if area <= tolerance * uu * ww:
        raise DegeneratePlaneError("Plane vectors are parallel within tolerance")
    R = riemann_at(p, spec)
    Rvuv = np.einsum("rsmn,s,m,n->r", R, w, u, w)
    return float(np.sum(g * u * Rvuv) / area)


def grad_sqrt_length(p: ManifoldPoint, spec: MetricSpec) -> TangentVector:
    """lambda = grad l^{1/2} at p"""
    q = p.as_array()
    check_domain(q, spec)
    return TangentVector.from_array(lambda_vector(q, spec))


def apply_J(p: ManifoldPoint, v: TangentVector, spec: MetricSpec) -> TangentVector:
    q = p.as_array()
    check_domain(q, spec)
    return TangentVector.from_array(rotate_J(q, v.as_array(), spec))


def orthonormal_frame(p: ManifoldPoint, spec: MetricSpec) -> Tuple[TangentVector, ...]:
    """(e1, e2, e3, e4) with e1 = d_x / 2 and e2 = d_tau / x^3"""
    q = p.as_array()
    check_domain(q, spec)
    s = frame_scales(q, spec)
    return tuple(TangentVector.from_array(s[i] * _EYE[i]) for i in range(4))
