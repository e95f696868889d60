"""
Monte Carlo volumes and scaling laws
Volumes are normalised by the total Liouville mass of the model manifold
"""

import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from wpflow.config.config_manager import MetricSpec
from wpflow.geometry.metric import x_of_f
from wpflow.measure.fitting import check_family, power_law_fit
from wpflow.measure.sampling import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_ENVELOPE,
    RegionSpec,
    draw_proposals,
    contains,
    fiber_fraction,
    make_proposal,
)
from wpflow.models.results import CodimensionReport, VolumeReport, VolumeRow
from wpflow.utils.parallel import map_chunks
from wpflow.utils.seeding import chunk_sizes, derive_rng

logger = logging.getLogger(__name__)

MAX_REFINEMENTS = 4


def exact_volume(region: RegionSpec, spec: MetricSpec) -> Optional[float]:
    """Closed-form normalised volume where one exists (None for balls)"""
    a = region.density_exponent
    if region.kind in ("E_rho", "N_eps"):
        return (min(x_of_f(region.param), spec.x_max) / spec.x_max) ** (a + 1)
    if region.kind == "V_eps":
        return (min(x_of_f(region.param), spec.x_max) / spec.x_max) ** 4 * fiber_fraction(region.param)
    if region.kind == "tube":
        return (region.param ** 4 - region.x_low ** 4) / spec.x_max ** 4
    return None


def _volume_chunk(task) -> Tuple[float, float]:
    region_data, spec_data, seed, label, index, size, envelope = task
    region = RegionSpec(**region_data)
    spec = MetricSpec(**spec_data)
    prop = make_proposal(region, spec, envelope)
    rng = derive_rng(seed, label, index)
    q, v, phi = draw_proposals(prop, size, spec, rng)
    w = np.where(contains(region, q, v, spec), phi, 0.0)
    return float(w.sum()), float((w * w).sum())


def estimate_volume(
    region: RegionSpec,
    n: int,
    spec: MetricSpec,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
    envelope: float = DEFAULT_ENVELOPE,
) -> Tuple[float, float]:
    """
    Importance estimate of the normalised volume of a region

    Draws n proposals of known mass M from an envelope of the region and
    averages phi * 1[region]; returns (M * mean, M * stderr).
    """
    prop = make_proposal(region, spec, envelope)
    label = f"volume/{region.label}"
    tasks = [
        (region.model_dump(), spec.model_dump(), seed, label, i, size, envelope)
        for i, size in enumerate(chunk_sizes(n, chunk_size))
    ]
    sums = map_chunks(_volume_chunk, tasks, workers)
    s1 = sum(s[0] for s in sums)
    s2 = sum(s[1] for s in sums)
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0)
    return prop.mass * mean, prop.mass * math.sqrt(var / max(n - 1, 1))


def _estimate_with_refinement(
    region: RegionSpec,
    n: int,
    spec: MetricSpec,
    seed: int,
    max_rel_stderr: float,
    chunk_size: int,
    workers: int,
) -> Tuple[float, float, int]:
    n_used = n
    for attempt in range(MAX_REFINEMENTS + 1):
        estimate, stderr = estimate_volume(region, n_used, spec, seed, chunk_size, workers)
        if estimate > 0 and stderr / estimate <= max_rel_stderr:
            return estimate, stderr, n_used
        if attempt < MAX_REFINEMENTS:
            logger.info(
                f"Relative stderr {stderr / estimate if estimate else float('inf'):.3g} above "
                f"{max_rel_stderr} for {region.kind}({region.param}); widening n to {2 * n_used}"
            )
            n_used *= 2
    logger.warning(f"{region.kind}({region.param}) still above stderr target after {MAX_REFINEMENTS} refinements")
    return estimate, stderr, n_used


def volume_scaling(
    family: Callable[[float], RegionSpec],
    params: Sequence[float],
    n: int,
    spec: MetricSpec,
    seed: int,
    max_rel_stderr: float = 0.05,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
    kind: Optional[str] = None,
) -> VolumeReport:
    """
    Fit log vol against log parameter for a region family

    Args:
        family: parameter -> RegionSpec
        params: Parameter values (>= 4, spanning the minimum decades)
        n: Proposals per value (doubled while the relative stderr is too large)
        spec: Model manifold
        seed: Master seed

    Returns:
        VolumeReport with per-value estimates and the FitResult
    """
    check_family(params)
    rows: List[VolumeRow] = []
    for p in params:
        region = family(p)
        estimate, stderr, n_used = _estimate_with_refinement(
            region, n, spec, seed, max_rel_stderr, chunk_size, workers
        )
        rows.append(VolumeRow(param=p, estimate=estimate, stderr=stderr, n=n_used, exact=exact_volume(region, spec)))
    fit = power_law_fit([(r.param, r.estimate, r.stderr) for r in rows], seed=seed)
    for row in rows:
        row.fit_value = fit.predict(row.param)
    name = kind or family(params[0]).kind
    logger.info(f"Volume scaling {name}: exponent {fit.exponent:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")
    return VolumeReport(kind=name, rows=rows, fit=fit)


def minkowski_codimension(
    eps_list: Sequence[float],
    n: int,
    spec: MetricSpec,
    seed: int,
    density_exponent: float = 3.0,
    max_rel_stderr: float = 0.05,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> CodimensionReport:
    """
    Codimension of the boundary from the scaling of vol(N_eps)

    The flag exceeds_two is set when the whole CI lies above 2, the
    almost-polarity criterion for the boundary.
    """
    report = volume_scaling(
        lambda e: RegionSpec.n_eps(e, density_exponent),
        eps_list,
        n,
        spec,
        seed,
        max_rel_stderr,
        chunk_size,
        workers,
        kind="N_eps",
    )
    fit = report.fit
    exceeds = fit.ci_low > 2.0
    logger.info(f"Minkowski codimension {fit.exponent:.3f} (density x^{density_exponent:g}), exceeds 2: {exceeds}")
    return CodimensionReport(
        density_exponent=density_exponent,
        rows=report.rows,
        fit=fit,
        codimension=fit.exponent,
        exceeds_two=exceeds,
    )
