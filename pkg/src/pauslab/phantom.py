"""Digital phantom generation.

Training phantoms are random ellipse collections over a uniform background;
evaluation phantoms are layered structures (straight or curved boundaries)
and inclusion scenes the training distribution never produces. Scatterer
speckle perturbs density only, while the hyperechoic treatment perturbs
sound speed only, so the two contrast mechanisms stay independently
testable. All sampling is a pure function of (seed, config).
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Grid2D, Image2D, Medium
from .errors import EmptyRegion, InvalidSoS

ECHOGENICITY_CLASSES = ("isoechoic", "anechoic", "hypoechoic", "hyperechoic")

# speckle survival per class: anechoic regions carry no scatterers and
# hypoechoic regions a quarter density; hyperechoic contrast comes from
# sound-speed increments instead, so its scatterer density stays nominal
SPECKLE_FACTOR = {
    "isoechoic": 1.0,
    "anechoic": 0.0,
    "hypoechoic": 0.25,
    "hyperechoic": 1.0,
}

EVAL_PATTERNS = ("P1_curved_two_layer", "P2_straight_layers",
                 "P3_inclusions_in_background")

DEFAULT_DENSITY = 1020.0
DEFAULT_ALPHA = 0.5


@dataclass(frozen=True)
class EllipseSpec:
    """One elliptical region in world coordinates."""

    center: Tuple[float, float]
    semi_axes: Tuple[float, float]
    angle: float
    sos_ratio: float
    echogenicity: str = "hyperechoic"

    def __post_init__(self):
        a, b = self.semi_axes
        if a <= 0 or b <= 0:
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")
        if self.sos_ratio <= 0:
            raise InvalidSoS(f"sos_ratio must be positive, got {self.sos_ratio}")
        if self.echogenicity not in ECHOGENICITY_CLASSES:
            raise ValueError(f"unknown echogenicity {self.echogenicity!r}")


@dataclass(frozen=True)
class PhantomSpec:
    """Complete recipe for one training phantom."""

    background_sos: float
    ellipses: Tuple[EllipseSpec, ...]
    speckle_seed: int
    speckle_density: float = 3.0
    speckle_amp_bound: float = 0.03
    hyper_fraction: float = 0.10
    hyper_increment_range: Tuple[float, float] = (0.07, 0.11)

    def __post_init__(self):
        if not 1400.0 <= self.background_sos <= 1600.0:
            raise InvalidSoS(
                f"background {self.background_sos} outside [1400, 1600]")
        if self.speckle_density <= 0:
            raise ValueError("speckle_density must be positive")
        if not 0.0 <= self.hyper_fraction <= 1.0:
            raise ValueError("hyper_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class EvalPatternSpec:
    """Recipe for one evaluation phantom; boundary carries the pattern's
    geometry parameters so region masks can be rebuilt on any grid."""

    pattern: str
    layer_soses: Tuple[float, ...]
    boundary: Dict
    echogenicity: Tuple[str, ...]
    absorber_coords: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if self.pattern not in EVAL_PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        for sos in self.layer_soses:
            if not 1400.0 <= sos <= 1600.0:
                raise InvalidSoS(f"layer SoS {sos} outside [1400, 1600]")


@dataclass(frozen=True)
class PhantomConfig:
    """Sampling ranges for training phantoms.

    Ellipse semi-axes default to half the medium diagonal conventions:
    a up to extent*sqrt(2)/2 and b up to extent*sqrt(2)/4.
    """

    extent_x: float = 38.4e-3
    extent_z: float = 38.4e-3
    max_ellipses: int = 8
    sos_range: Tuple[float, float] = (1400.0, 1600.0)
    ratio_range: Tuple[float, float] = (1.01, 1.07)
    semi_a_max: Optional[float] = None
    semi_b_max: Optional[float] = None
    speckle_density: float = 3.0
    speckle_amp_bound: float = 0.03
    hyper_fraction: float = 0.10
    hyper_increment_range: Tuple[float, float] = (0.07, 0.11)
    hyper_mechanism: str = "sos"  # or "density"

    def a_max(self) -> float:
        return self.semi_a_max if self.semi_a_max else self.extent_x * np.sqrt(2) / 2

    def b_max(self) -> float:
        return self.semi_b_max if self.semi_b_max else self.extent_x * np.sqrt(2) / 4

    @classmethod
    def for_grid(cls, grid: Grid2D, **overrides) -> "PhantomConfig":
        ex, ez = grid.extent
        return cls(extent_x=ex, extent_z=ez, **overrides)


# -- training phantoms --------------------------------------------------------

def sample_training_phantom(seed: int, cfg: PhantomConfig) -> PhantomSpec:
    """Draw one training phantom recipe; identical for identical seeds."""
    rng = np.random.default_rng(seed)
    lo, hi = cfg.sos_range
    background = float(rng.uniform(lo, hi))
    n_ellipses = int(rng.integers(1, cfg.max_ellipses + 1))
    ellipses = []
    for _ in range(n_ellipses):
        cx = float(rng.uniform(0.0, cfg.extent_x))
        cz = float(rng.uniform(0.0, cfg.extent_z))
        a = max(float(rng.uniform(0.0, cfg.a_max())), 1e-6)
        b = max(float(rng.uniform(0.0, cfg.b_max())), 1e-6)
        angle = float(rng.uniform(0.0, np.pi))
        ratio = float(rng.uniform(*cfg.ratio_range))
        ellipses.append(EllipseSpec((cx, cz), (a, b), angle, ratio,
                                    echogenicity="hyperechoic"))
    speckle_seed = int(rng.integers(0, 2 ** 31))
    return PhantomSpec(
        background_sos=background,
        ellipses=tuple(ellipses),
        speckle_seed=speckle_seed,
        speckle_density=cfg.speckle_density,
        speckle_amp_bound=cfg.speckle_amp_bound,
        hyper_fraction=cfg.hyper_fraction,
        hyper_increment_range=cfg.hyper_increment_range,
    )


def ellipse_mask(ellipse: EllipseSpec, grid: Grid2D) -> np.ndarray:
    """Boolean mask of grid cells inside the ellipse."""
    xg, zg = np.meshgrid(grid.x_coords(), grid.z_coords(), indexing="ij")
    cx, cz = ellipse.center
    ca, sa = np.cos(ellipse.angle), np.sin(ellipse.angle)
    u = (xg - cx) * ca + (zg - cz) * sa
    v = -(xg - cx) * sa + (zg - cz) * ca
    a, b = ellipse.semi_axes
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def rasterize_phantom(spec: PhantomSpec, grid: Grid2D) -> Medium:
    """Region-level sound-speed map (no speckle, no point increments);
    later ellipses override earlier ones where they overlap."""
    sos = np.full((grid.nx, grid.nz), spec.background_sos, np.float64)
    for ellipse in spec.ellipses:
        sos[ellipse_mask(ellipse, grid)] = spec.background_sos * ellipse.sos_ratio
    density = np.full((grid.nx, grid.nz), DEFAULT_DENSITY, np.float64)
    return Medium(grid, sos, density, alpha_coeff=DEFAULT_ALPHA, alpha_power=1.0)


def speckle_factor_map(spec: PhantomSpec, grid: Grid2D) -> np.ndarray:
    """Per-cell scatterer survival probability from region echogenicity."""
    factor = np.ones((grid.nx, grid.nz), np.float64)
    for ellipse in spec.ellipses:
        factor[ellipse_mask(ellipse, grid)] = SPECKLE_FACTOR[ellipse.echogenicity]
    return factor


def draw_scatterers(grid: Grid2D, wavelength: float, per_lambda2: float,
                    amp: float, rng: np.random.Generator):
    """Scatterer sites and amplitudes: a Poisson count with mean
    per_lambda2 * area / wavelength^2, placed uniformly over the cells.
    Several scatterers may land on one cell; their factors compound."""
    ex, ez = grid.extent
    expected = per_lambda2 * ex * ez / wavelength ** 2
    count = int(rng.poisson(expected))
    ix = rng.integers(0, grid.nx, count)
    iz = rng.integers(0, grid.nz, count)
    amps = rng.uniform(-amp, amp, count)
    return ix, iz, amps


def _scatter_density(density: np.ndarray, grid: Grid2D, factor: np.ndarray,
                     wavelength: float, per_lambda2: float, amp: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Multiplicative scatterer field, thinned by the per-cell factor."""
    ix, iz, amps = draw_scatterers(grid, wavelength, per_lambda2, amp, rng)
    out = density.copy()
    if ix.size == 0:
        return out
    keep = rng.random(ix.size) < factor[ix, iz]
    np.multiply.at(out, (ix[keep], iz[keep]), 1.0 + amps[keep])
    return out


def add_speckle(medium: Medium, spec: PhantomSpec, f0: float) -> Medium:
    """Scatter sites with mean spec.speckle_density per wavelength squared,
    each perturbing local density by a factor in 1 +- speckle_amp_bound."""
    wavelength = float(medium.sound_speed.mean()) / f0
    rng = np.random.default_rng(spec.speckle_seed)
    factor = speckle_factor_map(spec, medium.grid)
    density = _scatter_density(medium.density, medium.grid, factor, wavelength,
                               spec.speckle_density, spec.speckle_amp_bound, rng)
    return Medium(medium.grid, medium.sound_speed, density,
                  medium.alpha_coeff, medium.alpha_power)


def apply_hyperechoic(medium: Medium, region_mask: np.ndarray,
                      spec: PhantomSpec, seed: int,
                      mechanism: str = "sos") -> Medium:
    """Give exactly round(hyper_fraction * |region|) points of the region a
    sound speed of background * (1 + u), u ~ U[hyper_increment_range]; the
    "density" mechanism scales density by the same factors instead."""
    flat = np.flatnonzero(np.asarray(region_mask, bool))
    if flat.size == 0:
        raise EmptyRegion("hyperechoic region mask selects no cells")
    n_mod = int(round(spec.hyper_fraction * flat.size))
    if n_mod == 0:
        return medium
    rng = np.random.default_rng(seed)
    chosen = flat[rng.choice(flat.size, size=n_mod, replace=False)]
    lo, hi = spec.hyper_increment_range
    gain = 1.0 + rng.uniform(lo, hi, n_mod)
    if mechanism == "sos":
        sos = medium.sound_speed.copy()
        sos.flat[chosen] = spec.background_sos * gain
        return Medium(medium.grid, sos, medium.density,
                      medium.alpha_coeff, medium.alpha_power)
    if mechanism == "density":
        density = medium.density.copy()
        density.flat[chosen] = density.flat[chosen] * gain
        return Medium(medium.grid, medium.sound_speed, density,
                      medium.alpha_coeff, medium.alpha_power)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def realize_training_medium(spec: PhantomSpec, grid: Grid2D,
                            f0: float, mechanism: str = "sos") -> Medium:
    """Full simulation medium: rasterized regions, scatterer speckle, and
    point increments inside every hyperechoic ellipse. The clean map from
    rasterize_phantom remains the regression target."""
    medium = add_speckle(rasterize_phantom(spec, grid), spec, f0)
    for k, ellipse in enumerate(spec.ellipses):
        if ellipse.echogenicity != "hyperechoic":
            continue
        mask = ellipse_mask(ellipse, grid)
        if not mask.any():
            continue  # ellipse may fall outside a smaller test grid
        medium = apply_hyperechoic(medium, mask, spec,
                                   seed=spec.speckle_seed + k + 1,
                                   mechanism=mechanism)
    return medium


# -- evaluation phantoms ------------------------------------------------------

def _absorber_lattice(grid: Grid2D) -> Tuple[Tuple[float, float], ...]:
    """Sparse 4x4 lattice of point-absorber coordinates, grid-scaled."""
    ex, ez = grid.extent
    fractions = (0.2, 0.4, 0.6, 0.8)
    return tuple((fx * ex, fz * ez) for fz in fractions for fx in fractions)


def _curved_boundary(spec_boundary: Dict, x: np.ndarray) -> np.ndarray:
    z = np.full_like(x, spec_boundary["z_mid"])
    for amp, wav, phase in spec_boundary["waves"]:
        z = z + amp * np.sin(2 * np.pi * x / wav + phase)
    return z


def _sample_p1(rng: np.random.Generator, grid: Grid2D) -> EvalPatternSpec:
    ex, ez = grid.extent
    soses = tuple(float(s) for s in rng.uniform(1400.0, 1600.0, 2))
    z_mid = float(rng.uniform(0.35, 0.65) * ez)
    n_waves = int(rng.integers(2, 5))
    raw = rng.uniform(0.2, 1.0, n_waves)
    total_amp = float(rng.uniform(0.5e-3, 4e-3))
    amps = raw / raw.sum() * total_amp
    waves = tuple(
        (float(a), float(rng.uniform(10e-3, 2 * ex)), float(rng.uniform(0, 2 * np.pi)))
        for a in amps)
    boundary = {"z_mid": z_mid, "waves": waves}
    return EvalPatternSpec("P1_curved_two_layer", soses, boundary,
                           ("isoechoic", "isoechoic"), _absorber_lattice(grid))


def _sample_p2(rng: np.random.Generator, grid: Grid2D) -> EvalPatternSpec:
    ex, ez = grid.extent
    n_layers = int(rng.integers(2, 5))
    min_gap = 0.1 * ez
    for _ in range(100):
        cuts = np.sort(rng.uniform(0.15 * ez, 0.85 * ez, n_layers - 1))
        if n_layers == 2 or np.diff(cuts).min() >= min_gap:
            break
    else:
        cuts = np.linspace(0.15 * ez, 0.85 * ez, n_layers + 1)[1:-1]
    soses = tuple(float(s) for s in rng.uniform(1400.0, 1600.0, n_layers))
    boundary = {"cuts": tuple(float(c) for c in cuts)}
    return EvalPatternSpec("P2_straight_layers", soses, boundary,
                           ("isoechoic",) * n_layers, _absorber_lattice(grid))


def _sample_p3(rng: np.random.Generator, grid: Grid2D) -> EvalPatternSpec:
    ex, ez = grid.extent
    background = float(rng.uniform(1400.0, 1600.0))
    n_inc = int(rng.integers(1, 4))
    ellipses = []
    soses = [background]
    for _ in range(n_inc):
        cx = float(rng.uniform(0.2 * ex, 0.8 * ex))
        cz = float(rng.uniform(0.2 * ez, 0.8 * ez))
        a = float(rng.uniform(3e-3, 8e-3))
        b = float(rng.uniform(2e-3, 6e-3))
        angle = float(rng.uniform(0, np.pi))
        sos = float(rng.uniform(1400.0, 1600.0))
        soses.append(sos)
        ellipses.append(((cx, cz), (a, b), angle, sos))
    boundary = {"ellipses": tuple(ellipses)}
    echo = ("isoechoic",) + ("hypoechoic",) * n_inc
    return EvalPatternSpec("P3_inclusions_in_background", tuple(soses),
                           boundary, echo, _absorber_lattice(grid))


def eval_region_masks(spec: EvalPatternSpec, grid: Grid2D) -> List[np.ndarray]:
    """One boolean mask per region, in layer_soses order; P3 inclusion masks
    exclude nothing (later inclusions override earlier in the SoS map)."""
    xg, zg = np.meshgrid(grid.x_coords(), grid.z_coords(), indexing="ij")
    if spec.pattern == "P1_curved_two_layer":
        zb = _curved_boundary(spec.boundary, xg)
        top = zg < zb
        return [top, ~top]
    if spec.pattern == "P2_straight_layers":
        cuts = spec.boundary["cuts"]
        edges = (-np.inf,) + tuple(cuts) + (np.inf,)
        return [(zg >= edges[k]) & (zg < edges[k + 1])
                for k in range(len(spec.layer_soses))]
    masks = [np.ones((grid.nx, grid.nz), bool)]
    for (center, axes, angle, _sos) in spec.boundary["ellipses"]:
        ell = EllipseSpec(center, axes, angle, 1.0, "hypoechoic")
        masks.append(ellipse_mask(ell, grid))
    masks[0] = ~np.any(masks[1:], axis=0) if len(masks) > 1 else masks[0]
    return masks


def eval_sos_map(spec: EvalPatternSpec, grid: Grid2D) -> np.ndarray:
    """Region-level sound-speed map for an evaluation phantom."""
    sos = np.empty((grid.nx, grid.nz), np.float64)
    if spec.pattern == "P3_inclusions_in_background":
        sos[:] = spec.layer_soses[0]
        for (center, axes, angle, value) in spec.boundary["ellipses"]:
            ell = EllipseSpec(center, axes, angle, 1.0, "hypoechoic")
            sos[ellipse_mask(ell, grid)] = value
        return sos
    for mask, value in zip(eval_region_masks(spec, grid), spec.layer_soses):
        sos[mask] = value
    return sos


def sample_eval_phantom(pattern: str, seed: int, grid: Grid2D,
                        f0: float = 7e6):
    """Draw one evaluation phantom and realize its simulation medium
    (speckled density, echogenicity-thinned); absorber coordinates are for
    photoacoustic runs only and never enter the medium."""
    if pattern not in EVAL_PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    rng = np.random.default_rng(seed)
    if pattern == "P1_curved_two_layer":
        spec = _sample_p1(rng, grid)
    elif pattern == "P2_straight_layers":
        spec = _sample_p2(rng, grid)
    else:
        spec = _sample_p3(rng, grid)

    sos = eval_sos_map(spec, grid)
    density = np.full((grid.nx, grid.nz), DEFAULT_DENSITY, np.float64)
    factor = np.ones((grid.nx, grid.nz), np.float64)
    for mask, echo in zip(eval_region_masks(spec, grid), spec.echogenicity):
        factor[mask] = SPECKLE_FACTOR[echo]
    wavelength = float(sos.mean()) / f0
    speckle_seed = int(rng.integers(0, 2 ** 31))
    srng = np.random.default_rng(speckle_seed)
    density = _scatter_density(density, grid, factor, wavelength, 3.0, 0.03, srng)
    medium = Medium(grid, sos, density,
                    alpha_coeff=DEFAULT_ALPHA, alpha_power=1.0)
    return medium, spec


# -- photoacoustic sources ----------------------------------------------------

def make_initial_pressure(coords: Sequence[Tuple[float, float]],
                          grid: Grid2D) -> Image2D:
    """Unit initial pressure at each coordinate's nearest grid cell."""
    values = np.zeros((grid.nx, grid.nz), np.float32)
    for (x, z) in coords:
        i, j = grid.world_to_grid((x, z))  # raises OutOfBounds
        values[i, j] = 1.0
    return Image2D(values, grid, "initial_pressure")
