"""Image formation under scalar or mapped sound speed.

Three reconstruction paths: time reversal re-emits recorded photoacoustic
signals backward through the wave solver and reads off the final pressure
field; delay-and-sum beamforming forms B-mode (two-way, plane-wave transmit)
and one-way photoacoustic images analytically; the autofocus baseline sweeps
candidate global sound speeds and keeps the sharpest one-way image.

Frames carry their element geometry in metadata ("element_x"); without it,
elements are assumed uniformly spread over the reconstruction face.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.fft as sfft

from .core import Grid2D, Image2D, Medium, RFFrame, SosMap, resample_map
from .errors import (
    EmptyRange,
    GeometryMismatch,
    InvalidSoS,
    ShapeMismatch,
    ZeroImage,
)
from .wavesim import Propagator, SimConfig, stability_dt

# reconstruction density: image formation only needs travel times, so a
# uniform reference density stands in for the unknown true one
RHO_REF = 1020.0

CHANNEL_UPSAMPLING = 5
TIME_UPSAMPLING = 4

# pulse-echo transmit crosstalk saturates the earliest arrivals; the
# corresponding shallow band carries no image information
BMODE_MUTE_DEPTH = 2e-3


def paper_recon_grid() -> Grid2D:
    """Full-scale reconstruction raster: 38.4 mm face x 39.4 mm depth at
    0.05 mm (the extra millimetre of depth absorbs late arrivals)."""
    return Grid2D(768, 788, 0.05e-3)


def desk_recon_grid(depth: float = 26.6e-3) -> Grid2D:
    """Desk-scale raster: 25.6 mm face at 0.05 mm, depth as requested."""
    return Grid2D(512, int(round(depth / 0.05e-3)), 0.05e-3)


@dataclass(frozen=True)
class ReconConfig:
    """Reconstruction settings.

    sos_source is either a scalar sound speed (uniform medium) or a SosMap
    resampled onto the reconstruction grid (edge-replicated where the map
    does not reach, e.g. the deepest millimetre). The grid face width must
    equal the recording aperture.
    """

    grid: Grid2D = field(default_factory=paper_recon_grid)
    sos_source: Union[float, SosMap] = 1540.0
    envelope: bool = True
    dynamic_range_db: float = 40.0
    f_number: float = 1.0
    cfl: float = 0.3
    pml_points: int = 20

    def __post_init__(self):
        if isinstance(self.sos_source, (int, float)):
            if self.sos_source <= 0:
                raise InvalidSoS(f"sound speed must be positive, got {self.sos_source}")
        elif not isinstance(self.sos_source, SosMap):
            raise InvalidSoS("sos_source must be a scalar or a SosMap")
        if self.dynamic_range_db <= 0:
            raise ValueError("dynamic range must be positive")
        if self.f_number <= 0:
            raise ValueError("f-number must be positive")

    def sound_speed_on_grid(self) -> np.ndarray:
        if isinstance(self.sos_source, SosMap):
            src = self.sos_source
            return resample_map(src.values, src.grid, self.grid)
        return np.full((self.grid.nx, self.grid.nz), float(self.sos_source),
                       dtype=np.float32)


@dataclass(frozen=True)
class AutofocusResult:
    """Outcome of the global sound-speed sweep."""

    best_sos: float
    candidates: List[float]
    sharpness_curve: List[float]

    def __post_init__(self):
        if len(self.candidates) != len(self.sharpness_curve):
            raise ShapeMismatch("one sharpness value per candidate required")
        if not (min(self.candidates) <= self.best_sos <= max(self.candidates)):
            raise EmptyRange("best_sos outside the candidate range")


def _element_positions(rf: RFFrame, width: float) -> np.ndarray:
    """Physical element center x coordinates for a frame.

    Prefers the geometry recorded at simulation time; otherwise the elements
    are assumed to tile the face uniformly.
    """
    elem = rf.meta.get("element_x")
    if elem is not None:
        elem = np.asarray(elem, dtype=np.float64)
        pitch = rf.meta.get("pitch", width / elem.size)
        aperture = elem.size * pitch
        if abs(aperture - width) > 0.51 * pitch:
            raise GeometryMismatch(
                f"frame aperture {aperture * 1e3:.2f} mm does not match the "
                f"reconstruction face {width * 1e3:.2f} mm")
        return elem
    n = rf.n_channels
    return (np.arange(n) + 0.5) * (width / n)


def _analytic_channels(data: np.ndarray) -> np.ndarray:
    """Analytic signal per channel, padded to kill circular wrap."""
    n = data.shape[1]
    n_fft = sfft.next_fast_len(2 * n)
    spec = sfft.fft(data.astype(np.float64), n=n_fft, axis=1)
    h = np.zeros(n_fft)
    h[0] = 1.0
    h[1:(n_fft + 1) // 2] = 2.0
    if n_fft % 2 == 0:
        h[n_fft // 2] = 1.0
    return sfft.ifft(spec * h[None, :], axis=1)[:, :n]


def _gather(channel: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Linear interpolation of one channel at fractional sample positions;
    positions outside the record contribute zero."""
    n = channel.shape[0]
    inside = (s >= 0.0) & (s <= n - 1)
    sc = np.clip(s, 0.0, n - 1.0)
    i0 = np.floor(sc).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    w = sc - i0
    return np.where(inside, channel[i0] * (1.0 - w) + channel[i1] * w, 0.0)


def _delay_and_sum(rf: RFFrame, c: float, grid: Grid2D, f_number: float,
                   envelope: bool, one_way: bool) -> np.ndarray:
    if c <= 0:
        raise InvalidSoS(f"sound speed must be positive, got {c}")
    elem_x = _element_positions(rf, grid.extent[0])
    chans = _analytic_channels(rf.data) if envelope else rf.data.astype(np.float64)
    fs = rf.sampling_rate
    gx = grid.x_coords()[:, None]
    gz = grid.z_coords()[None, :]
    pitch = float(elem_x[1] - elem_x[0]) if elem_x.size > 1 else grid.extent[0]
    acc = np.zeros((grid.nx, grid.nz),
                   dtype=np.complex128 if envelope else np.float64)
    for e, xe in enumerate(elem_x):
        lateral = np.abs(gx - xe)
        r = np.sqrt(lateral * lateral + gz * gz)
        t = (r / c) if one_way else ((gz + r) / c)
        s = (t - rf.t0) * fs
        # dynamic receive aperture: half-width z / (2 f#), never narrower
        # than one pitch so shallow pixels keep a contributing element
        accept = lateral <= np.maximum(gz / (2.0 * f_number), pitch)
        acc += np.where(accept, _gather(chans[e], s), 0.0)
    return np.abs(acc)


def das_bmode(rf: RFFrame, c: float, cfg: ReconConfig) -> Image2D:
    """Plane-wave B-mode: two-way delay-and-sum, envelope, log compression.

    Pixel (x, z) sums channel samples at t = (z + sqrt(z^2 + (x-x_e)^2))/c.
    Output values are dB in [-dynamic_range_db, 0]; the first 2 mm are muted
    to the floor. All-zero input maps to the floor everywhere.
    """
    env = _delay_and_sum(rf, c, cfg.grid, cfg.f_number, cfg.envelope,
                         one_way=False)
    env[:, cfg.grid.z_coords() < BMODE_MUTE_DEPTH] = 0.0
    peak = env.max()
    floor = -cfg.dynamic_range_db
    if peak <= 0:
        db = np.full(env.shape, floor)
    else:
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(env / peak)
        db = np.maximum(db, floor)
    return Image2D(db.astype(np.float32), cfg.grid, "bmode_db")


def das_pa(rf: RFFrame, c: float, cfg: ReconConfig) -> Image2D:
    """One-way photoacoustic delay-and-sum: pixel (x, z) sums channel samples
    at t = sqrt(z^2 + (x-x_e)^2)/c. Envelope image peak-normalized to [0,1]."""
    env = _delay_and_sum(rf, c, cfg.grid, cfg.f_number, cfg.envelope,
                         one_way=True)
    peak = env.max()
    if peak > 0:
        env = env / peak
    return Image2D(env.astype(np.float32), cfg.grid, "pa_recon")


# -- time reversal -------------------------------------------------------


def _virtual_sensors(rf: RFFrame, grid: Grid2D, data_up: np.ndarray
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """Snap the upsampled receive lines onto grid columns.

    Virtual line r sits at the fractional element coordinate r / ratio
    (clamped at the ends, matching the channel upsampling); lines landing on
    the same column are averaged. Returns (columns, averaged data).
    """
    elem_x = _element_positions(rf, grid.extent[0])
    n_virtual = data_up.shape[0]
    ratio = n_virtual // elem_x.size
    e = np.minimum(np.arange(n_virtual) / ratio, elem_x.size - 1.0)
    x_v = np.interp(e, np.arange(elem_x.size), elem_x)
    cols = np.array([grid.world_to_grid((x, 0.0))[0] for x in x_v], np.intp)
    uniq, inverse = np.unique(cols, return_inverse=True)
    summed = np.zeros((uniq.size, data_up.shape[1]), np.float64)
    np.add.at(summed, inverse, data_up.astype(np.float64))
    counts = np.bincount(inverse).astype(np.float64)
    return uniq, summed / counts[:, None]


def time_reversal(rf: RFFrame, cfg: ReconConfig) -> Image2D:
    """Reconstruct the initial pressure by running the solver backward.

    The frame is upsampled (channels x5, time x4) unless its metadata flags
    it as already upsampled; the reversed time series are then enforced as
    pressure values on the face-row sensor columns while stepping a zero
    field for the full record duration. The final pressure field, rectified
    and peak-normalized to [0, 1], approximates the initial distribution.
    """
    from .signal import upsample_bilinear

    if rf.n_channels < 2 or rf.n_samples < 2:
        raise ShapeMismatch(
            f"need at least 2 channels and 2 samples, got {rf.data.shape}")
    if rf.meta.get("upsampled"):
        data_up = rf.data.astype(np.float64)
        fs_up = rf.sampling_rate
    else:
        data_up = upsample_bilinear(rf.data, CHANNEL_UPSAMPLING,
                                    TIME_UPSAMPLING).astype(np.float64)
        fs_up = rf.sampling_rate * TIME_UPSAMPLING

    c_map = cfg.sound_speed_on_grid()
    medium = Medium(cfg.grid, c_map,
                    np.full(c_map.shape, RHO_REF, dtype=np.float32))
    sim = SimConfig(cfl=cfg.cfl, pml_points=cfg.pml_points, p0_smooth=False)
    dt = stability_dt(medium, cfg.cfl, record_rate=fs_up)
    n_sub = int(round(1.0 / (fs_up * dt)))
    prop = Propagator(medium, dt, sim)

    cols, sensor = _virtual_sensors(rf, cfg.grid, data_up)
    idx = (cols + prop.pad_x[0], np.full(cols.size, prop.pad_z[0], np.intp))
    prop.register_reference(float(np.abs(sensor).max()))

    n_up = sensor.shape[1]
    n_steps = (n_up - 1) * n_sub
    # reversed record, linearly interpolated onto solver steps
    s = (n_up - 1.0) - np.arange(n_steps + 1) / n_sub
    i0 = np.floor(s).astype(np.intp).clip(0, n_up - 1)
    i1 = np.minimum(i0 + 1, n_up - 1)
    w = (s - i0).clip(0.0, 1.0)
    values = sensor[:, i0] * (1.0 - w) + sensor[:, i1] * w

    st = prop.fresh_state()
    vals0 = values[:, 0].astype(st.p.dtype)
    st.p[idx] = vals0
    st.rhox[idx] = vals0 * prop.inv_2c2[idx]
    st.rhoz[idx] = st.rhox[idx]
    for k in range(1, n_steps + 1):
        st = prop.step(st, dirichlet_idx=idx, dirichlet_values=values[:, k])

    out = np.maximum(st.p[prop.interior].astype(np.float64), 0.0)
    peak = out.max()
    if peak > 0:
        out = out / peak
    return Image2D(out.astype(np.float32), cfg.grid, "pa_recon")


# -- autofocus baseline ----------------------------------------------------


def _sharpness_stat(values: np.ndarray) -> float:
    v = values.astype(np.float64)
    denom = (v * v).sum()
    if denom == 0.0:
        raise ZeroImage("sharpness undefined for an all-zero image")
    return float((v ** 4).sum() / (denom * denom))


def sharpness(img: Image2D) -> float:
    """Normalized fourth-power sharpness sum(I^4)/sum(I^2)^2.

    Scale-invariant; 1.0 for a single nonzero pixel, smaller the more the
    energy spreads.
    """
    return _sharpness_stat(img.values)


def _default_focus_grid(rf: RFFrame) -> Grid2D:
    """Coarse square field over the aperture for the candidate sweep."""
    elem = rf.meta.get("element_x")
    if elem is not None:
        pitch = rf.meta.get("pitch",
                            float(elem[1] - elem[0]) if len(elem) > 1 else 0.0)
        width = len(elem) * pitch
    else:
        width = rf.n_channels * 0.3e-3
    n = 192
    return Grid2D(n, n, width / n)


def autofocus_sos(rf_pa: RFFrame, sos_range: Tuple[float, float] = (1400.0, 1600.0),
                  step: float = 5.0, cfg: Optional[ReconConfig] = None
                  ) -> AutofocusResult:
    """Global sound-speed baseline: sweep candidates, keep the sharpest
    one-way reconstruction. Ties break toward the lower speed."""
    lo, hi = sos_range
    if not (lo < hi) or step <= 0:
        raise EmptyRange(f"need low < high and step > 0, got [{lo}, {hi}] / {step}")
    candidates = np.arange(lo, hi + 0.5 * step, step)
    if cfg is None:
        cfg = ReconConfig(grid=_default_focus_grid(rf_pa))
    curve = []
    for c in candidates:
        img = das_pa(rf_pa, float(c), cfg)
        curve.append(_sharpness_stat(img.values))
    best = int(np.argmax(curve))
    return AutofocusResult(float(candidates[best]),
                           [float(c) for c in candidates],
                           [float(s) for s in curve])
