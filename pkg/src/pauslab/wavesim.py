"""First-order k-space pseudospectral acoustic propagation in 2D.

The solver marches coupled pressure/velocity updates on a staggered grid
with spectral derivatives, a k-space dispersion correction that makes
homogeneous propagation exact, split-field quartic-graded absorbing
boundary layers appended outside the stated grid, and an optional
frequency-linear absorption term applied per step in the spatial-frequency
domain.

Update scheme per step (each axis analogous):

    u    <- pml_sg * (pml_sg * u - dt/rho_sg * IFFT(i k e^{+ikdx/2} kappa FFT(p)))
    du   <- IFFT(i k e^{-ikdx/2} kappa FFT(u))
    rho  <- pml * (pml * rho - dt rho0 du)
    p    <- c^2 (rhox + rhoz [+ absorption term])

with kappa = sinc(c_ref |k| dt / 2). The first velocity update after an
initial-pressure release uses dt/2, which realizes u(0) = 0 symmetrically.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sfft

from .core import Grid2D, Image2D, Medium, RFFrame, TransducerArray
from .errors import Diverged, EmptySource, GridMismatch, InvalidCycles

log = logging.getLogger(__name__)

NEPER_PER_DB = 1.0 / (20.0 * np.log10(np.e))


def db2neper(alpha_db_mhz_cm: float, y: float) -> float:
    """Convert dB/(MHz^y cm) to Np/((rad/s)^y m)."""
    return 100.0 * alpha_db_mhz_cm * (1e-6 / (2 * np.pi)) ** y * NEPER_PER_DB


def stability_dt(medium: Medium, cfl: float = 0.3,
                 record_rate: Optional[float] = None) -> float:
    """Stable time step dt = cfl * dx / max(c).

    With ``record_rate`` given, dt is reduced to the nearest value such
    that the record period is an integer multiple of dt.
    """
    dt = cfl * medium.grid.dx / medium.c_max
    if record_rate is not None:
        period = 1.0 / record_rate
        n_sub = max(1, math.ceil(period / dt - 1e-9))
        dt = period / n_sub
    return dt


def tone_burst(f0: float, cycles: float, fs: float,
               envelope: str = "gaussian") -> np.ndarray:
    """Windowed sinusoid of ``cycles`` carrier periods sampled at ``fs``."""
    if cycles < 1:
        raise InvalidCycles(f"need >= 1 cycle, got {cycles}")
    if f0 <= 0 or fs <= 0:
        raise InvalidCycles("f0 and fs must be positive")
    return _burst_samples(f0, cycles, fs, envelope).astype(np.float32)


def _burst_samples(f0: float, cycles: float, fs: float, envelope: str,
                   t_shift: float = 0.0) -> np.ndarray:
    """Burst samples at times k/fs + t_shift; shift lets a staggered-grid
    velocity stream use the same waveform at its half-cell, half-step
    offsets."""
    n = int(round(cycles / f0 * fs))
    center = 0.5 * (n - 1)
    # carrier antisymmetric about the window center: the discrete sum then
    # cancels pairwise, so the burst carries no DC to radiate a wake
    tau0 = (np.arange(n) - center) / fs

    def window(tau):
        if envelope == "gaussian":
            sigma = (n / 6.0) / fs  # +-3 sigma spans the burst
            return np.exp(-0.5 * (tau / sigma) ** 2)
        if envelope == "hann":
            x = np.clip(tau * fs + center, 0, n - 1)
            return 0.5 - 0.5 * np.cos(2 * np.pi * x / max(n - 1, 1))
        raise ValueError(f"unknown envelope {envelope!r}")

    # flip so the leading lobe of the unshifted burst is positive; the
    # decision must not depend on t_shift or the paired velocity stream
    # would end up with the opposite polarity
    base = window(tau0) * np.sin(2 * np.pi * f0 * tau0 + np.pi * cycles)
    lead = base[np.argmax(np.abs(base) > 0.25 * np.abs(base).max())]
    sign = -1.0 if lead < 0 else 1.0
    tau = tau0 + t_shift
    return sign * window(tau) * np.sin(2 * np.pi * f0 * tau + np.pi * cycles)


def burst_center_time(f0: float, cycles: float) -> float:
    """Temporal center of the burst; pulse-echo time zero."""
    return 0.5 * cycles / f0


@dataclass
class SimConfig:
    """Solver configuration; PML layers live outside the stated grid."""

    cfl: float = 0.3
    pml_points: int = 20
    pml_alpha: float = 2.0
    record_rate: float = 20e6
    record_samples: int = 1024
    burst_cycles: float = 2.0
    p0_smooth: bool = True
    dtype: str = "float32"

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class WaveState:
    """Solver fields on the padded domain; owned by one simulation."""

    p: np.ndarray
    ux: np.ndarray
    uz: np.ndarray
    rhox: np.ndarray
    rhoz: np.ndarray
    step: int = 0


def _pml_profile(n_total: int, lo: int, hi: int, dx: float, dt: float,
                 c_ref: float, alpha: float, staggered: bool) -> np.ndarray:
    """exp(-sigma dt/2) with quartic-graded sigma over each boundary layer."""
    sigma = np.zeros(n_total)
    shift = 0.5 if staggered else 0.0
    if lo > 0:
        i = np.arange(lo)
        depth = (lo - i - shift) / lo  # 1 at the outer edge
        sigma[:lo] = alpha * (c_ref / dx) * np.clip(depth, 0, None) ** 4
    if hi > 0:
        i = np.arange(hi)
        depth = (i + 1 + shift) / hi
        sigma[n_total - hi:] = alpha * (c_ref / dx) * depth ** 4
    return np.exp(-sigma * dt / 2.0)


def smooth_field(field_arr: np.ndarray) -> np.ndarray:
    """Blackman-window k-space smoothing with peak amplitude restored."""
    nx, nz = field_arr.shape
    wx = np.blackman(nx + 1)[:nx]
    wz = np.blackman(nz + 1)[:nz]
    win = np.fft.ifftshift(wx)[:, None] * np.fft.ifftshift(wz)[None, :]
    out = np.real(np.fft.ifft2(np.fft.fft2(field_arr) * win))
    peak_in = np.abs(field_arr).max()
    peak_out = np.abs(out).max()
    if peak_out > 0:
        out *= peak_in / peak_out
    return out


class Propagator:
    """Precomputed spectral operators plus the update step for one medium."""

    def __init__(self, medium: Medium, dt: float, cfg: SimConfig):
        grid = medium.grid
        self.medium = medium
        self.dt = dt
        self.cfg = cfg
        dtype = cfg.np_dtype()
        cdtype = np.complex64 if dtype == np.float32 else np.complex128
        dx = grid.dx

        pml = max(0, int(cfg.pml_points))
        if pml > 0:
            nx_tot = sfft.next_fast_len(grid.nx + 2 * pml, real=True)
            nz_tot = sfft.next_fast_len(grid.nz + 2 * pml, real=True)
        else:
            nx_tot, nz_tot = grid.nx, grid.nz
        self.shape = (nx_tot, nz_tot)
        self.pad_x = (pml, nx_tot - grid.nx - pml)
        self.pad_z = (pml, nz_tot - grid.nz - pml)
        self.interior = (slice(pml, pml + grid.nx), slice(pml, pml + grid.nz))

        c = np.pad(medium.sound_speed.astype(np.float64),
                   (self.pad_x, self.pad_z), mode="edge")
        rho = np.pad(medium.density.astype(np.float64),
                     (self.pad_x, self.pad_z), mode="edge")
        c_ref = float(c.max())
        self.c_ref = c_ref
        self.c2 = (c * c).astype(dtype)
        self.inv_2c2 = (0.5 / (c * c)).astype(dtype)
        self.rho0 = rho.astype(dtype)

        # midpoint-averaged densities on the staggered grids (edge clamped)
        rho_sgx = 0.5 * (rho + np.vstack([rho[1:], rho[-1:]]))
        rho_sgz = 0.5 * (rho + np.hstack([rho[:, 1:], rho[:, -1:]]))
        self.dt_rho_sgx = (dt / rho_sgx).astype(dtype)
        self.dt_rho_sgz = (dt / rho_sgz).astype(dtype)

        kx = 2 * np.pi * np.fft.fftfreq(nx_tot, dx)[:, None]
        kz = 2 * np.pi * np.fft.rfftfreq(nz_tot, dx)[None, :]
        k = np.sqrt(kx * kx + kz * kz)
        kappa = np.sinc(c_ref * k * dt / (2 * np.pi))
        self.grad_x = (1j * kx * np.exp(+1j * kx * dx / 2) * kappa).astype(cdtype)
        self.grad_z = (1j * kz * np.exp(+1j * kz * dx / 2) * kappa).astype(cdtype)
        self.div_x = (1j * kx * np.exp(-1j * kx * dx / 2) * kappa).astype(cdtype)
        self.div_z = (1j * kz * np.exp(-1j * kz * dx / 2) * kappa).astype(cdtype)
        # injection correction for time-staircased additive sources
        self._source_kappa = np.cos(c_ref * k * dt / 2)

        self.pml_x = _pml_profile(nx_tot, *self.pad_x, dx, dt, c_ref,
                                  cfg.pml_alpha, False)[:, None].astype(dtype)
        self.pml_x_sg = _pml_profile(nx_tot, *self.pad_x, dx, dt, c_ref,
                                     cfg.pml_alpha, True)[:, None].astype(dtype)
        self.pml_z = _pml_profile(nz_tot, *self.pad_z, dx, dt, c_ref,
                                  cfg.pml_alpha, False)[None, :].astype(dtype)
        self.pml_z_sg = _pml_profile(nz_tot, *self.pad_z, dx, dt, c_ref,
                                     cfg.pml_alpha, True)[None, :].astype(dtype)

        self.absorbing = medium.alpha_coeff > 0
        if self.absorbing:
            if abs(medium.alpha_power - 1.0) > 1e-9:
                raise ValueError("only frequency-linear absorption (y=1) is supported")
            alpha_np = db2neper(medium.alpha_coeff, 1.0)
            self.absorb_tau = -2.0 * alpha_np  # c^(y-1) = 1 for y = 1
            with np.errstate(divide="ignore"):
                nabla1 = np.where(k > 0, 1.0 / k, 0.0)  # k^(y-2), zeroed at DC
            self.absorb_nabla1 = nabla1.astype(dtype)

        self._dtype = dtype
        self._ref_amp = 0.0

    # -- state management ----------------------------------------------------

    def fresh_state(self, p0: Optional[np.ndarray] = None) -> WaveState:
        """Zero state, or a state releasing the given interior p0 field."""
        dtype = self._dtype
        p = np.zeros(self.shape, dtype)
        rhox = np.zeros(self.shape, dtype)
        rhoz = np.zeros(self.shape, dtype)
        if p0 is not None:
            full = np.zeros(self.shape, np.float64)
            full[self.interior] = np.asarray(p0, np.float64)
            if self.cfg.p0_smooth:
                full = smooth_field(full)
            p = full.astype(dtype)
            rhox = (full * self.inv_2c2).astype(dtype)
            rhoz = rhox.copy()
            self._ref_amp = max(self._ref_amp, float(np.abs(p).max()))
        return WaveState(p, np.zeros(self.shape, dtype), np.zeros(self.shape, dtype),
                         rhox, rhoz, step=0)

    def interior_index(self, i: int, j: int) -> Tuple[int, int]:
        return i + self.pad_x[0], j + self.pad_z[0]

    def source_pattern(self, idx: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        """k-space-corrected injection pattern for padded-domain points.

        Correcting the fixed spatial pattern by cos(c_ref |k| dt / 2) once
        removes the dispersion error of staircase source injection.
        """
        pattern = np.zeros(self.shape, np.float64)
        pattern[idx] = 1.0
        # Blackman smoothing rolls the pattern spectrum off to zero at the
        # spatial Nyquist, whose standing component cannot radiate away
        pattern = smooth_field(pattern)
        out = sfft.irfft2(self._source_kappa * sfft.rfft2(pattern), s=self.shape)
        return out.astype(self._dtype)

    # -- stepping ------------------------------------------------------------

    def step(self, st: WaveState,
             source_pattern: Optional[np.ndarray] = None,
             source_value: float = 0.0,
             velocity_pattern: Optional[np.ndarray] = None,
             velocity_value: float = 0.0,
             dirichlet_idx: Optional[Tuple[np.ndarray, np.ndarray]] = None,
             dirichlet_values: Optional[np.ndarray] = None) -> WaveState:
        """Advance one dt; optional additive pressure-rate and z-velocity
        sources (precomputed patterns scaled by the current values) or
        Dirichlet pressure enforcement at padded-domain indices."""
        shape = self.shape
        p_k = sfft.rfft2(st.p)
        dpdx = sfft.irfft2(self.grad_x * p_k, s=shape)
        dpdz = sfft.irfft2(self.grad_z * p_k, s=shape)

        # dt/2 on the very first update realizes u(0)=0 for a p0 release
        scale = 0.5 if st.step == 0 else 1.0
        ux = self.pml_x_sg * (self.pml_x_sg * st.ux - scale * self.dt_rho_sgx * dpdx)
        uz = self.pml_z_sg * (self.pml_z_sg * st.uz - scale * self.dt_rho_sgz * dpdz)

        if velocity_pattern is not None and velocity_value != 0.0:
            uz = uz + (self.dt * velocity_value) * velocity_pattern

        duxdx = sfft.irfft2(self.div_x * sfft.rfft2(ux), s=shape)
        duzdz = sfft.irfft2(self.div_z * sfft.rfft2(uz), s=shape)

        rhox = self.pml_x * (self.pml_x * st.rhox - self.dt * self.rho0 * duxdx)
        rhoz = self.pml_z * (self.pml_z * st.rhoz - self.dt * self.rho0 * duzdz)

        if source_pattern is not None and source_value != 0.0:
            # inject into rhoz alone: only the rhox+rhoz sum is physical, and
            # keeping rhox untouched means the lateral boundary layers (which
            # damp rhox) never see the source, so a full-width transmit line
            # stays exactly laterally invariant
            rhoz += (2.0 * self.dt * source_value) * (source_pattern * self.inv_2c2)

        if self.absorbing:
            du = self.rho0 * (duxdx + duzdz)
            filt = sfft.irfft2(self.absorb_nabla1 * sfft.rfft2(du), s=shape)
            p = self.c2 * (rhox + rhoz + self.absorb_tau * filt)
        else:
            p = self.c2 * (rhox + rhoz)

        if dirichlet_idx is not None:
            vals = np.asarray(dirichlet_values, self._dtype)
            p[dirichlet_idx] = vals
            half = vals * self.inv_2c2[dirichlet_idx]
            rhox[dirichlet_idx] = half
            rhoz[dirichlet_idx] = half

        self._check_divergence(p, source_value)
        return WaveState(p, ux, uz, rhox, rhoz, st.step + 1)

    def register_reference(self, amplitude: float) -> None:
        """Declare the driving amplitude scale for the divergence guard
        when fields are imposed directly rather than via sources."""
        self._ref_amp = max(self._ref_amp, abs(float(amplitude)))

    def _check_divergence(self, p: np.ndarray, source_value: float) -> None:
        peak = float(np.abs(p).max())
        if source_value:
            self._ref_amp = max(self._ref_amp, abs(source_value) * self.dt)
        if not np.isfinite(peak):
            raise Diverged("non-finite pressure field")
        if self._ref_amp > 0 and peak > 1e6 * self._ref_amp:
            raise Diverged(f"pressure {peak:.3e} exceeds 1e6 x reference amplitude")

    # -- diagnostics ----------------------------------------------------------

    def energy(self, st: WaveState, region: str = "full") -> float:
        """Discrete acoustic energy sum((p^2/(rho c^2) + rho |u|^2)) dx^2."""
        sl = self.interior if region == "interior" else (slice(None), slice(None))
        p = st.p[sl].astype(np.float64)
        ux = st.ux[sl].astype(np.float64)
        uz = st.uz[sl].astype(np.float64)
        rho = self.rho0[sl].astype(np.float64)
        c2 = self.c2[sl].astype(np.float64)
        e = (p * p / (rho * c2) + rho * (ux * ux + uz * uz)).sum()
        return float(e * self.medium.grid.dx ** 2)

    def energy_centered(self, prev: WaveState, cur: WaveState,
                        region: str = "full") -> float:
        """Energy with velocity averaged across the two states bracketing
        prev.p: a state holds p at step k but u at k-1/2, so averaging the
        consecutive velocities re-centers u onto prev's pressure sample."""
        sl = self.interior if region == "interior" else (slice(None), slice(None))
        p = prev.p[sl].astype(np.float64)
        ux = 0.5 * (prev.ux[sl].astype(np.float64) + cur.ux[sl].astype(np.float64))
        uz = 0.5 * (prev.uz[sl].astype(np.float64) + cur.uz[sl].astype(np.float64))
        rho = self.rho0[sl].astype(np.float64)
        c2 = self.c2[sl].astype(np.float64)
        e = (p * p / (rho * c2) + rho * (ux * ux + uz * uz)).sum()
        return float(e * self.medium.grid.dx ** 2)


# -- acquisition drivers -----------------------------------------------------

def _recorder(prop: Propagator, array: TransducerArray):
    """Returns (padded element column indices, padded face row)."""
    cols = array.element_columns(prop.medium.grid)
    return cols + prop.pad_x[0], array.face_row + prop.pad_z[0]


def simulate_plane_wave(medium: Medium, array: TransducerArray,
                        cfg: SimConfig) -> RFFrame:
    """Plane-wave pulse-echo acquisition: every element fires the tone burst
    simultaneously at 0 degrees and records the returning field.

    Recording time zero sits at the burst's temporal center, so a scatterer
    at depth d peaks at sample round(2 d / c * record_rate).
    """
    array.validate_against(medium.grid)
    dt = stability_dt(medium, cfg.cfl, cfg.record_rate)
    n_sub = int(round(1.0 / (cfg.record_rate * dt)))
    prop = Propagator(medium, dt, cfg)

    f0 = array.center_frequency
    burst = _burst_samples(f0, cfg.burst_cycles, 1.0 / dt, "gaussian")
    start_step = int(round(burst_center_time(f0, cfg.burst_cycles) / dt))
    total_steps = start_step + (cfg.record_samples - 1) * n_sub

    cols, row = _recorder(prop, array)
    # the transmit line spans the full padded width (under the side layers
    # too): the wavefront stays laterally invariant, so no aperture-edge
    # waves contaminate the receive channels
    src_cols = np.arange(prop.shape[0])
    pattern = prop.source_pattern((src_cols, np.full(src_cols.size, row)))

    # pair the pressure-rate line with a matched z-velocity line (a one-way
    # radiator, like a damped-backing probe face): the velocity stream is the
    # same burst at the staggered half-step, half-cell offsets, scaled by the
    # local 1/(rho c), so the upward halves cancel and nothing radiates into
    # the layer behind the face
    c_map = np.sqrt(prop.c2)
    c_face = float(c_map[:, row].mean())
    burst_u = _burst_samples(f0, cfg.burst_cycles, 1.0 / dt, "gaussian",
                             t_shift=0.5 * dt - 0.5 * medium.grid.dx / c_face)
    rho_sgz = dt / prop.dt_rho_sgz
    vel_pattern = (pattern / (rho_sgz * c_map)).astype(pattern.dtype)

    data = np.zeros((array.n_elements, cfg.record_samples), np.float32)
    st = prop.fresh_state()
    if start_step == 0:
        data[:, 0] = st.p[cols, row].mean(axis=1)
    for step in range(total_steps):
        value = float(burst[step]) if step < len(burst) else 0.0
        value_u = float(burst_u[step]) if step < len(burst_u) else 0.0
        st = prop.step(st, source_pattern=pattern, source_value=value,
                       velocity_pattern=vel_pattern, velocity_value=value_u)
        rel = st.step - start_step
        if rel >= 0 and rel % n_sub == 0:
            data[:, rel // n_sub] = st.p[cols, row].mean(axis=1)

    meta = {"dt": dt, "n_sub": n_sub, "mode": "plane_wave",
            "f0": array.center_frequency, "burst_cycles": cfg.burst_cycles,
            "element_x": array.element_centers_x(medium.grid).tolist(),
            "pitch": array.pitch}
    return RFFrame(data, cfg.record_rate, t0=0.0, meta=meta)


def simulate_pa(medium: Medium, array: TransducerArray, p0: Image2D,
                cfg: SimConfig) -> RFFrame:
    """Photoacoustic acquisition: release initial pressure p0 at t=0 and
    record the outgoing field at the array."""
    array.validate_against(medium.grid)
    if p0.grid != medium.grid:
        raise GridMismatch("p0 grid differs from medium grid")
    if not np.any(p0.values):
        raise EmptySource("initial pressure field is all zero")
    dt = stability_dt(medium, cfg.cfl, cfg.record_rate)
    n_sub = int(round(1.0 / (cfg.record_rate * dt)))
    prop = Propagator(medium, dt, cfg)

    cols, row = _recorder(prop, array)
    data = np.zeros((array.n_elements, cfg.record_samples), np.float32)
    st = prop.fresh_state(p0=p0.values)
    data[:, 0] = st.p[cols, row].mean(axis=1)
    for step in range((cfg.record_samples - 1) * n_sub):
        st = prop.step(st)
        if st.step % n_sub == 0:
            data[:, st.step // n_sub] = st.p[cols, row].mean(axis=1)

    meta = {"dt": dt, "n_sub": n_sub, "mode": "photoacoustic",
            "f0": array.center_frequency,
            "element_x": array.element_centers_x(medium.grid).tolist(),
            "pitch": array.pitch}
    return RFFrame(data, cfg.record_rate, t0=0.0, meta=meta)


def desk_sim_config(**overrides) -> SimConfig:
    """Small, fast configuration for tests and local runs."""
    base = SimConfig(record_samples=512)
    return replace(base, **overrides)
