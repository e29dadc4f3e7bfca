"""RF channel-data post-processing.

The acquisition chain applies, in order: time-gain compensation, per-channel
normalization, thermal noise, system noise. Reconstruction additionally
upsamples frames (channel axis x5, time axis x4) before time reversal.
Every operation returns a new frame; inputs are never mutated.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .core import RFFrame
from .errors import EmptyBank, NegativeAlpha, ShapeMismatch, TooShort

SYSTEM_NOISE_SAMPLES = 50


@dataclass(frozen=True)
class NoiseConfig:
    """Noise-injection settings for dataset generation.

    thermal_snr_db_range: per-record SNR draw bounds, noise relative to the
    unit-variance normalized signal in dB (so -80 dB means noise std 1e-4).
    system_noise_templates: optional bank shaped (n_templates, channels, 50);
    when absent a synthetic bank substitutes.
    """

    thermal_snr_db_range: Tuple[float, float] = (-80.0, -40.0)
    system_noise_templates: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.thermal_snr_db_range
        if not (lo <= hi):
            raise ValueError(f"snr range low must be <= high, got [{lo}, {hi}]")
        if self.system_noise_templates is not None:
            bank = np.asarray(self.system_noise_templates, dtype=np.float32)
            if bank.ndim != 3 or bank.shape[2] != SYSTEM_NOISE_SAMPLES:
                raise ShapeMismatch(
                    f"template bank must be (n, channels, {SYSTEM_NOISE_SAMPLES}), "
                    f"got {bank.shape}")
            if not np.all(np.isfinite(bank)):
                raise ValueError("noise templates must be finite")
            object.__setattr__(self, "system_noise_templates", bank)


def tgc_gain(t, alpha_db_mhz_cm: float = 0.5, f0: float = 7e6,
             c_ref: float = 1540.0):
    """Linear amplitude gain compensating two-way attenuation at echo time t.

    Round-trip attenuation for an echo arriving at t is alpha * f0[MHz] *
    round-trip path, i.e. alpha * f0 * 2 * depth with depth = c_ref*t/2,
    so the gain in dB is alpha * f0[MHz] * c_ref * t / 2 expressed per cm.
    """
    if alpha_db_mhz_cm < 0:
        raise NegativeAlpha(f"alpha must be >= 0, got {alpha_db_mhz_cm}")
    g_db = alpha_db_mhz_cm * (f0 * 1e-6) * (c_ref * np.asarray(t) / 2.0) * 100.0
    return 10.0 ** (g_db / 20.0)


def apply_tgc(rf: RFFrame, alpha_db_mhz_cm: float = 0.5, f0: float = 7e6,
              c_ref: float = 1540.0) -> RFFrame:
    """Amplify each sample by the depth-dependent gain at its record time."""
    t = rf.t0 + np.arange(rf.n_samples) / rf.sampling_rate
    gain = tgc_gain(t, alpha_db_mhz_cm, f0, c_ref)
    out = rf.data.astype(np.float64) * gain[None, :]
    return rf.with_data(out.astype(np.float32),
                        tgc_db_per_mhz_cm=alpha_db_mhz_cm)


def normalize_channels(rf: RFFrame) -> RFFrame:
    """Shift/scale every channel to mean 0, population std 1.

    Constant channels cannot be scaled; they map to all zeros and their
    indices are recorded under meta["constant_channels"].
    """
    data = rf.data.astype(np.float64)
    constant = np.ptp(data, axis=1) == 0.0
    mu = data.mean(axis=1, keepdims=True)
    sd = data.std(axis=1, keepdims=True)
    sd[constant] = 1.0
    out = (data - mu) / sd
    out[constant] = 0.0
    return rf.with_data(out.astype(np.float32),
                        constant_channels=np.flatnonzero(constant).tolist())


def _channel_rng(seed: int, channel: np.ndarray) -> np.random.Generator:
    # stream keyed by (seed, channel content) rather than channel index:
    # noise then depends only on the channel itself, so the operation
    # commutes exactly with any permutation of the channels
    digest = hashlib.blake2b(channel.tobytes(), digest_size=8).digest()
    key = int.from_bytes(digest, "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def add_thermal_noise(rf: RFFrame, snr_db: float, seed: int) -> RFFrame:
    """Add white Gaussian noise at snr_db relative to each channel's power.

    Noise power is P_s * 10^(snr_db/10) with P_s the channel mean square, so
    on normalized (unit-variance) channels -80 dB means noise std 1e-4.
    snr_db = -inf disables the operation. Deterministic for a fixed seed.
    """
    if snr_db == -np.inf:
        return rf
    data = rf.data.astype(np.float64)
    scale = 10.0 ** (snr_db / 20.0)
    for i in range(rf.n_channels):
        rms = np.sqrt((data[i] ** 2).mean())
        if rms == 0.0:
            continue
        rng = _channel_rng(seed, rf.data[i])
        data[i] += (rms * scale) * rng.standard_normal(rf.n_samples)
    return rf.with_data(data.astype(np.float32), thermal_snr_db=snr_db)


def harvest_system_noise(rf: RFFrame) -> np.ndarray:
    """Extract the leading pre-echo samples of every channel as a template."""
    if rf.n_samples < SYSTEM_NOISE_SAMPLES:
        raise TooShort(
            f"need >= {SYSTEM_NOISE_SAMPLES} samples, got {rf.n_samples}")
    return rf.data[:, :SYSTEM_NOISE_SAMPLES].copy()


def synthetic_noise_bank(n_channels: int, f0: float, fs: float,
                         n_templates: int = 16, amplitude: float = 0.05,
                         seed: int = 0) -> np.ndarray:
    """Stand-in template bank: narrowband bursts at f0 in the leading samples.

    Each template gives every channel a windowed tone at the transmit
    frequency with per-channel random amplitude and phase, imitating
    transmission interference leaking into the early record.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(SYSTEM_NOISE_SAMPLES) / fs
    window = np.hanning(SYSTEM_NOISE_SAMPLES)
    amp = amplitude * rng.uniform(0.5, 1.0, (n_templates, n_channels, 1))
    phase = rng.uniform(0.0, 2.0 * np.pi, (n_templates, n_channels, 1))
    burst = np.sin(2.0 * np.pi * f0 * t[None, None, :] + phase)
    return (amp * window[None, None, :] * burst).astype(np.float32)


def add_system_noise(rf: RFFrame, templates: np.ndarray, seed: int) -> RFFrame:
    """Add one seeded template from the bank onto each channel's first samples.

    Samples at and beyond index 50 are untouched.
    """
    bank = np.asarray(templates, dtype=np.float32)
    if bank.ndim == 2:
        bank = bank[None]
    if bank.size == 0:
        raise EmptyBank("template bank is empty")
    if bank.ndim != 3 or bank.shape[2] != SYSTEM_NOISE_SAMPLES:
        raise ShapeMismatch(
            f"template bank must be (n, channels, {SYSTEM_NOISE_SAMPLES}), "
            f"got {bank.shape}")
    if bank.shape[1] != rf.n_channels:
        raise ShapeMismatch(
            f"template has {bank.shape[1]} channels, frame has {rf.n_channels}")
    if rf.n_samples < SYSTEM_NOISE_SAMPLES:
        raise TooShort(
            f"need >= {SYSTEM_NOISE_SAMPLES} samples, got {rf.n_samples}")
    idx = int(np.random.default_rng(seed).integers(bank.shape[0]))
    data = rf.data.copy()
    data[:, :SYSTEM_NOISE_SAMPLES] += bank[idx]
    return rf.with_data(data, system_noise_index=idx)


def upsample_bilinear(a: np.ndarray, channel_factor: int,
                      time_factor: int) -> np.ndarray:
    """Bilinear upsampling with originals preserved at (cf*i, tf*j).

    Output position (i, j) samples input coordinate (i/cf, j/tf); coordinates
    past the last input sample clamp to it (edge replication), which keeps
    the output bounded by the input min/max.
    """
    a = np.asarray(a, dtype=np.float64)
    n_c, n_t = a.shape
    xc = np.minimum(np.arange(n_c * channel_factor) / channel_factor, n_c - 1.0)
    xt = np.minimum(np.arange(n_t * time_factor) / time_factor, n_t - 1.0)
    i0 = np.floor(xc).astype(np.intp)
    j0 = np.floor(xt).astype(np.intp)
    fi = (xc - i0)[:, None]
    fj = (xt - j0)[None, :]
    i1 = np.minimum(i0 + 1, n_c - 1)
    j1 = np.minimum(j0 + 1, n_t - 1)
    top = a[np.ix_(i0, j0)] * (1.0 - fj) + a[np.ix_(i0, j1)] * fj
    bot = a[np.ix_(i1, j0)] * (1.0 - fj) + a[np.ix_(i1, j1)] * fj
    return (top * (1.0 - fi) + bot * fi).astype(np.float32)


def upsample_rf(rf: Union[RFFrame, np.ndarray]) -> np.ndarray:
    """Upsample a 128x1024 frame to the 640x4096 reconstruction layout."""
    data = rf.data if isinstance(rf, RFFrame) else np.asarray(rf)
    if data.shape != (128, 1024):
        raise ShapeMismatch(f"expected a 128x1024 frame, got {data.shape}")
    return upsample_bilinear(data, 5, 4)
