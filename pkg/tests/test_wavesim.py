"""Wave solver tests: tone burst, time stepping, boundary layers, and the
plane-wave / photoacoustic acquisition drivers.

Travel-time oracles are analytic (distance over sound speed at the record
rate); energy bookkeeping uses the time-centered functional because velocity
lives on half steps.
"""

import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from pauslab.core import (
    Grid2D,
    Image2D,
    Medium,
    TransducerArray,
    uniform_medium,
)
from pauslab.errors import Diverged, EmptySource, GridMismatch, InvalidCycles
from pauslab.wavesim import (
    Propagator,
    SimConfig,
    burst_center_time,
    db2neper,
    desk_sim_config,
    simulate_pa,
    simulate_plane_wave,
    stability_dt,
    tone_burst,
)


def _gaussian_blob(n: int, sigma_cells: float) -> np.ndarray:
    x = (np.arange(n) - n / 2.0)[:, None]
    z = (np.arange(n) - n / 2.0)[None, :]
    return np.exp(-(x * x + z * z) / (2.0 * sigma_cells ** 2)).astype(np.float32)


def _envelope_peak(trace: np.ndarray, skip: int) -> int:
    padded = np.concatenate([trace.astype(np.float64), np.zeros(trace.size // 2)])
    env = np.abs(scipy.signal.hilbert(padded))[: trace.size]
    return skip + int(np.argmax(env[skip:]))


class TestToneBurst:
    def test_sample_count(self):
        # round(cycles / f0 * fs) = round(2 / 7e6 * 220e6) = 63
        assert tone_burst(7e6, 2, 220e6).size == 63

    def test_zero_mean(self):
        burst = tone_burst(3e6, 2, 60e6).astype(np.float64)
        assert abs(burst.sum()) < 1e-6 * np.abs(burst).max()

    def test_spectral_peak_at_carrier(self):
        fs = 240e6
        burst = tone_burst(3e6, 2, fs).astype(np.float64)
        n = 1 << 14
        spec = np.abs(np.fft.rfft(burst, n))
        freqs = np.fft.rfftfreq(n, 1.0 / fs)
        peak = freqs[int(spec.argmax())]
        assert abs(peak - 3e6) < 0.35e6

    def test_leading_lobe_positive(self):
        burst = tone_burst(5e6, 3, 100e6)
        lead = burst[np.argmax(np.abs(burst) > 0.25 * np.abs(burst).max())]
        assert lead > 0

    def test_rejects_sub_cycle(self):
        with pytest.raises(InvalidCycles):
            tone_burst(5e6, 0.5, 100e6)
        with pytest.raises(InvalidCycles):
            tone_burst(-5e6, 2, 100e6)

    def test_hann_endpoints_vanish(self):
        burst = tone_burst(5e6, 2, 100e6, envelope="hann")
        assert abs(burst[0]) < 1e-3 * np.abs(burst).max()
        assert abs(burst[-1]) < 1e-3 * np.abs(burst).max()

    @given(
        f0=st.floats(1e6, 10e6),
        cycles=st.floats(1, 8),
        fs_mult=st.floats(4, 40),
    )
    @settings(max_examples=40, deadline=None)
    def test_length_and_bound(self, f0, cycles, fs_mult):
        fs = f0 * fs_mult
        burst = tone_burst(f0, cycles, fs)
        assert burst.size == int(round(cycles / f0 * fs))
        assert np.abs(burst).max() <= 1.0 + 1e-6


class TestStabilityDt:
    def test_raw_step(self):
        grid = Grid2D(64, 64, 0.025e-3)
        med = uniform_medium(grid, 1600.0, 1020.0)
        assert stability_dt(med, cfl=0.3) == pytest.approx(4.6875e-9, rel=1e-12)

    def test_record_aligned_step(self):
        # raw 4.6875 ns does not divide the 50 ns record period; the aligned
        # step is 50/11 ns so eleven sub-steps land exactly on each sample
        grid = Grid2D(64, 64, 0.025e-3)
        med = uniform_medium(grid, 1600.0, 1020.0)
        dt = stability_dt(med, cfl=0.3, record_rate=20e6)
        assert dt == pytest.approx(50e-9 / 11.0, rel=1e-12)
        n_sub = (1.0 / 20e6) / dt
        assert abs(n_sub - round(n_sub)) < 1e-9

    def test_aligned_never_exceeds_raw(self):
        grid = Grid2D(64, 64, 0.1e-3)
        med = uniform_medium(grid, 1540.0, 1020.0)
        raw = stability_dt(med, cfl=0.3)
        aligned = stability_dt(med, cfl=0.3, record_rate=20e6)
        assert aligned <= raw + 1e-18
        assert aligned == pytest.approx(50e-9 / 3.0, rel=1e-12)

    @given(c=st.floats(1400, 1650), dx_um=st.floats(20, 200))
    @settings(max_examples=40, deadline=None)
    def test_alignment_divides_record_period(self, c, dx_um):
        grid = Grid2D(32, 32, dx_um * 1e-6)
        med = uniform_medium(grid, c, 1000.0)
        dt = stability_dt(med, cfl=0.3, record_rate=20e6)
        ratio = (1.0 / 20e6) / dt
        assert abs(ratio - round(ratio)) < 1e-6
        assert dt <= stability_dt(med, cfl=0.3) * (1 + 1e-12)


class TestAbsorptionCoefficient:
    def test_db_to_neper_power_one(self):
        # 100 * 0.5 * (1e-6 / 2pi) / (20 log10 e) at y = 1
        expected = 100 * 0.5 * (1e-6 / (2 * np.pi)) / (20 * np.log10(np.e))
        assert db2neper(0.5, 1.0) == pytest.approx(expected, rel=1e-12)

    def test_zero_alpha_round_trip(self):
        assert db2neper(0.0, 1.0) == 0.0


class TestPropagatorBasics:
    def test_zero_state_stays_zero(self):
        grid = Grid2D(64, 64, 0.1e-3)
        med = uniform_medium(grid, 1540.0, 1020.0)
        prop = Propagator(med, stability_dt(med, 0.3), SimConfig(pml_points=10))
        st_ = prop.fresh_state()
        for _ in range(50):
            st_ = prop.step(st_)
        assert not np.any(st_.p)
        assert not np.any(st_.ux)

    def test_nonfinite_state_raises(self):
        grid = Grid2D(64, 64, 0.1e-3)
        med = uniform_medium(grid, 1540.0, 1020.0)
        prop = Propagator(med, stability_dt(med, 0.3), SimConfig(pml_points=0))
        st_ = prop.fresh_state(_gaussian_blob(64, 4.0))
        st_.p[10, 10] = np.nan
        with pytest.raises(Diverged):
            prop.step(st_)

    def test_amplitude_blowup_raises(self):
        grid = Grid2D(64, 64, 0.1e-3)
        med = uniform_medium(grid, 1540.0, 1020.0)
        prop = Propagator(med, stability_dt(med, 0.3), SimConfig(pml_points=0))
        st_ = prop.fresh_state(_gaussian_blob(64, 4.0))
        st_.rhox *= 1e8
        st_.rhoz *= 1e8
        with pytest.raises(Diverged):
            prop.step(st_)

    def test_p0_forbids_absorption_power_other_than_one(self):
        grid = Grid2D(64, 64, 0.1e-3)
        med = Medium(grid, np.full((64, 64), 1540.0), np.full((64, 64), 1020.0),
                     alpha_coeff=0.5, alpha_power=1.5)
        with pytest.raises(ValueError):
            Propagator(med, stability_dt(med, 0.3), SimConfig())


class TestEnergy:
    def test_conservation_without_boundary_layers(self):
        grid = Grid2D(128, 128, 0.1e-3)
        med = uniform_medium(grid, 1540.0, 1020.0)
        cfg = SimConfig(pml_points=0)
        prop = Propagator(med, stability_dt(med, cfg.cfl), cfg)
        st_ = prop.fresh_state(_gaussian_blob(128, 4.0))
        e0 = None
        worst = 0.0
        for _ in range(500):
            nxt = prop.step(st_)
            e = prop.energy_centered(st_, nxt)
            if e0 is None:
                e0 = e
            worst = max(worst, abs(e - e0) / e0)
            st_ = nxt
        assert worst <= 0.01

    def test_boundary_layer_absorbs_pulse(self):
        grid = Grid2D(128, 128, 0.1e-3)
        med = uniform_medium(grid, 1540.0, 1020.0)
        cfg = SimConfig(pml_points=20, pml_alpha=2.0)
        prop = Propagator(med, stability_dt(med, cfg.cfl), cfg)
        st_ = prop.fresh_state(_gaussian_blob(128, 4.0))
        energies = []
        for _ in range(700):
            nxt = prop.step(st_)
            energies.append(prop.energy_centered(st_, nxt, region="interior"))
            st_ = nxt
        energies = np.array(energies)
        peak = energies.max()
        assert energies[-1] <= 0.01 * peak
        # once the wavefront is fully outbound the interior only loses energy
        post = energies[350:]
        assert np.diff(post).max() <= 1e-6 * peak


class TestReciprocity:
    def test_swap_source_and_receiver(self):
        grid = Grid2D(128, 128, 0.1e-3)
        ramp = 1450.0 + 150.0 * (np.arange(128) / 127.0)
        med = Medium(grid, np.broadcast_to(ramp, (128, 128)).copy(),
                     np.full((128, 128), 1020.0))
        cfg = SimConfig(pml_points=20)
        dt = stability_dt(med, 0.3)

        def arrival(src, rec):
            prop = Propagator(med, dt, cfg)
            p0 = np.zeros((128, 128), np.float32)
            p0[src] = 1.0
            st_ = prop.fresh_state(p0)
            px, pz = prop.pad_x[0], prop.pad_z[0]
            trace = np.empty(600)
            for k in range(600):
                st_ = prop.step(st_)
                trace[k] = st_.p[rec[0] + px, rec[1] + pz]
            return int(np.abs(trace).argmax())

        a = arrival((32, 40), (96, 80))
        b = arrival((96, 80), (32, 40))
        assert abs(a - b) <= 1


@pytest.fixture(scope="module")
def desk_array():
    return TransducerArray(n_elements=64, pitch=0.4e-3, center_frequency=3e6,
                           element_points=3, kerf_points=1)


@pytest.fixture(scope="module")
def quiet_rf(desk_array):
    grid = Grid2D(256, 256, 0.1e-3)
    med = uniform_medium(grid, 1540.0, 1020.0)
    return simulate_plane_wave(med, desk_array, desk_sim_config())


@pytest.fixture(scope="module")
def echo_rf(desk_array):
    grid = Grid2D(256, 256, 0.1e-3)
    med0 = uniform_medium(grid, 1500.0, 1020.0)
    rho = med0.density.copy()
    rho[grid.nx // 2, int(round(10e-3 / grid.dx))] *= 1.5
    med = Medium(grid, med0.sound_speed, rho)
    return simulate_plane_wave(med, desk_array, desk_sim_config())


class TestPlaneWave:
    def test_homogeneous_field_is_quiet(self, quiet_rf):
        # no reflectors: after the transmit window every channel is silent
        d = quiet_rf.data.astype(np.float64)
        peak = np.abs(d).max()
        per_channel = np.sqrt((d[:, 50:] ** 2).mean(axis=1))
        assert per_channel.max() <= 1e-4 * peak

    def test_echo_sample_matches_travel_time(self, echo_rf, desk_array):
        # two-way 2 * 10 mm / 1500 at 20 MHz -> sample 267
        grid = Grid2D(256, 256, 0.1e-3)
        centers = desk_array.element_centers_x(grid)
        ch = int(np.argmin(np.abs(centers - grid.x_coords()[grid.nx // 2])))
        peak = _envelope_peak(echo_rf.data[ch], skip=50)
        assert abs(peak - 267) <= 3

    def test_dense_scatterer_preserves_transmit_polarity(self, desk_array):
        # +5% density raises impedance, so the reflection coefficient is
        # positive and the echo leads with the transmit's sign
        grid = Grid2D(256, 256, 0.1e-3)
        med0 = uniform_medium(grid, 1500.0, 1020.0)
        rho = med0.density.copy()
        i0 = grid.nx // 2
        j0 = int(round(10e-3 / grid.dx))
        rho[i0 - 4:i0 + 5, j0 - 4:j0 + 5] *= 1.05
        med = Medium(grid, med0.sound_speed, rho)
        rf = simulate_plane_wave(med, desk_array, desk_sim_config())
        centers = desk_array.element_centers_x(grid)
        ch = int(np.argmin(np.abs(centers - grid.x_coords()[i0])))
        trace = rf.data[ch].astype(np.float64)

        def leading_sign(seg):
            idx = int(np.argmax(np.abs(seg) > 0.25 * np.abs(seg).max()))
            return np.sign(seg[idx])

        peak = _envelope_peak(trace, skip=50)
        echo = trace[max(peak - 20, 50):peak + 20]
        assert leading_sign(echo) == leading_sign(trace[:50])

    def test_arrival_converges_under_grid_refinement(self):
        def echo_arrival(n, dx):
            grid = Grid2D(n, n, dx)
            med0 = uniform_medium(grid, 1500.0, 1020.0)
            rho = med0.density.copy()
            xg, zg = np.meshgrid(grid.x_coords(), grid.z_coords(), indexing="ij")
            cx = grid.x_coords()[n // 2]
            rho[(xg - cx) ** 2 + (zg - 10e-3) ** 2 <= (0.3e-3) ** 2] *= 1.3
            med = Medium(grid, med0.sound_speed, rho)
            per_pitch = int(round(0.4e-3 / dx))
            arr = TransducerArray(32, 0.4e-3, 3e6, per_pitch - 1, 1)
            rf = simulate_plane_wave(med, arr, desk_sim_config(record_samples=400))
            centers = arr.element_centers_x(grid)
            ch = int(np.argmin(np.abs(centers - cx)))
            return _envelope_peak(rf.data[ch], skip=50)

        coarse = echo_arrival(128, 0.2e-3)
        fine = echo_arrival(256, 0.1e-3)
        assert abs(coarse - fine) <= 1

    def test_frame_metadata(self, quiet_rf):
        assert quiet_rf.sampling_rate == 20e6
        assert quiet_rf.t0 == 0.0
        assert quiet_rf.meta["mode"] == "plane_wave"
        assert quiet_rf.data.shape == (64, 512)
        assert quiet_rf.data.dtype == np.float32

    def test_array_must_fit_grid(self, desk_array):
        grid = Grid2D(64, 64, 0.1e-3)
        med = uniform_medium(grid, 1540.0, 1020.0)
        with pytest.raises(Exception):
            simulate_plane_wave(med, desk_array, desk_sim_config())


class TestPhotoacoustic:
    def test_two_sources_arrive_in_depth_order(self, desk_array):
        grid = Grid2D(256, 256, 0.1e-3)
        med = uniform_medium(grid, 1500.0, 1020.0)
        i0 = grid.nx // 2
        p0 = np.zeros((256, 256), np.float32)
        p0[i0, int(round(10e-3 / grid.dx))] = 1.0
        p0[i0, int(round(20e-3 / grid.dx))] = 1.0
        rf = simulate_pa(med, desk_array, Image2D(p0, grid, "initial_pressure"),
                         desk_sim_config())
        centers = desk_array.element_centers_x(grid)
        ch = int(np.argmin(np.abs(centers - grid.x_coords()[i0])))
        padded = np.concatenate([rf.data[ch].astype(np.float64), np.zeros(256)])
        env = np.abs(scipy.signal.hilbert(padded))[:512]
        peaks = scipy.signal.find_peaks(env, height=0.3 * env.max(), distance=40)[0]
        assert len(peaks) == 2
        assert abs(peaks[0] - 133) <= 3
        assert abs(peaks[1] - 267) <= 3

    def test_rejects_foreign_grid(self, desk_array):
        grid = Grid2D(256, 256, 0.1e-3)
        other = Grid2D(256, 256, 0.2e-3)
        med = uniform_medium(grid, 1500.0, 1020.0)
        p0 = Image2D(np.ones((256, 256), np.float32), other, "initial_pressure")
        with pytest.raises(GridMismatch):
            simulate_pa(med, desk_array, p0, desk_sim_config())

    def test_rejects_empty_source(self, desk_array):
        grid = Grid2D(256, 256, 0.1e-3)
        med = uniform_medium(grid, 1500.0, 1020.0)
        p0 = Image2D(np.zeros((256, 256), np.float32), grid, "initial_pressure")
        with pytest.raises(EmptySource):
            simulate_pa(med, desk_array, p0, desk_sim_config())

    def test_burst_center_time(self):
        assert burst_center_time(3e6, 2.0) == pytest.approx(1.0 / 3e6, rel=1e-12)
