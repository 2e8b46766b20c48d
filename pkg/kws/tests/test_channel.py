"""
Tests for the Watterson fading channel and AWGN injection.
"""

import math

import numpy as np
import scipy.signal
from django.test import SimpleTestCase

from kws.channel import (
    ChannelConfig,
    SnrSpec,
    add_awgn,
    doppler_filter,
    measure_snr_db,
    rng_for,
    signal_power,
    simulate,
    snr_grid,
    tap_gains,
    watterson,
)
from kws.exceptions import DegenerateInputError, ParameterError
from kws.tensorio import AudioBuffer


def sine(seconds=10.0, amplitude=0.01, freq=440.0, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), rate)


class SnrTestCase(SimpleTestCase):
    """SNR bookkeeping and AWGN calibration."""

    def test_grid_has_fifteen_points(self):
        grid = snr_grid()
        self.assertEqual(len(grid), 15)
        self.assertEqual(grid[0].snr_db, -12.0)
        self.assertEqual(grid[-1].snr_db, 30.0)
        self.assertEqual([s.tag for s in grid[:2]], ['snr-12', 'snr-9'])

    def test_clean_snr(self):
        clean = SnrSpec.clean()
        self.assertTrue(clean.is_clean)
        self.assertEqual(clean.tag, 'clean')
        with self.assertRaises(ParameterError):
            SnrSpec(float('nan'))

    def test_awgn_hits_every_grid_snr(self):
        audio = sine()
        for snr in snr_grid():
            noisy = add_awgn(audio, snr, seed=7, file_id='tone')
            self.assertEqual(noisy.clipped, 0)
            self.assertAlmostEqual(measure_snr_db(audio, noisy), snr.snr_db, delta=0.1)

    def test_clean_returns_input(self):
        audio = sine(seconds=1.0)
        self.assertIs(add_awgn(audio, SnrSpec.clean(), seed=0), audio)

    def test_silent_input_is_degenerate(self):
        with self.assertRaises(DegenerateInputError):
            add_awgn(AudioBuffer(np.zeros(1000), 16000), 10.0, seed=0)

    def test_clipping_is_counted(self):
        loud = sine(seconds=1.0, amplitude=1.0)
        with self.assertLogs('kws.channel', level='WARNING'):
            noisy = add_awgn(loud, -6.0, seed=0, file_id='loud')
        self.assertGreater(noisy.clipped, 0)
        self.assertLessEqual(float(np.max(np.abs(noisy.samples))), 1.0)

    def test_noise_depends_on_file_id_not_order(self):
        audio = sine(seconds=1.0)
        first = add_awgn(audio, 0.0, seed=3, file_id='a')
        add_awgn(audio, 0.0, seed=3, file_id='b')
        again = add_awgn(audio, 0.0, seed=3, file_id='a')
        np.testing.assert_array_equal(first.samples, again.samples)
        other = add_awgn(audio, 0.0, seed=3, file_id='b')
        self.assertFalse(np.array_equal(first.samples, other.samples))


class FadingTestCase(SimpleTestCase):
    """Tap gain statistics and the Watterson channel."""

    def test_config_validation(self):
        with self.assertRaises(ParameterError):
            ChannelConfig(doppler_spread_hz=0.0)
        with self.assertRaises(ParameterError):
            ChannelConfig(differential_delay_seconds=-0.001)
        with self.assertRaises(ParameterError):
            ChannelConfig(num_paths=0)

    def test_doppler_filter_has_unit_energy(self):
        h = doppler_filter(0.5, 50.0)
        self.assertAlmostEqual(float(np.sum(h ** 2)), 1.0, places=12)
        self.assertIsNone(doppler_filter(1e-6, 50.0))

    def test_tap_autocorrelation_matches_gaussian_doppler(self):
        # Autocorrelation exp(-2 pi^2 sigma_f^2 tau^2) halves near 0.75 s for a 0.5 Hz spread
        cfg = ChannelConfig(doppler_spread_hz=0.5, num_paths=2)
        rate = 50.0
        sigma_f = cfg.doppler_spread_hz / 2.0
        expected = math.sqrt(math.log(2.0) / 2.0) / (math.pi * sigma_f)

        lags = np.arange(0, 100)
        acc = np.zeros(len(lags))
        for seed in range(20):
            gains = tap_gains(3000, rate, cfg, rng_for(seed, 'taps'), tap_rate_hz=rate)
            for g in gains:
                g = g - g.mean()
                acc += np.array([np.real(np.vdot(g[:len(g) - k], g[k:])) / (len(g) - k) for k in lags])
        acc /= acc[0]
        half = int(np.argmax(acc < 0.5))
        # Linear interpolation between the lags around the crossing
        crossing = (half - 1 + (acc[half - 1] - 0.5) / (acc[half - 1] - acc[half])) / rate
        self.assertAlmostEqual(crossing, expected, delta=0.1 * expected)

    def test_tap_power_splits_across_paths(self):
        cfg = ChannelConfig(num_paths=2)
        powers = np.zeros(2)
        for seed in range(20):
            gains = tap_gains(3000, 50.0, cfg, rng_for(seed, 'power'), tap_rate_hz=50.0)
            powers += np.mean(np.abs(gains) ** 2, axis=1)
        np.testing.assert_allclose(powers / 20, 0.5, rtol=0.15)

    def test_average_output_power_matches_input(self):
        audio = sine(seconds=60.0, amplitude=0.5)
        ratios = []
        for seed in range(20):
            cfg = ChannelConfig(seed=seed)
            faded = watterson(audio, cfg, file_id='power', normalize=False)
            ratios.append(signal_power(faded.samples) / signal_power(audio.samples))
        self.assertAlmostEqual(float(np.mean(ratios)), 1.0, delta=0.15)

    def test_degenerate_channel_is_a_rotation(self):
        carrier = sine(seconds=2.0, amplitude=0.5)
        t = np.arange(len(carrier.samples)) / carrier.sample_rate_hz
        audio = carrier.replace(samples=carrier.samples * (1.0 + 0.5 * np.sin(2 * np.pi * 3.0 * t)))
        cfg = ChannelConfig(differential_delay_seconds=0.0, doppler_spread_hz=1e-6, num_paths=1, seed=1)
        faded = watterson(audio, cfg, file_id='identity')
        envelope_in = np.abs(scipy.signal.hilbert(audio.samples))[1000:-1000]
        envelope_out = np.abs(scipy.signal.hilbert(faded.samples))[1000:-1000]
        self.assertGreater(float(np.corrcoef(envelope_in, envelope_out)[0, 1]), 0.999)

    def test_output_is_peak_normalized(self):
        faded = watterson(sine(seconds=2.0), ChannelConfig(seed=2), file_id='x')
        self.assertAlmostEqual(float(np.max(np.abs(faded.samples))), 1.0, places=12)

    def test_delay_longer_than_recording(self):
        with self.assertRaises(ParameterError):
            watterson(AudioBuffer(np.ones(8), 16000), ChannelConfig(), file_id='short')

    def test_simulate_is_deterministic(self):
        audio = sine(seconds=1.0)
        cfg = ChannelConfig(seed=5)
        first = simulate(audio, cfg, SnrSpec(6.0), file_id='f')
        second = simulate(audio, cfg, SnrSpec(6.0), file_id='f')
        np.testing.assert_array_equal(first.samples, second.samples)
