"""
HF channel simulation: two-path Watterson fading followed by AWGN.

Random streams are keyed by ``(seed, file_id, stream)`` so results do not
depend on the order in which recordings are processed.
"""

import logging
import math
import zlib
from dataclasses import dataclass

import numpy as np
import scipy.signal
from django.conf import settings
from scipy.interpolate import CubicSpline

from kws.exceptions import DegenerateInputError, ParameterError

logger = logging.getLogger(__name__)

# Longest Doppler filter before the fading is treated as static
MAX_DOPPLER_TAPS = 2 ** 20
# Span of the Gaussian Doppler filter in standard deviations on each side
DOPPLER_FILTER_SPAN = 4.0

FADING_STREAM = 0
NOISE_STREAM = 1


@dataclass(frozen=True)
class ChannelConfig:
    differential_delay_seconds: float = 0.001
    doppler_spread_hz: float = 0.5
    num_paths: int = 2
    seed: int = 0

    def __post_init__(self):
        if not self.differential_delay_seconds >= 0:
            raise ParameterError(f"Differential delay must be >= 0, got {self.differential_delay_seconds}.")
        if not self.doppler_spread_hz > 0:
            raise ParameterError(f"Doppler spread must be > 0, got {self.doppler_spread_hz}.")
        if self.num_paths < 1:
            raise ParameterError(f"A channel needs at least one path, got {self.num_paths}.")

    @classmethod
    def from_settings(cls, seed=0, **overrides):
        values = {
            'differential_delay_seconds': settings.KWS['CHANNEL_DELAY_SECONDS'],
            'doppler_spread_hz': settings.KWS['CHANNEL_DOPPLER_HZ'],
            'num_paths': settings.KWS['CHANNEL_PATHS'],
            'seed': seed,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    @property
    def path_delays_seconds(self):
        """First path undelayed, the others at the differential delay."""
        return [0.0] + [self.differential_delay_seconds] * (self.num_paths - 1)


@dataclass(frozen=True)
class SnrSpec:
    """Target SNR in dB; ``+inf`` marks the clean (noise-free) variant."""
    snr_db: float

    def __post_init__(self):
        value = float(self.snr_db)
        if math.isnan(value) or value == -math.inf:
            raise ParameterError(f"SNR must be finite or +inf, got {self.snr_db}.")
        object.__setattr__(self, 'snr_db', value)

    @classmethod
    def clean(cls):
        return cls(math.inf)

    @property
    def is_clean(self):
        return self.snr_db == math.inf

    @property
    def label(self):
        return 'clean' if self.is_clean else f"{self.snr_db:g}"

    @property
    def tag(self):
        """Directory-safe name, e.g. ``snr-12``, ``snr3`` or ``clean``."""
        if self.is_clean:
            return 'clean'
        return f"snr{self.snr_db:g}"


def snr_grid():
    """SNRs from -12 dB to 30 dB in 3 dB steps."""
    start, stop, step = settings.KWS['SNR_GRID_DB']
    count = int(round((stop - start) / step)) + 1
    return [SnrSpec(start + k * step) for k in range(count)]


def stable_hash(text):
    return zlib.crc32(str(text).encode('utf-8'))


def rng_for(seed, file_id='', stream=FADING_STREAM):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stable_hash(file_id), stream]))


def doppler_filter(doppler_spread_hz, tap_rate_hz):
    """Unit-energy Gaussian FIR shaping white noise to a Gaussian Doppler spectrum.

    Returns None when the filter would exceed MAX_DOPPLER_TAPS.
    """
    sigma_f = doppler_spread_hz / 2.0
    sigma_t = 1.0 / (2.0 * math.sqrt(2.0) * math.pi * sigma_f)
    half = math.ceil(DOPPLER_FILTER_SPAN * sigma_t * tap_rate_hz)
    if 2 * half + 1 > MAX_DOPPLER_TAPS:
        return None
    t = np.arange(-half, half + 1) / tap_rate_hz
    h = np.exp(-4.0 * math.pi ** 2 * sigma_f ** 2 * t ** 2)
    return h / np.sqrt(np.sum(h ** 2))


def tap_gains(num_samples, sample_rate_hz, cfg, rng, tap_rate_hz=None):
    """Complex tap gains of every path, shape (num_paths, num_samples).

    Each gain is a unit-power complex Gaussian process; the paths are scaled
    so their powers sum to one.
    """
    tap_rate_hz = tap_rate_hz or settings.KWS['CHANNEL_TAP_RATE_HZ']
    scale = 1.0 / math.sqrt(cfg.num_paths)
    h = doppler_filter(cfg.doppler_spread_hz, tap_rate_hz)

    if h is None:
        logger.debug(f"Doppler spread {cfg.doppler_spread_hz} Hz too small to resolve; static taps")
        static = (rng.standard_normal(cfg.num_paths) + 1j * rng.standard_normal(cfg.num_paths)) / math.sqrt(2.0)
        return np.repeat((scale * static)[:, None], num_samples, axis=1)

    t_audio = np.arange(num_samples) / sample_rate_hz
    n_low = int(math.ceil(t_audio[-1] * tap_rate_hz)) + 2 if num_samples else 2
    t_low = np.arange(n_low) / tap_rate_hz
    gains = np.empty((cfg.num_paths, num_samples), dtype=np.complex128)
    for path in range(cfg.num_paths):
        white = (rng.standard_normal(n_low + h.size - 1) + 1j * rng.standard_normal(n_low + h.size - 1)) / math.sqrt(2.0)
        low = np.convolve(white, h, mode='valid')
        real = CubicSpline(t_low, low.real)(t_audio)
        imag = CubicSpline(t_low, low.imag)(t_audio)
        gains[path] = scale * (real + 1j * imag)
    return gains


def watterson(audio, cfg, file_id='', normalize=True):
    """Apply the fading channel to the analytic signal and keep the real part."""
    rate = audio.sample_rate_hz
    n = len(audio.samples)
    if cfg.differential_delay_seconds >= audio.duration_seconds:
        raise ParameterError(
            f"Differential delay {cfg.differential_delay_seconds} s is not shorter than "
            f"the recording ({audio.duration_seconds:.3f} s)."
        )
    rng = rng_for(cfg.seed, file_id, FADING_STREAM)
    gains = tap_gains(n, rate, cfg, rng)
    analytic = scipy.signal.hilbert(audio.samples)

    received = np.zeros(n, dtype=np.complex128)
    for path, delay in enumerate(cfg.path_delays_seconds):
        shift = int(round(delay * rate))
        delayed = np.zeros(n, dtype=np.complex128)
        delayed[shift:] = analytic[:n - shift]
        received += gains[path] * delayed
    samples = received.real

    if normalize:
        peak = float(np.max(np.abs(samples)))
        if peak > 0:
            samples = samples / peak
    return audio.replace(samples=samples)


def signal_power(samples):
    return float(np.mean(np.asarray(samples, dtype=np.float64) ** 2))


def add_awgn(audio, snr, seed, file_id='', clip=True):
    """Add white Gaussian noise at the target SNR against the whole-recording power."""
    if not isinstance(snr, SnrSpec):
        snr = SnrSpec(snr)
    if snr.is_clean:
        return audio
    power = signal_power(audio.samples)
    if audio.silent or power == 0.0:
        raise DegenerateInputError(f"SNR is undefined for silent recording '{file_id}'.")

    sigma = math.sqrt(power / 10.0 ** (snr.snr_db / 10.0))
    rng = rng_for(seed, file_id, NOISE_STREAM)
    noisy = audio.samples + rng.normal(0.0, sigma, len(audio.samples))

    clipped = 0
    if clip:
        over = np.abs(noisy) > 1.0
        clipped = int(np.count_nonzero(over))
        if clipped:
            logger.warning(f"Clipped {clipped} samples of '{file_id}' at {snr.snr_db:g} dB SNR")
            noisy = np.clip(noisy, -1.0, 1.0)
    return audio.replace(samples=noisy, clipped=clipped)


def simulate(audio, cfg, snr, file_id=''):
    """Watterson channel then AWGN, both keyed by (cfg.seed, file_id)."""
    faded = watterson(audio, cfg, file_id=file_id)
    return add_awgn(faded, snr, cfg.seed, file_id=file_id)


def measure_snr_db(clean, noisy):
    clean = np.asarray(getattr(clean, 'samples', clean), dtype=np.float64)
    noisy = np.asarray(getattr(noisy, 'samples', noisy), dtype=np.float64)
    noise = signal_power(noisy - clean)
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(signal_power(clean) / noise)
