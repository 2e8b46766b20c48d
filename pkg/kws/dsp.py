"""
Pre-processing and feature extraction.

Frames are never centered or padded: the first frame starts at sample 0 and
the frame count is ``1 + (n - window) // hop``.
"""

import logging
from dataclasses import dataclass
from math import gcd

import librosa
import numpy as np
import scipy.fft
import scipy.signal
from django.conf import settings

from kws.exceptions import DegenerateInputError, ParameterError, TooShortError
from kws.tensorio import EmbeddingSequence, normalize_rows

logger = logging.getLogger(__name__)

SPECTROGRAM_KINDS = ('log_mel', 'hfcc')


@dataclass(frozen=True)
class Spectrogram:
    """T x M feature matrix; ``kind`` is ``log_mel`` or ``hfcc``."""
    frames: np.ndarray
    hop_seconds: float
    kind: str

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64, copy=True)
        frames.setflags(write=False)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ParameterError(f"Spectrogram must be a non-empty T x M matrix, got shape {frames.shape}.")
        if not np.all(np.isfinite(frames)):
            raise DegenerateInputError("Spectrogram contains non-finite values.")
        if self.kind not in SPECTROGRAM_KINDS:
            raise ParameterError(f"Unknown spectrogram kind '{self.kind}'.")
        object.__setattr__(self, 'frames', frames)

    def to_sequence(self):
        """Raw frames as an embedding sequence labelled with the kind."""
        return EmbeddingSequence(frames=self.frames, hop_seconds=self.hop_seconds, label=self.kind)


def frame_count(num_samples, window, hop):
    if num_samples < window:
        raise TooShortError(f"{num_samples} samples is shorter than one {window}-sample window.")
    return 1 + (num_samples - window) // hop


def resample(audio, target_rate=None):
    """Polyphase resampling with a Kaiser windowed-sinc anti-aliasing filter."""
    target_rate = target_rate or settings.KWS['SAMPLE_RATE']
    if audio.sample_rate_hz == target_rate:
        return audio
    divisor = gcd(audio.sample_rate_hz, target_rate)
    up, down = target_rate // divisor, audio.sample_rate_hz // divisor
    ratio = max(up, down)
    taps = 2 * (settings.KWS['RESAMPLE_TAPS_PER_PHASE'] // 2) * ratio + 1
    # resample_poly scales the kernel by up itself
    kernel = scipy.signal.firwin(taps, 1.0 / ratio, window=('kaiser', settings.KWS['RESAMPLE_KAISER_BETA']))
    samples = scipy.signal.resample_poly(audio.samples, up, down, window=kernel)
    logger.debug(f"Resampled {audio.sample_rate_hz} Hz -> {target_rate} Hz ({len(audio.samples)} -> {len(samples)} samples)")
    return audio.replace(samples=samples, sample_rate_hz=target_rate)


def highpass(audio, cutoff_hz=None):
    """Second-order Butterworth high-pass, forward only, started in steady state."""
    cutoff_hz = cutoff_hz or settings.KWS['HIGHPASS_HZ']
    b, a = scipy.signal.butter(2, cutoff_hz, btype='highpass', fs=audio.sample_rate_hz)
    # Steady state for the first sample so a constant input yields zero output
    zi = scipy.signal.lfilter_zi(b, a) * audio.samples[0]
    samples, _ = scipy.signal.lfilter(b, a, audio.samples, zi=zi)
    return audio.replace(samples=samples)


def preprocess(audio, cutoff_hz=None):
    """Resample to 16 kHz, high-pass at 50 Hz and normalize the peak to 1."""
    if len(audio.samples) == 0:
        raise DegenerateInputError("Cannot pre-process empty audio.")
    filtered = highpass(resample(audio), cutoff_hz)
    peak = float(np.max(np.abs(filtered.samples)))
    if peak < settings.KWS['SILENCE_PEAK']:
        logger.warning("Silent recording after pre-processing; returning zeros")
        return filtered.replace(samples=np.zeros_like(filtered.samples), silent=True)
    return filtered.replace(samples=filtered.samples / peak, silent=False)


def _require_rate(audio):
    rate = settings.KWS['SAMPLE_RATE']
    if audio.sample_rate_hz != rate:
        raise ParameterError(f"Features need {rate} Hz audio, got {audio.sample_rate_hz} Hz; pre-process first.")
    return rate


def mel_filterbank(rate=None, n_fft=None, n_mels=None):
    """Triangular HTK mel filters with unit peak over 0 Hz to Nyquist."""
    rate = rate or settings.KWS['SAMPLE_RATE']
    return librosa.filters.mel(
        sr=rate,
        n_fft=n_fft or settings.KWS['MEL_WINDOW'],
        n_mels=n_mels or settings.KWS['MEL_BINS'],
        fmin=0.0,
        fmax=rate / 2,
        htk=True,
        norm=None,
    )


def power_spectrum(audio):
    """Hann-windowed STFT power, frames along the first axis."""
    window = settings.KWS['MEL_WINDOW']
    hop = settings.KWS['MEL_HOP']
    frame_count(len(audio.samples), window, hop)
    stft = librosa.stft(
        audio.samples, n_fft=window, hop_length=hop, win_length=window, window='hann', center=False
    )
    return (np.abs(stft) ** 2).T


def log_mel(audio):
    rate = _require_rate(audio)
    power = power_spectrum(audio)
    mel = power @ mel_filterbank(rate).T
    frames = np.log(np.maximum(mel, settings.KWS['LOG_FLOOR']))
    return Spectrogram(frames=frames, hop_seconds=settings.KWS['MEL_HOP'] / rate, kind='log_mel')


# HFCC

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def erb(f):
    """Equivalent rectangular bandwidth in Hz (Moore and Glasberg)."""
    f = np.asarray(f, dtype=np.float64)
    return 6.23e-6 * f ** 2 + 93.39e-3 * f + 28.52


def hfcc_filter_edges(n_filters, rate):
    """Centers, lower and upper edges of the HFCC filters in Hz.

    Centers are equally spaced in mel; each filter is one ERB-scaled
    bandwidth wide with its center at the mel midpoint of the edges.
    """
    nyquist = rate / 2
    centers = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_filters + 2)[1:-1])
    width = 2.0 * erb(centers)
    a = 700.0 + centers
    upper = (width + np.sqrt(width ** 2 + 4.0 * a ** 2)) / 2.0 - 700.0
    lower = upper - width
    return centers, np.clip(lower, 0.0, nyquist), np.clip(upper, 0.0, nyquist)


def hfcc_filterbank(n_filters, n_fft, rate):
    centers, lower, upper = hfcc_filter_edges(n_filters, rate)
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate)
    bank = np.zeros((n_filters, freqs.size))
    for k in range(n_filters):
        rising = (freqs - lower[k]) / max(centers[k] - lower[k], 1e-9)
        falling = (upper[k] - freqs) / max(upper[k] - centers[k], 1e-9)
        bank[k] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return bank


def hfcc(audio):
    """Human factor cepstral coefficients; coefficient 0 is the log frame energy."""
    rate = _require_rate(audio)
    window = settings.KWS['HFCC_WINDOW']
    hop = settings.KWS['HFCC_HOP']
    n_fft = settings.KWS['HFCC_NFFT']
    floor = settings.KWS['LOG_FLOOR']
    frame_count(len(audio.samples), window, hop)

    frames = librosa.util.frame(np.ascontiguousarray(audio.samples), frame_length=window, hop_length=hop, axis=0)
    tapered = frames * scipy.signal.get_window('hamming', window, fftbins=False)
    power = np.abs(np.fft.rfft(tapered, n=n_fft, axis=1)) ** 2

    bank = hfcc_filterbank(settings.KWS['HFCC_FILTERS'], n_fft, rate)
    log_energies = np.log(np.maximum(power @ bank.T, floor))
    cepstra = scipy.fft.dct(log_energies, type=2, norm='ortho', axis=1)[:, :settings.KWS['HFCC_COEFFICIENTS']]
    cepstra[:, 0] = np.log(np.maximum(np.sum(frames ** 2, axis=1), floor))
    return Spectrogram(frames=cepstra, hop_seconds=hop / rate, kind='hfcc')


def spectrogram_to_sequence(spec):
    """Standardize each column over the recording, then unit-normalize rows."""
    frames = spec.frames
    if frames.shape[0] < 2:
        raise DegenerateInputError("A single-frame spectrogram has no per-recording variance.")
    constant = np.flatnonzero(np.ptp(frames, axis=1) == 0)
    if constant.size:
        raise DegenerateInputError(f"Spectrogram row {int(constant[0])} is constant across features.")
    centered = frames - frames.mean(axis=0)
    std = frames.std(axis=0)
    standardized = np.divide(centered, std, out=centered.copy(), where=std > 0)
    seq = EmbeddingSequence(frames=standardized, hop_seconds=spec.hop_seconds, label=spec.kind)
    return normalize_rows(seq)


def features(audio, kind, cutoff_hz=None):
    """Pre-process and extract one kind of spectrogram."""
    clean = preprocess(audio, cutoff_hz)
    if clean.silent:
        raise DegenerateInputError("No features for a silent recording.")
    if kind == 'log_mel':
        return log_mel(clean)
    if kind == 'hfcc':
        return hfcc(clean)
    raise ParameterError(f"Unknown feature kind '{kind}'.")


def audio_to_sequence(audio, kind='hfcc', cutoff_hz=None):
    return spectrogram_to_sequence(features(audio, kind, cutoff_hz))

