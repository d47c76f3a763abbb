"""WAV decoding, resampling, and peak normalization.

Canonical representation downstream of this module: 16 kHz mono float
samples in [-1, 1], peak-normalized to -1 dBFS.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from . import DataError

CANONICAL_RATE = 16000
PEAK_TARGET_DB = -1.0


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray  # float64 mono
    sample_rate: int
    silence_warning: bool = False

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate


_PCM_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


def read_wav(path):
    """Decode a PCM/float WAV file to mono float samples in [-1, 1].

    Multi-channel audio is averaged to mono; the original sample rate is
    preserved.  24-bit PCM arrives via scipy as int32.
    """
    try:
        rate, data = wavfile.read(path)
    except Exception as e:
        raise DataError(f"{path}: not a readable WAV file ({e})") from None
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _PCM_SCALE:
        x = data.astype(np.float64) / _PCM_SCALE[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioBuffer(samples=x, sample_rate=int(rate))


def write_wav(buf, path):
    """Write 16-bit PCM WAV."""
    pcm = np.clip(np.round(buf.samples * 32768.0), -32768, 32767)
    wavfile.write(path, buf.sample_rate, pcm.astype(np.int16))


def resample(buf, target_rate):
    """Band-limited polyphase resampling (windowed-sinc, Kaiser window)."""
    if target_rate <= 0:
        raise DataError(f"invalid target rate {target_rate}")
    if buf.sample_rate == target_rate:
        return buf
    frac = Fraction(int(target_rate), int(buf.sample_rate))
    y = resample_poly(buf.samples, frac.numerator, frac.denominator,
                      window=("kaiser", 5.0))
    return replace(buf, samples=y, sample_rate=int(target_rate))


def peak_normalize(buf, target_db=PEAK_TARGET_DB):
    """Scale so the maximum absolute sample hits 10^(target_db/20).

    Digital silence is returned unchanged with silence_warning set; there
    is never a division by zero.
    """
    peak = float(np.max(np.abs(buf.samples))) if len(buf.samples) else 0.0
    if peak == 0.0:
        return replace(buf, silence_warning=True)
    gain = 10.0 ** (target_db / 20.0) / peak
    return replace(buf, samples=buf.samples * gain)


def canonicalize(buf):
    """Resample to 16 kHz and apply -1 dB peak normalization."""
    return peak_normalize(resample(buf, CANONICAL_RATE))
