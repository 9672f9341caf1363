import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft, signal

from doa.exceptions import DoaIOError, SignalError

logger = logging.getLogger(__name__)

SUPPORTED_OVERLAPS = (0, 50, 75)
SUPPORTED_WINDOWS = {
    'hann': 'hann',
    'hamming': 'hamming',
    'blackman': 'blackman',
    'rectangular': 'boxcar',
}
WAV_FORMATS = {'WAV', 'WAVEX'}
WAV_SUBTYPES = {'PCM_16', 'PCM_24', 'PCM_32', 'FLOAT'}
MIN_FRAME_SAMPLES = 8


@dataclass(frozen=True)
class MultichannelSignal:
    samples: np.ndarray  # (channels, samples)
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise SignalError(f"Expected a (channels, samples) matrix, got shape {samples.shape}")
        if not self.sample_rate > 0:
            raise SignalError(f"Sample rate must be > 0, got {self.sample_rate}")
        object.__setattr__(self, 'samples', samples)

    @property
    def channel_count(self):
        return self.samples.shape[0]

    @property
    def sample_count(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.sample_count / self.sample_rate

    def scaled(self, factor):
        return MultichannelSignal(self.samples * factor, self.sample_rate)


@dataclass(frozen=True)
class TfTensor:
    """
    Complex STFT coefficients indexed (channel, frame, bin).

    bin_indices are the FFT bins kept; a full-band tensor keeps all
    fft_len/2 + 1 of them.
    """
    coeffs: np.ndarray
    hop: int
    frame_len: int
    fft_len: int
    sample_rate: float
    bin_indices: np.ndarray

    @property
    def bin_hz(self):
        return self.sample_rate / self.fft_len

    @property
    def hop_seconds(self):
        return self.hop / self.sample_rate

    @property
    def frame_count(self):
        return self.coeffs.shape[1]

    @property
    def frame_times(self):
        """Frame centers in seconds."""
        return (np.arange(self.frame_count) * self.hop + self.frame_len / 2) / self.sample_rate

    @property
    def bin_freqs(self):
        return self.bin_indices * self.bin_hz


def framing(sample_rate, frame_ms=4.0, overlap_pct=75.0):
    """
    Frame length, hop and FFT length for the given framing parameters.
    At 48 kHz, 4 ms and 75 % this is (192, 48, 256).
    """
    if overlap_pct not in SUPPORTED_OVERLAPS:
        raise SignalError(f"Overlap must be one of {SUPPORTED_OVERLAPS}, got {overlap_pct}")
    frame_len = 2 * int(round(frame_ms * sample_rate / 1000.0 / 2.0))
    if frame_len < MIN_FRAME_SAMPLES:
        raise SignalError(f"Frame of {frame_ms} ms at {sample_rate} Hz is below {MIN_FRAME_SAMPLES} samples")
    hop = max(1, int(round(frame_len * (100 - overlap_pct) / 100.0)))
    fft_len = 1 << (frame_len - 1).bit_length()
    return frame_len, hop, fft_len


def stft(sig, frame_ms=4.0, overlap_pct=75.0, window='hann', band=None, workers=1):
    """
    Short-time Fourier transform of every channel.

    Frames start at 0 and advance by hop; the partial final frame is
    dropped. Each frame is windowed (periodic window) and zero-padded to the
    next power of two. If band=(f_lo, f_hi) is given only bins inside it
    are kept.
    """
    if window not in SUPPORTED_WINDOWS:
        raise SignalError(f"Unsupported window '{window}'")
    frame_len, hop, fft_len = framing(sig.sample_rate, frame_ms, overlap_pct)
    if sig.sample_count < frame_len:
        raise SignalError(
            f"Signal of {sig.sample_count} samples is shorter than one frame ({frame_len})"
        )

    n_frames = (sig.sample_count - frame_len) // hop + 1
    bin_indices = np.arange(fft_len // 2 + 1)
    if band is not None:
        freqs = bin_indices * sig.sample_rate / fft_len
        bin_indices = bin_indices[(freqs >= band[0]) & (freqs <= band[1])]

    taper = signal.get_window(SUPPORTED_WINDOWS[window], frame_len, fftbins=True)
    coeffs = np.empty((sig.channel_count, n_frames, bin_indices.size), dtype=complex)
    for channel, samples in enumerate(sig.samples):
        frames = sliding_window_view(samples, frame_len)[::hop][:n_frames]
        spectrum = fft.rfft(frames * taper, n=fft_len, axis=-1, workers=workers)
        coeffs[channel] = spectrum[:, bin_indices]

    logger.debug(f"STFT: {sig.channel_count} channels, {n_frames} frames, {bin_indices.size} bins "
                 f"(frame {frame_len}, hop {hop}, fft {fft_len})")
    return TfTensor(coeffs, hop, frame_len, fft_len, float(sig.sample_rate), bin_indices)


def read_wav(path):
    """Read a RIFF WAV file as float samples in [-1, 1], shape (channels, samples)."""
    path = Path(path)
    try:
        info = sf.info(str(path))
        if info.format not in WAV_FORMATS or info.subtype not in WAV_SUBTYPES:
            raise DoaIOError(f"Unsupported codec in {path}: {info.format}/{info.subtype}")
        data, sample_rate = sf.read(str(path), dtype='float64', always_2d=True)
    except DoaIOError:
        raise
    except Exception as e:
        logger.error(f"Failed to read WAV {path}: {str(e)}")
        raise DoaIOError(f"Could not read WAV file {path}: {e}")

    declared, available = _data_chunk_bytes(path)
    if data.shape[0] != info.frames or declared > available:
        raise DoaIOError(f"Truncated WAV file {path}: data chunk declares {declared} bytes, "
                         f"{available} present")

    logger.info(f"Read {path.name}: {data.shape[1]} channels, {sample_rate} Hz, "
                f"{data.shape[0] / sample_rate:.2f} s")
    return MultichannelSignal(data.T, float(sample_rate))


def _data_chunk_bytes(path):
    """
    (declared, available) byte counts of the RIFF data chunk. Streaming
    writers leave the size at 0 or 0xFFFFFFFF; those are reported as fully
    present.
    """
    size = path.stat().st_size
    with open(path, 'rb') as handle:
        riff = handle.read(12)
        if len(riff) < 12 or riff[:4] != b'RIFF' or riff[8:12] != b'WAVE':
            raise DoaIOError(f"{path} is not a RIFF/WAVE file")
        while True:
            header = handle.read(8)
            if len(header) < 8:
                raise DoaIOError(f"Truncated WAV file {path}: no data chunk")
            chunk_id, chunk_size = header[:4], struct.unpack('<I', header[4:])[0]
            if chunk_id == b'data':
                available = size - handle.tell()
                if chunk_size in (0, 0xFFFFFFFF):
                    return available, available
                return chunk_size, available
            handle.seek(chunk_size + (chunk_size & 1), 1)


def write_wav(path, sig):
    """Write a 32-bit float WAV file."""
    try:
        sf.write(str(path), sig.samples.T, int(round(sig.sample_rate)), subtype='FLOAT', format='WAV')
    except Exception as e:
        logger.error(f"Failed to write WAV {path}: {str(e)}")
        raise DoaIOError(f"Could not write WAV file {path}: {e}")
