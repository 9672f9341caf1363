import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import fft

from doa.exceptions import ConfigError, DoaIOError, GeometryError
from doa.utils.geometry import Direction, ShIndexing, evaluate_sh_basis
from doa.utils.sh_domain import SPEED_OF_SOUND, mode_strength
from doa.utils.tf_transform import MultichannelSignal

logger = logging.getLogger(__name__)

MAX_SIMULATION_ORDER = 8
SPEECH_BAND_HZ = (300.0, 3400.0)
BURST_RANGE_S = (0.05, 0.4)
BURST_RAMP_S = 0.005
TONE_GRID_HZ = 187.5
TONE_COUNT = 4


class SignalKind(str, Enum):
    TONE_SET = 'tone_set'
    BANDLIMITED_NOISE = 'bandlimited_noise'
    SPEECH_LIKE_BURSTS = 'speech_like_bursts'


@dataclass(frozen=True)
class SourceSpec:
    direction: Direction
    signal: SignalKind = SignalKind.BANDLIMITED_NOISE
    level_db: float = 0.0
    onset_s: float = 0.0
    offset_s: float = None
    frequencies_hz: tuple = ()


@dataclass(frozen=True)
class SceneSpec:
    """
    Static sources in an anechoic field. snr_db=None means no sensor noise;
    diffuse_db adds a diffuse field of random plane waves relative to the
    mixture power.
    """
    sources: tuple
    duration_s: float
    sample_rate: float = 48000.0
    snr_db: float = None
    seed: int = 0
    diffuse_db: float = None
    diffuse_waves: int = 64

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ConfigError(f"Scene duration must be > 0, got {self.duration_s}")
        if not self.sample_rate > 0:
            raise ConfigError(f"Scene sample rate must be > 0, got {self.sample_rate}")
        object.__setattr__(self, 'sources', tuple(self.sources))
        for source in self.sources:
            offset = self.duration_s if source.offset_s is None else source.offset_s
            if source.onset_s < 0 or offset <= source.onset_s:
                raise ConfigError(f"Source at {source.direction} has empty activity "
                                  f"[{source.onset_s}, {offset}]")

    @property
    def sample_count(self):
        return int(round(self.duration_s * self.sample_rate))


@dataclass(frozen=True)
class GroundTruthSource:
    source_id: int
    direction: Direction
    onset_s: float
    offset_s: float


@dataclass(frozen=True)
class SimulatedRecording:
    signal: MultichannelSignal
    truth: list = field(default_factory=list)


def _band_limit(x, sample_rate, band):
    """Zero every full-length FFT bin outside band."""
    spectrum = fft.rfft(x)
    freqs = fft.rfftfreq(x.size, 1.0 / sample_rate)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0.0
    return fft.irfft(spectrum, n=x.size)


def bandlimited_noise(rng, n_samples, sample_rate, band=SPEECH_BAND_HZ):
    return _band_limit(rng.standard_normal(n_samples), sample_rate, band)


def burst_envelope(seed, duration, sample_rate=48000.0):
    """
    On/off envelope with segment lengths drawn uniformly from 50-400 ms and
    5 ms raised-cosine edges.
    """
    rng = np.random.default_rng([seed, 0])
    n_samples = int(round(duration * sample_rate))
    gate = np.zeros(n_samples)
    position, active = 0, bool(rng.integers(2))
    while position < n_samples:
        length = int(round(rng.uniform(*BURST_RANGE_S) * sample_rate))
        if active:
            gate[position:position + length] = 1.0
        position += length
        active = not active

    ramp = max(1, int(round(BURST_RAMP_S * sample_rate)))
    kernel = np.hanning(ramp + 2)[1:-1]
    return np.convolve(gate, kernel / kernel.sum(), mode='same')


def speech_like_bursts(seed, duration, sample_rate=48000.0, band=SPEECH_BAND_HZ):
    """Band-limited noise gated by burst_envelope, band-limited again after gating."""
    envelope = burst_envelope(seed, duration, sample_rate)
    rng = np.random.default_rng([seed, 1])
    noise = bandlimited_noise(rng, envelope.size, sample_rate, band)
    return _band_limit(noise * envelope, sample_rate, band)


def tone_set(rng, n_samples, sample_rate, frequencies_hz=()):
    """Sum of unit-amplitude tones with random phases."""
    if not frequencies_hz:
        grid = np.arange(np.ceil(800.0 / TONE_GRID_HZ), np.floor(3500.0 / TONE_GRID_HZ) + 1) * TONE_GRID_HZ
        frequencies_hz = rng.choice(grid, size=TONE_COUNT, replace=False)
    t = np.arange(n_samples) / sample_rate
    phases = rng.uniform(0, 2 * np.pi, size=len(frequencies_hz))
    return sum(np.cos(2 * np.pi * f * t + p) for f, p in zip(frequencies_hz, phases))


def source_signal(source, index, scene):
    """Mono waveform of one source: unit RMS while active, scaled by level_db."""
    n_samples = scene.sample_count
    rng = np.random.default_rng([scene.seed, 100 + index])
    kind = SignalKind(source.signal)
    if kind is SignalKind.TONE_SET:
        x = tone_set(rng, n_samples, scene.sample_rate, source.frequencies_hz)
    elif kind is SignalKind.SPEECH_LIKE_BURSTS:
        x = speech_like_bursts(scene.seed * 1000 + index, scene.duration_s, scene.sample_rate)
    else:
        x = bandlimited_noise(rng, n_samples, scene.sample_rate)

    t = np.arange(n_samples) / scene.sample_rate
    offset = scene.duration_s if source.offset_s is None else source.offset_s
    x = x * ((t >= source.onset_s) & (t < offset))
    rms = np.sqrt(np.mean(x ** 2))
    if rms > 0:
        x = x / rms
    return x * 10.0 ** (source.level_db / 20.0)


def plane_wave_coefficients(direction, freqs, geometry, order):
    """
    Analytic SH coefficients of a unit plane wave from direction, measured on
    the array sphere: b_n(k r) · conj(Y_n^m(Ω)), shape ((N+1)², freqs).
    """
    k = 2 * np.pi * np.asarray(freqs, dtype=float) / SPEED_OF_SOUND
    b = np.array([np.atleast_1d(mode_strength(n, k, geometry.radius, geometry.baffle))
                  for n in range(order + 1)])
    steering = np.conj(evaluate_sh_basis([direction], order)[0])
    return steering[:, None] * b[ShIndexing(order).degrees]


def sensor_response(direction, freqs, geometry, order):
    """
    Sensor pressure for a unit plane wave:
    Σ_{n≤N} Σ_m b_n(k r) conj(Y_n^m(Ω_src)) Y_n^m(Ω_sensor), shape (sensors, freqs).
    """
    return geometry.sh_basis(order) @ plane_wave_coefficients(direction, freqs, geometry, order)


def _synthesize(x, direction, geometry, order, sample_rate):
    spectrum = fft.rfft(x)
    freqs = fft.rfftfreq(x.size, 1.0 / sample_rate)
    response = sensor_response(direction, freqs, geometry, order)
    return fft.irfft(response * spectrum[None, :], n=x.size, axis=-1)


def simulate(scene, geometry, order=3):
    """
    Render a scene on the array by frequency-domain synthesis of each source,
    truncated at SH order N, plus optional diffuse field and white sensor
    noise at snr_db relative to the mixture power.
    """
    if not 0 <= order <= MAX_SIMULATION_ORDER:
        raise ConfigError(f"Simulation order {order} outside 0..{MAX_SIMULATION_ORDER}")
    n_samples = scene.sample_count
    mixture = np.zeros((geometry.sensor_count, n_samples))
    truth = []

    for index, source in enumerate(scene.sources):
        x = source_signal(source, index, scene)
        mixture += _synthesize(x, source.direction, geometry, order, scene.sample_rate)
        offset = scene.duration_s if source.offset_s is None else source.offset_s
        truth.append(GroundTruthSource(index + 1, source.direction, source.onset_s, offset))
        logger.debug(f"Source {index + 1} at {source.direction}: {SignalKind(source.signal).value}")

    power = float(np.mean(mixture ** 2))
    if scene.diffuse_db is not None and power > 0:
        rng = np.random.default_rng([scene.seed, 2000])
        diffuse = np.zeros_like(mixture)
        for _ in range(scene.diffuse_waves):
            v = rng.standard_normal(3)
            azimuth = np.degrees(np.arctan2(v[1], v[0])) % 360.0
            inclination = np.degrees(np.arccos(v[2] / np.linalg.norm(v)))
            wave = bandlimited_noise(rng, n_samples, scene.sample_rate)
            diffuse += _synthesize(wave, Direction(azimuth, inclination), geometry, order, scene.sample_rate)
        diffuse *= np.sqrt(power * 10.0 ** (-scene.diffuse_db / 10.0) / np.mean(diffuse ** 2))
        mixture += diffuse

    if scene.snr_db is not None and np.isfinite(scene.snr_db) and power > 0:
        rng = np.random.default_rng([scene.seed, 1000])
        noise = rng.standard_normal(mixture.shape)
        noise *= np.sqrt(power * 10.0 ** (-scene.snr_db / 10.0) / np.mean(noise ** 2))
        mixture += noise

    logger.info(f"Simulated {len(scene.sources)} sources, {scene.duration_s} s at "
                f"{scene.sample_rate} Hz on '{geometry.label}'")
    return SimulatedRecording(MultichannelSignal(mixture, scene.sample_rate), truth)


def load_scene(path):
    """
    Read a JSON scene:
        {duration_s, sample_rate, snr_db, seed, diffuse_db,
         sources: [{az_deg, incl_deg | el_deg, signal, level_db, onset_s, offset_s, frequencies_hz}]}
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise DoaIOError(f"Scene file not found: {path}")
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"Could not parse scene file {path}: {e}")

    try:
        sources = []
        for item in raw.get('sources', []):
            if 'incl_deg' in item:
                direction = Direction(item['az_deg'], item['incl_deg'])
            else:
                direction = Direction.from_elevation(item['az_deg'], item['el_deg'])
            sources.append(SourceSpec(
                direction=direction,
                signal=SignalKind(item.get('signal', SignalKind.BANDLIMITED_NOISE.value)),
                level_db=float(item.get('level_db', 0.0)),
                onset_s=float(item.get('onset_s', 0.0)),
                offset_s=None if item.get('offset_s') is None else float(item['offset_s']),
                frequencies_hz=tuple(float(f) for f in item.get('frequencies_hz', ())),
            ))
        snr = raw.get('snr_db')
        diffuse = raw.get('diffuse_db')
        return SceneSpec(
            sources=tuple(sources),
            duration_s=float(raw['duration_s']),
            sample_rate=float(raw.get('sample_rate', 48000.0)),
            snr_db=None if snr is None else float(snr),
            seed=int(raw.get('seed', 0)),
            diffuse_db=None if diffuse is None else float(diffuse),
            diffuse_waves=int(raw.get('diffuse_waves', 64)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError, GeometryError) as e:
        raise ConfigError(f"Invalid scene file {path}: {e}")


def truth_frame(truth):
    return pd.DataFrame({
        'source_id': [t.source_id for t in truth],
        'az_deg': [t.direction.azimuth for t in truth],
        'el_deg': [t.direction.elevation for t in truth],
        'onset_s': [t.onset_s for t in truth],
        'offset_s': [t.offset_s for t in truth],
    }, columns=['source_id', 'az_deg', 'el_deg', 'onset_s', 'offset_s'])


def write_truth_csv(path, truth):
    try:
        truth_frame(truth).to_csv(path, index=False, float_format='%.6f')
    except OSError as e:
        raise DoaIOError(f"Could not write ground truth to {path}: {e}")
