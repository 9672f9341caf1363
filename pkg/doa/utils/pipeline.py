import io
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import pandas as pd
from dotenv import dotenv_values

from doa import __version__
from doa.exceptions import ChannelMismatchError, ConfigError, DoaIOError, SignalError
from doa.utils.doa_map import HistogramSmoother, PeakParams, build_histogram, grid_shape, pick_peaks
from doa.utils.evaluation import CONVENTIONS, ELEVATION
from doa.utils.sh_domain import MAX_GAIN_DB, SPEED_OF_SOUND, ModeStrengthProfile, ShEncoder, compensate
from doa.utils.sspiv import MIN_EIGEN_RATIO, SmoothingParams, compute_sspiv_field
from doa.utils.tf_transform import SUPPORTED_OVERLAPS, SUPPORTED_WINDOWS, framing, stft

logger = logging.getLogger(__name__)

ESTIMATES_FORMAT_VERSION = 1
ESTIMATE_COLUMNS = ['rank', 'az_deg', 'el_deg', 'peak_height']


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the estimation chain."""
    frame_ms: float = 4.0
    overlap_pct: int = 75
    sh_order: int = 3
    cov_time_ms: float = 16.0
    cov_freq_hz: float = 350.0
    f_min_hz: float = 800.0
    f_max_hz: float = 3500.0
    az_bin_deg: float = 2.0
    incl_bin_deg: float = 2.0
    kernel_sigma_deg: float = 4.0
    beta: float = 2.0
    max_peaks: int = 10
    geometry: str = ''
    max_gain_db: float = MAX_GAIN_DB
    speed_of_sound: float = SPEED_OF_SOUND
    window: str = 'hann'
    single_source_mode: bool = False
    eigen_weighting: bool = False
    min_eigen_ratio: float = MIN_EIGEN_RATIO

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.overlap_pct not in SUPPORTED_OVERLAPS:
            raise ConfigError(f"overlap_pct must be one of {SUPPORTED_OVERLAPS}, got {self.overlap_pct}")
        if self.sh_order < 1:
            raise ConfigError(f"sh_order must be >= 1 for pseudointensity, got {self.sh_order}")
        if self.window not in SUPPORTED_WINDOWS:
            raise ConfigError(f"Unsupported window '{self.window}'")
        if not self.frame_ms > 0:
            raise ConfigError(f"frame_ms must be > 0, got {self.frame_ms}")
        if not (self.max_gain_db > 0 and self.speed_of_sound > 0):
            raise ConfigError("max_gain_db and speed_of_sound must be > 0")
        if self.f_min_hz < 0:
            raise ConfigError(f"f_min_hz must be >= 0, got {self.f_min_hz}")
        # Built for their own checks
        self.smoothing_params()
        self.peak_params()
        grid_shape(self.az_bin_deg, self.incl_bin_deg)

    def smoothing_params(self):
        return SmoothingParams(
            time_span_ms=self.cov_time_ms,
            freq_span_hz=self.cov_freq_hz,
            f_min_hz=self.f_min_hz,
            f_max_hz=self.f_max_hz,
            eigen_weighting=self.eigen_weighting,
            min_eigen_ratio=self.min_eigen_ratio,
        )

    def peak_params(self):
        return PeakParams(
            max_peaks=self.max_peaks,
            beta=self.beta,
            kernel_sigma=self.kernel_sigma_deg,
            single_source_mode=self.single_source_mode,
        )

    @classmethod
    def from_mapping(cls, values, base=None):
        """Coerce string values by field type onto base (defaults if None)."""
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        coerced = {}
        for key, raw in values.items():
            coerced[key] = _coerce(key, raw, types[key])
        return replace(base or cls(), **coerced)

    @classmethod
    def from_text(cls, text, base=None):
        return cls.from_mapping(dotenv_values(stream=io.StringIO(text)), base)

    @classmethod
    def from_file(cls, path, base=None):
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise DoaIOError(f"Config file not found: {path}")
        except OSError as e:
            raise DoaIOError(f"Could not read config file {path}: {e}")
        except UnicodeDecodeError as e:
            raise ConfigError(f"Config file {path} is not text: {e}")
        logger.debug(f"Loading pipeline config from {path}")
        return cls.from_text(text, base)

    def with_overrides(self, overrides):
        """Apply 'key=value' strings (command-line --set) on top of this config."""
        values = {}
        for item in overrides:
            key, sep, value = item.partition('=')
            if not sep or not key.strip():
                raise ConfigError(f"Override '{item}' is not of the form key=value")
            values[key.strip()] = value.strip()
        return self.from_mapping(values, base=self)

    def to_text(self):
        return ''.join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    def snapshot(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(key, raw, kind):
    if raw is None:
        raise ConfigError(f"Config key '{key}' has no value")
    text = str(raw).strip()
    try:
        if kind in (bool, 'bool'):
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if kind in (int, 'int'):
            number = float(text)
            if not number.is_integer():
                raise ValueError(text)
            return int(number)
        if kind in (float, 'float'):
            return float(text)
    except ValueError:
        raise ConfigError(f"Config key '{key}': cannot interpret '{text}' as {getattr(kind, '__name__', kind)}")
    return text


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        text = repr(value)
        return text[:-2] if text.endswith('.0') else text
    return str(value)


@dataclass(frozen=True)
class EstimationResult:
    estimates: list
    votes: object
    raw_histogram: object
    smoothed_histogram: object
    config: PipelineConfig = field(default_factory=PipelineConfig)


def estimate_doas(signal, geometry, config=None, workers=1):
    """
    Full chain: STFT, SH encoding, mode-strength compensation, SSPIV votes,
    histogram, smoothing and peak picking.
    """
    config = config or PipelineConfig()
    if signal.channel_count != geometry.sensor_count:
        raise ChannelMismatchError(
            f"Recording has {signal.channel_count} channels but geometry "
            f"'{geometry.label}' has {geometry.sensor_count} sensors"
        )
    encoder = ShEncoder(geometry, config.sh_order)
    try:
        framing(signal.sample_rate, config.frame_ms, config.overlap_pct)
    except SignalError as e:
        raise ConfigError(str(e))

    tf = stft(signal, config.frame_ms, config.overlap_pct, config.window,
              band=(config.f_min_hz, config.f_max_hz), workers=workers)
    sh = encoder.encode(tf)
    profile = ModeStrengthProfile.for_bins(tf.bin_freqs, config.sh_order, geometry.radius,
                                           geometry.baffle, config.speed_of_sound, config.max_gain_db)
    sh = compensate(sh, profile)

    votes = compute_sspiv_field(sh, config.smoothing_params(), workers=workers)
    raw = build_histogram(votes, config.az_bin_deg, config.incl_bin_deg)
    smoothed = HistogramSmoother(config.kernel_sigma_deg, config.az_bin_deg, config.incl_bin_deg).smooth(raw)
    estimates = pick_peaks(smoothed, config.peak_params())

    for estimate in estimates:
        logger.info(f"Source {estimate.rank}: {estimate.direction} height {estimate.peak_height:.3f}")
    return EstimationResult(estimates, votes, raw, smoothed, config)


def estimates_frame(estimates, convention=ELEVATION):
    if convention not in CONVENTIONS:
        raise ConfigError(f"Elevation convention must be one of {CONVENTIONS}, got '{convention}'")
    return pd.DataFrame({
        'rank': [e.rank for e in estimates],
        'az_deg': [e.direction.azimuth for e in estimates],
        'el_deg': [e.direction.elevation if convention == ELEVATION else e.direction.inclination
                   for e in estimates],
        'peak_height': [e.peak_height for e in estimates],
    }, columns=ESTIMATE_COLUMNS)


def estimates_text(estimates, convention=ELEVATION):
    """Versioned header line, then rank, az_deg, el_deg, peak_height."""
    frame = estimates_frame(estimates, convention)
    header = (f"# format_version={ESTIMATES_FORMAT_VERSION} elevation_convention={convention} "
              f"doa_version={__version__}\n")
    return header + frame.to_csv(index=False, float_format='%.6f', lineterminator='\n')


def write_estimates_csv(path, estimates, convention=ELEVATION):
    text = estimates_text(estimates, convention)
    try:
        with open(path, 'w', newline='') as handle:
            handle.write(text)
    except OSError as e:
        logger.error(f"Failed to write estimates to {path}: {str(e)}")
        raise DoaIOError(f"Could not write estimates to {path}: {e}")
