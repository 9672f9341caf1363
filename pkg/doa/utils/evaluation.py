import logging
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from doa.exceptions import ConfigError, DoaIOError, GeometryError
from doa.utils.geometry import Direction, unit_vector

logger = logging.getLogger(__name__)

DEFAULT_GATE_DEG = 20.0
EXHAUSTIVE_LIMIT = 6
ELEVATION = 'elevation'
INCLINATION = 'inclination'
CONVENTIONS = (ELEVATION, INCLINATION)
MISSING = '---'


def azimuth_error(a_deg, b_deg):
    """Wrapped azimuth difference in [0, 180]."""
    d = abs(a_deg - b_deg) % 360.0
    return min(d, 360.0 - d)


def combined_error(d1, d2):
    """Great-circle angle between two directions, in degrees."""
    cosine = float(np.dot(unit_vector(d1), unit_vector(d2)))
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))


@dataclass(frozen=True)
class MatchedPair:
    source_id: int
    estimate_index: int
    az_err_deg: float
    el_err_deg: float
    combined_deg: float


@dataclass
class MetricsReport:
    """
    Matched pairs, unmatched truth ids (misses) and unmatched estimate
    indices (false alarms) for one recording.
    """
    pairs: list = field(default_factory=list)
    misses: list = field(default_factory=list)
    false_alarms: list = field(default_factory=list)
    label: str = ''

    @property
    def truth_count(self):
        return len(self.pairs) + len(self.misses)

    @property
    def averages(self):
        return _averages(self.pairs)


def _averages(pairs):
    if not pairs:
        return None
    return {
        'azimuth': float(np.mean([p.az_err_deg for p in pairs])),
        'elevation': float(np.mean([p.el_err_deg for p in pairs])),
        'combined': float(np.mean([p.combined_deg for p in pairs])),
    }


def _as_direction(item):
    return item if isinstance(item, Direction) else item.direction


def _optimal_assignment(cost):
    """Row/column pairs minimizing total cost for a rectangular cost matrix."""
    n_rows, n_cols = cost.shape
    if min(n_rows, n_cols) == 0:
        return []
    if max(n_rows, n_cols) > EXHAUSTIVE_LIMIT:
        rows, cols = linear_sum_assignment(cost)
        return list(zip(rows.tolist(), cols.tolist()))

    if n_rows <= n_cols:
        best = min(permutations(range(n_cols), n_rows),
                   key=lambda cols: sum(cost[r, c] for r, c in enumerate(cols)))
        return list(enumerate(best))
    best = min(permutations(range(n_rows), n_cols),
               key=lambda rows: sum(cost[r, c] for c, r in enumerate(rows)))
    return sorted((r, c) for c, r in enumerate(best))


def match_sources(estimates, truth, gate_deg=DEFAULT_GATE_DEG, source_ids=None):
    """
    One-to-one assignment of estimates to truth directions. Pairs further
    apart than gate_deg cannot match, so the assignment first maximizes the
    number of matches and then minimizes their total combined error.

    estimates may be DoaEstimate objects or Directions; source_ids default
    to 1..len(truth).
    """
    est_dirs = [_as_direction(e) for e in estimates]
    truth_dirs = [_as_direction(t) for t in truth]
    ids = list(source_ids) if source_ids is not None else list(range(1, len(truth_dirs) + 1))
    cost = np.array([[combined_error(e, t) for t in truth_dirs] for e in est_dirs]).reshape(
        len(est_dirs), len(truth_dirs))

    # any out-of-gate pair costs more than every in-gate pair together
    gated = np.where(cost > gate_deg, (min(cost.shape) + 1) * gate_deg + 1.0, cost)

    report = MetricsReport()
    matched_est, matched_truth = set(), set()
    for e, t in _optimal_assignment(gated):
        if cost[e, t] > gate_deg:
            continue
        est, ref = est_dirs[e], truth_dirs[t]
        report.pairs.append(MatchedPair(
            source_id=ids[t],
            estimate_index=e,
            az_err_deg=azimuth_error(est.azimuth, ref.azimuth),
            el_err_deg=abs(est.inclination - ref.inclination),
            combined_deg=float(cost[e, t]),
        ))
        matched_est.add(e)
        matched_truth.add(t)

    report.pairs.sort(key=lambda p: p.source_id)
    report.misses = [ids[t] for t in range(len(truth_dirs)) if t not in matched_truth]
    report.false_alarms = [e for e in range(len(est_dirs)) if e not in matched_est]
    if report.misses or report.false_alarms:
        logger.info(f"{len(report.misses)} missed sources, {len(report.false_alarms)} false alarms "
                    f"(gate {gate_deg} deg)")
    return report


def summarize(reports):
    """
    Unweighted means over all matched pairs of all reports; misses do not
    enter the means. Averages are None when nothing matched.
    """
    pairs = [p for r in reports for p in r.pairs]
    return {
        'averages': _averages(pairs),
        'matched': len(pairs),
        'misses': sum(len(r.misses) for r in reports),
        'false_alarms': sum(len(r.false_alarms) for r in reports),
    }


def report_frame(reports):
    """One row per truth source (misses as NaN) plus an Avg row."""
    rows = []
    for index, report in enumerate(reports, start=1):
        label = report.label or str(index)
        by_id = {p.source_id: p for p in report.pairs}
        for source_id in sorted(list(by_id) + list(report.misses)):
            pair = by_id.get(source_id)
            rows.append({
                'recording': label,
                'source_id': source_id,
                'azimuth_deg': pair.az_err_deg if pair else np.nan,
                'elevation_deg': pair.el_err_deg if pair else np.nan,
                'combined_deg': pair.combined_deg if pair else np.nan,
            })
    averages = summarize(reports)['averages'] or {}
    rows.append({
        'recording': 'Avg',
        'source_id': np.nan,
        'azimuth_deg': averages.get('azimuth', np.nan),
        'elevation_deg': averages.get('elevation', np.nan),
        'combined_deg': averages.get('combined', np.nan),
    })
    frame = pd.DataFrame(rows, columns=['recording', 'source_id', 'azimuth_deg',
                                        'elevation_deg', 'combined_deg'])
    frame['source_id'] = frame['source_id'].astype('Int64')
    return frame


def format_table(reports):
    """Aligned text table with one decimal; misses rendered as '---'."""
    frame = report_frame(reports)
    text = frame.astype(object).where(frame.notna(), MISSING)
    for column in ('azimuth_deg', 'elevation_deg', 'combined_deg'):
        text[column] = [value if value == MISSING else f"{value:.1f}" for value in text[column]]
    text.loc[text['recording'] == 'Avg', 'source_id'] = ''
    summary = summarize(reports)
    footer = f"\nmatched={summary['matched']} misses={summary['misses']} false_alarms={summary['false_alarms']}"
    return text.to_string(index=False) + footer


def write_report_csv(path, reports):
    try:
        report_frame(reports).to_csv(path, index=False, float_format='%.4f')
    except OSError as e:
        raise DoaIOError(f"Could not write report to {path}: {e}")


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise ConfigError(f"Elevation convention must be one of {CONVENTIONS}, got '{convention}'")


def direction_from_columns(az_deg, el_deg, convention=ELEVATION):
    _check_convention(convention)
    if convention == ELEVATION:
        return Direction.from_elevation(az_deg, el_deg)
    return Direction(az_deg, el_deg)


def _read_csv(path, required, **kwargs):
    try:
        frame = pd.read_csv(path, **kwargs)
    except FileNotFoundError:
        raise DoaIOError(f"File not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError) as e:
        logger.error(f"Failed to parse {path}: {str(e)}")
        raise DoaIOError(f"Could not parse {path}: {e}")
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DoaIOError(f"{path} is missing columns {missing}")
    numeric = frame[required].apply(pd.to_numeric, errors='coerce')
    if numeric.isna().any().any():
        raise DoaIOError(f"{path} has empty or non-numeric values in {required}")
    return numeric


def read_truth_csv(path, convention=ELEVATION):
    """Ground truth as (source_ids, directions)."""
    _check_convention(convention)
    frame = _read_csv(path, ['source_id', 'az_deg', 'el_deg'])
    return frame['source_id'].astype(int).tolist(), _directions(path, frame, convention)


def _directions(path, frame, convention):
    try:
        return [direction_from_columns(a, e, convention)
                for a, e in zip(frame['az_deg'], frame['el_deg'])]
    except GeometryError as e:
        raise DoaIOError(f"Invalid direction in {path}: {e}")


def read_estimates_csv(path, convention=None):
    """
    Estimates written by write_estimates_csv, as Directions ordered by rank.
    The convention recorded in the file header wins unless one is given.
    """
    header_convention = None
    try:
        with open(path) as handle:
            first = handle.readline()
    except OSError as e:
        raise DoaIOError(f"Could not read {path}: {e}")
    if first.startswith('#'):
        fields = dict(token.split('=', 1) for token in first[1:].split() if '=' in token)
        header_convention = fields.get('elevation_convention')

    convention = convention or header_convention or ELEVATION
    _check_convention(convention)
    frame = _read_csv(path, ['rank', 'az_deg', 'el_deg'], comment='#')
    return _directions(path, frame.sort_values('rank', kind='stable'), convention)
