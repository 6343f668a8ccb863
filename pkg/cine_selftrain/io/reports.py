"""Report writers: CSV tables, versioned JSON documents and SVG line plots.

Every writer is deterministic: the same input gives byte-identical files.
Timestamps only ever appear in the run manifest.

CSV columns
-----------

flags
    ``subject_id, frame_index, structure, volume_outlier, multi_component,
    flagged``
temporal
    ``subject_id, structure, frame_index, volume_mm3, dice_std,
    extreme_count``; one row per frame, the last two columns repeated
temporal summary
    ``structure, dice_std_mean, dice_std_std, extreme_count_mean,
    extreme_count_std``
metrics
    ``scope, subject_id, frame_index, structure, dice, hd95, assd``; ``frame``
    rows first, then one ``mean`` and one ``std`` row per structure
benchmark
    ``variant, structure, dice_mean, dice_std, hd95_mean, hd95_std,
    assd_mean, assd_std``
flagged fractions
    ``iteration`` followed by one column per structure

Undefined values are written as empty cells in CSV and ``null`` in JSON.
"""

import csv
import dataclasses
import json
import os
import xml.etree.ElementTree as ET
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from cine_selftrain.benchmark import BenchmarkResult
from cine_selftrain.errors import InsufficientData
from cine_selftrain.grid import STRUCTURES, StructureId
from cine_selftrain.metrics.evaluation import FrameMetrics, MetricSummary
from cine_selftrain.qc import FlagReason, FrameFlags
from cine_selftrain.selftrain import IterationReport
from cine_selftrain.temporal import TemporalReport, TemporalSummary
from cine_selftrain.utils.statistics import MeanStd

REPORT_SCHEMA_VERSION = 1

FLAG_COLUMNS = (
    'subject_id',
    'frame_index',
    'structure',
    'volume_outlier',
    'multi_component',
    'flagged',
)
TEMPORAL_COLUMNS = (
    'subject_id',
    'structure',
    'frame_index',
    'volume_mm3',
    'dice_std',
    'extreme_count',
)
TEMPORAL_SUMMARY_COLUMNS = (
    'structure',
    'dice_std_mean',
    'dice_std_std',
    'extreme_count_mean',
    'extreme_count_std',
)
METRIC_COLUMNS = (
    'scope',
    'subject_id',
    'frame_index',
    'structure',
    'dice',
    'hd95',
    'assd',
)
BENCHMARK_COLUMNS = (
    'variant',
    'structure',
    'dice_mean',
    'dice_std',
    'hd95_mean',
    'hd95_std',
    'assd_mean',
    'assd_std',
)

#: Line colours of the structures in SVG plots.
PALETTE = {
    StructureId.LV_MYO: '#1f77b4',
    StructureId.LV: '#d62728',
    StructureId.RV: '#2ca02c',
    StructureId.LA: '#ff7f0e',
    StructureId.RA: '#9467bd',
    StructureId.AORTA: '#8c564b',
    StructureId.PULMONARY_ARTERY: '#e377c2',
}


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _require(items: Sequence, what: str) -> None:
    if not items:
        raise InsufficientData(f"Refusing to write an empty {what} report")


def write_csv(
    path: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]
) -> None:
    _require(rows, 'CSV')
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_json(path: str, kind: str, payload: Mapping[str, Any]) -> None:
    document = {'schema_version': REPORT_SCHEMA_VERSION, 'kind': kind}
    document.update(payload)
    with open(path, 'w') as f:
        json.dump(document, f, indent=2)
        f.write('\n')


def _moments(m: Optional[MeanStd]) -> Tuple[Optional[float], Optional[float]]:
    return (None, None) if m is None else (m.mean, m.std)


def _moments_json(m: Optional[MeanStd]) -> Optional[Dict[str, Any]]:
    if m is None:
        return None
    return {'mean': m.mean, 'std': m.std, 'count': m.count}


# Flags


def flag_rows(frame_flags: Sequence[FrameFlags]) -> List[Tuple]:
    return [
        (
            frame.subject_id,
            frame.frame_index,
            result.structure.label,
            FlagReason.VOLUME_OUTLIER in result.reasons,
            FlagReason.MULTI_COMPONENT in result.reasons,
            result.flagged,
        )
        for frame in frame_flags
        for result in frame.results
    ]


def write_flags_csv(path: str, frame_flags: Sequence[FrameFlags]) -> None:
    write_csv(path, FLAG_COLUMNS, flag_rows(frame_flags))


def write_flags_json(
    path: str,
    frame_flags: Sequence[FrameFlags],
    fractions: Mapping[StructureId, float],
) -> None:
    _require(frame_flags, 'flag')
    write_json(
        path,
        'flags',
        {
            'flagged_fractions': {s.label: f for s, f in fractions.items()},
            'frames': [
                {
                    'subject_id': frame.subject_id,
                    'frame_index': frame.frame_index,
                    'flags': {
                        r.structure.label: sorted(x.value for x in r.reasons)
                        for r in frame.results
                    },
                }
                for frame in frame_flags
            ],
        },
    )


# Temporal consistency


def temporal_rows(reports: Sequence[TemporalReport]) -> List[Tuple]:
    rows = []
    for report in reports:
        for s in STRUCTURES:
            entry = report.structures[s]
            for t, volume in enumerate(entry.curve.values):
                rows.append(
                    (
                        report.subject_id,
                        s.label,
                        t,
                        float(volume),
                        entry.dice_std,
                        entry.extreme_count,
                    )
                )
    return rows


def write_temporal_csv(path: str, reports: Sequence[TemporalReport]) -> None:
    write_csv(path, TEMPORAL_COLUMNS, temporal_rows(reports))


def write_temporal_json(path: str, reports: Sequence[TemporalReport]) -> None:
    _require(reports, 'temporal')
    write_json(
        path,
        'temporal',
        {
            'studies': [
                {
                    'subject_id': report.subject_id,
                    'structures': {
                        s.label: {
                            'volume_mm3': [
                                float(v) for v in entry.curve.values
                            ],
                            'dice_std': entry.dice_std,
                            'extreme_count': entry.extreme_count,
                        }
                        for s, entry in report.structures.items()
                    },
                }
                for report in reports
            ]
        },
    )


def write_temporal_summary_csv(
    path: str, summary: Mapping[StructureId, TemporalSummary]
) -> None:
    rows = [
        (s.label, *_moments(entry.dice_std), *_moments(entry.extreme_count))
        for s, entry in summary.items()
    ]
    write_csv(path, TEMPORAL_SUMMARY_COLUMNS, rows)


# Accuracy against reference labels


def metric_rows(
    rows: Sequence[FrameMetrics],
    summary: Mapping[StructureId, MetricSummary],
) -> List[Tuple]:
    table: List[Tuple] = [
        ('frame', r.subject_id, r.frame_index, r.structure.label)
        + (r.dice, r.hd95, r.assd)
        for r in rows
    ]
    for s, entry in summary.items():
        moments = [_moments(m) for m in (entry.dice, entry.hd95, entry.assd)]
        table.append(('mean', '', '', s.label) + tuple(m[0] for m in moments))
        table.append(('std', '', '', s.label) + tuple(m[1] for m in moments))
    return table


def write_metrics_csv(
    path: str,
    rows: Sequence[FrameMetrics],
    summary: Mapping[StructureId, MetricSummary],
) -> None:
    _require(rows, 'metrics')
    write_csv(path, METRIC_COLUMNS, metric_rows(rows, summary))


def summary_json(
    summary: Mapping[StructureId, MetricSummary],
) -> Dict[str, Any]:
    return {
        s.label: {
            'dice': _moments_json(entry.dice),
            'hd95': _moments_json(entry.hd95),
            'assd': _moments_json(entry.assd),
        }
        for s, entry in summary.items()
    }


def write_metrics_json(
    path: str,
    rows: Sequence[FrameMetrics],
    summary: Mapping[StructureId, MetricSummary],
) -> None:
    _require(rows, 'metrics')
    write_json(
        path,
        'metrics',
        {
            'summary': summary_json(summary),
            'frames': [
                {
                    'subject_id': r.subject_id,
                    'frame_index': r.frame_index,
                    'structure': r.structure.label,
                    'dice': r.dice,
                    'hd95': r.hd95,
                    'assd': r.assd,
                }
                for r in rows
            ],
        },
    )


def write_benchmark_csv(path: str, result: BenchmarkResult) -> None:
    rows = [
        (variant.value, s.label)
        + _moments(entry.dice)
        + _moments(entry.hd95)
        + _moments(entry.assd)
        for variant, per_structure in result.summaries.items()
        for s, entry in per_structure.items()
    ]
    write_csv(path, BENCHMARK_COLUMNS, rows)


# Iteration curves


def write_flagged_fractions_csv(
    path: str, reports: Sequence[IterationReport]
) -> None:
    rows = [
        (report.iteration,)
        + tuple(report.flagged_fractions.get(s) for s in STRUCTURES)
        for report in reports
    ]
    write_csv(path, ('iteration',) + tuple(s.label for s in STRUCTURES), rows)


# SVG


@dataclasses.dataclass(frozen=True)
class Series:
    """One polyline: a name, a colour and its ``(x, y)`` points.

    `visit` names the study the points were measured on, if they come from
    one.
    """

    name: str
    color: str
    points: Sequence[Tuple[float, float]]
    visit: Optional[str] = None


_WIDTH, _HEIGHT = 640, 400
_MARGIN_LEFT, _MARGIN_RIGHT = 70, 150
_MARGIN_TOP, _MARGIN_BOTTOM = 40, 50


def _range(values: Sequence[float]) -> Tuple[float, float]:
    low, high = min(values), max(values)
    if low == high:
        return low - 1.0, high + 1.0
    return low, high


def _fmt(value: float) -> str:
    return f'{value:.2f}'


def write_svg_curves(
    path: str,
    series: Sequence[Series],
    x_label: str,
    y_label: str,
    title: str = '',
) -> None:
    """Write a self-contained SVG line plot with one polyline per series.

    Polylines of series that name a visit carry it in a ``data-visit``
    attribute and a ``<title>`` tooltip.

    :raises InsufficientData: If there is no point to plot.
    """
    series = [s for s in series if s.points]
    _require(series, 'SVG')
    xs = [x for s in series for x, _ in s.points]
    ys = [y for s in series for _, y in s.points]
    x0, x1 = _range(xs)
    y0, y1 = _range([min(ys + [0.0])] + ys)
    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def _x(x: float) -> float:
        return _MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w

    def _y(y: float) -> float:
        return _MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h

    svg = ET.Element(
        'svg',
        {
            'xmlns': 'http://www.w3.org/2000/svg',
            'width': str(_WIDTH),
            'height': str(_HEIGHT),
            'viewBox': f'0 0 {_WIDTH} {_HEIGHT}',
        },
    )
    if title:
        ET.SubElement(
            svg,
            'text',
            {'x': str(_WIDTH // 2), 'y': '20', 'text-anchor': 'middle'},
        ).text = title
    bottom, left = _MARGIN_TOP + plot_h, _MARGIN_LEFT
    axes = ET.SubElement(svg, 'g', {'stroke': 'black', 'fill': 'none'})
    ET.SubElement(
        axes,
        'polyline',
        {
            'points': f'{left},{_MARGIN_TOP} {left},{bottom} '
            f'{left + plot_w},{bottom}'
        },
    )
    labels = ET.SubElement(svg, 'g', {'font-size': '12'})
    for value, anchor in ((x0, 'start'), (x1, 'end')):
        ET.SubElement(
            labels,
            'text',
            {
                'x': _fmt(_x(value)),
                'y': str(bottom + 15),
                'text-anchor': anchor,
            },
        ).text = f'{value:g}'
    for value in (y0, y1):
        ET.SubElement(
            labels,
            'text',
            {'x': str(left - 5), 'y': _fmt(_y(value)), 'text-anchor': 'end'},
        ).text = f'{value:g}'
    ET.SubElement(
        labels,
        'text',
        {
            'x': str(left + plot_w // 2),
            'y': str(_HEIGHT - 10),
            'text-anchor': 'middle',
        },
    ).text = x_label
    ET.SubElement(
        labels,
        'text',
        {
            'x': '15',
            'y': str(_MARGIN_TOP + plot_h // 2),
            'text-anchor': 'middle',
            'transform': f'rotate(-90 15 {_MARGIN_TOP + plot_h // 2})',
        },
    ).text = y_label

    for i, s in enumerate(series):
        points = ' '.join(f'{_fmt(_x(x))},{_fmt(_y(y))}' for x, y in s.points)
        attributes = {
            'points': points,
            'fill': 'none',
            'stroke': s.color,
            'stroke-width': '2',
            'data-series': s.name,
        }
        if s.visit is not None:
            attributes['data-visit'] = s.visit
        polyline = ET.SubElement(svg, 'polyline', attributes)
        if s.visit is not None:
            ET.SubElement(polyline, 'title').text = f'{s.visit}: {s.name}'
        legend_y = _MARGIN_TOP + 15 * i
        ET.SubElement(
            labels,
            'text',
            {
                'x': str(left + plot_w + 10),
                'y': str(legend_y),
                'fill': s.color,
            },
        ).text = s.name

    tree = ET.ElementTree(svg)
    ET.indent(tree)
    with open(path, 'wb') as f:
        tree.write(f, encoding='utf-8', xml_declaration=True)


def volume_curve_series(report: TemporalReport) -> List[Series]:
    return [
        Series(
            name=s.label,
            color=PALETTE[s],
            points=[
                (float(t), float(v))
                for t, v in enumerate(report.structures[s].curve.values)
            ],
            visit=report.subject_id,
        )
        for s in STRUCTURES
    ]


def write_volume_curves_svg(path: str, report: TemporalReport) -> None:
    """Volume of every structure over the frames of one study."""
    write_svg_curves(
        path,
        volume_curve_series(report),
        x_label='frame index',
        y_label='volume (mm³)',
        title=report.subject_id,
    )


def write_flagged_fractions_svg(
    path: str, reports: Sequence[IterationReport]
) -> None:
    """Flagged fraction of every structure over the iterations."""
    series = [
        Series(
            name=s.label,
            color=PALETTE[s],
            points=[
                (float(r.iteration), r.flagged_fractions[s])
                for r in reports
                if s in r.flagged_fractions
            ],
        )
        for s in STRUCTURES
    ]
    write_svg_curves(
        path,
        series,
        x_label='iteration',
        y_label='fraction of flagged segmentations',
    )


# Whole iterations


def write_iteration_report(directory: str, report: IterationReport) -> None:
    """Write every table and plot of one iteration into `directory`.

    Tables the iteration has no data for are skipped.
    """
    os.makedirs(directory, exist_ok=True)
    if report.frame_flags:
        write_flags_csv(
            os.path.join(directory, 'flags.csv'), report.frame_flags
        )
        write_flags_json(
            os.path.join(directory, 'flags.json'),
            report.frame_flags,
            report.flagged_fractions,
        )
    if report.temporal:
        write_temporal_csv(
            os.path.join(directory, 'temporal.csv'), report.temporal
        )
        write_temporal_json(
            os.path.join(directory, 'temporal.json'), report.temporal
        )
        write_temporal_summary_csv(
            os.path.join(directory, 'temporal_summary.csv'),
            report.temporal_summary,
        )
        curves = os.path.join(directory, 'curves')
        os.makedirs(curves, exist_ok=True)
        for temporal in report.temporal:
            write_volume_curves_svg(
                os.path.join(curves, f'{temporal.subject_id}.svg'), temporal
            )
    if report.truth_metrics is not None:
        write_json(
            os.path.join(directory, 'metrics.json'),
            'iteration_metrics',
            {
                'iteration': report.iteration,
                'summary': summary_json(report.truth_metrics),
            },
        )
        rows = [
            (s.label,)
            + _moments(entry.dice)
            + _moments(entry.hd95)
            + _moments(entry.assd)
            for s, entry in report.truth_metrics.items()
        ]
        write_csv(
            os.path.join(directory, 'metrics.csv'),
            BENCHMARK_COLUMNS[1:],
            rows,
        )


# Run manifest


@dataclasses.dataclass
class RunManifest:
    """Provenance of a run directory.

    :param toolkit_version: Version of the package that made the run.
    :param command: The command line of the run.
    :param config: The effective configuration, section by section.
    :param seeds: Every root seed used.
    :param started_at: ISO-8601 UTC start time.
    :param iterations: Label-set hash and wall-clock seconds per iteration.
    :param status: ``running``, ``completed`` or ``failed``.
    """

    toolkit_version: str
    command: List[str]
    config: Dict[str, Dict[str, str]]
    seeds: Dict[str, int]
    started_at: str
    iterations: List[Dict[str, Any]] = dataclasses.field(default_factory=list)
    finished_at: Optional[str] = None
    status: str = 'running'
    error: Optional[str] = None

    FILE_NAME = 'manifest.json'

    def record_iteration(self, report: IterationReport, seconds: float) -> None:
        self.iterations.append(
            {
                'iteration': report.iteration,
                'label_hash': report.label_hash,
                'final_loss': report.final_loss,
                'seconds': seconds,
            }
        )

    def to_dict(self) -> Dict[str, Any]:
        document = {'schema_version': REPORT_SCHEMA_VERSION}
        document.update(
            {
                f.name: getattr(self, f.name)
                for f in dataclasses.fields(self)
            }
        )
        return document

    def write(self, directory: str) -> None:
        with open(os.path.join(directory, self.FILE_NAME), 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write('\n')

    @classmethod
    def read(cls, directory: str) -> 'RunManifest':
        with open(os.path.join(directory, cls.FILE_NAME)) as f:
            document = json.load(f)
        document.pop('schema_version', None)
        return cls(**document)
