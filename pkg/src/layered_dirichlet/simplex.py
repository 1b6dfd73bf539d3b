"""Core compositional types: schemas, closure, count panels, and descriptive stats.

Count vectors live in non-negative integer space; ``close`` maps them onto
the unit simplex, optionally after additive smoothing so that downstream
likelihoods never see a zero part. A :class:`Panel` bundles the count rows
of one analysis together with group labels and row metadata.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import SchemaError

# Canonical column layout for play-by-play style CSV files.  The first five
# columns are metadata; the remaining fourteen are the raw outcome counts.
META_COLUMNS = ("player_id", "season", "age", "bat_hand", "pitch_hand")

RAW14_OUTCOMES = (
    "fb_hr", "fb_triple", "fb_double", "fb_single",
    "gb_hr", "gb_triple", "gb_double", "gb_single",
    "fly_out", "ground_out", "strike_out",
    "interference", "hbp", "bb",
)

SIX_OUTCOMES = ("hr", "triple", "double", "single", "out", "other")

# Which raw columns collapse into each aggregated component.
AGGREGATION_MAP = {
    "hr": ("fb_hr", "gb_hr"),
    "triple": ("fb_triple", "gb_triple"),
    "double": ("fb_double", "gb_double"),
    "single": ("fb_single", "gb_single"),
    "out": ("fly_out", "ground_out", "strike_out"),
    "other": ("interference", "hbp", "bb"),
}

AGE_GROUPS = ("young", "middle", "experienced")


@dataclass(frozen=True)
class ComponentSchema:
    """Ordered, unique component labels of a composition (k >= 2)."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise SchemaError("a composition needs at least two components")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate component labels in {names}")

    @property
    def k(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown component {name!r}") from None


RAW14_SCHEMA = ComponentSchema(RAW14_OUTCOMES)
SIX_SCHEMA = ComponentSchema(SIX_OUTCOMES)


@dataclass(frozen=True)
class AgeGrouping:
    """Age thresholds splitting batters into young / middle / experienced."""

    young_max: int = 26
    experienced_min: int = 35

    def __post_init__(self):
        if self.young_max >= self.experienced_min:
            raise ValueError(
                f"young_max ({self.young_max}) must be below "
                f"experienced_min ({self.experienced_min})"
            )


def assign_age_group(age, grouping: AgeGrouping = AgeGrouping()) -> str:
    """Map an age in years to 'young', 'middle', or 'experienced'."""
    if age <= grouping.young_max:
        return "young"
    if age >= grouping.experienced_min:
        return "experienced"
    return "middle"


def close(counts, smoothing: float = 0.0) -> np.ndarray:
    """Normalize a count vector (or matrix of rows) onto the unit simplex.

    ``smoothing`` is an additive pseudo-count applied to every component
    before normalizing; any positive value guarantees strictly positive
    parts, which the Dirichlet-family likelihoods require.
    """
    counts = np.asarray(counts, dtype=float)
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    k = counts.shape[-1]
    total = counts.sum(axis=-1, keepdims=True) + k * smoothing
    if np.any(total <= 0):
        raise ValueError("cannot close an all-zero count vector without smoothing")
    return (counts + smoothing) / total


def aggregate_raw14(raw) -> np.ndarray:
    """Collapse 14-outcome count vectors into the six analysis components.

    Fly-ball and ground-ball varieties of HR/triple/double/single merge;
    fly outs, ground outs, and strikeouts form 'out'; interference, hit by
    pitch, and walks form 'other'. The total count is preserved exactly.
    """
    raw = np.asarray(raw)
    if raw.shape[-1] != len(RAW14_OUTCOMES):
        raise SchemaError(
            f"expected {len(RAW14_OUTCOMES)} outcome counts, got {raw.shape[-1]}"
        )
    if np.any(raw < 0):
        raise ValueError("counts must be non-negative")
    blocks = [
        [RAW14_OUTCOMES.index(col) for col in AGGREGATION_MAP[name]]
        for name in SIX_OUTCOMES
    ]
    return np.stack([raw[..., idx].sum(axis=-1) for idx in blocks], axis=-1)


@dataclass
class Panel:
    """Count observations sharing one component schema.

    ``counts`` is an (n, k) integer array; ``meta`` holds one dict per row
    with at least the keys in :data:`META_COLUMNS` plus ``age_group``.
    Arrays are frozen after construction, so panels are safe to share
    across threads.
    """

    schema: ComponentSchema
    counts: np.ndarray
    meta: list[dict]
    smoothing: float = 0.5

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[1] != self.schema.k:
            raise SchemaError(
                f"counts must be (n, {self.schema.k}), got {counts.shape}"
            )
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if len(self.meta) != counts.shape[0]:
            raise ValueError("one metadata record is required per row")
        counts = counts.astype(np.int64, copy=True)
        counts.flags.writeable = False
        self.counts = counts

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    def groups(self, by: str = "age_group") -> np.ndarray:
        """Group label of every row, drawn from metadata key ``by``."""
        try:
            return np.array([str(m[by]) for m in self.meta], dtype=object)
        except KeyError:
            raise KeyError(f"metadata key {by!r} missing from panel rows") from None

    def subset(self, mask) -> "Panel":
        mask = np.asarray(mask, dtype=bool)
        meta = [m for m, keep in zip(self.meta, mask) if keep]
        return Panel(self.schema, self.counts[mask], meta, self.smoothing)

    def compositions(self, smoothing: float | None = None) -> np.ndarray:
        """Closed (and by default smoothed) proportions of every row."""
        s = self.smoothing if smoothing is None else smoothing
        return close(self.counts, s)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "schema": list(self.schema.names),
            "smoothing": self.smoothing,
            "rows": [
                {**meta, "counts": [int(c) for c in row]}
                for meta, row in zip(self.meta, self.counts)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Panel":
        schema = ComponentSchema(tuple(obj["schema"]))
        rows = obj["rows"]
        counts = np.array([r["counts"] for r in rows], dtype=np.int64)
        counts = counts.reshape(len(rows), schema.k)
        meta = [{k: v for k, v in r.items() if k != "counts"} for r in rows]
        return cls(schema, counts, meta, float(obj.get("smoothing", 0.5)))


def group_order(labels) -> list[str]:
    """Deterministic display order for group labels.

    Age groups come out young < middle < experienced; anything else is
    sorted lexicographically.
    """
    unique = sorted(set(str(x) for x in labels))
    if set(unique) <= set(AGE_GROUPS):
        return [g for g in AGE_GROUPS if g in unique]
    return unique


def pearson_correlation(
    panel: Panel,
    group: str | None = None,
    group_by: str = "age_group",
    smoothing: float | None = None,
) -> np.ndarray:
    """Pearson correlation matrix of closed component proportions.

    Restricting to one group subsets the rows first. Components with zero
    variance yield undefined correlations, reported as NaN off the
    diagonal; the diagonal is always 1.
    """
    if group is not None:
        panel = panel.subset(panel.groups(group_by) == group)
    if panel.n < 3:
        raise ValueError(
            f"need at least 3 rows to estimate correlations, have {panel.n}"
        )
    x = panel.compositions(smoothing)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (panel.n - 1)
    sd = np.sqrt(np.diag(cov))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[sd == 0, :] = np.nan
    corr[:, sd == 0] = np.nan
    np.fill_diagonal(corr, 1.0)
    # rounding can push |r| fractionally past 1
    return np.clip(corr, -1.0, 1.0, out=corr)


def descriptive_proportions(panel: Panel, by: str = "age_group") -> dict[str, np.ndarray]:
    """Aggregate outcome shares per group: component totals / group total.

    Sums counts over all rows of a group before normalizing, so the result
    describes the group's season-level outcome mix rather than the average
    of per-row compositions.
    """
    labels = panel.groups(by)
    result: dict[str, np.ndarray] = {}
    for g in group_order(labels):
        rows = panel.counts[labels == g]
        total = rows.sum()
        if total <= 0:
            raise ValueError(f"group {g!r} has no recorded outcomes")
        result[g] = rows.sum(axis=0) / total
    return result


@dataclass
class IngestStats:
    """Row accounting for one CSV ingestion pass."""

    rows_read: int = 0
    rows_kept: int = 0
    excluded_min_pa: int = 0
    excluded_season: int = 0
    malformed_lines: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def _parse_count(value: str) -> int:
    n = int(value)
    if n < 0:
        raise ValueError(f"negative count {n}")
    return n


def read_panel_csv(
    path,
    schema: str = "raw14",
    *,
    smoothing: float = 0.5,
    min_pa: int = 20,
    season: int | None = None,
    age_grouping: AgeGrouping = AgeGrouping(),
    strict: bool = False,
) -> tuple[Panel, IngestStats]:
    """Read a plate-appearance CSV into a six-component panel.

    ``schema`` selects the expected outcome columns: ``raw14`` rows are
    aggregated down to the six components, ``six`` rows are taken as-is.
    Rows with totals below ``min_pa`` are dropped and counted; malformed
    rows are skipped with their line numbers recorded unless ``strict``,
    in which case the first one aborts the read.
    """
    if schema == "raw14":
        outcome_cols = RAW14_OUTCOMES
    elif schema == "six":
        outcome_cols = SIX_OUTCOMES
    else:
        raise SchemaError(f"unknown schema {schema!r}; expected 'raw14' or 'six'")

    stats = IngestStats()
    counts_rows: list[np.ndarray] = []
    meta_rows: list[dict] = []

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file (header required)")
        missing = [c for c in (*META_COLUMNS, *outcome_cols) if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        for row in reader:
            stats.rows_read += 1
            line_no = reader.line_num
            try:
                raw = np.array([_parse_count(row[c]) for c in outcome_cols])
                age = int(row["age"])
                if age < 0:
                    raise ValueError(f"negative age {age}")
                row_season = int(row["season"])
            except (ValueError, TypeError) as exc:
                if strict:
                    raise SchemaError(f"{path}:{line_no}: {exc}") from exc
                stats.malformed_lines.append(line_no)
                continue
            if season is not None and row_season != season:
                stats.excluded_season += 1
                continue
            counts = aggregate_raw14(raw) if schema == "raw14" else raw
            if counts.sum() < min_pa:
                stats.excluded_min_pa += 1
                continue
            counts_rows.append(counts)
            meta_rows.append(
                {
                    "player_id": row["player_id"],
                    "season": row_season,
                    "age": age,
                    "bat_hand": row["bat_hand"],
                    "pitch_hand": row["pitch_hand"],
                    "age_group": assign_age_group(age, age_grouping),
                }
            )
    stats.rows_kept = len(counts_rows)
    counts = (
        np.array(counts_rows, dtype=np.int64)
        if counts_rows
        else np.zeros((0, len(SIX_OUTCOMES)), dtype=np.int64)
    )
    panel = Panel(SIX_SCHEMA, counts, meta_rows, smoothing)
    return panel, stats


def panel_to_json_str(panel: Panel, extra: dict | None = None) -> str:
    """Serialize a panel (plus optional extra top-level keys) to stable JSON."""
    obj = panel.to_json()
    if extra:
        obj.update(extra)
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
