"""User-attribute records: CSV I/O, min-max scaling, splitting and sharding.

Features are held as an (N, 12) float64 matrix plus an integer label vector;
`FeatureRecord` is the row-level view used for CSV round trips and for
scoring single requests.
"""
from __future__ import annotations

import configparser
import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEATURE_COLUMNS = (
    "profession",
    "num_requests",
    "request_type",
    "data_limit",
    "historical_data",
    "leaked_records",
    "leak_count",
    "leak_frequency",
    "data_retention",
    "leak_ratio",
    "user_type",
    "leak_channel",
)
LABEL_COLUMN = "class"
HEADER = FEATURE_COLUMNS + (LABEL_COLUMN,)
REAL_COLUMNS = frozenset({"leak_ratio"})

MALICIOUS, NON_MALICIOUS, UNKNOWN = 1, 2, 3
CLASS_NAMES = {MALICIOUS: "malicious", NON_MALICIOUS: "non_malicious", UNKNOWN: "unknown"}


class DatasetError(ValueError):
    """Malformed dataset file or invalid dataset operation."""


@dataclass(frozen=True)
class FeatureRecord:
    profession: float
    num_requests: float
    request_type: float
    data_limit: float
    historical_data: float
    leaked_records: float
    leak_count: float
    leak_frequency: float
    data_retention: float
    leak_ratio: float
    user_type: float
    leak_channel: float
    class_label: int = NON_MALICIOUS

    def features(self) -> np.ndarray:
        return np.array(astuple(self)[:-1], dtype=np.float64)

    @classmethod
    def from_features(cls, values: Sequence[float], class_label: int = NON_MALICIOUS) -> "FeatureRecord":
        if len(values) != len(FEATURE_COLUMNS):
            raise DatasetError(f"expected {len(FEATURE_COLUMNS)} features, got {len(values)}")
        return cls(*(float(v) for v in values), class_label=int(class_label))


assert tuple(f.name for f in fields(FeatureRecord))[:-1] == FEATURE_COLUMNS


@dataclass(frozen=True)
class NormStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return np.array_equal(self.minimum, other.minimum) and np.array_equal(self.maximum, other.maximum)

    def apply(self, features: np.ndarray) -> np.ndarray:
        """Min-max scale; constant columns (max == min) map to 0."""
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        out = (np.asarray(features, dtype=np.float64) - self.minimum) / safe
        return np.where(span > 0, out, 0.0)

    def invert(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * (self.maximum - self.minimum) + self.minimum


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    stats: NormStats | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True).reshape(-1, len(FEATURE_COLUMNS))
        y = np.array(self.labels, dtype=np.int64, copy=True).ravel()
        if x.shape[0] != y.size:
            raise DatasetError(f"{x.shape[0]} feature rows but {y.size} labels")
        if y.size and not np.isin(y, (1, 2, 3)).all():
            raise DatasetError("class labels must be 1, 2 or 3")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def normalized(self) -> bool:
        return self.stats is not None

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.stats)

    def records(self) -> list[FeatureRecord]:
        return [FeatureRecord.from_features(row, int(c)) for row, c in zip(self.features, self.labels)]

    @classmethod
    def from_records(cls, records: Iterable[FeatureRecord]) -> "Dataset":
        records = list(records)
        if not records:
            return cls(np.empty((0, len(FEATURE_COLUMNS))), np.empty(0, dtype=np.int64))
        return cls(np.stack([r.features() for r in records]), [r.class_label for r in records])

    def class_counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in (1, 2, 3)}


# --- CSV ---------------------------------------------------------------------

def _format_value(column: str, value: float, normalized: bool) -> str:
    if normalized or column in REAL_COLUMNS or not float(value).is_integer():
        return repr(float(value))
    return str(int(value))


def to_csv_text(data: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for row, label in zip(data.features, data.labels):
        writer.writerow(
            [_format_value(c, v, data.normalized) for c, v in zip(FEATURE_COLUMNS, row)] + [int(label)]
        )
    return buf.getvalue()


def save_csv(data: Dataset, path: str | Path) -> None:
    Path(path).write_text(to_csv_text(data), encoding="utf-8")


def load_csv(path: str | Path) -> Dataset:
    """Parse a dataset CSV; errors name the offending line."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, expected header") from None
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in HEADER]
        if unknown:
            raise DatasetError(f"{path}: unknown column(s) {unknown}")
        missing = [h for h in HEADER if h not in header]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {missing}")
        order = [header.index(h) for h in HEADER]
        rows: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(row[i]) for i in order[:-1]]
                label_text = row[order[-1]].strip()
                label = int(float(label_text))
            except ValueError as exc:
                raise DatasetError(f"{path}:{line_no}: malformed value ({exc})") from None
            if not np.all(np.isfinite(values)):
                raise DatasetError(f"{path}:{line_no}: non-finite feature value")
            if label not in (1, 2, 3) or float(label_text) != label:
                raise DatasetError(f"{path}:{line_no}: class {label_text!r} not in {{1,2,3}}")
            rows.append(values)
            labels.append(label)
    features = np.array(rows, dtype=np.float64).reshape(-1, len(FEATURE_COLUMNS))
    return Dataset(features, np.array(labels, dtype=np.int64))


# --- transforms --------------------------------------------------------------

def compute_stats(data: Dataset) -> NormStats:
    if len(data) == 0:
        raise DatasetError("cannot compute normalization stats of an empty dataset")
    return NormStats(data.features.min(axis=0), data.features.max(axis=0))


def normalize(data: Dataset, stats: NormStats | None = None) -> Dataset:
    """Scale every feature column to [0, 1] by its min and max.

    Pass `stats` to reuse bounds fitted elsewhere; the result then records
    those stats and values may fall outside [0, 1].
    """
    if data.normalized:
        raise DatasetError("dataset is already normalized")
    if len(data) == 0:
        raise DatasetError("cannot normalize an empty dataset")
    stats = stats or compute_stats(data)
    return Dataset(stats.apply(data.features), data.labels, stats)


def denormalize(data: Dataset) -> Dataset:
    if not data.normalized:
        raise DatasetError("dataset is not normalized")
    return Dataset(data.stats.invert(data.features), data.labels)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise DatasetError("train_fraction must lie strictly between 0 and 1")


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first round(fraction * N) rows train."""
    n = len(data)
    if n < 5:
        raise DatasetError(f"need at least 5 records to split, got {n}")
    n_train = int(np.floor(spec.train_fraction * n + 0.5))
    order = np.random.default_rng(spec.seed).permutation(n)
    return data.take(order[:n_train]), data.take(order[n_train:])


def shard_sizes(n: int, num_clients: int) -> list[int]:
    base, extra = divmod(n, num_clients)
    return [base + 1 if i < extra else base for i in range(num_clients)]


def partition(data: Dataset, num_clients: int, seed: int) -> list[Dataset]:
    """Deal records into near-equal shards; the first N mod k shards get one extra.

    Assignment is a seeded permutation, but each shard keeps the records in
    their original relative order, so a single client holds `data` unchanged.
    """
    n = len(data)
    if num_clients < 1:
        raise DatasetError("num_clients must be at least 1")
    if n < num_clients:
        raise DatasetError(f"{num_clients} clients but only {n} records")
    order = np.random.default_rng(seed).permutation(n)
    shards = []
    start = 0
    for size in shard_sizes(n, num_clients):
        shards.append(data.take(np.sort(order[start:start + size])))
        start += size
    return shards


# --- synthetic generator ----------------------------------------------------

@dataclass(frozen=True)
class FeatureDist:
    """``int LO HI`` (uniform integers, inclusive), ``real LO HI`` (uniform,
    one decimal) or ``flag P`` (Bernoulli)."""

    kind: str
    a: float
    b: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "FeatureDist":
        parts = text.split()
        try:
            if parts[0] == "flag" and len(parts) == 2:
                p = float(parts[1])
                if not 0 <= p <= 1:
                    raise ValueError("probability outside [0, 1]")
                return cls("flag", p)
            if parts[0] in ("int", "real") and len(parts) == 3:
                lo, hi = float(parts[1]), float(parts[2])
                if hi < lo or lo < 0:
                    raise ValueError("need 0 <= LO <= HI")
                return cls(parts[0], lo, hi)
        except (ValueError, IndexError) as exc:
            raise DatasetError(f"bad distribution {text!r}: {exc}") from None
        raise DatasetError(f"bad distribution {text!r}")

    def __str__(self) -> str:
        if self.kind == "flag":
            return f"flag {self.a:g}"
        return f"{self.kind} {self.a:g} {self.b:g}"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "flag":
            return (rng.random(n) < self.a).astype(np.float64)
        if self.kind == "int":
            return rng.integers(int(self.a), int(self.b), size=n, endpoint=True).astype(np.float64)
        return np.round(rng.uniform(self.a, self.b, size=n), 1)


# Malicious users leak more, more often, through more channels; unknown users
# mostly lack history. Ranges overlap so the classes are separable but not trivially.
DEFAULT_GENERATOR = {
    MALICIOUS: {
        "profession": "int 1 6",
        "num_requests": "int 60 320",
        "request_type": "int 1 5",
        "data_limit": "int 10 40",
        "historical_data": "flag 0.85",
        "leaked_records": "flag 0.9",
        "leak_count": "int 3 12",
        "leak_frequency": "int 6 20",
        "data_retention": "int 4 14",
        "leak_ratio": "real 3 25",
        "user_type": "int 1 2",
        "leak_channel": "int 2 5",
    },
    NON_MALICIOUS: {
        "profession": "int 1 6",
        "num_requests": "int 20 320",
        "request_type": "int 1 5",
        "data_limit": "int 10 40",
        "historical_data": "flag 0.85",
        "leaked_records": "flag 0.1",
        "leak_count": "int 0 4",
        "leak_frequency": "int 0 8",
        "data_retention": "int 1 10",
        "leak_ratio": "real 0 5",
        "user_type": "int 0 2",
        "leak_channel": "int 0 3",
    },
    UNKNOWN: {
        "profession": "int 1 6",
        "num_requests": "int 1 120",
        "request_type": "int 1 5",
        "data_limit": "int 10 40",
        "historical_data": "flag 0.1",
        "leaked_records": "flag 0.3",
        "leak_count": "int 0 6",
        "leak_frequency": "int 0 10",
        "data_retention": "int 0 6",
        "leak_ratio": "real 0 8",
        "user_type": "int 0 1",
        "leak_channel": "int 0 4",
    },
}


@dataclass(frozen=True)
class GeneratorConfig:
    distributions: dict[int, dict[str, FeatureDist]]
    seed: int | None = None
    mix: tuple[float, float, float] | None = None

    @classmethod
    def default(cls) -> "GeneratorConfig":
        return cls({c: {k: FeatureDist.parse(v) for k, v in d.items()} for c, d in DEFAULT_GENERATOR.items()})

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorConfig":
        """Read ``key = value`` lines; keys are ``seed``, ``mix`` or ``<class>.<feature>``.

        Class names are ``malicious``, ``non_malicious`` and ``unknown``;
        features not mentioned keep their default distribution.
        """
        cfg = read_key_values(path)
        base = cls.default()
        dists = {c: dict(d) for c, d in base.distributions.items()}
        by_name = {name: code for code, name in CLASS_NAMES.items()}
        seed = mix = None
        for key, value in cfg.items():
            if key == "seed":
                seed = int(value)
            elif key == "mix":
                mix = parse_mix(value)
            else:
                cls_name, _, feature = key.partition(".")
                if cls_name not in by_name or feature not in FEATURE_COLUMNS:
                    raise DatasetError(f"{path}: unknown generator key {key!r}")
                dists[by_name[cls_name]][feature] = FeatureDist.parse(value)
        return cls(dists, seed, mix)

    def dump(self) -> str:
        lines = []
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        if self.mix is not None:
            lines.append("mix = " + ",".join(f"{m:g}" for m in self.mix))
        for code in (1, 2, 3):
            for feature in FEATURE_COLUMNS:
                lines.append(f"{CLASS_NAMES[code]}.{feature} = {self.distributions[code][feature]}")
        return "\n".join(lines) + "\n"


def read_key_values(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file, ``#`` comments allowed, no sections."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string("[_]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise DatasetError(f"{path}: {exc}") from None
    return dict(parser["_"])


def parse_mix(text: str | Sequence[float]) -> tuple[float, float, float]:
    try:
        parts = [float(p) for p in (text.split(",") if isinstance(text, str) else text)]
    except ValueError:
        raise DatasetError(f"class mix {text!r} is not three numbers") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
        raise DatasetError(f"class mix must be three non-negative ratios summing to 1, got {text!r}")
    return tuple(parts)


def class_counts_for(n: int, mix: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n labels; ties go to the lower class."""
    raw = [n * m for m in mix]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def synthesize(
    n: int,
    seed: int,
    mix: Sequence[float] = (0.3, 0.5, 0.2),
    config: GeneratorConfig | None = None,
) -> Dataset:
    """Class-conditional synthetic records with exactly apportioned labels."""
    if n < 1:
        raise DatasetError("n must be positive")
    mix = parse_mix(mix)
    config = config or GeneratorConfig.default()
    rng = np.random.default_rng(seed)
    counts = class_counts_for(n, mix)
    labels = rng.permutation(np.repeat(np.array([1, 2, 3]), counts))
    features = np.zeros((n, len(FEATURE_COLUMNS)))
    for code in (1, 2, 3):
        rows = np.flatnonzero(labels == code)
        for j, name in enumerate(FEATURE_COLUMNS):
            features[rows, j] = config.distributions[code][name].sample(rng, rows.size)
    return Dataset(features, labels)
