"""2D toy datasets (four-Gaussian mixture, two rings, Swiss roll) and the
point-set CSV format shared by datasets, chains and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DataIOError, ParseError
from .models import corner_mog

KINDS = ("mog4", "rings", "roll")


@dataclass
class SampleSet:
    points: np.ndarray
    chain_id: np.ndarray | None = None
    step: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ConfigError("points must be a 2D array")
        for name in ("chain_id", "step"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=np.int64)
                if col.shape != (len(self.points),):
                    raise ConfigError(f"{name} column length does not match the points")
                setattr(self, name, col)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass
class DatasetSpec:
    kind: str = "mog4"
    n: int = 10000
    seed: int = 0
    sigma_g: float = 0.2
    r1: float = 0.5
    r2: float = 1.0
    ring_jitter: float = 0.025
    roll_t_min: float = 1.5 * np.pi
    roll_t_max: float = 4.5 * np.pi
    roll_scale: float = 1.0
    roll_jitter: float = 0.025

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.sigma_g <= 0 or self.r1 <= 0 or self.r2 <= 0 or self.roll_scale <= 0:
            raise ConfigError("scale parameters must be positive")
        if self.ring_jitter < 0 or self.roll_jitter < 0:
            raise ConfigError("jitter must be nonnegative")
        if not 0 < self.roll_t_min < self.roll_t_max:
            raise ConfigError("need 0 < roll_t_min < roll_t_max")
        return self

    def to_dict(self):
        return asdict(self)


def generate(spec: DatasetSpec, rng: np.random.Generator | None = None) -> SampleSet:
    """Draw ``spec.n`` points; uses ``default_rng(spec.seed)`` unless an rng is given."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = spec.n
    if spec.kind == "mog4":
        pts = corner_mog(spec.sigma_g).sample(n, rng)
    elif spec.kind == "rings":
        radius = np.where(rng.random(n) < 0.5, spec.r1, spec.r2)
        angle = rng.uniform(0.0, 2.0 * np.pi, n)
        radius = radius + spec.ring_jitter * rng.standard_normal(n) if spec.ring_jitter else radius
        pts = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    else:
        t = rng.uniform(spec.roll_t_min, spec.roll_t_max, n)
        pts = spec.roll_scale * np.column_stack([t * np.cos(t), t * np.sin(t)]) / spec.roll_t_max
        if spec.roll_jitter:
            pts = pts + spec.roll_jitter * rng.standard_normal((n, 2))
    return SampleSet(pts, meta={"dataset": spec.to_dict()})


def save_csv(samples: SampleSet, path):
    """Header ``x1..xd[,chain_id,step]``; floats written with 17 significant digits."""
    cols = [f"x{i + 1}" for i in range(samples.dim)]
    extra = samples.chain_id is not None and samples.step is not None
    if extra:
        cols += ["chain_id", "step"]
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for i, row in enumerate(samples.points):
                vals = ["%.17g" % v for v in row]
                if extra:
                    vals += [str(int(samples.chain_id[i])), str(int(samples.step[i]))]
                fh.write(",".join(vals) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def load_csv(path) -> SampleSet:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError("missing header", line=1)
    header = [h.strip() for h in rows[0]]
    has_extra = header[-2:] == ["chain_id", "step"]
    xcols = header[:-2] if has_extra else header
    if not xcols or xcols != [f"x{i + 1}" for i in range(len(xcols))]:
        raise ParseError(f"bad header {','.join(header)!r}", line=1)
    d = len(xcols)
    pts, cid, stp = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            pts.append([float(v) for v in row[:d]])
            if has_extra:
                cid.append(int(row[d]))
                stp.append(int(row[d + 1]))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    points = np.array(pts, dtype=np.float64).reshape(len(pts), d)
    if has_extra:
        return SampleSet(points, np.array(cid, dtype=np.int64), np.array(stp, dtype=np.int64))
    return SampleSet(points)
