"""Rating loaders, train/test splits, metrics CSVs and experiment configs."""
import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .blocks import ObservationMask
from .errors import ConfigError, DataError

FORMATS = ("double_colon", "tsv", "matrix_market")
METRICS_HEADER = ["iter", "time_s", "objective", "rel_error_or_rmse", "restart",
                  "max_gamma", "min_eta", "max_A"]
INFEASIBLE = "infeasible"


# ---------------------------------------------------------------------------
# ratings
# ---------------------------------------------------------------------------

def _remap(ids):
    """Dense 0-based indices in order of first appearance."""
    table = {}
    out = np.empty(len(ids), dtype=np.int64)
    for e, key in enumerate(ids):
        out[e] = table.setdefault(key, len(table))
    return out, list(table)


def _parse_lines(path, sep, min_fields):
    users, items, vals = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(sep) if sep else line.split()
            if len(parts) < min_fields:
                raise DataError(f"{path}:{lineno}: expected at least {min_fields} fields")
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                vals.append(float(parts[2]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return users, items, vals


def _check_duplicates(rows, cols, n, users, items):
    keys = rows * n + cols
    uniq, first, counts = np.unique(keys, return_index=True, return_counts=True)
    if (counts > 1).any():
        e = int(np.sort(first[counts > 1])[0])
        raise DataError(f"duplicate entry for (user {users[e]}, item {items[e]})")


def load_ratings(path, format="double_colon"):
    """Read ratings into an :class:`ObservationMask`.

    ``double_colon``: ``user::item::rating::timestamp`` lines (MovieLens).
    ``tsv``: ``user<TAB>item<TAB>rating`` lines. ``matrix_market``: a
    coordinate Matrix Market file. External ids are remapped to dense
    indices in order of first appearance and kept on the mask as
    ``row_ids`` / ``col_ids``.
    """
    if format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {format!r}")
    path = Path(path)
    if format == "matrix_market":
        import scipy.io
        try:
            coo = scipy.io.mmread(str(path))
        except (ValueError, OSError) as exc:
            raise DataError(f"{path}: {exc}") from None
        if not hasattr(coo, "tocoo"):
            raise DataError(f"{path}: expected a coordinate (sparse) Matrix Market file")
        coo = coo.tocoo()
        users = (coo.row + 1).tolist()
        items = (coo.col + 1).tolist()
        vals = coo.data.astype(np.float64).tolist()
    else:
        sep = "::" if format == "double_colon" else "\t"
        users, items, vals = _parse_lines(path, sep, 4 if format == "double_colon" else 3)
    if not vals:
        raise DataError(f"{path}: no entries")
    rows, row_ids = _remap(users)
    cols, col_ids = _remap(items)
    _check_duplicates(rows, cols, len(col_ids), users, items)
    return ObservationMask(rows, cols, vals, (len(row_ids), len(col_ids)),
                           row_ids=row_ids, col_ids=col_ids)


def save_id_maps(mask, path):
    """Write the external-id tables next to a dataset as JSON."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"row_ids": mask.row_ids, "col_ids": mask.col_ids}, fh)
        fh.write("\n")


def split_train_test(mask, fraction=0.7, seed=0):
    """Random disjoint split with ``floor(fraction * N + 0.5)`` training entries."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    N = mask.nnz
    n_train = int(math.floor(fraction * N + 0.5))
    perm = np.random.default_rng(seed).permutation(N)
    return mask.subset(np.sort(perm[:n_train])), mask.subset(np.sort(perm[n_train:]))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v) and v > 0:
        return INFEASIBLE
    return "%.17g" % v


def _parse(s):
    if s == "":
        return None
    if s == INFEASIBLE:
        return math.inf
    return float(s)


def metrics_rows(log):
    for rec in log.iterations:
        yield [rec.iteration, rec.time_s, rec.F, rec.metric, rec.restart,
               rec.max_gamma, rec.min_eta, rec.max_A]


def write_metrics(log, path):
    """One CSV row per iteration; floats with 17 significant digits.

    An infinite objective (violated constraint) is written as ``infeasible``
    and an unavailable metric as an empty field.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in metrics_rows(log):
            w.writerow([_fmt(v) for v in row])


def read_metrics(path):
    """Parse a metrics CSV into a list of dicts."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise DataError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            rec = dict(zip(header, row))
            parsed = {"iter": int(rec["iter"]), "restart": rec["restart"] == "1"}
            for key in ("time_s", "objective", "rel_error_or_rmse", "max_gamma",
                        "min_eta", "max_A"):
                parsed[key] = _parse(rec[key])
            out.append(parsed)
    return out


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

APPS = ("nmf", "mcp")
NMF_VARIANTS = ("titan", "palm")
MCP_VARIANTS = ("titan_extra", "titan_no", "palm")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a batch of seeded runs.

    Data comes from ``dataset`` (a file read with ``dataset_format``) or from
    ``synthesize`` (keyword arguments of
    :func:`titan.apps.synth.synthesize_instances` without ``kind`` and
    ``seed``). A relative ``dataset`` or ``output_dir`` is resolved against
    the config file's directory.
    """

    app: str
    variant: str
    r: int
    seeds: List[int] = field(default_factory=lambda: [0])
    dataset: Optional[str] = None
    dataset_format: str = "double_colon"
    synthesize: Optional[dict] = None
    s: Optional[int] = None
    kappa: float = 1.0001
    C: float = 0.9999 ** 2
    nu: float = 0.5
    lam: float = 0.1
    theta: float = 5.0
    train_fraction: float = 0.7
    repeats: List[int] = field(default_factory=lambda: [1, 1])
    restart: bool = False
    max_iters: Optional[int] = 100
    time_budget: Optional[float] = None
    stop_tol: Optional[float] = None
    spectral_method: str = "power"
    output_dir: str = "runs"

    def __post_init__(self):
        if self.app not in APPS:
            raise ConfigError(f"app must be one of {APPS}")
        variants = NMF_VARIANTS if self.app == "nmf" else MCP_VARIANTS
        if self.variant not in variants:
            raise ConfigError(f"variant for {self.app} must be one of {variants}")
        if (self.dataset is None) == (self.synthesize is None):
            raise ConfigError("exactly one of dataset / synthesize must be given")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.r < 1:
            raise ConfigError("r must be >= 1")
        if not 0.0 < self.C < 1.0 or not 0.0 < self.nu < 1.0:
            raise ConfigError("C and nu must lie in (0, 1)")
        if self.app == "nmf" and not self.kappa > 1.0:
            raise ConfigError("kappa must exceed 1")
        if self.lam < 0 or not self.theta > 0:
            raise ConfigError("need lam >= 0 and theta > 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if len(self.repeats) != 2 or min(self.repeats) < 1:
            raise ConfigError("repeats must be two positive integers")
        if self.max_iters is None and self.time_budget is None and self.stop_tol is None:
            raise ConfigError("at least one stopping criterion must be set")
        if self.spectral_method not in ("power", "eigh"):
            raise ConfigError("spectral_method must be 'power' or 'eigh'")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig.from_dict(data)


def dump_config(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_config(cfg))
