"""Training database: enumeration, slice resampling, standardization, splits, storage.

A dataset directory holds::

    manifest.jsonl   one SampleRecord per line
    meta.json        scheme, seed and generator settings
    norm.json        NormStats fitted on the training split (or null)
    slices/*.atms    perturbed, standard-grid slices
    gw/*.gwrl        gravity-wave realizations
    labels/*.csv     PE transmission-loss labels
    checksums.txt    SHA-256 of every file above
"""

from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple
import gc
import hashlib
import json
import math
import os

import numpy as np

from .atmosphere import AtmosphericSlice, build_slice
from .errors import ChecksumError, ConfigError, CoverageError, DataError, FormatError, InfraTLError
from .gwfield import GwRealization, GwSpectrumParams, gw_field_2d, perturb_slice
from .pe import PeConfig, TlCurve, resample_tl, solve_tl
from .rng import stream

STD_ALT = np.linspace(0.0, 129_900.0, 433)
STD_RANGE = 100_000.0 * np.arange(40)
DATASET_VERSION = 1
SPLITS = ("train", "val", "test", "generalization")


# ---------------------------------------------------------------------------
# Records and schemes


# a NamedTuple: the full-scale manifest holds 129,600 of these
class SampleRecord(NamedTuple):
    sample_id: str
    slice_id: str
    origin_id: int
    origin: tuple
    direction: int
    bearing_deg: float
    gw_id: int
    azimuth_projection_deg: float
    frequency_hz: float
    split: str | None = None

    @property
    def label(self):
        return "labels/%s.csv" % self.sample_id

    def to_dict(self):
        d = self._asdict()
        d["origin"] = list(self.origin)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["origin"] = tuple(d["origin"])
        return cls(**d)


@dataclass(frozen=True)
class SplitScheme:
    n_holdout_points: int = 12
    n_gw_train: int = 5
    ratios: tuple = (0.7, 0.2, 0.1)

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        object.__setattr__(self, "ratios", r)
        if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError("split ratios %s must be three non-negative numbers summing to 1" % (r,))


@dataclass(frozen=True)
class DatabaseScheme:
    origins: tuple
    n_directions: int = 8
    n_gw: int = 10
    projections: tuple = (90.0, 270.0)
    frequencies: tuple = (0.1, 0.2, 0.4, 0.8, 1.6)
    split: SplitScheme = field(default_factory=SplitScheme)
    label_step_m: float = 5000.0
    label_points: int = 800

    def to_dict(self):
        d = asdict(self)
        d["origins"] = [list(o) for o in self.origins]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["origins"] = tuple(tuple(o) for o in d["origins"])
        d["projections"] = tuple(d["projections"])
        d["frequencies"] = tuple(d["frequencies"])
        d["split"] = SplitScheme(**d["split"])
        return cls(**d)


def grid_origins(step_deg=20.0, lat_max=80.0):
    """Origins on a regular lat/lon grid, longitudes in [-180, 180)."""
    lats = np.arange(-lat_max, lat_max + 1e-9, step_deg)
    lons = np.arange(-180.0, 180.0 - 1e-9, step_deg)
    return tuple((float(a), float(o)) for a in lats for o in lons)


def full_scheme():
    return DatabaseScheme(origins=grid_origins())


def desk_scheme():
    origins = tuple((float(a), float(o)) for a in (-60, -20, 20, 60) for o in (-120, 0, 120))
    return DatabaseScheme(origins=origins, n_directions=4, n_gw=3, frequencies=(0.1, 0.4),
                          split=SplitScheme(n_holdout_points=2, n_gw_train=2),
                          label_points=200)


@contextmanager
def _bulk():
    """Pause the cyclic GC while allocating many small acyclic records."""
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


def slice_key(origin_id, direction, projection, gw_id):
    return "o%03d-d%d-p%03d-g%02d" % (origin_id, direction, int(round(projection)), gw_id)


def enumerate_database(origins, n_directions=8, n_gw=10, projections=(90.0, 270.0),
                       frequencies=(0.1, 0.2, 0.4, 0.8, 1.6)):
    """Cartesian product origin x direction x GW x projection x frequency."""
    if len(origins) == 0:
        raise ConfigError("at least one origin is required")
    out = []
    suffixes = [("-f%05d" % int(round(f * 1000)), float(f)) for f in frequencies]
    with _bulk():
        for oi, org in enumerate(origins):
            org = tuple(float(v) for v in org)
            for d in range(n_directions):
                bearing = 360.0 * d / n_directions
                for g in range(n_gw):
                    for p in projections:
                        sid = slice_key(oi, d, p, g)
                        p = float(p)
                        out.extend([SampleRecord(sid + sfx, sid, oi, org, d, bearing, g, p, f)
                                    for sfx, f in suffixes])
    return out


def count_slices(records):
    return len({r.slice_id for r in records})


def split_database(records, seed, scheme=None, selection=0):
    """Assign train/val/test/generalization labels.

    Held-out origins (all GW ids) form the generalization set.  The test set
    is drawn once per seed from the eligible records (other origins, GW ids
    below ``n_gw_train``); train/val are redrawn from the rest for every
    cross-validation ``selection``.  Records that are neither get ``None``.
    """
    scheme = scheme or SplitScheme()
    origin_ids = sorted({r.origin_id for r in records})
    if scheme.n_holdout_points > len(origin_ids):
        raise ConfigError("cannot hold out %d of %d origins" % (scheme.n_holdout_points, len(origin_ids)))
    perm = stream(seed, 0x5B17, 0).permutation(len(origin_ids))
    held = np.isin(np.array([r.origin_id for r in records]), [origin_ids[i] for i in perm[:scheme.n_holdout_points]])
    gw = np.array([r.gw_id for r in records])
    eligible = np.flatnonzero(~held & (gw < scheme.n_gw_train))
    n = len(eligible)
    n_test = int(round(scheme.ratios[2] * n))
    n_train = int(round(scheme.ratios[0] * n))
    order = stream(seed, 0x5B17, 1).permutation(n)
    test = eligible[order[:n_test]]
    rest = eligible[order[n_test:]]
    order = stream(seed, 0x5B17, 2, selection).permutation(len(rest))
    labels = np.full(len(records), None, dtype=object)
    labels[held] = "generalization"
    labels[test] = "test"
    labels[rest[order[:n_train]]] = "train"
    labels[rest[order[n_train:]]] = "val"
    with _bulk():
        return [SampleRecord(*r[:-1], s) for r, s in zip(records, labels.tolist())]


def split_counts(records):
    counts = {s: 0 for s in SPLITS}
    for r in records:
        if r.split in counts:
            counts[r.split] += 1
    return counts


# ---------------------------------------------------------------------------
# Resampling


def _linear_weights(src, dst, what):
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    tol = 1e-6 * max(1.0, float(np.ptp(src)))
    if dst[0] < src[0] - tol or dst[-1] > src[-1] + tol:
        raise CoverageError("%s axis covers [%g, %g], target needs [%g, %g]"
                            % (what, src[0], src[-1], dst[0], dst[-1]))
    if len(src) == 1:
        return np.zeros(len(dst), int), np.zeros(len(dst))
    j = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, len(src) - 2)
    t = np.clip((dst - src[j]) / (src[j + 1] - src[j]), 0.0, 1.0)
    return j, t


def interpolate_slice(slc, alt_axis=STD_ALT, range_axis=STD_RANGE):
    """Bilinear resample onto fixed axes (default 433 x 40)."""
    alt_axis = np.asarray(alt_axis, float)
    range_axis = np.asarray(range_axis, float)
    if np.array_equal(slc.alt_axis_m, alt_axis) and np.array_equal(slc.range_axis_m, range_axis):
        return slc
    ja, ta = _linear_weights(slc.alt_axis_m, alt_axis, "altitude")
    jr, tr = _linear_weights(slc.range_axis_m, range_axis, "range")
    c = slc.c_ratio
    ja1 = np.minimum(ja + 1, len(slc.alt_axis_m) - 1)
    jr1 = np.minimum(jr + 1, len(slc.range_axis_m) - 1)
    col = (1 - ta)[:, None] * c[ja] + ta[:, None] * c[ja1]
    out = (1 - tr)[None, :] * col[:, jr] + tr[None, :] * col[:, jr1]
    g = slc.ground_ceff_ms
    ground = (1 - tr) * g[jr] + tr * g[jr1]
    return slc.replace(c_ratio=out, alt_axis_m=alt_axis, range_axis_m=range_axis, ground_ceff_ms=ground)


# ---------------------------------------------------------------------------
# Standardization


def standardize(x, mean, std):
    return (np.asarray(x) - mean) / std


def destandardize(x, mean, std):
    return np.asarray(x) * std + mean


def _moments(arrays):
    arrays = [np.asarray(a, np.float64).ravel() for a in arrays]
    n = sum(a.size for a in arrays)
    if n == 0:
        raise DataError("cannot fit normalization on an empty set")
    mean = math.fsum(float(a.sum()) for a in arrays) / n
    var = math.fsum(float(((a - mean) ** 2).sum()) for a in arrays) / n
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class NormStats:
    input_mean: float
    input_std: float
    tl_mean: float
    tl_std: float
    freq_mean: float
    freq_std: float

    def __post_init__(self):
        for name in ("input_std", "tl_std", "freq_std"):
            if not getattr(self, name) > 0:
                raise DataError("%s must be positive (zero variance in the training split?)" % name)

    @classmethod
    def fit(cls, inputs, tls, freqs):
        """Population mean/std per family over every value supplied."""
        f_mean, f_std = _moments([freqs])
        # a single training frequency carries no information; feed it as a constant 0
        return cls(*_moments(inputs), *_moments(tls), f_mean, f_std if f_std > 0 else 1.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def std_input(self, x):
        return standardize(x, self.input_mean, self.input_std)

    def std_tl(self, x):
        return standardize(x, self.tl_mean, self.tl_std)

    def std_freq(self, f):
        return standardize(f, self.freq_mean, self.freq_std)

    def unstd_tl(self, x):
        return destandardize(x, self.tl_mean, self.tl_std)


def fit_norm(records, slice_of, label_of):
    """NormStats over the training records only.

    ``slice_of(slice_id)`` and ``label_of(record)`` resolve ids.
    """
    train = [r for r in records if r.split == "train"]
    if not train:
        raise DataError("no training records to fit normalization on")
    return NormStats.fit([slice_of(r.slice_id).c_ratio for r in train],
                         [label_of(r).tl_db for r in train],
                         [r.frequency_hz for r in train])


# ---------------------------------------------------------------------------
# Storage


def _sha(data):
    return hashlib.sha256(data).hexdigest()


def _write_if_changed(root, rel, data):
    path = os.path.join(root, rel)
    if os.path.exists(path):
        with open(path, "rb") as fh:
            if fh.read() == data:
                return False
    os.makedirs(os.path.dirname(path), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return True


def _json_bytes(obj):
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode("utf-8")


def _manifest_bytes(records):
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records).encode("utf-8")


def _write_checksums(root):
    rels = []
    for base, _, files in os.walk(root):
        for name in files:
            rel = os.path.relpath(os.path.join(base, name), root).replace(os.sep, "/")
            if rel in ("checksums.txt", "progress.jsonl", "failed.jsonl") or rel.endswith(".tmp"):
                continue
            rels.append(rel)
    lines = ["# infratl-dataset %d" % DATASET_VERSION]
    for rel in sorted(rels):
        with open(os.path.join(root, rel), "rb") as fh:
            lines.append("%s  %s" % (_sha(fh.read()), rel))
    _write_if_changed(root, "checksums.txt", ("\n".join(lines) + "\n").encode("utf-8"))


def read_checksums(root):
    path = os.path.join(root, "checksums.txt")
    if not os.path.exists(path):
        raise FormatError("%s has no checksums.txt" % root)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "# infratl-dataset %d" % DATASET_VERSION:
        raise FormatError("unsupported dataset version header %r" % (lines[0] if lines else ""))
    out = {}
    for ln in lines[1:]:
        if ln.strip():
            digest, rel = ln.split("  ", 1)
            out[rel] = digest
    return out


def write_dataset(path, records, slices, gw_fields, labels, norm=None, meta=None):
    """Write a complete dataset directory.

    slices: {slice_id: AtmosphericSlice}; gw_fields: {gw_id: GwRealization};
    labels: {sample_id: TlCurve}.
    """
    os.makedirs(path, exist_ok=True)
    for sid, slc in slices.items():
        _write_if_changed(path, "slices/%s.atms" % sid, slc.to_bytes())
    for gid, gw in gw_fields.items():
        _write_if_changed(path, "gw/%02d.gwrl" % int(gid), gw.to_bytes())
    for r in records:
        _write_if_changed(path, r.label, labels[r.sample_id].to_csv().encode("utf-8"))
    _write_if_changed(path, "manifest.jsonl", _manifest_bytes(records))
    _write_if_changed(path, "norm.json", _json_bytes(norm.to_dict() if norm else None))
    _write_if_changed(path, "meta.json", _json_bytes(meta or {}))
    _write_checksums(path)


class Dataset:
    """Loaded dataset; slices, GW fields and labels are read on first use."""

    def __init__(self, path, records, norm, meta):
        self.path = path
        self.records = records
        self.norm = norm
        self.meta = meta
        self._slices, self._gw, self._labels = {}, {}, {}

    def slice(self, slice_id):
        if slice_id not in self._slices:
            self._slices[slice_id] = AtmosphericSlice.load(os.path.join(self.path, "slices/%s.atms" % slice_id))
        return self._slices[slice_id]

    def gw(self, gw_id):
        if gw_id not in self._gw:
            self._gw[gw_id] = GwRealization.load(os.path.join(self.path, "gw/%02d.gwrl" % int(gw_id)))
        return self._gw[gw_id]

    def label(self, record):
        if record.sample_id not in self._labels:
            self._labels[record.sample_id] = TlCurve.load(os.path.join(self.path, record.label))
        return self._labels[record.sample_id]

    def select(self, split):
        return [r for r in self.records if r.split == split]

    def arrays(self, records, norm=None):
        """Standardized (x, f, y) float32 arrays for the given records."""
        norm = norm or self.norm
        if not records:
            shape = self.slice(self.records[0].slice_id).shape if self.records else STD_ALT.shape + STD_RANGE.shape
            return (np.zeros((0,) + tuple(shape), np.float32), np.zeros(0, np.float32),
                    np.zeros((0, 0), np.float32))
        x = np.stack([norm.std_input(self.slice(r.slice_id).c_ratio) for r in records]).astype(np.float32)
        f = norm.std_freq(np.array([r.frequency_hz for r in records])).astype(np.float32)
        y = np.stack([norm.std_tl(self.label(r).tl_db) for r in records]).astype(np.float32)
        return x, f, y


def read_dataset(path, verify=True):
    sums = read_checksums(path)
    if verify:
        for rel, digest in sums.items():
            full = os.path.join(path, rel)
            if not os.path.exists(full):
                raise ChecksumError("missing file %s" % rel)
            with open(full, "rb") as fh:
                if _sha(fh.read()) != digest:
                    raise ChecksumError("checksum mismatch for %s" % rel)
    with open(os.path.join(path, "manifest.jsonl")) as fh:
        records = [SampleRecord.from_dict(json.loads(ln)) for ln in fh if ln.strip()]
    with open(os.path.join(path, "norm.json")) as fh:
        nd = json.load(fh)
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    return Dataset(path, records, NormStats.from_dict(nd) if nd else None, meta)


# ---------------------------------------------------------------------------
# Building


def gw_seed(seed, gw_id):
    return int(stream(seed, 0x6E57, gw_id).integers(0, 2 ** 62))


def make_gw_fields(n_gw, seed, params=None, alt_axis=STD_ALT, range_axis=STD_RANGE):
    """GW realizations rounded to the float32 precision they are stored with."""
    out = {}
    for g in range(n_gw):
        f = gw_field_2d(alt_axis, range_axis, params=params, seed=gw_seed(seed, g))
        out[g] = GwRealization(f.du.astype(np.float32), f.alt_axis_m, f.range_axis_m, f.seed, f.params)
    return out


def standard_slice(grid, origin, bearing_deg, projection_deg):
    """Slice on the standard 433 x 40 grid, before any GW perturbation."""
    return interpolate_slice(build_slice(grid, origin, bearing_deg, projection_deg))


def stored(slc):
    """The slice exactly as it reads back from disk (float32 c_ratio)."""
    return AtmosphericSlice.from_bytes(slc.to_bytes())


def _label_task(args):
    sample_id, slice_bytes, freq, pe_cfg, step, points = args
    try:
        slc = AtmosphericSlice.from_bytes(slice_bytes)
        curve = resample_tl(solve_tl(slc, freq, pe_cfg), step, points)
        return sample_id, curve.to_csv(), None
    except InfraTLError as exc:
        return sample_id, None, "%s: %s" % (type(exc).__name__, exc)


def _read_progress(root):
    path = os.path.join(root, "progress.jsonl")
    done = {}
    if os.path.exists(path):
        with open(path) as fh:
            for ln in fh:
                try:
                    e = json.loads(ln)
                except json.JSONDecodeError:
                    continue  # torn last line after a crash
                done[e["sample_id"]] = e["sha256"]
    return done


def build_database(out_dir, grid, scheme, seed=0, gw_params=None, pe_cfg=None, jobs=1, log=None):
    """Enumerate, perturb, label and write a dataset; resumable.

    Labels already on disk whose hash matches ``progress.jsonl`` are kept.
    Returns a summary dict with computed/skipped/failed counts.
    """
    log = log or (lambda msg: None)
    gw_params = gw_params or GwSpectrumParams()
    max_range = scheme.label_step_m * scheme.label_points
    pe_cfg = replace(pe_cfg or PeConfig(), max_range_m=max_range)
    os.makedirs(out_dir, exist_ok=True)

    records = enumerate_database(scheme.origins, scheme.n_directions, scheme.n_gw, scheme.projections,
                                 scheme.frequencies)
    records = split_database(records, seed, scheme.split)
    gw_fields = make_gw_fields(scheme.n_gw, seed, gw_params)
    for gid, gw in gw_fields.items():
        _write_if_changed(out_dir, "gw/%02d.gwrl" % gid, gw.to_bytes())

    slices = {}
    for oi, org in enumerate(scheme.origins):
        for d in range(scheme.n_directions):
            bearing = 360.0 * d / scheme.n_directions
            for p in scheme.projections:
                base = standard_slice(grid, org, bearing, p)
                for gid, gw in gw_fields.items():
                    sid = slice_key(oi, d, p, gid)
                    slc = stored(perturb_slice(base, gw))
                    slices[sid] = slc
                    _write_if_changed(out_dir, "slices/%s.atms" % sid, slc.to_bytes())
    log("slices ready: %d" % len(slices))

    done = _read_progress(out_dir)
    todo, skipped = [], 0
    for r in records:
        path = os.path.join(out_dir, r.label)
        if r.sample_id in done and os.path.exists(path):
            with open(path, "rb") as fh:
                if _sha(fh.read()) == done[r.sample_id]:
                    skipped += 1
                    continue
        todo.append((r.sample_id, slices[r.slice_id].to_bytes(), r.frequency_hz, pe_cfg,
                     scheme.label_step_m, scheme.label_points))
    log("labels: %d cached, %d to compute" % (skipped, len(todo)))

    failed = []
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    with open(os.path.join(out_dir, "progress.jsonl"), "a") as prog:
        if jobs > 1 and len(todo) > 1:
            pool = ProcessPoolExecutor(max_workers=jobs)
            results = pool.map(_label_task, todo, chunksize=max(1, len(todo) // (8 * jobs)))
        else:
            pool = None
            results = map(_label_task, todo)
        try:
            for k, (sid, text, err) in enumerate(results):
                if err is not None:
                    failed.append({"sample_id": sid, "error": err})
                    continue
                data = text.encode("utf-8")
                _write_if_changed(out_dir, "labels/%s.csv" % sid, data)
                prog.write(json.dumps({"sample_id": sid, "sha256": _sha(data)}) + "\n")
                prog.flush()
                if (k + 1) % 50 == 0:
                    log("labels computed: %d/%d" % (k + 1, len(todo)))
        finally:
            if pool is not None:
                pool.shutdown()

    failed_ids = {f["sample_id"] for f in failed}
    fpath = os.path.join(out_dir, "failed.jsonl")
    if failed:
        with open(fpath, "w") as fh:
            for f in failed:
                fh.write(json.dumps(f, sort_keys=True) + "\n")
    elif os.path.exists(fpath):
        os.remove(fpath)
    good = [r for r in records if r.sample_id not in failed_ids]

    labels = {}

    def label_of(r):
        if r.sample_id not in labels:
            labels[r.sample_id] = TlCurve.load(os.path.join(out_dir, r.label))
        return labels[r.sample_id]

    norm = fit_norm(good, slices.__getitem__, label_of) if any(r.split == "train" for r in good) else None
    meta = {"version": DATASET_VERSION, "seed": int(seed), "scheme": scheme.to_dict(),
            "gw_params": asdict(gw_params), "pe": {k: v for k, v in asdict(pe_cfg).items()},
            "label_step_m": scheme.label_step_m, "label_points": scheme.label_points}
    _write_if_changed(out_dir, "manifest.jsonl", _manifest_bytes(good))
    _write_if_changed(out_dir, "norm.json", _json_bytes(norm.to_dict() if norm else None))
    _write_if_changed(out_dir, "meta.json", _json_bytes(meta))
    _write_checksums(out_dir)
    return {"records": len(good), "slices": len(slices), "computed": len(todo) - len(failed),
            "skipped": skipped, "failed": failed}
