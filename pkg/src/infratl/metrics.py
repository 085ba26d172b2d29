"""Error metrics, wind classification, layer statistics and binned reports."""

from dataclasses import dataclass
import csv
import io
import json
import math

import numpy as np

from .errors import CoverageError, DataError, ShapeError

MRAE_GUARD_DB = 1e-6
LAYERS = (("troposphere", 0.0, 12_000.0), ("stratosphere", 12_000.0, 60_000.0),
          ("mesosphere", 60_000.0, 90_000.0), ("thermosphere", 90_000.0, 130_000.0))
# 19 intervals between 0.1 and 2.0; k/10 keeps every edge the nearest double
HIST_EDGES = np.arange(1, 21) / 10.0
WIND_BAND_M = (30_000.0, 60_000.0)


def _pair(label, pred):
    la = getattr(label, "tl_db", label)
    pa = getattr(pred, "tl_db", pred)
    ra, rb = getattr(label, "range_axis_m", None), getattr(pred, "range_axis_m", None)
    if ra is not None and rb is not None and not np.array_equal(ra, rb):
        raise ShapeError("label and prediction are on different range grids")
    la, pa = np.asarray(la, np.float64), np.asarray(pa, np.float64)
    if la.shape != pa.shape:
        raise ShapeError("label shape %s differs from prediction shape %s" % (la.shape, pa.shape))
    return la, pa


def rae_pointwise(label, pred, guard=MRAE_GUARD_DB):
    """Relative absolute error in percent per node; NaN where |label| < guard."""
    la, pa = _pair(label, pred)
    ok = np.abs(la) >= guard
    out = np.full(la.shape, np.nan)
    out[ok] = np.abs(la[ok] - pa[ok]) / np.abs(la[ok]) * 100.0
    return out


def mrae(label, pred, guard=MRAE_GUARD_DB, return_excluded=False):
    """Mean relative absolute error in percent over nodes with |label| >= guard."""
    r = rae_pointwise(label, pred, guard)
    ok = ~np.isnan(r)
    if not ok.any():
        raise DataError("every label node is below the %g dB guard" % guard)
    val = float(np.mean(r[ok]))
    return (val, int(r.size - ok.sum())) if return_excluded else val


def rmse_db(label, pred):
    la, pa = _pair(label, pred)
    return math.sqrt(float(np.mean((la - pa) ** 2)))


def _band_rows(alt, lo, hi, what, last=False):
    sel = (alt >= lo) & ((alt <= hi) if last else (alt < hi))
    if not sel.any():
        raise CoverageError("slice has no altitude samples in the %s (%g-%g km)" % (what, lo / 1e3, hi / 1e3))
    return sel


def classify_wind(slc):
    """'downwind' when the range average of per-column c_ratio maxima over 30-60 km is >= 1."""
    alt = np.asarray(slc.alt_axis_m)
    lo, hi = WIND_BAND_M
    if alt[0] > lo or alt[-1] < hi:
        raise CoverageError("slice must cover %g-%g km" % (lo / 1e3, hi / 1e3))
    sel = _band_rows(alt, lo, hi, "wind band", last=True)
    avg = float(np.mean(np.max(np.asarray(slc.c_ratio)[sel], axis=0)))
    return "downwind" if avg >= 1.0 else "upwind"


@dataclass(frozen=True)
class LayerStats:
    minimum: dict
    mean: dict
    maximum: dict

    def to_dict(self):
        return {name: {"min": self.minimum[name], "mean": self.mean[name], "max": self.maximum[name]}
                for name, _, _ in LAYERS}


def _layer_masks(alt):
    alt = np.asarray(alt)
    if alt[0] > 0.0 or alt[-1] < LAYERS[-1][1]:
        raise CoverageError("slice must reach from the ground into the thermosphere")
    return {name: _band_rows(alt, lo, hi, name, last=(i == len(LAYERS) - 1))
            for i, (name, lo, hi) in enumerate(LAYERS)}


def layer_stats(slc):
    c = np.asarray(slc.c_ratio, np.float64)
    lo, mu, hi = {}, {}, {}
    for name, sel in _layer_masks(slc.alt_axis_m).items():
        v = c[sel]
        lo[name], mu[name], hi[name] = float(v.min()), float(v.mean()), float(v.max())
        # float rounding of the mean can step outside [min, max] for near-constant layers
        mu[name] = min(max(mu[name], lo[name]), hi[name])
    return LayerStats(lo, mu, hi)


@dataclass
class LayerHistogram:
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def total(self):
        return int(self.counts.sum())

    def mass(self):
        return self.counts / self.total if self.total else np.zeros(len(self.counts))

    def density(self):
        return self.mass() / np.diff(HIST_EDGES)


def layer_histograms(slices):
    """Per-layer c_ratio histograms over HIST_EDGES with out-of-range counts kept aside."""
    out = {name: LayerHistogram(np.zeros(len(HIST_EDGES) - 1, np.int64), 0, 0) for name, _, _ in LAYERS}
    for slc in slices:
        c = np.asarray(slc.c_ratio, np.float64)
        for name, sel in _layer_masks(slc.alt_axis_m).items():
            v = c[sel].ravel()
            h = out[name]
            h.underflow += int(np.sum(v < HIST_EDGES[0]))
            h.overflow += int(np.sum(v > HIST_EDGES[-1]))
            h.counts += np.histogram(v, HIST_EDGES)[0]
    return out


def summary(values):
    v = np.asarray(values, np.float64)
    if v.size == 0:
        return {"count": 0, "median": None, "mean": None, "p95": None}
    return {"count": int(v.size), "median": float(np.median(v)), "mean": float(np.mean(v)),
            "p95": float(np.percentile(v, 95, method="linear"))}


@dataclass
class EvalResult:
    sample_id: str
    frequency_hz: float
    mrae: float
    rmse_db: float
    wind: str
    layers: LayerStats = None


def binned_report(results, axis="frequency", layer="stratosphere", edges=HIST_EDGES):
    """Per-bin MRAE summary rows.

    ``axis`` is "frequency" (one bin per distinct frequency), "wind", or
    "layer-mean-c_ratio" (bins of ``layer``'s mean c_ratio over ``edges``).
    Empty bins are kept with count 0.
    """
    rows = []
    if axis == "frequency":
        for f in sorted({r.frequency_hz for r in results}):
            rows.append(dict(bin="%g" % f, **summary([r.mrae for r in results if r.frequency_hz == f])))
    elif axis == "wind":
        for w in ("downwind", "upwind"):
            rows.append(dict(bin=w, **summary([r.mrae for r in results if r.wind == w])))
    elif axis == "layer-mean-c_ratio":
        means = np.array([r.layers.mean[layer] for r in results])
        vals = np.array([r.mrae for r in results])
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = (means >= lo) & (means < hi)
            rows.append(dict(bin="%.1f-%.1f" % (lo, hi), **summary(vals[sel])))
    else:
        raise ValueError("unknown report axis %r" % axis)
    for r in rows:
        r["empty"] = r["count"] == 0
    return rows


def overall_summary(results):
    return {"n": len(results), "mrae_pct": summary([r.mrae for r in results]),
            "rmse_db": summary([r.rmse_db for r in results])}


def rows_to_csv(rows):
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if v is None else v for k, v in r.items()})
    return buf.getvalue()


def write_report(out_dir, results, extra=None):
    """CSV tables per axis plus a JSON summary; returns the summary dict."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    per_sample = [{"sample_id": r.sample_id, "frequency_hz": r.frequency_hz, "mrae_pct": r.mrae,
                   "rmse_db": r.rmse_db, "wind": r.wind} for r in results]
    tables = {"samples.csv": per_sample,
              "by_frequency.csv": binned_report(results, "frequency"),
              "by_wind.csv": binned_report(results, "wind")}
    if results and all(r.layers is not None for r in results):
        for name, _, _ in LAYERS:
            tables["by_%s_mean.csv" % name] = binned_report(results, "layer-mean-c_ratio", name)
    for fname, rows in tables.items():
        with open(os.path.join(out_dir, fname), "w") as fh:
            fh.write(rows_to_csv(rows))
    summ = dict(overall_summary(results), **(extra or {}))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summ, fh, indent=2, sort_keys=True)
    return summ


# --- optional SVG output -------------------------------------------------

def _color(t):
    """Blue-to-yellow ramp for t in [0, 1]."""
    t = min(max(float(t), 0.0), 1.0) if np.isfinite(t) else 0.0
    r = int(round(68 + t * (253 - 68)))
    g = int(round(1 + t * (231 - 1)))
    b = int(round(84 + t * (37 - 84)))
    return "#%02x%02x%02x" % (r, g, b)


def svg_polar_map(azimuths_deg, ranges_km, values, vmin=None, vmax=None, size=600, title=""):
    """Polar wedge rendering of values[azimuth, range]; range grows outward."""
    v = np.asarray(values, np.float64)
    vmin = np.nanmin(v) if vmin is None else vmin
    vmax = np.nanmax(v) if vmax is None else vmax
    span = (vmax - vmin) or 1.0
    cx = cy = size / 2
    rmax = float(np.max(ranges_km))
    scale = (size / 2 - 10) / rmax
    daz = 360.0 / max(len(azimuths_deg), 1)
    # thin the range axis so the file stays small
    step = max(1, len(ranges_km) // 100)
    parts = ['<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d">' % (size, size + 20),
             '<text x="5" y="%d" font-size="12">%s</text>' % (size + 15, title)]
    r_edges = np.concatenate([[0.0], np.asarray(ranges_km, float)[step - 1::step]])
    for i, az in enumerate(azimuths_deg):
        a0, a1 = math.radians(az - daz / 2), math.radians(az + daz / 2)
        for j in range(len(r_edges) - 1):
            val = v[i, min(j * step + step - 1, v.shape[1] - 1)]
            r0, r1 = r_edges[j] * scale, r_edges[j + 1] * scale
            pts = [(cx + r * math.sin(a), cy - r * math.cos(a)) for r, a in ((r0, a0), (r1, a0), (r1, a1), (r0, a1))]
            parts.append('<polygon points="%s" fill="%s"/>' % (
                " ".join("%.1f,%.1f" % p for p in pts), _color((val - vmin) / span)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_histogram(hist, title="", width=400, height=200):
    d = hist.density()
    top = float(d.max()) or 1.0
    bw = width / len(d)
    parts = ['<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d">' % (width, height + 20),
             '<text x="5" y="%d" font-size="12">%s</text>' % (height + 15, title)]
    for i, val in enumerate(d):
        h = val / top * height
        parts.append('<rect x="%.1f" y="%.1f" width="%.1f" height="%.1f" fill="#3b528b"/>' % (
            i * bw, height - h, bw - 1, h))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
