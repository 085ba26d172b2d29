"""Split-step Fourier parabolic-equation solver for ground-level transmission loss.

Narrow-angle PE in the effective sound speed approximation.  The envelope
psi(r, z) is stored on an even extension about z = 0 (rigid ground), marched
with a refraction phase screen and a paraxial free-space propagator, and
damped by a quadratic absorbing layer above the physical domain.  Pressure
at the ground is |psi(r, 0)| / sqrt(r), so a homogeneous medium recovers
spherical spreading.
"""

from dataclasses import dataclass, field
import json
import math
import os

import numpy as np

from .errors import ConfigError, DataError, DomainError, FormatError, NumericalError

TL_FLOOR_DB = -300.0
NEPER_PER_DB = math.log(10.0) / 20.0


@dataclass(frozen=True)
class PeConfig:
    """Grid and boundary settings; ``None`` means derive from the wavelength."""
    dz_m: float | None = None
    dr_m: float | None = None
    domain_top_m: float | None = None
    absorber_thickness_m: float | None = None
    absorber_strength: float = 0.2
    reference_range_m: float = 1000.0
    output_step_m: float = 1000.0
    max_range_m: float = 4_000_000.0
    # (z_lo_m, z_hi_m, dB/km) bands; empty means no absorption
    absorption: tuple = ()
    c0_ms: float | None = None

    def __post_init__(self):
        for name in ("dz_m", "dr_m", "domain_top_m", "absorber_thickness_m", "c0_ms"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError("%s must be positive" % name)
        if self.absorber_strength < 0:
            raise ConfigError("absorber_strength must be non-negative")
        if not (self.output_step_m > 0 and self.max_range_m > 0):
            raise ConfigError("output_step_m and max_range_m must be positive")
        ratio = self.reference_range_m / self.output_step_m
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("reference range must be a positive multiple of output_step_m")
        ratio = self.max_range_m / self.output_step_m
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("max_range_m must be a multiple of output_step_m")
        if self.max_range_m < self.reference_range_m:
            raise ConfigError("max_range_m is shorter than the reference range")
        bands = tuple(tuple(float(x) for x in b) for b in self.absorption)
        for lo, hi, att in bands:
            if not hi > lo or att < 0:
                raise ConfigError("absorption band (%g, %g, %g) is invalid" % (lo, hi, att))
        object.__setattr__(self, "absorption", bands)


@dataclass(frozen=True)
class TlCurve:
    tl_db: np.ndarray
    range_axis_m: np.ndarray
    frequency_hz: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        tl = np.maximum(np.asarray(self.tl_db, float), TL_FLOOR_DB)
        r = np.asarray(self.range_axis_m, float)
        if tl.ndim != 1 or tl.shape != r.shape:
            raise DataError("tl_db and range axis must be 1D of equal length")
        if not np.all(np.isfinite(tl)):
            raise DataError("TL curve contains non-finite values")
        if len(r) >= 2:
            step = r[1] - r[0]
            if step <= 0 or np.max(np.abs(np.diff(r) - step)) > 1e-6 * step:
                raise DataError("range axis must be regular and increasing")
            k = r[-1] / step
            if abs(k - round(k)) > 1e-6:
                raise DataError("range step does not divide the maximum range")
        tl.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "tl_db", tl)
        object.__setattr__(self, "range_axis_m", r)
        object.__setattr__(self, "frequency_hz", float(self.frequency_hz))

    def to_csv(self):
        lines = ["# frequency_hz=%r" % self.frequency_hz, "range_km,tl_db"]
        lines += ["%.17g,%.17g" % (r / 1000.0, t) for r, t in zip(self.range_axis_m, self.tl_db)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# frequency_hz="):
            raise FormatError("TL csv must start with a '# frequency_hz=' line")
        freq = float(lines[0].split("=", 1)[1])
        if len(lines) < 2 or lines[1].strip() != "range_km,tl_db":
            raise FormatError("TL csv header must be 'range_km,tl_db'")
        rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
        try:
            arr = np.array(rows, dtype=float).reshape(-1, 2)
        except ValueError as exc:
            raise FormatError("bad TL csv row: %s" % exc) from None
        return cls(arr[:, 1], arr[:, 0] * 1000.0, freq)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_csv(fh.read())


def tl_db(p, p0):
    """20 log10(p / p0), floored at -300 dB."""
    if not p0 > 0:
        raise DomainError("reference amplitude must be positive")
    p = np.asarray(p, float)
    if np.any(p < 0):
        raise DomainError("pressure amplitude must be non-negative")
    with np.errstate(divide="ignore"):
        out = np.maximum(20.0 * np.log10(p / p0), TL_FLOOR_DB)
    return float(out) if out.ndim == 0 else out


def resample_tl(curve, step_m=5000.0, n_points=800):
    """Linear interpolation onto ``step_m * (1..n_points)``."""
    target = step_m * np.arange(1, n_points + 1)
    r = curve.range_axis_m
    tol = 1e-6 * step_m
    if r[0] > target[0] + tol or r[-1] < target[-1] - tol:
        raise DataError("curve covers [%g, %g] m, need [%g, %g] m"
                        % (r[0], r[-1], target[0], target[-1]))
    return TlCurve(np.interp(target, r, curve.tl_db), target, curve.frequency_hz, dict(curve.meta))


@dataclass
class _Grid:
    k0: float
    lam: float
    dz: float
    dr: float
    nz: int            # physical + absorber points from z = 0 (index nz is the mirror point)
    z_phys_top: float
    absorber_bottom: float
    absorber_thickness: float
    n_sub: int         # march steps per output step


def plan_grid(slc, frequency_hz, cfg):
    """Resolve the numerical grid, validating resolution against the wavelength."""
    f = float(frequency_hz)
    if not 0.05 < f <= 5.0:
        raise ConfigError("frequency %g Hz outside (0.05, 5] Hz" % f)
    c0 = cfg.c0_ms or float(slc.ground_ceff_ms[0])
    lam = c0 / f
    dz = cfg.dz_m or lam / 10.0
    if dz > lam / 8.0 * (1 + 1e-12):
        raise ConfigError("dz = %g m exceeds lambda/8 for wavelength %g m" % (dz, lam))
    dr_target = cfg.dr_m or lam / 2.0
    if dr_target > lam * (1 + 1e-12):
        raise ConfigError("dr = %g m exceeds the wavelength %g m" % (dr_target, lam))
    n_sub = int(math.ceil(cfg.output_step_m / dr_target - 1e-9))
    dr = cfg.output_step_m / n_sub
    thick = cfg.absorber_thickness_m if cfg.absorber_thickness_m is not None else 10 * lam
    if thick < 10 * lam * (1 - 1e-12):
        raise ConfigError("absorber thickness %g m is below 10 wavelengths (%g m)" % (thick, lam))
    top = cfg.domain_top_m or float(slc.alt_axis_m[-1])
    need = int(math.ceil((top + thick) / dz)) + 1
    # the even extension has 2*nz points; keep it a power of two for the FFT
    nz = 1 << max(need - 1, 1).bit_length()
    return _Grid(2 * math.pi * f / c0, lam, dz, dr, nz, top, top, thick, n_sub)


def _extension(values):
    """Even extension of a length-nz column to length 2*nz about z = 0."""
    return np.concatenate([values, values[-1:], values[:0:-1]])


def _log_screens(slc, g, cfg, c0):
    """Per-slice-column log screen on the extended grid: i k0 (n-1) dr - damping dr."""
    z = g.dz * np.arange(g.nz)
    alt = slc.alt_axis_m
    damp = np.zeros(g.nz)
    if cfg.absorber_strength > 0:
        x = np.clip((z - g.absorber_bottom) / g.absorber_thickness, 0.0, None)
        damp += cfg.absorber_strength * g.k0 * x ** 2
    for lo, hi, att in cfg.absorption:
        damp += np.where((z >= lo) & (z < hi), att / 1000.0 * NEPER_PER_DB, 0.0)
    screens = []
    for j in range(slc.c_ratio.shape[1]):
        # constant continuation above the slice top
        c = np.interp(z, alt, slc.c_ratio[:, j]) * slc.ground_ceff_ms[j]
        n = c0 / c
        screens.append(_extension(1j * g.k0 * (n - 1.0) * g.dr - damp * g.dr))
    return np.array(screens)


def starter(z, k0):
    """Gaussian starter field centered on the ground."""
    return math.sqrt(k0) * np.exp(-0.5 * (k0 * z) ** 2)


def march(slc, frequency_hz, cfg=None, on_step=None):
    """Run the PE march; returns (output ranges, complex ground envelope psi(r, 0)).

    ``on_step(i, psi_ext)`` is called after every march step (used by tests).
    """
    cfg = cfg or PeConfig()
    g = plan_grid(slc, frequency_hz, cfg)
    c0 = cfg.c0_ms or float(slc.ground_ceff_ms[0])
    M = g.nz
    z_ext = g.dz * np.concatenate([np.arange(M + 1), np.arange(M - 1, 0, -1)])
    psi = starter(z_ext, g.k0).astype(complex)
    kz = 2 * math.pi * np.fft.fftfreq(2 * M, d=g.dz)
    prop = np.exp(-1j * kz ** 2 * g.dr / (2 * g.k0))
    logs = _log_screens(slc, g, cfg, c0)
    cols = slc.range_axis_m
    n_out = int(round(cfg.max_range_m / cfg.output_step_m))
    out_r = cfg.output_step_m * np.arange(1, n_out + 1)
    out = np.empty(n_out, complex)
    step = 0
    for k in range(n_out):
        for _ in range(g.n_sub):
            r_mid = (step + 0.5) * g.dr
            if r_mid <= cols[0] or len(cols) == 1:
                log_s = logs[0]
            elif r_mid >= cols[-1]:
                log_s = logs[-1]
            else:
                j = int(np.searchsorted(cols, r_mid, side="right")) - 1
                t = (r_mid - cols[j]) / (cols[j + 1] - cols[j])
                log_s = (1 - t) * logs[j] + t * logs[j + 1]
            psi = np.fft.ifft(prop * np.fft.fft(np.exp(log_s) * psi))
            step += 1
            if not np.isfinite(psi[0]):
                raise NumericalError("PE field became non-finite at march step %d (range %g m)"
                                     % (step, step * g.dr))
            if on_step is not None:
                on_step(step, psi)
        out[k] = psi[0]
    return out_r, out


def solve_tl(slc, frequency_hz, cfg=None):
    """Ground-level TL relative to the field at the reference range."""
    cfg = cfg or PeConfig()
    r, psi0 = march(slc, frequency_hz, cfg)
    amp = np.abs(psi0) / np.sqrt(r)
    i_ref = int(round(cfg.reference_range_m / cfg.output_step_m)) - 1
    tl = tl_db(amp, amp[i_ref])
    meta = {"bearing_deg": slc.bearing_deg, "origin": list(slc.origin)}
    return TlCurve(tl, r, frequency_hz, meta)


def write_batch_manifest(path, entries):
    """JSON lines linking slice ids to curve files: ``{"slice_id", "frequency_hz", "curve"}``."""
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_batch_manifest(path):
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]
