"""Stochastic gravity-wave wind perturbations.

A vertical wavenumber spectrum with a source regime, a saturated m^-3
regime and a turbulent m^-5/3 tail is turned into random-phase profiles for
overlapping 10 km layers.  The layer profiles are blended with normalized
Gaussian weights into full columns, and a small ensemble of columns is mixed
along range with a Gaussian kernel to give a 2D field.
"""

from dataclasses import asdict, dataclass
import math

import numpy as np

from . import container
from .atmosphere import AtmosphericSlice
from .errors import DataError, DomainError, ShapeError
from .rng import as_generator, stream

GW_MAGIC = b"GWRL"


@dataclass(frozen=True)
class GwSpectrumParams:
    alpha: float = 0.62
    N: float = 0.02
    m_star_0: float = 2 * math.pi / 2500.0
    m_b: float = 2 * math.pi / 300.0
    s: float = 1.0
    q: float = 1.5
    H: float = 7000.0
    corr_length_m: float = 500_000.0
    layer_thickness_m: float = 10_000.0
    sigma_weight_m: float = 2_500.0
    density_growth: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if not 0 < self.m_star_0 < self.m_b:
            raise DomainError("need 0 < m_star_0 < m_b")
        if not (self.s > 0 and self.q > 0 and self.H > 0):
            raise DomainError("s, q and H must be positive")
        if not self.corr_length_m > 0:
            raise DomainError("corr_length_m must be positive")


def gw_spectrum(m, m_star, params):
    """Vertical wavenumber spectrum of horizontal wind (SI units)."""
    m = np.asarray(m, float)
    if np.any(~(m > 0)):
        raise DomainError("wavenumber must be positive")
    aN2 = 2 * math.pi * params.alpha * params.N ** 2
    mb = params.m_b
    low = aN2 / m_star ** 3 * (m / m_star) ** params.s
    mid = aN2 / m ** 3
    high = aN2 / mb ** 3 * (mb / m) ** (5.0 / 3.0)
    out = np.where(m <= m_star, low, np.where(m <= mb, mid, high))
    return float(out) if out.ndim == 0 else out


def m_star_at(z, params):
    """Dominant vertical wavenumber, decaying exponentially with altitude."""
    return params.m_star_0 * np.exp(-np.asarray(z, float) / ((params.q + params.s) * params.H))


def _layer_modes(thickness, dz):
    K = int(math.floor(thickness / (2 * dz) + 1e-9))
    dm = 2 * math.pi / thickness
    return dm * np.arange(1, K + 1), dm


def layer_variance(layer_center_z, thickness, dz, params):
    """Expected per-altitude variance of one layer profile, sum F(m_k) dm / 2pi."""
    m, dm = _layer_modes(thickness, dz)
    F = gw_spectrum(m, m_star_at(layer_center_z, params), params) * _growth(layer_center_z, params)
    return float(np.sum(F) * dm / (2 * math.pi))


def _growth(z, params):
    return math.exp(z / params.H) if params.density_growth else 1.0


def synth_layer_profile(layer_center_z, layer_thickness_m, alt_axis, params, rng, spectrum=None):
    """One random-phase perturbation profile for a single layer.

    Each discrete mode m_k = 2 pi k / L gets amplitude sqrt(F(m_k) dm / pi)
    and a uniform phase, so the expected variance is sum F(m_k) dm / 2pi.
    Values outside the layer are zero.  ``spectrum`` overrides the spectral
    density (callable of m).
    """
    rng = as_generator(rng)
    alt = np.asarray(alt_axis, float)
    if len(alt) < 2:
        raise DomainError("altitude axis needs at least two points")
    dz = float(np.median(np.diff(alt)))
    if layer_thickness_m < 2 * dz:
        raise DomainError("layer of %g m is shorter than two grid steps (%g m)" % (layer_thickness_m, dz))
    m, dm = _layer_modes(layer_thickness_m, dz)
    if spectrum is None:
        F = gw_spectrum(m, m_star_at(layer_center_z, params), params) * _growth(layer_center_z, params)
    else:
        F = np.asarray(spectrum(m), float)
    amp = np.sqrt(F * dm / math.pi)
    phase = rng.uniform(0.0, 2 * math.pi, len(m))
    bottom = layer_center_z - layer_thickness_m / 2
    inside = np.abs(alt - layer_center_z) <= layer_thickness_m / 2 + 1e-9
    out = np.zeros(len(alt))
    zr = alt[inside] - bottom
    out[inside] = np.cos(np.outer(zr, m) + phase) @ amp
    return out


def layer_centers(alt_axis, thickness):
    """Centers of 50%-overlapping layers tiling [alt[0], alt[-1]]."""
    z0, z1 = float(alt_axis[0]), float(alt_axis[-1])
    centers = [z0 + thickness / 2]
    while centers[-1] + thickness / 2 < z1 - 1e-9:
        centers.append(centers[-1] + thickness / 2)
    return np.array(centers)


def layer_weights(layer_centers_z, alt_axis, sigma_weight_m, layer_thickness_m):
    """Gaussian weights (n_layers, n_alt), zero outside each layer, columns summing to one."""
    alt = np.asarray(alt_axis, float)[None, :]
    c = np.asarray(layer_centers_z, float)[:, None]
    inside = np.abs(alt - c) <= layer_thickness_m / 2 + 1e-9
    w = np.where(inside, np.exp(-0.5 * ((alt - c) / sigma_weight_m) ** 2), 0.0)
    total = w.sum(axis=0)
    if np.any(total <= 0):
        k = int(np.flatnonzero(total <= 0)[0])
        raise DataError("altitude %g m is not covered by any layer" % alt[0, k])
    return w / total


def combine_layers(layer_profiles, layer_centers_z, alt_axis, sigma_weight_m,
                   layer_thickness_m=10_000.0):
    w = layer_weights(layer_centers_z, alt_axis, sigma_weight_m, layer_thickness_m)
    return np.sum(w * np.asarray(layer_profiles, float), axis=0)


def synth_column(alt_axis, params, rng):
    """Full-column perturbation: one random profile per layer, blended."""
    rng = as_generator(rng)
    L = params.layer_thickness_m
    centers = layer_centers(alt_axis, L)
    profs = [synth_layer_profile(c, L, alt_axis, params, rng) for c in centers]
    return combine_layers(profs, centers, alt_axis, params.sigma_weight_m, L)


@dataclass(frozen=True)
class GwRealization:
    du: np.ndarray
    alt_axis_m: np.ndarray
    range_axis_m: np.ndarray
    seed: int
    params: GwSpectrumParams

    def __post_init__(self):
        du = np.array(self.du, float)
        du.flags.writeable = False
        object.__setattr__(self, "du", du)
        if du.shape != (len(self.alt_axis_m), len(self.range_axis_m)):
            raise ShapeError("du shape does not match axes")
        if not np.all(np.isfinite(du)):
            raise DomainError("perturbation field must be finite")

    def to_bytes(self):
        meta = {"seed": int(self.seed), "params": asdict(self.params)}
        return container.pack(GW_MAGIC, self.du, self.alt_axis_m, self.range_axis_m, meta)

    @classmethod
    def from_bytes(cls, buf):
        data, alt, rng, meta = container.unpack(buf, GW_MAGIC)
        return cls(data.astype(np.float64), alt, rng, meta["seed"], GwSpectrumParams(**meta["params"]))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def range_weights(range_axis, anchors, corr_length_m):
    """Normalized Gaussian kernel weights, shape (n_range, n_anchors)."""
    r = np.asarray(range_axis, float)[:, None]
    a = np.asarray(anchors, float)[None, :]
    if np.isinf(corr_length_m):
        logw = np.zeros((r.shape[0], a.shape[1]))
    else:
        logw = -0.5 * ((r - a) / corr_length_m) ** 2
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def gw_field_2d(alt_axis, range_axis, n_column_ensemble=16, params=None, seed=0, n_anchors=None):
    """2D range-dependent field from an ensemble of random columns.

    ``n_anchors`` anchor ranges (default: three per ensemble member) are drawn
    uniformly over the range axis; each picks an ensemble column with
    replacement, and every output column is the kernel-weighted mix of the
    anchor columns.
    """
    params = params or GwSpectrumParams()
    if n_column_ensemble < 2:
        raise DomainError("n_column_ensemble must be at least 2")
    n_anchors = 3 * n_column_ensemble if n_anchors is None else n_anchors
    alt = np.asarray(alt_axis, float)
    rng_axis = np.asarray(range_axis, float)
    gen = stream(seed, 0x6E)
    cols = np.stack([synth_column(alt, params, gen) for _ in range(n_column_ensemble)])
    anchors = gen.uniform(rng_axis[0], rng_axis[-1], n_anchors)
    pick = gen.integers(0, n_column_ensemble, n_anchors)
    lam = range_weights(rng_axis, anchors, params.corr_length_m)
    du = (lam @ cols[pick]).T
    return GwRealization(du, alt, rng_axis, seed, params)


def perturb_slice(slc, field):
    """Add an along-path wind increment and renormalize by the new ground value.

    Written as (c + du/g) / (1 + du0/g) with g the ground effective sound
    speed, which equals (c g + du) / (g + du0) and leaves the slice bit-for-bit
    unchanged for a zero field.
    """
    du = field.du if isinstance(field, GwRealization) else np.asarray(field, float)
    if du.shape != slc.c_ratio.shape:
        raise ShapeError("field shape %s does not match slice %s" % (du.shape, slc.c_ratio.shape))
    g = slc.ground_ceff_ms[None, :]
    num = slc.c_ratio + du / g
    den = 1.0 + du[0:1] / g
    if np.any(~(den > 0)):
        raise DomainError("perturbation drives the ground effective sound speed non-positive")
    meta = dict(slc.meta)
    if isinstance(field, GwRealization):
        meta["gw_seed"] = int(field.seed)
    return AtmosphericSlice(num / den, slc.alt_axis_m, slc.range_axis_m, origin=slc.origin,
                            bearing_deg=slc.bearing_deg,
                            azimuth_projection_deg=slc.azimuth_projection_deg,
                            ground_ceff_ms=slc.ground_ceff_ms + du[0], meta=meta)
