"""Effective-sound-speed-ratio slices from gridded temperature and winds.

A slice is a vertical plane (altitude x range) of

    c_ratio(z) = c_eff(z) / c_eff(0),   c_eff = u_along + sqrt(gamma R T)

sampled along a great circle leaving an origin point.  Gridded input comes
either from a CSV file (see :func:`load_grid_csv`) or from the synthetic
generator :func:`synth_atmosphere`.
"""

from dataclasses import dataclass, field
import io
import math

import numpy as np

from . import container
from .errors import CoverageError, DegenerateProfileError, DomainError, FormatError, ShapeError
from .rng import stream

GAMMA = 1.4
R_AIR = 287.058
EARTH_RADIUS_M = 6_371_000.0

CSV_HEADER = "lat_deg,lon_deg,z_m,T_K,u_ms,v_ms"
SLICE_MAGIC = b"ATMS"


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class AtmosProfile:
    altitudes_m: np.ndarray
    temperature_K: np.ndarray
    wind_zonal_ms: np.ndarray
    wind_merid_ms: np.ndarray

    def __post_init__(self):
        for name in ("altitudes_m", "temperature_K", "wind_zonal_ms", "wind_merid_ms"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.altitudes_m)
        if not (len(self.temperature_K) == len(self.wind_zonal_ms) == len(self.wind_merid_ms) == n):
            raise ShapeError("profile arrays must have equal length")
        if n > 1 and np.any(np.diff(self.altitudes_m) <= 0):
            raise ShapeError("altitudes must be strictly increasing")
        if np.any(self.temperature_K <= 0):
            raise DomainError("temperature must be positive")


@dataclass(frozen=True)
class AtmosGrid:
    """Temperature and horizontal wind on a (lat, lon, altitude) lattice.

    ``temperature_K``, ``wind_zonal_ms`` and ``wind_merid_ms`` have shape
    ``(n_lat, n_lon, n_alt)``.  Longitudes lie in [-180, 180).
    """

    lats_deg: np.ndarray
    lons_deg: np.ndarray
    altitudes_m: np.ndarray
    temperature_K: np.ndarray
    wind_zonal_ms: np.ndarray
    wind_merid_ms: np.ndarray
    valid_time: str = ""

    def __post_init__(self):
        for name in ("lats_deg", "lons_deg", "altitudes_m", "temperature_K",
                     "wind_zonal_ms", "wind_merid_ms"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        shape = (len(self.lats_deg), len(self.lons_deg), len(self.altitudes_m))
        for name in ("temperature_K", "wind_zonal_ms", "wind_merid_ms"):
            if getattr(self, name).shape != shape:
                raise ShapeError("%s has shape %s, expected %s" % (name, getattr(self, name).shape, shape))
        if np.any(np.diff(self.lats_deg) <= 0) or np.any(np.diff(self.lons_deg) <= 0):
            raise ShapeError("lat/lon axes must be strictly increasing")
        if len(self.altitudes_m) > 1 and np.any(np.diff(self.altitudes_m) <= 0):
            raise ShapeError("altitudes must be strictly increasing")
        if self.lats_deg[0] < -90 or self.lats_deg[-1] > 90:
            raise DomainError("latitudes must lie in [-90, 90]")
        if self.lons_deg[0] < -180 or self.lons_deg[-1] >= 180:
            raise DomainError("longitudes must lie in [-180, 180)")
        if np.any(self.temperature_K <= 0):
            raise DomainError("temperature must be positive")

    @property
    def periodic_lon(self):
        if len(self.lons_deg) < 2:
            return False
        step = self.lons_deg[1] - self.lons_deg[0]
        return abs(self.lons_deg[-1] - self.lons_deg[0] + step - 360.0) < 1e-6 * 360

    def profile(self, i, j):
        return AtmosProfile(self.altitudes_m, self.temperature_K[i, j],
                            self.wind_zonal_ms[i, j], self.wind_merid_ms[i, j])

    def interpolate(self, lats, lons):
        """Bilinear horizontal interpolation at many points.

        Returns ``(T, u, v)`` arrays of shape ``(n_points, n_alt)``.  Points
        within half a grid step outside the lattice snap to the edge; farther
        points raise :class:`CoverageError`.
        """
        lats = np.atleast_1d(np.asarray(lats, float))
        lons = np.atleast_1d(np.asarray(lons, float))
        i0, i1, wi = _axis_weights(self.lats_deg, lats, "latitude", lats, lons)
        if self.periodic_lon:
            step = self.lons_deg[1] - self.lons_deg[0]
            x = (lons - self.lons_deg[0]) % 360.0 / step
            j0 = np.floor(x).astype(int) % len(self.lons_deg)
            wj = x - np.floor(x)
            j1 = (j0 + 1) % len(self.lons_deg)
        else:
            j0, j1, wj = _axis_weights(self.lons_deg, _wrap_lon(lons), "longitude", lats, lons)
        out = []
        for f in (self.temperature_K, self.wind_zonal_ms, self.wind_merid_ms):
            a = (1 - wj)[:, None] * f[i0, j0] + wj[:, None] * f[i0, j1]
            b = (1 - wj)[:, None] * f[i1, j0] + wj[:, None] * f[i1, j1]
            out.append((1 - wi)[:, None] * a + wi[:, None] * b)
        return tuple(out)


def _axis_weights(axis, x, what, lats, lons):
    n = len(axis)
    if n == 1:
        half = 0.0
    else:
        half = 0.5 * np.min(np.diff(axis))
    bad = (x < axis[0] - half - 1e-9) | (x > axis[-1] + half + 1e-9)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise CoverageError("point (lat=%.4f, lon=%.4f) lies outside the grid %s range [%g, %g]"
                            % (lats[k], lons[k], what, axis[0], axis[-1]))
    x = np.clip(x, axis[0], axis[-1])
    if n == 1:
        z = np.zeros(len(x), int)
        return z, z, np.zeros(len(x))
    i0 = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, n - 2)
    w = (x - axis[i0]) / (axis[i0 + 1] - axis[i0])
    return i0, i0 + 1, w


@dataclass(frozen=True)
class AtmosphericSlice:
    """c_ratio on an (altitude x range) plane.

    ``ground_ceff_ms`` keeps the absolute ground effective sound speed of each
    column so that wind increments can be applied later.
    """

    c_ratio: np.ndarray
    alt_axis_m: np.ndarray
    range_axis_m: np.ndarray
    origin: tuple = (0.0, 0.0)
    bearing_deg: float = 0.0
    azimuth_projection_deg: float = 0.0
    ground_ceff_ms: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = _frozen(self.c_ratio)
        object.__setattr__(self, "c_ratio", c)
        object.__setattr__(self, "alt_axis_m", _frozen(self.alt_axis_m))
        object.__setattr__(self, "range_axis_m", _frozen(self.range_axis_m))
        if c.ndim != 2 or c.shape != (len(self.alt_axis_m), len(self.range_axis_m)):
            raise ShapeError("c_ratio shape %s does not match axes (%d, %d)"
                             % (c.shape, len(self.alt_axis_m), len(self.range_axis_m)))
        if np.any(~(c > 0)):
            raise DomainError("c_ratio must be positive and finite")
        g = self.ground_ceff_ms
        if g is None:
            g = np.full(c.shape[1], 340.0)
        g = _frozen(np.broadcast_to(np.asarray(g, float), (c.shape[1],)))
        object.__setattr__(self, "ground_ceff_ms", g)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def shape(self):
        return self.c_ratio.shape

    def c_eff(self):
        return self.c_ratio * self.ground_ceff_ms[None, :]

    def replace(self, **kw):
        d = dict(c_ratio=self.c_ratio, alt_axis_m=self.alt_axis_m, range_axis_m=self.range_axis_m,
                 origin=self.origin, bearing_deg=self.bearing_deg,
                 azimuth_projection_deg=self.azimuth_projection_deg,
                 ground_ceff_ms=self.ground_ceff_ms, meta=dict(self.meta))
        d.update(kw)
        return AtmosphericSlice(**d)

    def to_bytes(self):
        meta = {
            "origin": list(self.origin),
            "bearing_deg": float(self.bearing_deg),
            "azimuth_projection_deg": float(self.azimuth_projection_deg),
            "ground_ceff_ms": [float(v) for v in self.ground_ceff_ms],
            "source": self.meta,
        }
        return container.pack(SLICE_MAGIC, self.c_ratio, self.alt_axis_m, self.range_axis_m, meta)

    @classmethod
    def from_bytes(cls, buf):
        data, alt, rng, meta = container.unpack(buf, SLICE_MAGIC)
        try:
            return cls(data.astype(np.float64), alt, rng, origin=tuple(meta["origin"]),
                       bearing_deg=meta["bearing_deg"],
                       azimuth_projection_deg=meta["azimuth_projection_deg"],
                       ground_ceff_ms=np.array(meta["ground_ceff_ms"]), meta=meta.get("source", {}))
        except KeyError as exc:
            raise FormatError("slice metadata misses %s" % exc) from None

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# Formulas


def adiabatic_sound_speed(T, gamma=GAMMA, R=R_AIR):
    """Adiabatic sound speed sqrt(gamma R T) in m/s."""
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise DomainError("temperature must be positive, got min %r" % (np.min(T),))
    out = np.sqrt(gamma * R * T)
    return float(out) if out.ndim == 0 else out


def project_wind(u_zonal, u_merid, azimuth_deg):
    """Wind component along a path heading ``azimuth_deg`` clockwise from north."""
    az = np.deg2rad(azimuth_deg)
    return np.asarray(u_zonal) * np.sin(az) + np.asarray(u_merid) * np.cos(az)


def effective_sound_speed(profile, azimuth_deg, gamma=GAMMA, R=R_AIR):
    return (project_wind(profile.wind_zonal_ms, profile.wind_merid_ms, azimuth_deg)
            + adiabatic_sound_speed(profile.temperature_K, gamma, R))


def c_ratio_column(profile, azimuth_deg, gamma=GAMMA, R=R_AIR):
    ceff = effective_sound_speed(profile, azimuth_deg, gamma, R)
    if not ceff[0] > 0:
        raise DegenerateProfileError("ground effective sound speed %r <= 0" % ceff[0])
    return ceff / ceff[0]


# ---------------------------------------------------------------------------
# Geometry


def _wrap_lon(lon):
    return (np.asarray(lon) + 180.0) % 360.0 - 180.0


def destination(origin, bearing_deg, distance_m, radius=EARTH_RADIUS_M):
    """Spherical forward geodesic; ``distance_m`` may be an array."""
    lat1 = math.radians(origin[0])
    lon1 = math.radians(origin[1])
    th = math.radians(bearing_deg)
    d = np.asarray(distance_m, float) / radius
    sin_lat2 = np.sin(lat1) * np.cos(d) + np.cos(lat1) * np.sin(d) * np.cos(th)
    lat2 = np.arcsin(np.clip(sin_lat2, -1.0, 1.0))
    lon2 = lon1 + np.arctan2(np.sin(th) * np.sin(d) * np.cos(lat1), np.cos(d) - np.sin(lat1) * sin_lat2)
    return np.rad2deg(lat2), _wrap_lon(np.rad2deg(lon2))


def great_circle_sample(origin, bearing_deg, max_range_m, step_m):
    """Points every ``step_m`` from ``origin`` out to ``max_range_m``.

    Returns an ``(n, 2)`` array of (lat, lon).  The first row is the origin
    and the last lies at ``max_range_m`` (appended if the step does not
    divide the range).
    """
    if not step_m > 0:
        raise DomainError("step_m must be positive")
    if max_range_m < 0:
        raise DomainError("max_range_m must be non-negative")
    n = int(math.floor(max_range_m / step_m + 1e-9))
    dist = step_m * np.arange(n + 1)
    if max_range_m - dist[-1] > 1e-9 * max(1.0, max_range_m):
        dist = np.append(dist, max_range_m)
    lat, lon = destination(origin, bearing_deg, dist)
    return np.column_stack([lat, lon])


def haversine(p, q, radius=EARTH_RADIUS_M):
    lat1, lon1, lat2, lon2 = map(np.deg2rad, (p[..., 0], p[..., 1], q[..., 0], q[..., 1]))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0, 1)))


# ---------------------------------------------------------------------------
# Slices


def build_slice(grid, origin, bearing_deg, azimuth_projection_deg=None,
                max_range_m=4_000_000.0, n_columns=40, gamma=GAMMA, R=R_AIR):
    """Sample ``n_columns`` profiles every ``max_range_m / n_columns`` along a
    great circle and turn them into a c_ratio slice.

    Winds are projected on ``azimuth_projection_deg`` (defaults to the
    bearing itself).
    """
    if azimuth_projection_deg is None:
        azimuth_projection_deg = bearing_deg
    spacing = max_range_m / n_columns
    dist = spacing * np.arange(n_columns)
    lats, lons = destination(origin, bearing_deg, dist)
    T, u, v = grid.interpolate(lats, lons)
    ceff = project_wind(u, v, azimuth_projection_deg) + adiabatic_sound_speed(T, gamma, R)
    ceff = ceff.T  # (n_alt, n_range)
    ground = ceff[0].copy()
    if np.any(~(ground > 0)):
        k = int(np.flatnonzero(~(ground > 0))[0])
        raise DegenerateProfileError("ground effective sound speed <= 0 at (%.3f, %.3f)" % (lats[k], lons[k]))
    meta = {"valid_time": grid.valid_time, "column_lats": [float(x) for x in lats],
            "column_lons": [float(x) for x in lons]}
    return AtmosphericSlice(ceff / ground, grid.altitudes_m, dist, origin=tuple(origin),
                            bearing_deg=float(bearing_deg),
                            azimuth_projection_deg=float(azimuth_projection_deg),
                            ground_ceff_ms=ground, meta=meta)


# ---------------------------------------------------------------------------
# Grid CSV


def save_grid_csv(grid, path):
    nlat, nlon, nz = grid.temperature_K.shape
    la, lo, zz = np.meshgrid(grid.lats_deg, grid.lons_deg, grid.altitudes_m, indexing="ij")
    table = np.column_stack([a.ravel() for a in (la, lo, zz, grid.temperature_K,
                                                   grid.wind_zonal_ms, grid.wind_merid_ms)])
    with open(path, "w") as fh:
        if grid.valid_time:
            fh.write("# valid_time=%s\n" % grid.valid_time)
        fh.write(CSV_HEADER + "\n")
        np.savetxt(fh, table, fmt="%.17g", delimiter=",")


def load_grid_csv(path):
    """Read a grid CSV; rows must be sorted by (lat, lon, z) and complete."""
    valid_time = ""
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        if lines[k].startswith("# valid_time="):
            valid_time = lines[k].split("=", 1)[1].strip()
        k += 1
    if k >= len(lines) or lines[k].strip() != CSV_HEADER:
        raise FormatError("%s: expected header %r" % (path, CSV_HEADER))
    body = "\n".join(lines[k + 1:])
    table = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2) if body.strip() else np.zeros((0, 6))
    if table.shape[1] != 6 or len(table) == 0:
        raise FormatError("%s: expected 6 numeric columns" % path)
    keys = table[:, :3]
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    if np.any(order != np.arange(len(order))):
        bad = int(np.flatnonzero(order != np.arange(len(order)))[0])
        raise FormatError("%s: rows are not sorted by (lat, lon, z) near data row %d" % (path, bad + 1))
    lats = np.unique(keys[:, 0])
    lons = np.unique(keys[:, 1])
    zs = np.unique(keys[:, 2])
    if len(table) != len(lats) * len(lons) * len(zs):
        raise FormatError("%s: grid is incomplete or has duplicate rows" % path)
    shape = (len(lats), len(lons), len(zs))
    la, lo, zz = np.meshgrid(lats, lons, zs, indexing="ij")
    if not (np.array_equal(la.ravel(), keys[:, 0]) and np.array_equal(lo.ravel(), keys[:, 1])
            and np.array_equal(zz.ravel(), keys[:, 2])):
        raise FormatError("%s: nodes do not share one altitude axis" % path)
    return AtmosGrid(lats, lons, zs, table[:, 3].reshape(shape), table[:, 4].reshape(shape),
                     table[:, 5].reshape(shape), valid_time=valid_time)


# ---------------------------------------------------------------------------
# Synthetic atmosphere


@dataclass(frozen=True)
class JetSpec:
    """Zonal jet: Gaussian in altitude and |latitude|.

    ``antisymmetric`` flips the sign between hemispheres (winter westerlies
    versus summer easterlies).
    """

    altitude_m: float
    width_m: float
    amplitude_ms: float
    lat_center_deg: float = 45.0
    lat_width_deg: float = 20.0
    antisymmetric: bool = False


DEFAULT_JETS = (
    JetSpec(11_000.0, 4_000.0, 30.0, 35.0, 15.0, False),
    JetSpec(55_000.0, 14_000.0, 60.0, 50.0, 25.0, True),
    JetSpec(95_000.0, 12_000.0, -20.0, 40.0, 30.0, True),
)


@dataclass(frozen=True)
class SynthAtmosSpec:
    lat_step_deg: float = 5.0
    lon_step_deg: float = 5.0
    z_top_m: float = 130_000.0
    dz_m: float = 1_000.0
    ground_temperature_K: float = 288.15
    equator_pole_dT_K: float = 20.0
    thermosphere_T_inf_K: float = 1000.0
    thermosphere_scale_m: float = 74_000.0
    jets: tuple = DEFAULT_JETS
    planetary_wave_amplitude: float = 0.4
    amplitude_jitter: float = 0.2
    valid_time: str = "synthetic"


# US-standard-like lapse rates below 90 km: (base altitude m, lapse K/m)
_LAYERS = ((0.0, -6.5e-3), (11_000.0, 0.0), (20_000.0, 1.0e-3), (32_000.0, 2.8e-3),
           (47_000.0, 0.0), (51_000.0, -2.8e-3), (71_000.0, -2.0e-3), (86_000.0, 0.0))
_THERMO_BASE_M = 90_000.0


def standard_temperature(z, ground_K=288.15, T_inf=1000.0, scale_m=74_000.0):
    """Piecewise-linear lower atmosphere with an exponential thermospheric rise above 90 km."""
    z = np.asarray(z, float)
    T = np.full(z.shape, ground_K)
    Tb = ground_K
    for k, (zb, lapse) in enumerate(_LAYERS):
        ztop = _LAYERS[k + 1][0] if k + 1 < len(_LAYERS) else _THERMO_BASE_M
        seg = np.clip(z, zb, ztop) - zb
        T = T + lapse * seg
        Tb += lapse * (ztop - zb)
    above = z > _THERMO_BASE_M
    T = np.where(above, T_inf - (T_inf - Tb) * np.exp(-(z - _THERMO_BASE_M) / scale_m), T)
    return T


def synth_atmosphere(spec=None, seed=0):
    """Deterministic global grid with standard-like temperature and zonal jets.

    The seed drives planetary-wave modulation (zonal wavenumber, phase) of
    each jet, the associated meridional wind and a small amplitude jitter.
    """
    spec = spec or SynthAtmosSpec()
    lats = np.arange(-90.0, 90.0 + 1e-9, spec.lat_step_deg)
    lons = np.arange(-180.0, 180.0 - 1e-9, spec.lon_step_deg)
    z = np.arange(0.0, spec.z_top_m + 1e-9, spec.dz_m)
    LA, LO, Z = np.meshgrid(np.deg2rad(lats), np.deg2rad(lons), z, indexing="ij")

    T = standard_temperature(Z, spec.ground_temperature_K, spec.thermosphere_T_inf_K,
                             spec.thermosphere_scale_m)
    T = T + spec.equator_pole_dT_K * (np.cos(LA) ** 2 - 0.6) * np.clip(1 - Z / 15_000.0, 0, None)
    # warm summer (southern) stratopause
    T = T - 10.0 * np.sin(LA) * np.exp(-((Z - 50_000.0) / 10_000.0) ** 2)

    rng = stream(seed, 0xA7)
    u = np.zeros_like(T)
    v = np.zeros_like(T)
    for jet in spec.jets:
        k = int(rng.integers(1, 3))
        phase = rng.uniform(0, 2 * np.pi)
        amp = jet.amplitude_ms * (1 + spec.amplitude_jitter * rng.uniform(-1, 1))
        lat_deg = np.rad2deg(LA)
        lat_shape = np.exp(-((np.abs(lat_deg) - jet.lat_center_deg) / jet.lat_width_deg) ** 2)
        if jet.antisymmetric:
            lat_shape = lat_shape * np.sign(lat_deg)
        # winds vanish at the poles so the field stays single valued there
        lat_shape = lat_shape * np.cos(LA) ** 0.5
        z_shape = np.exp(-((Z - jet.altitude_m) / jet.width_m) ** 2)
        pw = spec.planetary_wave_amplitude
        u += amp * lat_shape * z_shape * (1 + pw * np.cos(k * LO - phase))
        v += 0.5 * amp * pw * np.abs(lat_shape) * z_shape * np.sin(k * LO - phase)
    return AtmosGrid(lats, lons, z, T, u, v, valid_time=spec.valid_time)


def uniform_grid(temperature_K, wind_zonal_ms=0.0, wind_merid_ms=0.0, altitudes_m=None,
                 lat_step_deg=10.0, lon_step_deg=10.0):
    """Horizontally uniform global grid from one profile (tests, sanity runs)."""
    if altitudes_m is None:
        altitudes_m = np.arange(0.0, 130_001.0, 1000.0)
    altitudes_m = np.asarray(altitudes_m, float)
    lats = np.arange(-90.0, 90.0 + 1e-9, lat_step_deg)
    lons = np.arange(-180.0, 180.0 - 1e-9, lon_step_deg)
    shape = (len(lats), len(lons), len(altitudes_m))
    prof = [np.broadcast_to(np.asarray(a, float), altitudes_m.shape)
            for a in (temperature_K, wind_zonal_ms, wind_merid_ms)]
    return AtmosGrid(lats, lons, altitudes_m, *(np.broadcast_to(p, shape) for p in prof),
                     valid_time="uniform")
