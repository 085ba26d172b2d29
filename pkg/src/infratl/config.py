"""Run configuration: presets, INI overrides and the resolved-config file.

Every section mirrors one module's parameter object.  Values are parsed by
the type of the preset default; unknown sections or keys are rejected.
"""

from dataclasses import asdict, dataclass, field, fields, replace
import configparser
import os

from .atmosphere import SynthAtmosSpec
from .crnn.model import DESK_MODEL, ModelConfig
from .crnn.train import TrainConfig
from .datapipe import DatabaseScheme, SplitScheme, desk_scheme, full_scheme, grid_origins
from .errors import ConfigError
from .gwfield import GwSpectrumParams
from .pe import PeConfig

RESOLVED_NAME = "resolved_config.ini"


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    jobs: int = 1
    runs: int = 1
    # "synthetic" or a path to a grid CSV
    atmosphere: str = "synthetic"
    atmosphere_seed: int = 0
    n_mc: int = 100
    n_tta: int = 10


@dataclass(frozen=True)
class DatasetSettings:
    # "desk", "full", or "lat,lon; lat,lon; ..."
    origins: str = "desk"
    n_directions: int = 4
    n_gw: int = 3
    projections: tuple = (90.0, 270.0)
    frequencies: tuple = (0.1, 0.4)
    n_holdout_points: int = 2
    n_gw_train: int = 2
    ratios: tuple = (0.7, 0.2, 0.1)
    label_step_m: float = 5000.0
    label_points: int = 200

    def scheme(self):
        if self.origins == "desk":
            origins = desk_scheme().origins
        elif self.origins == "full":
            origins = grid_origins()
        else:
            try:
                origins = tuple(tuple(float(v) for v in o.split(",")) for o in self.origins.split(";") if o.strip())
            except ValueError:
                raise ConfigError("dataset.origins must be desk, full or 'lat,lon; lat,lon'") from None
            if not origins or any(len(o) != 2 for o in origins):
                raise ConfigError("dataset.origins must list lat,lon pairs")
        return DatabaseScheme(origins=origins, n_directions=self.n_directions, n_gw=self.n_gw,
                              projections=tuple(self.projections), frequencies=tuple(self.frequencies),
                              split=SplitScheme(self.n_holdout_points, self.n_gw_train, tuple(self.ratios)),
                              label_step_m=self.label_step_m, label_points=self.label_points)


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    atmosphere: SynthAtmosSpec = field(default_factory=SynthAtmosSpec)
    gw: GwSpectrumParams = field(default_factory=GwSpectrumParams)
    pe: PeConfig = field(default_factory=PeConfig)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    model: ModelConfig = field(default_factory=lambda: DESK_MODEL)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_ini(self):
        lines = []
        for sec in fields(self):
            lines.append("[%s]" % sec.name)
            obj = getattr(self, sec.name)
            for f in fields(obj):
                if sec.name == "atmosphere" and f.name == "jets":
                    continue
                lines.append("%s = %s" % (f.name, _format(getattr(obj, f.name))))
            lines.append("")
        return "\n".join(lines)

    def write_resolved(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, RESOLVED_NAME)
        with open(path, "w") as fh:
            fh.write(self.to_ini())
        return path


def preset(name):
    if name == "desk":
        # larger step size than full scale: the reduced model and data converge slowly at 1e-4
        return RunConfig(train=TrainConfig(lr=1e-3, patience=20, lr_patience=10))
    if name == "full":
        s = full_scheme()
        ds = DatasetSettings(origins="full", n_directions=s.n_directions, n_gw=s.n_gw,
                             projections=s.projections, frequencies=s.frequencies,
                             n_holdout_points=s.split.n_holdout_points, n_gw_train=s.split.n_gw_train,
                             ratios=s.split.ratios, label_step_m=s.label_step_m, label_points=s.label_points)
        return RunConfig(run=RunSettings(runs=10), dataset=ds, model=ModelConfig(), train=TrainConfig())
    raise ConfigError("unknown preset %r (choose desk or full)" % name)


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(", ".join(repr(x) for x in t) for t in v)
        return ", ".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text, default, where):
    t = text.strip()
    try:
        if isinstance(default, bool):
            if t.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(t)
            return t.lower() in ("true", "yes", "1")
        if isinstance(default, int):
            return int(t)
        if isinstance(default, float) or default is None:
            return None if t.lower() == "none" else float(t)
        if isinstance(default, tuple):
            if not t:
                return ()
            if ";" in t or (default and isinstance(default[0], tuple)) or where.endswith(".absorption"):
                return tuple(tuple(float(x) for x in part.split(",")) for part in t.split(";") if part.strip())
            kind = int if default and all(isinstance(x, int) for x in default) else float
            return tuple(kind(x) for x in t.split(","))
        return t
    except ValueError:
        raise ConfigError("cannot parse %s = %r" % (where, text)) from None


def apply_ini(cfg, text, source="<config>"):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source)
    except configparser.Error as e:
        raise ConfigError("%s: %s" % (source, e)) from None
    names = {f.name for f in fields(cfg)}
    updates = {}
    for sec in cp.sections():
        if sec not in names:
            raise ConfigError("%s: unknown section [%s]" % (source, sec))
        obj = getattr(cfg, sec)
        known = {f.name: getattr(obj, f.name) for f in fields(obj) if f.name != "jets"}
        vals = {}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ConfigError("%s: unknown key %r in [%s]" % (source, key, sec))
            vals[key] = _parse(raw, known[key], "%s.%s" % (sec, key))
        try:
            updates[sec] = replace(obj, **vals)
        except (ValueError, TypeError) as e:
            raise ConfigError("%s: [%s] %s" % (source, sec, e)) from None
    return replace(cfg, **updates)


def load_config(preset_name="desk", path=None, overrides=None):
    cfg = preset(preset_name)
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError("cannot read config %s: %s" % (path, e)) from None
        cfg = apply_ini(cfg, text, path)
    if overrides:
        cfg = replace(cfg, run=replace(cfg.run, **overrides))
    return cfg


def as_dict(cfg):
    d = {}
    for sec in fields(cfg):
        d[sec.name] = {k: v for k, v in asdict(getattr(cfg, sec.name)).items() if k != "jets"}
    return d
