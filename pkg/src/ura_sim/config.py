"""System configuration and the flat ``key = value`` config file format."""
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import ConfigError

PATHLOSS_MODES = ("unit", "db-normalized")
DETECTOR_MODES = ("nonzero_mean", "zero_mean_baseline")
CHANNEL_MODES = ("genie", "prior")


@dataclass(frozen=True)
class SystemConfig:
    """All scalar parameters of one experiment.

    Defaults are a desk-scale instance. J, n0, sigma2 and Eb/N0 follow the
    usual full-size setting, while population, list width and message size
    are shrunk so that a trial takes well under a second and the outer code
    can meet its survivor threshold.
    """

    K_tot: int = 100
    K_a: int = 4
    M: int = 64
    L: int = 8
    n0: int = 100
    b: int = 16
    J: int = 6
    sigma2: float = 1.0
    eb_n0_db: float = 0.0
    delta: int = 2
    d_max: float = 300.0
    epsilon: float = 0.04
    seed: int = 0
    # Extensions beyond the core parameter set.
    pathloss: str = "unit"
    kappa: Optional[float] = None  # overrides the distance law for every UE
    detector: str = "nonzero_mean"
    channel_mode: str = "genie"
    update: str = "exact"  # coordinate step rule, see inner_detector.DetectorOptions
    visit_order: str = "uniform"  # coordinate order inside a sweep
    genie_form: str = "literal"  # see inner_detector.genie_effective_channel
    p_th: Optional[float] = 0.1  # None -> uniform parity allocation
    trials: int = 200
    max_outer_iters: int = 20
    tol: float = 0.01
    sweeps: Optional[int] = None  # coordinate updates per outer iteration, default 2 * 2^J
    codebook_seed: Optional[int] = None
    generator_seed: Optional[int] = None
    # Not set by users: carried along so manifests can hash the exact config.
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.validate()

    @property
    def n(self):
        return self.L * self.n0

    @property
    def N(self):
        """Number of codewords, 2^J."""
        return 1 << self.J

    @property
    def P(self):
        """Per-symbol power from Eb/N0 = nP / (2 b sigma^2)."""
        return 2.0 * self.b * self.sigma2 * 10.0 ** (self.eb_n0_db / 10.0) / self.n

    @property
    def K_tilde_a(self):
        return max(1, int(round(self.epsilon * self.K_tot)))

    @property
    def K_list(self):
        """Width of every inner-decoder output list."""
        return self.K_tilde_a + self.delta

    def validate(self):
        for name in ("K_tot", "K_a", "M", "L", "n0", "b", "J", "trials", "max_outer_iters"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.K_a > self.K_tot:
            raise ConfigError(f"K_a={self.K_a} exceeds K_tot={self.K_tot}")
        if self.b >= self.L * self.J:
            raise ConfigError(f"b={self.b} must be < L*J={self.L * self.J}")
        if self.J > 26:
            raise ConfigError(f"J={self.J} too large (2^J codewords would not fit in memory)")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be > 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if not self.d_max > 0:
            raise ConfigError("d_max must be > 0")
        if self.pathloss not in PATHLOSS_MODES:
            raise ConfigError(f"pathloss must be one of {PATHLOSS_MODES}")
        if self.detector not in DETECTOR_MODES:
            raise ConfigError(f"detector must be one of {DETECTOR_MODES}")
        if self.channel_mode not in CHANNEL_MODES:
            raise ConfigError(f"channel_mode must be one of {CHANNEL_MODES}")
        if self.update not in ("exact", "linearized"):
            raise ConfigError("update must be 'exact' or 'linearized'")
        if self.visit_order not in ("permutation", "uniform"):
            raise ConfigError("visit_order must be 'permutation' or 'uniform'")
        if self.genie_form not in ("calibrated", "literal"):
            raise ConfigError("genie_form must be 'calibrated' or 'literal'")
        if self.kappa is not None and self.kappa < 0:
            raise ConfigError("kappa must be >= 0")
        if self.p_th is not None and not self.p_th > 0:
            raise ConfigError("p_th must be > 0")
        if self.K_list > self.N:
            raise ConfigError(f"list width K={self.K_list} exceeds 2^J={self.N}")
        if self.sweeps is not None and self.sweeps <= self.N:
            raise ConfigError("sweeps must exceed 2^J")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("extra")
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _field_types():
    return {f.name: f for f in fields(SystemConfig) if f.name != "extra"}


def coerce(name, text):
    """Convert the string ``text`` to the type of config field ``name``."""
    spec = _field_types().get(name)
    if spec is None:
        raise ConfigError(f"unknown config key {name!r}")
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        if spec.default is None:
            return None
        raise ConfigError(f"{name} cannot be empty")
    target = type(spec.default) if spec.default is not None else _optional_type(name)
    try:
        if target is int:
            return int(text)
        if target is float:
            return float(text)
        return text.strip("\"'")
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def _optional_type(name):
    if name in ("kappa", "p_th"):
        return float
    return int


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, val)
    return values


def load_config(path=None, overrides=None):
    """Build a SystemConfig from an optional file plus ``{key: str}`` overrides."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    for key, val in (overrides or {}).items():
        values[key] = coerce(key, val) if isinstance(val, str) else val
    try:
        return SystemConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
