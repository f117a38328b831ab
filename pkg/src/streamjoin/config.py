"""Run configuration: flat key=value files, CLI overrides, validation.

Keys keep the experiment-table names (w_minutes, lambda, b, th_con, th_sup,
theta_mb, block_kb, t_d_sec, t_r_sec, n_g, beta, n_slaves, n_part, seed);
the remaining keys are engine/simulation knobs documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .core import KEY_MAX, TUPLE_BYTES, WindowSpec
from .errors import ConfigError

MS = 10**6  # ns per ms


@dataclass
class RunConfig:
    # experiment-table parameters
    w_minutes: float = 10.0
    lambda_tps: float = 1500.0        # key: lambda (per-stream mean rate)
    b: float = 0.7
    th_con: float = 0.01
    th_sup: float = 0.5
    theta_mb: float = 1.5
    block_kb: float = 4.0
    t_d_sec: float = 2.0
    t_r_sec: float = 20.0
    n_g: int = 1
    beta: float = 0.5
    n_slaves: int = 4
    n_part: int = 60
    seed: int = 1
    # workload
    lambda1: float | None = None      # per-stream overrides of lambda
    lambda2: float | None = None
    key_domain: int = KEY_MAX
    bmodel_depth: int = 10
    arrival_process: str = "poisson"  # poisson | uniform
    # engine
    tuning: bool = True
    d_max: int = 12
    buffer_mb: float = 1.0
    master_buffer_mb: float = 0.0     # 0 = unbounded
    map_cost_ns: int = 500
    cmp_cost_ns: int = 100
    tune_cost_ns: int = 100
    # simulation
    base_latency_ms: float = 0.1
    bandwidth_mb_s: float = 125.0     # decimal MB/s
    duration_sec: float = 1200.0
    warmup_sec: float = 600.0
    measure_sec: float = 600.0
    adaptive: bool = True
    n_active_init: int = 0            # 0 = all slaves active initially
    force_moves: bool = False         # verification hook: synthesize a move when the plan is empty

    KEY_ALIASES = {"lambda": "lambda_tps"}

    # -- derived -------------------------------------------------------------

    @property
    def window(self) -> WindowSpec:
        w = int(round(self.w_minutes * 60_000))
        return WindowSpec(w, w)

    @property
    def rate(self) -> tuple[float, float]:
        return (self.lambda1 if self.lambda1 is not None else self.lambda_tps,
                self.lambda2 if self.lambda2 is not None else self.lambda_tps)

    @property
    def block_tuples(self) -> int:
        return max(1, int(self.block_kb * 1024) // TUPLE_BYTES)

    @property
    def theta_blocks(self) -> int:
        return max(1, int(self.theta_mb * 1024 * 1024 / (self.block_kb * 1024)))

    @property
    def t_d_ns(self) -> int:
        return int(round(self.t_d_sec * 1e9))

    @property
    def t_r_ns(self) -> int:
        return int(round(self.t_r_sec * 1e9))

    @property
    def epochs_per_reorg(self) -> int:
        return self.t_r_ns // self.t_d_ns

    @property
    def total_epochs(self) -> int:
        return int(round(self.duration_sec * 1e9)) // self.t_d_ns

    @property
    def buffer_bytes(self) -> int:
        return int(self.buffer_mb * 1024 * 1024)

    @property
    def initial_active(self) -> int:
        return self.n_active_init if self.n_active_init else self.n_slaves

    def validate(self) -> "RunConfig":
        if self.w_minutes <= 0:
            raise ConfigError("w_minutes must be positive")
        if not (0 <= self.th_con < self.th_sup < 1):
            raise ConfigError("thresholds must satisfy 0 <= th_con < th_sup < 1")
        if not (0 < self.beta < 1):
            raise ConfigError("beta must lie in (0, 1)")
        if not (0.5 <= self.b < 1):
            raise ConfigError("b must lie in [0.5, 1)")
        if self.t_d_sec <= 0 or self.t_r_sec <= 0:
            raise ConfigError("t_d_sec and t_r_sec must be positive")
        if self.t_r_ns % self.t_d_ns != 0:
            raise ConfigError("t_r_sec must be an integer multiple of t_d_sec")
        if self.n_slaves < 1:
            raise ConfigError("n_slaves must be at least 1")
        if not (1 <= self.n_g <= self.n_slaves):
            raise ConfigError("n_g must lie in [1, n_slaves]")
        if self.n_part < 1:
            raise ConfigError("n_part must be at least 1")
        if self.lambda_tps < 0 or (self.lambda1 or 0) < 0 or (self.lambda2 or 0) < 0:
            raise ConfigError("lambda must be non-negative")
        if self.key_domain < 1 or self.key_domain > KEY_MAX:
            raise ConfigError(f"key_domain must lie in [1, {KEY_MAX}]")
        if self.block_kb <= 0 or self.theta_mb <= 0:
            raise ConfigError("block_kb and theta_mb must be positive")
        if self.d_max < 0 or self.d_max > 16:
            raise ConfigError("d_max must lie in [0, 16]")
        if self.n_active_init and not (1 <= self.n_active_init <= self.n_slaves):
            raise ConfigError("n_active_init must lie in [1, n_slaves]")
        if self.warmup_sec < 0 or self.measure_sec <= 0:
            raise ConfigError("warmup_sec must be >= 0 and measure_sec > 0")
        if self.arrival_process not in ("poisson", "uniform"):
            raise ConfigError("arrival_process must be poisson or uniform")
        return self


_BOOL_KEYS = {"tuning", "adaptive", "force_moves"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str):
    ftypes = {f.name: f.type for f in fields(RunConfig)}
    if name not in ftypes:
        raise ConfigError(f"unknown config key: {name}")
    raw = raw.strip()
    if name in _BOOL_KEYS:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name} expects a boolean, got {raw!r}")
    if ftypes[name] in ("str", str):
        return raw
    if ftypes[name] in ("int", int):
        return int(raw)
    return float(raw)


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        key = RunConfig.KEY_ALIASES.get(key, key)
        setattr(cfg, key, _coerce(key, raw))
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path) as fh:
            pairs = []
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    pairs.append(line)
            apply_overrides(cfg, pairs)
    apply_overrides(cfg, overrides)
    return cfg.validate()
