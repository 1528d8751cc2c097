from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields

from ..errors import HeadDivisibility
from ..windows import Strategy, StrategySpec


class Family(str, enum.Enum):
    PERSISTENCE = "persistence"
    LINREG = "linreg"
    MLP = "mlp"
    LSTM = "lstm"
    TRANSFORMER = "transformer"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        text = str(text).strip().lower()
        aliases = {"linear_regression": "linreg", "linear": "linreg", "naive": "persistence"}
        return cls(aliases.get(text, text))

    @property
    def trainable(self):
        return self in (Family.MLP, Family.LSTM, Family.TRANSFORMER)


# families that only make sense per series
UNIVARIATE_ONLY = frozenset({Family.PERSISTENCE, Family.LINREG, Family.MLP})

DEFAULT_LOOKBACK = {
    Family.PERSISTENCE: 168,
    Family.LINREG: 336,
    Family.MLP: 168,
    Family.LSTM: 168,
    Family.TRANSFORMER: 168,
}


def default_persistence_lag(horizon):
    """One week for horizons up to a week, otherwise one 30-day month."""
    return 168 if horizon <= 168 else 720


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    strategy: Strategy
    lookback: int
    horizon: int
    n_clients: int = 1
    d_model: int = 128
    layers: int = 3
    heads: int = 8
    ff_dim: int | None = None
    hidden: int | None = None
    lstm_layers: int = 2
    dropout: float = 0.1
    causal_decoder: bool = False
    positional: str = "sinusoidal"
    n_lags: int | None = None
    ridge: float = 1e-6
    lag: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.family in UNIVARIATE_ONLY and self.strategy is Strategy.MULTIVARIATE:
            raise ValueError(f"{self.family.value} is a per-series model; "
                             "use the local or global strategy")
        if self.family is Family.TRANSFORMER and self.d_model % self.heads:
            raise HeadDivisibility(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.positional not in ("sinusoidal", "learned", "none"):
            raise ValueError(f"unknown positional encoding {self.positional!r}")
        if self.hidden is None:
            hidden = {Family.MLP: 1024, Family.LSTM: 20}.get(self.family)
            object.__setattr__(self, "hidden", hidden)
        if self.ff_dim is None:
            object.__setattr__(self, "ff_dim", 4 * self.d_model)
        if self.n_lags is None and self.family in (Family.MLP, Family.LINREG):
            object.__setattr__(self, "n_lags", min(self.lookback, DEFAULT_LOOKBACK[self.family]))
        if self.lag is None and self.family is Family.PERSISTENCE:
            object.__setattr__(self, "lag", default_persistence_lag(self.horizon))

    @property
    def window(self):
        lookback = self.lag if self.family is Family.PERSISTENCE else self.lookback
        return StrategySpec(self.strategy, lookback, self.horizon)

    @property
    def input_size(self):
        return self.window.input_size(self.n_clients)

    @property
    def output_size(self):
        return self.window.output_size(self.n_clients)

    def to_dict(self):
        d = asdict(self)
        d["family"], d["strategy"] = self.family.value, self.strategy.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ModelSpec.from_dict(d)
