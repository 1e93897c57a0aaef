import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv


@dataclass(frozen=True)
class ModelDefaults:
    """Single source of truth for numeric defaults.

    CLI flags, TrainConfig, RunConfig and the library functions all read from
    DEFAULTS so a changed default propagates to every execution path.
    """
    prescale_factor: float = 100.0
    test_fraction: float = 0.2
    validation_fraction: float = 0.2
    split_seed: int = 42
    # training
    max_epochs: int = 200
    patience: int = 6
    batch_size: int = 32
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    repetitions_desk: int = 10
    repetitions_full: int = 100
    base_seed: int = 0
    ce_clamp: float = 1e-12
    # mnl
    log_offset: float = 0.1
    mnl_tolerance: float = 1e-6
    mnl_max_iterations: int = 500
    # welfare
    trim_upper_quantile: float = 0.05
    near_zero_mu: float = 1e-10
    bin_edges_minutes: Tuple[float, ...] = (0.0, 60.0, 90.0, 120.0, 180.0, 240.0, 300.0, float('inf'))
    # swissmetro
    swissmetro_target_rows: int = 9036
    swissmetro_url: str = 'https://transp-or.epfl.ch/data/swissmetro.dat'


DEFAULTS = ModelDefaults()


@dataclass
class TrainConfig:
    """Settings for one training run / ensemble."""
    max_epochs: int = DEFAULTS.max_epochs
    patience: int = DEFAULTS.patience
    batch_size: int = DEFAULTS.batch_size
    learning_rate: float = DEFAULTS.learning_rate
    beta1: float = DEFAULTS.beta1
    beta2: float = DEFAULTS.beta2
    epsilon: float = DEFAULTS.epsilon
    base_seed: int = DEFAULTS.base_seed
    validation_fraction: float = DEFAULTS.validation_fraction
    workers: int = 1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class RunConfig:
    """Command settings loaded from a JSON document; CLI flags override fields.

    Every random operation derives from ``seed``: the split uses it directly,
    ensemble member r uses ``seed + r`` and synthetic choices use ``seed``.
    """
    seed: int = DEFAULTS.base_seed
    workers: int = 1
    # inputs
    data_path: Optional[str] = None
    design_path: Optional[str] = None
    schema_path: Optional[str] = None
    schema: Optional[Dict[str, Any]] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    scaling_path: Optional[str] = None
    ensemble_dir: Optional[str] = None
    swissmetro_path: Optional[str] = None
    swissmetro_filters: Dict[str, Any] = field(default_factory=dict)
    # outputs
    output_dir: str = 'reports'
    # preparation
    prescale_factor: float = DEFAULTS.prescale_factor
    test_fraction: float = DEFAULTS.test_fraction
    # synthetic generation
    dgp: Dict[str, Any] = field(default_factory=dict)
    # network
    variant: str = 'ass'
    hidden_layers: int = 1
    nodes_per_layer: int = 10
    activation: str = 'tanh'
    use_asc: bool = False
    repetitions: int = DEFAULTS.repetitions_desk
    grid: Optional[List[Dict[str, Any]]] = None
    resume: bool = False
    overwrite: bool = False
    train: Dict[str, Any] = field(default_factory=dict)
    # mnl
    mnl_form: str = 'linear'
    mnl_preset: str = 'monte_carlo'
    mnl_tolerance: float = DEFAULTS.mnl_tolerance
    mnl_max_iterations: int = DEFAULTS.mnl_max_iterations
    # welfare
    trim_upper_quantile: float = DEFAULTS.trim_upper_quantile
    drop_negative: bool = True
    bin_edges: List[float] = field(default_factory=lambda: list(DEFAULTS.bin_edges_minutes))
    unit: str = 'per100'
    aggregation: str = 'ratio_of_means'

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'RunConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(raw)
        if 'bin_edges' in values:
            values['bin_edges'] = [float(v) for v in values['bin_edges']]
        return cls(**values)

    @classmethod
    def from_json(cls, path: Optional[str]) -> 'RunConfig':
        if not path:
            return cls()
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))

    def with_overrides(self, **overrides: Any) -> 'RunConfig':
        """Return a copy with every non-None override applied."""
        values = asdict(self)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**values)

    def train_config(self) -> TrainConfig:
        settings = {'base_seed': self.seed, 'workers': self.workers}
        settings.update(self.train)
        return TrainConfig(**settings)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        # JSON has no infinity literal that round-trips everywhere
        values['bin_edges'] = [v if v != float('inf') else 'inf' for v in values['bin_edges']]
        return values


def load_environment() -> Dict[str, Optional[str]]:
    """Load ``.env`` and return the environment-provided defaults."""
    load_dotenv()
    return {
        'swissmetro_path': os.getenv('SWISSMETRO_PATH'),
        'swissmetro_url': os.getenv('SWISSMETRO_URL') or DEFAULTS.swissmetro_url,
    }


def ensure_output_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


class ThemeConfig:
    """Dark-mode colours for HTML reports."""
    DARK_THEME = {
        'bg_color': '#1e293b',
        'plot_bg_color': '#1e293b',
        'grid_color': '#475569',
        'text_color': '#f1f5f9',
        'line_color': '#60a5fa',
        'primary_color': '#60a5fa',
        'secondary_color': '#a78bfa',
        'accent_color': '#f59e0b',
        'table_border_color': '#475569',
    }
    # one colour per alternative, in schema order
    MODE_COLORS = ['#60a5fa', '#22c55e', '#f59e0b', '#a78bfa', '#ef4444']
