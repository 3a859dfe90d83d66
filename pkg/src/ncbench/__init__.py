"""Neural control schemes benchmarked on simulated discrete-time SISO plants.

The package pairs a small from-scratch network core (forward, backward to
weights and to inputs, steepest descent) with ten classic neurocontrol
wirings: behaviour cloning of a PID, offline and online inverse-model
control, training through a frozen forward emulator, receding-horizon
predictive control, an actor/critic trained by temporal differences,
responsibility-weighted multi-module control, online PID gain tuning, and
parallel PID/network hybrids. A CLI harness runs any scheme on a benchmark
plant and reports tracking quality.
"""

from .errors import ConfigError, DivergenceError, EmulatorNotReadyError
from .harness import (
    EpisodeLog,
    ExperimentConfig,
    MetricsReport,
    SCHEMES,
    export,
    iae,
    load_config,
    run_episode,
)
from .nn import ActivationKind, Gradients, Mlp, TappedDelayLine, mlp_new
from .plants import (
    ExcitationSpec,
    LinearPlant,
    NarxEstimator,
    NonlinearPlant,
    excitation,
    phase_state,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationKind",
    "ConfigError",
    "DivergenceError",
    "EmulatorNotReadyError",
    "EpisodeLog",
    "ExcitationSpec",
    "ExperimentConfig",
    "Gradients",
    "LinearPlant",
    "MetricsReport",
    "Mlp",
    "NarxEstimator",
    "NonlinearPlant",
    "SCHEMES",
    "TappedDelayLine",
    "excitation",
    "export",
    "iae",
    "load_config",
    "mlp_new",
    "phase_state",
    "run_episode",
    "__version__",
]
