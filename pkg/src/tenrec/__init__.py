"""tenrec: streaming robust tensor recovery for sensor data.

Decomposes corrupted, partially observed N-way data into a low-rank part and
a fiber-sparse outlier part, one minibatch at a time with constant memory.
"""

from .config import RunConfig, lambda2_from, resolve_lambda2
from .engine import (
    DictionaryState,
    MinibatchOutput,
    init_state,
    process_minibatch,
    process_stream,
    solve_minibatch,
)
from .metrics import EvalReport, f1_outliers, relative_error
from .synth import GroundTruth, SynthSpec, gen_stream

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "lambda2_from",
    "resolve_lambda2",
    "DictionaryState",
    "MinibatchOutput",
    "init_state",
    "process_minibatch",
    "process_stream",
    "solve_minibatch",
    "EvalReport",
    "f1_outliers",
    "relative_error",
    "GroundTruth",
    "SynthSpec",
    "gen_stream",
    "__version__",
]
