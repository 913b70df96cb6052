"""Answer-oriented rationale preference data and desk-scale iterative DPO."""
from .dataset import (
    Choice,
    McSample,
    PreferencePair,
    RationaleRecord,
    read_manifest,
    read_pairs,
    read_records,
    sample_pool,
    write_manifest,
    write_pairs,
    write_records,
)
from .errors import SmartLoopError, ValidationError
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
