"""Bridge between training-framework array dumps and the prune-opd scaler."""

from .convert import (
    TRACE_SCHEMA,
    ScaleToolError,
    export_traces,
    import_scaled,
    run_scale_tool,
    scale_dump,
)
from .dump import DumpShapeError, FrameworkDump, ShimError

__version__ = "0.1.0"

__all__ = [
    "TRACE_SCHEMA",
    "DumpShapeError",
    "FrameworkDump",
    "ScaleToolError",
    "ShimError",
    "export_traces",
    "import_scaled",
    "run_scale_tool",
    "scale_dump",
    "__version__",
]
