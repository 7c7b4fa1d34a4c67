"""Mesh sequence animation toolkit.

Meshes cross the boundary as numpy arrays: vertices ``(V, 3)`` float64,
faces ``(F, 3)`` uint32, sequences ``(T, V, 3)`` float64.
"""

from ._core import (
    ContractError,
    DimensionError,
    Error,
    IoError,
    Model,
    NumericalError,
    ParseError,
    ValidationError,
    __version__,
    appearance_loss,
    generate_dataset,
    load_obj,
    load_sequence,
    make_pair,
    motion_loss,
    pmd,
    pmd_per_frame,
    reconstruction_loss,
    run_cli,
    save_obj,
    save_sequence,
    toy_gradcheck,
    train,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "Error",
    "IoError",
    "Model",
    "NumericalError",
    "ParseError",
    "ValidationError",
    "__version__",
    "appearance_loss",
    "generate_dataset",
    "load_obj",
    "load_sequence",
    "make_pair",
    "motion_loss",
    "pmd",
    "pmd_per_frame",
    "reconstruction_loss",
    "run_cli",
    "save_obj",
    "save_sequence",
    "toy_gradcheck",
    "train",
]
