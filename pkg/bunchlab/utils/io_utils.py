import json
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from bunchlab.errors import InputError

logger = logging.getLogger(__name__)


# Pydantic model for a dense complex matrix file
class MatrixFile(BaseModel):
    model_config = ConfigDict(extra='forbid')

    rows: int = Field(..., ge=1, description="Number of rows")
    cols: int = Field(..., ge=1, description="Number of columns")
    re: List[float] = Field(..., description="Real parts, row-major")
    im: Optional[List[float]] = Field(None, description="Imaginary parts, row-major (zeros when omitted)")

    @model_validator(mode='after')
    def check_payload(self) -> "MatrixFile":
        expected = self.rows * self.cols
        if len(self.re) != expected:
            raise ValueError(f"'re' has {len(self.re)} entries, expected rows*cols = {expected}")
        if self.im is not None and len(self.im) != expected:
            raise ValueError(f"'im' has {len(self.im)} entries, expected rows*cols = {expected}")
        if not all(math.isfinite(v) for v in self.re + (self.im or [])):
            raise ValueError("matrix entries must be finite")
        return self

    def to_array(self) -> np.ndarray:
        re = np.asarray(self.re, dtype=np.float64)
        im = np.zeros_like(re) if self.im is None else np.asarray(self.im, dtype=np.float64)
        return (re + 1j * im).reshape(self.rows, self.cols)

    @classmethod
    def from_array(cls, a) -> "MatrixFile":
        arr = np.atleast_2d(np.asarray(a, dtype=np.complex128))
        return cls(rows=arr.shape[0], cols=arr.shape[1],
                   re=arr.real.ravel().tolist(), im=arr.imag.ravel().tolist())


def load_json(json_path: str) -> Any:
    """
    Reads a JSON document, mapping I/O and decoding failures to InputError.

    Args:
        json_path: Path to the JSON file.

    Returns:
        The decoded document.
    """
    try:
        with open(json_path, 'r') as f:
            return json.load(f)
    except FileNotFoundError:
        logger.error(f"Input file not found at: {json_path}")
        raise InputError(f"Input file not found: {json_path}")
    except json.JSONDecodeError as e:
        logger.error(f"Error decoding JSON in {json_path}: {e}")
        raise InputError(f"Malformed JSON in {json_path}: {e}")


def parse_matrix(data: Dict[str, Any], source: str = "<data>") -> np.ndarray:
    try:
        return MatrixFile(**data).to_array()
    except (ValidationError, TypeError) as e:
        logger.error(f"Matrix data in {source} failed validation: {e}")
        raise InputError(f"Invalid matrix file {source}: {e}")


def load_matrix_file(json_path: str) -> np.ndarray:
    """Loads and validates a {rows, cols, re, im} matrix file."""
    matrix = parse_matrix(load_json(json_path), source=json_path)
    logger.info(f"Loaded {matrix.shape[0]}x{matrix.shape[1]} matrix from {json_path}.")
    return matrix


def save_matrix_file(a, json_path: str) -> None:
    with open(json_path, 'w') as f:
        json.dump(MatrixFile.from_array(a).model_dump(), f, indent=2)
    logger.info(f"Wrote matrix to {json_path}.")


def load_gram_spec(json_path: str):
    """Loads a tagged GramSpec document (see docs/formats.md)."""
    # Avoid circular import
    from bunchlab.models.distmodels import parse_gram_spec

    spec = parse_gram_spec(load_json(json_path))
    logger.info(f"Loaded GramSpec of kind '{spec.kind}' from {json_path}.")
    return spec


def parse_kappa(text: str) -> List[int]:
    """Parses a comma-separated list of 1-based output modes."""
    try:
        modes = [int(token) for token in text.split(',') if token.strip()]
    except ValueError:
        raise InputError(f"Mode list must be comma-separated integers, got '{text}'")
    if not modes:
        raise InputError("Mode list is empty")
    return modes
