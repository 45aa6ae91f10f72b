"""Orthogonal, balanced class codebooks built from Hadamard matrices.

The direct path picks class codewords straight from the columns of a
Sylvester-constructed Hadamard matrix, which makes distinct codewords
exactly orthogonal and every codeword exactly zero-sum. When the required
matrix order exceeds the code length, a random Gaussian projection followed
by sign thresholding brings the codewords down to length K at a small cost
in exactness.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .io import (FileFormatError, expect_magic, expect_version, read_array,
                 read_u8, read_u32, read_u64, write_array, write_u8,
                 write_u32, write_u64)
from .rng import make_rng, standard_normal

CODEBOOK_MAGIC = b"HCCB"
CODEBOOK_VERSION = 1

_PROVENANCE_TO_TAG = {"direct": 0, "projected": 1}
_TAG_TO_PROVENANCE = {tag: name for name, tag in _PROVENANCE_TO_TAG.items()}

_MAX_SEED = 2**64 - 1


def sylvester(order: int) -> np.ndarray:
    """Hadamard matrix of a power-of-two order by repeated doubling.

    Returns an order x order integer matrix H with entries in {-1, +1}
    satisfying H @ H.T == order * I, with the first row and column all +1.
    """
    if order < 1 or order & (order - 1) != 0:
        raise ValueError(f"order must be a positive power of two, got {order}")
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def select_order(code_bits: int, num_classes: int) -> int:
    """Smallest power of two that is >= code_bits and >= num_classes + 1.

    The margin of one over the class count keeps enough candidates after
    the all-ones row/column (index 0) is excluded from selection.
    """
    if code_bits < 1:
        raise ValueError(f"code_bits must be >= 1, got {code_bits}")
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    order = 1
    while order < code_bits or order < num_classes + 1:
        order *= 2
    return order


@dataclass(frozen=True)
class ProjectionMatrix:
    """Gaussian projection from matrix order down to code length."""

    values: np.ndarray  # (rows, cols) float64, i.i.d. standard normal
    seed: int

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def sample_projection(order: int, code_bits: int, seed: int) -> ProjectionMatrix:
    """Draw an order x code_bits standard normal projection matrix.

    Deterministic given the seed; entries come from Box-Muller over PCG64.
    """
    if order <= code_bits:
        raise ValueError(
            f"projection requires order > code_bits, got {order} <= {code_bits}")
    rng = make_rng(seed)
    values = standard_normal(rng, (order, code_bits))
    return ProjectionMatrix(values=values, seed=seed)


def project_and_sign(hadamard: np.ndarray, projection: ProjectionMatrix) -> np.ndarray:
    """Sign of the dense product hadamard @ projection, with sign(0) = +1.

    Returns an order x code_bits matrix of int8 entries in {-1, +1}.
    """
    if hadamard.shape[0] != projection.rows:
        raise ValueError(
            f"dimension mismatch: matrix order {hadamard.shape[0]} "
            f"vs projection rows {projection.rows}")
    product = hadamard.astype(np.float64) @ projection.values
    return np.where(product >= 0.0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class Codebook:
    """One codeword of +-1 bits per class."""

    codewords: np.ndarray  # (C, K) int8 in {-1, +1}
    provenance: str        # "direct" or "projected"
    seed: int
    selected_indices: Optional[np.ndarray]  # source row/column indices, never 0

    @property
    def num_classes(self) -> int:
        return self.codewords.shape[0]

    @property
    def code_bits(self) -> int:
        return self.codewords.shape[1]

    def codeword(self, class_index: int) -> np.ndarray:
        return self.codewords[class_index]


def build_codebook(code_bits: int, num_classes: int, seed: int) -> Codebook:
    """Generate the class codebook for a given code length and class count.

    When the selected matrix order equals the code length, codewords are
    distinct columns of the Hadamard matrix (excluding column 0), so they
    are exactly orthogonal and zero-sum. Otherwise codewords are distinct
    rows of the sign-thresholded Gaussian projection (excluding row 0).
    Selection is uniform without replacement from the seeded generator.
    """
    if code_bits < 2:
        raise ValueError(f"code_bits must be >= 2, got {code_bits}")
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    if not 0 <= seed <= _MAX_SEED:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")

    order = select_order(code_bits, num_classes)
    rng = make_rng(seed)
    hadamard = sylvester(order)
    if order == code_bits:
        pool = hadamard.T.copy()  # row i of the pool is column i of H
        provenance = "direct"
    else:
        projection = sample_projection(order, code_bits, seed)
        pool = project_and_sign(hadamard, projection)
        provenance = "projected"

    indices = rng.choice(np.arange(1, order), size=num_classes, replace=False)
    codewords = pool[indices].astype(np.int8)
    return Codebook(codewords=codewords, provenance=provenance, seed=seed,
                    selected_indices=indices)


@dataclass(frozen=True)
class TargetCode:
    """Per-sample regression target with ambiguous bits masked out."""

    values: np.ndarray  # (K,) int8 in {-1, 0, +1}
    mask: np.ndarray    # (K,) bool, False exactly where values == 0


def make_target(codebook: Codebook, label_row: np.ndarray) -> TargetCode:
    """Target code for one label vector.

    A single positive label yields that class's codeword with a full mask.
    With several positives the target is the element-wise sign of the
    codeword sum; bits whose sum cancels to zero are masked out.
    """
    y = np.asarray(label_row)
    if y.shape != (codebook.num_classes,):
        raise ValueError(
            f"label row has shape {y.shape}, expected ({codebook.num_classes},)")
    positives = np.flatnonzero(y)
    if positives.size == 0:
        raise ValueError("label row has no positive entry")
    summed = codebook.codewords[positives].astype(np.int64).sum(axis=0)
    values = np.sign(summed).astype(np.int8)
    mask = summed != 0
    return TargetCode(values=values, mask=mask)


def target_batch(codebook: Codebook, labels: np.ndarray):
    """Vectorized targets for a whole label matrix.

    Returns (values, mask) with shapes (N, K) float64 and (N, K) bool.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 2 or y.shape[1] != codebook.num_classes:
        raise ValueError(
            f"label matrix has shape {y.shape}, expected (N, {codebook.num_classes})")
    if np.any(y.sum(axis=1) == 0):
        raise ValueError("every label row needs at least one positive entry")
    summed = y @ codebook.codewords.astype(np.int64)
    return np.sign(summed).astype(np.float64), summed != 0


def save_codebook(codebook: Codebook, path) -> None:
    with open(path, "wb") as f:
        f.write(CODEBOOK_MAGIC)
        write_u32(f, CODEBOOK_VERSION)
        write_u32(f, codebook.num_classes)
        write_u32(f, codebook.code_bits)
        write_u64(f, codebook.seed)
        write_u8(f, _PROVENANCE_TO_TAG[codebook.provenance])
        write_array(f, codebook.codewords, np.int8)


def load_codebook(path) -> Codebook:
    """Read a codebook file; the source indices are not stored on disk."""
    with open(path, "rb") as f:
        expect_magic(f, CODEBOOK_MAGIC, path)
        expect_version(f, CODEBOOK_VERSION, path)
        num_classes = read_u32(f, "class count")
        code_bits = read_u32(f, "code length")
        seed = read_u64(f, "seed")
        tag = read_u8(f, "provenance")
        if tag not in _TAG_TO_PROVENANCE:
            raise FileFormatError(f"{path}: unknown provenance tag {tag}")
        entries = read_array(f, np.int8, num_classes * code_bits, "codewords")
    if not np.all(np.abs(entries) == 1):
        raise FileFormatError(f"{path}: codeword entries must be -1 or +1")
    codewords = entries.reshape(num_classes, code_bits)
    return Codebook(codewords=codewords, provenance=_TAG_TO_PROVENANCE[tag],
                    seed=seed, selected_indices=None)
