"""Solver-agnostic conic problem representation.

A :class:`ConicProblem` holds a linear objective over scalar variables,
affine equality constraints, and a list of PSD blocks. Each block is an
affine map from the scalar variables to a symmetric matrix: a constant
part plus one coefficient entry per (variable, cell) pair. Entries are
stored for the upper triangle only (row <= col) and mirrored implicitly.

Serialization is canonical JSON with a fixed key order and floats written
with ``repr`` round-trip fidelity, so serialize -> parse -> serialize is
byte-identical.

Schema (format tag ``nlosloc-conic/1``)::

    {
      "format": "nlosloc-conic/1",
      "num_vars": int,
      "var_labels": [str, ...],
      "objective": {"vars": [int], "coefs": [float]},
      "equalities": [
        {"label": str, "vars": [int], "coefs": [float], "rhs": float},
        ...
      ],
      "psd_blocks": [
        {"dim": int,
         "const": {"rows": [int], "cols": [int], "vals": [float]},
         "terms": {"vars": [int], "rows": [int], "cols": [int], "coefs": [float]}},
        ...
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

FORMAT_TAG = "nlosloc-conic/1"


@dataclass
class PsdBlock:
    """One PSD constraint: const + sum_i x[var_i] * coef_i * E(row_i, col_i) >= 0."""

    dim: int
    const_rows: np.ndarray
    const_cols: np.ndarray
    const_vals: np.ndarray
    term_vars: np.ndarray
    term_rows: np.ndarray
    term_cols: np.ndarray
    term_coefs: np.ndarray

    def __post_init__(self) -> None:
        self.const_rows = np.asarray(self.const_rows, dtype=np.int32)
        self.const_cols = np.asarray(self.const_cols, dtype=np.int32)
        self.const_vals = np.asarray(self.const_vals, dtype=np.float64)
        self.term_vars = np.asarray(self.term_vars, dtype=np.int32)
        self.term_rows = np.asarray(self.term_rows, dtype=np.int32)
        self.term_cols = np.asarray(self.term_cols, dtype=np.int32)
        self.term_coefs = np.asarray(self.term_coefs, dtype=np.float64)
        for rows, cols in ((self.const_rows, self.const_cols), (self.term_rows, self.term_cols)):
            if rows.size and (rows.min() < 0 or cols.max() >= self.dim or np.any(rows > cols)):
                raise InvalidInputError("block entries must satisfy 0 <= row <= col < dim")

    def materialize(self, x: np.ndarray) -> np.ndarray:
        """Dense symmetric matrix of this block at the point ``x``."""
        s = np.zeros((self.dim, self.dim))
        np.add.at(s, (self.const_rows, self.const_cols), self.const_vals)
        vals = np.asarray(x)[self.term_vars] * self.term_coefs
        np.add.at(s, (self.term_rows, self.term_cols), vals)
        upper = np.triu(s, 1)
        return s + upper.T


@dataclass
class ConicProblem:
    """Linear objective + affine equalities + PSD blocks over scalar variables."""

    num_vars: int
    obj_vars: np.ndarray
    obj_coefs: np.ndarray
    eq_vars: list[np.ndarray]
    eq_coefs: list[np.ndarray]
    eq_rhs: np.ndarray
    eq_labels: list[str]
    blocks: list[PsdBlock]
    var_labels: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.obj_vars = np.asarray(self.obj_vars, dtype=np.int32)
        self.obj_coefs = np.asarray(self.obj_coefs, dtype=np.float64)
        self.eq_rhs = np.asarray(self.eq_rhs, dtype=np.float64)
        self.eq_vars = [np.asarray(v, dtype=np.int32) for v in self.eq_vars]
        self.eq_coefs = [np.asarray(c, dtype=np.float64) for c in self.eq_coefs]
        if len(self.var_labels) not in (0, self.num_vars):
            raise InvalidInputError("var_labels must be empty or cover every variable")
        for blk in self.blocks:
            if blk.term_vars.size and blk.term_vars.max() >= self.num_vars:
                raise InvalidInputError("block references an undeclared variable")
        for v in self.eq_vars:
            if v.size and v.max() >= self.num_vars:
                raise InvalidInputError("equality references an undeclared variable")

    @property
    def num_equalities(self) -> int:
        return len(self.eq_rhs)

    def objective_value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(np.dot(self.obj_coefs, x[self.obj_vars]))

    def objective_dense(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        np.add.at(c, self.obj_vars, self.obj_coefs)
        return c

    def equality_residuals(self, x: np.ndarray) -> np.ndarray:
        """A x - b for every equality row."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(self.num_equalities)
        for r, (vs, cs) in enumerate(zip(self.eq_vars, self.eq_coefs)):
            out[r] = np.dot(cs, x[vs]) - self.eq_rhs[r]
        return out

    def var_index(self, label: str) -> int:
        try:
            return self.var_labels.index(label)
        except ValueError:
            raise InvalidInputError(f"no variable labeled {label!r}") from None

    # -- serialization --------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": FORMAT_TAG,
            "num_vars": self.num_vars,
            "var_labels": list(self.var_labels),
            "objective": {
                "vars": self.obj_vars.tolist(),
                "coefs": self.obj_coefs.tolist(),
            },
            "equalities": [
                {
                    "label": self.eq_labels[r],
                    "vars": self.eq_vars[r].tolist(),
                    "coefs": self.eq_coefs[r].tolist(),
                    "rhs": float(self.eq_rhs[r]),
                }
                for r in range(self.num_equalities)
            ],
            "psd_blocks": [
                {
                    "dim": blk.dim,
                    "const": {
                        "rows": blk.const_rows.tolist(),
                        "cols": blk.const_cols.tolist(),
                        "vals": blk.const_vals.tolist(),
                    },
                    "terms": {
                        "vars": blk.term_vars.tolist(),
                        "rows": blk.term_rows.tolist(),
                        "cols": blk.term_cols.tolist(),
                        "coefs": blk.term_coefs.tolist(),
                    },
                }
                for blk in self.blocks
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ConicProblem":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_TAG:
            raise InvalidInputError(f"unexpected format tag {doc.get('format')!r}")
        blocks = [
            PsdBlock(
                dim=b["dim"],
                const_rows=b["const"]["rows"],
                const_cols=b["const"]["cols"],
                const_vals=b["const"]["vals"],
                term_vars=b["terms"]["vars"],
                term_rows=b["terms"]["rows"],
                term_cols=b["terms"]["cols"],
                term_coefs=b["terms"]["coefs"],
            )
            for b in doc["psd_blocks"]
        ]
        return cls(
            num_vars=doc["num_vars"],
            obj_vars=np.asarray(doc["objective"]["vars"], dtype=np.int32),
            obj_coefs=np.asarray(doc["objective"]["coefs"], dtype=np.float64),
            eq_vars=[np.asarray(e["vars"], dtype=np.int32) for e in doc["equalities"]],
            eq_coefs=[np.asarray(e["coefs"], dtype=np.float64) for e in doc["equalities"]],
            eq_rhs=np.asarray([e["rhs"] for e in doc["equalities"]], dtype=np.float64),
            eq_labels=[e["label"] for e in doc["equalities"]],
            blocks=blocks,
            var_labels=list(doc["var_labels"]),
        )
