"""Two-point extrapolation of Monte Carlo energies and enthalpy statistics.

A Monte Carlo integral carries an error band proportional to 1/sqrt(N).
Given estimates at two sample counts N1 < N2 whose values move monotonically
downward, the band bounds the exact value between two affine combinations of
the estimates; their average is taken as the extrapolated value. Downstream,
reaction enthalpies computed from extrapolated energies are compared against
reference values through simple error statistics.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import Mapping, Optional

import numpy as np

from . import _toml

KJ_PER_MOL_PER_HARTREE = 2625.4996394799  # CODATA


@dataclasses.dataclass(frozen=True)
class ExtrapolationPair:
    """Estimates of one integral at two sample counts, n2 > n1."""

    n1: int
    i1: float  # value at n1, hartree
    n2: int
    i2: float  # value at n2, hartree

    def __post_init__(self):
        if self.n1 <= 0:
            raise ValueError(f"n1 must be positive, got {self.n1}")
        if self.n2 <= self.n1:
            raise ValueError(f"need n2 > n1, got n1={self.n1}, n2={self.n2}")
        if not (math.isfinite(self.i1) and math.isfinite(self.i2)):
            raise ValueError("values must be finite")


@dataclasses.dataclass(frozen=True)
class ExtrapolationResult:
    i_left: float
    i_right: float
    i_exact: float  # (i_left + i_right) / 2
    monotonic: bool  # i2 < i1, the assumption behind the bounds


def extrapolate(pair: ExtrapolationPair) -> ExtrapolationResult:
    """Infinite-sample estimate from a two-point pair.

    i_left/i_right are the extreme compatible values of the exact integral;
    i_exact is their average. When the pair is not monotonically decreasing
    the bounds lose their meaning; the result is still returned but flagged.
    """
    s1, s2 = math.sqrt(pair.n1), math.sqrt(pair.n2)
    i_left = (pair.i2 * s2 - pair.i1 * s1) / (s2 - s1)
    i_right = (pair.i2 * s2 + pair.i1 * s1) / (s2 + s1)
    return ExtrapolationResult(
        i_left=i_left,
        i_right=i_right,
        i_exact=0.5 * (i_left + i_right),
        monotonic=pair.i2 < pair.i1,
    )


# ---------------------------------------------------------------------------
# Reaction enthalpies.


@dataclasses.dataclass(frozen=True)
class Reaction:
    """Signed stoichiometry (products positive) with computed/reference enthalpies."""

    stoichiometry: Mapping[str, int]
    computed: float  # kJ/mol
    reference: float  # kJ/mol
    label: str = ""

    def __post_init__(self):
        if not self.stoichiometry:
            raise ValueError("stoichiometry must not be empty")


@dataclasses.dataclass(frozen=True)
class ReactionTable:
    reactions: tuple[Reaction, ...]

    def __post_init__(self):
        object.__setattr__(self, "reactions", tuple(self.reactions))


@dataclasses.dataclass(frozen=True)
class ErrorStatistics:
    delta_max_abs: float  # kJ/mol
    mean_abs: float  # kJ/mol
    std: float  # kJ/mol, sample (n-1) deviation of signed errors


def reaction_enthalpy(energies: Mapping[str, float], stoichiometry: Mapping[str, int]) -> float:
    """Sum of coefficient * species energy (hartree), converted to kJ/mol."""
    total = 0.0
    for species, coeff in stoichiometry.items():
        if species not in energies:
            raise KeyError(f"no energy for species {species!r}")
        total += coeff * energies[species]
    return total * KJ_PER_MOL_PER_HARTREE


def error_statistics(table: ReactionTable) -> ErrorStatistics:
    """Max/mean absolute error and sample deviation of computed - reference."""
    if len(table.reactions) < 2:
        raise ValueError("need at least 2 reactions for error statistics")
    errors = np.array([r.computed - r.reference for r in table.reactions])
    return ErrorStatistics(
        delta_max_abs=float(np.max(np.abs(errors))),
        mean_abs=float(np.mean(np.abs(errors))),
        std=float(np.std(errors, ddof=1)),
    )


# ---------------------------------------------------------------------------
# File interfaces.

EXTRAPOLATE_INPUT_COLUMNS = ["label", "n1", "i1_ha", "n2", "i2_ha"]
EXTRAPOLATE_OUTPUT_COLUMNS = EXTRAPOLATE_INPUT_COLUMNS + [
    "i_left", "i_right", "i_exact", "monotonic",
]


def extrapolate_csv_rows(rows: list[dict]) -> tuple[list[dict], int]:
    """Extends parsed CSV rows with extrapolation columns.

    Rows that fail validation keep their input fields, get empty result
    fields, and 'error: <reason>' in the monotonic column. Returns the
    extended rows and the number of errored rows.
    """
    out = []
    n_errors = 0
    for row in rows:
        extended = dict(row)
        try:
            pair = ExtrapolationPair(
                n1=int(row["n1"]), i1=float(row["i1_ha"]),
                n2=int(row["n2"]), i2=float(row["i2_ha"]),
            )
            result = extrapolate(pair)
            extended.update(
                i_left=repr(result.i_left),
                i_right=repr(result.i_right),
                i_exact=repr(result.i_exact),
                monotonic=str(result.monotonic).lower(),
            )
        except (ValueError, KeyError) as exc:
            n_errors += 1
            extended.update(i_left="", i_right="", i_exact="", monotonic=f"error: {exc}")
        out.append(extended)
    return out, n_errors


def extrapolate_csv(in_path, out_path) -> int:
    """Runs the extrapolation over a CSV file; returns the error-row count."""
    with open(in_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EXTRAPOLATE_INPUT_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"input CSV is missing columns: {sorted(missing)}")
        rows = list(reader)
    extended, n_errors = extrapolate_csv_rows(rows)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EXTRAPOLATE_OUTPUT_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(extended)
    return n_errors


def parse_reaction_table(text: str) -> ReactionTable:
    """Reads a reaction table from config text.

    Schema::

        [energies]              # optional, hartree
        CO = -113.3241

        [[reactions]]
        label = "CO + H2 -> CH2O"
        species = ["CO", "H2", "CH2O"]
        coefficients = [-1, -1, 1]
        reference_kjmol = -21.85
        computed_kjmol = -21.00   # optional; derived from energies if absent

    Each reaction needs either computed_kjmol or a complete set of species
    energies to derive it from.
    """
    data = _toml.parse(text)
    energies = data.get("energies", {})
    raw = data.get("reactions")
    if not isinstance(raw, list) or not raw:
        raise ValueError("reaction table needs at least one [[reactions]] entry")
    reactions = []
    for entry in raw:
        species = entry.get("species")
        coefficients = entry.get("coefficients")
        if not species or not coefficients or len(species) != len(coefficients):
            raise ValueError(f"reaction {entry.get('label', '')!r} needs matching species/coefficients")
        stoichiometry = dict(zip(species, coefficients))
        if "reference_kjmol" not in entry:
            raise ValueError(f"reaction {entry.get('label', '')!r} is missing reference_kjmol")
        if "computed_kjmol" in entry:
            computed = float(entry["computed_kjmol"])
        else:
            computed = reaction_enthalpy(energies, stoichiometry)
        reactions.append(
            Reaction(
                stoichiometry=stoichiometry,
                computed=computed,
                reference=float(entry["reference_kjmol"]),
                label=str(entry.get("label", "")),
            )
        )
    return ReactionTable(reactions=tuple(reactions))


def load_reaction_table(path) -> ReactionTable:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_reaction_table(fh.read())
