"""
Seeded loan-approval example: ontology, binding document and applicant CSV.

Half of the applicants live in ZIP codes the ontology marks (directly or by
inference) as proxies for low income; with ``leak=True`` their income is
shifted down, so the raw feature depends on the bias sigma-algebra.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
import pandas as pd

LOAN_ONTOLOGY = """\
# Upper layer: fairness vocabulary
sensitive concept SensitiveAttribute.
sensitive concept ProxyForLowIncome.

# Domain layer
concept LoanApplicant.
concept HighRiskApplicant.
concept UrbanArea.
concept LowIncomeArea.
role livesInZIP.
data hasCreditScore.
data MedianIncome.
individual ZIP_12345.
individual ZIP_23456.
individual ZIP_67890.

# Policy layer
axiom exists(livesInZIP, {ZIP_12345}) => ProxyForLowIncome.
axiom UrbanArea and MedianIncome < 30000 => LowIncomeArea.
axiom LoanApplicant and exists(livesInZIP, LowIncomeArea) => ProxyForLowIncome.
axiom ProxyForLowIncome => SensitiveAttribute.
axiom LoanApplicant and hasCreditScore < 600 => HighRiskApplicant.

assert UrbanArea(ZIP_23456).
assert UrbanArea(ZIP_67890).
assert MedianIncome(ZIP_23456) = 28000.
"""

LOAN_BINDING = {
    "individual_column": "applicant",
    "role_bindings": [
        {"column": "zip", "role": "livesInZIP", "object_prefix": "ZIP_"},
    ],
    "data_bindings": [
        {"column": "credit_score", "property": "hasCreditScore", "target": "row"},
        {"column": "zip_median_income", "property": "MedianIncome", "target": "role_object:livesInZIP"},
    ],
    "concept_bindings": [
        {"column": "product", "equals": "loan", "concept": "LoanApplicant", "target": "row"},
    ],
    "feature_columns": ["income"],
}

# zip -> (median income, proxy for low income)
ZIP_CODES = {
    "12345": (24000, True),
    "23456": (28000, True),
    "67890": (52000, False),
    "78901": (61000, False),
}
_LEAKY_ZIPS = ("12345", "23456")
_CLEAN_ZIPS = ("67890", "78901")

INCOME_MEAN = 60000
INCOME_SD = 15000
LEAK_SHIFT = 12000


class LoanExample(NamedTuple):
    """Paths of the three generated input files."""
    ontology: Path
    binding: Path
    dataset: Path


def _applicant_id(i: int) -> str:
    if i == 0:
        return "JohnDoe"
    if i == 1:
        return "JaneSmith"
    return f"applicant{i + 1:04d}"


def loan_frame(n_rows: int = 400, seed: int = 0, leak: bool = True) -> pd.DataFrame:
    """
    Applicant table with alternating proxy and non-proxy ZIP codes.

    Even rows live in proxy ZIPs, odd rows elsewhere, so an even ``n_rows``
    gives two atoms of equal size. Row 0 is JohnDoe in ZIP 12345 with credit
    score 580; row 1 is JaneSmith in ZIP 67890.
    """
    if n_rows < 2:
        raise ValueError("n_rows must be at least 2")
    rng = np.random.default_rng(seed)
    income = np.rint(rng.normal(INCOME_MEAN, INCOME_SD, size=n_rows)).astype(np.int64)
    credit = rng.integers(520, 820, size=n_rows)
    credit[0] = 580

    records = []
    for i in range(n_rows):
        proxy = i % 2 == 0
        zip_code = (_LEAKY_ZIPS if proxy else _CLEAN_ZIPS)[(i // 2) % 2]
        value = int(income[i]) - (LEAK_SHIFT if proxy and leak else 0)
        records.append({
            "applicant": _applicant_id(i),
            "product": "loan",
            "zip": zip_code,
            "zip_median_income": ZIP_CODES[zip_code][0],
            "credit_score": int(credit[i]),
            "income": value,
        })
    return pd.DataFrame.from_records(records)


def write_loan_example(
    out_dir: Union[str, Path],
    n_rows: int = 400,
    seed: int = 0,
    leak: bool = True,
) -> LoanExample:
    """
    Write ``loan.fto``, ``loan_binding.json`` and ``loan.csv`` into ``out_dir``.

    Example:
        >>> from fairtransport.datasets import write_loan_example
        >>> paths = write_loan_example("data", n_rows=400, seed=7)
        >>> paths.dataset
        PosixPath('data/loan.csv')
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    example = LoanExample(out / "loan.fto", out / "loan_binding.json", out / "loan.csv")
    example.ontology.write_bytes(LOAN_ONTOLOGY.encode("utf-8"))
    example.binding.write_bytes((json.dumps(LOAN_BINDING, indent=2) + "\n").encode("utf-8"))
    loan_frame(n_rows, seed, leak).to_csv(example.dataset, index=False, lineterminator="\n")
    return example
