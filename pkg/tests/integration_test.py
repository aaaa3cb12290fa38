import unittest
import io
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest.mock import patch
import sys
import os

# Ensure src is in path so we can import fairtransport
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from fairtransport import datasets
from fairtransport.cli import EXIT_AUDIT_FAILED, EXIT_ERROR, EXIT_MISMATCH, EXIT_OK, main
from fairtransport.pipeline import (
    RunConfig,
    cmd_audit,
    cmd_certify,
    cmd_compile,
    cmd_project,
    compile_inputs,
    project,
)
from fairtransport.audit import audit
from fairtransport.transport import collapse_cost


def run_cli(*argv):
    """Run the CLI, returning (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


class TestPipeline(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.paths = datasets.write_loan_example(self.tmp / "inputs", n_rows=40, seed=3)

    def tearDown(self):
        self._tmp.cleanup()

    def inputs(self, paths=None):
        paths = paths or self.paths
        return ["--ontology", paths.ontology, "--binding", paths.binding, "--data", paths.dataset]

    def test_compile_loan_fixture(self):
        """Four applicants: two sensitive concepts and two atoms."""
        small = datasets.write_loan_example(self.tmp / "small", n_rows=4, seed=0)
        out = self.tmp / "compiled"
        code, stdout, _ = run_cli("compile", *self.inputs(small), "--out", out, "--seed", 1)

        self.assertEqual(code, EXIT_OK)
        self.assertIn("k=2, atoms=2", stdout)
        self.assertIn("missing-data warnings=0", stdout)
        mask = (out / "mask.fmm").read_text(encoding="utf-8")
        self.assertEqual(mask, "ProxyForLowIncome,SensitiveAttribute\n11\n00\n11\n00\n")
        atoms_doc = json.loads((out / "atoms.json").read_text(encoding="utf-8"))
        self.assertEqual(atoms_doc["n_atoms"], 2)
        self.assertEqual(atoms_doc["atoms"][1]["rows"], ["JohnDoe", "applicant0003"])
        run = json.loads((out / "run.json").read_text(encoding="utf-8"))
        self.assertEqual(run["seed"], 1)

    def test_no_sensitive_concepts(self):
        plain = self.tmp / "plain.fto"
        plain.write_text(datasets.LOAN_ONTOLOGY.replace("sensitive concept", "concept"), encoding="utf-8")
        args = ["--ontology", plain, "--binding", self.paths.binding, "--data", self.paths.dataset]

        code, _, stderr = run_cli("compile", *args, "--out", self.tmp / "a", "--seed", 1)
        self.assertEqual(code, EXIT_ERROR)
        self.assertIn("--allow-trivial", stderr)

        code, stdout, _ = run_cli("compile", *args, "--out", self.tmp / "b", "--seed", 1, "--allow-trivial")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("k=0, atoms=1", stdout)

    def test_compile_is_deterministic(self):
        for name in ("a", "b"):
            run_cli("compile", *self.inputs(), "--out", self.tmp / name, "--seed", 1)
        for name in ("mask.fmm", "atoms.json"):
            self.assertEqual((self.tmp / "a" / name).read_bytes(), (self.tmp / "b" / name).read_bytes())

    def test_quantile_projection_has_no_gap(self):
        out = self.tmp / "q"
        code, _, _ = run_cli("audit", *self.inputs(), "--out", out, "--seed", 2,
                             "--method", "quantile1d", "--permutations", 199)
        self.assertEqual(code, EXIT_OK)
        report = json.loads((out / "audit.json").read_text(encoding="utf-8"))
        self.assertEqual(report["gaps"]["max_w2_gap_1d"], 0.0)
        self.assertEqual(report["input"], "fair")
        diagnostics = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
        self.assertEqual(diagnostics["method"], "quantile1d")
        self.assertIsNone(diagnostics["epsilon"])

    def test_default_epsilon_is_recorded(self):
        out = self.tmp / "a1"
        code, _, _ = run_cli("project", *self.inputs(), "--out", out, "--seed", 2)
        self.assertEqual(code, EXIT_OK)
        diagnostics = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
        self.assertEqual(diagnostics["method"], "algorithm1")
        self.assertGreater(diagnostics["epsilon"], 0)
        self.assertTrue(diagnostics["converged"])
        run = json.loads((out / "run.json").read_text(encoding="utf-8"))
        self.assertIsNone(run["epsilon"])

    def test_fair_csv_is_deterministic(self):
        for name in ("a", "b"):
            run_cli("project", *self.inputs(), "--out", self.tmp / name, "--seed", 9)
        first = (self.tmp / "a" / "fair.csv").read_bytes()
        self.assertEqual(first, (self.tmp / "b" / "fair.csv").read_bytes())
        self.assertTrue(first.startswith(b"fair_income\n"))
        self.assertEqual(first.count(b"\n"), 41)

    def test_certify_then_verify(self):
        out = self.tmp / "cert"
        code, _, _ = run_cli("certify", *self.inputs(), "--out", out, "--seed", 4,
                             "--method", "quantile1d", "--permutations", 99)
        self.assertEqual(code, EXIT_OK)
        cert = out / "cert.json"

        code, stdout, _ = run_cli("verify", cert, *self.inputs(), "--json")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(stdout)["status"], "PASS")

        altered = self.tmp / "altered.csv"
        text = self.paths.dataset.read_text(encoding="utf-8")
        altered.write_text(text.replace("JaneSmith", "JaneSmyth"), encoding="utf-8")
        args = ["--ontology", self.paths.ontology, "--binding", self.paths.binding, "--data", altered]
        code, stdout, _ = run_cli("verify", cert, *args)
        self.assertEqual(code, EXIT_MISMATCH)
        self.assertRegex(stdout, r"dataset_sha256\s+MISMATCH")

    def test_raw_audit_is_more_dependent(self):
        """The planted ZIP leak is detected in X and removed in Y."""
        large = datasets.write_loan_example(self.tmp / "large", n_rows=200, seed=3)
        raw_out, fair_out = self.tmp / "raw", self.tmp / "fair"
        code, _, stderr = run_cli("audit", *self.inputs(large), "--out", raw_out, "--seed", 6,
                                  "--permutations", 199, "--raw")
        self.assertEqual(code, EXIT_AUDIT_FAILED)
        self.assertIn("below the threshold", stderr)
        code, _, _ = run_cli("audit", *self.inputs(large), "--out", fair_out, "--seed", 6,
                             "--permutations", 199, "--method", "quantile1d")
        self.assertEqual(code, EXIT_OK)

        raw = json.loads((raw_out / "audit_raw.json").read_text(encoding="utf-8"))
        fair = json.loads((fair_out / "audit.json").read_text(encoding="utf-8"))
        self.assertEqual(raw["input"], "raw")
        self.assertLess(raw["hsic"]["p_value"], fair["hsic"]["p_value"])

    def test_stages_compose(self):
        """One-shot certify writes the same bytes as running each stage in turn."""
        def config(out):
            return RunConfig.create(self.paths.ontology, self.paths.binding, self.paths.dataset, out,
                                    permutations=99, seed=8)

        with redirect_stdout(io.StringIO()):
            cmd_certify(config(self.tmp / "oneshot"), created_utc="2024-05-01T12:00:00Z")
            staged = config(self.tmp / "staged")
            cmd_compile(staged)
            cmd_project(staged)
            cmd_audit(staged)
            cmd_certify(staged, created_utc="2024-05-01T12:00:00Z")

        for name in ("mask.fmm", "atoms.json", "fair.csv", "diagnostics.json", "audit.json", "cert.json"):
            self.assertEqual(
                (self.tmp / "oneshot" / name).read_bytes(), (self.tmp / "staged" / name).read_bytes(), msg=name
            )
        run_a = json.loads((self.tmp / "oneshot" / "run.json").read_text(encoding="utf-8"))
        run_b = json.loads((self.tmp / "staged" / "run.json").read_text(encoding="utf-8"))
        run_a.pop("out_dir")
        run_b.pop("out_dir")
        self.assertEqual(run_a, run_b)

    def test_quantile_rejects_multiple_features(self):
        doc = dict(datasets.LOAN_BINDING, feature_columns=["income", "credit_score"])
        binding = self.tmp / "two_features.json"
        binding.write_text(json.dumps(doc), encoding="utf-8")
        args = ["--ontology", self.paths.ontology, "--binding", binding, "--data", self.paths.dataset]
        code, _, stderr = run_cli("project", *args, "--out", self.tmp / "p", "--seed", 1, "--method", "quantile1d")
        self.assertEqual(code, EXIT_ERROR)
        self.assertIn("exactly one feature column", stderr)

    def test_missing_input_file(self):
        code, _, stderr = run_cli("compile", "--ontology", self.tmp / "nope.fto", "--binding", self.paths.binding,
                                  "--data", self.paths.dataset, "--out", self.tmp / "x", "--seed", 1)
        self.assertEqual(code, EXIT_ERROR)
        self.assertTrue(stderr.startswith("Error:"))

    def test_seed_from_environment(self):
        with patch.dict(os.environ, {"FAIRTRANSPORT_SEED": "31337"}):
            run_cli("compile", *self.inputs(), "--out", self.tmp / "env")
        run = json.loads((self.tmp / "env" / "run.json").read_text(encoding="utf-8"))
        self.assertEqual(run["seed"], 31337)
        self.assertEqual(RunConfig.load(self.tmp / "env" / "run.json").seed, 31337)


class TestLoanDebiasing(unittest.TestCase):
    """Seeded leaky-ZIP fixture at 400 applicants."""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        paths = datasets.write_loan_example(cls._tmp.name, n_rows=400, seed=0)
        cls.compiled = compile_inputs(paths.ontology, paths.binding, paths.dataset)
        cls.projection = project(cls.compiled, "quantile1d")

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_partition(self):
        self.assertEqual(self.compiled.partition.n_atoms, 2)
        self.assertEqual(self.compiled.partition.atom_sizes.tolist(), [200, 200])
        self.assertEqual(self.compiled.missing_data_warnings, 0)

    def test_leak_detected_then_removed(self):
        X = self.compiled.features().values
        raw = audit(X, self.compiled.partition, permutations=999, seed=1, raw=True)
        fair = audit(self.projection.Y, self.compiled.partition, permutations=999, seed=1)

        self.assertLessEqual(raw.hsic.p_value, 0.01)
        self.assertGreaterEqual(fair.hsic.p_value, 0.3)
        self.assertEqual(fair.gaps.max_w2_gap_1d, 0.0)
        self.assertTrue(fair.passes(0.05))
        self.assertFalse(raw.passes(0.05))

    def test_cost_below_collapse_cost(self):
        X = self.compiled.features()
        self.assertLessEqual(self.projection.reconstruction_error, collapse_cost(X.values, self.compiled.partition))


if __name__ == '__main__':
    unittest.main()
