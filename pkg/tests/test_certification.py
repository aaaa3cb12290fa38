"""
Tests for the certification module.

Tests cover:
- digests and canonical JSON
- Certificate schema validation and round-trip
- build_certificate determinism and hash locality
- verify_certificate: PASS, edited ontology, re-run failure, random byte flips
"""

import unittest
import io
import json
import random
import shutil
import tempfile
from contextlib import redirect_stdout
from pathlib import Path
import sys
import os

# Ensure src is in path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from fairtransport import datasets
from fairtransport.certification import (
    Certificate,
    canonical_json,
    sha256_bytes,
    sha256_file,
    validate_certificate,
    verify_certificate,
)
from fairtransport.errors import CertificateSchemaError, FairTransportError
from fairtransport.pipeline import RunConfig, cmd_certify

FIXED_TIME = "2024-01-01T00:00:00Z"
INPUT_DIGESTS = ("ontology_sha256", "binding_sha256", "dataset_sha256")


def certify_quietly(cfg: RunConfig) -> Certificate:
    with redirect_stdout(io.StringIO()):
        return cmd_certify(cfg, created_utc=FIXED_TIME)


class _FixtureCase(unittest.TestCase):
    """Writes the loan example and certifies it once per test."""
    n_rows = 24

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.paths = datasets.write_loan_example(self.tmp / "inputs", n_rows=self.n_rows, seed=11)
        self.cfg = self.run_config(self.tmp / "out")
        self.cert = certify_quietly(self.cfg)

    def tearDown(self):
        self._tmp.cleanup()

    def run_config(self, out_dir: Path) -> RunConfig:
        return RunConfig.create(
            self.paths.ontology, self.paths.binding, self.paths.dataset, out_dir,
            method="algorithm1", permutations=99, seed=5,
        )

    def verify(self, ontology=None, binding=None, dataset=None):
        return verify_certificate(
            self.cert,
            ontology or self.paths.ontology,
            binding or self.paths.binding,
            dataset or self.paths.dataset,
        )


class TestDigests(unittest.TestCase):
    def test_known_vector(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "abc.txt"
            path.write_bytes(b"abc")
            expected = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
            self.assertEqual(sha256_file(path), expected)
            self.assertEqual(sha256_bytes(b"abc"), expected)

    def test_missing_file(self):
        with self.assertRaises(FairTransportError):
            sha256_file("/nonexistent/cert-input.csv")

    def test_canonical_json(self):
        doc = {"b": 1, "a": [0.1, None, True], "c": {"z": 1e-300, "y": "é"}}
        text = canonical_json(doc)
        self.assertEqual(text, '{"a":[0.1,null,true],"b":1,"c":{"y":"é","z":1e-300}}')
        self.assertEqual(canonical_json(json.loads(text)), text)

    def test_canonical_json_rejects_nan(self):
        with self.assertRaises(ValueError):
            canonical_json({"x": float("nan")})


class TestCertificate(_FixtureCase):
    """Tests for certificate contents and schema."""

    def test_contents(self):
        doc = self.cert.to_dict()
        self.assertEqual(doc["schema_version"], "1.0")
        self.assertEqual(doc["method"], "algorithm1")
        self.assertGreater(doc["epsilon"], 0)
        self.assertEqual(doc["hsic"]["seed"], 5)
        self.assertEqual(doc["hsic"]["permutations"], 99)
        self.assertEqual(doc["features"], ["income"])
        self.assertEqual(doc["created_utc"], FIXED_TIME)
        self.assertEqual(doc["dataset_sha256"], sha256_file(self.paths.dataset))
        written = (self.tmp / "out" / "cert.json").read_bytes()
        self.assertEqual(written, self.cert.to_json().encode("utf-8"))

    def test_serialization_is_a_fixpoint(self):
        text = self.cert.to_json()
        self.assertEqual(Certificate.from_json(text).to_json(), text)
        self.assertEqual(canonical_json(json.loads(text)), text)
        self.assertNotIn(" ", text)

    def test_byte_identical_reruns(self):
        again = certify_quietly(self.run_config(self.tmp / "again"))
        self.assertEqual(again.to_json(), self.cert.to_json())
        for name in ("mask.fmm", "fair.csv", "audit.json", "cert.json"):
            self.assertEqual((self.tmp / "out" / name).read_bytes(), (self.tmp / "again" / name).read_bytes())

    def test_hash_locality(self):
        """Editing one income value changes the dataset digest only."""
        text = self.paths.dataset.read_text(encoding="utf-8")
        header, first, rest = text.split("\n", 2)
        fields = first.split(",")
        fields[-1] = str(int(fields[-1]) + 1)
        self.paths.dataset.write_text("\n".join([header, ",".join(fields), rest]), encoding="utf-8")

        changed = certify_quietly(self.run_config(self.tmp / "changed"))
        self.assertNotEqual(changed.dataset_sha256, self.cert.dataset_sha256)
        self.assertEqual(changed.ontology_sha256, self.cert.ontology_sha256)
        self.assertEqual(changed.binding_sha256, self.cert.binding_sha256)
        self.assertEqual(changed.mask_sha256, self.cert.mask_sha256)

    def test_truncated_digest_is_a_schema_error(self):
        doc = self.cert.to_dict()
        doc["mask_sha256"] = doc["mask_sha256"][:-1]
        with self.assertRaises(CertificateSchemaError) as ctx:
            Certificate.from_dict(doc)
        self.assertIn("mask_sha256", str(ctx.exception))

    def test_schema_violations(self):
        base = self.cert.to_dict()
        cases = [
            ("schema_version", "2.0"),
            ("method", "gradient"),
            ("epsilon", -1.0),
            ("reconstruction_error", "0.5"),
            ("missing_data_warnings", True),
            ("created_utc", "yesterday"),
            ("ontology_sha256", base["ontology_sha256"].upper()),
        ]
        for name, value in cases:
            doc = dict(base, **{name: value})
            with self.assertRaises(CertificateSchemaError, msg=name):
                validate_certificate(doc)
        doc = dict(base, hsic=dict(base["hsic"], p_value=0.0))
        with self.assertRaises(CertificateSchemaError):
            validate_certificate(doc)
        doc = dict(base)
        del doc["gaps"]
        with self.assertRaises(CertificateSchemaError):
            validate_certificate(doc)
        with self.assertRaises(CertificateSchemaError):
            Certificate.from_json("{truncated")

    def test_load(self):
        loaded = Certificate.load(self.tmp / "out" / "cert.json")
        self.assertEqual(loaded, Certificate.from_dict(self.cert.to_dict()))
        self.assertEqual(loaded.seed, 5)
        self.assertEqual(loaded.permutations, 99)


class TestVerification(_FixtureCase):
    """Tests for re-running the pipeline against a certificate."""

    def test_round_trip_passes(self):
        report = self.verify()
        self.assertTrue(report.passed)
        self.assertEqual(report.status, "PASS")
        for name in INPUT_DIGESTS + ("features", "mask_sha256", "reconstruction_error", "hsic.statistic"):
            self.assertEqual(report.check(name).status, "MATCH")
        self.assertEqual(report.check("hsic.p_value").status, "INFO")
        self.assertEqual(report.to_dict()["status"], "PASS")
        self.assertIn("PASS", repr(report))
        self.assertIn("<table>", report._repr_html_())

    def test_added_proxy_axiom(self):
        """A new proxy axiom changes the ontology digest and the mask."""
        edited = self.tmp / "edited.fto"
        edited.write_text(
            datasets.LOAN_ONTOLOGY + "axiom exists(livesInZIP, {ZIP_67890}) => ProxyForLowIncome.\n",
            encoding="utf-8",
        )
        report = self.verify(ontology=edited)
        self.assertFalse(report.passed)
        self.assertEqual(report.check("ontology_sha256").status, "MISMATCH")
        self.assertEqual(report.check("mask_sha256").status, "MISMATCH")
        self.assertEqual(report.check("binding_sha256").status, "MATCH")
        self.assertEqual(report.check("dataset_sha256").status, "MATCH")

    def test_feature_columns_are_compared(self):
        """A certificate naming other feature columns fails with matching digests."""
        self.assertTrue(self.cert.features)
        edited = Certificate.from_dict(dict(self.cert.to_dict(), features=["credit_score"]))
        report = verify_certificate(edited, self.paths.ontology, self.paths.binding, self.paths.dataset)
        self.assertFalse(report.passed)
        self.assertEqual(report.check("features").status, "MISMATCH")
        self.assertEqual(report.check("features").recomputed, list(self.cert.features))
        for name in INPUT_DIGESTS + ("mask_sha256",):
            self.assertEqual(report.check(name).status, "MATCH")

    def test_certificate_without_features_reports_columns(self):
        bare = Certificate.from_dict(dict(self.cert.to_dict(), features=[]))
        report = verify_certificate(bare, self.paths.ontology, self.paths.binding, self.paths.dataset)
        self.assertTrue(report.passed)
        self.assertEqual(report.check("features").status, "INFO")

    def test_failed_rerun_reports_errors(self):
        broken = self.tmp / "broken.fto"
        broken.write_text("concept A", encoding="utf-8")
        report = self.verify(ontology=broken)
        self.assertFalse(report.passed)
        self.assertEqual(report.status, "MISMATCH")
        self.assertEqual(report.check("mask_sha256").status, "ERROR")
        self.assertIsNotNone(report.error)
        self.assertIn("Re-run failed", repr(report))

    def test_missing_input_file(self):
        with self.assertRaises(FairTransportError):
            self.verify(dataset=self.tmp / "missing.csv")

    def test_random_byte_flips(self):
        """Each single-byte flip mismatches exactly the digest of the flipped file."""
        rng = random.Random(2024)
        originals = {
            "ontology_sha256": self.paths.ontology,
            "binding_sha256": self.paths.binding,
            "dataset_sha256": self.paths.dataset,
        }
        for trial in range(100):
            target = rng.choice(INPUT_DIGESTS)
            copies = {}
            trial_dir = self.tmp / f"flip{trial}"
            trial_dir.mkdir()
            for name, path in originals.items():
                copies[name] = trial_dir / path.name
                shutil.copyfile(path, copies[name])
            data = bytearray(copies[target].read_bytes())
            position = rng.randrange(len(data))
            data[position] ^= rng.randrange(1, 256)
            copies[target].write_bytes(bytes(data))

            report = self.verify(copies["ontology_sha256"], copies["binding_sha256"], copies["dataset_sha256"])
            self.assertFalse(report.passed)
            for name in INPUT_DIGESTS:
                expected = "MISMATCH" if name == target else "MATCH"
                self.assertEqual(report.check(name).status, expected, msg=f"trial {trial}, {name}")


if __name__ == '__main__':
    unittest.main()
