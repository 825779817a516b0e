import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from osrcal.dataio import (
    MetricReport,
    RunManifest,
    canonical_json,
    format_float,
    load_array,
    load_labels,
    load_manifest,
    load_report,
    save_array,
    save_labels,
    save_manifest,
    save_report,
    validate_report,
    write_npy,
)
from osrcal.errors import FormatError, InvalidArgumentError, ValidationError
from osrcal.metrics import ece
from osrcal.protocol import SplitSpec, generate_split


def _npy_bytes(header: str, payload: bytes = b"", version: bytes = b"\x01\x00") -> bytes:
    header = header + "\n"
    return b"\x93NUMPY" + version + struct.pack("<H", len(header)) + header.encode() + payload


class TestArrays:
    def test_csv_example(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("1.5,2.0\n3.0,4.5")
        np.testing.assert_array_equal(load_array(p), [[1.5, 2.0], [3.0, 4.5]])

    def test_npy_float32(self, tmp_path):
        p = tmp_path / "a.npy"
        np.save(p, np.array([[1.0]], dtype=np.float32))
        out = load_array(p)
        assert out.dtype == np.float64
        np.testing.assert_array_equal(out, [[1.0]])

    def test_float32_widened_exactly(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
        np.save(tmp_path / "a.npy", x)
        np.testing.assert_array_equal(load_array(tmp_path / "a.npy"), x.astype(np.float64))

    @pytest.mark.parametrize("fmt", ["npy", "csv"])
    def test_roundtrip_bit_identical(self, tmp_path, fmt):
        x = np.random.default_rng(1).normal(scale=1e3, size=(100, 6))
        p = tmp_path / f"a.{fmt}"
        save_array(x, p, fmt)
        y = load_array(p)
        assert y.tobytes() == x.tobytes()

    def test_written_npy_readable_by_numpy(self, tmp_path):
        x = np.random.default_rng(2).normal(size=(5, 4))
        save_array(x, tmp_path / "a.npy")
        np.testing.assert_array_equal(np.load(tmp_path / "a.npy"), x)
        raw = (tmp_path / "a.npy").read_bytes()
        (hlen,) = struct.unpack("<H", raw[8:10])
        assert (10 + hlen) % 64 == 0

    @settings(max_examples=50, deadline=None)
    @given(
        hnp.arrays(
            np.float64,
            hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=6),
            elements=st.floats(allow_nan=False, allow_infinity=False, width=64),
        )
    )
    def test_roundtrip_property(self, tmp_path_factory, x):
        d = tmp_path_factory.mktemp("rt")
        for fmt in ("npy", "csv"):
            save_array(x, d / f"x.{fmt}", fmt)
            np.testing.assert_array_equal(load_array(d / f"x.{fmt}"), x)

    def test_empty(self, tmp_path):
        with pytest.raises(InvalidArgumentError, match="empty array"):
            save_array(np.zeros((0, 0)), tmp_path / "e.npy")

    def test_save_rejects_nan(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            save_array([[1.0, float("nan")]], tmp_path / "n.csv")

    def test_ragged_csv(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(FormatError, match="line 2"):
            load_array(p)

    def test_csv_nan(self, tmp_path):
        p = tmp_path / "n.csv"
        p.write_text("1,2\n3,nan\n")
        with pytest.raises(FormatError, match="line 2"):
            load_array(p)

    def test_csv_garbage(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("1,x\n")
        with pytest.raises(FormatError, match="line 1"):
            load_array(p)

    def test_npy_nan_names_byte(self, tmp_path):
        x = np.array([[1.0, 2.0], [np.nan, 3.0]])
        np.save(tmp_path / "n.npy", x)
        raw = (tmp_path / "n.npy").read_bytes()
        start = len(raw) - x.nbytes
        with pytest.raises(FormatError, match=f"byte {start + 16}"):
            load_array(tmp_path / "n.npy")

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "h.npy"
        p.write_bytes(_npy_bytes("{'descr': '<f8', oops"))
        with pytest.raises(FormatError, match="byte 10"):
            load_array(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.npy"
        p.write_bytes(_npy_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (2, 2), }", b"\0" * 8))
        with pytest.raises(FormatError, match="payload"):
            load_array(p)

    @pytest.mark.parametrize("descr", [">f8", "<c16", "|b1", "<f2"])
    def test_unsupported_dtype(self, tmp_path, descr):
        p = tmp_path / "d.npy"
        p.write_bytes(_npy_bytes(f"{{'descr': '{descr}', 'fortran_order': False, 'shape': (1,), }}", b"\0" * 16))
        with pytest.raises(FormatError, match="dtype"):
            load_array(p)

    def test_version_two(self, tmp_path):
        p = tmp_path / "v.npy"
        p.write_bytes(_npy_bytes("{}", version=b"\x02\x00"))
        with pytest.raises(FormatError, match="byte 6"):
            load_array(p)

    def test_fortran_order(self, tmp_path):
        p = tmp_path / "f.npy"
        np.save(p, np.asfortranarray(np.ones((2, 3))))
        with pytest.raises(FormatError, match="Fortran"):
            load_array(p)

    def test_integer_matrix_rejected(self, tmp_path):
        np.save(tmp_path / "i.npy", np.ones((2, 2), dtype="<i8"))
        with pytest.raises(FormatError):
            load_array(tmp_path / "i.npy")

    def test_write_rejects_bad_dtype(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_npy(np.ones(2, dtype=np.complex128), tmp_path / "c.npy")


class TestLabels:
    def test_csv_example(self, tmp_path):
        p = tmp_path / "y.csv"
        p.write_text("0\n5\n6")
        assert load_labels(p, num_known=6).tolist() == [0, 5, 6]

    def test_out_of_range(self, tmp_path):
        p = tmp_path / "y.csv"
        p.write_text("0\n7\n")
        with pytest.raises(ValidationError, match="row 2"):
            load_labels(p, num_known=6)

    def test_negative(self, tmp_path):
        p = tmp_path / "y.csv"
        p.write_text("-1\n")
        with pytest.raises(ValidationError, match="row 1"):
            load_labels(p, num_known=6)

    @pytest.mark.parametrize("fmt", ["csv", "npy"])
    def test_roundtrip(self, tmp_path, fmt):
        y = np.random.default_rng(3).integers(0, 7, 50)
        save_labels(y, tmp_path / f"y.{fmt}", fmt)
        np.testing.assert_array_equal(load_labels(tmp_path / f"y.{fmt}", 6), y)

    def test_float_npy_rejected(self, tmp_path):
        np.save(tmp_path / "y.npy", np.zeros(3))
        with pytest.raises(FormatError):
            load_labels(tmp_path / "y.npy")

    def test_non_integer_csv(self, tmp_path):
        p = tmp_path / "y.csv"
        p.write_text("1\n2.5\n")
        with pytest.raises(FormatError, match="line 2"):
            load_labels(p)


class TestJson:
    def test_format_float(self):
        assert format_float(1.0) == "1.0"
        assert format_float(0.1) == "0.10000000000000001"
        assert format_float(1e300) == "1.0000000000000001e+300"
        with pytest.raises(FormatError):
            format_float(float("inf"))

    def test_canonical_form(self):
        assert canonical_json({"b": 1, "a": [0.5, None, True]}) == '{"a":[0.5,null,true],"b":1}'

    @settings(max_examples=200)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_roundtrip(self, x):
        assert json.loads(format_float(x)) == x

    def test_manifest_roundtrip(self, tmp_path):
        m = generate_split(SplitSpec(seed=3, run_index=2), "cifar-like")
        save_manifest(m, tmp_path / "m.json")
        assert load_manifest(tmp_path / "m.json") == m

    def test_manifest_validation(self):
        with pytest.raises(ValidationError):
            RunManifest(seed=0, num_total_classes=3, known_class_ids=(0, 1), class_remap={0: 0, 1: 1, 2: 0})
        with pytest.raises(ValidationError):
            RunManifest.from_dict({"seed": 0})

    @pytest.fixture
    def report(self):
        rng = np.random.default_rng(4)
        probs = rng.dirichlet(np.ones(4), size=200)
        labels = rng.integers(0, 4, 200)
        e, table = ece(probs, labels)
        return MetricReport("closed-set", True, 0.31, e, 0.27, table, temperature=1.7)

    def test_report_roundtrip_and_bytes(self, tmp_path, report):
        save_report(report, tmp_path / "a.json")
        again = load_report(tmp_path / "a.json")
        save_report(again, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert again.reliability.to_list() == report.reliability.to_list()
        assert again.temperature == 1.7

    def test_report_schema(self, report):
        doc = report.to_dict()
        validate_report(doc)
        assert len(doc["bins"]) == 15
        for bad in ({**doc, "extra": 1}, {**doc, "ece": 1.5}, {**doc, "method": "nope"}, {**doc, "temperature": 0}):
            with pytest.raises(ValidationError):
                validate_report(bad)
        missing = dict(doc)
        del missing["brier"]
        with pytest.raises(ValidationError):
            validate_report(missing)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{nope")
        with pytest.raises(FormatError):
            load_report(tmp_path / "x.json")
