# -*- coding: utf-8 -*-
"""
FCS解析测试：用测试内构造的FCS 3.0/3.1文件做往返校验和错误校验
"""

import numpy as np
import pytest

from src.scripts.fcs_parser import HEADER_LENGTH, build_fcs_bytes, parse_fcs, parse_text_segment, read_fcs
from src.utils.errors import FcsFormatError, MarkerError


class TestRoundTrip:
    def test_three_events_two_params(self):
        events = np.array([[1, 2], [3, 4], [5, 6]], dtype=np.float32)
        sample = parse_fcs(build_fcs_bytes(events, ["FSC-A", "CD19"]))
        np.testing.assert_array_equal(sample.events, events)
        assert sample.markers == ["FSC-A", "CD19"]
        assert sample.labels is None

    @pytest.mark.parametrize("byteorder", ["little", "big"])
    def test_float32_is_bit_exact(self, byteorder, rng):
        events = rng.normal(size=(50, 4)).astype(np.float32)
        sample = parse_fcs(build_fcs_bytes(events, ["a", "b", "c", "d"], byteorder=byteorder))
        assert sample.events.tobytes() == events.tobytes()

    def test_float64_datatype(self, rng):
        events = rng.normal(size=(5, 2))
        sample = parse_fcs(build_fcs_bytes(events, ["a", "b"], datatype="D"))
        np.testing.assert_array_equal(sample.events, events.astype(np.float32))

    def test_integer_datatype(self):
        events = np.array([[1, 65535], [7, 0]])
        sample = parse_fcs(build_fcs_bytes(events, ["a", "b"], datatype="I", bits=16))
        np.testing.assert_array_equal(sample.events, events.astype(np.float32))

    def test_fcs30_version(self):
        sample = parse_fcs(build_fcs_bytes(np.ones((2, 1)), ["a"], version="FCS3.0"))
        assert sample.metadata["fcs_version"] == "FCS3.0"

    def test_escaped_delimiter_in_value(self):
        raw = build_fcs_bytes(np.ones((2, 1)), ["CD3/CD8"])
        sample = parse_fcs(raw)
        assert sample.markers == ["CD3/CD8"]

    def test_stain_name_preferred_over_short_name(self):
        raw = build_fcs_bytes(np.ones((2, 2)), ["FL1-A", "FL2-A"], extra_text={"$P2S": "CD45"})
        assert parse_fcs(raw).markers == ["FL1-A", "CD45"]

    def test_label_parameter_becomes_labels(self):
        events = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 1.0]])
        sample = parse_fcs(build_fcs_bytes(events, ["CD19", "label"]), label_column="label")
        np.testing.assert_array_equal(sample.labels, [0, 1, 1])
        assert sample.markers == ["CD19"]

    def test_offsets_from_text_segment_when_header_is_zero(self):
        raw = bytearray(build_fcs_bytes(np.arange(6, dtype=np.float32).reshape(3, 2), ["a", "b"]))
        raw[26:42] = b"       0       0"
        sample = parse_fcs(bytes(raw))
        np.testing.assert_array_equal(sample.events, np.arange(6, dtype=np.float32).reshape(3, 2))

    def test_read_fcs_from_file(self, tmp_path):
        path = tmp_path / "patient_01.fcs"
        path.write_bytes(build_fcs_bytes(np.ones((4, 2)), ["a", "b"]))
        sample = read_fcs(path)
        assert sample.sample_id == "patient_01"
        assert sample.n_events == 4


class TestTextSegment:
    def test_doubled_delimiter_is_unescaped(self):
        text = parse_text_segment(b"/$P1N/CD3//CD8/$PAR/1/")
        assert text["$P1N"] == "CD3/CD8"

    def test_keywords_are_case_insensitive(self):
        assert parse_text_segment(b"|$tot|5|")["$TOT"] == "5"

    def test_odd_token_count_rejected(self):
        with pytest.raises(FcsFormatError):
            parse_text_segment(b"/$PAR/1/$TOT/")


class TestMalformed:
    def test_tot_larger_than_data(self):
        raw = build_fcs_bytes(np.ones((4, 2), dtype=np.float32), ["a", "b"], extra_text={"$TOT": "5"})
        with pytest.raises(FcsFormatError, match="DATA"):
            parse_fcs(raw)

    def test_missing_par_keyword(self):
        raw = build_fcs_bytes(np.ones((2, 1)), ["a"])
        raw = raw.replace(b"/$PAR/1/", b"/$PXX/1/")
        with pytest.raises(FcsFormatError, match=r"\$PAR"):
            parse_fcs(raw)

    def test_unsupported_datatype(self):
        raw = build_fcs_bytes(np.ones((2, 1)), ["a"], extra_text={"$DATATYPE": "A"})
        with pytest.raises(FcsFormatError, match="DATATYPE"):
            parse_fcs(raw)

    def test_unsupported_version(self):
        raw = b"FCS2.0" + build_fcs_bytes(np.ones((2, 1)), ["a"])[6:]
        with pytest.raises(FcsFormatError, match="版本"):
            parse_fcs(raw)

    def test_truncated_header(self):
        with pytest.raises(FcsFormatError):
            parse_fcs(b"FCS3.1" + b" " * (HEADER_LENGTH - 20))

    def test_truncated_data(self):
        raw = build_fcs_bytes(np.ones((10, 2), dtype=np.float32), ["a", "b"])
        with pytest.raises(FcsFormatError):
            parse_fcs(raw[:-8])

    def test_missing_label_parameter(self):
        with pytest.raises(MarkerError):
            parse_fcs(build_fcs_bytes(np.ones((2, 1)), ["a"]), label_column="label")
