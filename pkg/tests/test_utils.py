import logging
import math
import os
import tempfile
import unittest

import numpy as np

from core.utils import RecordWriter, format_value, get_logger, mean_and_se, rng_stream


class TestLogger(unittest.TestCase):
    def test_logger_initialization(self):
        logger = get_logger("spectral")
        self.assertEqual(logger.name, "ridgepath.spectral")
        self.assertTrue(len(logger.handlers) > 0)
        # poziom dziedziczony z loggera nadrzędnego
        self.assertEqual(logger.level, logging.NOTSET)

    def test_handler_added_once(self):
        first = get_logger("utils_test")
        count = len(first.handlers)
        second = get_logger("utils_test")
        self.assertIs(first, second)
        self.assertEqual(len(second.handlers), count)


class TestRngStream(unittest.TestCase):
    def test_same_key_same_stream(self):
        a = rng_stream(2024, 3, "noise").standard_normal(5)
        b = rng_stream(2024, 3, "noise").standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_purposes_are_independent(self):
        a = rng_stream(2024, 0, "noise").standard_normal(5)
        b = rng_stream(2024, 0, "design").standard_normal(5)
        c = rng_stream(2024, 1, "noise").standard_normal(5)
        self.assertFalse(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_unknown_purpose(self):
        with self.assertRaises(ValueError):
            rng_stream(1, 0, "weather")


class TestRecordWriter(unittest.TestCase):
    def test_metadata_header_and_rows(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "out", "paths.csv")
            with RecordWriter(path, headers=["method", "total"], metadata={"seed": 7, "rng": "x"}) as writer:
                writer.write_row(["CG", 0.1])
                writer.write_row(["RR", math.inf])
                self.assertEqual(writer.rows_written, 2)
            with open(path, encoding="utf-8") as handle:
                lines = handle.read().splitlines()
        self.assertEqual(lines, ["# seed=7", "# rng=x", "method,total", "CG,0.1", "RR,inf"])


def test_format_value():
    assert format_value(None) == ""
    assert format_value(True) == "1"
    assert format_value(np.bool_(False)) == "0"
    assert format_value(0.1) == "0.1"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(math.nan) == "nan"
    assert format_value("beta0") == "beta0"


def test_mean_and_se():
    assert mean_and_se([2.0]) == (2.0, 0.0)
    mean, se = mean_and_se([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert math.isclose(se, 1.0 / math.sqrt(3.0))
    empty = mean_and_se([])
    assert math.isnan(empty[0]) and math.isnan(empty[1])


if __name__ == "__main__":
    unittest.main()
