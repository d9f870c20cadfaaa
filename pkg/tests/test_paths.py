import unittest
from pathlib import Path
import tempfile

from neuroquansa.paths import atomic_output, atomic_write_text, format_value, point_dir, sanitize_segment


class TestSegments(unittest.TestCase):
    def test_illegal_characters_are_replaced(self):
        self.assertEqual(sanitize_segment("h 1/2:*?"), "h_1_2_")
        self.assertEqual(sanitize_segment("N_8__Nh_20"), "N_8_Nh_20")

    def test_never_empty(self):
        self.assertEqual(sanitize_segment(".."), "_")

    def test_length_is_capped(self):
        self.assertEqual(len(sanitize_segment("x" * 400)), 255)

    def test_format_value(self):
        self.assertEqual(format_value(1.25), "1.25")
        self.assertEqual(format_value(5.0), "5")
        self.assertEqual(format_value(1e-5), "1e-05")

    def test_point_dir_is_created_inside_run(self):
        with tempfile.TemporaryDirectory() as td:
            d = point_dir(Path(td), "h_0.5 db/-1")
            self.assertTrue(d.is_dir())
            self.assertEqual(d.parent, Path(td))
            self.assertEqual(d.name, "h_0.5_db_-1")


class TestAtomicOutput(unittest.TestCase):
    def test_success_replaces_final_file(self):
        with tempfile.TemporaryDirectory() as td:
            target = Path(td) / "sub" / "out.txt"
            atomic_write_text(target, "first")
            atomic_write_text(target, "second")
            self.assertEqual(target.read_text(encoding="utf-8"), "second")
            # No temp siblings survive
            self.assertEqual([p.name for p in target.parent.iterdir()], ["out.txt"])

    def test_failure_keeps_previous_file_and_removes_temp(self):
        with tempfile.TemporaryDirectory() as td:
            target = Path(td) / "out.txt"
            target.write_text("previous", encoding="utf-8")
            with self.assertRaises(RuntimeError):
                with atomic_output(target) as tmp:
                    tmp.write_text("partial", encoding="utf-8")
                    raise RuntimeError("boom")
            self.assertEqual(target.read_text(encoding="utf-8"), "previous")
            self.assertEqual(len(list(Path(td).iterdir())), 1)


if __name__ == "__main__":
    unittest.main()
