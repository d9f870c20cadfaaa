import threading
import time
import unittest

import numpy as np

from neuroquansa.scheduler import WorkerPool, task_rng, task_seed


class TestWorkerPool(unittest.TestCase):
    def test_results_follow_input_order(self):
        def slow_square(x):
            # Later items finish first
            time.sleep(0.01 * (5 - x))
            return x * x

        with WorkerPool(4) as pool:
            self.assertEqual(pool.map_ordered(slow_square, range(5)), [0, 1, 4, 9, 16])

    def test_single_worker_runs_inline(self):
        caller = threading.get_ident()
        with WorkerPool(1) as pool:
            idents = pool.map_ordered(lambda _: threading.get_ident(), range(3))
        self.assertEqual(set(idents), {caller})

    def test_errors_propagate(self):
        def fail_on_two(x):
            if x == 2:
                raise KeyError(x)
            return x

        with WorkerPool(3) as pool:
            with self.assertRaises(KeyError):
                pool.map_ordered(fail_on_two, range(4))

    def test_rejects_zero_workers(self):
        with self.assertRaises(ValueError):
            WorkerPool(0)


class TestTaskSeeds(unittest.TestCase):
    def test_same_keys_same_stream(self):
        a = task_rng(7, 1, 2).random(5)
        b = task_rng(7, 1, 2).random(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self):
        self.assertFalse(np.array_equal(task_rng(7, 1, 2).random(5), task_rng(7, 2, 1).random(5)))
        self.assertNotEqual(task_seed(7, 0), task_seed(7, 1))
        self.assertEqual(task_seed(7, 3), task_seed(7, 3))


if __name__ == "__main__":
    unittest.main()
