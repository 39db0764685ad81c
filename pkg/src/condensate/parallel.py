"""Bounded worker pool for independent seeded jobs.

Results come back in submission order and each job depends only on its own
arguments, so the worker count never changes the output.
"""

import os
from concurrent.futures import ProcessPoolExecutor


def default_workers():
    return os.cpu_count() or 1


def run_jobs(fn, jobs, workers=None):
    """Apply ``fn(*job)`` to each job tuple; processes when workers > 1."""
    jobs = list(jobs)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]
