import random

import pytest
from hypothesis import HealthCheck, settings

from hybridsched.model import AppDag, Job

settings.register_profile("default", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


DIAMOND_EDGES = ((0, 1), (0, 2), (1, 3), (2, 3))


def chain(k=1, replicas=1, memory_mb=1024.0):
    return AppDag.chain(k, replicas=replicas, memory_mb=memory_mb)


def diamond(replicas=(1, 1, 1, 1), memory=(1024.0,) * 4):
    return AppDag(("A", "B", "C", "D"), DIAMOND_EDGES, tuple(replicas), tuple(memory))


def job(j, private, public=None, up=None, down=None, must_private=()):
    public = public if public is not None else [p for p in private]
    return Job(j, tuple(private), tuple(public), up, down, frozenset(must_private))


def random_instance(rng: random.Random, max_jobs=4, max_stages=2, max_replicas=2, shapes=("chain",)):
    """Small random instance inside the exhaustive oracle's guard."""
    shape = rng.choice(shapes)
    if shape == "fork":
        dag = AppDag(("a", "b", "c"), ((0, 1), (0, 2)), (1, 1, 1), (1024.0, 2048.0, 512.0))
    else:
        k = rng.randint(1, max_stages)
        dag = AppDag.chain(k, replicas=[rng.randint(1, max_replicas) for _ in range(k)],
                           memory_mb=[rng.choice([512.0, 1024.0, 2048.0]) for _ in range(k)])
    K = dag.stage_count
    n = rng.randint(1, min(max_jobs, 12 // K))
    jobs = []
    for j in range(n):
        jobs.append(Job(j,
                        tuple(float(rng.randint(1, 30) * 100) for _ in range(K)),
                        tuple(float(rng.randint(1, 30) * 100) for _ in range(K)),
                        tuple(float(rng.randint(0, 5) * 50) for _ in range(K)),
                        tuple(float(rng.randint(0, 5) * 50) for _ in range(K))))
    total = int(sum(sum(j.p_private) for j in jobs))
    c_max = float(rng.randint(max(1, total // 400), max(2, total // 100)) * 100)
    return dag, jobs, c_max


@pytest.fixture
def rng():
    return random.Random(1234)
