import numpy as np
import pytest

from prune_opd.compat import TopKSlice
from prune_opd.reliability import RewardTensor
from prune_opd.sim import PositionRecord, RolloutTrace


def random_slice(rng, vocab: int, k: int, n: int | None = None) -> TopKSlice:
    """A valid random top-k slice: n distinct ids, descending sub-unit probs."""
    n = k if n is None else n
    ids = rng.choice(vocab, size=n, replace=False)
    raw = rng.dirichlet(np.ones(n)) * rng.uniform(0.3, 0.999)
    probs = np.sort(raw)[::-1]
    return TopKSlice(tuple(int(i) for i in ids), tuple(float(p) for p in probs), k)


def random_trace(rng, t_len: int, k: int, vocab: int, n_padding: int = 0) -> RolloutTrace:
    """A structurally valid trace with random slices/rewards; the last
    ``n_padding`` positions are marked invalid."""
    valid = np.ones(t_len, dtype=bool)
    if n_padding:
        valid[t_len - n_padding:] = False
    records = []
    for tau in range(t_len):
        student = random_slice(rng, vocab, k)
        teacher = random_slice(rng, vocab, k)
        records.append(
            PositionRecord(student, teacher, int(rng.integers(vocab)), bool(valid[tau]))
        )
    return RolloutTrace(
        prompt=tuple(int(x) for x in rng.integers(0, vocab, size=4)),
        response=tuple(r.sampled_token for r in records),
        records=tuple(records),
        rewards=RewardTensor(rng.normal(size=(t_len, k))),
        valid_mask=valid,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
