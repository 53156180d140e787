"""Smoke test for the odmd_cpd extension.

Build and install it first, e.g. ``maturin develop`` (or ``maturin build``
followed by ``pip install``) in crates/python, then run this script.
"""

import sys

import numpy as np

import odmd_cpd


def check_steps():
    series, labels = odmd_cpd.gen_steps(n=3000, seed=1)
    assert len(series) == 3000 and len(series[0]) == 1
    assert labels == [1000, 2000]

    cfg = odmd_cpd.Config(100, 100, 300, delays=80, state_rank=2, threshold=1.0)
    det = odmd_cpd.Detector(cfg, state_dim=1)
    scores = det.run(np.asarray(series).tolist(), batch_size=5)
    assert det.initialized and det.pairs_seen == 2999
    assert all(s.ratio >= 0.0 for s in scores)

    ratio = np.array([s.ratio for s in scores])
    steps = np.array([s.step for s in scores])
    for k0 in labels:
        near = (steps >= k0) & (steps < k0 + 300)
        far = steps < labels[0]
        assert ratio[near].max() > ratio[far].max(), k0

    alarms = [s.step for s in scores if s.alarm]
    nab = odmd_cpd.nab_score(alarms, labels, span=3000)
    assert 0.0 < nab <= 100.0
    print(f"steps: {len(scores)} scores, {len(alarms)} alarms, NAB standard {nab:.1f}")


def check_batching():
    series, _ = odmd_cpd.gen_steps(n=1500, seed=2)
    cfg = odmd_cpd.Config(50, 20, 120, delays=10, state_rank=2)
    one = odmd_cpd.Detector(cfg, 1).run(series, batch_size=1)
    many = odmd_cpd.Detector(cfg, 1).run(series, batch_size=7)
    assert [s.ratio for s in one] == [s.ratio for s in many]

    det = odmd_cpd.Detector(cfg, 1)
    x = np.asarray(series)
    streamed = []
    for k in range(0, len(x) - 1, 20):
        j = min(20, len(x) - 1 - k)
        streamed += det.step(x[k:k + j].tolist(), x[k + 1:k + 1 + j].tolist())
    assert [s.ratio for s in streamed] == [s.ratio for s in one]
    print(f"batching: {len(one)} identical scores")


def check_two_tanks():
    levels, inflow, labels = odmd_cpd.simulate_two_tanks(n=2000, seed=3)
    assert np.asarray(levels).shape == (2000, 2)
    assert np.asarray(inflow).shape == (2000, 1)
    cfg = odmd_cpd.Config(100, 50, 300, delays=10, state_rank=2, control_rank=1)
    det = odmd_cpd.Detector(cfg, state_dim=2, control_dim=1)
    scores = det.run(levels, controls=inflow)
    assert scores and det.embedded_rows == 33
    eig = det.eigenvalues()
    assert len(eig) == 2
    print(f"two tanks: {len(scores)} scores, eigenvalue moduli {[round(abs(complex(*z)), 4) for z in eig]}")


def check_rank_and_errors():
    rng = np.random.default_rng(0)
    low = rng.standard_normal((200, 3)) @ rng.standard_normal((3, 30))
    rank, cutoff, sv = odmd_cpd.suggest_rank((low + 1e-3 * rng.standard_normal(low.shape)).tolist())
    assert rank == 3 and sv[2] > cutoff > sv[3]

    for bad in (lambda: odmd_cpd.Config(0, 10, 10), lambda: odmd_cpd.Config(10, 10, 10, score_mode="x")):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    print("rank and errors: ok")


if __name__ == "__main__":
    check_steps()
    check_batching()
    check_two_tanks()
    check_rank_and_errors()
    print(f"odmd_cpd {odmd_cpd.__version__}: all checks passed")
    sys.exit(0)
