import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relu_rank_lab.network import Dataset, Params, layer_outputs

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_net(rng, widths, scale=1.0) -> Params:
    return Params([scale * rng.standard_normal((widths[i + 1], widths[i])) for i in range(len(widths) - 1)])


def random_regression(rng, d_in, d_out, n) -> Dataset:
    return Dataset(rng.standard_normal((d_in, n)), y=rng.standard_normal((d_out, n)))


def random_classification(rng, d_in, n) -> Dataset:
    labels = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return Dataset(rng.standard_normal((d_in, n)), labels=labels)


def nonneg_source(rng, k, width=3, d_in=2):
    """Random depth-k scalar net whose output is >= 0 everywhere (positive last layer)."""
    p = random_net(rng, (d_in,) + (width,) * (k - 1) + (1,))
    return Params(list(p.layers[:-1]) + [np.abs(p.layers[-1])])


def unit(theta: float) -> np.ndarray:
    return np.array([np.cos(theta), np.sin(theta)])


def planar_dataset(angle: float, rot: float = 0.0, y=None) -> Dataset:
    """Two unit inputs at the given angle (rotated by ``rot``) with identity or given targets."""
    x = np.stack([unit(rot), unit(rot + angle)], axis=1)
    return Dataset(x, y=np.eye(2) if y is None else y)


def region_dynamics_violations(result, d, kind="square", sin_tol=1e-9) -> list[str]:
    """Check every recorded snapshot of a depth-2 run against the activation-region rules.

    Rows in an open S_i region must have gradient rows parallel to x_i; rows in
    D must have exactly zero gradient rows and must not move between records
    while they stay in D.
    """
    from relu_rank_lab.geometry import region_dynamics_report

    bad = []
    prev = None
    for snap in result.trajectory:
        for row in region_dynamics_report(snap.params, d, kind):
            i = row["row"]
            if row["region"] in ("S1", "S2") and row["interior"] and row["sin_to_input"] >= sin_tol:
                bad.append(f"step {snap.step} row {i}: sin {row['sin_to_input']:.3g}")
            if row["region"] == "D":
                if not row["grad_is_zero"]:
                    bad.append(f"step {snap.step} row {i}: nonzero gradient in D")
                if prev is not None and prev[0][i] == "D":
                    if not np.array_equal(prev[1].layers[0][i], snap.params.layers[0][i]):
                        bad.append(f"step {snap.step} row {i}: moved while in D")
        prev = (snap.regions, snap.params)
    return bad


KINK_BAND = 1e-3


def min_abs_preactivation(p, d):
    pre, _ = layer_outputs(p, d.x)
    return min(float(np.min(np.abs(h))) for h in pre[:-1])


def smooth_case(rng, kind):
    """Random net and dataset with every hidden pre-activation outside the kink band."""
    while True:
        depth = int(rng.integers(2, 5))
        widths = [int(rng.integers(1, 5))] + [int(rng.integers(1, 5)) for _ in range(depth - 1)]
        n = int(rng.integers(1, 5))
        if kind == "square":
            widths.append(int(rng.integers(1, 4)))
            d = random_regression(rng, widths[0], widths[-1], n)
        else:
            widths.append(1)
            d = random_classification(rng, widths[0], n)
        p = random_net(rng, widths, scale=0.8)
        if min_abs_preactivation(p, d) > KINK_BAND:
            return p, d
