import numpy as np
import pytest

from imutrace.core import ImuSample, Scenario, TrajectoryLabel, TrajectoryWindow
from imutrace.synth import GeneratorConfig, ZERO_NOISE, generate_dataset, uniform_counts


def window_from_array(
    data,
    rate=100.0,
    window_id="w0",
    scenario=Scenario.INDOOR,
    group="g0",
    label=None,
):
    """Build a TrajectoryWindow from an (n, 9) array on a uniform grid."""
    data = np.asarray(data, dtype=np.float64)
    samples = tuple(
        ImuSample(
            t=i / rate,
            accel=(float(row[0]), float(row[1]), float(row[2])),
            gyro=(float(row[3]), float(row[4]), float(row[5])),
            mag=(float(row[6]), float(row[7]), float(row[8])),
        )
        for i, row in enumerate(data)
    )
    return TrajectoryWindow(
        id=window_id,
        scenario=scenario,
        recording_group=group,
        rate=rate,
        samples=samples,
        label=label,
    )


def tiny_windows(n, groups=4, scenario=Scenario.INDOOR, prefix="w", rng=None):
    """n cheap 2-sample windows spread over the given number of groups,
    labels round-robin; enough structure for split tests."""
    out = []
    for i in range(n):
        out.append(
            window_from_array(
                np.zeros((2, 9)),
                window_id=f"{prefix}{i:04d}",
                scenario=scenario,
                group=f"{prefix}g{i % groups}",
                label=list(TrajectoryLabel)[i % 4],
            )
        )
    return out


@pytest.fixture
def make_window():
    return window_from_array


@pytest.fixture(scope="session")
def zero_noise_dataset():
    """48 clean windows (6 per label per scenario), shared across tests."""
    noise = {s: ZERO_NOISE for s in Scenario}
    windows, manifest = generate_dataset(GeneratorConfig(seed=5), uniform_counts(6), noise)
    return windows, manifest
