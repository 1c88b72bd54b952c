import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_label_map(rng, shape=(6, 6, 6)):
    """Valid label map with nested regions, built from random region masks."""
    wt = rng.random(shape) < 0.5
    tc = wt & (rng.random(shape) < 0.6)
    et = tc & (rng.random(shape) < 0.5)
    out = np.zeros(shape, dtype=np.uint8)
    out[wt] = 2
    out[tc] = 1
    out[et] = 4
    return out


# Micro cascade used for the overfit experiment; frozen after calibration
# (see docs/calibration.md).
OVERFIT_SETTINGS = [
    "train.epochs=250",
    "train.patch_size=32",
    "train.foreground_prob=0.5",
    "train.checkpoint_every=1000",
    "model.levels=3",
    "model.base_channels=4",
    "inference.patch_size=32",
    "inference.stride=16",
]
OVERFIT_CASES = 4
OVERFIT_SIZE = 64


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """synth -> preprocess -> train -> infer -> evaluate on four 64^3 phantoms."""
    import time

    from cascadeseg.cli import run

    root = tmp_path_factory.mktemp("overfit")
    t0 = time.perf_counter()
    steps = [
        ["synth", "--cases", str(OVERFIT_CASES), "--size", str(OVERFIT_SIZE), "--out", str(root / "raw"), "--seed", "0"],
        ["preprocess", "--in", str(root / "raw"), "--out", str(root / "prep")],
        ["train", "--data", str(root / "prep"), "--out", str(root / "run")]
        + [a for s in OVERFIT_SETTINGS for a in ("--set", s)],
        ["infer", "--checkpoint", str(root / "run" / "last.pt"), "--data", str(root / "prep"), "--out", str(root / "pred")],
        ["evaluate", "--pred", str(root / "pred"), "--truth", str(root / "prep"), "--out", str(root / "metrics.csv")],
        ["report", "--metrics", str(root / "metrics.csv"), "--out", str(root / "summary.csv")],
    ]
    for argv in steps:
        code = run(argv)
        assert code == 0, f"{argv[0]} exited with {code}"
    return {"root": root, "seconds": time.perf_counter() - t0}


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
