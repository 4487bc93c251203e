"""Smoke test for the asdkit extension: metrics, clustering and a tiny pipeline."""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
import asdkit  # noqa: E402

TINY = """
seed = 1
dataset_roots = ["{root}/wav"]
truth_table = "{root}/truth.csv"
output_dir = "{root}/out"

[synth]
n_machines = 2
n_unattributed = 1
attrs_per_machine = 2
clips_per_attr_train = 8
clips_per_attr_test = 10
clip_seconds = 0.5

[frontend]
clip_seconds = 0.5
n_mels = 32
padded_frames = 48

[encoder]
depth = 1
dim = 16
heads = 2

[pretrain]
epochs = 1
batch_size = 4

[cluster]
policy = "fixed"
k = 2

[finetune]
epochs = 1
batch_size = 4

[metrics]
p = 1.0
"""


def main():
    assert asdkit.auc([0.1, 0.2], [0.3, 0.4]) == 1.0
    assert asdkit.pauc([0.1, 0.2], [0.3, 0.4], 0.1) == 1.0
    assert math.isclose(asdkit.harmonic_mean([50.0, 100.0]), 200.0 / 3.0)
    try:
        asdkit.harmonic_mean([0.0, 1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("zero must be rejected")

    d = asdkit.ward([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
    assert [m[:2] for m in d.merges[:2]] == [(0, 1), (2, 3)]
    assert d.cut(2) == [0, 0, 1, 1]

    with tempfile.TemporaryDirectory() as root:
        cfg = asdkit.Config.from_toml(TINY.format(root=root))
        try:
            asdkit.score(cfg)
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("scoring without embeddings must fail")
        n = asdkit.synth(cfg)
        clips = asdkit.scan_dataset(Path(root) / "wav")
        assert n == len(clips) == 2 * 2 * (8 + 10)
        report = asdkit.pipeline(cfg)
        assert [m[0] for m in report.machines] == ["ToyFan", "ToyPump"]
        assert report.to_csv().startswith("machine,auc_source,auc_target,pauc\n")
        print(report.to_csv())
    print("smoke test passed")


if __name__ == "__main__":
    main()
