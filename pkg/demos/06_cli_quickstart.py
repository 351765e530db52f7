"""The command-line runner, end to end, without downloading anything.

The svhn dataset reads flat-tensor files straight from the cache directory,
so this script synthesizes a tiny corpus, drops it into a temporary cache,
and drives the real CLI: train -> evaluate -> report. Every artifact a run
produces is listed at the end.
"""

import json
import tempfile
from pathlib import Path

from _synth import make_corner_dataset

from ffbench.cli import main
from ffbench.datasets import save_flat_tensor

root = Path(tempfile.mkdtemp())
cache = root / "cache"
(cache / "svhn").mkdir(parents=True)
save_flat_tensor(cache / "svhn" / "svhn_train.ftns", make_corner_dataset(256, seed=41))
save_flat_tensor(cache / "svhn" / "svhn_test.ftns", make_corner_dataset(128, seed=42, split="test"))
print(f"synthetic corpus cached under {cache}")

config = dict(
    dataset="svhn",
    task="rotation",
    trainer="ff",
    widths=[32, 32],
    epochs=2,
    probe_epochs=5,
    batch_size=64,
    learning_rate=0.003,
    seed=0,
    output_dir=str(root / "runs"),
)
cfg_path = root / "rotation_ff.json"
cfg_path.write_text(json.dumps(config, indent=2))

run_dir = root / "runs" / "svhn_rotation_ff_seed0"
for argv in (
    ["--cache-dir", str(cache), "train", str(cfg_path)],
    ["--cache-dir", str(cache), "evaluate", str(run_dir)],
    ["--cache-dir", str(cache), "report", str(run_dir), "--csv", str(root / "table.csv")],
):
    print(f"\n$ ffbench {' '.join(argv)}")
    code = main(argv)
    assert code == 0, f"exit code {code}"

print("\nrun directory artifacts:")
for p in sorted(run_dir.iterdir()):
    print(f"  {p.name:16} {p.stat().st_size:7} bytes")
metrics = [json.loads(line) for line in (run_dir / "metrics.jsonl").read_text().splitlines()]
print(f"metrics.jsonl holds {len(metrics)} records; first: {metrics[0]['phase']}/{metrics[0]['metric']}")
