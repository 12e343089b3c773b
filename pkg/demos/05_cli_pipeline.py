"""The file-based command interface, driven from Python.

Each command writes one run directory (resolved config, seed, artifacts) and
later commands pick up the newest upstream directory.  The same steps run from
a shell as ``python -m wtdebias gen-data --config run.yaml --out runs`` and so on.

    python demos/05_cli_pipeline.py /tmp/wtdebias_runs
"""
import json
import sys
import tempfile
from pathlib import Path

import yaml

from wtdebias.cli import main

root = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="wtdebias_"))
root.mkdir(parents=True, exist_ok=True)
cfg = root / "run.yaml"
cfg.write_text(yaml.safe_dump({"data": {"n": 10_000}, "dadf": {"train": {"epochs": 10}},
                               "eval": {"sweep_K": [2, 4, 8]}}))

for argv in (["gen-data"], ["train-first-stage"],
             ["train-dadf", "--variant", "full"], ["evaluate", "--variant", "full"],
             ["train-dadf", "--variant", "global_correction"], ["evaluate", "--variant", "global_correction"],
             ["sweep-k"], ["check-appendix"]):
    code = main([*argv, "--config", str(cfg), "--out", str(root), "-q"])
    print(f"{' '.join(argv):<45} exit {code}")

for variant in ("full", "global_correction"):
    m = json.loads((root / f"eval_{variant}" / "metrics.json").read_text())
    print(f"{variant:>18}: MAE {m['base_mae']:.3f} -> {m['mae']:.3f}, XAUC {m['base_xauc']:.4f} -> {m['xauc']:.4f}")
print("sweep:", json.loads((root / "sweep_k" / "sweep.json").read_text())["runs"])
print("artifacts under", root)
