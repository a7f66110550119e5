"""Run every CLI command that applies to each shipped config; outputs go under runs/."""
import json
import sys
from pathlib import Path

from perpetuity_lab.cli import main

root = Path(__file__).resolve().parent.parent
out_root = Path(sys.argv[1]) if len(sys.argv) > 1 else root / "runs"
for cfg in sorted((root / "configs").glob("*.json")):
    d = json.loads(cfg.read_text())
    commands = ["classify"] + [c for c in ("simulate", "attractor", "verify") if c in d]
    for cmd in commands:
        code = main([cmd, "--config", str(cfg), "--out", str(out_root / cfg.stem / cmd)])
        print(f"{cfg.stem:20s} {cmd:10s} exit {code}", file=sys.stderr)
