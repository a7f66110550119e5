"""Run the acceptance suite and print its PASS/FAIL lines."""
import subprocess
import sys
from pathlib import Path

root = Path(__file__).resolve().parent.parent
r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                    str(root / "tests" / "test_acceptance.py")], capture_output=True, text=True)
lines = [ln for ln in r.stdout.splitlines() if ln.startswith(("PASS criterion", "FAIL criterion"))]
print("\n".join(sorted(set(lines), key=lambda ln: int(ln.split()[2].rstrip(":")))))
sys.exit(r.returncode)
