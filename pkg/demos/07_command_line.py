"""
The command-line tool
=====================

Write a panel to CSV, then estimate, select and replay from the manifest
that every run leaves next to its output.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

from modalfactor import DgpSpec, generate, write_panel_csv

work = Path(tempfile.mkdtemp())
write_panel_csv(generate(DgpSpec("S1", 60, 60, nu=3, seed=2)).panel, work / "panel.csv")


def cli(*args):
    proc = subprocess.run([sys.executable, "-m", "modalfactor.cli", *map(str, args)],
                          capture_output=True, text=True)
    print("$ modalfactor", *args, f"  -> exit {proc.returncode}")
    print(proc.stdout.rstrip() or proc.stderr.rstrip())
    return proc.returncode


cli("estimate", work / "panel.csv", "-r", "3", "-o", work / "fit.json")
cli("select", work / "panel.csv", "--rmax", "5", "-o", work / "select.json")
cli("estimate", work / "panel.csv", "-r", "0", "-o", work / "bad.json")   # exit 2: configuration error

manifest = json.loads((work / "fit.json.manifest.json").read_text())
print("manifest argv:", " ".join(manifest["argv"]))
cli("replay", work / "fit.json.manifest.json", "-o", work / "fit_again.json")
print("identical:", (work / "fit.json").read_bytes() == (work / "fit_again.json").read_bytes())
