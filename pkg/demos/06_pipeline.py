"""The whole pipeline through the command line, on a deliberately tiny setup.

make-corpus writes a corpus, image pool and config; we shrink the config
so the run takes seconds instead of minutes and then print the report.
The full desk experiment is the same command with the generated config.
"""
import sys
import tempfile
from pathlib import Path

from sonolab.cli import main

root = Path(tempfile.mkdtemp(prefix="sonolab-demo-"))
assert main(["make-corpus", "--out", str(root)]) == 0

# a much smaller model than the generated desk config
cfg = root / "experiment.cfg"
text = cfg.read_text().replace("epochs = 300", "epochs = 5").replace("samples_per_category = 8",
                                                                      "samples_per_category = 4")
cfg.write_text(text + "hidden = 32,32,32\nmodels = diffusion\ngl_iters = 20\n")

code = main(["run", "--config", str(cfg), "--out", str(root / "run")])
print("exit code", code)
if code:
    sys.exit(code)
# the averages printed above; per-category MSD_f sits in table1.csv
print((root / "run" / "evaluate" / "table1.csv").read_text())
