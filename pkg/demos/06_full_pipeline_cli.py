"""
The whole pipeline from the command line
========================================

``event-seg`` runs the same steps on files: segment (several replications),
consensus, compare and replicate-report. Everything is configured in one TOML
file; here a synthetic story project is written to a temporary directory.
"""

import json
import tempfile
from pathlib import Path

from eventseg.cli import main
from eventseg.synthetic import write_project

root = Path(tempfile.mkdtemp())
config = write_project(root, n_words=1137, seed=0, n_events=23, replications=6)
print(config.read_text())

# equivalent to: event-seg segment --config config.toml, and so on
for command in ("segment", "consensus", "compare", "replicate-report"):
    code = main([command, "--config", str(config)])
    print(f"{command}: exit {code}")

out = root / "out"
print(sorted(p.name for p in out.iterdir()))
report = json.loads((out / "stats_report.json").read_text())
print(json.dumps(report["crosscorr"][0], indent=1))
