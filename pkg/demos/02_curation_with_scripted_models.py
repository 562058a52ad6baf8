"""
Curating training data without a model server
=============================================

The curation pipeline labels every sample LR (answerable at low resolution) or
HR, grounds the HR ones, and writes chat transcripts with the crop request in
the first assistant turn. Here the three model backends are scripted from the
simulator's hidden state, so the whole run is offline and reproducible.
"""

import io
import json

import numpy as np

from cropcall.curation import Clients, CurationConfig, run_pipeline, summarize, write_records
from cropcall.protocol import Sample
from cropcall.sim_env import EnvConfig, export_samples, gen_episode, scripted_clients

cfg = EnvConfig(fraction_fine=0.4)
rng = np.random.default_rng(0)
rows = export_samples([gen_episode(cfg, rng) for _ in range(25)], prefix="demo")
print(json.dumps(rows[0], indent=1)[:400])

vlm, judge, oracle = scripted_clients(rows, cfg, seed=0, malformed_oracle=0.1)
clients = Clients(vlm, judge, oracle)

buf = io.StringIO()
results = write_records(run_pipeline([Sample.from_dict(r) for r in rows], clients,
                                     CurationConfig(concurrency=4)), buf)
summary = summarize(results)
print(json.dumps({k: summary[k] for k in ("n_input", "n_records", "labels", "crop_distribution")}, indent=1))
print("failures:", [(f["sample_id"], f["stage"]) for f in summary["failures"]["samples"]])

# one HR transcript; the assistant's first turn is the tool call
hr = next(json.loads(line) for line in buf.getvalue().splitlines() if json.loads(line)["label"] == "HR")
for turn in hr["turns"][:3]:
    print(turn["role"], turn["images"], "|", turn["text"][:100])
