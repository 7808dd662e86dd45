"""How a truncated null-space projector leaks protected knowledge.

When the protection Gram is full rank, the editor approximates its null
space by keeping eigendirections below a threshold.  Those directions carry
a little protected signal, so every edit drifts the pre-trained outputs a
bit further.  This script runs one sequence and prints the leakage series.

Run:  python demos/leakage_growth.py
"""

import numpy as np

from nulledit.editors import MethodSpec
from nulledit.harness import ExperimentConfig, run_sequence
from nulledit.memory import StreamConfig, synth_knowledge
from nulledit.projector import threshold_for_null_fraction

SEED = 0
T = 500

kb, mem = synth_knowledge(SEED, d_in=64, d_out=32, n0=200)

# Pick the threshold so a quarter of the Gram spectrum counts as "null".
eps = threshold_for_null_fraction(kb.k0 @ kb.k0.T, 0.25)
print(f"truncation threshold eps = {eps:.4g}")

cfg = ExperimentConfig(
    stream=StreamConfig(seed=SEED, num_edits=T, conflict_mode="aligned"),
    method=MethodSpec(kind="alphaedit", lambda2=1000.0, epsilon=eps),
    d_in=64,
    d_out=32,
    n0=200,
    metrics_every=50,
)
trace = run_sequence(cfg, kb=kb, mem=mem)

print(f"\n{'step':>6} {'leakage':>12} {'cum |Delta|':>12}")
for rec in trace.records:
    print(f"{rec.step:>6} {rec.leakage:>12.5f} {rec.cum_delta_norm:>12.5f}")

first, last = trace.records[0], trace.records[-1]
ratio = last.leakage / max(first.leakage, 1e-300)
print(f"\nleakage grew {ratio:.1f}x between step {first.step} and step {last.step}")
print("nonzero and strictly growing: the truncated directions are never free.")
