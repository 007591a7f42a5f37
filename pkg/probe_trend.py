# scratch probe for tuning the default experiment configuration (not shipped)
import sys
import time
from collections import defaultdict
from pathlib import Path

from pretext_transfer.harness import ExperimentConfig, run_experiment
from pretext_transfer.data import SynthConfig

import dataclasses


def probe(tag, seeds=(1, 2, 3), **overrides):
    synth_over = {k: overrides.pop(k) for k in list(overrides) if hasattr(SynthConfig, k) and k in (
        "source_class_count", "dim", "samples_per_class", "unlabeled_size",
        "positives", "negatives", "shift", "noise")}
    acc = defaultdict(list)
    start = time.perf_counter()
    for seed in seeds:
        out = Path(f"/tmp/probe/{tag}/{seed}")
        cfg = ExperimentConfig(
            out_dir=out, master_seed=seed,
            synth=dataclasses.replace(SynthConfig(), **synth_over),
            **overrides,
        )
        report = run_experiment(cfg)
        for row in report.per_fold:
            acc[(row.ratio, row.method)].append(row.acc)
    elapsed = time.perf_counter() - start
    ratios = sorted({r for r, _ in acc})
    print(f"== {tag} ({elapsed:.1f}s for {len(seeds)} seeds)")
    print(f"{'ratio':>6} {'TL':>8} {'PRT+TL':>8} {'All':>8}   {'P-T':>6} {'A-T':>6}")
    gains = []
    ok = True
    for ratio in ratios:
        tl = sum(acc[(ratio, 'TL')]) / len(acc[(ratio, 'TL')])
        pt = sum(acc[(ratio, 'PRT+TL')]) / len(acc[(ratio, 'PRT+TL')])
        al = sum(acc[(ratio, 'All')]) / len(acc[(ratio, 'All')])
        gains.append(al - tl)
        flag = ""
        if al < tl:
            flag += " ALL<TL!"
            ok = False
        if pt < tl - 1.0:
            flag += " PRT<TL-1!"
            ok = False
        print(f"{ratio:>6} {tl:8.2f} {pt:8.2f} {al:8.2f}   {pt-tl:6.2f} {al-tl:6.2f}{flag}")
    mean_gain = sum(gains) / len(gains)
    print(f"mean All-TL gain: {mean_gain:.2f}  -> {'OK' if ok and mean_gain > 0 else 'FAIL'}")
    return ok and mean_gain > 0


if __name__ == "__main__":
    probe("default")
