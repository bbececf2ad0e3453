"""End-to-end synthetic study driver.

Builds one config per experiment kind (baseline ladder, transfer,
region/band attribution) over a shared synthetic fleet, runs each through
the command-line pipeline, then summarizes every results table. All
artifacts land under --out:

    <out>/<kind>/results.csv       per-session evaluation rows
    <out>/<kind>/timings.csv       wall time per unit of work
    <out>/<kind>/config.resolved   full provenance for the run
    <out>/<kind>/report/           medians, hypothesis tests, curve data

Runtimes are minutes, not hours: sessions are short and the decoders are
small. Pass --quick to shrink the fleet further for a smoke run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from locodec.cli import entrypoint

FLEET = {
    "run.seed": "11",
    "dataset.synthetic": "true",
    "dataset.synthetic.n_rats": "4",
    "dataset.synthetic.sessions_per_rat": "2",
    "dataset.synthetic.duration_s": "40.0",
    "dataset.synthetic.encoding": "am",
    "dataset.synthetic.noise_scale": "0.65",
    "train.max_epochs": "45",
    "train.patience": "8",
    "train.learning_rate": "2e-3",
    "train.batch_size": "32",
}

KINDS = {
    "baseline": {"decoder.family": "lstm_rnn"},
    "transfer": {
        "experiment.kind": "transfer",
        "plan.strategy": "zeroshot_cross_subject",
        "decoder.family": "linear",
        "dataset.synthetic.encoding": "linear",
        "dataset.synthetic.noise_scale": "0.3",
    },
    "regions": {
        "experiment.kind": "regions",
        "decoder.family": "linear",
        "dataset.synthetic.encoding": "linear",
        "dataset.synthetic.signal_regions": "visual",
        "dataset.synthetic.noise_scale": "0.3",
        "dataset.synthetic.speed_bias": "1.0",
    },
    "bands": {
        "experiment.kind": "bands",
        "decoder.family": "ffnn",
        "decoder.ffnn_hidden": "128,32",
        "dataset.synthetic.carrier_band": "5.0,7.0",
        "dataset.synthetic.noise_scale": "0.2",
        "dataset.synthetic.speed_bias": "1.0",
    },
}


def write_config(path: Path, overrides: dict[str, str]) -> Path:
    entries = dict(FLEET)
    entries.update(overrides)
    path.write_text("".join(f"{k} = {v}\n" for k, v in sorted(entries.items())))
    return path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synthetic_study")
    ap.add_argument("--kinds", nargs="*", default=list(KINDS), choices=list(KINDS))
    ap.add_argument("--quick", action="store_true", help="2 rats, 20 s sessions")
    args = ap.parse_args(argv)

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    if args.quick:
        FLEET.update(
            {
                "dataset.synthetic.n_rats": "2",
                "dataset.synthetic.duration_s": "20.0",
                "dataset.synthetic.speed_tau_s": "0.5",
                "dataset.synthetic.speed_bias": "1.0",
            }
        )

    for kind in args.kinds:
        kind_dir = out_root / kind
        cfg = write_config(out_root / f"{kind}.cfg", KINDS[kind])
        print(f"== {kind}: experiment ==", flush=True)
        code = entrypoint(["experiment", "--config", str(cfg), "--out", str(kind_dir)])
        if code != 0:
            print(f"{kind} failed with exit code {code}", file=sys.stderr)
            return code
        code = entrypoint(
            ["report", str(kind_dir / "results.csv"), "--out", str(kind_dir / "report")]
        )
        if code != 0:
            return code
        for line in (kind_dir / "report" / "medians.csv").read_text().splitlines()[1:]:
            print(f"   {line}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
