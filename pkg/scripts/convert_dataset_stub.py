"""Converter stub: native recordings -> canonical session files.

Fill in load_native() for your copy of the recordings, then run

    python scripts/convert_dataset_stub.py <native files...> --out data/canonical

Everything downstream is already handled here: anti-alias decimation to
100 Hz, canonical binary output, and an inclusion-gate report at the 0.46
threshold.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from locodec.sessions import Session, apply_inclusion_gate, preprocess_raw, write_session


def load_native(path: Path):
    """Return (eeg_raw C x T, raw_rate_hz, speed_100hz, rat_id, session_id,
    region_map, side_map) for one native recording.

    TODO(dataset-conversion): implement for the native format in use; the
    loader below is the only piece this script does not ship.
    """
    raise NotImplementedError(f"no native loader implemented for {path}")


def convert_one(path: Path, out_dir: Path) -> Session:
    eeg_raw, raw_rate_hz, speed, rat_id, session_id, region_map, side_map = load_native(path)
    eeg = preprocess_raw(np.asarray(eeg_raw), raw_rate_hz)
    session = Session(
        id=session_id,
        rat_id=rat_id,
        sample_rate_hz=100.0,
        eeg=eeg,
        speed=np.asarray(speed, dtype=np.float64)[: eeg.shape[1]],
        region_map=tuple(region_map),
        side_map=tuple(side_map),
    )
    write_session(session, out_dir / f"{session.id}.bin")
    return session


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("paths", nargs="+")
    ap.add_argument("--out", default="data/canonical")
    ap.add_argument("--threshold", type=float, default=0.46)
    args = ap.parse_args(argv)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sessions = [convert_one(Path(p), out_dir) for p in args.paths]
    gate = apply_inclusion_gate(sessions, threshold=args.threshold)
    print(
        f"converted {len(sessions)} sessions; gate retains "
        f"{len(gate.included)} at threshold {gate.threshold}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
