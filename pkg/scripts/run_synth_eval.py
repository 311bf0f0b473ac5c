"""
Run the synthetic end-to-end check for several seeds and print frame-level AUCs.

For each seed: train the desk-scale model on normal synthetic motion, score a
held-out split with 20% injected anomalies, and compare the fused score with
reconstruction-only and prediction-only scoring. Runs are traced to
Braintrust when BRAINTRUST_API_KEY is set.

Run:
    uv run python scripts/run_synth_eval.py --seeds 0 1 2
"""

import argparse
import os
import sys
from pathlib import Path

import braintrust
from dotenv import load_dotenv

load_dotenv()

sys.path.insert(0, str(Path(__file__).parent.parent))

from dcmd.config import PRESETS, preset_config
from evals.experiment import run_synthetic_experiment

AUC_TARGET = 0.85


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    args = parser.parse_args(argv)

    if os.environ.get("BRAINTRUST_API_KEY"):
        braintrust.init_logger(project=os.environ.get("DCMD_PROJECT", "dcmd"))

    passed = 0
    for i, seed in enumerate(args.seeds, 1):
        print(f"[{i}/{len(args.seeds)}] seed={seed} training...", flush=True)
        result = run_synthetic_experiment(seed, preset_config(args.preset))
        ok = result.auc >= AUC_TARGET
        passed += ok
        print(
            f"         auc={result.auc:.3f}  rec_only={result.auc_rec_only:.3f}  "
            f"pred_only={result.auc_pred_only:.3f}  fusion_wins={result.fusion_wins}  "
            f"{'ok' if ok else 'below target'}\n",
            flush=True,
        )

    print(f"Done. {passed}/{len(args.seeds)} seeds reached AUC >= {AUC_TARGET}.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
