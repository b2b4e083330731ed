"""Train an image release mechanism that hides digit identity.

Needs handwritten-digit images and labels in IDX format. For each weight on the
distortion term, the script trains a mechanism that outputs a perturbed image and an
adversary that tries to read the digit from it. It then reports how often the adversary
succeeds and writes a few original and released images as IDX files.

    python3 demos/mnist_release.py IMAGES.idx LABELS.idx --output mnist-demo
"""
import argparse
from pathlib import Path

from ppan.experiments import ExperimentConfig, run_experiment


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("images", type=Path)
    parser.add_argument("labels", type=Path)
    parser.add_argument("--output", type=Path, default=Path("mnist-demo"))
    parser.add_argument("--gamma", default="0", help="weight of the realism discriminator term")
    parser.add_argument("--weights", default="35, 8", help="distortion weights to try")
    args = parser.parse_args()

    cfg = ExperimentConfig.from_mapping("mnist-toy", {
        "images": str(args.images), "labels": str(args.labels), "gamma": args.gamma, "grid": args.weights,
    })
    points = run_experiment(cfg, args.output)
    print(f"{'weight':>7} {'accuracy':>9} {'pixel CE':>9} {'leakage bound':>14}")
    for p in points:
        print(f"{p.lam:7.1f} {p.adversary_accuracy:9.3f} {p.empirical_distortion:9.4f} {p.leakage_nats:14.4f}")
    print(f"\nOriginal and released previews written to {args.output}/")


if __name__ == "__main__":
    main()
